#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "weaknesslab/bitvec.hpp"
#include "weaknesslab/errors.hpp"
#include "weaknesslab/mlp.hpp"

// Reparameterisation-invariant region measures: activation-pattern sets at
// layers 1 and 2, free regions, the free-parameter count, region-class
// weakness in log domain, and ensemble agreement.
//
// All pattern extraction uses strict > 0 on the pre-activation; a
// pre-activation of exactly 0 counts as inactive. One convention shared with
// the forward pass keeps the pattern-invariance claims exact rather than
// approximate.

namespace weaknesslab {

constexpr std::size_t kMaxPatternWidth = 256;

namespace detail {

inline BitVec pattern_of_row(const Eigen::MatrixXd& pre, Eigen::Index row) {
  BitVec bits(static_cast<std::size_t>(pre.cols()));
  for (Eigen::Index j = 0; j < pre.cols(); ++j)
    if (pre(row, j) > 0.0) bits.set(static_cast<std::size_t>(j));
  return bits;
}

inline const Eigen::MatrixXd& layer_pre(const ForwardTrace& t, int layer) {
  if (layer == 1) return t.pre1;
  if (layer == 2) return t.pre2;
  throw ArgumentError("layer must be 1 or 2");
}

}  // namespace detail

// Distinct binary activation patterns 1[pre > 0] at the chosen layer across
// the given inputs.
inline std::unordered_set<BitVec> activation_patterns(const MlpParams& p,
                                                      const Eigen::MatrixXd& inputs,
                                                      int layer) {
  const Eigen::Index width = (layer == 1) ? p.w1.rows() : p.w2.rows();
  if (static_cast<std::size_t>(width) > kMaxPatternWidth)
    throw CapacityError("activation_patterns: layer width exceeds 256");
  ForwardTrace t = forward(p, inputs);
  const Eigen::MatrixXd& pre = detail::layer_pre(t, layer);
  std::unordered_set<BitVec> set;
  for (Eigen::Index i = 0; i < pre.rows(); ++i)
    set.insert(detail::pattern_of_row(pre, i));
  return set;
}

inline std::size_t pattern_count(const MlpParams& p, const Eigen::MatrixXd& inputs,
                                 int layer) {
  return activation_patterns(p, inputs, layer).size();
}

struct RegionCounts {
  std::uint32_t n_train = 0;
  std::uint32_t n_unseen = 0;
};

using RegionTable = std::unordered_map<BitVec, RegionCounts>;

// Keys every training and unseen input by its layer-2 activation pattern.
inline RegionTable region_table(const MlpParams& p, const Eigen::MatrixXd& train_inputs,
                                const Eigen::MatrixXd& unseen_inputs) {
  if (static_cast<std::size_t>(p.w2.rows()) > kMaxPatternWidth)
    throw CapacityError("region_table: layer-2 width exceeds 256");
  RegionTable table;
  if (train_inputs.rows() > 0) {
    ForwardTrace t = forward(p, train_inputs);
    for (Eigen::Index i = 0; i < t.pre2.rows(); ++i)
      table[detail::pattern_of_row(t.pre2, i)].n_train++;
  }
  if (unseen_inputs.rows() > 0) {
    ForwardTrace t = forward(p, unseen_inputs);
    for (Eigen::Index i = 0; i < t.pre2.rows(); ++i)
      table[detail::pattern_of_row(t.pre2, i)].n_unseen++;
  }
  return table;
}

// Regions that contain unseen data but no training data.
inline std::size_t k_free(const RegionTable& table) {
  std::size_t k = 0;
  for (const auto& [pattern, counts] : table)
    if (counts.n_train == 0 && counts.n_unseen > 0) ++k;
  return k;
}

// Free parameters = sum over regions r of max(0, D2*10 + 10 - n_r), where
// n_r is the training count of region r. The sum runs over every region in
// the table (regions holding only unseen points contribute the full budget).
inline long long free_parameters(const RegionTable& table, int d2) {
  long long budget = static_cast<long long>(d2) * 10 + 10;
  long long total = 0;
  for (const auto& [pattern, counts] : table)
    total += std::max(0LL, budget - static_cast<long long>(counts.n_train));
  return total;
}

// Variant restricted to train-occupied regions; emitted alongside the
// literal version because the measure's region set is ambiguous.
inline long long free_parameters_train_only(const RegionTable& table, int d2) {
  long long budget = static_cast<long long>(d2) * 10 + 10;
  long long total = 0;
  for (const auto& [pattern, counts] : table)
    if (counts.n_train > 0)
      total += std::max(0LL, budget - static_cast<long long>(counts.n_train));
  return total;
}

// Weakness of the training-label policy: (K+1)^k_free, kept in log domain.
inline double region_weakness_log(std::size_t n_free_regions, int n_classes = 10) {
  return static_cast<double>(n_free_regions) *
         std::log(static_cast<double>(n_classes) + 1.0);
}

// Among the unseen points the subject misclassifies, the fraction of
// (point, peer) pairs where the peer predicts the true label. Returns
// nullopt when the subject makes no unseen errors.
inline std::optional<double> ensemble_agreement_from_preds(
    const std::vector<int>& subject_preds,
    const std::vector<std::vector<int>>& peer_preds,
    const std::vector<int>& unseen_labels) {
  if (peer_preds.empty()) throw ArgumentError("ensemble_agreement: no peers");
  std::vector<std::size_t> errors;
  for (std::size_t i = 0; i < subject_preds.size(); ++i)
    if (subject_preds[i] != unseen_labels[i]) errors.push_back(i);
  if (errors.empty()) return std::nullopt;
  std::size_t agree = 0, pairs = 0;
  for (std::size_t i : errors)
    for (const auto& peer : peer_preds) {
      ++pairs;
      if (peer[i] == unseen_labels[i]) ++agree;
    }
  return static_cast<double>(agree) / static_cast<double>(pairs);
}

inline std::optional<double> ensemble_agreement(
    const MlpParams& subject, const std::vector<MlpParams>& peers,
    const Eigen::MatrixXd& unseen_inputs, const std::vector<int>& unseen_labels) {
  std::vector<int> subject_preds = predict_batch(subject, unseen_inputs);
  std::vector<std::vector<int>> peer_preds;
  peer_preds.reserve(peers.size());
  for (const MlpParams& peer : peers)
    peer_preds.push_back(predict_batch(peer, unseen_inputs));
  return ensemble_agreement_from_preds(subject_preds, peer_preds, unseen_labels);
}

}  // namespace weaknesslab
