#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "weaknesslab/errors.hpp"
#include "weaknesslab/format.hpp"
#include "weaknesslab/mlp.hpp"
#include "weaknesslab/regions.hpp"
#include "weaknesslab/sharpness.hpp"

// Function-preserving reparameterisations of the trained network. Both
// exploit the positive homogeneity of ReLU (relu(b*z) = b*relu(z) for b>0):
//   beta:  (b*W1, b*b1, W2/b, b2, W3, b3)   between layers 1 and 2
//   gamma: (W1, b1, g*W2, g*b2, W3/g, b3)   between layers 2 and 3
// They leave every prediction unchanged while rescaling the weight-space
// geometry, which is what drives the Hessian-inflation contrast.

namespace weaknesslab {

struct ReparamSpec {
  enum class Kind { beta, gamma };
  Kind kind = Kind::beta;
  double value = 1.0;
};

inline const char* reparam_kind_name(ReparamSpec::Kind k) {
  return k == ReparamSpec::Kind::beta ? "beta" : "gamma";
}

inline MlpParams apply_reparam(const ReparamSpec& spec, const MlpParams& p) {
  if (!(spec.value > 0.0)) throw ArgumentError("apply_reparam: value must be > 0");
  MlpParams q = p;
  if (spec.kind == ReparamSpec::Kind::beta) {
    q.w1 *= spec.value;
    q.b1 *= spec.value;
    q.w2 /= spec.value;
  } else {
    q.w2 *= spec.value;
    q.b2 *= spec.value;
    q.w3 /= spec.value;
  }
  return q;
}

struct InvarianceRow {
  std::string kind;
  double value = 1.0;
  double test_accuracy = 0.0;
  double hessian_trace = 0.0;
  std::size_t l1_count = 0;
  std::size_t l2_count = 0;
  std::optional<double> ensemble_agreement;
};

// One row per spec: test accuracy, Hessian trace of the training loss,
// layer-1/2 pattern counts over the evaluation inputs, and ensemble
// agreement against the (unreparameterised) peer pool. All rows share the
// same Hutchinson probe seed so the Hessian column is comparable.
inline std::vector<InvarianceRow> invariance_report(
    const MlpParams& params, const std::vector<ReparamSpec>& specs,
    const Eigen::MatrixXd& eval_inputs, const std::vector<int>& eval_labels,
    const Eigen::MatrixXd& train_inputs, const std::vector<int>& train_labels,
    const std::vector<MlpParams>& peers, int hessian_probes,
    std::uint64_t probe_seed) {
  std::vector<std::vector<int>> peer_preds;
  peer_preds.reserve(peers.size());
  for (const MlpParams& peer : peers)
    peer_preds.push_back(predict_batch(peer, eval_inputs));

  std::vector<InvarianceRow> rows;
  rows.reserve(specs.size());
  for (const ReparamSpec& spec : specs) {
    MlpParams q = apply_reparam(spec, params);
    InvarianceRow row;
    row.kind = reparam_kind_name(spec.kind);
    row.value = spec.value;
    row.test_accuracy = accuracy(q, eval_inputs, eval_labels);
    row.hessian_trace =
        hessian_trace(q, train_inputs, train_labels, hessian_probes, probe_seed).value;
    row.l1_count = pattern_count(q, eval_inputs, 1);
    row.l2_count = pattern_count(q, eval_inputs, 2);
    if (!peers.empty())
      row.ensemble_agreement = ensemble_agreement_from_preds(
          predict_batch(q, eval_inputs), peer_preds, eval_labels);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_invariance_csv(const std::vector<InvarianceRow>& rows,
                                 std::ostream& out) {
  out << "reparam,value,test_acc,hessian,l1,l2,ea\n";
  for (const InvarianceRow& r : rows) {
    out << r.kind << ',' << fmt_double(r.value) << ',' << fmt_double(r.test_accuracy)
        << ',' << fmt_double(r.hessian_trace) << ',' << r.l1_count << ','
        << r.l2_count << ',';
    if (r.ensemble_agreement) out << fmt_double(*r.ensemble_agreement);
    out << '\n';
  }
}

// Fraction of evaluation points where two parameter settings predict the
// same class; the testable surrogate for exact functional invariance.
inline double prediction_agreement(const MlpParams& a, const MlpParams& b,
                                   const Eigen::MatrixXd& inputs) {
  std::vector<int> pa = predict_batch(a, inputs);
  std::vector<int> pb = predict_batch(b, inputs);
  std::size_t same = 0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i] == pb[i]) ++same;
  return static_cast<double>(same) / static_cast<double>(pa.size());
}

}  // namespace weaknesslab
