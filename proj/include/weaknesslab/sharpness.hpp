#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "weaknesslab/errors.hpp"
#include "weaknesslab/mlp.hpp"
#include "weaknesslab/rng.hpp"

// Non-invariant sharpness measures: Hutchinson trace estimation driven by
// exact Hessian-vector products, plus weight norms.

namespace weaknesslab {

using HvpFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Exact Hessian-vector product for the full-batch cross-entropy loss,
// hand-derived as forward-over-reverse for the fixed architecture. The ReLU
// is treated as locally linear at its activation pattern (its second
// derivative is zero away from the kink, and the kinks have measure zero),
// which is exactly what reverse-mode autodiff differentiates.
//
// With primals z1=W1 x+b1, a1=relu(z1), z2=W2 a1+b2, a2=relu(z2),
// z3=W3 a2+b3, adjoints g3=(softmax(z3)-onehot)/B, g2=(g3 W3) .* m2,
// g1=(g2 W2) .* m1, the tangent (V1,c1,V2,c2,V3,c3) propagates as
//   dz1 = x V1' + c1          da1 = dz1 .* m1
//   dz2 = a1 V2' + da1 W2' + c2   da2 = dz2 .* m2
//   dz3 = a2 V3' + da2 W3' + c3
//   dp  = p .* dz3 - p .* rowsum(p .* dz3)
//   dg3 = dp / B
//   dg2 = (dg3 W3 + g3 V3) .* m2
//   dg1 = (dg2 W2 + g2 V2) .* m1
// and H*v reads off as (dg1' x, colsum dg1, dg2' a1 + g2' da1,
// colsum dg2, dg3' a2 + g3' da2, colsum dg3).
//
// All batch-independent quantities are precomputed once, so evaluating many
// probe vectors against the same (params, batch) is cheap.
inline HvpFn make_loss_hvp(const MlpParams& p, const Eigen::MatrixXd& x,
                           const std::vector<int>& y) {
  if (x.rows() == 0) throw ArgumentError("make_loss_hvp: empty batch");
  ForwardTrace t = forward(p, x);
  Eigen::MatrixXd probs;
  detail::softmax_xent(t.logits, y, &probs);
  Eigen::Index b = x.rows();
  Eigen::MatrixXd g3 = probs;
  for (Eigen::Index i = 0; i < b; ++i) g3(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  g3 /= static_cast<double>(b);
  Eigen::MatrixXd m1 = (t.pre1.array() > 0.0).cast<double>();
  Eigen::MatrixXd m2 = (t.pre2.array() > 0.0).cast<double>();
  Eigen::MatrixXd g2 = (g3 * p.w3).cwiseProduct(m2);

  MlpParams params = p;
  MlpDims dims = p.dims();
  Eigen::MatrixXd xx = x;
  Eigen::MatrixXd post1 = t.post1, post2 = t.post2;

  return [params, dims, xx, post1, post2, probs, g3, g2, m1, m2,
          b](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    if (v.size() != MlpParams::zeros(dims).n_params())
      throw ArgumentError("hvp: tangent dimensionality mismatch");
    MlpParams tv = MlpParams::from_flat(dims, v);

    Eigen::MatrixXd dz1 = (xx * tv.w1.transpose()).rowwise() + tv.b1.transpose();
    Eigen::MatrixXd da1 = dz1.cwiseProduct(m1);
    Eigen::MatrixXd dz2 = (post1 * tv.w2.transpose() + da1 * params.w2.transpose())
                              .rowwise() +
                          tv.b2.transpose();
    Eigen::MatrixXd da2 = dz2.cwiseProduct(m2);
    Eigen::MatrixXd dz3 = (post2 * tv.w3.transpose() + da2 * params.w3.transpose())
                              .rowwise() +
                          tv.b3.transpose();

    Eigen::MatrixXd pdz = probs.cwiseProduct(dz3);
    Eigen::VectorXd rowsum = pdz.rowwise().sum();
    Eigen::MatrixXd dp = pdz - probs.cwiseProduct(rowsum.replicate(1, dz3.cols()));
    Eigen::MatrixXd dg3 = dp / static_cast<double>(b);

    Eigen::MatrixXd dg2 = (dg3 * params.w3 + g3 * tv.w3).cwiseProduct(m2);
    Eigen::MatrixXd dg1 = (dg2 * params.w2 + g2 * tv.w2).cwiseProduct(m1);

    MlpParams hv;
    hv.w1 = dg1.transpose() * xx;
    hv.b1 = dg1.colwise().sum().transpose();
    hv.w2 = dg2.transpose() * post1 + g2.transpose() * da1;
    hv.b2 = dg2.colwise().sum().transpose();
    hv.w3 = dg3.transpose() * post2 + g3.transpose() * da2;
    hv.b3 = dg3.colwise().sum().transpose();
    Eigen::VectorXd out = hv.flatten();
    if (!out.allFinite()) throw NumericError("hvp: non-finite result");
    return out;
  };
}

struct TraceEstimate {
  double value = 0.0;
  int n_probes = 0;
  std::uint64_t probe_seed = 0;
  std::vector<double> per_probe;
};

// Hutchinson estimator: mean over i.i.d. Rademacher vectors v of v' H v.
// Probes are generated and summed in index order, so the estimate does not
// depend on evaluation schedule.
inline TraceEstimate hessian_trace(const HvpFn& hvp, Eigen::Index dim,
                                   int n_probes, std::uint64_t seed) {
  if (n_probes < 1) throw ArgumentError("hessian_trace: n_probes must be >= 1");
  TraceEstimate est;
  est.n_probes = n_probes;
  est.probe_seed = seed;
  est.per_probe.reserve(static_cast<std::size_t>(n_probes));
  SplitMix64 rng(seed);
  Eigen::VectorXd v(dim);
  for (int k = 0; k < n_probes; ++k) {
    std::uint64_t bits = 0;
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (i % 64 == 0) bits = rng.next_u64();
      v[i] = ((bits >> (i % 64)) & 1ull) ? 1.0 : -1.0;
    }
    double quad = v.dot(hvp(v));
    if (!std::isfinite(quad)) throw NumericError("hessian_trace: non-finite probe");
    est.per_probe.push_back(quad);
  }
  double sum = 0.0;
  for (double q : est.per_probe) sum += q;
  est.value = sum / static_cast<double>(n_probes);
  return est;
}

inline TraceEstimate hessian_trace(const MlpParams& p, const Eigen::MatrixXd& x,
                                   const std::vector<int>& y, int n_probes,
                                   std::uint64_t seed) {
  return hessian_trace(make_loss_hvp(p, x, y), p.n_params(), n_probes, seed);
}

struct WeightNorms {
  double l1 = 0.0;
  double l2 = 0.0;
};

// Sums run over every weight and bias entry.
inline WeightNorms weight_norms(const MlpParams& p) {
  Eigen::VectorXd flat = p.flatten();
  WeightNorms n;
  n.l1 = flat.lpNorm<1>();
  n.l2 = flat.norm();
  return n;
}

}  // namespace weaknesslab
