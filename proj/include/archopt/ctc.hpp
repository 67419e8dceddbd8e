#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "archopt/autodiff.hpp"

namespace archopt {

/// Label indices in 1..vocab; 0 is the blank and never appears here.
using LabelSeq = std::vector<int>;

inline constexpr int kBlank = 0;

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline void validate_labels(const LabelSeq& labels, Index classes) {
  for (int l : labels)
    if (l <= kBlank || l >= classes)
      throw Error(ErrorKind::invalid_input,
                  "label " + std::to_string(l) + " outside 1.." + std::to_string(classes - 1));
}

}  // namespace detail

/// Fewest frames that can emit `labels`: one per symbol plus a separating
/// blank between every pair of equal neighbours.
inline Index min_frames(const LabelSeq& labels) {
  Index n = static_cast<Index>(labels.size());
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

/// Log-space forward/backward scores over the blank-augmented sequence.
/// `alpha(t, s)` includes the emission at t; `beta(t, s)` covers frames t+1..
/// so that logsumexp_s(alpha(t, s) + beta(t, s)) == log_likelihood for every t.
struct CtcTable {
  Eigen::MatrixXd alpha;
  Eigen::MatrixXd beta;
  std::vector<int> extended;
  double log_likelihood = 0.0;
};

inline CtcTable ctc_table(const Eigen::MatrixXd& log_probs, const LabelSeq& labels) {
  using detail::kNegInf;
  using detail::log_add;
  detail::validate_labels(labels, log_probs.cols());
  const Index frames = log_probs.rows();
  if (frames < 1) throw Error(ErrorKind::invalid_shape, "ctc needs at least one frame");
  if (frames < min_frames(labels))
    throw Error(ErrorKind::infeasible_alignment, std::to_string(labels.size()) + " labels cannot be aligned to " +
                                                     std::to_string(frames) + " frames");
  CtcTable table;
  auto& ext = table.extended;
  ext.reserve(2 * labels.size() + 1);
  ext.push_back(kBlank);
  for (int l : labels) {
    ext.push_back(l);
    ext.push_back(kBlank);
  }
  const Index states = static_cast<Index>(ext.size());
  auto can_skip = [&](Index s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  auto& alpha = table.alpha;
  alpha = Eigen::MatrixXd::Constant(frames, states, kNegInf);
  alpha(0, 0) = log_probs(0, ext[0]);
  if (states > 1) alpha(0, 1) = log_probs(0, ext[1]);
  for (Index t = 1; t < frames; ++t)
    for (Index s = 0; s < states; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) alpha(t, s) = acc + log_probs(t, ext[s]);
    }

  auto& beta = table.beta;
  beta = Eigen::MatrixXd::Constant(frames, states, kNegInf);
  beta(frames - 1, states - 1) = 0.0;
  if (states > 1) beta(frames - 1, states - 2) = 0.0;
  for (Index t = frames - 2; t >= 0; --t)
    for (Index s = 0; s < states; ++s) {
      double acc = beta(t + 1, s) + log_probs(t + 1, ext[s]);
      if (s + 1 < states) acc = log_add(acc, beta(t + 1, s + 1) + log_probs(t + 1, ext[s + 1]));
      if (s + 2 < states && can_skip(s + 2)) acc = log_add(acc, beta(t + 1, s + 2) + log_probs(t + 1, ext[s + 2]));
      beta(t, s) = acc;
    }

  double ll = alpha(frames - 1, states - 1);
  if (states > 1) ll = log_add(ll, alpha(frames - 1, states - 2));
  if (!std::isfinite(ll)) throw Error(ErrorKind::infeasible_alignment, "no alignment has non-zero probability");
  table.log_likelihood = ll;
  return table;
}

/// Negative log-likelihood of `labels` under per-frame log-probabilities.
template <typename Derived>
double ctc_loss(const Eigen::MatrixBase<Derived>& log_probs, const LabelSeq& labels) {
  return -ctc_table(log_probs.template cast<double>(), labels).log_likelihood;
}

/// Recorded CTC loss; the adjoint w.r.t. log_probs(t, k) is
/// -sum over states s labelled k of exp(alpha + beta - log p).
template <typename Scalar>
Var<Scalar> ctc_loss(Var<Scalar> log_probs, const LabelSeq& labels) {
  CtcTable table = ctc_table(log_probs.value().template cast<double>(), labels);
  Mat<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(-table.log_likelihood);
  return log_probs.tape().record(
      "ctc_loss", {log_probs}, std::move(out), [table = std::move(table)](Tape<Scalar>& t, const auto& n) {
        const auto& lp = t.value(n.inputs[0]);
        Mat<Scalar> g = Mat<Scalar>::Zero(lp.rows(), lp.cols());
        const double scale = static_cast<double>(n.grad(0, 0));
        for (Index f = 0; f < lp.rows(); ++f)
          for (Index s = 0; s < table.alpha.cols(); ++s) {
            const double occ = table.alpha(f, s) + table.beta(f, s) - table.log_likelihood;
            if (occ == detail::kNegInf) continue;
            g(f, table.extended[s]) -= static_cast<Scalar>(scale * std::exp(occ));
          }
        t.accumulate(n.inputs[0], g);
      });
}

/// Removes repeats, then blanks.
inline LabelSeq collapse(const std::vector<int>& frame_labels) {
  LabelSeq out;
  int prev = -1;
  for (int l : frame_labels) {
    if (l != prev && l != kBlank) out.push_back(l);
    prev = l;
  }
  return out;
}

/// Exhaustive reference: sums the probability of every frame-level path
/// whose collapse equals `labels`. Limited to 8 frames and 4 labels.
template <typename Derived>
double ctc_brute_force(const Eigen::MatrixBase<Derived>& log_probs_in, const LabelSeq& labels) {
  const Eigen::MatrixXd log_probs = log_probs_in.template cast<double>();
  const Index frames = log_probs.rows(), classes = log_probs.cols();
  if (frames > 8 || classes - 1 > 4)
    throw Error(ErrorKind::oracle_too_large, "brute force limited to 8 frames and vocab 4");
  detail::validate_labels(labels, classes);
  std::vector<int> path(frames, 0);
  double total = detail::kNegInf;
  bool any = false;
  while (true) {
    if (collapse(path) == labels) {
      double lp = 0.0;
      for (Index t = 0; t < frames; ++t) lp += log_probs(t, path[t]);
      total = detail::log_add(total, lp);
      any = true;
    }
    Index pos = 0;
    while (pos < frames && ++path[pos] == classes) path[pos++] = 0;
    if (pos == frames) break;
  }
  if (!any || !std::isfinite(total))
    throw Error(ErrorKind::infeasible_alignment, "no frame path collapses to the labels");
  return -total;
}

template <typename Derived>
LabelSeq greedy_decode(const Eigen::MatrixBase<Derived>& log_probs) {
  std::vector<int> best(log_probs.rows());
  for (Index t = 0; t < log_probs.rows(); ++t) {
    Index arg = 0;
    log_probs.row(t).maxCoeff(&arg);
    best[t] = static_cast<int>(arg);
  }
  return collapse(best);
}

/// Levenshtein(hyp, ref) / max(1, |ref|).
inline double label_error_rate(const LabelSeq& hyp, const LabelSeq& ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[ref.size()]) / static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

}  // namespace archopt
