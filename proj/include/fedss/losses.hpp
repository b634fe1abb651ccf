#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedss/model.hpp"
#include "fedss/numerics.hpp"

namespace fedss {

struct LossOutput {
  double value = 0.0;
  DenseVector grad_logits;  // dL/do, same length and order as the logits
};

// Roles of the positions of a requested label list S_k.
//
// Positives (every class in the client's data) carry no logit adjustment.
// Negatives were drawn from a proposal with probability q_j and are shifted by
// -log(m q_j), m being the number of negatives.
class SampledLogitContext {
 public:
  SampledLogitContext() = default;

  // q holds a proposal probability per position; entries at positive positions
  // are ignored. Throws ContractViolation if a negative has q <= 0 or if target
  // is not a positive.
  static SampledLogitContext from_proposal(std::vector<bool> positive, std::span<const double> q,
                                           std::size_t target);

  // Uniform proposal without replacement over a pool of `pool_size` classes:
  // q_j = 1 / pool_size, and log(m q_j) is evaluated as log(m / pool_size) so a
  // full pool gives an exact zero shift.
  static SampledLogitContext uniform(std::vector<bool> positive, std::size_t pool_size,
                                     std::size_t target);

  std::size_t size() const noexcept { return positive_.size(); }
  std::size_t target() const noexcept { return target_; }
  void set_target(std::size_t t);
  bool is_positive(std::size_t j) const { return positive_[j]; }
  std::size_t num_negatives() const noexcept { return num_negatives_; }
  std::size_t num_positives() const noexcept { return size() - num_negatives_; }
  double proposal(std::size_t j) const { return q_[j]; }
  // log(m q_j) for negatives, 0 for positives.
  double shift(std::size_t j) const { return shift_[j]; }

 private:
  std::vector<bool> positive_;
  std::vector<double> q_;
  std::vector<double> shift_;
  std::size_t num_negatives_ = 0;
  std::size_t target_ = 0;
};

DenseVector softmax_probs(std::span<const double> o);

LossOutput full_softmax_loss(std::span<const double> o, std::size_t target);

DenseVector adjust_logits(std::span<const double> o, const SampledLogitContext& ctx);

// Target plus sampled negatives; positives other than the target are excluded.
LossOutput sampled_softmax_loss(std::span<const double> o, const SampledLogitContext& ctx);

// Every position of S_k: target, other positives and negatives.
LossOutput fedss_loss(std::span<const double> o, const SampledLogitContext& ctx);

// log(1 + sum_{j != t} exp(o'_j - o'_t)), evaluated directly. Kept as an
// independent route to cross-check fedss_loss.
double fedss_loss_rewritten(std::span<const double> o, const SampledLogitContext& ctx);

// Push terms from the sampled negatives only.
LossOutput negonly_loss(std::span<const double> o, const SampledLogitContext& ctx);

// Push terms from the other local positives only.
LossOutput posonly_loss(std::span<const double> o, const SampledLogitContext& ctx);

enum class LossKind : std::uint8_t { Full, FedSS, NegOnly, PosOnly };

// Dispatch on kind. Full ignores the adjustments and uses every position.
LossOutput evaluate_loss(LossKind kind, std::span<const double> o, const SampledLogitContext& ctx);

struct ForwardState {
  FeatureCache features;
  LogitCache logits;
  DenseVector output;  // logits over sub.labels
};

ForwardState forward(const SubNetwork& sub, std::span<const double> x, const HeadConfig& head);

struct ParamGrads {
  FeatureExtractor features;  // same shape as the sub-network's extractor
  DenseMatrix classifier;     // d x |S|
};

ParamGrads zero_grads(const SubNetwork& sub);

// Chain rule from dL/do through the logit head and the feature extractor;
// accumulates into `grads`.
void loss_backward_to_params(const SubNetwork& sub, const ForwardState& state,
                             std::span<const double> grad_logits, const HeadConfig& head,
                             ParamGrads& grads);

}  // namespace fedss
