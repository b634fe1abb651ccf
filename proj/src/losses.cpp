#include "fedss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedss/errors.hpp"

namespace fedss {

SampledLogitContext SampledLogitContext::from_proposal(std::vector<bool> positive,
                                                       std::span<const double> q,
                                                       std::size_t target) {
  require(q.size() == positive.size(), "context: proposal length != label count");
  SampledLogitContext ctx;
  ctx.positive_ = std::move(positive);
  ctx.q_.assign(ctx.positive_.size(), 0.0);
  ctx.shift_.assign(ctx.positive_.size(), 0.0);
  ctx.num_negatives_ = static_cast<std::size_t>(
      std::count(ctx.positive_.begin(), ctx.positive_.end(), false));
  const auto m = static_cast<double>(ctx.num_negatives_);
  for (std::size_t j = 0; j < ctx.positive_.size(); ++j) {
    if (ctx.positive_[j]) continue;
    if (!(q[j] > 0.0)) throw ContractViolation("context: proposal probability must be positive");
    ctx.q_[j] = q[j];
    ctx.shift_[j] = std::log(m * q[j]);
  }
  ctx.set_target(target);
  return ctx;
}

SampledLogitContext SampledLogitContext::uniform(std::vector<bool> positive, std::size_t pool_size,
                                                 std::size_t target) {
  SampledLogitContext ctx;
  ctx.positive_ = std::move(positive);
  ctx.num_negatives_ = static_cast<std::size_t>(
      std::count(ctx.positive_.begin(), ctx.positive_.end(), false));
  require(ctx.num_negatives_ <= pool_size, "context: more negatives than the pool holds");
  ctx.q_.assign(ctx.positive_.size(), 0.0);
  ctx.shift_.assign(ctx.positive_.size(), 0.0);
  if (ctx.num_negatives_ > 0) {
    const double q = 1.0 / static_cast<double>(pool_size);
    const double s =
        std::log(static_cast<double>(ctx.num_negatives_) / static_cast<double>(pool_size));
    for (std::size_t j = 0; j < ctx.positive_.size(); ++j) {
      if (ctx.positive_[j]) continue;
      ctx.q_[j] = q;
      ctx.shift_[j] = s;
    }
  }
  ctx.set_target(target);
  return ctx;
}

void SampledLogitContext::set_target(std::size_t t) {
  require(t < positive_.size(), "context: target index out of range");
  require(positive_[t], "context: target must be a positive class");
  target_ = t;
}

namespace {

// Cross entropy of a softmax restricted to positions with include[j] set.
LossOutput masked_cross_entropy(std::span<const double> adjusted, const std::vector<bool>& include,
                                std::size_t target) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < adjusted.size(); ++j)
    if (include[j]) mx = std::max(mx, adjusted[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < adjusted.size(); ++j)
    if (include[j]) sum += std::exp(adjusted[j] - mx);
  const double lse = mx + std::log(sum);
  LossOutput out{lse - adjusted[target], DenseVector(adjusted.size())};
  for (std::size_t j = 0; j < adjusted.size(); ++j)
    if (include[j]) out.grad_logits[j] = std::exp(adjusted[j] - lse);
  out.grad_logits[target] -= 1.0;
  // lse - o_t can land a hair below zero when the target dominates.
  out.value = std::max(out.value, 0.0);
  return out;
}

void check_context(std::span<const double> o, const SampledLogitContext& ctx) {
  require(o.size() == ctx.size(), "loss: logits length != context size");
  require(!o.empty(), "loss: empty logits");
}

}  // namespace

DenseVector softmax_probs(std::span<const double> o) {
  const double lse = log_sum_exp(o);
  DenseVector p(o.size());
  for (std::size_t j = 0; j < o.size(); ++j) p[j] = std::exp(o[j] - lse);
  return p;
}

LossOutput full_softmax_loss(std::span<const double> o, std::size_t target) {
  require(!o.empty(), "loss: empty logits");
  require(target < o.size(), "loss: target out of range");
  return masked_cross_entropy(o, std::vector<bool>(o.size(), true), target);
}

DenseVector adjust_logits(std::span<const double> o, const SampledLogitContext& ctx) {
  check_context(o, ctx);
  DenseVector out(o.size());
  for (std::size_t j = 0; j < o.size(); ++j) out[j] = o[j] - ctx.shift(j);
  return out;
}

LossOutput sampled_softmax_loss(std::span<const double> o, const SampledLogitContext& ctx) {
  const DenseVector adj = adjust_logits(o, ctx);
  std::vector<bool> include(o.size());
  for (std::size_t j = 0; j < o.size(); ++j) include[j] = !ctx.is_positive(j);
  include[ctx.target()] = true;
  return masked_cross_entropy(adj.span(), include, ctx.target());
}

LossOutput fedss_loss(std::span<const double> o, const SampledLogitContext& ctx) {
  const DenseVector adj = adjust_logits(o, ctx);
  return masked_cross_entropy(adj.span(), std::vector<bool>(o.size(), true), ctx.target());
}

double fedss_loss_rewritten(std::span<const double> o, const SampledLogitContext& ctx) {
  const DenseVector adj = adjust_logits(o, ctx);
  const double ot = adj[ctx.target()];
  double biggest = 0.0;
  for (std::size_t j = 0; j < adj.size(); ++j)
    if (j != ctx.target()) biggest = std::max(biggest, adj[j] - ot);
  if (biggest == 0.0) {
    double terms = 0.0;
    for (std::size_t j = 0; j < adj.size(); ++j)
      if (j != ctx.target()) terms += std::exp(adj[j] - ot);
    return std::log1p(terms);
  }
  // Factor exp(biggest) out of 1 + sum so no term overflows.
  double acc = std::exp(-biggest);
  for (std::size_t j = 0; j < adj.size(); ++j)
    if (j != ctx.target()) acc += std::exp(adj[j] - ot - biggest);
  return biggest + std::log(acc);
}

LossOutput negonly_loss(std::span<const double> o, const SampledLogitContext& ctx) {
  return sampled_softmax_loss(o, ctx);
}

LossOutput posonly_loss(std::span<const double> o, const SampledLogitContext& ctx) {
  const DenseVector adj = adjust_logits(o, ctx);
  std::vector<bool> include(o.size());
  for (std::size_t j = 0; j < o.size(); ++j) include[j] = ctx.is_positive(j);
  return masked_cross_entropy(adj.span(), include, ctx.target());
}

LossOutput evaluate_loss(LossKind kind, std::span<const double> o, const SampledLogitContext& ctx) {
  switch (kind) {
    case LossKind::Full:
      check_context(o, ctx);
      return full_softmax_loss(o, ctx.target());
    case LossKind::FedSS:
      return fedss_loss(o, ctx);
    case LossKind::NegOnly:
      return negonly_loss(o, ctx);
    case LossKind::PosOnly:
      return posonly_loss(o, ctx);
  }
  throw ContractViolation("unknown loss kind");
}

ForwardState forward(const SubNetwork& sub, std::span<const double> x, const HeadConfig& head) {
  ForwardState st;
  const DenseVector f = forward_features(sub.features, x, &st.features);
  st.output = compute_logits(f.span(), sub.classifier, head, &st.logits);
  return st;
}

ParamGrads zero_grads(const SubNetwork& sub) {
  return ParamGrads{zeros_like(sub.features),
                    DenseMatrix(sub.classifier.rows(), sub.classifier.cols())};
}

void loss_backward_to_params(const SubNetwork& sub, const ForwardState& state,
                             std::span<const double> grad_logits, const HeadConfig& head,
                             ParamGrads& grads) {
  const DenseVector gf = backward_logits(sub.classifier, state.logits, grad_logits, head, grads.classifier);
  backward_features(sub.features, state.features, gf.span(), grads.features);
}

}  // namespace fedss
