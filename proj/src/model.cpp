#include "fedss/model.hpp"

#include <algorithm>
#include <cmath>

#include "fedss/errors.hpp"

namespace fedss {

void FeatureExtractor::validate() const {
  std::size_t width = input_dim;
  for (const auto& layer : layers) {
    require(layer.weight.cols() == width, "feature extractor: layer shapes do not chain");
    require(layer.bias.size() == layer.weight.rows(), "feature extractor: bias length mismatch");
    width = layer.weight.rows();
  }
}

FeatureExtractor zeros_like(const FeatureExtractor& fx) {
  FeatureExtractor z;
  z.input_dim = fx.input_dim;
  z.layers.reserve(fx.layers.size());
  for (const auto& layer : fx.layers)
    z.layers.push_back({DenseMatrix(layer.weight.rows(), layer.weight.cols()),
                        DenseVector(layer.bias.size())});
  return z;
}

void ModelParams::validate() const {
  features.validate();
  require(classifier.rows() == features.embedding_dim(),
          "model: classifier rows != embedding dim");
}

ModelParams init_model(const ModelConfig& cfg, std::mt19937_64& rng) {
  require(!cfg.layer_sizes.empty(), "model config: layer_sizes empty");
  require(cfg.num_classes >= 1, "model config: need at least one class");
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelParams theta;
  theta.features.input_dim = cfg.layer_sizes.front();
  for (std::size_t i = 1; i < cfg.layer_sizes.size(); ++i) {
    const std::size_t in = cfg.layer_sizes[i - 1];
    const std::size_t out = cfg.layer_sizes[i];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    DenseLayer layer{DenseMatrix(out, in), DenseVector(out)};
    for (double& w : layer.weight.span()) w = normal(rng) * std_dev;
    theta.features.layers.push_back(std::move(layer));
  }
  const std::size_t d = theta.features.embedding_dim();
  theta.classifier = DenseMatrix(d, cfg.num_classes);
  const double col_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& w : theta.classifier.span()) w = normal(rng) * col_std;
  return theta;
}

DenseVector forward_features(const FeatureExtractor& fx, std::span<const double> x,
                             FeatureCache* cache) {
  require(x.size() == fx.input_dim, "forward_features: input length != input_dim");
  if (cache) {
    cache->layer_inputs.clear();
    cache->pre_activations.clear();
  }
  DenseVector h(std::vector<double>(x.begin(), x.end()));
  for (std::size_t i = 0; i < fx.layers.size(); ++i) {
    const auto& layer = fx.layers[i];
    DenseVector z = affine_forward(layer.weight, layer.bias.span(), h.span());
    const bool last = i + 1 == fx.layers.size();
    DenseVector next = last ? z : relu_forward(z.span());
    if (cache) {
      cache->layer_inputs.push_back(std::move(h));
      cache->pre_activations.push_back(std::move(z));
    }
    h = std::move(next);
  }
  return h;
}

DenseVector backward_features(const FeatureExtractor& fx, const FeatureCache& cache,
                              std::span<const double> upstream, FeatureExtractor& grad) {
  require(cache.layer_inputs.size() == fx.layers.size(), "backward_features: stale cache");
  require(grad.layers.size() == fx.layers.size(), "backward_features: gradient shape mismatch");
  require(upstream.size() == fx.embedding_dim(), "backward_features: upstream length mismatch");
  DenseVector g(std::vector<double>(upstream.begin(), upstream.end()));
  for (std::size_t i = fx.layers.size(); i-- > 0;) {
    const bool last = i + 1 == fx.layers.size();
    if (!last) g = relu_backward(cache.pre_activations[i].span(), g.span());
    g = affine_backward_accumulate(fx.layers[i].weight, cache.layer_inputs[i].span(), g.span(),
                                   grad.layers[i].weight, grad.layers[i].bias);
  }
  return g;
}

DenseVector compute_logits(std::span<const double> f, const DenseMatrix& w_s, const HeadConfig& head,
                           LogitCache* cache) {
  require(f.size() == w_s.rows(), "logits: feature length != classifier rows");
  const std::size_t d = w_s.rows();
  const std::size_t k = w_s.cols();
  DenseVector o(k);
  if (head.kind == LogitHead::DotProduct) {
    for (std::size_t r = 0; r < d; ++r) {
      const auto wr = w_s.row(r);
      for (std::size_t j = 0; j < k; ++j) o[j] += wr[j] * f[r];
    }
    if (cache) cache->feature = DenseVector(std::vector<double>(f.begin(), f.end()));
    return o;
  }
  require(head.scale > 0.0, "cosine logits: scale must be positive");
  const double fnorm = norm2(f);
  if (!(fnorm > kNormFloor)) throw DegenerateInput("cosine logits: zero feature vector");
  DenseVector cnorm(k);
  for (std::size_t r = 0; r < d; ++r) {
    const auto wr = w_s.row(r);
    for (std::size_t j = 0; j < k; ++j) {
      cnorm[j] += wr[j] * wr[j];
      o[j] += wr[j] * f[r];
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    cnorm[j] = std::sqrt(cnorm[j]);
    if (!(cnorm[j] > kNormFloor)) throw DegenerateInput("cosine logits: zero class vector");
    o[j] = head.scale * o[j] / (fnorm * cnorm[j]);
  }
  if (cache) {
    cache->feature = DenseVector(std::vector<double>(f.begin(), f.end()));
    cache->feature_norm = fnorm;
    cache->column_norms = std::move(cnorm);
  }
  return o;
}

DenseVector cosine_logits(std::span<const double> f, const DenseMatrix& w_s, double scale) {
  return compute_logits(f, w_s, HeadConfig{LogitHead::ScaledCosine, scale});
}

DenseVector backward_logits(const DenseMatrix& w_s, const LogitCache& cache,
                            std::span<const double> grad_logits, const HeadConfig& head,
                            DenseMatrix& grad_w) {
  const std::size_t d = w_s.rows();
  const std::size_t k = w_s.cols();
  require(grad_logits.size() == k, "backward_logits: gradient length != column count");
  require(grad_w.rows() == d && grad_w.cols() == k, "backward_logits: gradient buffer shape");
  require(cache.feature.size() == d, "backward_logits: stale cache");
  const auto f = cache.feature.span();
  DenseVector gf(d);
  if (head.kind == LogitHead::DotProduct) {
    for (std::size_t r = 0; r < d; ++r) {
      const auto wr = w_s.row(r);
      auto gr = grad_w.row(r);
      for (std::size_t j = 0; j < k; ++j) {
        gf[r] += grad_logits[j] * wr[j];
        gr[j] += grad_logits[j] * f[r];
      }
    }
    return gf;
  }
  // With u = f/|f| and v_j = w_j/|w_j|:
  //   dL/dw_j = s g_j (u - v_j <v_j, u>) / |w_j|
  //   dL/df   = (I - u u^T) (s sum_j g_j v_j) / |f|
  const double fnorm = cache.feature_norm;
  std::vector<double> cos_j(k), coef(k);
  for (std::size_t r = 0; r < d; ++r) {
    const auto wr = w_s.row(r);
    for (std::size_t j = 0; j < k; ++j) cos_j[j] += wr[j] * f[r];
  }
  for (std::size_t j = 0; j < k; ++j) {
    cos_j[j] /= fnorm * cache.column_norms[j];
    coef[j] = head.scale * grad_logits[j] / cache.column_norms[j];
  }
  for (std::size_t r = 0; r < d; ++r) {
    const auto wr = w_s.row(r);
    auto gr = grad_w.row(r);
    const double ur = f[r] / fnorm;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (coef[j] == 0.0) continue;
      const double vr = wr[j] / cache.column_norms[j];
      gr[j] += coef[j] * (ur - vr * cos_j[j]);
      acc += head.scale * grad_logits[j] * vr;
    }
    gf[r] = acc;
  }
  return l2_normalize_backward(f, gf.span());
}

void validate_labels(std::span<const ClassId> labels, std::size_t n) {
  std::vector<bool> seen(n, false);
  for (ClassId c : labels) {
    if (c >= n) throw ContractViolation("label out of range: " + std::to_string(c));
    if (seen[c]) throw ContractViolation("duplicate label: " + std::to_string(c));
    seen[c] = true;
  }
}

DenseMatrix slice_columns(const DenseMatrix& w, std::span<const ClassId> labels) {
  validate_labels(labels, w.cols());
  DenseMatrix out(w.rows(), labels.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto src = w.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < labels.size(); ++j) dst[j] = src[labels[j]];
  }
  return out;
}

SubNetwork slice_subnetwork(const ModelParams& theta, std::span<const ClassId> labels) {
  return SubNetwork{theta.features, slice_columns(theta.classifier, labels),
                    LabelList(labels.begin(), labels.end())};
}

DenseMatrix scatter_delta(const DenseMatrix& delta_s, std::span<const ClassId> labels, std::size_t n) {
  require(labels.size() == delta_s.cols(), "scatter_delta: label count != column count");
  validate_labels(labels, n);
  DenseMatrix out(delta_s.rows(), n);
  for (std::size_t r = 0; r < delta_s.rows(); ++r) {
    const auto src = delta_s.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < labels.size(); ++j) dst[labels[j]] = src[j];
  }
  return out;
}

std::size_t parameter_count(const FeatureExtractor& fx) noexcept {
  std::size_t total = 0;
  for (const auto& layer : fx.layers) total += layer.weight.size() + layer.bias.size();
  return total;
}

std::size_t parameter_count(const DenseMatrix& w) noexcept { return w.size(); }

std::size_t parameter_count(const ModelParams& theta) noexcept {
  return parameter_count(theta.features) + parameter_count(theta.classifier);
}

std::size_t parameter_count(const SubNetwork& sub) noexcept {
  return parameter_count(sub.features) + parameter_count(sub.classifier);
}

std::vector<double> flatten(const FeatureExtractor& fx) {
  std::vector<double> flat;
  flat.reserve(parameter_count(fx));
  for (const auto& layer : fx.layers) {
    flat.insert(flat.end(), layer.weight.span().begin(), layer.weight.span().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void unflatten(std::span<const double> flat, FeatureExtractor& fx) {
  require(flat.size() == parameter_count(fx), "unflatten: length mismatch");
  std::size_t at = 0;
  for (auto& layer : fx.layers) {
    auto w = layer.weight.span();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), w.size(), w.begin());
    at += w.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), layer.bias.size(), layer.bias.begin());
    at += layer.bias.size();
  }
}

}  // namespace fedss
