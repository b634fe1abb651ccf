#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedss/numerics.hpp"

namespace fedss {

using ClassId = std::uint32_t;
using LabelList = std::vector<ClassId>;

struct DenseLayer {
  DenseMatrix weight;  // out x in
  DenseVector bias;    // out
};

// MLP feature extractor: ReLU after every layer except the last.
// No layers means the identity map (embedding_dim == input_dim).
struct FeatureExtractor {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t embedding_dim() const noexcept {
    return layers.empty() ? input_dim : layers.back().weight.rows();
  }
  // Throws ContractViolation if consecutive layer shapes do not chain.
  void validate() const;
};

FeatureExtractor zeros_like(const FeatureExtractor& fx);

enum class LogitHead { ScaledCosine, DotProduct };

struct HeadConfig {
  LogitHead kind = LogitHead::ScaledCosine;
  double scale = 20.0;
};

struct ModelConfig {
  // [input_dim, hidden..., embedding_dim]; a single entry gives the identity extractor.
  std::vector<std::size_t> layer_sizes{32, 64, 16};
  std::size_t num_classes = 200;
  HeadConfig head{};
};

// theta = (phi, W). `classifier` is d x n; column c is the class vector of class c.
struct ModelParams {
  FeatureExtractor features;
  DenseMatrix classifier;

  std::size_t num_classes() const noexcept { return classifier.cols(); }
  void validate() const;
};

// What a client receives: phi plus the columns of W for `labels`, in that order.
struct SubNetwork {
  FeatureExtractor features;
  DenseMatrix classifier;  // d x |labels|
  LabelList labels;
};

ModelParams init_model(const ModelConfig& cfg, std::mt19937_64& rng);

// Per-example forward activations needed by the backward pass.
struct FeatureCache {
  std::vector<DenseVector> layer_inputs;  // input to layer i
  std::vector<DenseVector> pre_activations;
};

DenseVector forward_features(const FeatureExtractor& fx, std::span<const double> x,
                             FeatureCache* cache = nullptr);

// Accumulates parameter gradients into `grad` (same shape as fx) and returns d/dx.
DenseVector backward_features(const FeatureExtractor& fx, const FeatureCache& cache,
                              std::span<const double> upstream, FeatureExtractor& grad);

struct LogitCache {
  DenseVector feature;          // f
  double feature_norm = 0.0;    // |f| (cosine head)
  DenseVector column_norms;     // |w_j| (cosine head)
};

// o_j = s <f/|f|, w_j/|w_j|> (cosine head) or o_j = <w_j, f> (dot head).
DenseVector compute_logits(std::span<const double> f, const DenseMatrix& w_s, const HeadConfig& head,
                           LogitCache* cache = nullptr);

DenseVector cosine_logits(std::span<const double> f, const DenseMatrix& w_s, double scale);

// Accumulates dL/dW_S into grad_w and returns dL/df.
DenseVector backward_logits(const DenseMatrix& w_s, const LogitCache& cache,
                            std::span<const double> grad_logits, const HeadConfig& head,
                            DenseMatrix& grad_w);

// Throws ContractViolation unless labels are distinct and all < n.
void validate_labels(std::span<const ClassId> labels, std::size_t n);

DenseMatrix slice_columns(const DenseMatrix& w, std::span<const ClassId> labels);
SubNetwork slice_subnetwork(const ModelParams& theta, std::span<const ClassId> labels);

// Places column j of delta_s at column labels[j] of a d x n zero matrix.
DenseMatrix scatter_delta(const DenseMatrix& delta_s, std::span<const ClassId> labels, std::size_t n);

std::size_t parameter_count(const FeatureExtractor& fx) noexcept;
std::size_t parameter_count(const DenseMatrix& w) noexcept;
std::size_t parameter_count(const ModelParams& theta) noexcept;
std::size_t parameter_count(const SubNetwork& sub) noexcept;

// Flat views for vector arithmetic over every parameter of phi.
std::vector<double> flatten(const FeatureExtractor& fx);
void unflatten(std::span<const double> flat, FeatureExtractor& fx);

// Checkpoint: JSON container, see docs/formats.md.
void save_checkpoint(const ModelParams& theta, const HeadConfig& head, const std::filesystem::path& path);
struct Checkpoint {
  ModelParams params;
  HeadConfig head;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_json(const ModelParams& theta, const HeadConfig& head);
Checkpoint checkpoint_from_json(const std::string& text);

}  // namespace fedss
