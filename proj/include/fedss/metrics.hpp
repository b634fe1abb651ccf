#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedss/dataset.hpp"
#include "fedss/federation.hpp"
#include "fedss/model.hpp"

namespace fedss {

// Argmax over all n logits, ties to the lowest class id. Empty dataset throws.
double top1_accuracy(const ModelParams& theta, const HeadConfig& head, const Dataset& data);
ClassId predict(const ModelParams& theta, const HeadConfig& head, std::span<const double> x);

// Unit-norm embeddings (one per row) with their class labels.
struct RetrievalIndex {
  DenseMatrix embeddings;  // N x d
  std::vector<ClassId> labels;

  // Normalizes every row; throws DegenerateInput on a zero row.
  static RetrievalIndex from_rows(const DenseMatrix& rows, std::vector<ClassId> labels);
  std::size_t size() const noexcept { return labels.size(); }
  void validate() const;
};

RetrievalIndex embed_dataset(const FeatureExtractor& fx, const Dataset& data);

// Every item queries all others; neighbours ranked by cosine similarity, which on
// unit vectors orders exactly like normalized Euclidean distance. Ties go to the
// lower index. `parallel` selects the OpenMP similarity kernel.
double map_at_r(const RetrievalIndex& index, std::size_t r, bool parallel = true);

// Average precision at R for one query given the R-long correctness pattern of its ranked neighbours.
double average_precision_at_r(const std::vector<bool>& correct);

struct ConfusionMatrix {
  LabelList classes;                // rows/cols in this order (the client's P_k)
  std::vector<std::size_t> counts;  // k x k, row = true class, col = predicted

  std::size_t k() const noexcept { return classes.size(); }
  std::size_t at(std::size_t row, std::size_t col) const { return counts[row * k() + col]; }
  std::size_t total() const noexcept;
  // Largest column sum / total.
  double max_column_share() const;
  double diagonal_share() const;
  bool diagonal_dominant() const;  // every row's diagonal is its strict maximum
};

// Prediction restricted to argmax over the client's positive columns.
ConfusionMatrix client_confusion_matrix(const ModelParams& theta, const HeadConfig& head,
                                        const ClientDataset& data);

// Mean cosine similarity over unordered pairs of class vectors in `classes`.
double collapse_score(const DenseMatrix& w, std::span<const ClassId> classes);

struct NoiseCurvePoint {
  std::size_t m = 0;
  double noise = 0.0;       // mean over replicates of mean |g_full - g_fedss|
  double noise_std = 0.0;
  double l2_mean = 0.0;     // mean over replicates of |g_full - g_fedss|_2
  std::size_t replicates = 0;
};

struct GradientNoiseConfig {
  std::size_t clients = 8;
  std::size_t replicates = 64;
  std::size_t batch_size = 32;
  double client_lr = 0.01;
  HeadConfig head{};
  std::uint64_t seed = 0;
};

// m value meaning "every class not in the batch", whatever that count is per replicate.
inline constexpr std::size_t kFullComplement = static_cast<std::size_t>(-1);

// Each replicate draws one shared batch D from `data`, hands it to every client,
// and compares the aggregated FullSoftmax round delta with the aggregated FedSS
// delta at |N_k| = m (each client sampling its own N_k).
NoiseCurvePoint gradient_noise(const ModelParams& theta, const Dataset& data, std::size_t m,
                               const GradientNoiseConfig& cfg);

struct CostReport {
  std::size_t feature_params = 0;     // |phi|
  std::size_t embedding_dim = 0;      // d
  std::size_t num_classes = 0;        // n
  std::size_t s_size = 0;             // |S_k|
  std::size_t rounds = 0;
  std::size_t clients_per_round = 0;
  std::size_t full_model_params = 0;  // |phi| + d n
  std::size_t download_params = 0;    // |phi| + d |S_k| per client per round
  std::size_t upload_params = 0;      // same shape as the download, as deltas
  std::size_t upload_label_ids = 0;   // |S_k|
  double classifier_fraction = 0.0;   // d n / (|phi| + d n)
  double transmitted_fraction = 0.0;  // download / full
  std::size_t total_bytes = 0;        // both directions, all clients, all rounds

  std::string to_json() const;
};

CostReport comm_cost_report(std::size_t feature_params, std::size_t embedding_dim,
                            std::size_t num_classes, std::size_t s_size, std::size_t rounds,
                            std::size_t clients_per_round);

struct FractionCurvePoint {
  std::size_t num_classes;
  std::size_t embedding_dim;
  double classifier_fraction;
};

// Classifier share of the model over an (n, d) grid. The extractor is a fixed
// backbone plus a projection from backbone_out_width to d (weights and bias).
std::vector<FractionCurvePoint> classifier_fraction_curve(
    std::size_t backbone_base_params, std::size_t backbone_out_width,
    std::span<const std::size_t> class_counts, std::span<const std::size_t> embedding_dims);

}  // namespace fedss
