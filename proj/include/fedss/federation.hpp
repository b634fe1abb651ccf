#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedss/dataset.hpp"
#include "fedss/losses.hpp"
#include "fedss/model.hpp"

namespace fedss {

enum class Method : std::uint8_t { FedSS, NegOnly, PosOnly, FedAwS, FullSoftmax };

std::string to_string(Method m);
Method parse_method(const std::string& name);  // throws ConfigError
LossKind loss_kind(Method m) noexcept;

struct ClientDataset {
  std::vector<DenseVector> features;
  std::vector<ClassId> labels;
  LabelList positives;  // sorted, exactly the labels present

  std::size_t num_examples() const noexcept { return labels.size(); }
  static ClientDataset from_examples(std::vector<DenseVector> x, std::vector<ClassId> y);
  void validate() const;
};

struct RoundConfig {
  std::size_t clients_per_round = 8;
  std::size_t local_epochs = 1;
  double client_lr = 0.01;
  double server_lr = 1.0;
  double server_momentum = 0.9;
  std::size_t target_s_size = 20;
  // Exact |N_k| for every client; overrides target_s_size when set.
  std::optional<std::size_t> num_negatives;
  // NegOnly with |P_k| - 1 extra negatives, so every input sees as many push terms as under FedSS.
  bool matched_negatives = false;
  std::size_t batch_size = 32;
  Method method = Method::FedSS;
  std::uint64_t seed = 0;
  HeadConfig head{};
  double spreadout_weight = 0.0;
  double spreadout_margin = 1.0;
  bool spreadout_before_momentum = false;
  int client_threads = 1;

  void validate(std::size_t num_classes) const;  // throws ConfigError
};

// The only thing a client reveals before training: the union S_k, sorted
// ascending so that position carries no information about membership in P_k.
struct ModelRequest {
  LabelList labels;
};

struct ClientUpdate {
  FeatureExtractor delta_features;
  DenseMatrix delta_classifier;  // d x |labels|
  LabelList labels;
  std::size_t num_examples = 0;
  std::size_t transmitted_parameter_count = 0;
  double mean_loss = 0.0;
};

// Aggregated change in full model shape.
struct ModelDelta {
  FeatureExtractor features;
  DenseMatrix classifier;  // d x n
};

struct ServerState {
  ModelParams theta;
  ModelDelta velocity;
  std::size_t round = 0;

  static ServerState initial(ModelParams theta);
};

// splitmix64 mixing of (seed, a, b, c): one stream per (round, client, purpose).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) noexcept;

// Pairwise-disjoint clients, each with exactly classes_per_client labels and
// examples_per_client examples spread evenly over them.
std::vector<ClientDataset> partition_clients(const Dataset& data, std::size_t num_clients,
                                             std::size_t classes_per_client,
                                             std::size_t examples_per_client, std::uint64_t seed);

// m classes drawn uniformly without replacement from [n] \ positives.
LabelList sample_negatives(std::span<const ClassId> positives, std::size_t n, std::size_t m,
                           std::mt19937_64& rng);

// Client-side state for one round. Only `request` leaves the client.
struct ClientPlan {
  ModelRequest request;
  SampledLogitContext roles;  // aligned with request.labels
  LossKind loss = LossKind::FedSS;
};

ClientPlan plan_client_round(const ClientDataset& data, std::size_t num_classes,
                             const RoundConfig& cfg, std::mt19937_64& rng);

// Server side of the request: phi plus W columns for the requested labels.
SubNetwork serve_request(const ModelParams& theta, const ModelRequest& request);

struct LocalTrainConfig {
  std::size_t epochs = 1;
  double lr = 0.01;
  std::size_t batch_size = 32;
  HeadConfig head{};
};

// Minibatch SGD on the client's loss; returns final - initial over (phi, W_S).
ClientUpdate client_local_train(const SubNetwork& sub, const ClientDataset& data,
                                const SampledLogitContext& roles, LossKind loss,
                                const LocalTrainConfig& cfg, std::mt19937_64& rng);

// Plans, serves and trains every listed client. Client k uses RNG streams derived
// from (seed, round, client id), so results do not depend on thread count.
std::vector<ClientUpdate> collect_updates(const ModelParams& theta,
                                          std::span<const ClientDataset> clients,
                                          std::span<const std::size_t> client_ids,
                                          const RoundConfig& cfg, std::size_t round);

// sum_k (n_k / sum n) * delta_k, classifier deltas scattered to d x n.
ModelDelta server_aggregate(std::span<const ClientUpdate> updates, const ModelParams& shape);

// Momentum on the pseudo-gradient -g:  v <- mu v - g;  theta <- theta - alpha v.
// With mu = 0 and alpha = 1 the model moves to theta + g.
void server_apply(ServerState& state, const ModelDelta& g, double alpha, double mu);

double spreadout_value(const DenseMatrix& w, double margin);
// One gradient step on sum_{i != j} max(0, margin - |w_i - w_j|)^2.
DenseMatrix fedaws_spreadout_step(const DenseMatrix& w, double weight, double margin);

std::vector<std::size_t> select_clients(std::size_t num_clients, std::size_t k, std::uint64_t seed,
                                        std::size_t round);

struct RoundMetrics {
  std::size_t round = 0;
  std::size_t participants = 0;
  double train_loss = 0.0;  // example-weighted mean client loss
  std::size_t params_down = 0;
  std::size_t params_up = 0;
  std::size_t labels_up = 0;
  std::size_t bytes_down = 0;
  std::size_t bytes_up = 0;
  double mean_s_size = 0.0;
  std::optional<double> test_accuracy;
};

inline constexpr std::size_t kBytesPerParameter = 8;
inline constexpr std::size_t kBytesPerLabel = 4;

RoundMetrics run_round(ServerState& state, std::span<const ClientDataset> clients,
                       const RoundConfig& cfg);

struct TrainingOptions {
  std::size_t rounds = 100;
  std::size_t eval_every = 0;  // 0: only after the final round
  const Dataset* eval_set = nullptr;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
};

struct TrainingResult {
  ServerState state;
  std::vector<RoundMetrics> rounds;
};

TrainingResult run_training(ModelParams initial, std::span<const ClientDataset> clients,
                            const RoundConfig& cfg, const TrainingOptions& opts);

struct CentralizedConfig {
  std::size_t steps = 300;
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  HeadConfig head{};
};

// Plain minibatch SGD with the full softmax loss over IID batches.
ModelParams centralized_train(ModelParams theta, const Dataset& data, const CentralizedConfig& cfg);

}  // namespace fedss
