#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedss/dataset.hpp"
#include "fedss/federation.hpp"
#include "fedss/metrics.hpp"
#include "fedss/model.hpp"

namespace fedss {

// Run configuration; the JSON schema is documented in docs/config.md.
struct ExperimentConfig {
  std::vector<std::size_t> layer_sizes{32, 64, 16};
  HeadConfig head{};
  std::uint64_t init_seed_offset = 0;

  SyntheticDatasetSpec synthetic{};
  std::optional<std::filesystem::path> train_csv;
  std::optional<std::filesystem::path> test_csv;

  std::size_t num_clients = 64;
  std::size_t classes_per_client = 5;
  std::size_t examples_per_client = 100;
  std::uint64_t partition_seed = 0;

  RoundConfig round{};
  std::size_t rounds = 300;
  std::size_t eval_every = 25;
  std::size_t checkpoint_every = 0;

  // Method labels: fedss, negonly, negonly-matched, posonly, fedaws, fullsoftmax, centralized.
  // "label:N" pins |S_k| = N for that method instead of crossing it with s_sizes.
  std::vector<std::string> methods{"fedss"};
  std::vector<std::size_t> s_sizes{20};
  std::vector<std::uint64_t> seeds{0, 1, 2};

  std::vector<std::size_t> noise_m{2, 4, 8, 16, 32, 64, 128, kFullComplement};
  std::size_t noise_replicates = 64;
  std::size_t noise_clients = 8;

  std::filesystem::path output_dir = "out";

  void validate() const;  // throws ConfigError
};

ExperimentConfig parse_config(const std::string& json_text);  // throws ConfigError
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

// Dataset, label space and client partition shared by every cell of a plan.
struct Environment {
  Dataset train;
  Dataset test;
  std::vector<ClientDataset> clients;
  std::size_t num_classes() const noexcept { return train.num_classes; }
};

Environment prepare_environment(const ExperimentConfig& cfg);

ModelConfig model_config(const ExperimentConfig& cfg, std::size_t num_classes);
ModelParams initial_model(const ExperimentConfig& cfg, std::size_t num_classes, std::uint64_t seed);

struct Cell {
  Method method = Method::FedSS;
  std::size_t s_size = 0;
  std::uint64_t seed = 0;
  bool matched_negatives = false;
  bool centralized = false;

  // e.g. "fedss_s20_seed0", "negonly-matched_s20_seed1", "centralized_seed2".
  std::string name() const;
  std::string method_label() const;
  // Whether the method's client request depends on |S_k|.
  bool uses_s_size() const noexcept;
};

// Parses a method label into a cell template (seed unset; s_size set only when pinned).
Cell cell_from_label(const std::string& label);  // throws ConfigError

struct ClientDiagnostics {
  double mean_collapse = 0.0;         // mean collapse_score over clients' P_k
  double mean_max_column_share = 0.0; // mean over clients of the confusion max-column share
  double mean_diagonal_share = 0.0;
  double diagonal_dominant_fraction = 0.0;
};

ClientDiagnostics client_diagnostics(const ModelParams& theta, const HeadConfig& head,
                                     std::span<const ClientDataset> clients);

struct CellResult {
  Cell cell;
  std::vector<RoundMetrics> rounds;
  double final_accuracy = 0.0;
  ClientDiagnostics diagnostics;  // of the final global model
  ModelParams final_model;
};

CellResult run_cell(const ExperimentConfig& cfg, const Environment& env, const Cell& cell);

// Per-round CSV (one row per round) and JSONL (one object per round).
std::string rounds_to_csv(const std::vector<RoundMetrics>& rounds);
std::string rounds_to_jsonl(const Cell& cell, const std::vector<RoundMetrics>& rounds);

struct SummaryRow {
  std::string method;
  std::size_t s_size = 0;
  std::size_t runs = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation
  double collapse_mean = 0.0;
  double max_column_share_mean = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<CellResult>& results);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

// Final accuracy as recorded in a per-round CSV (last row with an accuracy).
double final_accuracy_from_csv(const std::filesystem::path& path);

std::vector<Cell> plan_cells(const ExperimentConfig& cfg);

// Runs cells on `workers` threads, writes per-cell CSV/JSONL plus summary.csv
// into cfg.output_dir, and returns results in plan order.
std::vector<CellResult> run_experiment(const ExperimentConfig& cfg, const std::vector<Cell>& cells,
                                       int workers);

// FEDSS_WORKERS, defaulting to 1.
int workers_from_env();

}  // namespace fedss
