// fedss: command-line driver for the federated sampled softmax simulator.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedss/errors.hpp"
#include "fedss/experiment.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fedss;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON config (defaults apply when omitted)");
  cmd->add_option("--seed", c.seed, "Seed override");
  cmd->add_option("--out", c.out, out_help);
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? parse_config("{}") : load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json diagnostics_json(const ClientDiagnostics& d) {
  return {{"mean_collapse", d.mean_collapse},
          {"mean_max_column_share", d.mean_max_column_share},
          {"mean_diagonal_share", d.mean_diagonal_share},
          {"diagonal_dominant_fraction", d.diagonal_dominant_fraction}};
}

// Runs the plan, stores final models and per-cell diagnostics next to the metrics.
void run_plan(ExperimentConfig cfg, const Common& c) {
  if (c.seed) cfg.seeds = {*c.seed};
  cfg.validate();
  const auto results = run_experiment(cfg, plan_cells(cfg), workers_from_env());
  fs::create_directories(cfg.output_dir / "models");
  std::string lines;
  for (const auto& r : results) {
    save_checkpoint(r.final_model, cfg.head, cfg.output_dir / "models" / (r.cell.name() + ".json"));
    const json j = {{"cell", r.cell.name()},
                    {"method", r.cell.method_label()},
                    {"s_size", r.cell.s_size},
                    {"seed", r.cell.seed},
                    {"final_accuracy", r.final_accuracy},
                    {"diagnostics", diagnostics_json(r.diagnostics)}};
    lines += j.dump() + '\n';
  }
  write_text(cfg.output_dir / "diagnostics.jsonl", lines);
  write_text(cfg.output_dir / "config.json", config_to_json(cfg));
  for (const auto& s : summarize(results))
    std::printf("%-16s s=%-4zu runs=%zu acc=%.4f +- %.4f\n", s.method.c_str(), s.s_size, s.runs, s.accuracy_mean,
                s.accuracy_std);
}

int gen_data(const Common& c) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.synthetic.seed = *c.seed;
  const DatasetSplit split = generate_synthetic(cfg.synthetic);
  fs::create_directories(cfg.output_dir);
  write_csv(split.train, cfg.output_dir / "train.csv");
  write_csv(split.test, cfg.output_dir / "test.csv");
  std::printf("wrote %zu train and %zu test rows to %s\n", split.train.size(), split.test.size(),
              cfg.output_dir.string().c_str());
  return 0;
}

int eval(const Common& c, const std::string& checkpoint, const std::string& metric, std::size_t r) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.synthetic.seed = *c.seed;
  const Environment env = prepare_environment(cfg);
  const Checkpoint ck = load_checkpoint(checkpoint);
  require(ck.params.num_classes() == env.num_classes(), "eval: checkpoint class count does not match the data");
  json j = {{"checkpoint", checkpoint}, {"metric", metric}, {"examples", env.test.size()}};
  if (metric == "accuracy") {
    j["value"] = top1_accuracy(ck.params, ck.head, env.test);
  } else if (metric == "map@r") {
    const RetrievalIndex idx = embed_dataset(ck.params.features, env.test);
    j["r"] = r;
    j["value"] = map_at_r(idx, r);
  } else {
    throw ConfigError("eval: unknown metric '" + metric + "'");
  }
  const std::string text = j.dump(2) + '\n';
  if (c.out.empty()) std::cout << text;
  else write_text(c.out, text);
  return 0;
}

int grad_noise(const Common& c, const std::string& checkpoint) {
  ExperimentConfig cfg = load(c);
  const std::uint64_t seed = c.seed.value_or(0);
  const Environment env = prepare_environment(cfg);
  const ModelParams theta =
      checkpoint.empty() ? initial_model(cfg, env.num_classes(), seed) : load_checkpoint(checkpoint).params;
  GradientNoiseConfig nc;
  nc.clients = cfg.noise_clients;
  nc.replicates = cfg.noise_replicates;
  nc.batch_size = cfg.round.batch_size;
  nc.client_lr = cfg.round.client_lr;
  nc.head = cfg.head;
  nc.seed = seed;
  std::string csv = "m,mean,std,replicates\n";
  for (std::size_t m : cfg.noise_m) {
    const NoiseCurvePoint p = gradient_noise(theta, env.train, m, nc);
    csv += (m == kFullComplement ? std::string("pool") : std::to_string(m)) + ',' + format_double(p.noise) + ',' +
           format_double(p.noise_std) + ',' + std::to_string(p.replicates) + '\n';
  }
  if (c.out.empty()) std::cout << csv;
  else write_text(c.out, csv);
  return 0;
}

int cost_report(const Common& c, std::optional<std::size_t> feature_params, std::optional<std::size_t> classes,
                std::optional<std::size_t> s_size, std::optional<std::size_t> dim) {
  const ExperimentConfig cfg = load(c);
  const std::size_t n = classes.value_or(cfg.synthetic.num_classes);
  const ModelConfig mc = model_config(cfg, n);
  std::size_t phi = 0;
  for (std::size_t i = 0; i + 1 < mc.layer_sizes.size(); ++i)
    phi += mc.layer_sizes[i] * mc.layer_sizes[i + 1] + mc.layer_sizes[i + 1];
  const std::size_t d = dim.value_or(mc.layer_sizes.back());
  const CostReport rep = comm_cost_report(feature_params.value_or(phi), d, n, s_size.value_or(cfg.s_sizes.front()),
                                          cfg.rounds, cfg.round.clients_per_round);
  const std::string text = rep.to_json() + '\n';
  if (c.out.empty()) std::cout << text;
  else write_text(c.out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated sampled softmax simulator"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, noise_c, cost_c, ablate_c;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic train/test split as CSV");
  add_common(gen, gen_c, "Output directory");

  auto* train = app.add_subcommand("train", "Run every (method, |S_k|, seed) cell of the plan");
  add_common(train, train_c, "Output directory");

  std::string checkpoint, metric = "accuracy";
  std::size_t r = 10;
  auto* ev = app.add_subcommand("eval", "Evaluate a saved model on the test split");
  add_common(ev, eval_c, "Output JSON file (stdout when omitted)");
  ev->add_option("--checkpoint", checkpoint, "Model JSON written by train")->required();
  ev->add_option("--metric", metric, "accuracy | map@r")->check(CLI::IsMember({"accuracy", "map@r"}));
  ev->add_option("--r", r, "R for map@r");

  std::string noise_ckpt;
  auto* gn = app.add_subcommand("grad-noise", "Gradient-noise curve over the configured m values");
  add_common(gn, noise_c, "Output CSV file (stdout when omitted)");
  gn->add_option("--checkpoint", noise_ckpt, "Model to probe (fresh initialization when omitted)");

  std::optional<std::size_t> feature_params, classes, s_size, dim;
  auto* cr = app.add_subcommand("cost-report", "Per-round communication cost as JSON");
  add_common(cr, cost_c, "Output JSON file (stdout when omitted)");
  cr->add_option("--feature-params", feature_params, "Override |phi|");
  cr->add_option("--classes", classes, "Override n");
  cr->add_option("--s-size", s_size, "Override |S_k|");
  cr->add_option("--dim", dim, "Override the embedding dimension d");

  auto* ab = app.add_subcommand("ablate-positives", "FedSS vs NegOnly vs NegOnly with matched negatives");
  add_common(ab, ablate_c, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(gen_c);
    if (*train) {
      run_plan(load(train_c), train_c);
      return 0;
    }
    if (*ev) return eval(eval_c, checkpoint, metric, r);
    if (*gn) return grad_noise(noise_c, noise_ckpt);
    if (*cr) return cost_report(cost_c, feature_params, classes, s_size, dim);
    if (*ab) {
      ExperimentConfig cfg = load(ablate_c);
      cfg.methods = {"fedss", "negonly", "negonly-matched"};
      run_plan(std::move(cfg), ablate_c);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
