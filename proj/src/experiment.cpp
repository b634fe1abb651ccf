#include "fedss/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "fedss/errors.hpp"
#include "json.hpp"

namespace fedss {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const char* where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& item : obj.items()) {
    const bool ok = std::any_of(known.begin(), known.end(),
                                [&](const char* k) { return item.key() == k; });
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (layer_sizes.empty()) throw ConfigError("model.layer_sizes must not be empty");
  for (std::size_t w : layer_sizes)
    if (w == 0) throw ConfigError("model.layer_sizes entries must be >= 1");
  if (!(head.scale > 0.0)) throw ConfigError("model.scale must be > 0");
  if (train_csv.has_value() != test_csv.has_value())
    throw ConfigError("data.train_csv and data.test_csv must be given together");
  if (!train_csv) {
    synthetic.validate();
    if (synthetic.input_dim != layer_sizes.front())
      throw ConfigError("model.layer_sizes[0] must equal data.synthetic.input_dim");
  }
  if (rounds < 1) throw ConfigError("training.rounds must be >= 1");
  if (round.clients_per_round < 1 || round.clients_per_round > num_clients)
    throw ConfigError("training.clients_per_round must be in [1, partition.num_clients]");
  if (methods.empty() || seeds.empty()) throw ConfigError("plan needs at least one method and seed");
  for (const auto& m : methods) cell_from_label(m);
  if (s_sizes.empty()) throw ConfigError("plan.s_sizes must not be empty");
  if (noise_replicates < 1 || noise_clients < 1)
    throw ConfigError("grad_noise.replicates and grad_noise.clients must be >= 1");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j, {"model", "data", "partition", "training", "plan", "grad_noise", "output_dir"}, "config");
  ExperimentConfig cfg;
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"layer_sizes", "head", "scale", "init_seed_offset"}, "model");
    read(m, "layer_sizes", cfg.layer_sizes);
    std::string head = "cosine";
    read(m, "head", head);
    if (head != "cosine" && head != "dot") throw ConfigError("model.head must be 'cosine' or 'dot'");
    cfg.head.kind = head == "cosine" ? LogitHead::ScaledCosine : LogitHead::DotProduct;
    read(m, "scale", cfg.head.scale);
    read(m, "init_seed_offset", cfg.init_seed_offset);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"synthetic", "train_csv", "test_csv"}, "data");
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      reject_unknown(s, {"num_classes", "input_dim", "samples_per_class", "dispersion", "noise_sigma",
                         "train_fraction", "seed"},
                     "data.synthetic");
      read(s, "num_classes", cfg.synthetic.num_classes);
      read(s, "input_dim", cfg.synthetic.input_dim);
      read(s, "samples_per_class", cfg.synthetic.samples_per_class);
      read(s, "dispersion", cfg.synthetic.dispersion);
      read(s, "noise_sigma", cfg.synthetic.noise_sigma);
      read(s, "train_fraction", cfg.synthetic.train_fraction);
      read(s, "seed", cfg.synthetic.seed);
    }
    if (d.contains("train_csv")) cfg.train_csv = d["train_csv"].get<std::string>();
    if (d.contains("test_csv")) cfg.test_csv = d["test_csv"].get<std::string>();
  }
  if (j.contains("partition")) {
    const auto& p = j["partition"];
    reject_unknown(p, {"num_clients", "classes_per_client", "examples_per_client", "seed"}, "partition");
    read(p, "num_clients", cfg.num_clients);
    read(p, "classes_per_client", cfg.classes_per_client);
    read(p, "examples_per_client", cfg.examples_per_client);
    read(p, "seed", cfg.partition_seed);
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    reject_unknown(t, {"clients_per_round", "local_epochs", "client_lr", "server_lr", "server_momentum",
                       "batch_size", "rounds", "eval_every", "checkpoint_every", "client_threads",
                       "spreadout_weight", "spreadout_margin", "spreadout_before_momentum"},
                   "training");
    read(t, "clients_per_round", cfg.round.clients_per_round);
    read(t, "local_epochs", cfg.round.local_epochs);
    read(t, "client_lr", cfg.round.client_lr);
    read(t, "server_lr", cfg.round.server_lr);
    read(t, "server_momentum", cfg.round.server_momentum);
    read(t, "batch_size", cfg.round.batch_size);
    read(t, "rounds", cfg.rounds);
    read(t, "eval_every", cfg.eval_every);
    read(t, "checkpoint_every", cfg.checkpoint_every);
    read(t, "client_threads", cfg.round.client_threads);
    read(t, "spreadout_weight", cfg.round.spreadout_weight);
    read(t, "spreadout_margin", cfg.round.spreadout_margin);
    read(t, "spreadout_before_momentum", cfg.round.spreadout_before_momentum);
  }
  if (j.contains("plan")) {
    const auto& p = j["plan"];
    reject_unknown(p, {"methods", "s_sizes", "seeds"}, "plan");
    read(p, "methods", cfg.methods);
    read(p, "s_sizes", cfg.s_sizes);
    read(p, "seeds", cfg.seeds);
  }
  if (j.contains("grad_noise")) {
    const auto& g = j["grad_noise"];
    reject_unknown(g, {"m", "replicates", "clients"}, "grad_noise");
    if (g.contains("m")) {
      cfg.noise_m.clear();
      for (const auto& v : g["m"]) {
        if (v.is_string() && v.get<std::string>() == "pool") cfg.noise_m.push_back(kFullComplement);
        else if (v.is_number_unsigned()) cfg.noise_m.push_back(v.get<std::size_t>());
        else throw ConfigError("grad_noise.m entries must be non-negative integers or \"pool\"");
      }
    }
    read(g, "replicates", cfg.noise_replicates);
    read(g, "clients", cfg.noise_clients);
  }
  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json noise_m = json::array();
  for (std::size_t m : cfg.noise_m) {
    if (m == kFullComplement) noise_m.push_back("pool");
    else noise_m.push_back(m);
  }
  json data = {{"synthetic",
                {{"num_classes", cfg.synthetic.num_classes},
                 {"input_dim", cfg.synthetic.input_dim},
                 {"samples_per_class", cfg.synthetic.samples_per_class},
                 {"dispersion", cfg.synthetic.dispersion},
                 {"noise_sigma", cfg.synthetic.noise_sigma},
                 {"train_fraction", cfg.synthetic.train_fraction},
                 {"seed", cfg.synthetic.seed}}}};
  if (cfg.train_csv) data["train_csv"] = cfg.train_csv->string();
  if (cfg.test_csv) data["test_csv"] = cfg.test_csv->string();
  const json j = {
      {"model",
       {{"layer_sizes", cfg.layer_sizes},
        {"head", cfg.head.kind == LogitHead::ScaledCosine ? "cosine" : "dot"},
        {"scale", cfg.head.scale},
        {"init_seed_offset", cfg.init_seed_offset}}},
      {"data", data},
      {"partition",
       {{"num_clients", cfg.num_clients},
        {"classes_per_client", cfg.classes_per_client},
        {"examples_per_client", cfg.examples_per_client},
        {"seed", cfg.partition_seed}}},
      {"training",
       {{"clients_per_round", cfg.round.clients_per_round},
        {"local_epochs", cfg.round.local_epochs},
        {"client_lr", cfg.round.client_lr},
        {"server_lr", cfg.round.server_lr},
        {"server_momentum", cfg.round.server_momentum},
        {"batch_size", cfg.round.batch_size},
        {"rounds", cfg.rounds},
        {"eval_every", cfg.eval_every},
        {"checkpoint_every", cfg.checkpoint_every},
        {"client_threads", cfg.round.client_threads},
        {"spreadout_weight", cfg.round.spreadout_weight},
        {"spreadout_margin", cfg.round.spreadout_margin},
        {"spreadout_before_momentum", cfg.round.spreadout_before_momentum}}},
      {"plan", {{"methods", cfg.methods}, {"s_sizes", cfg.s_sizes}, {"seeds", cfg.seeds}}},
      {"grad_noise",
       {{"m", noise_m}, {"replicates", cfg.noise_replicates}, {"clients", cfg.noise_clients}}},
      {"output_dir", cfg.output_dir.string()},
  };
  return j.dump(2);
}

Environment prepare_environment(const ExperimentConfig& cfg) {
  cfg.validate();
  Environment env;
  if (cfg.train_csv) {
    auto train = ingest_csv(*cfg.train_csv);
    auto test = ingest_csv(*cfg.test_csv, &train.mapping);
    env.train = std::move(train.data);
    env.test = std::move(test.data);
    if (env.train.input_dim != cfg.layer_sizes.front())
      throw ConfigError("model.layer_sizes[0] must equal the dataset feature count");
    if (env.test.input_dim != env.train.input_dim)
      throw ConfigError("train and test CSVs have different feature counts");
  } else {
    auto split = generate_synthetic(cfg.synthetic);
    env.train = std::move(split.train);
    env.test = std::move(split.test);
  }
  env.clients = partition_clients(env.train, cfg.num_clients, cfg.classes_per_client,
                                  cfg.examples_per_client, cfg.partition_seed);
  return env;
}

ModelConfig model_config(const ExperimentConfig& cfg, std::size_t num_classes) {
  return ModelConfig{cfg.layer_sizes, num_classes, cfg.head};
}

ModelParams initial_model(const ExperimentConfig& cfg, std::size_t num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x1417, cfg.init_seed_offset));
  return init_model(model_config(cfg, num_classes), rng);
}

std::string Cell::method_label() const {
  if (centralized) return "centralized";
  if (method == Method::NegOnly && matched_negatives) return "negonly-matched";
  return to_string(method);
}

bool Cell::uses_s_size() const noexcept {
  return !centralized && (method == Method::FedSS || method == Method::NegOnly);
}

std::string Cell::name() const {
  std::string s = method_label();
  if (uses_s_size()) s += "_s" + std::to_string(s_size);
  return s + "_seed" + std::to_string(seed);
}

Cell cell_from_label(const std::string& full_label) {
  Cell c;
  std::string label = full_label;
  std::size_t pinned = 0;
  if (const auto colon = label.find(':'); colon != std::string::npos) {
    const std::string digits = label.substr(colon + 1);
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), pinned);
    if (digits.empty() || res.ec != std::errc() || res.ptr != digits.data() + digits.size() || pinned == 0)
      throw ConfigError("plan: bad |S_k| in method label '" + full_label + "'");
    label.resize(colon);
  }
  if (label == "centralized") {
    c.centralized = true;
    c.method = Method::FullSoftmax;
  } else if (label == "negonly-matched") {
    c.method = Method::NegOnly;
    c.matched_negatives = true;
  } else {
    c.method = parse_method(label);
  }
  if (pinned) {
    if (!c.uses_s_size()) throw ConfigError("plan: '" + label + "' does not take an |S_k|");
    c.s_size = pinned;
  }
  return c;
}

std::vector<Cell> plan_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  std::set<std::string> seen;
  for (const auto& label : cfg.methods) {
    const Cell tmpl = cell_from_label(label);
    const std::vector<std::size_t> sizes = !tmpl.uses_s_size() ? std::vector<std::size_t>{0}
                                           : tmpl.s_size      ? std::vector<std::size_t>{tmpl.s_size}
                                                              : cfg.s_sizes;
    for (std::size_t s : sizes)
      for (std::uint64_t seed : cfg.seeds) {
        Cell c = tmpl;
        c.s_size = s;
        c.seed = seed;
        if (seen.insert(c.name()).second) cells.push_back(c);
      }
  }
  return cells;
}

ClientDiagnostics client_diagnostics(const ModelParams& theta, const HeadConfig& head,
                                     std::span<const ClientDataset> clients) {
  ClientDiagnostics d;
  std::size_t with_pairs = 0;
  for (const auto& c : clients) {
    if (c.positives.size() >= 2) {
      d.mean_collapse += collapse_score(theta.classifier, c.positives);
      ++with_pairs;
    }
    const ConfusionMatrix cm = client_confusion_matrix(theta, head, c);
    d.mean_max_column_share += cm.max_column_share();
    d.mean_diagonal_share += cm.diagonal_share();
    if (cm.diagonal_dominant()) d.diagonal_dominant_fraction += 1.0;
  }
  if (with_pairs) d.mean_collapse /= static_cast<double>(with_pairs);
  if (!clients.empty()) {
    const auto k = static_cast<double>(clients.size());
    d.mean_max_column_share /= k;
    d.mean_diagonal_share /= k;
    d.diagonal_dominant_fraction /= k;
  }
  return d;
}

CellResult run_cell(const ExperimentConfig& cfg, const Environment& env, const Cell& cell) {
  CellResult res;
  res.cell = cell;
  const std::size_t n = env.num_classes();
  ModelParams theta = initial_model(cfg, n, cell.seed);
  if (cell.centralized) {
    CentralizedConfig cc{cfg.rounds, cfg.round.client_lr, cfg.round.batch_size, cell.seed, cfg.head};
    Dataset pooled;
    pooled.input_dim = env.train.input_dim;
    pooled.num_classes = n;
    for (const auto& c : env.clients)
      for (std::size_t i = 0; i < c.num_examples(); ++i) pooled.push_back(c.features[i], c.labels[i]);
    res.final_model = centralized_train(std::move(theta), pooled, cc);
    res.final_accuracy = top1_accuracy(res.final_model, cfg.head, env.test);
    RoundMetrics last;
    last.round = cfg.rounds - 1;
    last.test_accuracy = res.final_accuracy;
    res.rounds.push_back(last);
  } else {
    RoundConfig rc = cfg.round;
    rc.method = cell.method;
    rc.matched_negatives = cell.matched_negatives;
    rc.seed = cell.seed;
    rc.head = cfg.head;
    rc.target_s_size = cell.uses_s_size() ? cell.s_size : 0;
    TrainingOptions opts;
    opts.rounds = cfg.rounds;
    opts.eval_every = cfg.eval_every;
    opts.eval_set = &env.test;
    opts.checkpoint_every = cfg.checkpoint_every;
    opts.checkpoint_dir = cfg.output_dir / "checkpoints" / cell.name();
    auto tr = run_training(std::move(theta), env.clients, rc, opts);
    res.rounds = std::move(tr.rounds);
    res.final_accuracy = res.rounds.back().test_accuracy.value_or(0.0);
    res.final_model = std::move(tr.state.theta);
  }
  res.diagnostics = client_diagnostics(res.final_model, cfg.head, env.clients);
  return res;
}

std::string rounds_to_csv(const std::vector<RoundMetrics>& rounds) {
  std::ostringstream out;
  out << "round,participants,train_loss,test_accuracy,mean_s_size,params_down,params_up,labels_up,"
         "bytes_down,bytes_up\n";
  for (const auto& r : rounds) {
    out << r.round << ',' << r.participants << ',' << format_double(r.train_loss) << ','
        << (r.test_accuracy ? format_double(*r.test_accuracy) : std::string()) << ','
        << format_double(r.mean_s_size) << ',' << r.params_down << ',' << r.params_up << ','
        << r.labels_up << ',' << r.bytes_down << ',' << r.bytes_up << '\n';
  }
  return out.str();
}

std::string rounds_to_jsonl(const Cell& cell, const std::vector<RoundMetrics>& rounds) {
  std::ostringstream out;
  for (const auto& r : rounds) {
    json j = {{"cell", cell.name()},
              {"method", cell.method_label()},
              {"s_size", cell.s_size},
              {"seed", cell.seed},
              {"round", r.round},
              {"participants", r.participants},
              {"train_loss", r.train_loss},
              {"mean_s_size", r.mean_s_size},
              {"params_down", r.params_down},
              {"params_up", r.params_up},
              {"labels_up", r.labels_up},
              {"bytes_down", r.bytes_down},
              {"bytes_up", r.bytes_up}};
    j["test_accuracy"] = r.test_accuracy ? json(*r.test_accuracy) : json(nullptr);
    out << j.dump() << '\n';
  }
  return out.str();
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& results) {
  std::vector<SummaryRow> rows;
  std::map<std::pair<std::string, std::size_t>, std::vector<const CellResult*>> groups;
  for (const auto& r : results) {
    const auto key = std::make_pair(r.cell.method_label(), r.cell.s_size);
    if (!groups.count(key)) rows.push_back(SummaryRow{key.first, key.second});
    groups[key].push_back(&r);
  }
  for (auto& row : rows) {
    const auto& g = groups[{row.method, row.s_size}];
    row.runs = g.size();
    for (const auto* r : g) {
      row.accuracy_mean += r->final_accuracy;
      row.collapse_mean += r->diagnostics.mean_collapse;
      row.max_column_share_mean += r->diagnostics.mean_max_column_share;
    }
    const auto k = static_cast<double>(g.size());
    row.accuracy_mean /= k;
    row.collapse_mean /= k;
    row.max_column_share_mean /= k;
    double var = 0.0;
    for (const auto* r : g) var += (r->final_accuracy - row.accuracy_mean) * (r->final_accuracy - row.accuracy_mean);
    row.accuracy_std = g.size() > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
  }
  return rows;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "method,s_size,runs,accuracy_mean,accuracy_std,collapse_mean,max_column_share_mean\n";
  for (const auto& r : rows)
    out << r.method << ',' << r.s_size << ',' << r.runs << ',' << format_double(r.accuracy_mean) << ','
        << format_double(r.accuracy_std) << ',' << format_double(r.collapse_mean) << ','
        << format_double(r.max_column_share_mean) << '\n';
  return out.str();
}

double final_accuracy_from_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::optional<double> last;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string field;
    for (int i = 0; i < 4 && std::getline(ss, field, ','); ++i) {}
    if (!field.empty()) last = std::stod(field);
  }
  if (!last) throw ConfigError("no accuracy recorded in " + path.string());
  return *last;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<CellResult> run_experiment(const ExperimentConfig& cfg, const std::vector<Cell>& cells,
                                       int workers) {
  const Environment env = prepare_environment(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  std::vector<CellResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        results[i] = run_cell(cfg, env, cells[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int count = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < count; ++w) pool.emplace_back(work);
    work();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& r : results) {
    write_text(cfg.output_dir / (r.cell.name() + ".csv"), rounds_to_csv(r.rounds));
    write_text(cfg.output_dir / (r.cell.name() + ".jsonl"), rounds_to_jsonl(r.cell, r.rounds));
  }
  write_text(cfg.output_dir / "summary.csv", summary_to_csv(summarize(results)));
  return results;
}

int workers_from_env() {
  const char* v = std::getenv("FEDSS_WORKERS");
  if (!v || !*v) return 1;
  const int w = std::atoi(v);
  return w > 0 ? w : 1;
}

}  // namespace fedss
