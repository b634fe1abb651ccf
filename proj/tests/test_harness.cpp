#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fedss/errors.hpp"
#include "fedss/experiment.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fedss;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fedss_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Small enough to run a whole plan in well under a second.
const char* kTinyConfig = R"({
  "model": {"layer_sizes": [8, 16, 6]},
  "data": {"synthetic": {"num_classes": 24, "input_dim": 8, "samples_per_class": 15}},
  "partition": {"num_clients": 8, "classes_per_client": 3, "examples_per_client": 12},
  "training": {"clients_per_round": 4, "rounds": 6, "eval_every": 3, "client_lr": 0.05},
  "plan": {"methods": ["fedss", "negonly", "posonly", "fullsoftmax"], "s_sizes": [6, 10], "seeds": [0, 1]}
})";

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig cfg = parse_config(kTinyConfig);
  cfg.output_dir = out;
  return cfg;
}

int run_cli(const std::string& args) {
  const char* cli = std::getenv("FEDSS_CLI");
  REQUIRE_MESSAGE(cli != nullptr, "FEDSS_CLI is not set");
  const int status = std::system((std::string(cli) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig d = parse_config("{}");
  CHECK(d.layer_sizes == std::vector<std::size_t>{32, 64, 16});
  CHECK(d.head.scale == 20.0);
  CHECK(d.round.batch_size == 32);
  CHECK(d.round.local_epochs == 1);
  CHECK(d.round.client_lr == 0.01);
  CHECK(d.round.server_lr == 1.0);
  CHECK(d.round.server_momentum == 0.9);
  CHECK(d.noise_m.back() == kFullComplement);

  const ExperimentConfig t = parse_config(kTinyConfig);
  CHECK(t.synthetic.num_classes == 24);
  CHECK(t.s_sizes == std::vector<std::size_t>{6, 10});

  CHECK_THROWS_AS(parse_config(R"({"training": {"rounds": 3, "rondus": 4}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"modle": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"training": {"rounds": "many"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"training": {"clients_per_round": 65}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"plan": {"methods": ["fedsss"]}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);

  // Round trip through the writer.
  const ExperimentConfig back = parse_config(config_to_json(t));
  CHECK(config_to_json(back) == config_to_json(t));
}

TEST_CASE("plan cells") {
  const ExperimentConfig cfg = parse_config(kTinyConfig);
  const auto cells = plan_cells(cfg);
  // fedss and negonly vary with |S_k|; posonly and fullsoftmax do not.
  CHECK(cells.size() == (2 * 2 + 2) * 2);
  std::map<std::string, int> names;
  for (const auto& c : cells) ++names[c.name()];
  CHECK(names.size() == cells.size());
  CHECK(names.count("fedss_s6_seed0") == 1);
  CHECK(names.count("negonly_s10_seed1") == 1);
  CHECK(names.count("posonly_seed1") == 1);
  CHECK(cell_from_label("negonly-matched").matched_negatives);
  CHECK(cell_from_label("centralized").centralized);
  CHECK_THROWS_AS(cell_from_label("softmax"), ConfigError);

  // A pinned size overrides the s_sizes cross product.
  ExperimentConfig pinned = cfg;
  pinned.methods = {"fedss", "negonly:6", "negonly-matched:10"};
  std::vector<std::string> got;
  for (const auto& c : plan_cells(pinned)) got.push_back(c.name());
  CHECK(got == std::vector<std::string>{"fedss_s6_seed0", "fedss_s6_seed1", "fedss_s10_seed0", "fedss_s10_seed1",
                                        "negonly_s6_seed0", "negonly_s6_seed1", "negonly-matched_s10_seed0",
                                        "negonly-matched_s10_seed1"});
  CHECK_THROWS_AS(cell_from_label("posonly:5"), ConfigError);
  CHECK_THROWS_AS(cell_from_label("fedss:0"), ConfigError);
  CHECK_THROWS_AS(cell_from_label("fedss:x"), ConfigError);
}

TEST_CASE("synthetic generation counts and determinism") {
  SyntheticDatasetSpec spec;
  spec.samples_per_class = 25;
  const DatasetSplit a = generate_synthetic(spec);
  CHECK(a.train.size() + a.test.size() == 5000);
  CHECK(a.train.size() == 4000);
  CHECK(a.train.num_classes == 200);

  const fs::path dir = scratch("gen");
  write_csv(a.train, dir / "a.csv");
  write_csv(generate_synthetic(spec).train, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  spec.seed = 1;
  write_csv(generate_synthetic(spec).train, dir / "c.csv");
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));

  // Written CSVs ingest back to the same data.
  const IngestedDataset back = ingest_csv(dir / "a.csv");
  CHECK(back.data.labels == a.train.labels);
  CHECK(back.data.features == a.train.features);
}

TEST_CASE("csv ingest errors carry row numbers") {
  const fs::path dir = scratch("ingest");
  auto row_of = [&](const std::string& text) -> std::size_t {
    spit(dir / "x.csv", text);
    try {
      ingest_csv(dir / "x.csv");
    } catch (const IngestError& e) {
      return e.row();
    }
    return 0;
  };
  CHECK(row_of("label,a,b\ncat,1,2\ndog,1\n") == 3);
  CHECK(row_of("label,a,b\ncat,1,2\ndog,1,x\n") == 3);
  CHECK(row_of("label,a,b\ncat,1,2\ndog,1,2\n,3,4\n") == 4);
  CHECK(row_of("label,a,b\ncat,1,nan\n") == 2);
  CHECK(row_of("label,a,b\ncat,1,2\ncat,3,4\n") == 3);  // single class

  spit(dir / "ok.csv", "label,a\nb,1\na,2\nb,3\n");
  const IngestedDataset ok = ingest_csv(dir / "ok.csv");
  CHECK(ok.mapping.tokens == std::vector<std::string>{"a", "b"});
  CHECK(ok.data.labels == std::vector<ClassId>{1, 0, 1});
  spit(dir / "num.csv", "10,1\n9,2\n100,3\n");
  CHECK(ingest_csv(dir / "num.csv").mapping.tokens == std::vector<std::string>{"9", "10", "100"});

  spit(dir / "unseen.csv", "label,a\nc,1\n");
  CHECK_THROWS_AS(ingest_csv(dir / "unseen.csv", &ok.mapping), IngestError);
}

TEST_CASE("csv environment uses the train label mapping for test") {
  const fs::path dir = scratch("csvenv");
  spit(dir / "train.csv", "label,a,b\n"
                          "x,1,0\nx,1.1,0\ny,0,1\ny,0,1.2\nz,-1,0\nz,-1.1,0\nw,0,-1\nw,0,-1.1\n");
  spit(dir / "test.csv", "label,a,b\ny,0,1\nw,0,-1\n");
  const ExperimentConfig cfg = parse_config(R"({"model": {"layer_sizes": [2]},
      "data": {"train_csv": ")" + (dir / "train.csv").string() + R"(", "test_csv": ")" +
                                            (dir / "test.csv").string() + R"("},
      "partition": {"num_clients": 2, "classes_per_client": 2, "examples_per_client": 4},
      "training": {"clients_per_round": 2}})");
  const Environment env = prepare_environment(cfg);
  CHECK(env.num_classes() == 4);
  CHECK(env.test.labels == std::vector<ClassId>{2, 0});  // sorted tokens w, x, y, z
  CHECK(env.clients.size() == 2);
}

TEST_CASE("summary statistics are recomputable from per-round csvs") {
  const fs::path out = scratch("summary");
  const ExperimentConfig cfg = tiny(out);
  const auto results = run_experiment(cfg, plan_cells(cfg), 2);
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> acc;
  for (const auto& r : results) {
    const double from_csv = final_accuracy_from_csv(out / (r.cell.name() + ".csv"));
    CHECK(from_csv == r.final_accuracy);
    acc[{r.cell.method_label(), r.cell.s_size}].push_back(from_csv);
  }
  const auto rows = summarize(results);
  CHECK(rows.size() == acc.size());
  for (const auto& row : rows) {
    const auto& v = acc.at({row.method, row.s_size});
    REQUIRE(v.size() == 2);
    const double mean = (v[0] + v[1]) / 2.0;
    const double sd = std::sqrt((v[0] - mean) * (v[0] - mean) + (v[1] - mean) * (v[1] - mean));
    CHECK(row.runs == 2);
    CHECK(row.accuracy_mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(row.accuracy_std == doctest::Approx(sd).epsilon(1e-12));
  }
  CHECK(slurp(out / "summary.csv") == summary_to_csv(rows));

  // Per-round CSV has one row per round; accuracy only on eval rounds and the last one.
  std::istringstream csv(slurp(out / "fedss_s6_seed0.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "round,participants,train_loss,test_accuracy,mean_s_size,params_down,params_up,labels_up,"
                "bytes_down,bytes_up");
  int rows_seen = 0;
  while (std::getline(csv, line)) ++rows_seen;
  CHECK(rows_seen == 6);
}

TEST_CASE("per-cell csv output is byte identical across runs, threads and workers") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  ExperimentConfig ca = tiny(a), cb = tiny(b);
  ca.round.client_threads = 1;
  cb.round.client_threads = 4;
  run_experiment(ca, plan_cells(ca), 1);
  run_experiment(cb, plan_cells(cb), 3);
  for (const auto& cell : plan_cells(ca)) {
    const std::string name = cell.name();
    CHECK_MESSAGE(slurp(a / (name + ".csv")) == slurp(b / (name + ".csv")), name);
    CHECK(slurp(a / (name + ".jsonl")) == slurp(b / (name + ".jsonl")));
  }
  CHECK(slurp(a / "summary.csv") == slurp(b / "summary.csv"));
}

TEST_CASE("workers come from the environment") {
  ::setenv("FEDSS_WORKERS", "3", 1);
  CHECK(workers_from_env() == 3);
  ::unsetenv("FEDSS_WORKERS");
  CHECK(workers_from_env() == 1);
}

TEST_CASE("cli exit codes and outputs") {
  const fs::path dir = scratch("cli");
  spit(dir / "tiny.json", kTinyConfig);
  spit(dir / "bad.json", R"({"training": {"epochs": 2}})");
  const std::string cfg = "--config " + (dir / "tiny.json").string();

  CHECK(run_cli("") != 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK(run_cli("train --config " + (dir / "bad.json").string()) != 0);
  CHECK(run_cli("train --config " + (dir / "missing.json").string()) != 0);

  CHECK(run_cli("gen-data " + cfg + " --seed 4 --out " + (dir / "data").string()) == 0);
  CHECK(fs::exists(dir / "data" / "train.csv"));
  CHECK(ingest_csv(dir / "data" / "test.csv").data.size() == 24 * 3);

  CHECK(run_cli("train " + cfg + " --seed 1 --out " + (dir / "run").string()) == 0);
  CHECK(fs::exists(dir / "run" / "fedss_s6_seed1.csv"));
  CHECK(fs::exists(dir / "run" / "summary.csv"));
  CHECK(!fs::exists(dir / "run" / "fedss_s6_seed0.csv"));
  const fs::path model = dir / "run" / "models" / "fedss_s6_seed1.json";
  CHECK(fs::exists(model));

  CHECK(run_cli("eval " + cfg + " --checkpoint " + model.string() + " --out " + (dir / "acc.json").string()) == 0);
  const auto acc = nlohmann::json::parse(slurp(dir / "acc.json"));
  CHECK(acc["value"].get<double>() == final_accuracy_from_csv(dir / "run" / "fedss_s6_seed1.csv"));
  CHECK(run_cli("eval " + cfg + " --metric map@r --r 4 --checkpoint " + model.string() + " --out " +
                (dir / "map.json").string()) == 0);
  CHECK(run_cli("eval " + cfg + " --metric map@r --r 500 --checkpoint " + model.string()) != 0);
  CHECK(run_cli("eval " + cfg + " --metric recall --checkpoint " + model.string()) != 0);
  CHECK(run_cli("eval --checkpoint " + model.string()) != 0);  // 200-class defaults vs 24-class model

  spit(dir / "noise.json", R"({"model": {"layer_sizes": [8, 16, 6]},
      "data": {"synthetic": {"num_classes": 40, "input_dim": 8, "samples_per_class": 10}},
      "partition": {"num_clients": 4, "classes_per_client": 5, "examples_per_client": 10},
      "training": {"clients_per_round": 4, "client_lr": 0.1},
      "grad_noise": {"m": [1, 4, "pool"], "replicates": 6, "clients": 3}})");
  CHECK(run_cli("grad-noise --config " + (dir / "noise.json").string() + " --seed 2 --out " +
                (dir / "noise.csv").string()) == 0);
  const std::string noise = slurp(dir / "noise.csv");
  CHECK(noise.rfind("m,mean,std,replicates\n1,", 0) == 0);
  CHECK(noise.find("\npool,0,0,6\n") != std::string::npos);

  CHECK(run_cli("cost-report --feature-params 10000 --classes 10000 --dim 64 --s-size 100 --out " +
                (dir / "cost.json").string()) == 0);
  const auto cost = nlohmann::json::parse(slurp(dir / "cost.json"));
  CHECK(cost["download_params"].get<std::size_t>() == 16400);
  CHECK(run_cli("cost-report --classes 10 --s-size 11") != 0);

  CHECK(run_cli("ablate-positives " + cfg + " --seed 0 --out " + (dir / "ablate").string()) == 0);
  CHECK(fs::exists(dir / "ablate" / "negonly-matched_s10_seed0.csv"));
  CHECK(fs::exists(dir / "ablate" / "diagnostics.jsonl"));
}
