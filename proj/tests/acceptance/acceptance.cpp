// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [config.json]   (defaults to configs/acceptance.json in the source tree)
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "fedss/experiment.hpp"
#include "fedss/kernels.hpp"
#include "fedavg_oracle.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace fedss;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

int failures = 0;

void report(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (sec > budget_s) {
    o.pass = false;
    o.detail += fmt(" [over budget: %.1fs > %.0fs]", sec, budget_s);
  }
  if (!o.pass) ++failures;
  std::printf("%s  %2d  %-34s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), sec, o.detail.c_str());
  std::fflush(stdout);
}

SampledLogitContext random_context(std::size_t k, std::size_t num_pos, std::size_t pool, std::mt19937_64& rng) {
  std::vector<bool> pos(k, false);
  std::fill_n(pos.begin(), num_pos, true);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < k; ++j)
    if (pos[j]) idx.push_back(j);
  return SampledLogitContext::uniform(pos, pool, idx[rng() % idx.size()]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome rewritten_equivalence() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng() % 40;
    const std::size_t num_pos = 1 + rng() % k;
    const auto ctx = random_context(k, num_pos, k - num_pos + rng() % 200, rng);
    std::vector<double> o(k);
    for (double& v : o) v = g(rng);
    const double a = fedss_loss(o, ctx).value;
    const double b = fedss_loss_rewritten(o, ctx);
    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
  }
  return {worst < 1e-9, fmt("max rel diff %.2e over 1000 instances", worst)};
}

Outcome exact_reduction() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 5 + rng() % 60;
    const std::size_t num_pos = 1 + rng() % std::min<std::size_t>(n - 1, 8);
    const auto ctx = random_context(n, num_pos, n - num_pos, rng);
    const auto o = testutil::random_vec(n, rng);
    const LossOutput a = fedss_loss(o, ctx);
    const LossOutput b = full_softmax_loss(o, ctx.target());
    worst = std::max(worst, std::abs(a.value - b.value));
    for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(a.grad_logits[j] - b.grad_logits[j]));
  }

  SyntheticDatasetSpec spec;
  spec.num_classes = 20;
  spec.input_dim = 6;
  spec.samples_per_class = 25;
  spec.noise_sigma = 0.2;
  spec.seed = 42;
  const DatasetSplit d = generate_synthetic(spec);
  const auto clients = partition_clients(d.train, 4, 3, 30, 0);
  const ModelParams theta0 = testutil::random_model({6, 8, 4}, 20, 5);
  RoundConfig cfg;
  cfg.method = Method::FullSoftmax;
  cfg.clients_per_round = 4;
  cfg.client_lr = 0.1;
  cfg.local_epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 11;
  TrainingOptions opts;
  opts.rounds = 10;
  const ModelParams run = run_training(theta0, clients, cfg, opts).state.theta;
  const ModelParams oracle = testutil::fedavg_oracle(theta0, clients, cfg, 10);
  double traj = 0.0;
  const auto pa = flatten(run.features), pb = flatten(oracle.features);
  for (std::size_t k = 0; k < pa.size(); ++k) traj = std::max(traj, std::abs(pa[k] - pb[k]));
  for (std::size_t k = 0; k < run.classifier.size(); ++k)
    traj = std::max(traj, std::abs(run.classifier.span()[k] - oracle.classifier.span()[k]));
  return {worst < 1e-12 && traj < 1e-9, fmt("loss/grad diff %.2e, 10-round trajectory diff %.2e", worst, traj)};
}

Outcome gradient_correctness() {
  std::mt19937_64 rng(3);
  const HeadConfig head{LogitHead::ScaledCosine, 20.0};
  const LossKind kinds[] = {LossKind::Full, LossKind::FedSS, LossKind::NegOnly, LossKind::PosOnly};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const LossKind loss = kinds[i % 4];
    const std::size_t n = 12 + rng() % 20;
    const ModelParams theta = testutil::random_model({7, 12, 6}, n, 1000 + static_cast<std::uint64_t>(i));
    LabelList labels(n);
    std::iota(labels.begin(), labels.end(), ClassId{0});
    std::shuffle(labels.begin(), labels.end(), rng);
    labels.resize(4 + rng() % 6);
    const SubNetwork sub = slice_subnetwork(theta, labels);
    const auto ctx = random_context(labels.size(), 1 + rng() % 3, n - 3, rng);
    const auto x = testutil::random_vec(7, rng);
    const ForwardState st = forward(sub, x, head);
    const LossOutput l = evaluate_loss(loss, st.output.span(), ctx);
    ParamGrads g = zero_grads(sub);
    loss_backward_to_params(sub, st, l.grad_logits.span(), head, g);
    SubNetwork probe = sub;
    auto f = [&](std::span<const double> flat) {
      testutil::unpack(flat, probe.features, probe.classifier);
      return evaluate_loss(loss, forward(probe, x, head).output.span(), ctx).value;
    };
    worst = std::max(worst, gradient_check(f, testutil::pack(sub.features, sub.classifier),
                                           testutil::pack(g.features, g.classifier)));
  }
  return {worst < 1e-4, fmt("max rel err %.2e over 100 instances", worst)};
}

Outcome noise_curve(const ExperimentConfig& cfg, const Environment& env) {
  GradientNoiseConfig nc;
  nc.clients = cfg.noise_clients;
  nc.replicates = 64;
  nc.batch_size = cfg.round.batch_size;
  nc.client_lr = cfg.round.client_lr;
  nc.head = cfg.head;
  nc.seed = 0;
  const ModelParams theta = initial_model(cfg, env.num_classes(), 0);
  std::vector<NoiseCurvePoint> pts;
  std::string curve;
  for (std::size_t m : {2, 4, 8, 16, 32, 64, 128}) pts.push_back(gradient_noise(theta, env.train, m, nc));
  pts.push_back(gradient_noise(theta, env.train, kFullComplement, nc));
  for (const auto& p : pts) curve += fmt("%.3g ", p.noise);
  int inversions = 0;
  bool within = true;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].noise > pts[i - 1].noise) {
      ++inversions;
      within = within && pts[i].noise - pts[i - 1].noise <= std::max(pts[i].noise_std, pts[i - 1].noise_std);
    }
  const bool zero = pts.back().noise == 0.0;
  return {inversions <= 1 && within && zero,
          fmt("noise(m=2..128,pool) = %s; inversions %d; noise(pool) %s", curve.c_str(), inversions,
              zero ? "== 0" : "!= 0")};
}

struct Stat {
  double mean = 0.0, sd = 0.0, collapse = 0.0, maxcol = 0.0, diagdom = 0.0;
  std::size_t runs = 0;
};

std::map<std::string, Stat> tabulate(const std::vector<CellResult>& results) {
  std::map<std::string, std::vector<const CellResult*>> groups;
  for (const auto& r : results) {
    std::string key = r.cell.method_label();
    if (r.cell.uses_s_size()) key += "_s" + std::to_string(r.cell.s_size);
    groups[key].push_back(&r);
  }
  std::map<std::string, Stat> out;
  for (const auto& [key, rs] : groups) {
    Stat s;
    s.runs = rs.size();
    for (const auto* r : rs) {
      s.mean += r->final_accuracy;
      s.collapse += r->diagnostics.mean_collapse;
      s.maxcol += r->diagnostics.mean_max_column_share;
      s.diagdom += r->diagnostics.diagonal_dominant_fraction;
    }
    const double k = static_cast<double>(rs.size());
    s.mean /= k;
    s.collapse /= k;
    s.maxcol /= k;
    s.diagdom /= k;
    for (const auto* r : rs) s.sd += (r->final_accuracy - s.mean) * (r->final_accuracy - s.mean);
    s.sd = rs.size() > 1 ? std::sqrt(s.sd / (k - 1.0)) : 0.0;
    out[key] = s;
  }
  return out;
}

double combined_sd(const Stat& a, const Stat& b) { return std::sqrt(a.sd * a.sd + b.sd * b.sd); }

Outcome method_ordering(const std::map<std::string, Stat>& t) {
  const Stat& fedss = t.at("fedss_s20");
  const Stat& full = t.at("fullsoftmax");
  const Stat& pos = t.at("posonly");
  const Stat& neg = t.at("negonly_s20");
  const bool a = fedss.mean >= full.mean - 0.02;
  const bool b = fedss.mean - pos.mean > combined_sd(fedss, pos);
  const bool c = pos.mean - neg.mean > combined_sd(pos, neg);
  return {a && b && c,
          fmt("FedSS %.4f+-%.4f, Full %.4f+-%.4f, PosOnly %.4f+-%.4f, NegOnly %.4f+-%.4f "
              "[FedSS>=Full-2pt %s, FedSS>PosOnly %s, PosOnly>NegOnly %s]",
              fedss.mean, fedss.sd, full.mean, full.sd, pos.mean, pos.sd, neg.mean, neg.sd, a ? "ok" : "no",
              b ? "ok" : "no", c ? "ok" : "no")};
}

Outcome s_monotone(const std::map<std::string, Stat>& t) {
  bool ok = true;
  std::string line;
  const Stat* prev = nullptr;
  for (int s : {8, 12, 20, 40}) {
    const Stat& cur = t.at("fedss_s" + std::to_string(s));
    line += fmt("|S|=%d: %.4f+-%.4f  ", s, cur.mean, cur.sd);
    if (prev && cur.mean < prev->mean - combined_sd(*prev, cur)) ok = false;
    prev = &cur;
  }
  return {ok, line};
}

Outcome collapse(const std::map<std::string, Stat>& t) {
  const Stat& fedss = t.at("fedss_s20");
  const Stat& neg = t.at("negonly_s20");
  const double gap = neg.collapse - fedss.collapse;
  const bool a = gap >= 0.3;
  const bool b = neg.maxcol >= 0.6;
  const bool c = fedss.diagdom == 1.0;
  return {a && b && c,
          fmt("collapse NegOnly %.3f vs FedSS %.3f (gap %.3f, need 0.3); NegOnly max-column share %.3f "
              "(need 0.6); FedSS diagonal-dominant fraction %.3f (need 1)",
              neg.collapse, fedss.collapse, gap, neg.maxcol, fedss.diagdom)};
}

Outcome positive_inclusion(const std::map<std::string, Stat>& t) {
  const Stat& fedss = t.at("fedss_s20");
  const Stat& matched = t.at("negonly-matched_s20");
  const double gap = fedss.mean - matched.mean;
  return {gap >= 0.05, fmt("FedSS %.4f vs NegOnly-matched %.4f (gap %.1f pts, need 5)", fedss.mean, matched.mean,
                           100.0 * gap)};
}

Outcome communication() {
  // SOP-like setup: classifier share 16%, |S_k| / n = 100 / 11318.
  const std::size_t n = 11318, d = 64;
  const auto phi = static_cast<std::size_t>(std::llround(static_cast<double>(d * n) * 0.84 / 0.16));
  const CostReport r = comm_cost_report(phi, d, n, 100, 1, 1);
  const bool a = std::abs(100.0 * r.transmitted_fraction - 84.0) <= 0.5;
  const bool b = r.download_params == phi + d * 100 && comm_cost_report(10000, 64, 10000, 100, 1, 1).download_params == 16400;
  const std::vector<std::size_t> ns{100, 1000, 10000, 100000}, ds{16, 64, 256, 1280};
  const auto curve = classifier_fraction_curve(3'000'000, 960, ns, ds);
  bool c = true;
  for (std::size_t di = 0; di < ds.size(); ++di)
    for (std::size_t ni = 0; ni < ns.size(); ++ni) {
      const double f = curve[di * ns.size() + ni].classifier_fraction;
      if (ni > 0 && !(f > curve[di * ns.size() + ni - 1].classifier_fraction)) c = false;
      if (di > 0 && !(f > curve[(di - 1) * ns.size() + ni].classifier_fraction)) c = false;
    }
  return {a && b && c, fmt("classifier share %.2f%%, transmitted %.2f%% of the model; download exact %s; "
                           "fraction curve monotone %s",
                           100.0 * r.classifier_fraction, 100.0 * r.transmitted_fraction, b ? "yes" : "no",
                           c ? "yes" : "no")};
}

Outcome map_oracle() {
  std::mt19937_64 rng(10);
  const DenseMatrix rows = testutil::random_matrix(200, 16, rng);
  std::vector<ClassId> labels(200);
  for (auto& l : labels) l = static_cast<ClassId>(rng() % 12);
  const RetrievalIndex idx = RetrievalIndex::from_rows(rows, labels);
  bool exact = true;
  for (std::size_t r : {1, 5, 10, 30}) {
    double total = 0.0;
    for (std::size_t q = 0; q < idx.size(); ++q) {
      std::vector<std::pair<double, std::size_t>> cand;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        if (j == q) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < idx.embeddings.cols(); ++c) s += idx.embeddings(q, c) * idx.embeddings(j, c);
        cand.emplace_back(s, j);
      }
      std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      double hits = 0.0, ap = 0.0;
      for (std::size_t i = 0; i < r; ++i)
        if (idx.labels[cand[i].second] == idx.labels[q]) ap += ++hits / static_cast<double>(i + 1);
      total += ap / static_cast<double>(r);
    }
    const double brute = total / static_cast<double>(idx.size());
    exact = exact && map_at_r(idx, r, true) == brute && map_at_r(idx, r, false) == brute;
  }
  const double hand = average_precision_at_r({true, false, true});
  const bool five_ninths = std::abs(hand - 5.0 / 9.0) < 1e-15;
  return {exact && five_ninths, fmt("brute force exact %s; hand case %.6f", exact ? "yes" : "no", hand)};
}

Outcome determinism(const ExperimentConfig& base, const Environment& env, const Cell& first) {
  std::string csv[2];
  const int threads[2] = {1, 8};
  for (int i = 0; i < 2; ++i) {
    ExperimentConfig cfg = base;
    cfg.round.client_threads = threads[i];
    cfg.output_dir = base.output_dir / ("determinism_" + std::to_string(threads[i]));
    csv[i] = rounds_to_csv(run_cell(cfg, env, first).rounds);
  }
  const fs::path written = base.output_dir / (first.name() + ".csv");
  const bool same_as_plan = !fs::exists(written) || slurp(written) == csv[0];
  return {csv[0] == csv[1] && same_as_plan,
          fmt("%s: %zu bytes, threads 1 vs 8 %s, matches plan run %s", first.name().c_str(), csv[0].size(),
              csv[0] == csv[1] ? "identical" : "DIFFER", same_as_plan ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config_path = argc > 1 ? fs::path(argv[1]) : fs::path(FEDSS_ACCEPTANCE_CONFIG);
  ExperimentConfig cfg = load_config(config_path);
  if (argc > 2) cfg.output_dir = argv[2];
  const int workers = workers_from_env();
  std::printf("acceptance config %s, %d worker(s), %d OpenMP thread(s)\n", config_path.string().c_str(), workers,
              kernels::max_threads());
  const Environment env = prepare_environment(cfg);

  report(1, "loss rewrite equivalence", 1.0, rewritten_equivalence);
  report(2, "exact reduction to FullSoftmax", 60.0, exact_reduction);
  report(3, "end-to-end gradients", 60.0, gradient_correctness);
  report(4, "gradient-noise curve", 300.0, [&] { return noise_curve(cfg, env); });

  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = plan_cells(cfg);
  std::vector<CellResult> results;
  std::string plan_error;
  try {
    results = run_experiment(cfg, cells, workers);
  } catch (const std::exception& e) {
    plan_error = e.what();
  }
  const double plan_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("      plan: %zu cells in %.1fs (budget 900s shared by 5-8)\n", cells.size(), plan_s);
  std::map<std::string, Stat> table;
  if (plan_error.empty()) table = tabulate(results);
  for (const auto& [key, s] : table)
    std::printf("      %-22s acc %.4f +- %.4f  collapse %.3f  max-col %.3f  diag-dom %.2f  (%zu runs)\n",
                key.c_str(), s.mean, s.sd, s.collapse, s.maxcol, s.diagdom, s.runs);
  auto from_plan = [&](auto fn) {
    return [&, fn] {
      if (!plan_error.empty()) return Outcome{false, "plan failed: " + plan_error};
      Outcome o = fn(table);
      if (plan_s > 900.0) {
        o.pass = false;
        o.detail += fmt(" [plan over budget: %.0fs > 900s]", plan_s);
      }
      return o;
    };
  };
  report(5, "method ordering", 900.0, from_plan(method_ordering));
  report(6, "|S_k| monotonicity", 900.0, from_plan(s_monotone));
  report(7, "collapse diagnostic", 900.0, from_plan(collapse));
  report(8, "positive-inclusion ablation", 900.0, from_plan(positive_inclusion));
  report(9, "communication accounting", 1.0, communication);
  report(10, "MAP@R oracle", 1.0, map_oracle);
  report(11, "determinism", 300.0, [&] { return determinism(cfg, env, cells.front()); });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
