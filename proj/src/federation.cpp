#include "fedss/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "fedss/errors.hpp"
#include "fedss/kernels.hpp"
#include "fedss/metrics.hpp"

namespace fedss {

std::string to_string(Method m) {
  switch (m) {
    case Method::FedSS: return "fedss";
    case Method::NegOnly: return "negonly";
    case Method::PosOnly: return "posonly";
    case Method::FedAwS: return "fedaws";
    case Method::FullSoftmax: return "fullsoftmax";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::FedSS, Method::NegOnly, Method::PosOnly, Method::FedAwS, Method::FullSoftmax})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method: " + name);
}

LossKind loss_kind(Method m) noexcept {
  switch (m) {
    case Method::FedSS: return LossKind::FedSS;
    case Method::NegOnly: return LossKind::NegOnly;
    case Method::PosOnly:
    case Method::FedAwS: return LossKind::PosOnly;
    case Method::FullSoftmax: return LossKind::Full;
  }
  return LossKind::FedSS;
}

ClientDataset ClientDataset::from_examples(std::vector<DenseVector> x, std::vector<ClassId> y) {
  ClientDataset c{std::move(x), std::move(y), {}};
  c.positives = c.labels;
  std::sort(c.positives.begin(), c.positives.end());
  c.positives.erase(std::unique(c.positives.begin(), c.positives.end()), c.positives.end());
  c.validate();
  return c;
}

void ClientDataset::validate() const {
  require(!labels.empty(), "client dataset: no examples");
  require(features.size() == labels.size(), "client dataset: features/labels length mismatch");
  LabelList present = labels;
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  require(present == positives, "client dataset: positives differ from the labels present");
}

void RoundConfig::validate(std::size_t num_classes) const {
  if (clients_per_round < 1) throw ConfigError("clients_per_round must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (!(client_lr >= 0.0)) throw ConfigError("client_lr must be >= 0");
  if (!(server_lr > 0.0)) throw ConfigError("server_lr must be > 0");
  if (!(server_momentum >= 0.0 && server_momentum < 1.0))
    throw ConfigError("server_momentum must be in [0, 1)");
  if (target_s_size > num_classes) throw ConfigError("target_s_size exceeds the number of classes");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (client_threads < 1) throw ConfigError("client_threads must be >= 1");
  if (!(head.scale > 0.0)) throw ConfigError("logit scale must be > 0");
  if (!(spreadout_weight >= 0.0) || !(spreadout_margin > 0.0))
    throw ConfigError("spreadout weight must be >= 0 and margin > 0");
}

ServerState ServerState::initial(ModelParams theta) {
  theta.validate();
  ServerState s;
  s.velocity = ModelDelta{zeros_like(theta.features),
                          DenseMatrix(theta.classifier.rows(), theta.classifier.cols())};
  s.theta = std::move(theta);
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) noexcept {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

std::vector<ClientDataset> partition_clients(const Dataset& data, std::size_t num_clients,
                                             std::size_t classes_per_client,
                                             std::size_t examples_per_client, std::uint64_t seed) {
  data.validate();
  if (num_clients < 1 || classes_per_client < 1)
    throw ConfigError("partition: need at least one client and one class per client");
  if (classes_per_client > data.num_classes)
    throw ConfigError("partition: more classes per client than classes in the dataset");
  if (examples_per_client < classes_per_client)
    throw ConfigError("partition: fewer examples than classes per client");
  if (num_clients * examples_per_client > data.size())
    throw ConfigError("partition: requested more examples than the dataset holds");

  std::mt19937_64 rng(derive_seed(seed, 0x9a27));
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  for (auto& pool : by_class) std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> next(data.num_classes, 0);
  auto remaining = [&](std::size_t c) { return by_class[c].size() - next[c]; };

  const std::size_t base = examples_per_client / classes_per_client;
  const std::size_t extra = examples_per_client % classes_per_client;

  std::vector<ClientDataset> clients;
  clients.reserve(num_clients);
  std::vector<std::size_t> order(data.num_classes);
  for (std::size_t k = 0; k < num_clients; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remaining(a) > remaining(b); });
    std::vector<DenseVector> xs;
    std::vector<ClassId> ys;
    for (std::size_t slot = 0; slot < classes_per_client; ++slot) {
      const std::size_t c = order[slot];
      const std::size_t want = base + (slot < extra ? 1 : 0);
      if (remaining(c) < want)
        throw ConfigError("partition: infeasible, class " + std::to_string(c) +
                          " has too few examples left for client " + std::to_string(k));
      for (std::size_t t = 0; t < want; ++t) {
        const std::size_t i = by_class[c][next[c]++];
        xs.push_back(data.features[i]);
        ys.push_back(data.labels[i]);
      }
    }
    clients.push_back(ClientDataset::from_examples(std::move(xs), std::move(ys)));
  }
  return clients;
}

LabelList sample_negatives(std::span<const ClassId> positives, std::size_t n, std::size_t m,
                           std::mt19937_64& rng) {
  std::vector<bool> is_pos(n, false);
  for (ClassId c : positives) {
    require(c < n, "sample_negatives: positive label out of range");
    is_pos[c] = true;
  }
  LabelList pool;
  pool.reserve(n);
  for (std::size_t c = 0; c < n; ++c)
    if (!is_pos[c]) pool.push_back(static_cast<ClassId>(c));
  if (m > pool.size())
    throw ConfigError("sample_negatives: m = " + std::to_string(m) + " exceeds pool of " +
                      std::to_string(pool.size()));
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  return pool;
}

ClientPlan plan_client_round(const ClientDataset& data, std::size_t num_classes,
                             const RoundConfig& cfg, std::mt19937_64& rng) {
  const auto& pos = data.positives;
  const std::size_t pool = num_classes - pos.size();
  LabelList labels;
  switch (cfg.method) {
    case Method::FullSoftmax:
      labels.resize(num_classes);
      std::iota(labels.begin(), labels.end(), ClassId{0});
      break;
    case Method::PosOnly:
    case Method::FedAwS:
      labels = pos;
      break;
    case Method::FedSS:
    case Method::NegOnly: {
      std::size_t m = 0;
      if (cfg.num_negatives) {
        m = *cfg.num_negatives;
      } else {
        m = cfg.target_s_size > pos.size() ? cfg.target_s_size - pos.size() : 0;
        if (cfg.matched_negatives && !pos.empty()) m += pos.size() - 1;
        m = std::min(m, pool);
      }
      labels = sample_negatives(pos, num_classes, m, rng);
      labels.insert(labels.end(), pos.begin(), pos.end());
      std::sort(labels.begin(), labels.end());
      break;
    }
  }
  std::vector<bool> positive(labels.size());
  std::size_t first_pos = labels.size();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    positive[j] = std::binary_search(pos.begin(), pos.end(), labels[j]);
    if (positive[j] && first_pos == labels.size()) first_pos = j;
  }
  require(first_pos < labels.size(), "plan: client has no positives");
  ClientPlan plan;
  plan.roles = SampledLogitContext::uniform(std::move(positive), pool, first_pos);
  plan.request.labels = std::move(labels);
  plan.loss = loss_kind(cfg.method);
  return plan;
}

SubNetwork serve_request(const ModelParams& theta, const ModelRequest& request) {
  return slice_subnetwork(theta, request.labels);
}

namespace {

void sgd_step(FeatureExtractor& fx, DenseMatrix& w, const ParamGrads& g, double step) {
  for (std::size_t l = 0; l < fx.layers.size(); ++l) {
    kernels::axpy_serial(-step, g.features.layers[l].weight.span(), fx.layers[l].weight.span());
    kernels::axpy_serial(-step, g.features.layers[l].bias.span(), fx.layers[l].bias.span());
  }
  kernels::axpy_serial(-step, g.classifier.span(), w.span());
}

}  // namespace

ClientUpdate client_local_train(const SubNetwork& sub, const ClientDataset& data,
                                const SampledLogitContext& roles, LossKind loss,
                                const LocalTrainConfig& cfg, std::mt19937_64& rng) {
  require(roles.size() == sub.labels.size(), "local train: roles not aligned with sub-network");
  require(sub.classifier.cols() == sub.labels.size(), "local train: classifier/labels mismatch");
  require(cfg.batch_size >= 1 && cfg.epochs >= 1, "local train: batch size and epochs must be >= 1");
  const ClassId max_label = *std::max_element(sub.labels.begin(), sub.labels.end());
  std::vector<std::int64_t> position(static_cast<std::size_t>(max_label) + 1, -1);
  for (std::size_t j = 0; j < sub.labels.size(); ++j) position[sub.labels[j]] = static_cast<std::int64_t>(j);
  std::vector<std::size_t> target_of(data.num_examples());
  for (std::size_t i = 0; i < data.num_examples(); ++i) {
    const ClassId y = data.labels[i];
    if (y > max_label || position[y] < 0)
      throw ProtocolViolation("local train: label " + std::to_string(y) + " not in the sub-network");
    target_of[i] = static_cast<std::size_t>(position[y]);
  }

  SubNetwork model = sub;
  SampledLogitContext ctx = roles;
  std::vector<std::size_t> order(data.num_examples());
  std::iota(order.begin(), order.end(), 0);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ParamGrads grads = zero_grads(model);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        ctx.set_target(target_of[i]);
        const ForwardState st = forward(model, data.features[i].span(), cfg.head);
        const LossOutput out = evaluate_loss(loss, st.output.span(), ctx);
        loss_sum += out.value;
        ++loss_count;
        loss_backward_to_params(model, st, out.grad_logits.span(), cfg.head, grads);
      }
      sgd_step(model.features, model.classifier, grads, cfg.lr / static_cast<double>(end - start));
    }
  }

  ClientUpdate up;
  up.labels = sub.labels;
  up.num_examples = data.num_examples();
  up.transmitted_parameter_count = parameter_count(sub);
  up.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
  up.delta_features = std::move(model.features);
  for (std::size_t l = 0; l < sub.features.layers.size(); ++l) {
    kernels::axpy_serial(-1.0, sub.features.layers[l].weight.span(), up.delta_features.layers[l].weight.span());
    kernels::axpy_serial(-1.0, sub.features.layers[l].bias.span(), up.delta_features.layers[l].bias.span());
  }
  up.delta_classifier = std::move(model.classifier);
  kernels::axpy_serial(-1.0, sub.classifier.span(), up.delta_classifier.span());
  return up;
}

std::vector<ClientUpdate> collect_updates(const ModelParams& theta,
                                          std::span<const ClientDataset> clients,
                                          std::span<const std::size_t> client_ids,
                                          const RoundConfig& cfg, std::size_t round) {
  const std::size_t n = theta.num_classes();
  const LocalTrainConfig local{cfg.local_epochs, cfg.client_lr, cfg.batch_size, cfg.head};
  std::vector<ClientUpdate> updates(client_ids.size());
  std::vector<std::exception_ptr> errors(client_ids.size());
  const auto count = static_cast<std::int64_t>(client_ids.size());
#pragma omp parallel for num_threads(cfg.client_threads) schedule(dynamic, 1)
  for (std::int64_t s = 0; s < count; ++s) {
    const auto slot = static_cast<std::size_t>(s);
    try {
      const std::size_t id = client_ids[slot];
      require(id < clients.size(), "collect_updates: client id out of range");
      std::mt19937_64 sample_rng(derive_seed(cfg.seed, round, id, 1));
      std::mt19937_64 batch_rng(derive_seed(cfg.seed, round, id, 2));
      const ClientPlan plan = plan_client_round(clients[id], n, cfg, sample_rng);
      const SubNetwork sub = serve_request(theta, plan.request);
      updates[slot] = client_local_train(sub, clients[id], plan.roles, plan.loss, local, batch_rng);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return updates;
}

ModelDelta server_aggregate(std::span<const ClientUpdate> updates, const ModelParams& shape) {
  require(!updates.empty(), "server_aggregate: no updates");
  const std::size_t n = shape.num_classes();
  ModelDelta agg{zeros_like(shape.features), DenseMatrix(shape.classifier.rows(), n)};
  std::size_t total = 0;
  for (const auto& u : updates) total += u.num_examples;
  require(total > 0, "server_aggregate: zero total examples");
  for (const auto& u : updates) {
    require(u.delta_features.layers.size() == agg.features.layers.size(),
            "server_aggregate: feature delta shape mismatch");
    require(u.delta_classifier.rows() == agg.classifier.rows() &&
                u.delta_classifier.cols() == u.labels.size(),
            "server_aggregate: classifier delta shape mismatch");
    validate_labels(u.labels, n);
    const double w = static_cast<double>(u.num_examples) / static_cast<double>(total);
    for (std::size_t l = 0; l < agg.features.layers.size(); ++l) {
      kernels::axpy_serial(w, u.delta_features.layers[l].weight.span(), agg.features.layers[l].weight.span());
      kernels::axpy_serial(w, u.delta_features.layers[l].bias.span(), agg.features.layers[l].bias.span());
    }
    for (std::size_t r = 0; r < agg.classifier.rows(); ++r) {
      const auto src = u.delta_classifier.row(r);
      auto dst = agg.classifier.row(r);
      for (std::size_t j = 0; j < u.labels.size(); ++j) dst[u.labels[j]] += w * src[j];
    }
  }
  return agg;
}

void server_apply(ServerState& state, const ModelDelta& g, double alpha, double mu) {
  auto& v = state.velocity;
  auto& theta = state.theta;
  require(g.classifier.rows() == theta.classifier.rows() && g.classifier.cols() == theta.classifier.cols(),
          "server_apply: delta shape mismatch");
  auto step = [&](std::span<double> vel, std::span<const double> grad, std::span<double> param) {
    require(vel.size() == grad.size() && grad.size() == param.size(), "server_apply: shape mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
      vel[i] = mu * vel[i] - grad[i];
      param[i] -= alpha * vel[i];
    }
  };
  for (std::size_t l = 0; l < theta.features.layers.size(); ++l) {
    step(v.features.layers[l].weight.span(), g.features.layers[l].weight.span(),
         theta.features.layers[l].weight.span());
    step(v.features.layers[l].bias.span(), g.features.layers[l].bias.span(),
         theta.features.layers[l].bias.span());
  }
  step(v.classifier.span(), g.classifier.span(), theta.classifier.span());
}

double spreadout_value(const DenseMatrix& w, double margin) {
  double total = 0.0;
  for (std::size_t i = 0; i < w.cols(); ++i)
    for (std::size_t j = i + 1; j < w.cols(); ++j) {
      double d2 = 0.0;
      for (std::size_t r = 0; r < w.rows(); ++r) {
        const double diff = w(r, i) - w(r, j);
        d2 += diff * diff;
      }
      const double h = std::max(0.0, margin - std::sqrt(d2));
      total += 2.0 * h * h;  // ordered pairs (i, j) and (j, i)
    }
  return total;
}

DenseMatrix fedaws_spreadout_step(const DenseMatrix& w, double weight, double margin) {
  const std::size_t d = w.rows();
  const std::size_t n = w.cols();
  DenseMatrix grad(d, n);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t r = 0; r < d; ++r) {
        diff[r] = w(r, i) - w(r, j);
        d2 += diff[r] * diff[r];
      }
      const double dist = std::sqrt(d2);
      const double h = margin - dist;
      if (h <= 0.0) continue;
      // d/dw_i of 2 h^2 is -4 h (w_i - w_j) / dist. Coincident columns use a
      // fixed unit direction so they still separate.
      for (std::size_t r = 0; r < d; ++r) {
        const double u = dist > kNormFloor ? diff[r] / dist : (r == 0 ? 1.0 : 0.0);
        grad(r, i) -= 4.0 * h * u;
        grad(r, j) += 4.0 * h * u;
      }
    }
  DenseMatrix out = w;
  kernels::axpy_serial(-weight, grad.span(), out.span());
  return out;
}

std::vector<std::size_t> select_clients(std::size_t num_clients, std::size_t k, std::uint64_t seed,
                                        std::size_t round) {
  if (k > num_clients) throw ConfigError("clients_per_round exceeds the number of clients");
  std::mt19937_64 rng(derive_seed(seed, round, 0x5e1ec7));
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  return ids;
}

RoundMetrics run_round(ServerState& state, std::span<const ClientDataset> clients,
                       const RoundConfig& cfg) {
  cfg.validate(state.theta.num_classes());
  const auto ids = select_clients(clients.size(), cfg.clients_per_round, cfg.seed, state.round);
  const auto updates = collect_updates(state.theta, clients, ids, cfg, state.round);
  const ModelDelta g = server_aggregate(updates, state.theta);

  const bool spreadout = cfg.method == Method::FedAwS && cfg.spreadout_weight > 0.0;
  if (spreadout && cfg.spreadout_before_momentum)
    state.theta.classifier =
        fedaws_spreadout_step(state.theta.classifier, cfg.spreadout_weight, cfg.spreadout_margin);
  server_apply(state, g, cfg.server_lr, cfg.server_momentum);
  if (spreadout && !cfg.spreadout_before_momentum)
    state.theta.classifier =
        fedaws_spreadout_step(state.theta.classifier, cfg.spreadout_weight, cfg.spreadout_margin);

  RoundMetrics m;
  m.round = state.round;
  m.participants = updates.size();
  std::size_t examples = 0;
  double s_total = 0.0;
  for (const auto& u : updates) {
    m.train_loss += u.mean_loss * static_cast<double>(u.num_examples);
    examples += u.num_examples;
    m.params_down += u.transmitted_parameter_count;
    m.params_up += u.transmitted_parameter_count;
    m.labels_up += u.labels.size();
    s_total += static_cast<double>(u.labels.size());
  }
  m.train_loss /= static_cast<double>(examples);
  m.mean_s_size = s_total / static_cast<double>(updates.size());
  m.bytes_down = m.params_down * kBytesPerParameter;
  m.bytes_up = m.params_up * kBytesPerParameter + m.labels_up * kBytesPerLabel;
  ++state.round;
  return m;
}

TrainingResult run_training(ModelParams initial, std::span<const ClientDataset> clients,
                            const RoundConfig& cfg, const TrainingOptions& opts) {
  TrainingResult res{ServerState::initial(std::move(initial)), {}};
  res.rounds.reserve(opts.rounds);
  if (opts.checkpoint_every > 0) std::filesystem::create_directories(opts.checkpoint_dir);
  for (std::size_t r = 0; r < opts.rounds; ++r) {
    RoundMetrics m = run_round(res.state, clients, cfg);
    const bool last = r + 1 == opts.rounds;
    const bool due = opts.eval_every > 0 && (r + 1) % opts.eval_every == 0;
    if (opts.eval_set && (last || due)) m.test_accuracy = top1_accuracy(res.state.theta, cfg.head, *opts.eval_set);
    if (opts.checkpoint_every > 0 && ((r + 1) % opts.checkpoint_every == 0 || last)) {
      const std::string name = "round_" + std::to_string(r + 1) + ".json";
      save_checkpoint(res.state.theta, cfg.head, opts.checkpoint_dir / name);
    }
    res.rounds.push_back(m);
  }
  return res;
}

ModelParams centralized_train(ModelParams theta, const Dataset& data, const CentralizedConfig& cfg) {
  data.validate();
  theta.validate();
  require(!data.empty(), "centralized_train: empty dataset");
  require(cfg.batch_size >= 1, "centralized_train: batch size must be >= 1");
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xce47));
  LabelList all(theta.num_classes());
  std::iota(all.begin(), all.end(), ClassId{0});
  SubNetwork model{std::move(theta.features), std::move(theta.classifier), all};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ParamGrads grads = zero_grads(model);
    std::size_t count = 0;
    for (; count < cfg.batch_size; ++count) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      const ForwardState st = forward(model, data.features[i].span(), cfg.head);
      const LossOutput out = full_softmax_loss(st.output.span(), data.labels[i]);
      loss_backward_to_params(model, st, out.grad_logits.span(), cfg.head, grads);
    }
    sgd_step(model.features, model.classifier, grads, cfg.lr / static_cast<double>(count));
  }
  return ModelParams{std::move(model.features), std::move(model.classifier)};
}

}  // namespace fedss
