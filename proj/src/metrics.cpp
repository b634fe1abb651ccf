#include "fedss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedss/errors.hpp"
#include "fedss/kernels.hpp"
#include "json.hpp"

namespace fedss {

namespace {

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

}  // namespace

ClassId predict(const ModelParams& theta, const HeadConfig& head, std::span<const double> x) {
  const DenseVector f = forward_features(theta.features, x);
  const DenseVector o = compute_logits(f.span(), theta.classifier, head);
  return static_cast<ClassId>(argmax_lowest(o.span()));
}

double top1_accuracy(const ModelParams& theta, const HeadConfig& head, const Dataset& data) {
  require(!data.empty(), "top1_accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict(theta, head, data.features[i].span()) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

RetrievalIndex RetrievalIndex::from_rows(const DenseMatrix& rows, std::vector<ClassId> labels) {
  require(rows.rows() == labels.size(), "retrieval index: row/label count mismatch");
  RetrievalIndex idx{DenseMatrix(rows.rows(), rows.cols()), std::move(labels)};
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const DenseVector u = l2_normalize(rows.row(i));
    std::copy(u.begin(), u.end(), idx.embeddings.row(i).begin());
  }
  return idx;
}

void RetrievalIndex::validate() const {
  require(embeddings.rows() == labels.size(), "retrieval index: row/label count mismatch");
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    require(std::abs(norm2(embeddings.row(i)) - 1.0) <= 1e-9, "retrieval index: row not unit norm");
}

RetrievalIndex embed_dataset(const FeatureExtractor& fx, const Dataset& data) {
  DenseMatrix rows(data.size(), fx.embedding_dim());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const DenseVector f = forward_features(fx, data.features[i].span());
    std::copy(f.begin(), f.end(), rows.row(i).begin());
  }
  return RetrievalIndex::from_rows(rows, data.labels);
}

double average_precision_at_r(const std::vector<bool>& correct) {
  require(!correct.empty(), "average_precision_at_r: R must be >= 1");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    if (!correct[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(correct.size());
}

double map_at_r(const RetrievalIndex& index, std::size_t r, bool parallel) {
  require(r >= 1, "map_at_r: R must be >= 1");
  require(index.size() > r, "map_at_r: need more than R items");
  index.validate();
  const DenseMatrix sim = parallel ? kernels::gram_omp(index.embeddings) : kernels::gram_serial(index.embeddings);
  const std::size_t n = index.size();
  std::vector<double> ap(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 8) if (parallel)
  for (std::int64_t qi = 0; qi < count; ++qi) {
    const auto q = static_cast<std::size_t>(qi);
    std::vector<std::size_t> others;
    others.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != q) others.push_back(j);
    const auto row = sim.row(q);
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(r), others.end(),
                      [&](std::size_t a, std::size_t b) {
                        return row[a] != row[b] ? row[a] > row[b] : a < b;
                      });
    std::vector<bool> correct(r);
    for (std::size_t i = 0; i < r; ++i) correct[i] = index.labels[others[i]] == index.labels[q];
    ap[q] = average_precision_at_r(correct);
  }
  double total = 0.0;
  for (double v : ap) total += v;
  return total / static_cast<double>(n);
}

std::size_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

double ConfusionMatrix::max_column_share() const {
  const std::size_t t = total();
  require(t > 0, "confusion matrix: empty");
  std::size_t best = 0;
  for (std::size_t c = 0; c < k(); ++c) {
    std::size_t col = 0;
    for (std::size_t r = 0; r < k(); ++r) col += at(r, c);
    best = std::max(best, col);
  }
  return static_cast<double>(best) / static_cast<double>(t);
}

double ConfusionMatrix::diagonal_share() const {
  const std::size_t t = total();
  require(t > 0, "confusion matrix: empty");
  std::size_t diag = 0;
  for (std::size_t i = 0; i < k(); ++i) diag += at(i, i);
  return static_cast<double>(diag) / static_cast<double>(t);
}

bool ConfusionMatrix::diagonal_dominant() const {
  for (std::size_t r = 0; r < k(); ++r)
    for (std::size_t c = 0; c < k(); ++c)
      if (c != r && at(r, c) >= at(r, r)) return false;
  return true;
}

ConfusionMatrix client_confusion_matrix(const ModelParams& theta, const HeadConfig& head,
                                        const ClientDataset& data) {
  data.validate();
  ConfusionMatrix cm{data.positives, std::vector<std::size_t>(data.positives.size() * data.positives.size())};
  const DenseMatrix w_p = slice_columns(theta.classifier, data.positives);
  for (std::size_t i = 0; i < data.num_examples(); ++i) {
    const DenseVector f = forward_features(theta.features, data.features[i].span());
    const DenseVector o = compute_logits(f.span(), w_p, head);
    const std::size_t pred = argmax_lowest(o.span());
    const auto truth = static_cast<std::size_t>(
        std::lower_bound(data.positives.begin(), data.positives.end(), data.labels[i]) -
        data.positives.begin());
    ++cm.counts[truth * cm.k() + pred];
  }
  return cm;
}

double collapse_score(const DenseMatrix& w, std::span<const ClassId> classes) {
  require(classes.size() >= 2, "collapse_score: need at least two classes");
  validate_labels(classes, w.cols());
  std::vector<DenseVector> unit;
  unit.reserve(classes.size());
  for (ClassId c : classes) unit.push_back(l2_normalize(w.column(c).span()));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < unit.size(); ++i)
    for (std::size_t j = i + 1; j < unit.size(); ++j) {
      sum += dot(unit[i].span(), unit[j].span());
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

NoiseCurvePoint gradient_noise(const ModelParams& theta, const Dataset& data, std::size_t m,
                               const GradientNoiseConfig& cfg) {
  data.validate();
  require(cfg.replicates >= 1 && cfg.clients >= 1, "gradient_noise: need replicates and clients");
  require(cfg.batch_size >= 1 && cfg.batch_size <= data.size(), "gradient_noise: batch larger than data");
  const std::size_t n = theta.num_classes();
  std::vector<double> per_rep(cfg.replicates), l2(cfg.replicates);
  std::vector<std::size_t> client_ids(cfg.clients);
  std::iota(client_ids.begin(), client_ids.end(), 0);
  std::vector<std::size_t> order(data.size());

  for (std::size_t rep = 0; rep < cfg.replicates; ++rep) {
    std::mt19937_64 rng(derive_seed(cfg.seed, rep, 0x401e));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    std::vector<DenseVector> xs;
    std::vector<ClassId> ys;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      xs.push_back(data.features[order[i]]);
      ys.push_back(data.labels[order[i]]);
    }
    const ClientDataset shared = ClientDataset::from_examples(std::move(xs), std::move(ys));
    const std::vector<ClientDataset> clients(cfg.clients, shared);
    const std::size_t pool = n - shared.positives.size();

    RoundConfig rc;
    rc.clients_per_round = cfg.clients;
    rc.local_epochs = 1;
    rc.batch_size = cfg.batch_size;
    rc.client_lr = cfg.client_lr;
    rc.head = cfg.head;
    rc.seed = derive_seed(cfg.seed, rep, 0x5eed);
    rc.target_s_size = 0;

    rc.method = Method::FullSoftmax;
    const auto full = server_aggregate(collect_updates(theta, clients, client_ids, rc, 0), theta);
    rc.method = Method::FedSS;
    rc.num_negatives = m == kFullComplement ? pool : m;
    const auto sampled = server_aggregate(collect_updates(theta, clients, client_ids, rc, 0), theta);

    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t coords = 0;
    auto accumulate = [&](std::span<const double> a, std::span<const double> b) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        abs_sum += std::abs(diff);
        sq_sum += diff * diff;
      }
      coords += a.size();
    };
    for (std::size_t l = 0; l < full.features.layers.size(); ++l) {
      accumulate(full.features.layers[l].weight.span(), sampled.features.layers[l].weight.span());
      accumulate(full.features.layers[l].bias.span(), sampled.features.layers[l].bias.span());
    }
    accumulate(full.classifier.span(), sampled.classifier.span());
    per_rep[rep] = abs_sum / static_cast<double>(coords);
    l2[rep] = std::sqrt(sq_sum);
  }

  NoiseCurvePoint pt;
  pt.m = m;
  pt.replicates = cfg.replicates;
  const auto reps = static_cast<double>(cfg.replicates);
  pt.noise = std::accumulate(per_rep.begin(), per_rep.end(), 0.0) / reps;
  pt.l2_mean = std::accumulate(l2.begin(), l2.end(), 0.0) / reps;
  double var = 0.0;
  for (double v : per_rep) var += (v - pt.noise) * (v - pt.noise);
  pt.noise_std = cfg.replicates > 1 ? std::sqrt(var / (reps - 1.0)) : 0.0;
  return pt;
}

std::string CostReport::to_json() const {
  const nlohmann::json j = {
      {"feature_params", feature_params},
      {"embedding_dim", embedding_dim},
      {"num_classes", num_classes},
      {"s_size", s_size},
      {"rounds", rounds},
      {"clients_per_round", clients_per_round},
      {"full_model_params", full_model_params},
      {"download_params", download_params},
      {"upload_params", upload_params},
      {"upload_label_ids", upload_label_ids},
      {"classifier_fraction", classifier_fraction},
      {"transmitted_fraction", transmitted_fraction},
      {"total_bytes", total_bytes},
  };
  return j.dump(2);
}

CostReport comm_cost_report(std::size_t feature_params, std::size_t embedding_dim,
                            std::size_t num_classes, std::size_t s_size, std::size_t rounds,
                            std::size_t clients_per_round) {
  require(s_size <= num_classes, "cost report: |S_k| exceeds n");
  require(embedding_dim >= 1 && num_classes >= 1, "cost report: need d >= 1 and n >= 1");
  CostReport r;
  r.feature_params = feature_params;
  r.embedding_dim = embedding_dim;
  r.num_classes = num_classes;
  r.s_size = s_size;
  r.rounds = rounds;
  r.clients_per_round = clients_per_round;
  r.full_model_params = feature_params + embedding_dim * num_classes;
  r.download_params = feature_params + embedding_dim * s_size;
  r.upload_params = r.download_params;
  r.upload_label_ids = s_size;
  r.classifier_fraction = static_cast<double>(embedding_dim * num_classes) /
                          static_cast<double>(r.full_model_params);
  r.transmitted_fraction =
      static_cast<double>(r.download_params) / static_cast<double>(r.full_model_params);
  const std::size_t per_client = (r.download_params + r.upload_params) * kBytesPerParameter +
                                 r.upload_label_ids * kBytesPerLabel;
  r.total_bytes = per_client * rounds * clients_per_round;
  return r;
}

std::vector<FractionCurvePoint> classifier_fraction_curve(
    std::size_t backbone_base_params, std::size_t backbone_out_width,
    std::span<const std::size_t> class_counts, std::span<const std::size_t> embedding_dims) {
  std::vector<FractionCurvePoint> out;
  for (std::size_t d : embedding_dims)
    for (std::size_t n : class_counts) {
      const std::size_t phi = backbone_base_params + backbone_out_width * d + d;
      const std::size_t cls = d * n;
      out.push_back({n, d, static_cast<double>(cls) / static_cast<double>(phi + cls)});
    }
  return out;
}

}  // namespace fedss
