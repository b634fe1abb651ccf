#include "fedss/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "fedss/errors.hpp"

namespace fedss {

void Dataset::push_back(DenseVector x, ClassId y) {
  features.push_back(std::move(x));
  labels.push_back(y);
}

void Dataset::validate() const {
  require(features.size() == labels.size(), "dataset: features/labels length mismatch");
  for (const auto& x : features) require(x.size() == input_dim, "dataset: ragged feature rows");
  for (ClassId y : labels) require(y < num_classes, "dataset: label out of range");
}

void SyntheticDatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (input_dim < 1) throw ConfigError("synthetic: input_dim must be >= 1");
  if (samples_per_class < 1) throw ConfigError("synthetic: samples_per_class must be >= 1");
  if (!(noise_sigma > 0.0)) throw ConfigError("synthetic: noise sigma must be > 0");
  if (!(dispersion > 0.0)) throw ConfigError("synthetic: dispersion must be > 0");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("synthetic: train_fraction must be in (0, 1]");
}

DatasetSplit generate_synthetic(const SyntheticDatasetSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DatasetSplit split;
  for (Dataset* d : {&split.train, &split.test}) {
    d->input_dim = spec.input_dim;
    d->num_classes = spec.num_classes;
  }
  std::vector<DenseVector> centers;
  centers.reserve(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    DenseVector v(spec.input_dim);
    double nrm = 0.0;
    while (!(nrm > 1e-8)) {
      for (double& x : v) x = normal(rng);
      nrm = norm2(v.span());
    }
    for (double& x : v) x *= spec.dispersion / nrm;
    centers.push_back(std::move(v));
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(spec.samples_per_class)));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      DenseVector x(spec.input_dim);
      for (std::size_t i = 0; i < spec.input_dim; ++i) x[i] = centers[c][i] + spec.noise_sigma * normal(rng);
      (s < n_train ? split.train : split.test).push_back(std::move(x), static_cast<ClassId>(c));
    }
  }
  return split;
}

ClassId LabelMapping::lookup(const std::string& token) const {
  const auto it = std::find(tokens.begin(), tokens.end(), token);
  if (it == tokens.end()) throw ContractViolation("unknown label: " + token);
  return static_cast<ClassId>(it - tokens.begin());
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string_view rest(line);
  while (true) {
    const auto comma = rest.find(',');
    out.push_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  const auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e && std::isfinite(out);
}

bool parse_integer(const std::string& s, long long& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

IngestedDataset ingest_csv(const std::filesystem::path& path, const LabelMapping* mapping) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string(), 0);
  std::vector<std::string> raw_labels;
  std::vector<DenseVector> rows;
  std::vector<std::size_t> row_lines;
  std::size_t width = 0;
  std::size_t line_no = 0;
  std::size_t last_row = 0;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() < 2) throw IngestError("expected label and at least one feature", line_no);
    DenseVector x(fields.size() - 1);
    bool numeric = true;
    for (std::size_t i = 1; i < fields.size(); ++i)
      if (!parse_double(fields[i], x[i - 1])) numeric = false;
    if (first) {
      first = false;
      width = fields.size();
      if (!numeric) continue;  // header
    }
    if (fields.size() != width)
      throw IngestError("ragged row: " + std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(width),
                        line_no);
    if (!numeric) throw IngestError("non-numeric feature field", line_no);
    if (fields[0].empty()) throw IngestError("empty label", line_no);
    raw_labels.push_back(fields[0]);
    rows.push_back(std::move(x));
    row_lines.push_back(line_no);
    last_row = line_no;
  }
  if (rows.empty()) throw IngestError("no data rows", line_no);

  IngestedDataset out;
  if (mapping) {
    out.mapping = *mapping;
  } else {
    std::set<std::string> distinct(raw_labels.begin(), raw_labels.end());
    if (distinct.size() < 2) throw IngestError("dataset has a single class", last_row);
    std::vector<std::string> tokens(distinct.begin(), distinct.end());
    const bool all_int = std::all_of(tokens.begin(), tokens.end(), [](const std::string& t) {
      long long v;
      return parse_integer(t, v);
    });
    if (all_int)
      std::sort(tokens.begin(), tokens.end(), [](const std::string& a, const std::string& b) {
        long long x = 0, y = 0;
        parse_integer(a, x);
        parse_integer(b, y);
        return x < y;
      });
    out.mapping.tokens = std::move(tokens);
  }
  std::map<std::string, ClassId> index;
  for (std::size_t i = 0; i < out.mapping.tokens.size(); ++i)
    index.emplace(out.mapping.tokens[i], static_cast<ClassId>(i));
  out.data.input_dim = width - 1;
  out.data.num_classes = out.mapping.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto it = index.find(raw_labels[i]);
    if (it == index.end()) throw IngestError("label not in mapping: " + raw_labels[i], row_lines[i]);
    out.data.push_back(std::move(rows[i]), it->second);
  }
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "label";
  for (std::size_t i = 0; i < data.input_dim; ++i) out << ",feat_" << i;
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    out << data.labels[r];
    for (double v : data.features[r]) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_label_mapping(const LabelMapping& mapping, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "id,label\n";
  for (std::size_t i = 0; i < mapping.size(); ++i) out << i << ',' << mapping.tokens[i] << '\n';
}

LabelMapping read_label_mapping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  LabelMapping m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;
    const auto fields = split_fields(line);
    long long id = 0;
    if (fields.size() != 2 || !parse_integer(fields[0], id) || id != static_cast<long long>(m.size()))
      throw IngestError("malformed label mapping row", line_no);
    m.tokens.push_back(fields[1]);
  }
  return m;
}

}  // namespace fedss
