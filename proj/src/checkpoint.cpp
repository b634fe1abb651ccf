#include <fstream>
#include <sstream>

#include "fedss/errors.hpp"
#include "fedss/model.hpp"
#include "json.hpp"

namespace fedss {

namespace {

constexpr const char* kFormat = "fedss-checkpoint";
constexpr int kVersion = 1;

nlohmann::json matrix_json(const DenseMatrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

DenseMatrix matrix_from(const nlohmann::json& j) {
  return DenseMatrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                     j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& theta, const HeadConfig& head) {
  theta.validate();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : theta.features.layers)
    layers.push_back({{"weight", matrix_json(layer.weight)}, {"bias", layer.bias.values()}});
  nlohmann::json j = {
      {"format", kFormat},
      {"version", kVersion},
      {"input_dim", theta.features.input_dim},
      {"embedding_dim", theta.features.embedding_dim()},
      {"num_classes", theta.num_classes()},
      {"head", head.kind == LogitHead::ScaledCosine ? "cosine" : "dot"},
      {"scale", head.scale},
      {"layers", std::move(layers)},
      {"classifier", matrix_json(theta.classifier)},
  };
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  if (j.value("format", "") != kFormat) throw ContractViolation("checkpoint: not a fedss checkpoint");
  if (j.value("version", 0) != kVersion) throw ContractViolation("checkpoint: unsupported version");
  try {
    Checkpoint ck;
    ck.params.features.input_dim = j.at("input_dim").get<std::size_t>();
    for (const auto& l : j.at("layers"))
      ck.params.features.layers.push_back(
          {matrix_from(l.at("weight")), DenseVector(l.at("bias").get<std::vector<double>>())});
    ck.params.classifier = matrix_from(j.at("classifier"));
    const auto head = j.at("head").get<std::string>();
    if (head != "cosine" && head != "dot") throw ContractViolation("checkpoint: unknown head " + head);
    ck.head.kind = head == "cosine" ? LogitHead::ScaledCosine : LogitHead::DotProduct;
    ck.head.scale = j.at("scale").get<double>();
    ck.params.validate();
    require(ck.params.features.embedding_dim() == j.at("embedding_dim").get<std::size_t>(),
            "checkpoint: embedding_dim mismatch");
    require(ck.params.num_classes() == j.at("num_classes").get<std::size_t>(),
            "checkpoint: num_classes mismatch");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("checkpoint: malformed field: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& theta, const HeadConfig& head, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(theta, head) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace fedss
