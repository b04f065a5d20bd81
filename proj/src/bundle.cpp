// SPDX-License-Identifier: Apache-2.0
#include "rxads/bundle.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include "rxads/error.hpp"

namespace rxads {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw NonFiniteLoss("bundle: refusing to serialize non-finite parameters");
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw FormatError("bundle: matrix data does not match its shape");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vector_from_json(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

json content_to_json(const ModelBundle& b) {
  std::vector<bool> degenerate = b.scaler.degenerate;
  return {
      {"schema", features::schema_to_json(b.schema)},
      {"scaler", {{"min", to_std(b.scaler.min)}, {"max", to_std(b.scaler.max)}, {"degenerate", degenerate}}},
      {"model", model_to_json(b.model)},
      {"threshold",
       {{"th", b.threshold.th}, {"quantile", b.threshold.quantile}, {"scale", b.threshold.scale}}},
  };
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 digest failed");
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

json model_to_json(const rae::RaeModel& m) {
  json layers = json::array();
  for (const auto& layer : m.layers)
    layers.push_back({{"weights", matrix_to_json(layer.weights)}, {"bias", matrix_to_json(layer.bias)}});
  json skips = json::array();
  for (std::size_t s = 0; s < m.skips.size(); ++s) {
    json sk{{"from", m.skips[s].from}, {"to", m.skips[s].to}, {"projection", m.skips[s].projection}};
    if (m.skips[s].projection) sk["matrix"] = matrix_to_json(m.projections[s]);
    skips.push_back(std::move(sk));
  }
  return {{"dims", m.dims}, {"layers", layers}, {"skips", skips}, {"l1_coeff", m.l1_coeff}, {"seed", m.seed},
          {"activation", "sigmoid"}};
}

rae::RaeModel model_from_json(const json& j) {
  rae::RaeModel m;
  m.dims = j.at("dims").get<std::vector<int>>();
  m.l1_coeff = j.at("l1_coeff").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& layer : j.at("layers"))
    m.layers.push_back({matrix_from_json(layer.at("weights")), matrix_from_json(layer.at("bias")).col(0)});
  for (const auto& sk : j.at("skips")) {
    m.skips.push_back({sk.at("from").get<int>(), sk.at("to").get<int>(), sk.at("projection").get<bool>()});
    m.projections.push_back(m.skips.back().projection ? matrix_from_json(sk.at("matrix")) : Eigen::MatrixXd());
  }
  rae::validate(m);
  return m;
}

std::string serialize_bundle(const ModelBundle& bundle) {
  const json content = content_to_json(bundle);
  const std::string canonical = content.dump();
  json doc{{"format", kBundleFormat},
           {"version", kBundleVersion},
           {"checksum", "sha256:" + sha256_hex(canonical)},
           {"content", content}};
  return doc.dump() + "\n";
}

ModelBundle deserialize_bundle(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bundle: not valid JSON ({})", e.what()));
  }
  try {
    if (doc.at("format").get<std::string>() != kBundleFormat) throw FormatError("bundle: unknown format tag");
    const int version = doc.at("version").get<int>();
    if (version != kBundleVersion)
      throw VersionMismatch(fmt::format("bundle: version {} (this build reads version {})", version, kBundleVersion));
    const json& content = doc.at("content");
    if (doc.at("checksum").get<std::string>() != "sha256:" + sha256_hex(content.dump()))
      throw ChecksumMismatch("bundle: content checksum mismatch");

    const json& sc = content.at("scaler");
    preprocess::ScalerParams scaler{vector_from_json(sc.at("min")), vector_from_json(sc.at("max")),
                                    sc.at("degenerate").get<std::vector<bool>>()};
    const json& th = content.at("threshold");
    ModelBundle b{features::schema_from_json(content.at("schema")), std::move(scaler),
                  model_from_json(content.at("model")),
                  detect::Threshold{th.at("th").get<double>(), th.at("quantile").get<double>(),
                                    th.at("scale").get<double>()}};
    const auto d = static_cast<Eigen::Index>(b.schema.size());
    if (b.scaler.min.size() != d || b.scaler.max.size() != d || static_cast<Eigen::Index>(b.scaler.degenerate.size()) != d ||
        b.model.input_dim() != d)
      throw FormatError("bundle: schema, scaler and model widths disagree");
    return b;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bundle: {}", e.what()));
  }
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  const std::string text = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_bundle(ss.str());
}

}  // namespace rxads
