#include "ranpool/nn/params.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>

#include "ranpool/io.hpp"

namespace ranpool::nn {

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::kShared: return "shared_block";
    case Partition::kTraffic: return "traffic_branch";
    case Partition::kUsers: return "user_branch";
    case Partition::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(ParamScope s) {
  switch (s) {
    case ParamScope::kAll: return "all";
    case ParamScope::kBranches: return "branches";
    case ParamScope::kSharedBlock: return "shared_block";
  }
  return "all";
}

ParamScope parse_scope(std::string_view s) {
  if (s == "all") return ParamScope::kAll;
  if (s == "branches" || s == "msp") return ParamScope::kBranches;
  if (s == "shared_block" || s == "tcn_lstm") return ParamScope::kSharedBlock;
  throw ConfigError("unknown parameter scope '" + std::string(s) + "'");
}

std::size_t ModelParams::add(std::string name, Partition partition, Tensor value) {
  tensors_.push_back({std::move(name), partition, std::move(value)});
  return tensors_.size() - 1;
}

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

Eigen::Index ModelParams::parameter_count(Partition p) const {
  Eigen::Index n = 0;
  for (const auto& t : tensors_)
    if (t.partition == p) n += t.value.size();
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_)
    out.tensors_.push_back({t.name, t.partition, Tensor::Zero(t.value.rows(), t.value.cols())});
  return out;
}

bool ModelParams::congruent(const ModelParams& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.partition != b.partition || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols())
      return false;
  }
  return true;
}

void ModelParams::require_congruent(const ModelParams& other, std::string_view context) const {
  if (!congruent(other))
    throw ShapeError(std::string(context) + ": parameter sets are not shape-congruent");
}

void ModelParams::axpy(double scale, const ModelParams& other, ParamScope scope) {
  require_congruent(other, "axpy");
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (in_scope(tensors_[i].partition, scope)) tensors_[i].value += scale * other.tensors_[i].value;
}

void ModelParams::scale(double factor) {
  for (auto& t : tensors_) t.value *= factor;
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.value.squaredNorm();
  return s;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

Eigen::VectorXd ModelParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index at = 0;
  for (const auto& t : tensors_) {
    flat.segment(at, t.value.size()) = t.value.reshaped();
    at += t.value.size();
  }
  return flat;
}

void ModelParams::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) throw ShapeError("unflatten: size mismatch");
  Eigen::Index at = 0;
  for (auto& t : tensors_) {
    t.value.reshaped() = flat.segment(at, t.value.size());
    at += t.value.size();
  }
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (!congruent(other)) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (std::memcmp(tensors_[i].value.data(), other.tensors_[i].value.data(),
                    sizeof(double) * static_cast<std::size_t>(tensors_[i].value.size())) != 0)
      return false;
  return true;
}

Tensor glorot(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Eigen::Index fan_out,
              Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) t(i, j) = u(rng);
  return t;
}

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem,
                     const std::string& extra_json) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  const Eigen::VectorXd flat = params.flatten();
  std::string blob(sizeof(double) * static_cast<std::size_t>(flat.size()), '\0');
  std::memcpy(blob.data(), flat.data(), blob.size());

  nlohmann::json manifest = nlohmann::json::parse(extra_json);
  manifest["format"] = "f64-le";
  manifest["parameter_count"] = flat.size();
  manifest["tensors"] = nlohmann::json::array();
  Eigen::Index offset = 0;
  for (const auto& t : params.tensors()) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"partition", to_string(t.partition)},
                                   {"shape", {t.value.rows(), t.value.cols()}},
                                   {"offset", offset}});
    offset += t.value.size();
  }
  io::write_atomic(with_ext(stem, ".bin"), blob);
  io::write_atomic(with_ext(stem, ".json"), manifest.dump(2) + "\n");
}

void load_checkpoint(ModelParams& params, const std::filesystem::path& stem) {
  const auto manifest = nlohmann::json::parse(io::read_file(with_ext(stem, ".json")));
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) throw ShapeError("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    const auto shape = tensors[i].at("shape").get<std::vector<Eigen::Index>>();
    if (tensors[i].at("name").get<std::string>() != t.name || shape.size() != 2 ||
        shape[0] != t.value.rows() || shape[1] != t.value.cols())
      throw ShapeError("checkpoint: tensor '" + t.name + "' does not match the manifest");
  }
  const std::string blob = io::read_file(with_ext(stem, ".bin"));
  if (blob.size() != sizeof(double) * static_cast<std::size_t>(params.parameter_count()))
    throw ShapeError("checkpoint: blob size mismatch");
  Eigen::VectorXd flat(params.parameter_count());
  std::memcpy(flat.data(), blob.data(), blob.size());
  params.unflatten(flat);
}

}  // namespace ranpool::nn
