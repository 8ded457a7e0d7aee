#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ranpool/common.hpp"

namespace ranpool::nn {

using Tensor = Eigen::MatrixXd;

/// Which block of MSTNet a tensor belongs to. Standalone networks use kOther.
enum class Partition { kShared, kTraffic, kUsers, kOther };

/// Subset of tensors exchanged during collaboration.
enum class ParamScope { kAll, kBranches, kSharedBlock };

std::string_view to_string(Partition p);
std::string_view to_string(ParamScope s);
ParamScope parse_scope(std::string_view s);

inline bool in_scope(Partition p, ParamScope scope) {
  switch (scope) {
    case ParamScope::kAll: return true;
    case ParamScope::kBranches: return p == Partition::kTraffic || p == Partition::kUsers;
    case ParamScope::kSharedBlock: return p == Partition::kShared;
  }
  return false;
}

struct ParamTensor {
  std::string name;
  Partition partition = Partition::kOther;
  Tensor value;
};

/// Flat, ordered store of named parameter tensors. Gradients use the same type.
class ModelParams {
 public:
  std::size_t add(std::string name, Partition partition, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i].value; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i].value; }
  const ParamTensor& tensor(std::size_t i) const { return tensors_[i]; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }

  Eigen::Index parameter_count() const;
  Eigen::Index parameter_count(Partition p) const;

  ModelParams zeros_like() const;
  /// Same names, partitions and shapes, in the same order.
  bool congruent(const ModelParams& other) const;
  void require_congruent(const ModelParams& other, std::string_view context) const;

  /// this += scale * other, restricted to `scope`.
  void axpy(double scale, const ModelParams& other, ParamScope scope = ParamScope::kAll);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;

  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);

  bool operator==(const ModelParams& other) const;

 private:
  std::vector<ParamTensor> tensors_;
};

/// Glorot-uniform matrix.
Tensor glorot(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Eigen::Index fan_out,
              Rng& rng);

/// Checkpoint as `<stem>.bin` (little-endian doubles) + `<stem>.json` shape manifest.
/// `extra` is merged into the manifest.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem,
                     const std::string& extra_json = "{}");
/// Loads values into `params`, whose layout must match the manifest.
void load_checkpoint(ModelParams& params, const std::filesystem::path& stem);

}  // namespace ranpool::nn
