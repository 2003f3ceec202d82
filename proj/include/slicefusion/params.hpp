#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slicefusion/autograd.hpp"
#include "slicefusion/config.hpp"
#include "slicefusion/tensor.hpp"

namespace slicefusion {

enum class Group : std::size_t { enc3d, enc2d, conn3d, conn2d, text_enc, scorer_mlp, decoder };

inline constexpr std::array<Group, 7> kAllGroups = {Group::enc3d,    Group::enc2d,      Group::conn3d, Group::conn2d,
                                                    Group::text_enc, Group::scorer_mlp, Group::decoder};

const char* group_name(Group g);
Group parse_group(std::string_view name);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ParamGroup {
  std::vector<NamedTensor> tensors;
  bool frozen = false;

  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  std::size_t numel() const;
};

/// Every trainable weight of the model, grouped by component.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  ParamGroup& group(Group g) { return groups_[static_cast<std::size_t>(g)]; }
  const ParamGroup& group(Group g) const { return groups_[static_cast<std::size_t>(g)]; }
  const Tensor& get(Group g, std::string_view name) const { return group(g).get(name); }
  Tensor& get(Group g, std::string_view name) { return group(g).get(name); }

  void set_frozen(Group g, bool frozen) { group(g).frozen = frozen; }
  void freeze_all(bool frozen);
  std::size_t numel() const;
  std::size_t trainable_numel() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  friend ModelParams init_params(std::uint64_t seed, const ModelConfig& config);
  friend ModelParams load_checkpoint(const std::filesystem::path& path);

  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::array<ParamGroup, 7> groups_;
};

/// Uniform init in +-sqrt(3/fan_in) (unit-variance preserving) from a splitmix64 stream seeded with `seed`.
ModelParams init_params(std::uint64_t seed, const ModelConfig& config);

/// Gradient storage parallel to ModelParams (same groups, order and shapes).
class GradientSet {
 public:
  explicit GradientSet(const ModelParams& params);
  Tensor& at(Group g, std::size_t index) { return grads_[static_cast<std::size_t>(g)][index]; }
  const Tensor& at(Group g, std::size_t index) const { return grads_[static_cast<std::size_t>(g)][index]; }
  void add(const GradientSet& other);
  void scale(double factor);
  void zero();

 private:
  std::array<std::vector<Tensor>, 7> grads_;
};

/// Binds every parameter tensor into a graph. Frozen groups (or all groups when
/// `track_gradients` is false) enter as constants.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ModelParams& params, bool track_gradients = true);

  Var operator()(Group g, std::string_view name) const;
  const ModelParams& params() const { return *params_; }
  Graph& graph() const { return *graph_; }

  /// Adds this graph's parameter gradients into `out`.
  void accumulate(GradientSet& out) const;

 private:
  Graph* graph_;
  const ModelParams* params_;
  std::array<std::vector<Var>, 7> vars_;
};

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace slicefusion
