#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ruleforge/tensor.hpp"

namespace ruleforge {

// Named parameters with gradient accumulators and AdamW moments. Single
// writer during optimization; read-shared for inference.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
  };

  int add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;

  Entry& entry(int i) { return entries_[static_cast<std::size_t>(i)]; }
  const Entry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }
  Tensor& value(const std::string& name) { return entries_[idx(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[idx(name)].value; }
  Tensor& grad(const std::string& name) { return entries_[idx(name)].grad; }

  std::size_t size() const { return entries_.size(); }
  std::int64_t num_scalars() const;

  void zero_grads();
  double grad_norm() const;       // global L2, accumulated in entry order
  void scale_grads(float factor);

  // Decoupled weight decay, then Adam update with bias correction.
  // `step` is 1-based (pass the step count after incrementing).
  void adamw_step(float lr, float weight_decay, float beta1, float beta2,
                  float eps, std::int64_t step);

  std::vector<std::string> names() const;

 private:
  std::size_t idx(const std::string& name) const {
    return static_cast<std::size_t>(index_of(name));
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Checkpoint = <stem>.json manifest + <stem>.bin payload (contiguous
// little-endian f32 tensors at the offsets named by the manifest).
struct Checkpoint {
  ParamStore params;          // values (+ moments when saved with optimizer state)
  nlohmann::json config;      // training-config snapshot
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::uint64_t next_episode_index = 0;
  bool has_optimizer_state = false;
};

void save_checkpoint(const std::string& stem, const ParamStore& params,
                     const nlohmann::json& config, std::uint64_t seed,
                     std::int64_t step, std::uint64_t next_episode_index,
                     bool include_optimizer_state);

Checkpoint load_checkpoint(const std::string& stem);

}  // namespace ruleforge
