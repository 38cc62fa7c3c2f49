#include "ruleforge/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ruleforge {

int ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Entry entry;
  entry.name = name;
  entry.grad = Tensor(value.rows(), value.cols());
  entry.m = Tensor(value.rows(), value.cols());
  entry.v = Tensor(value.rows(), value.cols());
  entry.value = std::move(value);
  entries_.push_back(std::move(entry));
  int id = static_cast<int>(entries_.size()) - 1;
  index_[name] = id;
  return id;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::int64_t ParamStore::num_scalars() const {
  std::int64_t total = 0;
  for (const Entry& e : entries_) total += static_cast<std::int64_t>(e.value.size());
  return total;
}

void ParamStore::zero_grads() {
  for (Entry& e : entries_) e.grad.set_zero();
}

double ParamStore::grad_norm() const {
  double acc = 0.0;
  for (const Entry& e : entries_) {
    for (std::size_t i = 0; i < e.grad.size(); ++i) {
      acc += static_cast<double>(e.grad[i]) * static_cast<double>(e.grad[i]);
    }
  }
  return std::sqrt(acc);
}

void ParamStore::scale_grads(float factor) {
  for (Entry& e : entries_) {
    for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] *= factor;
  }
}

void ParamStore::adamw_step(float lr, float weight_decay, float beta1, float beta2,
                            float eps, std::int64_t step) {
  const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
  const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
  for (Entry& e : entries_) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const float g = e.grad[i];
      e.value[i] *= 1.0f - lr * weight_decay;
      e.m[i] = beta1 * e.m[i] + (1.0f - beta1) * g;
      e.v[i] = beta2 * e.v[i] + (1.0f - beta2) * g * g;
      const float mhat = e.m[i] / bc1;
      const float vhat = e.v[i] / bc2;
      e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.name);
  return out;
}

namespace {

void write_tensor(std::ofstream& bin, const Tensor& t) {
  static_assert(sizeof(float) == 4);
  bin.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
}

Tensor read_tensor(std::ifstream& bin, std::int64_t offset, int rows, int cols) {
  Tensor t(rows, cols);
  bin.seekg(offset);
  bin.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!bin) throw std::runtime_error("checkpoint payload truncated");
  return t;
}

}  // namespace

void save_checkpoint(const std::string& stem, const ParamStore& params,
                     const nlohmann::json& config, std::uint64_t seed,
                     std::int64_t step, std::uint64_t next_episode_index,
                     bool include_optimizer_state) {
  std::ofstream bin(stem + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot open " + stem + ".bin for writing");

  nlohmann::json manifest;
  manifest["format"] = "ruleforge-checkpoint";
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["step"] = step;
  manifest["next_episode_index"] = next_episode_index;
  manifest["config"] = config;

  std::int64_t offset = 0;
  nlohmann::json plist = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(static_cast<int>(i));
    plist.push_back({{"name", e.name},
                     {"shape", {e.value.rows(), e.value.cols()}},
                     {"dtype", "f32"},
                     {"offset", offset}});
    write_tensor(bin, e.value);
    offset += e.value.bytes();
  }
  manifest["params"] = std::move(plist);

  if (include_optimizer_state) {
    nlohmann::json olist = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = params.entry(static_cast<int>(i));
      nlohmann::json oe;
      oe["name"] = e.name;
      oe["m_offset"] = offset;
      write_tensor(bin, e.m);
      offset += e.m.bytes();
      oe["v_offset"] = offset;
      write_tensor(bin, e.v);
      offset += e.v.bytes();
      olist.push_back(std::move(oe));
    }
    manifest["optimizer"] = {{"present", true}, {"entries", std::move(olist)}};
  } else {
    manifest["optimizer"] = {{"present", false}};
  }

  std::ofstream man(stem + ".json", std::ios::trunc);
  if (!man) throw std::runtime_error("cannot open " + stem + ".json for writing");
  man << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream man(stem + ".json");
  if (!man) throw std::runtime_error("cannot open " + stem + ".json");
  nlohmann::json manifest = nlohmann::json::parse(man);
  if (manifest.value("format", "") != "ruleforge-checkpoint") {
    throw std::runtime_error("not a ruleforge checkpoint: " + stem);
  }
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + stem + ".bin");

  Checkpoint ckpt;
  ckpt.seed = manifest.value("seed", 0ull);
  ckpt.step = manifest.value("step", 0ll);
  ckpt.next_episode_index = manifest.value("next_episode_index", 0ull);
  ckpt.config = manifest.value("config", nlohmann::json::object());
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const int rows = p.at("shape").at(0).get<int>();
    const int cols = p.at("shape").at(1).get<int>();
    if (p.value("dtype", "f32") != "f32") {
      throw std::runtime_error("unsupported checkpoint dtype");
    }
    ckpt.params.add(name, read_tensor(bin, p.at("offset").get<std::int64_t>(), rows, cols));
  }
  const auto& opt = manifest.value("optimizer", nlohmann::json::object());
  if (opt.value("present", false)) {
    ckpt.has_optimizer_state = true;
    for (const auto& oe : opt.at("entries")) {
      const std::string name = oe.at("name").get<std::string>();
      auto& entry = ckpt.params.entry(ckpt.params.index_of(name));
      entry.m = read_tensor(bin, oe.at("m_offset").get<std::int64_t>(),
                            entry.value.rows(), entry.value.cols());
      entry.v = read_tensor(bin, oe.at("v_offset").get<std::int64_t>(),
                            entry.value.rows(), entry.value.cols());
    }
  }
  return ckpt;
}

}  // namespace ruleforge
