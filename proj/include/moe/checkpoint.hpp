#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moe/tensor.hpp"

namespace moe::ckpt {

/// Versioned container of named parameter arrays with a JSON metadata block.
/// Layout: magic, u32 version, u64 meta length, meta JSON, u64 tensor count,
/// then per tensor: u32 name length, name, u32 rank, u64 dims, f64 payload
/// (little-endian throughout).
struct Container {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  void save(const std::string& path) const;
  static Container load(const std::string& path);
};

}  // namespace moe::ckpt
