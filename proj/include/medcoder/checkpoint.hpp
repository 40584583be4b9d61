#pragma once

#include "medcoder/types.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace medcoder {

// Single-file model archive: a JSON header followed by named float32 tensors,
// row-major. Layout:
//   magic "MDCK" | u32 version | u64 json_len | json bytes
//   u32 tensor_count | per tensor: u32 name_len | name | u32 ndim |
//   u64 dims[ndim] | f32 data[prod(dims)]
struct TensorArchive {
  nlohmann::ordered_json meta;
  // Tensors kept in insertion order; matrices stored row-major.
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(const std::string& name, const Matrix& m) { tensors.emplace_back(name, m); }
  void add(const std::string& name, const Vector& v) {
    tensors.emplace_back(name, Matrix(v.transpose()));
  }
  const Matrix& get(const std::string& name) const;
  Vector get_vector(const std::string& name) const;
  bool has(const std::string& name) const;

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);
};

}  // namespace medcoder
