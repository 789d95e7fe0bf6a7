#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "esc/tensor.hpp"

namespace esc::io {

// Binary checkpoint container:
//   8-byte magic (NUL padded) | uint64 LE header length | UTF-8 JSON header |
//   float64 LE payload of every tensor in header order.
// The header holds {"meta": {...}, "tensors": [{"name", "shape"}...]}.
struct Container {
  std::string magic;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
  [[nodiscard]] const Tensor& tensor(const std::string& name) const;
  [[nodiscard]] bool has(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, const std::string& expected_magic);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace esc::io
