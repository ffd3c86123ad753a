#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace zerolight {

/// One named tensor. Data is always held as float32; F16/BF16/F64 inputs are
/// converted on read.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t element_count() const;
};

/// Named float tensors in the safetensors layout: an 8-byte little-endian
/// header length, a JSON header with dtype/shape/offsets, then raw data.
/// Tensors are written in name order so identical content produces identical
/// bytes.
class TensorArchive {
 public:
  void put(const std::string& name, std::vector<std::int64_t> shape, std::vector<float> data);
  void put(const std::string& name, std::vector<std::int64_t> shape, std::span<const float> data);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  /// Free-form string metadata stored under "__metadata__".
  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> metadata_;
};

std::vector<std::uint8_t> serialize_tensor_archive(const TensorArchive& archive);
TensorArchive parse_tensor_archive(std::span<const std::uint8_t> bytes);

TensorArchive read_tensor_archive(const std::filesystem::path& path);
/// Atomic: writes a sibling temp file and renames it over the target.
void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

/// Sidecar path for a checkpoint: "<path>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace zerolight
