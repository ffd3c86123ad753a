#include "zerolight/tensor_archive.hpp"

#include "zerolight/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace zerolight {

namespace {

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  if (dtype == "F64") return 8;
  throw ParseError("tensor archive: unsupported dtype " + dtype);
}

}  // namespace

std::int64_t Tensor::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void TensorArchive::put(const std::string& name, std::vector<std::int64_t> shape, std::vector<float> data) {
  Tensor t{std::move(shape), std::move(data)};
  if (t.element_count() != static_cast<std::int64_t>(t.data.size())) {
    throw std::invalid_argument("TensorArchive::put: shape does not match data size for " + name);
  }
  tensors_[name] = std::move(t);
}

void TensorArchive::put(const std::string& name, std::vector<std::int64_t> shape, std::span<const float> data) {
  put(name, std::move(shape), std::vector<float>(data.begin(), data.end()));
}

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ParseError("tensor archive: missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> serialize_tensor_archive(const TensorArchive& archive) {
  nlohmann::json header = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.tensors()) {
    const std::size_t bytes = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!archive.metadata().empty()) header["__metadata__"] = archive.metadata();
  std::string text = header.dump();
  while ((8 + text.size()) % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out(8 + text.size() + offset);
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>((n >> (8 * i)) & 0xff);
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::uint8_t* dst = out.data() + 8 + text.size();
  for (const auto& [name, t] : archive.tensors()) {
    for (float v : t.data) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) *dst++ = static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff);
    }
  }
  return out;
}

TensorArchive parse_tensor_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ParseError("tensor archive: truncated header");
  const std::uint64_t n = read_u64_le(bytes.data());
  if (n > bytes.size() - 8) throw ParseError("tensor archive: header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("tensor archive: bad header: ") + e.what());
  }
  const std::uint8_t* data = bytes.data() + 8 + n;
  const std::size_t data_size = bytes.size() - 8 - n;

  TensorArchive archive;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) archive.metadata()[k] = v.is_string() ? v.get<std::string>() : v.dump();
      continue;
    }
    const auto dtype = entry.at("dtype").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size) {
      throw ParseError("tensor archive: bad offsets for " + name);
    }
    const std::size_t esize = dtype_size(dtype);
    std::int64_t count = 1;
    for (auto d : shape) count *= d;
    if (static_cast<std::size_t>(count) * esize != offsets[1] - offsets[0]) {
      throw ParseError("tensor archive: size mismatch for " + name);
    }
    std::vector<float> values(static_cast<std::size_t>(count));
    const std::uint8_t* p = data + offsets[0];
    for (std::int64_t i = 0; i < count; ++i, p += esize) {
      if (dtype == "F32") {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | p[b];
        values[i] = std::bit_cast<float>(bits);
      } else if (dtype == "F64") {
        values[i] = static_cast<float>(std::bit_cast<double>(read_u64_le(p)));
      } else {
        const std::uint16_t bits = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        values[i] = dtype == "F16" ? half_to_float(bits) : std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
      }
    }
    archive.put(name, shape, std::move(values));
  }
  return archive;
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open tensor archive " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_tensor_archive(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

namespace {

void write_bytes_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const auto bytes = serialize_tensor_archive(archive);
  write_bytes_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& contents) {
  write_bytes_atomic(path, contents.data(), contents.size());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".json";
  return p;
}

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& value) {
  write_text_atomic(path, value.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace zerolight
