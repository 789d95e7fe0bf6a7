#include "esc/container.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "esc/error.hpp"

namespace esc::io {

static_assert(std::endian::native == std::endian::little, "container format assumes a little-endian host");

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("container has no tensor named " + name);
}

bool Container::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_container(const std::filesystem::path& path, const Container& c) {
  if (c.magic.size() > 8) throw FormatError("container magic longer than 8 bytes");
  nlohmann::json header;
  header["meta"] = c.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : c.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string hdr = header.dump();

  std::string bytes(8, '\0');
  std::memcpy(bytes.data(), c.magic.data(), c.magic.size());
  const std::uint64_t len = hdr.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof(len));
  bytes += hdr;
  for (const auto& [name, t] : c.tensors) {
    bytes.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  write_file(path, bytes);
}

Container read_container(const std::filesystem::path& path, const std::string& expected_magic) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16) throw FormatError(path.string() + ": truncated container");
  std::string magic(bytes.data(), 8);
  magic.erase(std::find(magic.begin(), magic.end(), '\0'), magic.end());
  if (magic != expected_magic) {
    throw FormatError(path.string() + ": expected magic " + expected_magic + ", found " + magic);
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) throw FormatError(path.string() + ": header overruns file");
  Container c;
  c.magic = magic;
  const auto header = nlohmann::json::parse(bytes.substr(16, len));
  c.meta = header.at("meta");
  std::size_t offset = 16 + len;
  for (const auto& entry : header.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<int>>();
    const std::size_t n = element_count(shape);
    if (offset + n * sizeof(double) > bytes.size()) throw FormatError(path.string() + ": payload truncated");
    std::vector<double> data(n);
    std::memcpy(data.data(), bytes.data() + offset, n * sizeof(double));
    offset += n * sizeof(double);
    c.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace esc::io
