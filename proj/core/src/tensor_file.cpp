// SPDX-License-Identifier: Apache-2.0
#include "forge/tensor_file.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "forge/error.hpp"

namespace forge {
namespace {

constexpr std::array<char, 8> kMagic = {'F', 'R', 'G', 'T', 'N', 'S', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const nlohmann::json& meta,
                       const std::vector<NamedTensor>& tensors) {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors)
    header["tensors"].push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t.value;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  }
  if (!out) throw DomainError("write failed for " + path.string());
}

const Mat& TensorFile::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw DomainError("tensor file has no tensor named " + name);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ParseError("bad tensor file magic in " + path.string(), 0);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) throw ParseError("bad tensor header length", 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("truncated tensor header", 16);

  TensorFile file;
  const auto header = nlohmann::json::parse(text);
  file.meta = header.at("meta");
  std::size_t offset = 16 + len;
  for (const auto& entry : header.at("tensors")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
    if (!in) throw ParseError("truncated payload for " + entry.at("name").get<std::string>(), offset);
    offset += sizeof(double) * static_cast<std::size_t>(rm.size());
    file.tensors.push_back({entry.at("name").get<std::string>(), Mat(rm)});
  }
  return file;
}

}  // namespace forge
