#include "medcoder/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace medcoder {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("TensorArchive: truncated file");
  return v;
}

}  // namespace

const Matrix& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw DataError("TensorArchive: missing tensor " + name);
}

Vector TensorArchive::get_vector(const std::string& name) const {
  const Matrix& m = get(name);
  if (m.rows() != 1) throw DataError("TensorArchive: tensor " + name + " is not a vector");
  return m.row(0).transpose();
}

bool TensorArchive::has(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return true;
  return false;
}

void TensorArchive::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("TensorArchive::save: cannot open " + path);
  f.write(kMagic, 4);
  write_pod<std::uint32_t>(f, kVersion);
  const std::string header = meta.dump();
  write_pod<std::uint64_t>(f, header.size());
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(f, 2);
    write_pod<std::uint64_t>(f, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(f, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        write_pod<float>(f, static_cast<float>(m(r, c)));
  }
  if (!f) throw DataError("TensorArchive::save: write failed for " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingDependencyError("TensorArchive::load: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("TensorArchive::load: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(f);
  if (version != kVersion) throw DataError("TensorArchive::load: unsupported version");
  const auto header_len = read_pod<std::uint64_t>(f);
  std::string header(header_len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw DataError("TensorArchive::load: truncated header");

  TensorArchive a;
  a.meta = nlohmann::ordered_json::parse(header);
  const auto count = read_pod<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto ndim = read_pod<std::uint32_t>(f);
    if (ndim != 2) throw DataError("TensorArchive::load: only rank-2 tensors supported");
    const auto rows = read_pod<std::uint64_t>(f);
    const auto cols = read_pod<std::uint64_t>(f);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<double>(read_pod<float>(f));
    a.tensors.emplace_back(std::move(name), std::move(m));
  }
  return a;
}

}  // namespace medcoder
