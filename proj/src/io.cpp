#include "ptycholab/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ptycholab::io {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'Y', 'T'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream &os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char *>(b), 2);
}

void put_u64(std::ostream &os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char *>(b), 8);
}

std::uint16_t get_u16(std::istream &is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char *>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream &is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char *>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_header(std::ostream &os, std::uint16_t dtype,
                  const std::vector<std::uint64_t> &dims) {
  os.write(kMagic, 4);
  put_u16(os, kVersion);
  put_u16(os, dtype);
  put_u16(os, static_cast<std::uint16_t>(dims.size()));
  for (auto d : dims) put_u64(os, d);
}

struct Header {
  std::uint16_t dtype;
  std::vector<std::uint64_t> dims;
};

Header read_header(std::istream &is, const std::filesystem::path &path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a PTYT tensor file: " + path.string());
  std::uint16_t version = get_u16(is);
  if (version != kVersion)
    throw IoError("unsupported PTYT version " + std::to_string(version));
  Header h;
  h.dtype = get_u16(is);
  std::uint16_t rank = get_u16(is);
  for (std::uint16_t i = 0; i < rank; ++i) h.dims.push_back(get_u64(is));
  return h;
}

std::ofstream open_out(const std::filesystem::path &path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return is;
}

}  // namespace

void write_tensor(const std::filesystem::path &path, const RealTensor &t) {
  auto os = open_out(path);
  std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
  write_header(os, 0, dims);
  os.write(reinterpret_cast<const char *>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

void write_tensor(const std::filesystem::path &path, const ComplexGrid &g) {
  auto os = open_out(path);
  write_header(os, 1, {g.height, g.width});
  os.write(reinterpret_cast<const char *>(g.data.data()),
           static_cast<std::streamsize>(g.data.size() * 2 * sizeof(double)));
}

RealTensor read_real_tensor(const std::filesystem::path &path) {
  auto is = open_in(path);
  Header h = read_header(is, path);
  if (h.dtype != 0) throw IoError("expected real tensor: " + path.string());
  RealTensor t(std::vector<std::size_t>(h.dims.begin(), h.dims.end()));
  is.read(reinterpret_cast<char *>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!is) throw IoError("truncated tensor file: " + path.string());
  return t;
}

ComplexGrid read_complex_grid(const std::filesystem::path &path) {
  auto is = open_in(path);
  Header h = read_header(is, path);
  if (h.dtype != 1 || h.dims.size() != 2)
    throw IoError("expected 2-D complex grid: " + path.string());
  ComplexGrid g(h.dims[0], h.dims[1]);
  is.read(reinterpret_cast<char *>(g.data.data()),
          static_cast<std::streamsize>(g.data.size() * 2 * sizeof(double)));
  if (!is) throw IoError("truncated tensor file: " + path.string());
  return g;
}

void write_pgm16(const std::filesystem::path &path, const RealTensor &values,
                 double lo, double hi) {
  if (values.shape.size() != 2) throw IoError("write_pgm16: expected 2-D values");
  auto os = open_out(path);
  os << "P5\n" << values.cols() << " " << values.rows() << "\n65535\n";
  double span = hi > lo ? hi - lo : 1.0;
  for (double v : values.data) {
    double u = (v - lo) / span;
    u = std::min(1.0, std::max(0.0, u));
    auto q = static_cast<std::uint16_t>(std::lround(u * 65535.0));
    unsigned char b[2] = {static_cast<unsigned char>(q >> 8),
                          static_cast<unsigned char>(q & 0xff)};  // PGM is big-endian
    os.write(reinterpret_cast<const char *>(b), 2);
  }
  std::ostringstream side;
  side.precision(17);
  side << "lo " << lo << "\nhi " << hi << "\n";
  write_text(path.string() + ".scale", side.str());
}

RealTensor read_pgm16(const std::filesystem::path &path) {
  auto is = open_in(path);
  std::string magic;
  std::size_t w, h;
  unsigned maxval;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 65535)
    throw IoError("read_pgm16: unsupported PGM: " + path.string());
  is.get();  // single whitespace after header
  std::istringstream side(read_text(path.string() + ".scale"));
  std::string key;
  double lo, hi;
  side >> key >> lo >> key >> hi;
  RealTensor t({h, w});
  for (auto &v : t.data) {
    unsigned char b[2];
    is.read(reinterpret_cast<char *>(b), 2);
    double u = static_cast<double>((b[0] << 8) | b[1]) / 65535.0;
    v = lo + u * (hi - lo);
  }
  if (!is) throw IoError("read_pgm16: truncated file: " + path.string());
  return t;
}

void export_image(const std::filesystem::path &stem, const ComplexGrid &g) {
  RealTensor mag({g.height, g.width}), phase({g.height, g.width});
  double lo = std::abs(g.data.empty() ? cdouble{} : g.data[0]);
  double hi = lo;
  for (std::size_t i = 0; i < g.size(); ++i) {
    mag.data[i] = std::abs(g.data[i]);
    phase.data[i] = std::arg(g.data[i]);
    lo = std::min(lo, mag.data[i]);
    hi = std::max(hi, mag.data[i]);
  }
  write_pgm16(stem.string() + "_mag.pgm", mag, lo, hi);
  write_pgm16(stem.string() + "_phase.pgm", phase, -std::numbers::pi, std::numbers::pi);
}

void write_text(const std::filesystem::path &path, const std::string &text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << text;
}

std::string read_text(const std::filesystem::path &path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(const std::string &text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ptycholab::io
