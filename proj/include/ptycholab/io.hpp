#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ptycholab/tensor.hpp"

namespace ptycholab::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// PTYT tensor container: magic "PTYT", u16 version, u16 dtype
// (0 = f64 real, 1 = f64 complex interleaved), u16 rank, u64 dims,
// little-endian payload.
void write_tensor(const std::filesystem::path &path, const RealTensor &t);
void write_tensor(const std::filesystem::path &path, const ComplexGrid &g);
RealTensor read_real_tensor(const std::filesystem::path &path);
ComplexGrid read_complex_grid(const std::filesystem::path &path);

// 16-bit binary PGM (P5, maxval 65535) plus a ".scale" sidecar recording
// the min/max mapping so the export is invertible up to quantization.
void write_pgm16(const std::filesystem::path &path, const RealTensor &values,
                 double lo, double hi);
RealTensor read_pgm16(const std::filesystem::path &path);
// magnitude (min-max scaled) and phase (mapped from [-pi, pi]) maps
void export_image(const std::filesystem::path &stem, const ComplexGrid &g);

void write_text(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

// FNV-1a, used to stamp reports with the config they came from.
std::uint64_t fnv1a(const std::string &text);

}  // namespace ptycholab::io
