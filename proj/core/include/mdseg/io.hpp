#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

// ---- MDT1: magic "MDT1", dtype u8 (0=f32, 1=f64), rank u8, dims u64 LE,
// ---- payload row-major little-endian. Round-trips are bit-exact.
void write_mdt1(std::ostream& os, const AnyTensor& t);
AnyTensor read_mdt1(std::istream& is);  // FormatError mentions the byte offset

void write_mdt1_file(const std::string& path, const AnyTensor& t);
AnyTensor read_mdt1_file(const std::string& path);
Tensor<float> read_mdt1_f32(const std::string& path);
Tensor<double> read_mdt1_f64(const std::string& path);

/// Multiple MDT1 records back to back; record names live in a JSON sidecar.
void write_mdt1_multi(const std::string& path, const std::vector<AnyTensor>& ts);
std::vector<AnyTensor> read_mdt1_multi(const std::string& path,
                                       std::size_t expected_count);

// ---- binary PGM (P5), maxval 255 only
void write_pgm(const std::string& path, const Tensor<std::uint8_t>& img);
Tensor<std::uint8_t> read_pgm(const std::string& path);

/// [0,1] -> u8 with round-half-up (0.5 -> 128).
Tensor<std::uint8_t> quantize_unit(const Tensor<float>& img);
Tensor<float> to_unit(const Tensor<std::uint8_t>& img);

// ---- dataset manifest: JSON lines, one item per line; paths are stored
// ---- relative to the manifest and returned resolved.
struct ManifestItem {
  std::string image;
  std::string mask;   // empty = none (unlabeled)
  std::string split;  // labeled | unlabeled | test
  int domain = 0;     // true-domain tag (evaluation-only metadata), 1-based
};

void write_manifest(const std::string& path, const std::vector<ManifestItem>& items);
std::vector<ManifestItem> read_manifest(const std::string& path,
                                        bool check_paths = true);

/// Write-temp-then-rename; the target never holds partial content.
void atomic_write(const std::string& path,
                  const std::function<void(std::ostream&)>& body);

}  // namespace mdseg
