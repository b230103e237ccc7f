#include "mdseg/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace mdseg {

namespace {
void put_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_u64_le(std::istream& is, const char* what) {
  char b[8];
  is.read(b, 8);
  if (!is)
    throw FormatError(std::string("mdt1: truncated ") + what + " at offset " +
                      std::to_string(std::streamoff(is.tellg())));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b[i])) << (8 * i);
  return v;
}

[[noreturn]] void truncated(std::istream& is, const char* what) {
  is.clear();
  throw FormatError(std::string("mdt1: truncated ") + what + " at offset " +
                    std::to_string(std::streamoff(is.tellg())));
}

template <typename T>
void write_payload(std::ostream& os, const Tensor<T>& t) {
  // x86-64 is little-endian IEEE-754; payload is written raw
  os.write(reinterpret_cast<const char*>(t.data()),
           std::streamsize(t.size() * sizeof(T)));
}

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  Tensor<T> t(shape);
  is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(T)));
  if (std::size_t(is.gcount()) != t.size() * sizeof(T)) truncated(is, "payload");
  return t;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for reading: " + path);
  return f;
}
}  // namespace

void write_mdt1(std::ostream& os, const AnyTensor& t) {
  os.write("MDT1", 4);
  const bool is64 = std::holds_alternative<Tensor<double>>(t);
  const char dtype = is64 ? 1 : 0;
  os.put(dtype);
  std::visit(
      [&](const auto& tt) {
        os.put(char(tt.rank()));
        for (std::size_t i = 0; i < tt.rank(); ++i) put_u64_le(os, tt.dim(i));
        write_payload(os, tt);
      },
      t);
  if (!os) throw FormatError("mdt1: write failed");
}

AnyTensor read_mdt1(std::istream& is) {
  const std::streamoff start = is.tellg();
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MDT1", 4) != 0) {
    is.clear();
    throw FormatError("mdt1: bad or missing magic at offset " +
                      std::to_string(start));
  }
  const int dtype = is.get();
  const int rank = is.get();
  if (dtype == std::istream::traits_type::eof() ||
      rank == std::istream::traits_type::eof())
    truncated(is, "header");
  if (dtype != 0 && dtype != 1)
    throw FormatError("mdt1: unknown dtype code " + std::to_string(dtype));
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) d = get_u64_le(is, "dims");
  if (dtype == 0) return read_payload<float>(is, shape);
  return read_payload<double>(is, shape);
}

void write_mdt1_file(const std::string& path, const AnyTensor& t) {
  atomic_write(path, [&](std::ostream& os) { write_mdt1(os, t); });
}

AnyTensor read_mdt1_file(const std::string& path) {
  auto f = open_in(path);
  return read_mdt1(f);
}

Tensor<float> read_mdt1_f32(const std::string& path) {
  auto t = read_mdt1_file(path);
  require(std::holds_alternative<Tensor<float>>(t), "mdt1: expected f32 in " + path);
  return std::get<Tensor<float>>(std::move(t));
}

Tensor<double> read_mdt1_f64(const std::string& path) {
  auto t = read_mdt1_file(path);
  require(std::holds_alternative<Tensor<double>>(t), "mdt1: expected f64 in " + path);
  return std::get<Tensor<double>>(std::move(t));
}

void write_mdt1_multi(const std::string& path, const std::vector<AnyTensor>& ts) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& t : ts) write_mdt1(os, t);
  });
}

std::vector<AnyTensor> read_mdt1_multi(const std::string& path,
                                       std::size_t expected_count) {
  auto f = open_in(path);
  std::vector<AnyTensor> out;
  out.reserve(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) out.push_back(read_mdt1(f));
  f.peek();
  if (!f.eof())
    throw FormatError("mdt1: trailing bytes after " +
                      std::to_string(expected_count) + " records in " + path);
  return out;
}

void write_pgm(const std::string& path, const Tensor<std::uint8_t>& img) {
  require(img.rank() == 2, "pgm: H x W image expected");
  atomic_write(path, [&](std::ostream& os) {
    os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data()), std::streamsize(img.size()));
  });
}

Tensor<std::uint8_t> read_pgm(const std::string& path) {
  auto f = open_in(path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = f.get()) != std::istream::traits_type::eof()) {
      if (c == '#') {
        while ((c = f.get()) != std::istream::traits_type::eof() && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(char(c));
    }
    if (tok.empty()) throw FormatError("pgm: truncated header in " + path);
    return tok;
  };
  if (next_token() != "P5") throw FormatError("pgm: not a P5 file: " + path);
  const long w = std::stol(next_token());
  const long h = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (w <= 0 || h <= 0) throw FormatError("pgm: bad dimensions in " + path);
  if (maxval != 255) throw FormatError("pgm: maxval must be 255 in " + path);
  Tensor<std::uint8_t> img(Shape{std::size_t(h), std::size_t(w)});
  f.read(reinterpret_cast<char*>(img.data()), std::streamsize(img.size()));
  if (std::size_t(f.gcount()) != img.size())
    throw FormatError("pgm: truncated payload in " + path);
  return img;
}

Tensor<std::uint8_t> quantize_unit(const Tensor<float>& img) {
  Tensor<std::uint8_t> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    require(img[i] >= 0.f && img[i] <= 1.f, "quantize_unit: value outside [0,1]");
    out[i] = std::uint8_t(std::min(255.0, std::floor(double(img[i]) * 255.0 + 0.5)));
  }
  return out;
}

Tensor<float> to_unit(const Tensor<std::uint8_t>& img) {
  Tensor<float> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = float(img[i]) / 255.f;
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestItem>& items) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& it : items) {
      nlohmann::json j;
      j["image"] = it.image;
      if (it.mask.empty())
        j["mask"] = nullptr;
      else
        j["mask"] = it.mask;
      j["split"] = it.split;
      j["domain"] = it.domain;
      os << j.dump() << "\n";
    }
  });
}

std::vector<ManifestItem> read_manifest(const std::string& path, bool check_paths) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest: " + path);
  const fs::path dir = fs::path(path).parent_path();
  std::vector<ManifestItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    ManifestItem it;
    it.image = (dir / j.at("image").get<std::string>()).string();
    if (!j.at("mask").is_null())
      it.mask = (dir / j.at("mask").get<std::string>()).string();
    it.split = j.at("split").get<std::string>();
    it.domain = j.at("domain").get<int>();
    require(it.split == "labeled" || it.split == "unlabeled" || it.split == "test",
            "manifest line " + std::to_string(lineno) + ": bad split " + it.split);
    require(it.split == "unlabeled" || !it.mask.empty(),
            "manifest line " + std::to_string(lineno) + ": missing mask");
    if (check_paths) {
      require(fs::exists(it.image), "manifest: missing file " + it.image);
      require(it.mask.empty() || fs::exists(it.mask),
              "manifest: missing file " + it.mask);
    }
    items.push_back(std::move(it));
  }
  return items;
}

void atomic_write(const std::string& path,
                  const std::function<void(std::ostream&)>& body) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + tmp);
    body(os);
    os.flush();
    if (!os) throw FormatError("write failed: " + tmp);
  }
  fs::rename(tmp, target);
}

}  // namespace mdseg
