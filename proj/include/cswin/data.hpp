#pragma once

// Image interchange (binary PPM/PGM), the synthetic shape dataset and its
// JSON manifest.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cswin/errors.hpp"
#include "cswin/mask.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

// ---------------------------------------------------------------- PNM

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // h * w * 3, row-major RGB
};

namespace detail {

inline std::string pnm_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

inline void read_pnm_header(std::istream& is, const char* magic, std::size_t& w, std::size_t& h,
                            const std::string& path) {
  if (pnm_token(is) != magic) throw FormatError(path + ": expected " + std::string(magic) + " header");
  try {
    w = std::stoul(pnm_token(is));
    h = std::stoul(pnm_token(is));
    if (std::stoul(pnm_token(is)) != 255) throw FormatError(path + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path + ": malformed header");
  }
  if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15) throw FormatError(path + ": implausible extents");
}

}  // namespace detail

inline void write_pgm(const std::string& path, const Mask& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "P5\n" << m.width << ' ' << m.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(m.labels.data()), static_cast<std::streamsize>(m.labels.size()));
}

inline Mask read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  std::size_t w, h;
  detail::read_pnm_header(is, "P5", w, h, path);
  Mask m(h, w);
  if (!is.read(reinterpret_cast<char*>(m.labels.data()), static_cast<std::streamsize>(m.size()))) {
    throw FormatError(path + ": truncated pixel data");
  }
  return m;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  RgbImage img;
  detail::read_pnm_header(is, "P6", img.width, img.height, path);
  img.pixels.resize(img.width * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError(path + ": truncated pixel data");
  }
  return img;
}

/// (H, W, 3) tensor scaled to [0, 1].
template <class T>
Tensor<T> to_tensor(const RgbImage& img) {
  Tensor<T> t({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]) / T(255);
  return t;
}

template <class T>
RgbImage to_rgb(const Tensor<T>& t) {
  if (t.rank() != 3 || t.size(2) != 3) throw DimensionError("to_rgb: expected (H,W,3)");
  RgbImage img{t.size(0), t.size(1), std::vector<std::uint8_t>(t.numel())};
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double v = std::clamp(static_cast<double>(t[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

inline std::array<double, 3> class_color(std::size_t c) {
  static constexpr std::array<std::array<double, 3>, 8> palette = {{{0.0, 0.0, 0.0},
                                                                    {0.90, 0.25, 0.20},
                                                                    {0.20, 0.75, 0.30},
                                                                    {0.25, 0.40, 0.95},
                                                                    {0.95, 0.85, 0.20},
                                                                    {0.80, 0.30, 0.85},
                                                                    {0.20, 0.85, 0.90},
                                                                    {0.95, 0.55, 0.15}}};
  if (c < palette.size()) return palette[c];
  const double hue = std::fmod(static_cast<double>(c) * 0.618033988749895, 1.0);
  return {0.5 + 0.4 * std::cos(2 * std::numbers::pi * hue), 0.5 + 0.4 * std::cos(2 * std::numbers::pi * (hue + 1.0 / 3)),
          0.5 + 0.4 * std::cos(2 * std::numbers::pi * (hue + 2.0 / 3))};
}

/// Half-transparent class colors over the image; background left untouched.
inline RgbImage overlay(const RgbImage& img, const Mask& m) {
  require_same_extent(Mask(img.height, img.width), m, "overlay");
  RgbImage out = img;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.labels[i]) continue;
    const auto col = class_color(m.labels[i]);
    for (std::size_t k = 0; k < 3; ++k) {
      const double v = 0.5 * img.pixels[i * 3 + k] + 0.5 * 255.0 * col[k];
      out.pixels[i * 3 + k] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

// ---------------------------------------------------------------- synthetic shapes

enum class ShapeKind : std::uint8_t { ellipse, rectangle, annulus };

/// Class c >= 1 is drawn as ShapeKind((c - 1) % 3). Extents are fractions of the image side.
struct SynthParams {
  double min_extent = 0.12;  // semi-axis / half-side / outer radius
  double max_extent = 0.22;
  double min_ring = 0.07;  // annulus thickness
  double max_ring = 0.10;
  double noise_std = 0.02;
  double texture_amplitude = 0.05;
  std::size_t supersample = 4;  // per axis, for anti-aliased edges in the image

  static ShapeKind kind_of(std::size_t class_id) { return static_cast<ShapeKind>((class_id - 1) % 3); }

  /// Continuous area range (pixels) of one instance of `kind` in a size x size image.
  std::pair<double, double> area_bounds(ShapeKind kind, std::size_t size) const {
    const double s = static_cast<double>(size), lo = min_extent * s, hi = max_extent * s;
    switch (kind) {
      case ShapeKind::ellipse: return {std::numbers::pi * lo * lo, std::numbers::pi * hi * hi};
      case ShapeKind::rectangle: return {4 * lo * lo, 4 * hi * hi};
      case ShapeKind::annulus: {
        const double tlo = min_ring * s, thi = std::min(max_ring * s, lo);
        // area = pi (r^2 - (r - t)^2) = pi t (2r - t), increasing in r and (for t <= r) in t
        return {std::numbers::pi * tlo * (2 * lo - tlo), std::numbers::pi * thi * (2 * hi - thi)};
      }
    }
    return {0, 0};
  }
};

struct ShapeInstance {
  std::uint8_t class_id;
  ShapeKind kind;
  double cy, cx, ry, rx;  // center and semi-extents; annulus uses ry as outer radius
  double thickness;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    switch (kind) {
      case ShapeKind::ellipse: return (dy * dy) / (ry * ry) + (dx * dx) / (rx * rx) <= 1.0;
      case ShapeKind::rectangle: return std::abs(dy) <= ry && std::abs(dx) <= rx;
      case ShapeKind::annulus: {
        const double r2 = dy * dy + dx * dx, inner = ry - thickness;
        return r2 <= ry * ry && r2 >= inner * inner;
      }
    }
    return false;
  }
  double radius() const { return std::max(ry, rx); }
  /// Radius of a circle around the center that contains the whole shape.
  double bound() const { return kind == ShapeKind::rectangle ? std::hypot(ry, rx) : radius(); }
};

template <class T>
struct SegmentationSample {
  std::string id;
  Tensor<T> image;  // (H, W, 3) in [0, 1]
  Mask mask;
};

/// One synthetic sample, a pure function of (size, num_classes, seed, params).
inline std::pair<RgbImage, Mask> synth_sample(std::size_t size, std::size_t num_classes, std::uint64_t seed,
                                              const SynthParams& prm = {}) {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (num_classes > 255) throw ConfigError("at most 255 classes fit an 8-bit mask");
  Rng rng(seed);
  const double s = static_cast<double>(size);

  // 1..K-1 distinct foreground classes
  std::vector<std::uint8_t> classes;
  for (std::size_t c = 1; c < num_classes; ++c) classes.push_back(static_cast<std::uint8_t>(c));
  for (std::size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng.below(i)]);
  classes.resize(1 + rng.below(num_classes - 1));

  std::vector<ShapeInstance> shapes;
  for (std::uint8_t c : classes) {
    const ShapeKind kind = SynthParams::kind_of(c);
    for (int attempt = 0; attempt < 64; ++attempt) {
      ShapeInstance sh{c, kind, 0, 0, 0, 0, 0};
      sh.ry = rng.uniform(prm.min_extent, prm.max_extent) * s;
      sh.rx = kind == ShapeKind::annulus ? sh.ry : rng.uniform(prm.min_extent, prm.max_extent) * s;
      sh.thickness = kind == ShapeKind::annulus ? std::min(rng.uniform(prm.min_ring, prm.max_ring) * s, sh.ry) : 0.0;
      const double r = sh.radius();
      sh.cy = rng.uniform(r + 1.0, s - r - 1.0);
      sh.cx = rng.uniform(r + 1.0, s - r - 1.0);
      bool overlaps = false;
      for (const auto& o : shapes) {
        overlaps = overlaps || std::hypot(o.cy - sh.cy, o.cx - sh.cx) < o.bound() + sh.bound() + 2.0;
      }
      if (!overlaps) {
        shapes.push_back(sh);
        break;
      }
    }
  }

  // background: per-sample base tone plus a low-frequency texture
  const std::array<double, 3> base = {rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3)};
  const double fy = rng.uniform(1.0, 3.0), fx = rng.uniform(1.0, 3.0), phase = rng.uniform(0.0, 2 * std::numbers::pi);

  RgbImage img{size, size, std::vector<std::uint8_t>(size * size * 3)};
  Mask mask(size, size);
  const std::size_t ss = std::max<std::size_t>(prm.supersample, 1);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double cy = static_cast<double>(i) + 0.5, cx = static_cast<double>(j) + 0.5;
      const double tex = prm.texture_amplitude *
                         std::sin(2 * std::numbers::pi * (fy * cy + fx * cx) / s + phase);
      std::array<double, 3> px{};
      for (std::size_t k = 0; k < 3; ++k) px[k] = base[k] + tex;
      for (const auto& sh : shapes) {
        if (sh.contains(cy, cx)) mask(i, j) = sh.class_id;
        std::size_t hits = 0;
        for (std::size_t a = 0; a < ss; ++a)
          for (std::size_t b = 0; b < ss; ++b)
            hits += sh.contains(static_cast<double>(i) + (static_cast<double>(a) + 0.5) / static_cast<double>(ss),
                                static_cast<double>(j) + (static_cast<double>(b) + 0.5) / static_cast<double>(ss));
        if (!hits) continue;
        const double cov = static_cast<double>(hits) / static_cast<double>(ss * ss);
        const auto col = class_color(sh.class_id);
        for (std::size_t k = 0; k < 3; ++k) px[k] = (1 - cov) * px[k] + cov * col[k];
      }
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = std::clamp(px[k] + prm.noise_std * rng.normal(), 0.0, 1.0);
        img.pixels[(i * size + j) * 3 + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return {std::move(img), std::move(mask)};
}

// ---------------------------------------------------------------- manifest

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::string mask;
  Split split = Split::train;
};

struct DatasetManifest {
  int version = 1;
  std::size_t num_classes = 0;
  std::size_t size = 0;
  std::vector<ManifestEntry> samples;
  nlohmann::json generator;  // seed + parameters for synthetic sets, null otherwise
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.samples)
    samples.push_back({{"id", e.id}, {"image", e.image}, {"mask", e.mask}, {"split", to_string(e.split)}});
  return {{"version", m.version}, {"num_classes", m.num_classes}, {"size", m.size},
          {"samples", samples},   {"generator", m.generator}};
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw DataError("unsupported manifest version " + std::to_string(m.version));
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.size = j.at("size").get<std::size_t>();
    m.generator = j.value("generator", nlohmann::json());
    for (const auto& e : j.at("samples")) {
      m.samples.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                           e.at("mask").get<std::string>(), parse_split(e.at("split").get<std::string>())});
    }
    std::vector<std::string> ids;
    for (const auto& e : m.samples) ids.push_back(e.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("manifest: duplicate sample id");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Writes images/, masks/ and manifest.json under `dir`. Samples are
/// assigned train, then val, then test in index order.
inline DatasetManifest synth_generate(const std::string& dir, std::size_t n, std::size_t size,
                                      std::size_t num_classes, std::uint64_t seed, std::size_t n_val = 0,
                                      std::size_t n_test = 0, const SynthParams& prm = {}) {
  if (size == 0 || size % 32 != 0) throw ConfigError("synthetic image size must be a multiple of 32");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (n == 0) throw ConfigError("need at least one sample");
  if (n_val + n_test > n) throw ConfigError("val + test exceed sample count");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  DatasetManifest m;
  m.num_classes = num_classes;
  m.size = size;
  m.generator = {{"seed", seed},
                 {"n", n},
                 {"min_extent", prm.min_extent},
                 {"max_extent", prm.max_extent},
                 {"min_ring", prm.min_ring},
                 {"max_ring", prm.max_ring},
                 {"noise_std", prm.noise_std},
                 {"texture_amplitude", prm.texture_amplitude},
                 {"supersample", prm.supersample}};
  Rng master(seed);
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sample_%04zu", i);
    auto [img, mask] = synth_sample(size, num_classes, master.next(), prm);
    ManifestEntry e{id, std::string("images/") + id + ".ppm", std::string("masks/") + id + ".pgm",
                    i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test)};
    write_ppm((fs::path(dir) / e.image).string(), img);
    write_pgm((fs::path(dir) / e.mask).string(), mask);
    m.samples.push_back(std::move(e));
  }
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw DataError("cannot write manifest in " + dir);
  os << to_json(m).dump(2) << '\n';
  return m;
}

/// Loads every sample of `split` listed by the manifest at `path`.
template <class T>
std::vector<SegmentationSample<T>> load_split(const std::string& path, Split split) {
  namespace fs = std::filesystem;
  const DatasetManifest m = read_manifest(path);
  const fs::path root = fs::path(path).parent_path();
  std::vector<SegmentationSample<T>> out;
  for (const auto& e : m.samples) {
    if (e.split != split) continue;
    if (!fs::exists(root / e.image) || !fs::exists(root / e.mask)) {
      throw DataError("manifest entry " + e.id + ": missing image or mask file");
    }
    RgbImage img = read_ppm((root / e.image).string());
    Mask mask = read_pgm((root / e.mask).string());
    if (img.height != mask.height || img.width != mask.width) throw DataError(e.id + ": image/mask extents differ");
    for (std::uint8_t l : mask.labels) {
      if (l >= m.num_classes) throw DataError(e.id + ": label " + std::to_string(l) + " >= num_classes");
    }
    out.push_back({e.id, to_tensor<T>(img), std::move(mask)});
  }
  return out;
}

}  // namespace cswin
