#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "glyphnet/errors.hpp"
#include "glyphnet/image.hpp"
#include "glyphnet/rng.hpp"
#include "glyphnet/tensor.hpp"
#include "glyphnet/util.hpp"

namespace glyphnet {

// Labeled 32x32 images with values in [0,1].
struct Dataset {
  Tensor images;           // [N,C,32,32]
  std::vector<int> labels;  // length N, each in [0,class_count)
  std::size_t class_count = 0;
  std::string split_tag = "all";

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.extent(1); }

  void validate() const {
    if (labels.empty()) throw EmptyInput("dataset has no samples");
    const Shape4 s = images.shape4();
    if (s.n != labels.size()) {
      throw ShapeMismatch("dataset has " + std::to_string(s.n) + " images and " +
                          std::to_string(labels.size()) + " labels");
    }
    if (s.h != 32 || s.w != 32) {
      throw ShapeMismatch("dataset images must be 32x32, got " + images.shape_string());
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
        throw LabelOutOfRange("label " + std::to_string(y) + " outside [0," +
                              std::to_string(class_count) + ")");
      }
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!(images[i] >= 0.0 && images[i] <= 1.0)) {
        throw ValidationError("image value " + std::to_string(images[i]) + " outside [0,1]");
      }
    }
  }

  Dataset subset(const std::vector<std::size_t>& indices, const std::string& tag) const {
    if (indices.empty()) {
      Dataset empty;
      empty.class_count = class_count;
      empty.split_tag = tag;
      return empty;
    }
    const Shape4 s = images.shape4();
    Dataset out;
    out.class_count = class_count;
    out.split_tag = tag;
    out.images = Tensor({indices.size(), s.c, s.h, s.w});
    out.labels.reserve(indices.size());
    const std::size_t stride = s.c * s.h * s.w;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::size_t src = indices[i];
      std::copy(images.data() + src * stride, images.data() + (src + 1) * stride,
                out.images.data() + i * stride);
      out.labels.push_back(labels[src]);
    }
    return out;
  }
};

struct DatasetFingerprint {
  std::size_t count = 0;
  std::string content_hash;
};

inline DatasetFingerprint dataset_fingerprint(const Dataset& ds) {
  Fnv1a64 h;
  const std::uint64_t k = ds.class_count;
  h.update(&k, sizeof(k));
  for (int y : ds.labels) {
    const std::int32_t v = y;
    h.update(&v, sizeof(v));
  }
  if (ds.size() > 0) h.update(ds.images.data(), ds.images.size() * sizeof(double));
  return DatasetFingerprint{ds.size(), hex64(h.digest())};
}

// Loads a directory-per-class tree: every subdirectory of root is one
// class, files inside are decoded, rescaled to 32x32 and scaled to [0,1].
// Directory and file order is lexicographic, so two loads of the same tree
// are bit-identical. When all directory names are integers in [0,K) they
// are used as the labels directly; otherwise classes are numbered in
// sorted order. Undecodable files throw unless `permissive`, which skips
// them.
inline Dataset load_image_dir(const std::string& root, std::size_t class_count,
                              std::size_t channels = 3, bool permissive = false) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw DatasetLoadError("dataset root '" + root + "' is not a directory");
  }
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path().filename().string());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.size() != class_count) {
    throw MissingClassDir("expected " + std::to_string(class_count) + " class directories in '" +
                          root + "', found " + std::to_string(dirs.size()));
  }

  std::vector<int> dir_labels(dirs.size());
  bool numeric = true;
  std::vector<bool> used(class_count, false);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    try {
      const long long v = parse_int(dirs[i], "class dir");
      if (v < 0 || static_cast<std::size_t>(v) >= class_count || used[static_cast<std::size_t>(v)]) {
        numeric = false;
        break;
      }
      used[static_cast<std::size_t>(v)] = true;
      dir_labels[i] = static_cast<int>(v);
    } catch (const ParseError&) {
      numeric = false;
      break;
    }
  }
  if (!numeric) {
    for (std::size_t i = 0; i < dirs.size(); ++i) dir_labels[i] = static_cast<int>(i);
  }

  static const char* extensions[] = {".png", ".jpg", ".jpeg", ".bmp", ".pgm",
                                     ".ppm", ".pbm", ".tif",  ".tiff"};
  auto is_image = [&](const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    for (const char* e : extensions) {
      if (ext == e) return true;
    }
    return false;
  };

  std::vector<Tensor> samples;
  std::vector<int> labels;
  for (std::size_t d = 0; d < dirs.size(); ++d) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / dirs[d])) {
      if (entry.is_regular_file() && is_image(entry.path())) {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (const std::string& file : files) {
      Tensor img;
      try {
        img = decode_image(file, channels);
      } catch (const UnreadableImage&) {
        if (permissive) continue;
        throw;
      }
      if (img.extent(1) != 32 || img.extent(2) != 32) img = rescale_to_32(img);
      samples.push_back(std::move(img));
      labels.push_back(dir_labels[d]);
    }
  }
  if (samples.empty()) throw DatasetLoadError("no images under '" + root + "'");

  Dataset ds;
  ds.class_count = class_count;
  ds.images = Tensor({samples.size(), channels, 32, 32});
  ds.labels = std::move(labels);
  const std::size_t stride = channels * 32 * 32;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::copy(samples[i].data(), samples[i].data() + stride, ds.images.data() + i * stride);
  }
  ds.validate();
  return ds;
}

// Stratified partition sizes; counts are totals across classes and the
// validation share is carved out of the training portion.
struct SplitSpec {
  std::size_t train_count = 0;
  double validation_fraction = 0.0;
  std::size_t test_count = 0;
  std::uint64_t seed = 0;
};

struct SplitResult {
  Dataset train;
  Dataset validation;
  Dataset test;
};

inline SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t k = ds.class_count;
  if (spec.train_count % k != 0 || spec.test_count % k != 0) {
    throw InsufficientSamples("train/test counts must be divisible by the class count");
  }
  if (spec.validation_fraction < 0.0 || spec.validation_fraction > 1.0) {
    throw ValidationError("validation fraction must be in [0,1]");
  }
  const std::size_t train_pc = spec.train_count / k;
  const std::size_t test_pc = spec.test_count / k;
  const std::size_t val_pc = static_cast<std::size_t>(
      std::llround(static_cast<double>(train_pc) * spec.validation_fraction));

  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t c = 0; c < k; ++c) {
    auto& pool = by_class[c];
    if (pool.size() < train_pc + test_pc) {
      throw InsufficientSamples("class " + std::to_string(c) + " has " +
                                std::to_string(pool.size()) + " samples, needs " +
                                std::to_string(train_pc + test_pc));
    }
    Rng rng(mix_seed(spec.seed, c));
    rng.shuffle(pool);
    for (std::size_t i = 0; i < train_pc - val_pc; ++i) train_idx.push_back(pool[i]);
    for (std::size_t i = train_pc - val_pc; i < train_pc; ++i) val_idx.push_back(pool[i]);
    for (std::size_t i = train_pc; i < train_pc + test_pc; ++i) test_idx.push_back(pool[i]);
  }

  SplitResult out;
  out.train = ds.subset(train_idx, "train");
  out.validation = ds.subset(val_idx, "validation");
  out.test = ds.subset(test_idx, "test");
  return out;
}

namespace detail {

struct Stroke {
  bool arc = false;
  // segment: p0 -> p1; arc: center p0, radius r, angles [a0, a1]
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double r = 0, a0 = 0, a1 = 0;
};

inline double segment_distance(double px, double py, const Stroke& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

inline double arc_distance(double px, double py, const Stroke& s) {
  const double vx = px - s.x0, vy = py - s.y0;
  double ang = std::atan2(vy, vx);
  // bring into [a0, a0 + 2pi)
  const double two_pi = 6.283185307179586476925286766559;
  while (ang < s.a0) ang += two_pi;
  if (ang <= s.a1) {
    return std::fabs(std::hypot(vx, vy) - s.r);
  }
  const double ex0 = s.x0 + s.r * std::cos(s.a0), ey0 = s.y0 + s.r * std::sin(s.a0);
  const double ex1 = s.x0 + s.r * std::cos(s.a1), ey1 = s.y0 + s.r * std::sin(s.a1);
  return std::min(std::hypot(px - ex0, py - ey0), std::hypot(px - ex1, py - ey1));
}

// Fixed per-class stroke composition in the unit square; independent of
// the dataset seed so class prototypes never collide across runs.
inline std::vector<Stroke> class_prototype(std::size_t class_index) {
  Rng rng(mix_seed(0x676c797068ULL, class_index));
  std::vector<Stroke> strokes;
  const std::size_t segments = 2 + rng.below(2);   // 2-3 line segments
  const std::size_t arcs = 1 + rng.below(2);       // 1-2 arcs
  for (std::size_t i = 0; i < segments; ++i) {
    Stroke s;
    s.x0 = rng.uniform(0.15, 0.85);
    s.y0 = rng.uniform(0.15, 0.85);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double len = rng.uniform(0.3, 0.6);
    s.x1 = std::clamp(s.x0 + len * std::cos(angle), 0.05, 0.95);
    s.y1 = std::clamp(s.y0 + len * std::sin(angle), 0.05, 0.95);
    strokes.push_back(s);
  }
  for (std::size_t i = 0; i < arcs; ++i) {
    Stroke s;
    s.arc = true;
    s.x0 = rng.uniform(0.3, 0.7);
    s.y0 = rng.uniform(0.3, 0.7);
    s.r = rng.uniform(0.12, 0.3);
    s.a0 = rng.uniform(0.0, 6.283185307179586);
    s.a1 = s.a0 + rng.uniform(2.0, 6.0);
    strokes.push_back(s);
  }
  return strokes;
}

}  // namespace detail

// Procedurally rendered stroke glyphs: K distinct line/arc prototypes
// rasterized at 32x32 with per-sample affine jitter (rotation up to 15
// degrees, translation up to 3px, scale 0.85-1.15, all scaled by
// `jitter`) and additive Gaussian pixel noise of the given strength.
// Deterministic under the seed.
inline Dataset synth_glyphs(std::uint64_t seed, std::size_t class_count, std::size_t per_class,
                            double noise = 0.05, double jitter = 1.0,
                            std::size_t channels = 3) {
  if (class_count < 1 || class_count > 64) {
    throw ValidationError("synth_glyphs supports 1..64 classes");
  }
  if (per_class < 1) throw ValidationError("per_class must be >= 1");
  Dataset ds;
  ds.class_count = class_count;
  ds.split_tag = "synthetic";
  ds.images = Tensor({class_count * per_class, channels, 32, 32});
  ds.labels.resize(class_count * per_class);

  const double sigma = 0.045;  // stroke half-width in unit coordinates
  for (std::size_t c = 0; c < class_count; ++c) {
    const auto strokes = detail::class_prototype(c);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t sample = c * per_class + i;
      ds.labels[sample] = static_cast<int>(c);
      Rng rng(mix_seed(seed, sample));
      const double rot = rng.uniform(-0.2617993877991494, 0.2617993877991494) * jitter;
      const double tx = rng.uniform(-3.0 / 32.0, 3.0 / 32.0) * jitter;
      const double ty = rng.uniform(-3.0 / 32.0, 3.0 / 32.0) * jitter;
      const double sc = 1.0 + rng.uniform(-0.15, 0.15) * jitter;
      const double cos_r = std::cos(rot), sin_r = std::sin(rot);

      double* first_plane = ds.images.data() + sample * channels * 32 * 32;
      for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) {
          // inverse affine map of the pixel center into prototype space
          const double px = (static_cast<double>(x) + 0.5) / 32.0 - 0.5 - tx;
          const double py = (static_cast<double>(y) + 0.5) / 32.0 - 0.5 - ty;
          const double ux = (cos_r * px + sin_r * py) / sc + 0.5;
          const double uy = (-sin_r * px + cos_r * py) / sc + 0.5;
          double v = 0.0;
          for (const detail::Stroke& s : strokes) {
            const double d = s.arc ? detail::arc_distance(ux, uy, s)
                                   : detail::segment_distance(ux, uy, s);
            const double z = d / sigma;
            v = std::max(v, std::exp(-z * z));
          }
          if (noise > 0.0) v += noise * rng.normal();
          first_plane[y * 32 + x] = std::clamp(v, 0.0, 1.0);
        }
      }
      for (std::size_t ch = 1; ch < channels; ++ch) {
        std::copy(first_plane, first_plane + 32 * 32, first_plane + ch * 32 * 32);
      }
    }
  }
  ds.validate();
  return ds;
}

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DatasetLoadError("truncated dataset cache");
  }
  std::uint16_t u16() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 2;
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  }
};

}  // namespace detail

// Flat binary cache: magic "CHDS", version u16, then K, N, C as u32,
// labels as u16 little-endian, image data as little-endian float32. The
// float32 image payload is lossy relative to the in-memory doubles.
inline void save_dataset_cache(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::string out;
  out += "CHDS";
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.class_count));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.channels()));
  for (int y : ds.labels) detail::put_u16(out, static_cast<std::uint16_t>(y));
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    detail::put_f32(out, static_cast<float>(ds.images[i]));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DatasetLoadError("cannot write cache '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Dataset load_dataset_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetLoadError("cannot open cache '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r{buf};
  r.need(4);
  if (buf.compare(0, 4, "CHDS") != 0) throw DatasetLoadError("bad cache magic in '" + path + "'");
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != 1) throw DatasetLoadError("unsupported cache version " + std::to_string(version));
  const std::uint32_t k = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint32_t c = r.u32();
  Dataset ds;
  ds.class_count = k;
  ds.split_tag = "cache";
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(r.u16());
  ds.images = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(c), 32, 32});
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    ds.images[i] = std::clamp(static_cast<double>(r.f32()), 0.0, 1.0);
  }
  ds.validate();
  return ds;
}

// Resolves a --data argument: either "synth:k=K,n=N,seed=S[,noise=..,
// jitter=..]", a .chds cache file, or a directory-per-class tree (which
// then needs `classes` > 0).
inline Dataset resolve_data_spec(const std::string& spec, std::size_t classes = 0) {
  if (spec.rfind("synth:", 0) == 0) {
    std::size_t k = 10, n = 600;
    std::uint64_t seed = 1;
    double noise = 0.05, jitter = 1.0;
    for (const std::string& kv : split(spec.substr(6), ',')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("bad synth option '" + kv + "'");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "k") {
        k = static_cast<std::size_t>(parse_int(value, "synth k"));
      } else if (key == "n") {
        n = static_cast<std::size_t>(parse_int(value, "synth n"));
      } else if (key == "seed") {
        seed = static_cast<std::uint64_t>(parse_int(value, "synth seed"));
      } else if (key == "noise") {
        noise = parse_double(value, "synth noise");
      } else if (key == "jitter") {
        jitter = parse_double(value, "synth jitter");
      } else {
        throw ValidationError("unknown synth option '" + key + "'");
      }
    }
    if (n % k != 0) throw ValidationError("synth n must be divisible by k");
    return synth_glyphs(seed, k, n / k, noise, jitter);
  }
  if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".chds") {
    return load_dataset_cache(spec);
  }
  if (classes == 0) {
    throw ValidationError("loading an image tree needs a class count");
  }
  return load_image_dir(spec, classes);
}

}  // namespace glyphnet
