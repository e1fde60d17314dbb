#include "fsnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fsnas/error.hpp"
#include "fsnas/hash.hpp"

namespace fsnas::data {

namespace {
constexpr std::uint32_t kMagic = 0x31445346u;  // "FSD1" little-endian
constexpr std::uint32_t kVersion = 1u;
}  // namespace

std::vector<int> Dataset::indices_of(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (split_tag[static_cast<std::size_t>(i)] == static_cast<std::uint8_t>(s))
      out.push_back(i);
  return out;
}

std::uint64_t Dataset::content_hash() const {
  ContentHasher h;
  h.update(name);
  h.update_pod(num_classes);
  for (int d : images.shape()) h.update_pod(d);
  h.update(images.data(), images.values().size() * sizeof(float));
  h.update_vec(labels);
  h.update_vec(split_tag);
  return h.digest();
}

void Dataset::validate() const {
  check(images.defined() && images.ndim() == 4 && images.dim(1) == 3,
        ErrorCode::Config, "dataset images must be [N,3,H,W]");
  const int n = size();
  check(static_cast<int>(labels.size()) == n &&
            static_cast<int>(split_tag.size()) == n,
        ErrorCode::Config, "dataset label/tag counts must match image count");
  for (int l : labels)
    check(l >= 0 && l < num_classes, ErrorCode::Config,
          "dataset label " + std::to_string(l) + " outside [0," +
              std::to_string(num_classes) + ")");
}

Dataset gen_synthetic(int num_classes, int per_class, int resolution,
                      double difficulty, std::uint64_t seed,
                      double val_fraction) {
  check(resolution >= 8, ErrorCode::Config, "synthetic resolution must be >= 8");
  check(num_classes >= 2 && per_class >= 1, ErrorCode::Config,
        "synthetic dataset needs >= 2 classes and >= 1 image per class");
  check(val_fraction >= 0.0 && val_fraction < 1.0, ErrorCode::Config,
        "val_fraction must be in [0, 1)");

  const int n = num_classes * per_class;
  const int res = resolution;
  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = num_classes;
  ds.images = TensorF({n, 3, res, res});
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.split_tag.resize(static_cast<std::size_t>(n));

  Rng rng(seed);
  const int orientations = (num_classes + 1) / 2;
  const int val_per_class = static_cast<int>(std::floor(per_class * val_fraction));
  const double f1 = 2.0;   // cycles per image, coarse band
  const double f2 = 4.0;   // fine band, phase-locked to the coarse one
  const double noise_sigma = (0.04 + 0.06 * difficulty);
  const double distractor_amp = 0.05 + 0.05 * difficulty;
  const double tau = 6.283185307179586;

  int item = 0;
  for (int cls = 0; cls < num_classes; ++cls) {
    const int orient = cls % orientations;
    const int parity = cls / orientations;
    const double theta_base = 3.141592653589793 * orient / orientations;
    for (int i = 0; i < per_class; ++i, ++item) {
      ds.labels[static_cast<std::size_t>(item)] = cls;
      ds.split_tag[static_cast<std::size_t>(item)] = static_cast<std::uint8_t>(
          i >= per_class - val_per_class ? Split::Val : Split::Train);

      const double theta = theta_base + rng.uniform(-0.07, 0.07);
      const double phase = rng.uniform(0.0, tau);
      // the fine band's phase offset relative to the coarse band carries
      // the parity bit; absolute phase is uninformative
      const double rel = parity == 0 ? 0.0 : 0.5 * 3.141592653589793;
      const double ct = std::cos(theta), st = std::sin(theta);
      const double dtheta = rng.uniform(0.0, 3.141592653589793);
      const double dfreq = rng.uniform(2.0, 6.0);
      const double dphase = rng.uniform(0.0, tau);
      const double dct = std::cos(dtheta), dst = std::sin(dtheta);
      const double tint[3] = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04),
                              rng.uniform(-0.04, 0.04)};

      float* img = ds.images.data() +
                   static_cast<std::int64_t>(item) * 3 * res * res;
      for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
          const double u = (2.0 * x / (res - 1) - 1.0) * ct +
                           (2.0 * y / (res - 1) - 1.0) * st;
          const double ud = (2.0 * x / (res - 1) - 1.0) * dct +
                            (2.0 * y / (res - 1) - 1.0) * dst;
          const double g1 = std::sin(tau * f1 * u * 0.5 + phase);
          const double g2 = std::sin(tau * f2 * u * 0.5 + 2.0 * phase + rel);
          const double dg = std::sin(tau * dfreq * ud * 0.5 + dphase);
          const double base = 0.5 + 0.16 * g1 + 0.16 * g2 + distractor_amp * dg;
          for (int c = 0; c < 3; ++c) {
            const double v = base * (1.0 + tint[c]) +
                             noise_sigma * rng.normal();
            img[(static_cast<std::int64_t>(c) * res + y) * res + x] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
    }
  }
  ds.validate();
  return ds;
}

Dataset load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::Io, "cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t file_size = in.tellg();
  in.seekg(0);
  check(file_size >= 16, ErrorCode::Format,
        path + ": short header, file has " + std::to_string(file_size) +
            " bytes, need 16");

  std::uint32_t magic = 0, version = 0, n = 0;
  std::uint16_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&h), 2);
  in.read(reinterpret_cast<char*>(&w), 2);
  in.read(reinterpret_cast<char*>(&n), 4);
  check(magic == kMagic, ErrorCode::Format,
        path + ": bad magic at byte offset 0");
  check(version == kVersion, ErrorCode::Format,
        path + ": unsupported version at byte offset 4");
  check(h >= 1 && w >= 1 && n >= 1, ErrorCode::Format,
        path + ": degenerate dims in header");

  const std::int64_t record = 1 + 3LL * h * w;
  const std::int64_t expected = 16 + record * n;
  check(file_size == expected, ErrorCode::Format,
        path + ": expected " + std::to_string(expected) + " bytes, got " +
            std::to_string(file_size) + " (truncated at offset " +
            std::to_string(file_size) + ")");

  Dataset ds;
  ds.name = path;
  ds.images = TensorF({static_cast<int>(n), 3, h, w});
  ds.labels.resize(n);
  ds.split_tag.assign(n, static_cast<std::uint8_t>(Split::Train));
  std::vector<unsigned char> buf(static_cast<std::size_t>(record));
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), record);
    check(in.good(), ErrorCode::Format,
          path + ": truncated record at offset " + std::to_string(16 + record * i));
    ds.labels[i] = buf[0];
    max_label = std::max(max_label, static_cast<int>(buf[0]));
    float* img = ds.images.data() + static_cast<std::int64_t>(i) * 3 * h * w;
    for (std::int64_t p = 0; p < 3LL * h * w; ++p)
      img[p] = static_cast<float>(buf[1 + p]) / 255.0f;
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_binary(const std::string& path, const Dataset& ds) {
  ds.validate();
  check(ds.num_classes <= 256, ErrorCode::Config,
        "binary format stores labels in one byte");
  const int h = ds.images.dim(2), w = ds.images.dim(3);
  check(h <= 65535 && w <= 65535, ErrorCode::Config, "resolution exceeds format");
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCode::Io, "cannot write " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(ds.size());
  const auto h16 = static_cast<std::uint16_t>(h);
  const auto w16 = static_cast<std::uint16_t>(w);
  out.write(reinterpret_cast<const char*>(&kMagic), 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&h16), 2);
  out.write(reinterpret_cast<const char*>(&w16), 2);
  out.write(reinterpret_cast<const char*>(&n), 4);
  std::vector<unsigned char> buf(static_cast<std::size_t>(1 + 3LL * h * w));
  for (int i = 0; i < ds.size(); ++i) {
    buf[0] = static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(i)]);
    const float* img = ds.images.data() + static_cast<std::int64_t>(i) * 3 * h * w;
    for (std::int64_t p = 0; p < 3LL * h * w; ++p) {
      const float v = std::clamp(img[p], 0.0f, 1.0f);
      buf[1 + p] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
  check(out.good(), ErrorCode::Io, "write failed for " + path);
}

Dataset select(const Dataset& ds, const std::vector<int>& indices) {
  Dataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  const int h = ds.images.dim(2), w = ds.images.dim(3);
  out.images = TensorF({static_cast<int>(indices.size()), 3, h, w});
  out.labels.reserve(indices.size());
  out.split_tag.reserve(indices.size());
  const std::int64_t item = 3LL * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    check(src >= 0 && src < ds.size(), ErrorCode::Usage, "select index out of range");
    std::memcpy(out.images.data() + static_cast<std::int64_t>(i) * item,
                ds.images.data() + static_cast<std::int64_t>(src) * item,
                sizeof(float) * static_cast<std::size_t>(item));
    out.labels.push_back(ds.labels[static_cast<std::size_t>(src)]);
    out.split_tag.push_back(ds.split_tag[static_cast<std::size_t>(src)]);
  }
  return out;
}

Dataset subset(const Dataset& ds, double fraction, std::uint64_t seed) {
  check(fraction > 0.0 && fraction <= 1.0, ErrorCode::Config,
        "subset fraction must be in (0, 1]");
  if (fraction == 1.0) return select(ds, [&] {
        std::vector<int> all(static_cast<std::size_t>(ds.size()));
        for (int i = 0; i < ds.size(); ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
      }());

  std::vector<std::vector<int>> per_class(static_cast<std::size_t>(ds.num_classes));
  for (int i = 0; i < ds.size(); ++i)
    per_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]
        .push_back(i);

  Rng rng(seed);
  std::vector<int> chosen;
  for (int cls = 0; cls < ds.num_classes; ++cls) {
    auto& pool = per_class[static_cast<std::size_t>(cls)];
    if (pool.empty()) continue;
    const int take = static_cast<int>(std::floor(pool.size() * fraction));
    check(take >= 1, ErrorCode::Config,
          "subset fraction too small for one item of class " +
              std::to_string(cls));
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(chosen.begin(), chosen.end());  // preserve original order
  return select(ds, chosen);
}

void gather_batch(const Dataset& ds, const std::vector<int>& indices,
                  TensorF& images, std::vector<int>& labels) {
  const int h = ds.images.dim(2), w = ds.images.dim(3);
  images = TensorF({static_cast<int>(indices.size()), 3, h, w});
  labels.resize(indices.size());
  const std::int64_t item = 3LL * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    std::memcpy(images.data() + static_cast<std::int64_t>(i) * item,
                ds.images.data() + static_cast<std::int64_t>(src) * item,
                sizeof(float) * static_cast<std::size_t>(item));
    labels[i] = ds.labels[static_cast<std::size_t>(src)];
  }
}

std::vector<std::vector<int>> batch_schedule(std::vector<int> indices,
                                             int batch_size, bool shuffle,
                                             Rng& rng, bool drop_last) {
  check(batch_size >= 1, ErrorCode::Config, "batch_size must be >= 1");
  if (shuffle) rng.shuffle(indices);
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    if (drop_last && end - start < static_cast<std::size_t>(batch_size)) break;
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(start),
                     indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace fsnas::data
