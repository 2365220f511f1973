#include "saccade/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

namespace saccade {

// ------------------------------------------------------------------ CIFAR-100

Dataset read_cifar100_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR-100 file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    std::size_t whole = bytes.size() / kCifarRecordBytes;
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(kCifarRecordBytes) + "; partial record at byte offset " +
                      std::to_string(whole * kCifarRecordBytes));
  }
  Dataset ds;
  ds.num_classes = kCifarClasses;
  ds.image_size = kCifarImageSize;
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  const std::size_t plane = static_cast<std::size_t>(kCifarImageSize) * kCifarImageSize;
  ds.records.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    ImageRecord img;
    img.id = static_cast<std::uint32_t>(r);
    img.label = rec[1];
    if (img.label >= kCifarClasses) {
      throw FormatError(path.string() + ": fine label " + std::to_string(img.label) + " out of range at byte offset " +
                        std::to_string(r * kCifarRecordBytes + 1));
    }
    img.channels = 3;
    img.size = kCifarImageSize;
    img.pixels.resize(3 * plane);
    for (std::size_t i = 0; i < 3 * plane; ++i) img.pixels[i] = static_cast<float>(rec[2 + i]) / 255.0f;
    ds.records.push_back(std::move(img));
  }
  return ds;
}

std::vector<bool> validation_mask(std::size_t total, double fraction) {
  std::vector<std::uint32_t> ids(total);
  std::iota(ids.begin(), ids.end(), 0u);
  Rng rng(0x5ACCADE5EEDULL);
  rng.shuffle(ids.begin(), ids.end());
  std::vector<bool> mask(total, false);
  auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  for (std::size_t i = 0; i < held; ++i) mask[ids[i]] = true;
  return mask;
}

Dataset read_cifar100(const std::filesystem::path& dir, CifarSplit split) {
  if (split == CifarSplit::test) return read_cifar100_file(dir / "test.bin");
  Dataset all = read_cifar100_file(dir / "train.bin");
  auto held = validation_mask(all.size());
  Dataset out;
  out.num_classes = all.num_classes;
  out.image_size = all.image_size;
  for (auto& r : all.records) {
    if (held[r.id] == (split == CifarSplit::validation)) out.records.push_back(std::move(r));
  }
  return out;
}

// ------------------------------------------------------------ synthetic data

namespace {

bool inside_shape(int label, double px, double py, double cx, double cy, double size) {
  const double half = size / 2.0;
  switch (label) {
    case 0:  // circle
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= half * half;
    case 1:  // axis-aligned square
      return std::abs(px - cx) <= half && std::abs(py - cy) <= half;
    default: {  // upright isosceles triangle, apex at the top
      double t = (py - (cy - half)) / size;  // 0 at apex, 1 at base
      if (t < 0.0 || t > 1.0) return false;
      return std::abs(px - cx) <= half * t;
    }
  }
}

}  // namespace

Dataset gen_shapes(int n, std::uint64_t seed, int image_size) {
  if (n < 1) throw std::invalid_argument("gen_shapes: n must be >= 1");
  if (image_size < 32) throw std::invalid_argument("gen_shapes: image_size must be >= 32");
  Dataset ds;
  ds.num_classes = kShapeClasses;
  ds.image_size = image_size;
  ds.records.reserve(static_cast<std::size_t>(n));
  Rng rng(seed);
  const std::size_t plane = static_cast<std::size_t>(image_size) * image_size;
  for (int i = 0; i < n; ++i) {
    ImageRecord img;
    img.id = static_cast<std::uint32_t>(i);
    img.label = rng.uniform_int(0, kShapeClasses - 1);
    img.channels = 3;
    img.size = image_size;
    img.pixels.resize(3 * plane);
    img.mask.assign(plane, 0);

    const int size = rng.uniform_int(12, 28);
    const double half = size / 2.0;
    const double cx = rng.uniform(half, image_size - half);
    const double cy = rng.uniform(half, image_size - half);
    float color[3];
    for (float& c : color) c = static_cast<float>(rng.uniform(0.6, 1.0));

    for (int y = 0; y < image_size; ++y) {
      for (int x = 0; x < image_size; ++x) {
        const bool on = inside_shape(img.label, x + 0.5, y + 0.5, cx, cy, size);
        img.mask[static_cast<std::size_t>(y) * image_size + x] = on ? 1 : 0;
        for (int c = 0; c < 3; ++c) {
          const auto noise = static_cast<float>(rng.uniform(0.0, 0.1));
          img.at(c, y, x) = on ? color[c] - noise : noise;
        }
      }
    }
    // Very small triangles can rasterize to nothing on a coarse grid.
    if (std::all_of(img.mask.begin(), img.mask.end(), [](std::uint8_t m) { return m == 0; })) {
      int px = static_cast<int>(cx), py = static_cast<int>(cy);
      img.mask[static_cast<std::size_t>(py) * image_size + px] = 1;
      for (int c = 0; c < 3; ++c) img.at(c, py, px) = color[c];
    }
    ds.records.push_back(std::move(img));
  }
  return ds;
}

// -------------------------------------------------------------- augmentation

namespace {

struct CropBox {
  int top, left, height, width;
};

CropBox sample_crop(int h, int w, Rng& rng, const CropOptions& opts) {
  const double area = static_cast<double>(h) * w;
  const double log_lo = std::log(opts.ratio_lo), log_hi = std::log(opts.ratio_hi);
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * rng.uniform(opts.scale_lo, opts.scale_hi);
    double aspect = std::exp(rng.uniform(log_lo, log_hi));
    int cw = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    int ch = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (cw > 0 && ch > 0 && cw <= w && ch <= h) {
      int top = rng.uniform_int(0, h - ch);
      int left = rng.uniform_int(0, w - cw);
      return {top, left, ch, cw};
    }
  }
  double in_ratio = static_cast<double>(w) / h;
  int cw = w, ch = h;
  if (in_ratio < opts.ratio_lo) {
    ch = static_cast<int>(std::lround(cw / opts.ratio_lo));
  } else if (in_ratio > opts.ratio_hi) {
    cw = static_cast<int>(std::lround(ch * opts.ratio_hi));
  }
  return {(h - ch) / 2, (w - cw) / 2, ch, cw};
}

// Half-pixel-centre source coordinate, clamped to the crop.
void source_coord(int dst, int out_size, int start, int extent, int& i0, int& i1, float& frac) {
  double s = (dst + 0.5) * static_cast<double>(extent) / out_size - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
  int base = static_cast<int>(std::floor(s));
  i0 = start + base;
  i1 = start + std::min(base + 1, extent - 1);
  frac = static_cast<float>(s - base);
}

}  // namespace

ImageRecord random_resized_crop(const ImageRecord& img, Rng& rng, int out_size, CropOptions opts) {
  if (out_size < 1) throw std::invalid_argument("random_resized_crop: out_size must be positive");
  CropBox box = sample_crop(img.size, img.size, rng, opts);
  ImageRecord out;
  out.id = img.id;
  out.label = img.label;
  out.channels = img.channels;
  out.size = out_size;
  out.pixels.resize(static_cast<std::size_t>(img.channels) * out_size * out_size);
  if (!img.mask.empty()) out.mask.resize(static_cast<std::size_t>(out_size) * out_size);

  for (int y = 0; y < out_size; ++y) {
    int y0, y1;
    float fy;
    source_coord(y, out_size, box.top, box.height, y0, y1, fy);
    for (int x = 0; x < out_size; ++x) {
      int x0, x1;
      float fx;
      source_coord(x, out_size, box.left, box.width, x0, x1, fx);
      for (int c = 0; c < img.channels; ++c) {
        // lerp form keeps constant regions exactly constant
        float p00 = img.at(c, y0, x0), p01 = img.at(c, y0, x1);
        float p10 = img.at(c, y1, x0), p11 = img.at(c, y1, x1);
        float top = p00 + (p01 - p00) * fx;
        float bottom = p10 + (p11 - p10) * fx;
        out.at(c, y, x) = top + (bottom - top) * fy;
      }
      if (!img.mask.empty()) {
        int ny = fy < 0.5f ? y0 : y1, nx = fx < 0.5f ? x0 : x1;
        out.mask[static_cast<std::size_t>(y) * out_size + x] =
            img.mask[static_cast<std::size_t>(ny) * img.size + nx];
      }
    }
  }
  return out;
}

ImageRecord hflip(const ImageRecord& img, Rng& rng, double p) {
  if (p <= 0.0 || !rng.bernoulli(p)) return img;
  ImageRecord out = img;
  const int s = img.size;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) out.at(c, y, x) = img.at(c, y, s - 1 - x);
    }
  }
  if (!img.mask.empty()) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        out.mask[static_cast<std::size_t>(y) * s + x] = img.mask[static_cast<std::size_t>(y) * s + (s - 1 - x)];
      }
    }
  }
  return out;
}

// -------------------------------------------------------------------- batches

Tensor make_batch(const std::vector<ImageRecord>& records, std::span<const std::size_t> which) {
  if (which.empty()) throw std::invalid_argument("make_batch: empty selection");
  const ImageRecord& first = records.at(which[0]);
  const std::size_t per = first.pixels.size();
  std::vector<float> data;
  data.reserve(per * which.size());
  for (std::size_t i : which) {
    const ImageRecord& r = records.at(i);
    if (r.pixels.size() != per || r.size != first.size) {
      throw ShapeError("make_batch: record " + std::to_string(r.id) + " has a different image shape");
    }
    data.insert(data.end(), r.pixels.begin(), r.pixels.end());
  }
  return Tensor(Shape{static_cast<int>(which.size()), first.channels, first.size, first.size}, std::move(data));
}

Tensor image_tensor(const ImageRecord& img) {
  return Tensor(Shape{img.channels, img.size, img.size}, img.pixels);
}

std::vector<std::uint8_t> patch_occupancy(const ImageRecord& img, int patch_size) {
  if (img.mask.empty()) throw std::invalid_argument("patch_occupancy: record has no mask");
  if (patch_size < 1 || img.size % patch_size != 0) throw std::invalid_argument("patch_occupancy: bad patch size");
  const int g = img.size / patch_size;
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(g) * g, 0);
  for (int y = 0; y < img.size; ++y) {
    for (int x = 0; x < img.size; ++x) {
      if (img.mask[static_cast<std::size_t>(y) * img.size + x]) {
        occ[static_cast<std::size_t>(y / patch_size) * g + x / patch_size] = 1;
      }
    }
  }
  return occ;
}

}  // namespace saccade
