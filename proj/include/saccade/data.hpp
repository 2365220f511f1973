#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "saccade/rng.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

/// Malformed on-disk data (dataset binaries, saccade files, checkpoints).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One image in CHW layout with values in [0, 1].
struct ImageRecord {
  std::uint32_t id = 0;
  int label = 0;
  int channels = 3;
  int size = 0;  // square images only
  std::vector<float> pixels;
  /// Optional size x size occupancy mask of the object (synthetic data only).
  std::vector<std::uint8_t> mask;

  float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * size + y) * size + x]; }
  float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * size + y) * size + x]; }
};

struct Dataset {
  std::vector<ImageRecord> records;
  int num_classes = 0;
  int image_size = 0;

  std::size_t size() const { return records.size(); }
};

// ------------------------------------------------------------------ CIFAR-100

inline constexpr std::size_t kCifarRecordBytes = 3074;
inline constexpr int kCifarImageSize = 32;
inline constexpr int kCifarClasses = 100;

enum class CifarSplit { train, validation, test };

/// Parses a CIFAR-100 binary file (coarse byte, fine byte, 3072 plane-major
/// pixel bytes per record). Record ids are file positions.
Dataset read_cifar100_file(const std::filesystem::path& path);

/// Reads `train.bin` or `test.bin` from `dir`. The train file is divided
/// into fixed train / validation parts (90 / 10 by id).
Dataset read_cifar100(const std::filesystem::path& dir, CifarSplit split);

/// Deterministic id-based hold-out: a fixed-seed permutation of the ids
/// assigns round(fraction * total) of them to validation.
std::vector<bool> validation_mask(std::size_t total, double fraction = 0.1);

// ------------------------------------------------------------ synthetic data

inline constexpr int kShapeClasses = 3;  // circle, square, triangle

/// n images with one bright shape on a dark noisy background. Same seed,
/// same bytes. Every record carries its object mask.
Dataset gen_shapes(int n, std::uint64_t seed, int image_size = 64);

// -------------------------------------------------------------- augmentation

struct CropOptions {
  double scale_lo = 0.5, scale_hi = 1.0;
  double ratio_lo = 3.0 / 4.0, ratio_hi = 4.0 / 3.0;
};

/// Random area/aspect crop resized bilinearly to out_size (masks use
/// nearest neighbour). Falls back to a center crop after 10 rejected draws.
ImageRecord random_resized_crop(const ImageRecord& img, Rng& rng, int out_size, CropOptions opts = {});

/// Mirror across the vertical axis with probability p.
ImageRecord hflip(const ImageRecord& img, Rng& rng, double p = 0.5);

// -------------------------------------------------------------------- batches

/// Stacks the selected records into [B x C x H x W].
Tensor make_batch(const std::vector<ImageRecord>& records, std::span<const std::size_t> which);
Tensor image_tensor(const ImageRecord& img);

/// Per-patch occupancy: patch i is set when any mask pixel falls inside it.
std::vector<std::uint8_t> patch_occupancy(const ImageRecord& img, int patch_size);

}  // namespace saccade
