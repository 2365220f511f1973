#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "saccade/data.hpp"
#include "saccade/params.hpp"
#include "saccade/rollout.hpp"
#include "saccade/vit.hpp"

namespace saccade {

/// One selector training example: the teacher's top-k patches for an image.
struct SaccadeRecord {
  std::uint32_t image_id = 0;
  int label = 0;
  std::vector<int> indices;             // k strictly ascending patch indices
  std::vector<std::uint8_t> multi_hot;  // length N, ones exactly at `indices`

  static SaccadeRecord make(std::uint32_t image_id, int label, std::vector<int> indices, int num_patches);
  /// Throws std::invalid_argument if the index list and multi-hot disagree.
  void validate(int num_patches, int k) const;

  bool operator==(const SaccadeRecord&) const = default;
};

/// Saccade-target file: "SACT", u16 version (1), u16 reserved, u32 N,
/// u32 k, u32 record count, then per record u32 image id, u16 label and
/// k u16 indices. Little-endian throughout.
struct SaccadeFile {
  int num_patches = 0;
  int k = 0;
  std::vector<SaccadeRecord> records;
};

inline constexpr std::size_t kSaccadeHeaderBytes = 20;

std::vector<std::uint8_t> encode_saccade_file(const SaccadeFile& file);
SaccadeFile decode_saccade_file(std::span<const std::uint8_t> bytes);
void write_saccade_file(const std::filesystem::path& path, const SaccadeFile& file);
SaccadeFile read_saccade_file(const std::filesystem::path& path);

/// Teacher forward -> head fusion -> rollout -> CLS heat -> top-k for every
/// (un-augmented) image, in input order.
std::vector<SaccadeRecord> build_saccade_targets(const ParamSet& teacher_params, const ViTConfig& teacher_config,
                                                 const Dataset& dataset, int k,
                                                 HeadFusion fusion = HeadFusion::mean, int batch_size = 64);

}  // namespace saccade
