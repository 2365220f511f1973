#include "saccade/targets.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

namespace saccade {

SaccadeRecord SaccadeRecord::make(std::uint32_t image_id, int label, std::vector<int> indices, int num_patches) {
  SaccadeRecord r;
  r.image_id = image_id;
  r.label = label;
  r.multi_hot.assign(static_cast<std::size_t>(num_patches), 0);
  for (int i : indices) {
    if (i < 0 || i >= num_patches) throw std::invalid_argument("SaccadeRecord: index " + std::to_string(i) + " out of range");
    r.multi_hot[static_cast<std::size_t>(i)] = 1;
  }
  r.indices = std::move(indices);
  r.validate(num_patches, static_cast<int>(r.indices.size()));
  return r;
}

void SaccadeRecord::validate(int num_patches, int k) const {
  auto fail = [&](const std::string& m) {
    throw std::invalid_argument("SaccadeRecord for image " + std::to_string(image_id) + ": " + m);
  };
  if (static_cast<int>(indices.size()) != k) fail("expected " + std::to_string(k) + " indices");
  if (static_cast<int>(multi_hot.size()) != num_patches) fail("multi-hot length differs from N");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= num_patches) fail("index out of range");
    if (i > 0 && indices[i] <= indices[i - 1]) fail("indices not strictly ascending");
  }
  int ones = 0;
  for (auto v : multi_hot) {
    if (v > 1) fail("multi-hot is not binary");
    ones += v;
  }
  if (ones != k) fail("multi-hot has " + std::to_string(ones) + " ones, expected " + std::to_string(k));
  for (int i : indices) {
    if (!multi_hot[static_cast<std::size_t>(i)]) fail("multi-hot disagrees with index list");
  }
}

// ------------------------------------------------------------------ encoding

namespace {

constexpr char kMagic[4] = {'S', 'A', 'C', 'T'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::size_t offset() const { return pos_; }
  bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  const std::uint8_t* raw() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_saccade_file(const SaccadeFile& file) {
  if (file.num_patches < 1 || file.num_patches > 65536 || file.k < 1 || file.k > file.num_patches) {
    throw std::invalid_argument("saccade file: invalid N/k header values");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(file.num_patches));
  put_u32(out, static_cast<std::uint32_t>(file.k));
  put_u32(out, static_cast<std::uint32_t>(file.records.size()));
  out.reserve(out.size() + file.records.size() * (6 + 2 * static_cast<std::size_t>(file.k)));
  for (const auto& r : file.records) {
    r.validate(file.num_patches, file.k);
    if (r.label < 0 || r.label > 0xFFFF) throw std::invalid_argument("saccade file: label does not fit in u16");
    put_u32(out, r.image_id);
    put_u16(out, static_cast<std::uint16_t>(r.label));
    for (int i : r.indices) put_u16(out, static_cast<std::uint16_t>(i));
  }
  return out;
}

SaccadeFile decode_saccade_file(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (!in.has(kSaccadeHeaderBytes)) {
    throw FormatError("saccade file: truncated header (" + std::to_string(bytes.size()) + " bytes, need " +
                      std::to_string(kSaccadeHeaderBytes) + ")");
  }
  if (std::memcmp(in.raw(), kMagic, 4) != 0) throw FormatError("saccade file: bad magic at offset 0");
  in.skip(4);
  std::uint16_t version = in.u16();
  if (version != kVersion) {
    throw FormatError("saccade file: unsupported version " + std::to_string(version) + " at offset 4");
  }
  in.u16();  // reserved
  SaccadeFile file;
  std::uint32_t n = in.u32(), k = in.u32(), count = in.u32();
  if (n < 1 || n > 65536 || k < 1 || k > n) {
    throw FormatError("saccade file: invalid N=" + std::to_string(n) + " / k=" + std::to_string(k) + " at offset 8");
  }
  file.num_patches = static_cast<int>(n);
  file.k = static_cast<int>(k);
  const std::size_t rec_bytes = 6 + 2 * static_cast<std::size_t>(k);
  file.records.reserve(std::min<std::size_t>(count, in.remaining() / rec_bytes));
  for (std::uint32_t r = 0; r < count; ++r) {
    if (!in.has(rec_bytes)) {
      throw FormatError("saccade file: record " + std::to_string(r) + " of " + std::to_string(count) +
                        " truncated at offset " + std::to_string(in.offset()));
    }
    const std::size_t at = in.offset();
    std::uint32_t id = in.u32();
    int label = in.u16();
    std::vector<int> idx(k);
    for (auto& i : idx) i = in.u16();
    try {
      file.records.push_back(SaccadeRecord::make(id, label, std::move(idx), file.num_patches));
    } catch (const std::invalid_argument& e) {
      throw FormatError("saccade file: record " + std::to_string(r) + " at offset " + std::to_string(at) +
                        " is invalid: " + e.what());
    }
  }
  if (in.remaining() != 0) {
    throw FormatError("saccade file: " + std::to_string(in.remaining()) + " trailing bytes at offset " +
                      std::to_string(in.offset()) + " after " + std::to_string(count) + " records");
  }
  return file;
}

void write_saccade_file(const std::filesystem::path& path, const SaccadeFile& file) {
  auto bytes = encode_saccade_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

SaccadeFile read_saccade_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_saccade_file(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------------ building

std::vector<SaccadeRecord> build_saccade_targets(const ParamSet& teacher_params, const ViTConfig& teacher_config,
                                                 const Dataset& dataset, int k, HeadFusion fusion, int batch_size) {
  teacher_config.validate();
  if (dataset.image_size != teacher_config.image_size) {
    throw std::invalid_argument("build_saccade_targets: teacher expects " + std::to_string(teacher_config.image_size) +
                                " px images, dataset has " + std::to_string(dataset.image_size));
  }
  const int n = teacher_config.num_patches();
  if (k < 1 || k > n) throw std::out_of_range("build_saccade_targets: k outside [1, N]");
  NoGradGuard no_grad;
  std::vector<SaccadeRecord> out;
  out.reserve(dataset.size());
  std::vector<std::size_t> which;
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch_size)) {
    which.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      which.push_back(i);
    }
    std::vector<AttentionStack> stacks;
    ForwardOptions opts;
    opts.attention = &stacks;
    vit_forward(make_batch(dataset.records, which), teacher_params, teacher_config, opts);
    for (std::size_t b = 0; b < which.size(); ++b) {
      const ImageRecord& img = dataset.records[which[b]];
      try {
        HeatMap heat = rollout_heat(stacks[b], fusion);
        out.push_back(SaccadeRecord::make(img.id, img.label, topk_indices(heat.heat, k), n));
      } catch (const std::exception& e) {
        throw std::runtime_error("build_saccade_targets: image " + std::to_string(img.id) + ": " + e.what());
      }
    }
  }
  return out;
}

}  // namespace saccade
