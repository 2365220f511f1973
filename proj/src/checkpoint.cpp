#include "saccade/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "saccade/data.hpp"

namespace saccade {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'N', 'W'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename U>
void put_int(std::vector<std::uint8_t>& out, U v) {
  put(out, &v, sizeof v);
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const std::string& what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("checkpoint: truncated " + what + " at offset " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }
  template <typename U>
  U get(const std::string& what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  void copy(void* dst, std::size_t n, const std::string& what) {
    need(n, what);
    if (n) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_int<std::uint16_t>(out, kVersion);
  put_int<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params.entries()) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: tensor name too long");
    if (t.rank() > 0xFF) throw std::invalid_argument("checkpoint: tensor rank too large");
    put_int<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    put(out, name.data(), name.size());
    put_int<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) put_int<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto data = t.data();
    put(out, data.data(), data.size() * sizeof(float));
  }
  const std::string doc = ckpt.config.dump();
  put_int<std::uint32_t>(out, static_cast<std::uint32_t>(doc.size()));
  put(out, doc.data(), doc.size());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Cursor in(bytes);
  char magic[4];
  in.copy(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic at offset 0");
  auto version = in.get<std::uint16_t>("version");
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  auto count = in.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string which = "tensor " + std::to_string(i);
    auto len = in.get<std::uint16_t>(which + " name length");
    std::string name(len, '\0');
    in.copy(name.data(), len, which + " name");
    auto rank = in.get<std::uint8_t>(which + " rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<int>(in.get<std::uint32_t>(which + " dims"));
      if (d < 1) throw FormatError("checkpoint: " + which + " ('" + name + "') has a zero dimension");
      numel *= static_cast<std::size_t>(d);
    }
    if (numel > in.remaining() / sizeof(float)) {
      throw FormatError("checkpoint: truncated data of " + which + " ('" + name + "') at offset " +
                        std::to_string(in.offset()));
    }
    std::vector<float> data(numel);
    in.copy(data.data(), numel * sizeof(float), which + " data");
    if (ckpt.params.contains(name)) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    ckpt.params.add(name, Tensor(shape, std::move(data)));
  }
  auto doc_len = in.get<std::uint32_t>("config length");
  std::string doc(doc_len, '\0');
  in.copy(doc.data(), doc_len, "config document");
  if (in.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(in.remaining()) + " trailing bytes at offset " +
                      std::to_string(in.offset()));
  }
  try {
    ckpt.config = Json::parse(doc);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: config sidecar is not valid JSON: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void check_compatible(const ParamSet& expected, const ParamSet& loaded, std::string_view what) {
  auto fail = [&](const std::string& m) { throw std::invalid_argument(std::string(what) + ": " + m); };
  if (expected.size() != loaded.size()) {
    fail("expected " + std::to_string(expected.size()) + " tensors, found " + std::to_string(loaded.size()));
  }
  for (const auto& [name, t] : expected.entries()) {
    if (!loaded.contains(name)) fail("missing tensor '" + name + "'");
    if (loaded.get(name).shape() != t.shape()) {
      fail("tensor '" + name + "' has shape " + shape_str(loaded.get(name).shape()) + ", expected " +
           shape_str(t.shape()));
    }
  }
}

}  // namespace saccade
