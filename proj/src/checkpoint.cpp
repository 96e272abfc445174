#include "boed/autodiff/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace boed::ad {

namespace {

constexpr char kMagic[8] = {'B', 'O', 'E', 'D', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T v) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    bytes.insert(bytes.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kCorrupt,
                            std::string("corrupt checkpoint: truncated while reading ") + what);
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

const Array& Checkpoint::tensor(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint has no tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string meta = ckpt.meta.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta.data(), meta.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw Error("checkpoint tensor name too long: " + t.name);
    if (t.value.rank() > 0xFF) throw Error("checkpoint tensor rank too large: " + t.name);
    if (!t.value.all_finite()) throw NumericalError("checkpoint tensor '" + t.name + "' is not finite");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(t.value.data(), t.value.size() * sizeof(double));
  }
  w.put<std::uint32_t>(crc32_of(w.bytes));
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using Kind = CheckpointError::Kind;
  Reader r(bytes);
  auto magic = r.take(sizeof(kMagic), "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw CheckpointError(Kind::kCorrupt, "corrupt checkpoint: bad magic bytes");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kUnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  auto meta_bytes = r.take(meta_len, "metadata");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    auto name = r.take(name_len, "tensor name");
    const auto rank = r.get<std::uint8_t>("tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("tensor dims");
      n *= d;
    }
    auto payload = r.take(n * sizeof(double), "tensor payload");
    std::vector<double> values(n);
    std::memcpy(values.data(), payload.data(), payload.size());
    ckpt.tensors.push_back({std::string(name.begin(), name.end()), Array(std::move(shape), std::move(values))});
  }
  const std::size_t body = r.position();
  const auto stored = r.get<std::uint32_t>("crc");
  if (r.position() != bytes.size()) {
    throw CheckpointError(Kind::kCorrupt, "corrupt checkpoint: trailing bytes after digest");
  }
  if (crc32_of(bytes.first(body)) != stored) {
    throw CheckpointError(Kind::kDigestMismatch, "checkpoint digest mismatch");
  }
  try {
    ckpt.meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("corrupt checkpoint metadata: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedTensor> to_tensors(const std::vector<const Parameter*>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back({p->name, p->value});
  return out;
}

void assign_from(const Checkpoint& ckpt, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const Array& v = ckpt.tensor(p->name);
    if (v.shape() != p->value.shape()) {
      throw CheckpointError(CheckpointError::Kind::kCorrupt,
                            "checkpoint tensor '" + p->name + "' has shape " + shape_string(v.shape()) +
                                ", expected " + shape_string(p->value.shape()));
    }
    p->value = v;
  }
}

}  // namespace boed::ad
