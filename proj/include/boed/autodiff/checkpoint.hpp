#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "boed/autodiff/graph.hpp"
#include "boed/error.hpp"

namespace boed::ad {

/// Binary checkpoint layout (all integers little-endian):
///
///   "BOEDCKPT" | u32 version | u32 meta_len | meta_len bytes of UTF-8 JSON
///   | u32 tensor_count | per tensor: u16 name_len, name, u8 rank, u32 dims[rank],
///     f64 payload[prod(dims)] | u32 CRC-32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { kCorrupt, kDigestMismatch, kUnsupportedVersion, kIo };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  Array value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Array& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameter values into a tensor list.
std::vector<NamedTensor> to_tensors(const std::vector<const Parameter*>& params);
/// Assigns stored values to parameters by name; missing names or shape changes throw.
void assign_from(const Checkpoint& ckpt, const std::vector<Parameter*>& params);

/// CRC-32 (IEEE) of a byte range.
std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace boed::ad
