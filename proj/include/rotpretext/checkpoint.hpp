#pragma once

#include <string>
#include <vector>

#include "rotpretext/tensor.hpp"

namespace rotpretext {

/// Checkpoint container: magic "RPCK", version u32, then named parameter
/// records until end of file. Each record is name length (u32), UTF-8 name,
/// rank (u32), extents (u32 x rank), then the little-endian f32 payload.
/// Record order is preserved across save/load.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

inline constexpr char kCheckpointMagic[4] = {'R', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/// Text blobs (the model's metadata section) ride inside an ordinary record:
/// the UTF-8 bytes are zero-padded to a multiple of four and stored as a
/// rank-1 f32 record, so any reader of the container format can skip them.
Tensor pack_text(const std::string& text);
std::string unpack_text(const Tensor& t);

}  // namespace rotpretext
