// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cdb/layers.hpp"

namespace cdb {

// Checkpoint layout, all integers and doubles little-endian:
//   "CDBK"                      4 bytes
//   version                     u16 (kCheckpointVersion)
//   topology descriptor         u32 length + UTF-8 bytes (Network::describe())
//   parameter count             u32
//   per parameter, in Network::params() order:
//     name                      u32 length + bytes ("<layer index>.<param name>")
//     rank                      u32
//     dims                      rank x u64
//     values                    prod(dims) x f64
//     momentum                  prod(dims) x f64
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Network& net);
/// Rebuilds the network from the stored topology and restores values and momentum.
Network decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);
/// Restores into an existing network; its topology must match the file's.
void load_checkpoint_into(Network& net, const std::filesystem::path& path);

}  // namespace cdb
