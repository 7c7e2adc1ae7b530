// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/sequencer.hpp"

namespace forge {

// Shard layout: magic "FRGSHRD1", then per sequence
//   u32 length L, L x i32 ids, L x u8 kinds, L x u8 loss_mask,
//   u32 span count, per span {u32 start, u32 length, u32 id bytes, id},
//   u32 doc count, per doc {u32 bytes, doc_id}
// All integers little-endian.
void write_shard(const std::filesystem::path& path, const std::vector<TokenSequence>& seqs);
std::vector<TokenSequence> read_shard(const std::filesystem::path& path);

// Writes shard-00000.bin, ... of at most per_shard sequences into dir plus
// index.json describing counts and rejected documents. Returns the index.
nlohmann::json write_shards(const std::filesystem::path& dir, const std::vector<TokenSequence>& seqs,
                            std::size_t per_shard, const PackStats& stats);

// Loads every shard listed in an index.json (paths relative to the index).
std::vector<TokenSequence> read_indexed_shards(const std::filesystem::path& index_path);

}  // namespace forge
