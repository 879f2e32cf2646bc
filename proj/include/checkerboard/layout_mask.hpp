#pragma once

// Flattened multiscale token layout and the blockwise causal attention mask.
//
// Slot 0 is the class token and forms block 0 on its own. Blocks follow in
// scale order, then in block order within a scale. A query sees every key in
// its own block and in all earlier blocks, so each row of the mask is a
// prefix [0, key_end(q)).

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "checkerboard/schedule.hpp"

namespace checkerboard {

struct LayoutEntry {
  int scale = 0;        // index into the schedule
  int block = 0;        // block index within the scale
  int global_block = 0; // block index in the global order (class token is 0)
  Position pos;
  std::size_t flat = 0; // token index in the sequence
};

struct SequenceLayout {
  static constexpr std::size_t class_token_slot = 0;
  std::vector<LayoutEntry> entries;  // entries[i].flat == i + 1
  std::size_t length = 1;            // 1 + total token count
  int num_blocks = 1;                // including the class token block
};

inline SequenceLayout build_layout(const BlockPartition& partition) {
  SequenceLayout layout;
  std::size_t flat = 1;
  int global_block = 1;
  for (std::size_t s = 0; s < partition.blocks.size(); ++s) {
    for (std::size_t b = 0; b < partition.blocks[s].size(); ++b) {
      for (const Position& p : partition.blocks[s][b].positions) {
        layout.entries.push_back(LayoutEntry{static_cast<int>(s), static_cast<int>(b), global_block, p, flat});
        ++flat;
      }
      ++global_block;
    }
  }
  layout.length = flat;
  layout.num_blocks = global_block;
  return layout;
}

class BlockCausalMask {
 public:
  BlockCausalMask() = default;

  explicit BlockCausalMask(const SequenceLayout& layout) {
    block_of_.assign(layout.length, 0);
    block_end_.assign(static_cast<std::size_t>(layout.num_blocks), 0);
    block_end_[0] = 1;
    for (const LayoutEntry& e : layout.entries) {
      block_of_[e.flat] = e.global_block;
      block_end_[static_cast<std::size_t>(e.global_block)] = e.flat + 1;
    }
  }

  std::size_t size() const { return block_of_.size(); }
  std::size_t num_blocks() const { return block_end_.size(); }
  int block_of(std::size_t t) const { return block_of_[t]; }
  std::size_t block_begin(std::size_t b) const { return b == 0 ? 0 : block_end_[b - 1]; }
  std::size_t block_end(std::size_t b) const { return block_end_[b]; }

  // Exclusive end of the visible key range for query q.
  std::size_t key_end(std::size_t q) const { return block_end_[static_cast<std::size_t>(block_of_[q])]; }

  bool allowed(std::size_t q, std::size_t k) const { return block_of_[k] <= block_of_[q]; }

 private:
  std::vector<int> block_of_;
  std::vector<std::size_t> block_end_;
};

inline BlockCausalMask build_mask(const SequenceLayout& layout) { return BlockCausalMask(layout); }

struct BitRows {
  std::size_t rows = 0;
  std::size_t words_per_row = 0;
  std::vector<std::uint64_t> bits;

  bool test(std::size_t q, std::size_t k) const {
    return (bits[q * words_per_row + k / 64] >> (k % 64)) & 1u;
  }
};

inline BitRows mask_to_bitrows(const BlockCausalMask& mask) {
  BitRows out;
  out.rows = mask.size();
  out.words_per_row = (out.rows + 63) / 64;
  out.bits.assign(out.rows * out.words_per_row, 0);
  for (std::size_t q = 0; q < out.rows; ++q) {
    const std::size_t end = mask.key_end(q);
    std::uint64_t* row = &out.bits[q * out.words_per_row];
    std::size_t k = 0;
    for (; k + 64 <= end; k += 64) row[k / 64] = ~std::uint64_t{0};
    if (k < end) row[k / 64] = (std::uint64_t{1} << (end - k)) - 1;
  }
  return out;
}

}  // namespace checkerboard
