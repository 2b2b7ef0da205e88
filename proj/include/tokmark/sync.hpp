#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tokmark/image.hpp"

namespace tokmark {

/// Spread-spectrum synchronization layer. Four fixed 32-bit messages are
/// embedded per image quadrant through per-block orthogonal +-1 carriers;
/// their recovered layout identifies flips, rotations and corner-preserving
/// crops, which can then be inverted before token-level detection.
struct SyncConfig {
    std::array<uint32_t, 4> messages{0x00000000u, 0x0000FFFFu, 0xFFFF0000u,
                                     0xFFFFFFFFu};
    int strip_width = 0;  // central cross kept free of messages, in pixels
    int block_size = 8;   // b; must divide the image dimensions
    double alpha = 0.008; // embedding amplitude
    uint64_t sync_key = 0;

    void validate() const;
};

struct BlockDecode {
    uint32_t word = 0;       // decoded 32-bit message
    double confidence = 0.0; // calibrated to [0,1]
    int matched = -1;        // canonical message index, or -1
};

struct MessageGrid {
    int rows = 0;
    int cols = 0;
    int block_size = 0;
    std::vector<BlockDecode> blocks;

    const BlockDecode& at(int r, int c) const {
        return blocks[size_t(r) * size_t(cols) + size_t(c)];
    }
    BlockDecode& at(int r, int c) {
        return blocks[size_t(r) * size_t(cols) + size_t(c)];
    }
    int matched_count() const;
};

enum class SyncDecision : uint8_t { revert, keep_intact };

struct TransformEstimate {
    double rotation_deg = 0.0;
    int split_row = 0; // pixel row of the quadrant boundary in the incoming frame
    int split_col = 0;
    bool flipped = false;
    int cost = 0; // misplaced matched blocks under the winning hypothesis
    SyncDecision decision = SyncDecision::keep_intact;

    std::string to_json() const;
};

/// Adds the quadrant messages to every block outside the central cross.
/// alpha = 0 leaves the image unchanged; each pixel moves by at most
/// 32 * alpha.
ImageBuffer embed_sync(const ImageBuffer& img, const SyncConfig& cfg);

/// Correlates each block with the carriers and decodes one message per
/// block. Absent signal yields unmatched blocks; a block matches when its
/// Hamming distance to some canonical message is below 6 bits and its
/// confidence is above 0.5.
MessageGrid extract_messages(const ImageBuffer& img, const SyncConfig& cfg);

/// Grid-space estimation: sweeps rotations in [-20, 20] degrees (1 degree
/// steps), fits the split row/col that best separate the four messages, and
/// evaluates the flipped hypothesis. Proceeds only when all four messages are
/// present and at least 70% of the blocks matched; otherwise keep_intact.
TransformEstimate estimate_transform(const MessageGrid& grid, const SyncConfig& cfg);

/// Image-space estimation used by the pipeline: the correlation extractor is
/// alignment-sensitive, so each candidate undo (rotation or crop fraction) is
/// applied to the image before re-extraction, and the best-supported
/// candidate wins. Flips are detected from the grid itself.
TransformEstimate estimate_transform(const ImageBuffer& img, const SyncConfig& cfg);

/// Applies the inverse transform: unflip, derotate, and for crop estimates
/// downscale to the estimated kept region and pad back to the native size
/// with edge replication. est.decision must be revert.
ImageBuffer invert_transform(const ImageBuffer& img, const TransformEstimate& est,
                             int native_h, int native_w);

} // namespace tokmark
