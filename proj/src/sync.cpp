#include "tokmark/sync.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "tokmark/rng.hpp"
#include "tokmark/transforms.hpp"

namespace tokmark {

void SyncConfig::validate() const {
    if (block_size < 2 || block_size % 2 != 0)
        throw std::invalid_argument("SyncConfig: block size must be a positive even number");
    if (!(alpha >= 0.0 && alpha <= 0.05))
        throw std::invalid_argument("SyncConfig: alpha must be in [0, 0.05]");
    if (strip_width < 0)
        throw std::invalid_argument("SyncConfig: strip width must be non-negative");
}

int MessageGrid::matched_count() const {
    int n = 0;
    for (const auto& b : blocks)
        if (b.matched >= 0) ++n;
    return n;
}

namespace {

constexpr int kBits = 32;
constexpr int kHammingLimit = 6;
constexpr double kConfidenceGate = 0.5;
constexpr double kAreaGate = 0.7;

inline int hadamard(int row, int col) {
    return (std::popcount(unsigned(row & col)) & 1) ? -1 : 1;
}

/// Per-key carrier bank for one block: 32 exactly-orthogonal +-1 sequences
/// over the d = 3*b*b block values. Columns of a 32x32 Hadamard matrix are
/// assigned to positions through a seeded permutation and sign-scrambled.
/// The assignment is mirror-symmetric in x, so correlations survive a
/// horizontal flip of the content.
struct Carriers {
    int b = 0;
    int d = 0;
    std::vector<int8_t> sign;   // d, +-1 scrambler
    std::vector<int8_t> column; // d, Hadamard column per position
    std::array<std::vector<float>, 4> field; // alpha-free embedding field per message
    uint32_t whitening = 0;

    Carriers(const SyncConfig& cfg) : b(cfg.block_size), d(3 * b * b) {
        sign.assign(size_t(d), 0);
        column.assign(size_t(d), 0);
        const int half = d / 2;
        std::vector<int> cols((size_t(half)));
        for (int i = 0; i < half; ++i) cols[size_t(i)] = i % kBits;
        Rng rng(mix64(cfg.sync_key, 0x73796e63ULL));
        for (size_t i = cols.size(); i > 1; --i)
            std::swap(cols[i - 1], cols[size_t(rng.below(i))]);

        int h = 0;
        for (int y = 0; y < b; ++y)
            for (int x = 0; x < b / 2; ++x)
                for (int c = 0; c < 3; ++c) {
                    const int8_t s = rng.below(2) ? 1 : -1;
                    const int8_t col = int8_t(cols[size_t(h)]);
                    const int p1 = (y * b + x) * 3 + c;
                    const int p2 = (y * b + (b - 1 - x)) * 3 + c;
                    sign[size_t(p1)] = sign[size_t(p2)] = s;
                    column[size_t(p1)] = column[size_t(p2)] = col;
                    ++h;
                }
        whitening = uint32_t(mix64(cfg.sync_key, 0x77686974ULL));

        for (int q = 0; q < 4; ++q) {
            const uint32_t word = cfg.messages[size_t(q)] ^ whitening;
            field[size_t(q)].assign(size_t(d), 0.0f);
            for (int pos = 0; pos < d; ++pos) {
                int acc = 0;
                for (int bit = 0; bit < kBits; ++bit) {
                    const int sigma = (word >> bit) & 1 ? 1 : -1;
                    acc += sigma * hadamard(bit, column[size_t(pos)]);
                }
                field[size_t(q)][size_t(pos)] = float(acc * sign[size_t(pos)]);
            }
        }
    }

    double correlate(const float* resid, int bit) const {
        double acc = 0.0;
        for (int pos = 0; pos < d; ++pos)
            acc += double(resid[pos]) * hadamard(bit, column[size_t(pos)]) *
                   sign[size_t(pos)];
        return acc;
    }
};

/// Content-suppressing residual: subtract the median of the 8 neighbors.
/// Flat regions and step edges sit in the median while the white carrier does
/// not, so the residual is essentially carrier. The center pixel is excluded
/// from the window, which keeps the estimate independent of the carrier value
/// being correlated and avoids a decode bias.
ImageBuffer highpass(const ImageBuffer& img) {
    ImageBuffer out(img.height, img.width);
    float window[8];
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                int n = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        if (dy != 0 || dx != 0)
                            window[n++] = img.at_clamped(y + dy, x + dx, c);
                std::nth_element(window, window + 3, window + 8);
                const float lo = window[3];
                std::nth_element(window, window + 4, window + 8);
                out.at(y, x, c) = img.at(y, x, c) - 0.5f * (lo + window[4]);
            }
    return out;
}

bool in_strip(const SyncConfig& cfg, const ImageBuffer& img, int by, int bx) {
    if (cfg.strip_width <= 0) return false;
    const double cy = by * cfg.block_size + cfg.block_size / 2.0;
    const double cx = bx * cfg.block_size + cfg.block_size / 2.0;
    const double half = cfg.strip_width / 2.0;
    return std::fabs(cy - img.height / 2.0) < half ||
           std::fabs(cx - img.width / 2.0) < half;
}

} // namespace

ImageBuffer embed_sync(const ImageBuffer& img, const SyncConfig& cfg) {
    cfg.validate();
    const int b = cfg.block_size;
    if (img.height % b != 0 || img.width % b != 0 || (img.height / b) % 2 != 0 ||
        (img.width / b) % 2 != 0)
        throw std::invalid_argument("embed_sync: dimensions must be an even number of blocks");
    if (cfg.alpha == 0.0) return img;

    const Carriers carriers(cfg);
    const int rows = img.height / b, cols = img.width / b;
    ImageBuffer out = img;
    for (int by = 0; by < rows; ++by)
        for (int bx = 0; bx < cols; ++bx) {
            if (in_strip(cfg, img, by, bx)) continue;
            const int q = (by < rows / 2 ? 0 : 2) + (bx < cols / 2 ? 0 : 1);
            const auto& field = carriers.field[size_t(q)];
            int pos = 0;
            for (int y = 0; y < b; ++y)
                for (int x = 0; x < b; ++x)
                    for (int c = 0; c < 3; ++c)
                        out.at(by * b + y, bx * b + x, c) +=
                            float(cfg.alpha) * field[size_t(pos++)];
        }
    out.clamp01();
    return out;
}

MessageGrid extract_messages(const ImageBuffer& img, const SyncConfig& cfg) {
    cfg.validate();
    const int b = cfg.block_size;
    MessageGrid grid;
    grid.rows = img.height / b;
    grid.cols = img.width / b;
    grid.block_size = b;
    grid.blocks.assign(size_t(grid.rows) * size_t(grid.cols), {});
    if (grid.rows == 0 || grid.cols == 0) return grid;

    const Carriers carriers(cfg);
    const ImageBuffer resid = highpass(img);
    std::vector<float> block(size_t(carriers.d));

    for (int by = 0; by < grid.rows; ++by)
        for (int bx = 0; bx < grid.cols; ++bx) {
            int pos = 0;
            double energy = 0.0;
            for (int y = 0; y < b; ++y)
                for (int x = 0; x < b; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const float v = resid.at(by * b + y, bx * b + x, c);
                        block[size_t(pos++)] = v;
                        energy += double(v) * double(v);
                    }
            auto& out = grid.at(by, bx);
            const double norm = std::sqrt(energy);
            if (norm < 1e-9) continue; // flat block, no signal

            uint32_t word = 0;
            double mean_abs_z = 0.0;
            for (int bit = 0; bit < kBits; ++bit) {
                const double z = carriers.correlate(block.data(), bit) / norm;
                if (z > 0.0) word |= 1u << bit;
                mean_abs_z += std::fabs(z);
            }
            mean_abs_z /= kBits;
            out.word = word ^ carriers.whitening;
            // Under pure noise the per-bit |z| averages sqrt(2/pi) ~= 0.8;
            // map the excess onto [0,1].
            out.confidence = std::clamp((mean_abs_z - 0.8) / 0.9, 0.0, 1.0);
            if (out.confidence <= kConfidenceGate) continue;
            int best = -1, best_dist = kBits + 1;
            for (int q = 0; q < 4; ++q) {
                const int dist = std::popcount(out.word ^ cfg.messages[size_t(q)]);
                if (dist < best_dist) {
                    best_dist = dist;
                    best = q;
                }
            }
            if (best_dist < kHammingLimit) out.matched = best;
        }
    return grid;
}

namespace {

struct MatchedBlock {
    double y = 0.0, x = 0.0; // block center, pixels
    int message = 0;
};

std::vector<MatchedBlock> matched_blocks(const MessageGrid& grid) {
    std::vector<MatchedBlock> out;
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
            if (grid.at(r, c).matched >= 0)
                out.push_back({(r + 0.5) * grid.block_size,
                               (c + 0.5) * grid.block_size, grid.at(r, c).matched});
    return out;
}

struct SplitFit {
    int cost = 0;
    double row_px = 0.0;
    double col_px = 0.0;
};

/// Best split row/col for blocks in canonical orientation: messages 0,1 above
/// 2,3 and messages 0,2 left of 1,3. Candidates run over block boundaries;
/// ties prefer the centermost split.
SplitFit fit_splits(const std::vector<MatchedBlock>& blocks, int height, int width,
                    int block_size) {
    SplitFit fit;
    auto scan = [&](bool rows) {
        const int extent = rows ? height : width;
        int best_cost = INT_MAX;
        double best_pos = extent / 2.0;
        for (int cand = 0; cand <= extent / block_size; ++cand) {
            const double pos = double(cand) * block_size;
            int cost = 0;
            for (const auto& blk : blocks) {
                const double coord = rows ? blk.y : blk.x;
                const bool should_be_low =
                    rows ? (blk.message == 0 || blk.message == 1)
                         : (blk.message == 0 || blk.message == 2);
                if (should_be_low ? coord > pos : coord < pos) ++cost;
            }
            const bool better =
                cost < best_cost ||
                (cost == best_cost && std::fabs(pos - extent / 2.0) <
                                          std::fabs(best_pos - extent / 2.0));
            if (better) {
                best_cost = cost;
                best_pos = pos;
            }
        }
        if (rows) fit.row_px = best_pos;
        else fit.col_px = best_pos;
        return best_cost;
    };
    fit.cost = scan(true) + scan(false);
    return fit;
}

std::vector<MatchedBlock> rotate_blocks(const std::vector<MatchedBlock>& blocks,
                                        double deg, double cy, double cx) {
    const double rad = -deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    std::vector<MatchedBlock> out(blocks);
    for (auto& b : out) {
        const double dy = b.y - cy, dx = b.x - cx;
        b.y = cy + cs * dy - sn * dx;
        b.x = cx + sn * dy + cs * dx;
    }
    return out;
}

std::vector<MatchedBlock> mirror_blocks(const std::vector<MatchedBlock>& blocks,
                                        double width) {
    std::vector<MatchedBlock> out(blocks);
    for (auto& b : out) b.x = width - b.x;
    return out;
}

bool grid_gate(const MessageGrid& grid) {
    if (grid.blocks.empty()) return false;
    std::array<bool, 4> present{false, false, false, false};
    int matched = 0;
    for (const auto& b : grid.blocks)
        if (b.matched >= 0) {
            present[size_t(b.matched)] = true;
            ++matched;
        }
    return present[0] && present[1] && present[2] && present[3] &&
           double(matched) >= kAreaGate * double(grid.blocks.size());
}

} // namespace

TransformEstimate estimate_transform(const MessageGrid& grid, const SyncConfig& cfg) {
    cfg.validate();
    TransformEstimate est;
    if (!grid_gate(grid)) return est; // keep_intact

    const auto blocks = matched_blocks(grid);
    const double height = double(grid.rows) * grid.block_size;
    const double width = double(grid.cols) * grid.block_size;

    int best_cost = INT_MAX;
    for (int deg = -20; deg <= 20; ++deg) {
        const auto rotated = rotate_blocks(blocks, deg, height / 2.0, width / 2.0);
        for (const bool flip : {false, true}) {
            const auto candidate = flip ? mirror_blocks(rotated, width) : rotated;
            const auto fit = fit_splits(candidate, grid.rows * grid.block_size,
                                        grid.cols * grid.block_size, grid.block_size);
            const bool better =
                fit.cost < best_cost ||
                (fit.cost == best_cost &&
                 (std::fabs(double(deg)) < std::fabs(est.rotation_deg) ||
                  (std::fabs(double(deg)) == std::fabs(est.rotation_deg) && !flip &&
                   est.flipped)));
            if (better) {
                best_cost = fit.cost;
                est.rotation_deg = deg;
                est.flipped = flip;
                est.split_row = int(std::lround(fit.row_px));
                est.split_col = int(std::lround(fit.col_px));
                est.cost = fit.cost;
            }
        }
    }
    est.decision = SyncDecision::revert;
    return est;
}

TransformEstimate estimate_transform(const ImageBuffer& img, const SyncConfig& cfg) {
    cfg.validate();
    struct Candidate {
        double rotation = 0.0;
        double crop = 1.0;
        double matched_frac = 0.0;
        double conf_sum = 0.0;
        SplitFit fit;
        bool flipped = false;
        bool valid = false;
    };

    auto evaluate = [&](const ImageBuffer& undone, int region_h, int region_w,
                        Candidate& cand) {
        const auto grid = extract_messages(undone, cfg);
        const int region_rows = region_h / cfg.block_size;
        const int region_cols = region_w / cfg.block_size;
        if (region_rows == 0 || region_cols == 0) return;
        std::array<bool, 4> present{};
        int matched = 0;
        double conf = 0.0;
        std::vector<MatchedBlock> blocks;
        for (int r = 0; r < region_rows; ++r)
            for (int c = 0; c < region_cols; ++c) {
                const auto& blk = grid.at(r, c);
                conf += blk.confidence;
                if (blk.matched >= 0) {
                    present[size_t(blk.matched)] = true;
                    ++matched;
                    blocks.push_back({(r + 0.5) * cfg.block_size,
                                      (c + 0.5) * cfg.block_size, blk.matched});
                }
            }
        const int total = region_rows * region_cols;
        cand.matched_frac = double(matched) / double(total);
        cand.conf_sum = conf / double(total);
        if (!(present[0] && present[1] && present[2] && present[3]) ||
            cand.matched_frac < kAreaGate)
            return;
        // The undo already normalized the orientation; detect a flip from the
        // grid layout itself.
        const auto plain = fit_splits(blocks, region_h, region_w, cfg.block_size);
        const auto mirrored =
            fit_splits(mirror_blocks(blocks, region_w), region_h, region_w,
                       cfg.block_size);
        if (mirrored.cost < plain.cost) {
            cand.fit = mirrored;
            cand.flipped = true;
        } else {
            cand.fit = plain;
            cand.flipped = false;
        }
        cand.valid = true;
    };

    std::vector<Candidate> candidates;
    for (int deg = -20; deg <= 20; ++deg) {
        Candidate cand;
        cand.rotation = deg;
        TransformSpec unrot;
        unrot.kind = TransformKind::rotate;
        unrot.parameter = -double(deg);
        evaluate(apply_transform(img, unrot), img.height, img.width, cand);
        candidates.push_back(cand);
    }
    for (double p : {0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5}) {
        Candidate cand;
        cand.crop = p;
        const int kh = int(std::lround(p * img.height));
        const int kw = int(std::lround(p * img.width));
        if (kh < cfg.block_size || kw < cfg.block_size) continue;
        // Undo a corner crop: shrink back to the kept region, pad to native.
        ImageBuffer shrunk(img.height, img.width);
        const ImageBuffer small = [&] {
            TransformSpec noop;
            (void)noop;
            ImageBuffer s(kh, kw);
            for (int y = 0; y < kh; ++y)
                for (int x = 0; x < kw; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const double sy = (y + 0.5) * double(img.height) / kh - 0.5;
                        const double sx = (x + 0.5) * double(img.width) / kw - 0.5;
                        s.at(y, x, c) = img.sample_bilinear(sy, sx, c);
                    }
            return s;
        }();
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c)
                    shrunk.at(y, x, c) =
                        small.at(std::min(y, kh - 1), std::min(x, kw - 1), c);
        const int region_h = (kh / cfg.block_size) * cfg.block_size;
        const int region_w = (kw / cfg.block_size) * cfg.block_size;
        evaluate(shrunk, region_h, region_w, cand);
        candidates.push_back(cand);
    }

    const Candidate* best = nullptr;
    for (const auto& cand : candidates) {
        if (!cand.valid) continue;
        if (!best) {
            best = &cand;
            continue;
        }
        const double cost_a = double(cand.fit.cost);
        const double cost_b = double(best->fit.cost);
        bool better = false;
        if (cand.matched_frac > best->matched_frac + 1e-12) better = true;
        else if (cand.matched_frac >= best->matched_frac - 1e-12) {
            if (cost_a < cost_b) better = true;
            else if (cost_a == cost_b) {
                if (cand.conf_sum > best->conf_sum + 1e-12) better = true;
                else if (cand.conf_sum >= best->conf_sum - 1e-12) {
                    if (std::fabs(cand.rotation) < std::fabs(best->rotation))
                        better = true;
                    else if (std::fabs(cand.rotation) == std::fabs(best->rotation) &&
                             !cand.flipped && best->flipped)
                        better = true;
                }
            }
        }
        if (better) best = &cand;
    }

    TransformEstimate est;
    if (!best) return est; // keep_intact
    est.rotation_deg = best->rotation;
    est.flipped = best->flipped;
    est.cost = best->fit.cost;
    // Splits live in the incoming frame: the quadrant boundary of a cropped
    // and upscaled image sits at center / crop_fraction.
    est.split_row = int(std::lround(img.height / 2.0 / best->crop));
    est.split_col = int(std::lround(img.width / 2.0 / best->crop));
    est.decision = SyncDecision::revert;
    return est;
}

ImageBuffer invert_transform(const ImageBuffer& img, const TransformEstimate& est,
                             int native_h, int native_w) {
    if (est.decision != SyncDecision::revert)
        throw std::invalid_argument("invert_transform: estimate says keep_intact");

    ImageBuffer out = img;
    if (est.flipped) {
        TransformSpec flip;
        flip.kind = TransformKind::hflip;
        flip.parameter = 1.0;
        out = apply_transform(out, flip);
    }
    if (est.rotation_deg != 0.0) {
        TransformSpec unrot;
        unrot.kind = TransformKind::rotate;
        unrot.parameter = -est.rotation_deg;
        out = apply_transform(out, unrot);
    }

    const double p_row = est.split_row > 0 ? (native_h / 2.0) / est.split_row : 1.0;
    const double p_col = est.split_col > 0 ? (native_w / 2.0) / est.split_col : 1.0;
    const double keep = std::min(1.0, (p_row + p_col) / 2.0);
    if (keep < 0.3)
        throw std::invalid_argument("invert_transform: degenerate crop estimate");
    if (keep < 1.0 - 1e-9) {
        const int kh = int(std::lround(keep * native_h));
        const int kw = int(std::lround(keep * native_w));
        ImageBuffer small(kh, kw);
        for (int y = 0; y < kh; ++y)
            for (int x = 0; x < kw; ++x)
                for (int c = 0; c < 3; ++c) {
                    const double sy = (y + 0.5) * double(out.height) / kh - 0.5;
                    const double sx = (x + 0.5) * double(out.width) / kw - 0.5;
                    small.at(y, x, c) = out.sample_bilinear(sy, sx, c);
                }
        ImageBuffer padded(native_h, native_w);
        for (int y = 0; y < native_h; ++y)
            for (int x = 0; x < native_w; ++x)
                for (int c = 0; c < 3; ++c)
                    padded.at(y, x, c) =
                        small.at(std::min(y, kh - 1), std::min(x, kw - 1), c);
        out = padded;
    }
    return out;
}

std::string TransformEstimate::to_json() const {
    nlohmann::json j;
    j["rotation_deg"] = rotation_deg;
    j["split_row"] = split_row;
    j["split_col"] = split_col;
    j["flipped"] = flipped;
    j["cost"] = cost;
    j["decision"] = decision == SyncDecision::revert ? "revert" : "keep_intact";
    return j.dump();
}

} // namespace tokmark
