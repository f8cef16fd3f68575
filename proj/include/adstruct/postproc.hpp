#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "adstruct/dataio.hpp"
#include "adstruct/errors.hpp"
#include "adstruct/segmenter.hpp"

namespace adstruct::post {

inline constexpr double kSceneProbThreshold = 0.1;
inline constexpr double kAlignRadius = 0.5;
inline constexpr double kMinSegmentSeconds = 0.1;

enum class GapMode { Fill, Merge };

inline GapMode gap_mode_from(const std::string& s) {
    if (s == "fill") return GapMode::Fill;
    if (s == "merge") return GapMode::Merge;
    throw ConfigError("unknown gap mode '" + s + "' (expected fill or merge)");
}

// Recomputes the fused score of an arbitrary clip span.
using RescoreFn = std::function<seg::ScoredProposal(std::size_t first, std::size_t last)>;

inline bool overlaps(const seg::ScoredProposal& a, const seg::ScoredProposal& b) { return a.first <= b.last && b.first <= a.last; }

// Greedy zero-overlap selection by descending p_prop (ties: earlier start,
// then shorter), returned in time order without gap handling.
inline std::vector<seg::ScoredProposal> greedy_select(std::vector<seg::ScoredProposal> candidates) {
    std::stable_sort(candidates.begin(), candidates.end(), [](const seg::ScoredProposal& a, const seg::ScoredProposal& b) {
        if (a.p_prop != b.p_prop) return a.p_prop > b.p_prop;
        if (a.first != b.first) return a.first < b.first;
        return a.last < b.last;
    });
    std::vector<seg::ScoredProposal> kept;
    for (const auto& c : candidates) {
        if (!std::isfinite(c.p_prop)) throw InputError("nms: non-finite proposal score");
        if (std::none_of(kept.begin(), kept.end(), [&](const seg::ScoredProposal& k) { return overlaps(c, k); })) kept.push_back(c);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return kept;
}

// Zero-overlap NMS followed by gap handling, so the result tiles clips
// [0, clips). Fill turns each uncovered run into its own rescored proposal;
// Merge extends the higher-scoring neighbour over it.
inline std::vector<seg::ScoredProposal> nms_nonoverlap(const std::vector<seg::ScoredProposal>& candidates, std::size_t clips,
                                                       const RescoreFn& rescore, GapMode mode = GapMode::Fill) {
    if (clips == 0) throw InputError("nms: video has no clips");
    for (const auto& c : candidates)
        if (c.first > c.last || c.last >= clips) throw InputError("nms: candidate outside the video");
    if (candidates.empty()) return {rescore(0, clips - 1)};
    auto kept = greedy_select(candidates);

    struct Gap {
        std::size_t first, last;
    };
    std::vector<Gap> gaps;
    std::size_t next = 0;
    for (const auto& k : kept) {
        if (k.first > next) gaps.push_back({next, k.first - 1});
        next = k.last + 1;
    }
    if (next < clips) gaps.push_back({next, clips - 1});
    if (gaps.empty()) return kept;

    if (mode == GapMode::Fill) {
        for (const auto& g : gaps) kept.push_back(rescore(g.first, g.last));
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        return kept;
    }
    for (const auto& g : gaps) {
        long left = -1, right = -1;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i].last + 1 == g.first) left = static_cast<long>(i);
            if (kept[i].first == g.last + 1) right = static_cast<long>(i);
        }
        const bool use_left = left >= 0 && (right < 0 || kept[static_cast<std::size_t>(left)].p_prop >= kept[static_cast<std::size_t>(right)].p_prop);
        auto& host = kept[static_cast<std::size_t>(use_left ? left : right)];
        host = use_left ? rescore(host.first, g.last) : rescore(g.first, host.last);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Scene-guided alignment.

inline std::vector<data::SceneFrame> retain_scene_frames(const std::vector<data::SceneFrame>& frames,
                                                         double threshold = kSceneProbThreshold) {
    std::vector<data::SceneFrame> out;
    for (const auto& f : frames)
        if (f.prob > threshold) out.push_back(f);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    return out;
}

// Moves each internal boundary (sorted, seconds) to its nearest retained
// scene frame when that frame is strictly closer than 0.5 s. Equidistant
// frames resolve to the earlier one. A move that would leave a segment
// shorter than 0.1 s is skipped. Boundaries are resolved left to right and
// passes repeat until nothing moves, so the result is a fixed point.
inline std::vector<double> scene_guided_align(std::vector<double> boundaries, const std::vector<data::SceneFrame>& scenes,
                                              double duration) {
    const auto frames = retain_scene_frames(scenes);
    if (frames.empty() || boundaries.empty()) return boundaries;
    const std::vector<double> original = boundaries;
    std::vector<bool> settled(boundaries.size(), false);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < boundaries.size(); ++i) {
            if (settled[i]) continue;
            const double b = boundaries[i];
            double best = kAlignRadius;
            double target = b;
            bool found = false;
            for (const auto& f : frames) {
                const double d = std::abs(f.time - b);
                if (d < best) {
                    best = d;
                    target = f.time;
                    found = true;
                }
            }
            if (!found) continue;
            if (target == b) {
                settled[i] = true;
                continue;
            }
            const double prev = i == 0 ? 0.0 : boundaries[i - 1];
            const double next = i + 1 == boundaries.size() ? duration : boundaries[i + 1];
            if (target - prev < kMinSegmentSeconds || next - target < kMinSegmentSeconds) continue;
            boundaries[i] = target;
            settled[i] = true;
            changed = true;
        }
    }
    return boundaries;
}

struct TimedSegment {
    double start_s = 0.0;
    double end_s = 0.0;
};

inline std::vector<double> internal_boundaries(const std::vector<TimedSegment>& segs) {
    std::vector<double> b;
    for (std::size_t i = 1; i < segs.size(); ++i) b.push_back(segs[i].start_s);
    return b;
}

inline std::vector<TimedSegment> segments_from_boundaries(const std::vector<double>& boundaries, double duration) {
    std::vector<TimedSegment> out;
    double prev = 0.0;
    for (double b : boundaries) {
        out.push_back({prev, b});
        prev = b;
    }
    out.push_back({prev, duration});
    return out;
}

// Alignment of a tiling segmentation; video start and end never move.
inline std::vector<TimedSegment> align_segmentation(const std::vector<TimedSegment>& segs, const std::vector<data::SceneFrame>& scenes) {
    if (segs.empty()) return segs;
    const double duration = segs.back().end_s;
    return segments_from_boundaries(scene_guided_align(internal_boundaries(segs), scenes, duration), duration);
}

}  // namespace adstruct::post
