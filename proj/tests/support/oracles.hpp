#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "adstruct/dataio.hpp"
#include "adstruct/metrics.hpp"

// Brute-force reference implementations, written independently of the
// library code they check.
namespace oracle {

using adstruct::metrics::Interval;

inline double iou(Interval a, Interval b) {
    const double lo = std::max(a.start, b.start), hi = std::min(a.end, b.end);
    const double inter = hi > lo ? hi - lo : 0.0;
    return inter / ((a.end - a.start) + (b.end - b.start) - inter);
}

inline std::vector<double> thresholds() {
    std::vector<double> t;
    for (int k = 50; k <= 95; k += 5) t.push_back(k / 100.0);
    return t;
}

// Maximum one-to-one matching size at threshold t by exhaustive search.
inline std::size_t max_matching(const std::vector<Interval>& preds, const std::vector<Interval>& gts, double t,
                                std::size_t g = 0, std::vector<bool> used = {}) {
    if (used.empty()) used.assign(preds.size(), false);
    if (g == gts.size()) return 0;
    std::size_t best = max_matching(preds, gts, t, g + 1, used);
    for (std::size_t p = 0; p < preds.size(); ++p) {
        if (used[p] || iou(preds[p], gts[g]) < t) continue;
        used[p] = true;
        best = std::max(best, 1 + max_matching(preds, gts, t, g + 1, used));
        used[p] = false;
    }
    return best;
}

inline double auc(const std::vector<std::vector<Interval>>& preds, const std::vector<std::vector<Interval>>& gts) {
    double sum = 0.0;
    std::size_t total = 0;
    for (const auto& g : gts) total += g.size();
    if (total == 0) return 0.0;
    for (double t : thresholds()) {
        std::size_t hit = 0;
        for (std::size_t v = 0; v < gts.size(); ++v) hit += max_matching(preds[v], gts[v], t);
        sum += static_cast<double>(hit) / static_cast<double>(total);
    }
    return sum / 10.0;
}

// Repeatedly take the globally closest unmatched (gt, pred) pair by a full
// scan; ties resolve to the lowest gt index, then the lowest pred index.
inline std::size_t greedy_boundary_tp(const std::vector<double>& pred, const std::vector<double>& gt) {
    std::vector<bool> pu(pred.size()), gu(gt.size());
    std::size_t tp = 0;
    while (true) {
        double best = 0.5 + 1e-9;
        long bg = -1, bp = -1;
        for (std::size_t g = 0; g < gt.size(); ++g)
            for (std::size_t p = 0; p < pred.size(); ++p) {
                if (gu[g] || pu[p]) continue;
                const double e = std::fabs(pred[p] - gt[g]);
                if (e < best || (bg < 0 && e <= best)) {
                    best = e;
                    bg = static_cast<long>(g);
                    bp = static_cast<long>(p);
                }
            }
        if (bg < 0) return tp;
        gu[static_cast<std::size_t>(bg)] = pu[static_cast<std::size_t>(bp)] = true;
        ++tp;
    }
}

inline std::vector<double> boundaries(const std::vector<Interval>& segs, double duration) {
    std::vector<double> b;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        if (segs[i].start > 1e-9 && segs[i].start < duration - 1e-9) b.push_back(segs[i].start);
        if (segs[i].end > 1e-9 && segs[i].end < duration - 1e-9) b.push_back(segs[i].end);
    }
    std::sort(b.begin(), b.end());
    std::vector<double> u;
    for (double x : b)
        if (u.empty() || x - u.back() > 1e-9) u.push_back(x);
    return u;
}

inline double f1(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt) {
    std::size_t tp = 0, np = 0, ng = 0;
    for (std::size_t v = 0; v < gt.size(); ++v) {
        tp += greedy_boundary_tp(pred[v], gt[v]);
        np += pred[v].size();
        ng += gt[v].size();
    }
    if (np == 0 && ng == 0) return 1.0;
    if (tp == 0) return 0.0;
    const double p = double(tp) / double(np), r = double(tp) / double(ng);
    return 2 * p * r / (p + r);
}

// AP as the mean, over GT positives, of the best precision at or after each
// true-positive rank (unrecovered positives contribute zero).
inline double ap(const std::vector<bool>& tp_flags, std::size_t npos) {
    if (npos == 0) return 0.0;
    const std::size_t n = tp_flags.size();
    std::vector<double> prec(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        tp += tp_flags[k];
        prec[k] = double(tp) / double(k + 1);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!tp_flags[k]) continue;
        double best = 0.0;
        for (std::size_t j = k; j < n; ++j) best = std::max(best, prec[j]);
        sum += best;
    }
    return sum / double(npos);
}

inline double map(const std::vector<adstruct::metrics::VideoPrediction>& preds,
                  const std::vector<adstruct::metrics::VideoTruth>& truths, std::size_t categories) {
    double total = 0.0;
    std::size_t cells = 0;
    for (std::size_t c = 0; c < categories; ++c) {
        std::size_t npos = 0;
        for (const auto& t : truths)
            for (const auto& g : t.segments) npos += std::count(g.labels.begin(), g.labels.end(), c);
        if (npos == 0) continue;
        // (score, video, segment) ranked by score, ties in input order.
        std::vector<std::tuple<double, std::size_t, std::size_t>> ranked;
        for (std::size_t v = 0; v < preds.size(); ++v)
            for (std::size_t s = 0; s < preds[v].segments.size(); ++s)
                for (const auto& cs : preds[v].segments[s].categories)
                    if (cs.category == c) ranked.emplace_back(cs.score, v, s);
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
        for (double t : thresholds()) {
            std::vector<std::vector<bool>> taken(truths.size());
            for (std::size_t v = 0; v < truths.size(); ++v) taken[v].assign(truths[v].segments.size(), false);
            std::vector<bool> flags;
            for (const auto& [score, v, s] : ranked) {
                const auto& p = preds[v].segments[s];
                // GT of category c sorted by IoU, highest first; take the first free one above t.
                std::vector<std::pair<double, std::size_t>> order;
                for (std::size_t g = 0; g < truths[v].segments.size(); ++g) {
                    const auto& gs = truths[v].segments[g];
                    if (std::count(gs.labels.begin(), gs.labels.end(), c))
                        order.emplace_back(iou({p.start_s, p.end_s}, {gs.start_s, gs.end_s}), g);
                }
                std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
                bool hit = false;
                for (const auto& [u, g] : order) {
                    if (u < t) break;
                    if (taken[v][g]) continue;
                    taken[v][g] = true;
                    hit = true;
                    break;
                }
                flags.push_back(hit);
            }
            total += ap(flags, npos);
            ++cells;
        }
    }
    return cells ? total / double(cells) : 0.0;
}

// ---------------------------------------------------------------------------
// Random instances on the 0.5 s grid.

inline std::vector<Interval> random_tiling(std::mt19937_64& rng, std::size_t clips, std::size_t max_segments) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(1, std::min(max_segments, clips))(rng);
    std::vector<std::size_t> cuts(clips - 1);
    std::iota(cuts.begin(), cuts.end(), 1);
    std::shuffle(cuts.begin(), cuts.end(), rng);
    cuts.resize(n - 1);
    std::sort(cuts.begin(), cuts.end());
    std::vector<Interval> out;
    std::size_t prev = 0;
    for (auto c : cuts) {
        out.push_back({prev * 0.5, c * 0.5});
        prev = c;
    }
    out.push_back({prev * 0.5, clips * 0.5});
    return out;
}

struct Instance {
    std::vector<adstruct::metrics::VideoPrediction> preds;
    std::vector<adstruct::metrics::VideoTruth> truths;
    std::size_t categories = 4;
};

inline Instance random_instance(std::mt19937_64& rng, std::size_t max_segments = 5, std::size_t categories = 4) {
    Instance inst;
    inst.categories = categories;
    const std::size_t videos = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t v = 0; v < videos; ++v) {
        const std::size_t clips = std::uniform_int_distribution<std::size_t>(6, 20)(rng);
        const std::string id = "v" + std::to_string(v);
        adstruct::metrics::VideoTruth t{id, clips * 0.5, {}};
        for (const auto& iv : random_tiling(rng, clips, max_segments)) {
            std::vector<std::size_t> labels{std::uniform_int_distribution<std::size_t>(0, categories - 1)(rng)};
            if (unit(rng) < 0.3) {
                const auto extra = std::uniform_int_distribution<std::size_t>(0, categories - 1)(rng);
                if (extra != labels[0]) labels.push_back(extra);
            }
            t.segments.push_back({iv.start, iv.end, labels});
        }
        // Predictions: either a perturbed copy of the GT cut points or an independent tiling.
        adstruct::metrics::VideoPrediction p{id, {}};
        std::vector<Interval> tiles;
        if (unit(rng) < 0.5) {
            tiles = random_tiling(rng, clips, max_segments);
        } else {
            std::vector<double> cuts;
            for (std::size_t s = 1; s < t.segments.size(); ++s) {
                const double shift = 0.5 * std::uniform_int_distribution<int>(-1, 1)(rng);
                cuts.push_back(std::clamp(t.segments[s].start_s + shift, 0.5, clips * 0.5 - 0.5));
            }
            std::sort(cuts.begin(), cuts.end());
            cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
            double prev = 0.0;
            for (double c : cuts) {
                tiles.push_back({prev, c});
                prev = c;
            }
            tiles.push_back({prev, clips * 0.5});
        }
        for (const auto& iv : tiles) {
            adstruct::metrics::PredictedSegment ps{iv.start, iv.end, {}};
            for (std::size_t c = 0; c < categories; ++c)
                if (unit(rng) < 0.6) ps.categories.push_back({c, unit(rng)});
            p.segments.push_back(ps);
        }
        inst.truths.push_back(t);
        inst.preds.push_back(p);
    }
    return inst;
}

}  // namespace oracle
