#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "adstruct/dataio.hpp"
#include "adstruct/errors.hpp"

namespace adstruct::metrics {

struct Interval {
    double start = 0.0;
    double end = 0.0;
};

inline double interval_iou(Interval a, Interval b) {
    if (!(a.end > a.start) || !(b.end > b.start)) throw InputError("interval_iou: degenerate interval");
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
    return inter / uni;
}

inline constexpr std::size_t kNumThresholds = 10;

// 0.50, 0.55, ..., 0.95
inline std::array<double, kNumThresholds> iou_thresholds() {
    std::array<double, kNumThresholds> t{};
    for (std::size_t k = 0; k < kNumThresholds; ++k) t[k] = static_cast<double>(50 + 5 * k) / 100.0;
    return t;
}

inline constexpr double kBoundaryTolerance = 0.5;

struct CategoryScore {
    std::size_t category = 0;
    double score = 0.0;
};

struct PredictedSegment {
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<CategoryScore> categories;
};

struct VideoPrediction {
    std::string id;
    std::vector<PredictedSegment> segments;
};

struct VideoTruth {
    std::string id;
    double duration_s = 0.0;
    std::vector<data::GtSegment> segments;
};

// ---------------------------------------------------------------------------
// Segmentation recall over IoU thresholds.

// GT segments matched one-to-one at IoU >= t, taking pairs in descending IoU.
inline std::size_t matched_at(const std::vector<Interval>& preds, const std::vector<Interval>& gts, double t) {
    struct Pair {
        double iou;
        std::size_t g, p;
    };
    std::vector<Pair> pairs;
    for (std::size_t g = 0; g < gts.size(); ++g)
        for (std::size_t p = 0; p < preds.size(); ++p) {
            const double iou = interval_iou(preds[p], gts[g]);
            if (iou >= t) pairs.push_back({iou, g, p});
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
    std::vector<bool> gused(gts.size()), pused(preds.size());
    std::size_t n = 0;
    for (const auto& pr : pairs) {
        if (gused[pr.g] || pused[pr.p]) continue;
        gused[pr.g] = pused[pr.p] = true;
        ++n;
    }
    return n;
}

struct AucResult {
    double auc = 0.0;
    std::array<double, kNumThresholds> recalls{};
    std::size_t skipped_videos = 0;
};

// Mean, over the ten IoU thresholds, of the pooled fraction of GT segments
// recovered by a one-to-one match. Videos without GT are skipped.
inline AucResult segmentation_auc(const std::vector<std::vector<Interval>>& preds, const std::vector<std::vector<Interval>>& gts) {
    if (preds.size() != gts.size()) throw InputError("segmentation_auc: prediction and GT video counts differ");
    AucResult r;
    const auto th = iou_thresholds();
    std::size_t total = 0;
    std::array<std::size_t, kNumThresholds> hits{};
    for (std::size_t v = 0; v < gts.size(); ++v) {
        if (gts[v].empty()) {
            ++r.skipped_videos;
            continue;
        }
        total += gts[v].size();
        for (std::size_t k = 0; k < kNumThresholds; ++k) hits[k] += matched_at(preds[v], gts[v], th[k]);
    }
    if (total == 0) return r;
    double sum = 0.0;
    for (std::size_t k = 0; k < kNumThresholds; ++k) {
        r.recalls[k] = static_cast<double>(hits[k]) / static_cast<double>(total);
        sum += r.recalls[k];
    }
    r.auc = sum / static_cast<double>(kNumThresholds);
    return r;
}

// ---------------------------------------------------------------------------
// Boundary F1.

// Segment endpoints strictly inside (0, duration), deduplicated and sorted.
inline std::vector<double> internal_boundaries(const std::vector<Interval>& segs, double duration) {
    constexpr double eps = 1e-9;
    std::vector<double> b;
    for (const auto& s : segs)
        for (double t : {s.start, s.end})
            if (t > eps && t < duration - eps) b.push_back(t);
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end(), [](double x, double y) { return std::abs(x - y) <= eps; }), b.end());
    return b;
}

// Greedy one-to-one matching in ascending |error|, each side used once.
inline std::size_t match_boundaries(const std::vector<double>& pred, const std::vector<double>& gt,
                                    double tolerance = kBoundaryTolerance) {
    struct Pair {
        double err;
        std::size_t g, p;
    };
    std::vector<Pair> pairs;
    for (std::size_t g = 0; g < gt.size(); ++g)
        for (std::size_t p = 0; p < pred.size(); ++p) {
            const double e = std::abs(pred[p] - gt[g]);
            if (e <= tolerance + 1e-9) pairs.push_back({e, g, p});
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.err < b.err; });
    std::vector<bool> gused(gt.size()), pused(pred.size());
    std::size_t tp = 0;
    for (const auto& pr : pairs) {
        if (gused[pr.g] || pused[pr.p]) continue;
        gused[pr.g] = pused[pr.p] = true;
        ++tp;
    }
    return tp;
}

struct F1Result {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    std::size_t true_positives = 0;
    std::size_t predicted = 0;
    std::size_t ground_truth = 0;
};

inline F1Result f1_from_counts(std::size_t tp, std::size_t npred, std::size_t ngt) {
    F1Result r{0.0, 0.0, 0.0, tp, npred, ngt};
    if (npred == 0 && ngt == 0) {
        r.f1 = r.precision = r.recall = 1.0;
        return r;
    }
    r.precision = npred ? static_cast<double>(tp) / static_cast<double>(npred) : 0.0;
    r.recall = ngt ? static_cast<double>(tp) / static_cast<double>(ngt) : 0.0;
    if (tp > 0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

// Counts are pooled over all videos before forming precision and recall.
inline F1Result boundary_f1(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt) {
    if (pred.size() != gt.size()) throw InputError("boundary_f1: prediction and GT video counts differ");
    std::size_t tp = 0, np = 0, ng = 0;
    for (std::size_t v = 0; v < gt.size(); ++v) {
        tp += match_boundaries(pred[v], gt[v]);
        np += pred[v].size();
        ng += gt[v].size();
    }
    return f1_from_counts(tp, np, ng);
}

// ---------------------------------------------------------------------------
// Detection mAP.

// Area under the precision-envelope of a ranked TP/FP list.
inline double average_precision(const std::vector<bool>& is_tp, std::size_t positives) {
    if (positives == 0) return 0.0;
    std::vector<double> rec{0.0}, prec{0.0};
    std::size_t tp = 0;
    for (std::size_t k = 0; k < is_tp.size(); ++k) {
        if (is_tp[k]) ++tp;
        rec.push_back(static_cast<double>(tp) / static_cast<double>(positives));
        prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
    rec.push_back(1.0);
    prec.push_back(0.0);
    for (std::size_t i = prec.size() - 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
    double ap = 0.0;
    for (std::size_t i = 1; i < rec.size(); ++i)
        if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
    return ap;
}

struct MapResult {
    double map = 0.0;
    std::array<double, kNumThresholds> per_threshold{};
    std::map<std::size_t, double> per_category;  // AP averaged over thresholds
    std::size_t categories_present = 0;
    std::size_t categories_absent = 0;
};

// Per category and threshold: detections ranked by score; each becomes a TP
// when it reaches IoU >= t with a not-yet-matched GT segment of that
// category in the same video (highest IoU first). AP uses the precision
// envelope; the mean runs over categories present in GT, then thresholds.
inline MapResult detection_map(const std::vector<VideoPrediction>& preds, const std::vector<VideoTruth>& truths,
                               std::size_t num_categories) {
    if (preds.size() != truths.size()) throw InputError("detection_map: prediction and GT video counts differ");
    MapResult res;
    const auto th = iou_thresholds();
    struct Det {
        double score;
        std::size_t video, seg;
    };
    std::vector<std::vector<Det>> dets(num_categories);
    std::vector<std::size_t> positives(num_categories, 0);
    for (std::size_t v = 0; v < truths.size(); ++v) {
        for (const auto& g : truths[v].segments)
            for (auto c : g.labels)
                if (c < num_categories) ++positives[c];
        for (std::size_t s = 0; s < preds[v].segments.size(); ++s)
            for (const auto& cs : preds[v].segments[s].categories) {
                if (cs.category >= num_categories) throw InputError("prediction category " + std::to_string(cs.category) + " out of range");
                dets[cs.category].push_back({cs.score, v, s});
            }
    }
    for (auto& d : dets)
        std::stable_sort(d.begin(), d.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

    for (std::size_t c = 0; c < num_categories; ++c) {
        if (positives[c] == 0) {
            if (!dets[c].empty()) ++res.categories_absent;
            continue;
        }
        ++res.categories_present;
        double ap_sum = 0.0;
        for (std::size_t k = 0; k < kNumThresholds; ++k) {
            std::vector<std::vector<bool>> used(truths.size());
            for (std::size_t v = 0; v < truths.size(); ++v) used[v].assign(truths[v].segments.size(), false);
            std::vector<bool> is_tp;
            for (const auto& d : dets[c]) {
                const auto& p = preds[d.video].segments[d.seg];
                const auto& gts = truths[d.video].segments;
                long best = -1;
                double best_iou = -1.0;
                for (std::size_t g = 0; g < gts.size(); ++g) {
                    if (used[d.video][g] || std::find(gts[g].labels.begin(), gts[g].labels.end(), c) == gts[g].labels.end()) continue;
                    const double iou = interval_iou({p.start_s, p.end_s}, {gts[g].start_s, gts[g].end_s});
                    if (iou >= th[k] && iou > best_iou) {
                        best_iou = iou;
                        best = static_cast<long>(g);
                    }
                }
                if (best >= 0) used[d.video][static_cast<std::size_t>(best)] = true;
                is_tp.push_back(best >= 0);
            }
            const double ap = average_precision(is_tp, positives[c]);
            res.per_threshold[k] += ap;
            ap_sum += ap;
        }
        res.per_category[c] = ap_sum / static_cast<double>(kNumThresholds);
    }
    if (res.categories_present == 0) return res;
    double total = 0.0;
    for (auto& v : res.per_threshold) {
        v /= static_cast<double>(res.categories_present);
        total += v;
    }
    res.map = total / static_cast<double>(kNumThresholds);
    return res;
}

inline double overall(double auc, double f1) { return auc * f1; }

// ---------------------------------------------------------------------------
// Full report.

struct EvalReport {
    double auc = 0.0;
    double f1 = 0.0;
    double overall = 0.0;
    double map = 0.0;
    AucResult auc_detail;
    F1Result f1_detail;
    MapResult map_detail;
    std::size_t videos = 0;
};

inline std::vector<Interval> intervals_of(const std::vector<PredictedSegment>& segs) {
    std::vector<Interval> out;
    for (const auto& s : segs) out.push_back({s.start_s, s.end_s});
    return out;
}

inline std::vector<Interval> intervals_of(const std::vector<data::GtSegment>& segs) {
    std::vector<Interval> out;
    for (const auto& s : segs) out.push_back({s.start_s, s.end_s});
    return out;
}

// Predictions and truths are paired by position; ids must agree.
inline EvalReport evaluate(const std::vector<VideoPrediction>& preds, const std::vector<VideoTruth>& truths, std::size_t num_categories) {
    if (preds.size() != truths.size()) throw InputError("evaluate: prediction and GT video counts differ");
    std::vector<std::vector<Interval>> ps, gs;
    std::vector<std::vector<double>> pb, gb;
    for (std::size_t v = 0; v < truths.size(); ++v) {
        if (preds[v].id != truths[v].id) throw InputError("evaluate: video order mismatch at '" + preds[v].id + "'");
        ps.push_back(intervals_of(preds[v].segments));
        gs.push_back(intervals_of(truths[v].segments));
        pb.push_back(internal_boundaries(ps.back(), truths[v].duration_s));
        gb.push_back(internal_boundaries(gs.back(), truths[v].duration_s));
    }
    EvalReport r;
    r.videos = truths.size();
    r.auc_detail = segmentation_auc(ps, gs);
    r.f1_detail = boundary_f1(pb, gb);
    r.map_detail = detection_map(preds, truths, num_categories);
    r.auc = r.auc_detail.auc;
    r.f1 = r.f1_detail.f1;
    r.overall = overall(r.auc, r.f1);
    r.map = r.map_detail.map;
    return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["videos"] = r.videos;
    j["auc_mean_recall"] = r.auc;
    j["f1"] = r.f1;
    j["overall"] = r.overall;
    j["map"] = r.map;
    j["recall_at_iou"] = r.auc_detail.recalls;
    j["iou_thresholds"] = iou_thresholds();
    j["skipped_videos"] = r.auc_detail.skipped_videos;
    j["boundary"] = {{"precision", r.f1_detail.precision},
                     {"recall", r.f1_detail.recall},
                     {"true_positives", r.f1_detail.true_positives},
                     {"predicted", r.f1_detail.predicted},
                     {"ground_truth", r.f1_detail.ground_truth}};
    j["map_at_iou"] = r.map_detail.per_threshold;
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [c, ap] : r.map_detail.per_category) cats[std::to_string(c)] = ap;
    j["ap_per_category"] = cats;
    j["categories_present"] = r.map_detail.categories_present;
    j["categories_absent_from_gt"] = r.map_detail.categories_absent;
    return j;
}

struct TableRow {
    std::string label;
    EvalReport report;
};

// Percentages with one decimal, one row per configuration.
inline std::string format_table(const std::vector<TableRow>& rows) {
    std::size_t w = 6;
    for (const auto& r : rows) w = std::max(w, r.label.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(w)) << "Config" << std::right << std::setw(9) << "AUC" << std::setw(9) << "F1"
       << std::setw(9) << "Overall" << std::setw(9) << "mAP" << '\n';
    os << std::string(w + 36, '-') << '\n';
    os << std::fixed << std::setprecision(1);
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(w)) << r.label << std::right << std::setw(9) << 100.0 * r.report.auc
           << std::setw(9) << 100.0 * r.report.f1 << std::setw(9) << 100.0 * r.report.overall << std::setw(9)
           << 100.0 * r.report.map << '\n';
    }
    return os.str();
}

}  // namespace adstruct::metrics
