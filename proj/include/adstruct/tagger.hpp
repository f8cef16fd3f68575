#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "adstruct/dataio.hpp"
#include "adstruct/encoder.hpp"
#include "adstruct/errors.hpp"
#include "adstruct/metrics.hpp"
#include "adstruct/nn/layers.hpp"
#include "adstruct/nn/ops.hpp"

namespace adstruct::tag {

inline constexpr std::size_t kMaxLabelsPerProposal = 20;
inline constexpr double kLabelIou = 0.5;

struct TaggerConfig {
    EncoderConfig encoder = [] {
        EncoderConfig e;
        e.ple = true;
        return e;
    }();
    std::size_t categories = data::kNumCategories;
    double iou_weight = 1.0;

    void validate() const {
        encoder.validate();
        if (categories == 0) throw ConfigError("tagger needs at least one category");
        if (iou_weight < 0.0) throw ConfigError("IoU loss weight must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const TaggerConfig& c) {
    j = {{"encoder", c.encoder}, {"categories", c.categories}, {"iou_weight", c.iou_weight}};
}

inline void from_json(const nlohmann::json& j, TaggerConfig& c) {
    TaggerConfig d;
    c.encoder = j.contains("encoder") ? j.at("encoder").get<EncoderConfig>() : d.encoder;
    c.categories = j.value("categories", d.categories);
    c.iou_weight = j.value("iou_weight", d.iou_weight);
}

// Clip span covered by [start_s, end_s) on the 0.5 s grid, clamped to the video.
inline ClipSpan clip_span_of(double start_s, double end_s, std::size_t clips) {
    if (clips == 0) throw InputError("video has no clips");
    auto first = static_cast<long>(std::llround(start_s / data::kClipSeconds));
    auto end = static_cast<long>(std::llround(end_s / data::kClipSeconds));
    first = std::clamp<long>(first, 0, static_cast<long>(clips) - 1);
    end = std::clamp<long>(end, first + 1, static_cast<long>(clips));
    return {static_cast<std::size_t>(first), static_cast<std::size_t>(end - 1)};
}

inline metrics::Interval seconds_of(ClipSpan s) {
    return {static_cast<double>(s.first) * data::kClipSeconds, static_cast<double>(s.last + 1) * data::kClipSeconds};
}

// Mean of rows first..last of the encoder states.
inline nn::Tensor pool_proposal(const nn::Tensor& h, std::size_t first, std::size_t last) {
    if (first > last || last >= h.rows()) {
        throw InputError("proposal [" + std::to_string(first) + ", " + std::to_string(last) + "] outside " +
                         std::to_string(h.rows()) + " clips");
    }
    return nn::mean_rows(h, first, last);
}

struct TagHeads {
    nn::Tensor p_cls;  // 1 x categories
    nn::Tensor p_iou;  // 1 x 1
};

// One supervised example. Proposals that match no GT segment well enough
// carry no label target and only train the IoU head.
struct TagPair {
    ClipSpan span;
    std::vector<double> labels;  // multi-hot, empty when unlabeled
    double iou = 1.0;
};

inline std::vector<double> multi_hot(const std::vector<std::size_t>& labels, std::size_t categories) {
    std::vector<double> y(categories, 0.0);
    for (auto l : labels) {
        if (l >= categories) throw InputError("label " + std::to_string(l) + " >= " + std::to_string(categories) + " categories");
        y[l] = 1.0;
    }
    return y;
}

// GT segments as exact pairs, then each proposal labeled by its best-IoU GT.
inline std::vector<TagPair> make_tag_pairs(const std::vector<data::GtSegment>& gt, const std::vector<ClipSpan>& proposals,
                                           std::size_t clips, std::size_t categories) {
    std::vector<TagPair> pairs;
    for (const auto& g : gt) pairs.push_back({clip_span_of(g.start_s, g.end_s, clips), multi_hot(g.labels, categories), 1.0});
    for (const auto& p : proposals) {
        double best = 0.0;
        const data::GtSegment* match = nullptr;
        for (const auto& g : gt) {
            const double u = metrics::interval_iou(seconds_of(p), {g.start_s, g.end_s});
            if (u > best) {
                best = u;
                match = &g;
            }
        }
        TagPair tp{p, {}, best};
        if (match && best >= kLabelIou) tp.labels = multi_hot(match->labels, categories);
        pairs.push_back(std::move(tp));
    }
    return pairs;
}

// p_star * p_iou * p_prop, per category.
inline std::vector<double> final_category_score(const std::vector<double>& p_star, double p_iou, double p_prop) {
    std::vector<double> out(p_star.size());
    for (std::size_t c = 0; c < p_star.size(); ++c) out[c] = p_star[c] * p_iou * p_prop;
    return out;
}

// Highest-scoring categories, at most `limit`, ties to the lower id.
inline std::vector<metrics::CategoryScore> top_categories(const std::vector<double>& p_cat, std::size_t limit = kMaxLabelsPerProposal) {
    std::vector<metrics::CategoryScore> all;
    for (std::size_t c = 0; c < p_cat.size(); ++c) all.push_back({c, p_cat[c]});
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (all.size() > limit) all.resize(limit);
    return all;
}

class TaggerModel {
public:
    TaggerModel(const TaggerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        nn::Rng rng(seed);
        encoder_ = MultiModalEncoder(params_, "encoder", cfg.encoder, rng);
        cls_ = nn::Linear(params_, "cls", cfg.encoder.width, cfg.categories, rng);
        iou_ = nn::Linear(params_, "iou", cfg.encoder.width, 1, rng);
    }

    TaggerModel(const TaggerModel&) = delete;
    TaggerModel& operator=(const TaggerModel&) = delete;

    const TaggerConfig& config() const { return cfg_; }
    nn::ParameterSet& parameters() { return params_; }
    const MultiModalEncoder& encoder() const { return encoder_; }
    const nn::Linear& classifier() const { return cls_; }
    const nn::Linear& iou_head() const { return iou_; }

    // Whole-video encoding with the span marked, pooled over the span.
    nn::Tensor embed(const data::PreparedVideo& v, ClipSpan span) const {
        if (span.first > span.last || span.last >= v.clips) throw InputError("proposal outside video '" + v.id + "'");
        nn::Tensor h = encoder_(v.video, v.audio, v.token_ids, span).va_states;
        return pool_proposal(h, span.first, span.last);
    }

    TagHeads heads(const nn::Tensor& v) const { return {nn::sigmoid(cls_(v)), nn::sigmoid(iou_(v))}; }

    nn::Tensor loss(const data::PreparedVideo& v, const TagPair& pair) const {
        TagHeads h = heads(embed(v, pair.span));
        const double iou_target[1] = {pair.iou};
        nn::Tensor l = nn::scale(nn::binary_cross_entropy(h.p_iou, iou_target), cfg_.iou_weight);
        if (!pair.labels.empty()) l = nn::add(nn::binary_cross_entropy(h.p_cls, pair.labels), l);
        return l;
    }

private:
    TaggerConfig cfg_;
    nn::ParameterSet params_;
    MultiModalEncoder encoder_;
    nn::Linear cls_, iou_;
};

}  // namespace adstruct::tag
