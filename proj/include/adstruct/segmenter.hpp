#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "adstruct/dataio.hpp"
#include "adstruct/encoder.hpp"
#include "adstruct/errors.hpp"
#include "adstruct/metrics.hpp"
#include "adstruct/nn/layers.hpp"

namespace adstruct::seg {

inline constexpr double kTemLossWeight = 5.0;

enum class ConfidenceMode { Product, ClsOnly, RegOnly };

inline std::string to_string(ConfidenceMode m) {
    switch (m) {
        case ConfidenceMode::ClsOnly: return "cls";
        case ConfidenceMode::RegOnly: return "reg";
        default: return "product";
    }
}

inline ConfidenceMode confidence_mode_from(const std::string& s) {
    if (s == "product") return ConfidenceMode::Product;
    if (s == "cls") return ConfidenceMode::ClsOnly;
    if (s == "reg") return ConfidenceMode::RegOnly;
    throw ConfigError("unknown confidence mode '" + s + "' (expected product, cls or reg)");
}

struct SegmenterConfig {
    EncoderConfig encoder;
    std::size_t tem_layers = 2;
    std::size_t max_duration = 0;  // 0: every duration up to the video length
    std::size_t samples = 8;       // points sampled per candidate span
    double context_ratio = 0.5;    // sampling range extension on each side, as a fraction of the span
    std::size_t pem_channels = 16;
    std::size_t pem_hidden = 32;
    double tem_weight = kTemLossWeight;
    ConfidenceMode confidence = ConfidenceMode::Product;

    void validate() const {
        encoder.validate();
        if (samples == 0) throw ConfigError("BM layer needs at least one sample per span");
        if (context_ratio < 0.0) throw ConfigError("context ratio must be >= 0");
        if (tem_weight < 0.0) throw ConfigError("TEM loss weight must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const SegmenterConfig& c) {
    j = {{"encoder", c.encoder},           {"tem_layers", c.tem_layers},     {"max_duration", c.max_duration},
         {"samples", c.samples},           {"context_ratio", c.context_ratio}, {"pem_channels", c.pem_channels},
         {"pem_hidden", c.pem_hidden},     {"tem_weight", c.tem_weight},     {"confidence", to_string(c.confidence)}};
}

inline void from_json(const nlohmann::json& j, SegmenterConfig& c) {
    SegmenterConfig d;
    c.encoder = j.value("encoder", nlohmann::json::object()).get<EncoderConfig>();
    c.tem_layers = j.value("tem_layers", d.tem_layers);
    c.max_duration = j.value("max_duration", d.max_duration);
    c.samples = j.value("samples", d.samples);
    c.context_ratio = j.value("context_ratio", d.context_ratio);
    c.pem_channels = j.value("pem_channels", d.pem_channels);
    c.pem_hidden = j.value("pem_hidden", d.pem_hidden);
    c.tem_weight = j.value("tem_weight", d.tem_weight);
    c.confidence = confidence_mode_from(j.value("confidence", std::string("product")));
}

// ---------------------------------------------------------------------------
// Labels

// Clip t is a boundary clip when an internal GT boundary falls in
// [0.5 t - 0.25, 0.5 t + 0.25). Video start and end are not decisions.
inline std::vector<double> boundary_labels(const std::vector<data::GtSegment>& segments, std::size_t clips) {
    std::vector<double> y(clips, 0.0);
    const double half = data::kClipSeconds / 2;
    for (std::size_t s = 1; s < segments.size(); ++s) {
        const double b = segments[s].start_s;
        for (std::size_t t = 0; t < clips; ++t) {
            const double c = static_cast<double>(t) * data::kClipSeconds;
            if (b >= c - half && b < c + half) y[t] = 1.0;
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Boundary-matching layout: the valid (duration, start) cells of one clip
// count and the fixed sampling weights that gather span features for them.

struct MapLayout {
    std::size_t clips = 0;
    std::size_t max_duration = 0;
    nn::GridIndex grid;  // height = max_duration (row d-1), width = clips (start)
    std::shared_ptr<const nn::SamplingPlan> plan;

    std::size_t cells() const { return grid.rows(); }
    std::size_t duration_of(std::size_t cell) const { return grid.cells[cell].first + 1; }
    std::size_t start_of(std::size_t cell) const { return grid.cells[cell].second; }
    long cell_of(std::size_t duration, std::size_t start) const {
        if (duration == 0) return -1;
        return grid.row(static_cast<long>(duration - 1), static_cast<long>(start));
    }
};

inline std::shared_ptr<const MapLayout> build_layout(std::size_t clips, std::size_t max_duration, std::size_t samples,
                                                     double context_ratio) {
    if (clips == 0) throw InputError("map layout needs at least one clip");
    auto layout = std::make_shared<MapLayout>();
    layout->clips = clips;
    layout->max_duration = max_duration == 0 ? clips : std::min(max_duration, clips);
    auto& g = layout->grid;
    g.height = layout->max_duration;
    g.width = clips;
    g.row_of_cell.assign(g.height * g.width, -1);
    for (std::size_t d = 1; d <= layout->max_duration; ++d) {
        for (std::size_t s = 0; s + d <= clips; ++s) {
            g.row_of_cell[(d - 1) * clips + s] = static_cast<long>(g.cells.size());
            g.cells.emplace_back(d - 1, s);
        }
    }
    auto plan = std::make_shared<nn::SamplingPlan>();
    plan->input_rows = clips;
    plan->output_rows = g.cells.size();
    plan->groups = samples;
    plan->index.resize(plan->output_rows * samples * 2);
    plan->weight.resize(plan->index.size());
    const double last = static_cast<double>(clips - 1);
    for (std::size_t r = 0; r < g.cells.size(); ++r) {
        const double d = static_cast<double>(g.cells[r].first + 1);
        const double s = static_cast<double>(g.cells[r].second);
        // Clip t's feature sits at position t; the span covers [s - 0.5, s + d - 0.5].
        const double lo = s - 0.5 - context_ratio * d;
        const double hi = s + d - 0.5 + context_ratio * d;
        for (std::size_t n = 0; n < samples; ++n) {
            const double pos = std::clamp(lo + (static_cast<double>(n) + 0.5) * (hi - lo) / static_cast<double>(samples), 0.0, last);
            const auto a = static_cast<std::size_t>(std::floor(pos));
            const std::size_t b = std::min(a + 1, clips - 1);
            const double f = pos - static_cast<double>(a);
            const std::size_t k = (r * samples + n) * 2;
            plan->index[k] = static_cast<std::uint32_t>(a);
            plan->index[k + 1] = static_cast<std::uint32_t>(b);
            plan->weight[k] = 1.0 - f;
            plan->weight[k + 1] = f;
        }
    }
    layout->plan = plan;
    return layout;
}

// ---------------------------------------------------------------------------
// Confidence map (plain values, for inference and dumps).

struct ConfidenceMap {
    std::shared_ptr<const MapLayout> layout;
    std::vector<double> cls;  // one per layout cell
    std::vector<double> reg;

    bool valid(std::size_t duration, std::size_t start) const { return layout->cell_of(duration, start) >= 0; }

    double confidence(std::size_t duration, std::size_t start, ConfidenceMode mode) const {
        const long c = layout->cell_of(duration, start);
        if (c < 0) throw InputError("map cell (duration " + std::to_string(duration) + ", start " + std::to_string(start) + ") is not valid");
        const auto i = static_cast<std::size_t>(c);
        switch (mode) {
            case ConfidenceMode::ClsOnly: return cls[i];
            case ConfidenceMode::RegOnly: return reg[i];
            default: return cls[i] * reg[i];
        }
    }
};

// ---------------------------------------------------------------------------
// Fused proposal score.

// Boundary-point probabilities: point k sits at time 0.5 k, k = 0..m. Point k
// < m is clip k's TEM output; the two video edges are certain boundaries.
inline std::vector<double> boundary_points(std::span<const double> p_tem) {
    std::vector<double> q(p_tem.size() + 1, 1.0);
    for (std::size_t k = 1; k < p_tem.size(); ++k) q[k] = p_tem[k];
    return q;
}

// q_i * q_j * p_cof * min_{i<k<j} (1 - q_k); the min over an empty interior is 1.
inline double fuse_score(std::span<const double> q, std::size_t i, std::size_t j, double p_cof) {
    if (i > j || j >= q.size()) {
        throw InputError("fuse_score: span (" + std::to_string(i) + ", " + std::to_string(j) + ") outside " +
                         std::to_string(q.size()) + " boundary points");
    }
    double interior = 1.0;
    for (std::size_t k = i + 1; k < j; ++k) interior = std::min(interior, 1.0 - q[k]);
    return q[i] * q[j] * p_cof * interior;
}

struct ScoredProposal {
    std::size_t first = 0;  // inclusive clip span
    std::size_t last = 0;
    double p_start = 0.0;
    double p_end = 0.0;
    double p_cof = 0.0;
    double interior = 1.0;
    double p_prop = 0.0;

    double start_s() const { return static_cast<double>(first) * data::kClipSeconds; }
    double end_s() const { return static_cast<double>(last + 1) * data::kClipSeconds; }
};

// Scores clip span [first, last]: its start boundary is point `first`, its
// end boundary point `last + 1`, and the PEM cell is (last - first + 1, first).
inline ScoredProposal score_span(std::span<const double> q, const ConfidenceMap& map, std::size_t first, std::size_t last,
                                 ConfidenceMode mode) {
    if (first > last || last + 1 >= q.size()) {
        throw InputError("proposal [" + std::to_string(first) + ", " + std::to_string(last) + "] outside the video");
    }
    ScoredProposal p;
    p.first = first;
    p.last = last;
    p.p_start = q[first];
    p.p_end = q[last + 1];
    p.p_cof = map.confidence(last - first + 1, first, mode);
    for (std::size_t k = first + 1; k < last + 1; ++k) p.interior = std::min(p.interior, 1.0 - q[k]);
    p.p_prop = fuse_score(q, first, last + 1, p.p_cof);
    return p;
}

// Every valid map cell as a scored candidate, best first (ties: earlier start, shorter).
inline std::vector<ScoredProposal> score_candidates(std::span<const double> q, const ConfidenceMap& map, ConfidenceMode mode) {
    std::vector<ScoredProposal> out;
    out.reserve(map.layout->cells());
    for (std::size_t c = 0; c < map.layout->cells(); ++c) {
        const std::size_t d = map.layout->duration_of(c), s = map.layout->start_of(c);
        out.push_back(score_span(q, map, s, s + d - 1, mode));
    }
    std::stable_sort(out.begin(), out.end(), [](const ScoredProposal& a, const ScoredProposal& b) {
        if (a.p_prop != b.p_prop) return a.p_prop > b.p_prop;
        if (a.first != b.first) return a.first < b.first;
        return a.last < b.last;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Losses.

inline nn::Tensor tem_loss(const nn::Tensor& p, std::span<const double> labels) {
    if (p.size() != labels.size()) {
        throw InputError("tem_loss: " + std::to_string(p.size()) + " probabilities vs " + std::to_string(labels.size()) + " labels");
    }
    return nn::binary_cross_entropy(p, labels);
}

// Max IoU of each layout cell's time span against the GT segments.
inline std::vector<double> pem_iou_labels(const MapLayout& layout, const std::vector<data::GtSegment>& segments) {
    std::vector<double> out(layout.cells(), 0.0);
    for (std::size_t c = 0; c < layout.cells(); ++c) {
        const double s = static_cast<double>(layout.start_of(c)) * data::kClipSeconds;
        const double e = s + static_cast<double>(layout.duration_of(c)) * data::kClipSeconds;
        for (const auto& g : segments) out[c] = std::max(out[c], metrics::interval_iou({s, e}, {g.start_s, g.end_s}));
    }
    return out;
}

inline constexpr double kPemPositiveIou = 0.9;

// Balanced PEM loss. cls: every cell with label > 0.9 plus an equal number of
// randomly drawn other cells. reg: all cells with label > 0 plus an equal
// number of zero-label cells.
inline nn::Tensor pem_loss(const nn::Tensor& cls, const nn::Tensor& reg, std::span<const double> labels, nn::Rng& rng) {
    const std::size_t n = labels.size();
    if (n == 0 || cls.size() != n || reg.size() != n) throw TrainingError("pem_loss: no valid map cells");
    std::vector<std::size_t> pos, neg, overlap, zero;
    for (std::size_t i = 0; i < n; ++i) {
        (labels[i] > kPemPositiveIou ? pos : neg).push_back(i);
        (labels[i] > 0.0 ? overlap : zero).push_back(i);
    }
    auto draw = [&rng](std::vector<std::size_t>& from, std::size_t count) {
        count = std::min(count, from.size());
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t r = k + std::uniform_int_distribution<std::size_t>(0, from.size() - 1 - k)(rng);
            std::swap(from[k], from[r]);
        }
        from.resize(count);
    };
    std::vector<double> cls_target(n), cls_weight(n, 0.0), reg_weight(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) cls_target[i] = labels[i] > kPemPositiveIou ? 1.0 : 0.0;
    draw(neg, std::max<std::size_t>(pos.size(), 1));
    for (auto i : pos) cls_weight[i] = 1.0;
    for (auto i : neg) cls_weight[i] = 1.0;
    draw(zero, overlap.size());
    for (auto i : overlap) reg_weight[i] = 1.0;
    for (auto i : zero) reg_weight[i] = 1.0;
    return nn::add(nn::binary_cross_entropy(cls, cls_target, cls_weight), nn::weighted_mse(reg, labels, reg_weight));
}

// TEM weight * TEM + PEM. A zero weight keeps TEM out of the graph entirely.
inline nn::Tensor segmenter_loss(const nn::Tensor& tem, const nn::Tensor& pem, double tem_weight = kTemLossWeight) {
    if (tem_weight == 0.0) return pem;
    return nn::add(nn::scale(tem, tem_weight), pem);
}

inline double segmenter_loss(double tem, double pem, double tem_weight = kTemLossWeight) { return tem_weight * tem + pem; }

// ---------------------------------------------------------------------------
// Networks.

class TemporalEvaluationModule {
public:
    TemporalEvaluationModule() = default;
    TemporalEvaluationModule(nn::ParameterSet& ps, const std::string& name, std::size_t width, std::size_t heads,
                             std::size_t ffn, std::size_t depth, nn::Rng& rng) {
        for (int k = 0; k < 3; ++k) convs_.emplace_back(ps, name + ".conv" + std::to_string(k), width, width, 3, rng);
        stack_ = nn::TransformerStack(ps, name + ".transformer", depth, width, heads, ffn, rng);
        out_ = nn::Linear(ps, name + ".out", width, 1, rng);
    }

    nn::Tensor operator()(const nn::Tensor& h) const {
        nn::Tensor x = h;
        for (const auto& c : convs_) x = nn::relu(c(x));
        return nn::sigmoid(out_(stack_(x)));
    }

    const nn::Linear& output_layer() const { return out_; }

private:
    std::vector<nn::Conv1d> convs_;
    nn::TransformerStack stack_;
    nn::Linear out_;
};

class ProposalEvaluationModule {
public:
    ProposalEvaluationModule() = default;
    ProposalEvaluationModule(nn::ParameterSet& ps, const std::string& name, std::size_t width, std::size_t channels,
                             std::size_t hidden, std::size_t samples, nn::Rng& rng) {
        reduce_ = nn::Conv1d(ps, name + ".reduce", width, channels, 3, rng);
        span_ = nn::Linear(ps, name + ".span", samples * channels, hidden, rng);
        grid_w_ = ps.add(name + ".grid.weight", {9 * hidden, channels}, nn::Init::xavier(9.0 * double(hidden), 9.0 * double(channels)), rng);
        grid_b_ = ps.add(name + ".grid.bias", {1, channels}, nn::Init::zeros(), rng);
        out_ = nn::Linear(ps, name + ".out", channels, 2, rng);
    }

    // cells x 2 probabilities: column 0 classification, column 1 regression.
    nn::Tensor operator()(const nn::Tensor& h, const MapLayout& layout) const {
        nn::Tensor sampled = nn::sample_rows(nn::relu(reduce_(h)), layout.plan);
        nn::Tensor cells = nn::relu(span_(sampled));
        cells = nn::relu(nn::grid_conv3x3(cells, layout.grid, grid_w_, grid_b_));
        return nn::sigmoid(out_(cells));
    }

private:
    nn::Conv1d reduce_;
    nn::Linear span_;
    nn::Tensor grid_w_, grid_b_;
    nn::Linear out_;
};

struct SegmenterOutput {
    nn::Tensor tem;  // clips x 1
    nn::Tensor map;  // cells x 2
    std::shared_ptr<const MapLayout> layout;

    std::vector<double> tem_values() const { return {tem.data().begin(), tem.data().end()}; }

    ConfidenceMap confidence_map() const {
        ConfidenceMap cm{layout, {}, {}};
        for (std::size_t c = 0; c < layout->cells(); ++c) {
            cm.cls.push_back(map.at(c, 0));
            cm.reg.push_back(map.at(c, 1));
        }
        return cm;
    }
};

struct SegmenterLoss {
    nn::Tensor total;
    double tem = 0.0;
    double pem = 0.0;
};

class SegmenterModel {
public:
    explicit SegmenterModel(const SegmenterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        nn::Rng rng(seed);
        const auto& e = cfg.encoder;
        encoder_ = MultiModalEncoder(params_, "encoder", e, rng);
        tem_ = TemporalEvaluationModule(params_, "tem", e.width, e.heads, e.ffn, cfg.tem_layers, rng);
        pem_ = ProposalEvaluationModule(params_, "pem", e.width, cfg.pem_channels, cfg.pem_hidden, cfg.samples, rng);
    }

    SegmenterModel(const SegmenterModel&) = delete;
    SegmenterModel& operator=(const SegmenterModel&) = delete;

    const SegmenterConfig& config() const { return cfg_; }
    nn::ParameterSet& parameters() { return params_; }
    const MultiModalEncoder& encoder() const { return encoder_; }
    const TemporalEvaluationModule& tem() const { return tem_; }

    std::shared_ptr<const MapLayout> layout(std::size_t clips) const {
        std::lock_guard lock(layout_mutex_);
        auto& slot = layouts_[clips];
        if (!slot) slot = build_layout(clips, cfg_.max_duration, cfg_.samples, cfg_.context_ratio);
        return slot;
    }

    SegmenterOutput forward(const data::PreparedVideo& v) const {
        nn::Tensor h = encoder_(v.video, v.audio, v.token_ids).va_states;
        auto lay = layout(v.clips);
        return {tem_(h), pem_(h, *lay), lay};
    }

    SegmenterLoss loss(const data::PreparedVideo& v, const std::vector<data::GtSegment>& gt, nn::Rng& rng) const {
        SegmenterOutput out = forward(v);
        const auto y = boundary_labels(gt, v.clips);
        const auto labels = pem_iou_labels(*out.layout, gt);
        nn::Tensor t = tem_loss(out.tem, y);
        nn::Tensor p = pem_loss(nn::slice_cols(out.map, 0, 1), nn::slice_cols(out.map, 1, 2), labels, rng);
        return {segmenter_loss(t, p, cfg_.tem_weight), t.item(), p.item()};
    }

private:
    SegmenterConfig cfg_;
    nn::ParameterSet params_;
    MultiModalEncoder encoder_;
    TemporalEvaluationModule tem_;
    ProposalEvaluationModule pem_;
    mutable std::mutex layout_mutex_;
    mutable std::map<std::size_t, std::shared_ptr<const MapLayout>> layouts_;
};

// Per-video dump: TEM probabilities, valid map cells, scored candidates.
inline nlohmann::json dump_segmenter(const std::string& id, const SegmenterOutput& out, const std::vector<ScoredProposal>& candidates) {
    nlohmann::json j;
    j["id"] = id;
    j["p_tem"] = out.tem_values();
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t c = 0; c < out.layout->cells(); ++c)
        cells.push_back({{"duration", out.layout->duration_of(c)}, {"start", out.layout->start_of(c)},
                         {"cls", out.map.at(c, 0)}, {"reg", out.map.at(c, 1)}});
    j["map"] = cells;
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& p : candidates)
        cands.push_back({{"first_clip", p.first}, {"last_clip", p.last}, {"start_s", p.start_s()}, {"end_s", p.end_s()},
                         {"p_start", p.p_start}, {"p_end", p.p_end}, {"p_cof", p.p_cof}, {"interior", p.interior},
                         {"p_prop", p.p_prop}});
    j["candidates"] = cands;
    return j;
}

}  // namespace adstruct::seg
