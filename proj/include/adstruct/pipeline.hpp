#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "adstruct/dataio.hpp"
#include "adstruct/errors.hpp"
#include "adstruct/metrics.hpp"
#include "adstruct/nn/optim.hpp"
#include "adstruct/postproc.hpp"
#include "adstruct/retrieval.hpp"
#include "adstruct/segmenter.hpp"
#include "adstruct/tagger.hpp"

namespace adstruct::pipe {

using LogFn = std::function<void(const nlohmann::json&)>;

inline void no_log(const nlohmann::json&) {}

struct TrainOptions {
    std::size_t epochs = 10;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 0;  // linear ramp from lr / warmup_steps up to lr
    double clip_norm = 0.0;        // 0 disables gradient clipping
    std::uint64_t seed = 42;

    double lr_at(std::size_t step) const {
        if (warmup_steps == 0 || step >= warmup_steps) return lr;
        return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
};

inline void to_json(nlohmann::json& j, const TrainOptions& o) {
    j = {{"epochs", o.epochs},           {"lr", o.lr},           {"weight_decay", o.weight_decay},
         {"warmup_steps", o.warmup_steps}, {"clip_norm", o.clip_norm}, {"seed", o.seed}};
}

inline void from_json(const nlohmann::json& j, TrainOptions& o) {
    TrainOptions d;
    o.epochs = j.value("epochs", d.epochs);
    o.lr = j.value("lr", d.lr);
    o.weight_decay = j.value("weight_decay", d.weight_decay);
    o.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    o.clip_norm = j.value("clip_norm", d.clip_norm);
    o.seed = j.value("seed", d.seed);
}

struct InferOptions {
    post::GapMode gap = post::GapMode::Fill;
    bool sga = true;
    ret::ClassifierMode classifier = ret::ClassifierMode::Ensemble;
    std::size_t threads = 1;
};

inline void to_json(nlohmann::json& j, const InferOptions& o) {
    j = {{"gap", o.gap == post::GapMode::Fill ? "fill" : "merge"},
         {"sga", o.sga},
         {"classifier", ret::to_string(o.classifier)},
         {"threads", o.threads}};
}

inline void from_json(const nlohmann::json& j, InferOptions& o) {
    o.gap = post::gap_mode_from(j.value("gap", std::string("fill")));
    o.sga = j.value("sga", true);
    o.classifier = ret::classifier_mode_from(j.value("classifier", std::string("ensemble")));
    o.threads = j.value("threads", std::size_t{1});
}

// ---------------------------------------------------------------------------
// Data helpers.

struct VideoSet {
    std::vector<const data::VideoRecord*> records;
    std::vector<data::PreparedVideo> prepared;
};

inline VideoSet prepare_set(const std::vector<data::VideoRecord>& videos, std::size_t max_text) {
    VideoSet s;
    for (const auto& r : videos) {
        s.records.push_back(&r);
        s.prepared.push_back(data::prepare_video(r, max_text));
    }
    return s;
}

// Copies feature widths and vocabulary from the dataset into an encoder config.
inline void fit_encoder(EncoderConfig& e, const data::DatasetHeader& h, std::size_t clips) {
    e.d_video = h.d_video;
    e.d_audio = h.d_audio;
    e.vocab = h.vocab_size;
    e.max_clips = std::max(e.max_clips, clips);
}

inline std::size_t max_clips_of(const data::Dataset& ds) {
    std::size_t m = 1;
    for (const auto& r : ds.videos) m = std::max(m, data::clip_count(r.duration_s));
    return m;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Training.

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double tem = 0.0;
    double pem = 0.0;
    std::size_t steps = 0;
};

inline nlohmann::json to_json(const EpochStats& e, const std::string& stage) {
    nlohmann::json j{{"event", "epoch"}, {"stage", stage}, {"epoch", e.epoch}, {"loss", e.loss}, {"steps", e.steps}};
    if (stage == "segmenter") {
        j["tem_loss"] = e.tem;
        j["pem_loss"] = e.pem;
    }
    return j;
}

using EpochHook = std::function<void(const EpochStats&)>;

inline void check_finite(double loss, const std::string& where) {
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss " + where);
}

inline void optimizer_step(nn::AdamW& adam, nn::ParameterSet& ps, const TrainOptions& opt) {
    adam.set_lr(opt.lr_at(static_cast<std::size_t>(adam.step_count())));
    if (opt.clip_norm > 0.0) nn::clip_grad_norm(ps, opt.clip_norm);
    adam.step(ps);
}

// One AdamW step per video, videos visited in a seeded shuffled order.
inline std::vector<EpochStats> train_segmenter(seg::SegmenterModel& model, const VideoSet& train, const TrainOptions& opt,
                                               const LogFn& log = no_log, const EpochHook& on_epoch = {}) {
    if (train.prepared.empty()) throw TrainingError("no training videos");
    nn::AdamW adam({.lr = opt.lr, .weight_decay = opt.weight_decay});
    nn::Rng order_rng(opt.seed ^ 0x5e67e27ULL), sample_rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train.prepared.size());
    std::vector<EpochStats> history;
    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), order_rng);
        EpochStats st{epoch};
        for (auto i : order) {
            model.parameters().zero_grad();
            nn::Tape tape;
            nn::GradRecorder rec(tape);
            auto l = model.loss(train.prepared[i], train.records[i]->segments, sample_rng);
            const double value = l.total.item();
            check_finite(value, "on video '" + train.prepared[i].id + "' in epoch " + std::to_string(epoch));
            tape.backward(l.total);
            optimizer_step(adam, model.parameters(), opt);
            st.loss += value;
            st.tem += l.tem;
            st.pem += l.pem;
            ++st.steps;
        }
        const double n = static_cast<double>(st.steps);
        st.loss /= n;
        st.tem /= n;
        st.pem /= n;
        history.push_back(st);
        log(to_json(st, "segmenter"));
        if (on_epoch) on_epoch(st);
    }
    return history;
}

// One AdamW step per (video, pair), pairs visited in a seeded shuffled order.
inline std::vector<EpochStats> train_tagger(tag::TaggerModel& model, const VideoSet& train, const std::vector<std::vector<tag::TagPair>>& pairs,
                                            const TrainOptions& opt, const LogFn& log = no_log, const EpochHook& on_epoch = {}) {
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t v = 0; v < pairs.size(); ++v)
        for (std::size_t k = 0; k < pairs[v].size(); ++k) items.emplace_back(v, k);
    if (items.empty()) throw TrainingError("no tagger training pairs");
    nn::AdamW adam({.lr = opt.lr, .weight_decay = opt.weight_decay});
    nn::Rng order_rng(opt.seed ^ 0x7a66e2ULL);
    std::vector<EpochStats> history;
    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(items.begin(), items.end(), order_rng);
        EpochStats st{epoch};
        for (const auto& [v, k] : items) {
            model.parameters().zero_grad();
            nn::Tape tape;
            nn::GradRecorder rec(tape);
            nn::Tensor l = model.loss(train.prepared[v], pairs[v][k]);
            const double value = l.item();
            check_finite(value, "on video '" + train.prepared[v].id + "' in epoch " + std::to_string(epoch));
            tape.backward(l);
            optimizer_step(adam, model.parameters(), opt);
            st.loss += value;
            ++st.steps;
        }
        st.loss /= static_cast<double>(st.steps);
        history.push_back(st);
        log(to_json(st, "tagger"));
        if (on_epoch) on_epoch(st);
    }
    return history;
}

// ---------------------------------------------------------------------------
// Inference.

struct SegmentResult {
    double start_s = 0.0;
    double end_s = 0.0;
    ClipSpan span;
    double p_prop = 0.0;
};

// TEM/PEM, fused scoring, NMS with gap handling, optional scene-guided
// alignment, then the fused score recomputed on the snapped clip span.
inline std::vector<SegmentResult> segment_video(const seg::SegmenterModel& model, const data::PreparedVideo& v,
                                                const std::vector<data::SceneFrame>& scenes, const InferOptions& opt) {
    auto out = model.forward(v);
    const auto mode = model.config().confidence;
    const auto q = seg::boundary_points(out.tem_values());
    const auto cmap = out.confidence_map();
    auto rescore = [&](std::size_t f, std::size_t l) { return seg::score_span(q, cmap, f, l, mode); };
    auto kept = post::nms_nonoverlap(seg::score_candidates(q, cmap, mode), v.clips, rescore, opt.gap);

    std::vector<post::TimedSegment> timed;
    for (const auto& k : kept) timed.push_back({k.start_s(), std::min(k.end_s(), v.duration_s)});
    timed.back().end_s = v.duration_s;
    if (opt.sga) timed = post::align_segmentation(timed, scenes);

    std::vector<SegmentResult> res;
    for (const auto& t : timed) {
        SegmentResult r{t.start_s, t.end_s, tag::clip_span_of(t.start_s, t.end_s, v.clips), 0.0};
        r.p_prop = rescore(r.span.first, r.span.last).p_prop;
        res.push_back(r);
    }
    return res;
}

struct ProposalOutput {
    double start_s = 0.0;
    double end_s = 0.0;
    double p_prop = 0.0;
    double p_iou = 0.0;
    std::vector<metrics::CategoryScore> categories;
};

struct VideoOutput {
    std::string id;
    double duration_s = 0.0;
    std::vector<ProposalOutput> proposals;
};

// Per proposal: span-marked whole-video encoding, classifier and IoU heads,
// optional retrieval vote (never from the same video), final score, top 20.
inline std::vector<ProposalOutput> tag_segments(const tag::TaggerModel& tagger, const ret::RetrievalIndex* index, const data::PreparedVideo& v,
                                                const std::vector<SegmentResult>& segs, ret::ClassifierMode mode) {
    if (mode != ret::ClassifierMode::Cls && !index) throw RetrievalError("classifier mode '" + ret::to_string(mode) + "' needs a retrieval index");
    std::vector<ProposalOutput> out;
    for (const auto& s : segs) {
        nn::Tensor e = tagger.embed(v, s.span);
        auto heads = tagger.heads(e);
        std::vector<double> p_cls(heads.p_cls.data().begin(), heads.p_cls.data().end());
        std::vector<double> p_ret;
        if (mode != ret::ClassifierMode::Cls) {
            p_ret = index->classify(e.data(), ret::kNeighbors, v.id);
            if (p_ret.size() != p_cls.size()) throw RetrievalError("retrieval index and classifier disagree on the category count");
        }
        const auto p_star = mode == ret::ClassifierMode::Cls ? p_cls : ret::combine(mode, p_cls, p_ret);
        const double p_iou = heads.p_iou.item();
        out.push_back({s.start_s, s.end_s, s.p_prop, p_iou, tag::top_categories(tag::final_category_score(p_star, p_iou, s.p_prop))});
    }
    return out;
}

// Results come back in input order whatever the thread count.
inline std::vector<VideoOutput> infer(const seg::SegmenterModel& segmenter, const tag::TaggerModel& tagger, const ret::RetrievalIndex* index,
                                      const VideoSet& videos, const InferOptions& opt) {
    std::vector<VideoOutput> out(videos.prepared.size());
    parallel_for(videos.prepared.size(), opt.threads, [&](std::size_t i) {
        const auto& v = videos.prepared[i];
        auto segs = segment_video(segmenter, v, videos.records[i]->scene_frames, opt);
        out[i] = {v.id, v.duration_s, tag_segments(tagger, index, v, segs, opt.classifier)};
    });
    return out;
}

// Tagger training pairs: GT segments plus the segmenter's own proposals.
inline std::vector<std::vector<tag::TagPair>> tagger_pairs(const seg::SegmenterModel* segmenter, const VideoSet& train,
                                                           std::size_t categories, const InferOptions& opt) {
    std::vector<std::vector<tag::TagPair>> out(train.prepared.size());
    parallel_for(train.prepared.size(), opt.threads, [&](std::size_t i) {
        const auto& v = train.prepared[i];
        std::vector<ClipSpan> spans;
        if (segmenter)
            for (const auto& s : segment_video(*segmenter, v, train.records[i]->scene_frames, opt)) spans.push_back(s.span);
        out[i] = tag::make_tag_pairs(train.records[i]->segments, spans, v.clips, categories);
    });
    return out;
}

// Index entries: pooled span-marked embeddings of every training GT segment.
inline ret::RetrievalIndex build_index(const tag::TaggerModel& tagger, const VideoSet& train, std::size_t threads = 1) {
    const auto& cfg = tagger.config();
    std::vector<std::vector<std::pair<std::vector<double>, std::vector<double>>>> rows(train.prepared.size());
    parallel_for(train.prepared.size(), threads, [&](std::size_t i) {
        const auto& v = train.prepared[i];
        for (const auto& g : train.records[i]->segments) {
            nn::Tensor e = tagger.embed(v, tag::clip_span_of(g.start_s, g.end_s, v.clips));
            rows[i].emplace_back(std::vector<double>(e.data().begin(), e.data().end()), tag::multi_hot(g.labels, cfg.categories));
        }
    });
    ret::RetrievalIndex index(cfg.encoder.width, cfg.categories);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (const auto& [vec, lab] : rows[i]) index.add(vec, lab, train.prepared[i].id);
    if (index.size() == 0) throw RetrievalError("retrieval index is empty after build");
    return index;
}

// ---------------------------------------------------------------------------
// Predictions on disk and evaluation.

inline nlohmann::json predictions_to_json(const std::vector<VideoOutput>& videos) {
    nlohmann::json vs = nlohmann::json::array();
    for (const auto& v : videos) {
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& p : v.proposals) {
            nlohmann::json cats = nlohmann::json::array();
            for (const auto& c : p.categories) cats.push_back({{"id", c.category}, {"p_cat", c.score}});
            segs.push_back({{"start_s", p.start_s}, {"end_s", p.end_s}, {"p_prop", p.p_prop}, {"p_iou", p.p_iou}, {"categories", cats}});
        }
        vs.push_back({{"id", v.id}, {"duration_s", v.duration_s}, {"segments", segs}});
    }
    return {{"format", "adstruct-predictions"}, {"version", 1}, {"videos", vs}};
}

inline std::vector<VideoOutput> predictions_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "adstruct-predictions") throw InputError("not a predictions file (missing format tag)");
    std::vector<VideoOutput> out;
    for (const auto& v : j.at("videos")) {
        VideoOutput vo{v.at("id").get<std::string>(), v.value("duration_s", 0.0), {}};
        for (const auto& s : v.at("segments")) {
            ProposalOutput p{s.at("start_s").get<double>(), s.at("end_s").get<double>(), s.value("p_prop", 0.0), s.value("p_iou", 0.0), {}};
            for (const auto& c : s.at("categories")) p.categories.push_back({c.at("id").get<std::size_t>(), c.at("p_cat").get<double>()});
            if (p.categories.size() > tag::kMaxLabelsPerProposal) throw InputError("video '" + vo.id + "': more than 20 categories on a segment");
            vo.proposals.push_back(std::move(p));
        }
        out.push_back(std::move(vo));
    }
    return out;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write " + path.string());
    f << j.dump(1) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + " is not valid JSON: " + e.what());
    }
}

inline metrics::VideoPrediction to_metric(const VideoOutput& v) {
    metrics::VideoPrediction p{v.id, {}};
    for (const auto& s : v.proposals) p.segments.push_back({s.start_s, s.end_s, s.categories});
    return p;
}

// Scores predictions against the dataset's ground truth; every prediction id
// must exist in the dataset.
inline metrics::EvalReport evaluate_outputs(const std::vector<VideoOutput>& outputs, const data::Dataset& ds) {
    std::vector<std::string> unknown;
    std::vector<metrics::VideoPrediction> preds;
    std::vector<metrics::VideoTruth> truths;
    for (const auto& o : outputs) {
        const auto* r = ds.find(o.id);
        if (!r) {
            unknown.push_back(o.id);
            continue;
        }
        preds.push_back(to_metric(o));
        truths.push_back({r->id, r->duration_s, r->segments});
    }
    if (!unknown.empty()) {
        std::string msg = "predictions reference videos not in the dataset:";
        for (const auto& id : unknown) msg += " " + id;
        throw InputError(msg);
    }
    return metrics::evaluate(preds, truths, std::max<std::size_t>(ds.header.num_categories, data::kNumCategories));
}

// ---------------------------------------------------------------------------
// Full experiment: split, untrained baseline, train both models, build the
// index, infer on the held-out videos and score.

struct ExperimentConfig {
    seg::SegmenterConfig segmenter;
    tag::TaggerConfig tagger;
    TrainOptions segmenter_train;
    TrainOptions tagger_train;
    InferOptions infer;
    std::uint64_t seed = 42;
    double test_fraction = 0.2;
    bool baseline = true;
    std::vector<ret::ClassifierMode> extra_modes;  // also scored after training, sharing the trained models
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"segmenter", c.segmenter}, {"tagger", c.tagger},  {"segmenter_train", c.segmenter_train}, {"tagger_train", c.tagger_train},
         {"infer", c.infer},         {"seed", c.seed},       {"test_fraction", c.test_fraction},     {"baseline", c.baseline}};
    std::vector<std::string> modes;
    for (auto m : c.extra_modes) modes.push_back(ret::to_string(m));
    j["extra_modes"] = modes;
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    ExperimentConfig d;
    auto obj = [&](const char* k) { return j.value(k, nlohmann::json::object()); };
    c.segmenter = obj("segmenter").get<seg::SegmenterConfig>();
    c.tagger = obj("tagger").get<tag::TaggerConfig>();
    c.segmenter_train = obj("segmenter_train").get<TrainOptions>();
    c.tagger_train = obj("tagger_train").get<TrainOptions>();
    c.infer = obj("infer").get<InferOptions>();
    c.seed = j.value("seed", d.seed);
    c.test_fraction = j.value("test_fraction", d.test_fraction);
    c.baseline = j.value("baseline", d.baseline);
    c.extra_modes.clear();
    for (const auto& m : j.value("extra_modes", std::vector<std::string>{})) c.extra_modes.push_back(ret::classifier_mode_from(m));
}

struct ExperimentResult {
    metrics::EvalReport trained;
    metrics::EvalReport baseline;
    std::vector<EpochStats> segmenter_log;
    std::vector<EpochStats> tagger_log;
    std::vector<VideoOutput> predictions;
    std::map<std::string, metrics::EvalReport> by_mode;
    double seconds = 0.0;
};

// Validates the configuration and adapts input widths to the dataset.
inline void fit_to_dataset(ExperimentConfig& cfg, const data::Dataset& ds) {
    const std::size_t clips = max_clips_of(ds);
    fit_encoder(cfg.segmenter.encoder, ds.header, clips);
    fit_encoder(cfg.tagger.encoder, ds.header, clips);
    cfg.segmenter.validate();
    cfg.tagger.validate();
    if (ds.header.num_categories > cfg.tagger.categories) throw ConfigError("dataset has more categories than the tagger outputs");
    if (!(cfg.test_fraction >= 0.0 && cfg.test_fraction < 1.0)) throw ConfigError("test fraction must be in [0, 1)");
}

// ---------------------------------------------------------------------------
// Checkpoints carry their model configuration in the manifest.

inline void save_segmenter(const std::filesystem::path& path, seg::SegmenterModel& m) {
    nn::save_checkpoint(path, m.parameters(), {{"kind", "segmenter"}, {"config", m.config()}});
}

inline void save_tagger(const std::filesystem::path& path, tag::TaggerModel& m) {
    nn::save_checkpoint(path, m.parameters(), {{"kind", "tagger"}, {"config", m.config()}});
}

inline nlohmann::json checkpoint_meta(const std::filesystem::path& path, const std::string& kind) {
    if (!std::filesystem::exists(path)) throw InputError(kind + " checkpoint not found: " + path.string());
    auto meta = read_json(path).value("meta", nlohmann::json::object());
    if (meta.value("kind", "") != kind) throw InputError(path.string() + " is not a " + kind + " checkpoint");
    return meta;
}

inline std::unique_ptr<seg::SegmenterModel> load_segmenter(const std::filesystem::path& path) {
    auto cfg = checkpoint_meta(path, "segmenter").at("config").get<seg::SegmenterConfig>();
    auto m = std::make_unique<seg::SegmenterModel>(cfg, 0);
    nn::load_checkpoint(path, m->parameters());
    return m;
}

inline std::unique_ptr<tag::TaggerModel> load_tagger(const std::filesystem::path& path) {
    auto cfg = checkpoint_meta(path, "tagger").at("config").get<tag::TaggerConfig>();
    auto m = std::make_unique<tag::TaggerModel>(cfg, 0);
    nn::load_checkpoint(path, m->parameters());
    return m;
}

inline ExperimentResult run_experiment(const data::Dataset& ds, ExperimentConfig cfg, const LogFn& log = no_log) {
    const auto t0 = std::chrono::steady_clock::now();
    fit_to_dataset(cfg, ds);
    auto [train_ds, test_ds] = data::split_dataset(ds, cfg.test_fraction);
    const auto train = prepare_set(train_ds.videos, cfg.segmenter.encoder.max_text);
    const auto test = prepare_set(test_ds.videos, cfg.segmenter.encoder.max_text);

    seg::SegmenterModel segmenter(cfg.segmenter, cfg.seed);
    tag::TaggerModel tagger(cfg.tagger, cfg.seed + 1);
    ExperimentResult res;
    if (cfg.baseline) {
        auto index = build_index(tagger, train, cfg.infer.threads);
        res.baseline = evaluate_outputs(infer(segmenter, tagger, &index, test, cfg.infer), ds);
        log({{"event", "baseline"}, {"report", metrics::to_json(res.baseline)}});
    }
    auto seg_opt = cfg.segmenter_train;
    seg_opt.seed = cfg.seed;
    res.segmenter_log = train_segmenter(segmenter, train, seg_opt, log);
    auto pairs = tagger_pairs(&segmenter, train, cfg.tagger.categories, cfg.infer);
    auto tag_opt = cfg.tagger_train;
    tag_opt.seed = cfg.seed + 1;
    res.tagger_log = train_tagger(tagger, train, pairs, tag_opt, log);
    auto index = build_index(tagger, train, cfg.infer.threads);
    res.predictions = infer(segmenter, tagger, &index, test, cfg.infer);
    res.trained = evaluate_outputs(res.predictions, ds);
    res.by_mode[ret::to_string(cfg.infer.classifier)] = res.trained;
    for (auto mode : cfg.extra_modes) {
        if (res.by_mode.count(ret::to_string(mode))) continue;
        auto opt = cfg.infer;
        opt.classifier = mode;
        res.by_mode[ret::to_string(mode)] = evaluate_outputs(infer(segmenter, tagger, &index, test, opt), ds);
    }
    res.seconds = seconds_since(t0);
    log({{"event", "evaluation"}, {"report", metrics::to_json(res.trained)}, {"seconds", res.seconds}});
    return res;
}

}  // namespace adstruct::pipe
