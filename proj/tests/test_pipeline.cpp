#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "adstruct/pipeline.hpp"

using namespace adstruct;
using namespace adstruct::pipe;

namespace {

data::Dataset small_dataset() {
    data::SyntheticConfig syn;
    syn.videos = 10;
    syn.clips = 16;
    syn.max_segments = 3;
    syn.seed = 3;
    return data::generate_synthetic(syn);
}

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    for (auto* e : {&cfg.segmenter.encoder, &cfg.tagger.encoder}) {
        e->width = 8;
        e->heads = 2;
        e->ffn = 16;
    }
    cfg.segmenter.pem_channels = 4;
    cfg.segmenter.pem_hidden = 8;
    cfg.segmenter.samples = 4;
    cfg.segmenter_train.epochs = 1;
    cfg.tagger_train.epochs = 1;
    return cfg;
}

bool tiles(const VideoOutput& v) {
    if (v.proposals.empty() || v.proposals.front().start_s != 0.0 || v.proposals.back().end_s != v.duration_s) return false;
    for (std::size_t i = 1; i < v.proposals.size(); ++i)
        if (v.proposals[i].start_s != v.proposals[i - 1].end_s || v.proposals[i].start_s >= v.proposals[i].end_s) return false;
    return true;
}

struct Trained {
    data::Dataset ds = small_dataset();
    ExperimentConfig cfg = small_config();
    std::unique_ptr<seg::SegmenterModel> segmenter;
    std::unique_ptr<tag::TaggerModel> tagger;
    VideoSet all;

    Trained() {
        fit_to_dataset(cfg, ds);
        all = prepare_set(ds.videos, cfg.segmenter.encoder.max_text);
        segmenter = std::make_unique<seg::SegmenterModel>(cfg.segmenter, 1);
        tagger = std::make_unique<tag::TaggerModel>(cfg.tagger, 2);
        train_segmenter(*segmenter, all, cfg.segmenter_train);
        train_tagger(*tagger, all, tagger_pairs(segmenter.get(), all, cfg.tagger.categories, cfg.infer), cfg.tagger_train);
    }
};

const Trained& trained() {
    static const Trained t;
    return t;
}

}  // namespace

TEST_CASE("inference output tiles every video and caps categories at 20") {
    const auto& t = trained();
    auto index = build_index(*t.tagger, t.all);
    auto out = infer(*t.segmenter, *t.tagger, &index, t.all, t.cfg.infer);
    REQUIRE(out.size() == t.ds.videos.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].id == t.ds.videos[i].id);
        CHECK(tiles(out[i]));
        for (const auto& p : out[i].proposals) {
            CHECK(p.categories.size() <= tag::kMaxLabelsPerProposal);
            for (std::size_t k = 1; k < p.categories.size(); ++k) CHECK(p.categories[k - 1].score >= p.categories[k].score);
        }
    }
}

TEST_CASE("thread count does not change the output") {
    const auto& t = trained();
    auto opt = t.cfg.infer;
    opt.classifier = ret::ClassifierMode::Cls;
    auto one = predictions_to_json(infer(*t.segmenter, *t.tagger, nullptr, t.all, opt));
    opt.threads = 3;
    CHECK(predictions_to_json(infer(*t.segmenter, *t.tagger, nullptr, t.all, opt)) == one);
}

TEST_CASE("retrieval modes need an index") {
    const auto& t = trained();
    CHECK_THROWS_AS(infer(*t.segmenter, *t.tagger, nullptr, t.all, t.cfg.infer), RetrievalError);
}

TEST_CASE("skipping alignment only moves boundaries, and by less than half a second") {
    const auto& t = trained();
    auto opt = t.cfg.infer;
    opt.classifier = ret::ClassifierMode::Cls;
    auto with = infer(*t.segmenter, *t.tagger, nullptr, t.all, opt);
    opt.sga = false;
    auto without = infer(*t.segmenter, *t.tagger, nullptr, t.all, opt);
    for (std::size_t v = 0; v < with.size(); ++v) {
        REQUIRE(with[v].proposals.size() == without[v].proposals.size());
        for (std::size_t k = 0; k < with[v].proposals.size(); ++k) {
            const auto& a = with[v].proposals[k];
            const auto& b = without[v].proposals[k];
            CHECK(std::abs(a.start_s - b.start_s) < 0.5);
            CHECK(std::abs(a.end_s - b.end_s) < 0.5);
            const auto sa = tag::clip_span_of(a.start_s, a.end_s, t.all.prepared[v].clips);
            const auto sb = tag::clip_span_of(b.start_s, b.end_s, t.all.prepared[v].clips);
            if (sa.first == sb.first && sa.last == sb.last) {
                CHECK(a.p_prop == b.p_prop);
                CHECK(a.p_iou == b.p_iou);
                CHECK(a.categories.size() == b.categories.size());
            }
        }
    }
}

TEST_CASE("predictions JSON round trip and evaluation") {
    const auto& t = trained();
    auto opt = t.cfg.infer;
    opt.classifier = ret::ClassifierMode::Cls;
    auto out = infer(*t.segmenter, *t.tagger, nullptr, t.all, opt);
    auto j = predictions_to_json(out);
    auto back = predictions_from_json(j);
    CHECK(predictions_to_json(back) == j);
    auto r = evaluate_outputs(back, t.ds);
    CHECK(r.videos == t.ds.videos.size());
    for (double v : {r.auc, r.f1, r.overall, r.map}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    auto bad = out;
    bad[0].id = "nope";
    try {
        evaluate_outputs(bad, t.ds);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
}

TEST_CASE("GT written as predictions scores 1") {
    const auto ds = small_dataset();
    std::vector<VideoOutput> out;
    for (const auto& v : ds.videos) {
        VideoOutput o{v.id, v.duration_s, {}};
        for (const auto& g : v.segments) {
            ProposalOutput p{g.start_s, g.end_s, 1.0, 1.0, {}};
            for (auto l : g.labels) p.categories.push_back({l, 1.0});
            o.proposals.push_back(p);
        }
        out.push_back(o);
    }
    auto r = evaluate_outputs(predictions_from_json(predictions_to_json(out)), ds);
    CHECK(r.auc == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.overall == 1.0);
    CHECK(r.map == 1.0);
}

TEST_CASE("checkpoints reload to identical predictions") {
    const auto& t = trained();
    const auto dir = std::filesystem::temp_directory_path() / "adstruct_test_pipeline";
    std::filesystem::create_directories(dir);
    auto& seg = const_cast<seg::SegmenterModel&>(*t.segmenter);
    auto& tagger = const_cast<tag::TaggerModel&>(*t.tagger);
    save_segmenter(dir / "seg.json", seg);
    save_tagger(dir / "tag.json", tagger);
    auto s2 = load_segmenter(dir / "seg.json");
    auto t2 = load_tagger(dir / "tag.json");
    auto opt = t.cfg.infer;
    opt.classifier = ret::ClassifierMode::Cls;
    CHECK(predictions_to_json(infer(*s2, *t2, nullptr, t.all, opt)) == predictions_to_json(infer(seg, tagger, nullptr, t.all, opt)));
    CHECK_THROWS_AS(load_tagger(dir / "seg.json"), InputError);
    CHECK_THROWS_AS(load_segmenter(dir / "missing.json"), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a small experiment is deterministic and logs every epoch") {
    const auto ds = small_dataset();
    auto cfg = small_config();
    cfg.extra_modes = {ret::ClassifierMode::Cls};
    std::vector<nlohmann::json> events;
    auto a = run_experiment(ds, cfg, [&](const nlohmann::json& j) { events.push_back(j); });
    auto b = run_experiment(ds, cfg);
    CHECK(metrics::to_json(a.trained).dump() == metrics::to_json(b.trained).dump());
    CHECK(metrics::to_json(a.baseline).dump() == metrics::to_json(b.baseline).dump());
    CHECK(a.segmenter_log.back().loss == b.segmenter_log.back().loss);
    CHECK(a.by_mode.size() == 2);
    std::size_t epochs = 0;
    for (const auto& e : events) epochs += e.value("event", "") == "epoch";
    CHECK(epochs == 2);
    CHECK(events.back().value("event", "") == "evaluation");
}

TEST_CASE("experiment config JSON round trip and validation") {
    auto cfg = small_config();
    cfg.seed = 9;
    cfg.infer.gap = post::GapMode::Merge;
    cfg.extra_modes = {ret::ClassifierMode::Ret};
    nlohmann::json j = cfg;
    auto back = j.get<ExperimentConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(nlohmann::json::object().get<ExperimentConfig>().seed == 42);

    auto ds = small_dataset();
    auto bad = small_config();
    bad.test_fraction = 1.0;
    CHECK_THROWS_AS(fit_to_dataset(bad, ds), ConfigError);
    bad = small_config();
    bad.tagger.categories = 3;
    CHECK_THROWS_AS(fit_to_dataset(bad, ds), ConfigError);
}
