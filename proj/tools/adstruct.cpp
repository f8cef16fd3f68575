#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "adstruct/pipeline.hpp"

using namespace adstruct;
namespace fs = std::filesystem;

namespace {

void emit(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

// Flags shared by every command that builds or runs models. Unset optionals
// leave the config file (or built-in default) value alone.
struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<double> test_fraction;
    std::optional<std::size_t> width;
    std::optional<std::size_t> max_duration;
    std::optional<std::size_t> threads;
    std::optional<std::string> classifier;
    std::optional<std::string> gap;
    bool no_video = false, no_audio = false, no_text = false, no_ple = false, no_sga = false;

    void attach_model(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--lr", lr, "AdamW learning rate");
        cmd->add_option("--test-fraction", test_fraction, "trailing fraction of videos held out");
        cmd->add_option("--width", width, "model width");
        cmd->add_option("--max-duration", max_duration, "longest proposal in clips (0: whole video)");
        cmd->add_flag("--no-video", no_video, "zero the video stream");
        cmd->add_flag("--no-audio", no_audio, "zero the audio stream");
        cmd->add_flag("--no-text", no_text, "drop the caption");
        cmd->add_flag("--no-ple", no_ple, "disable the proposal span embedding in the tagger");
    }

    void attach_infer(CLI::App* cmd) {
        cmd->add_option("--threads", threads, "worker threads across videos");
        cmd->add_option("--classifier", classifier, "cls, ret or ensemble")->check(CLI::IsMember({"cls", "ret", "ensemble"}));
        cmd->add_option("--gap", gap, "uncovered clips after NMS: fill or merge")->check(CLI::IsMember({"fill", "merge"}));
        cmd->add_flag("--no-sga", no_sga, "skip scene-guided boundary alignment");
    }

    pipe::ExperimentConfig resolve() const {
        pipe::ExperimentConfig cfg;
        if (!config_path.empty()) cfg = pipe::read_json(config_path).get<pipe::ExperimentConfig>();
        if (seed) cfg.seed = *seed;
        for (auto* t : {&cfg.segmenter_train, &cfg.tagger_train}) {
            if (epochs) t->epochs = *epochs;
            if (lr) t->lr = *lr;
        }
        if (test_fraction) cfg.test_fraction = *test_fraction;
        for (auto* e : {&cfg.segmenter.encoder, &cfg.tagger.encoder}) {
            if (width) e->width = *width;
            if (no_video) e->use_video = false;
            if (no_audio) e->use_audio = false;
            if (no_text) e->use_text = false;
        }
        if (no_ple) cfg.tagger.encoder.ple = false;
        if (max_duration) cfg.segmenter.max_duration = *max_duration;
        if (threads) cfg.infer.threads = *threads;
        if (classifier) cfg.infer.classifier = ret::classifier_mode_from(*classifier);
        if (gap) cfg.infer.gap = post::gap_mode_from(*gap);
        if (no_sga) cfg.infer.sga = false;
        return cfg;
    }
};

struct Split {
    data::Dataset train, test;
};

Split split_of(const data::Dataset& ds, const pipe::ExperimentConfig& cfg) {
    auto [train, test] = data::split_dataset(ds, cfg.test_fraction);
    return {std::move(train), std::move(test)};
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adstruct: video ad content structuring (segmentation, tagging, evaluation)"};
    app.require_subcommand(1);

    // gen-data
    data::SyntheticConfig syn;
    std::string gen_out;
    bool gen_probe = false;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    gen->add_option("--out", gen_out, "dataset manifest path")->required();
    gen->add_option("--videos", syn.videos);
    gen->add_option("--clips", syn.clips);
    gen->add_option("--categories", syn.categories);
    gen->add_option("--seed", syn.seed);
    gen->add_option("--noise", syn.noise, "per-clip Gaussian noise scale");
    gen->add_option("--jitter", syn.boundary_jitter_s, "boundary offset from the clip grid, seconds");
    gen->add_flag("--probe", gen_probe, "report linear-probe clip accuracy");

    // train-segmenter
    Overrides seg_ov;
    std::string seg_data, seg_out;
    std::uint64_t seg_seed = 0;
    auto* tseg = app.add_subcommand("train-segmenter", "train encoder + TEM + PEM on the training split");
    tseg->add_option("--data", seg_data)->required()->check(CLI::ExistingFile);
    tseg->add_option("--out", seg_out, "checkpoint path")->required();
    tseg->add_option("--seed", seg_seed)->required();
    seg_ov.attach_model(tseg);

    // train-tagger
    Overrides tag_ov;
    std::string tag_data, tag_out, tag_segmenter;
    std::uint64_t tag_seed = 0;
    auto* ttag = app.add_subcommand("train-tagger", "train the proposal tagger on the training split");
    ttag->add_option("--data", tag_data)->required()->check(CLI::ExistingFile);
    ttag->add_option("--out", tag_out, "checkpoint path")->required();
    ttag->add_option("--seed", tag_seed)->required();
    ttag->add_option("--segmenter", tag_segmenter, "segmenter checkpoint supplying extra training proposals");
    tag_ov.attach_model(ttag);
    tag_ov.attach_infer(ttag);

    // build-index
    Overrides idx_ov;
    std::string idx_data, idx_tagger, idx_out;
    auto* bidx = app.add_subcommand("build-index", "embed training GT segments into a retrieval index");
    bidx->add_option("--data", idx_data)->required()->check(CLI::ExistingFile);
    bidx->add_option("--tagger", idx_tagger)->required();
    bidx->add_option("--out", idx_out)->required();
    bidx->add_option("--config", idx_ov.config_path)->check(CLI::ExistingFile);
    bidx->add_option("--test-fraction", idx_ov.test_fraction);
    bidx->add_option("--threads", idx_ov.threads);

    // infer
    Overrides inf_ov;
    std::string inf_data, inf_seg, inf_tag, inf_index, inf_out, inf_split = "test", inf_dump;
    auto* inf = app.add_subcommand("infer", "segment and tag videos, write predictions JSON");
    inf->add_option("--data", inf_data)->required()->check(CLI::ExistingFile);
    inf->add_option("--segmenter", inf_seg)->required();
    inf->add_option("--tagger", inf_tag)->required();
    inf->add_option("--index", inf_index, "retrieval index (needed for ret and ensemble)");
    inf->add_option("--out", inf_out)->required();
    inf->add_option("--split", inf_split)->check(CLI::IsMember({"test", "train", "all"}));
    inf->add_option("--dump-segmenter", inf_dump, "also write TEM/PEM maps and scored candidates");
    inf->add_option("--config", inf_ov.config_path)->check(CLI::ExistingFile);
    inf->add_option("--test-fraction", inf_ov.test_fraction);
    inf_ov.attach_infer(inf);

    // evaluate
    std::string ev_data, ev_pred, ev_out;
    auto* ev = app.add_subcommand("evaluate", "score predictions against the dataset's ground truth");
    ev->add_option("--data", ev_data)->required()->check(CLI::ExistingFile);
    ev->add_option("--pred", ev_pred)->required()->check(CLI::ExistingFile);
    ev->add_option("--out", ev_out, "report JSON path");

    // sweep-ablation
    Overrides sw_ov;
    std::string sw_data, sw_out, sw_combos = "V,A,T,VA,VT,AT,VAT";
    std::uint64_t sw_seed = 42;
    bool sw_ple = false, sw_cls = false;
    auto* sw = app.add_subcommand("sweep-ablation", "train and score one model per modality combination");
    sw->add_option("--data", sw_data)->required()->check(CLI::ExistingFile);
    sw->add_option("--out", sw_out, "results JSON path");
    sw->add_option("--seed", sw_seed);
    sw->add_option("--combos", sw_combos, "comma-separated subsets of V, A, T");
    sw->add_flag("--ple", sw_ple, "add a full-modality row with the span embedding disabled");
    sw->add_flag("--classifiers", sw_cls, "score cls, ret and ensemble on the full-modality model");
    sw_ov.attach_model(sw);
    sw_ov.attach_infer(sw);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto ds = data::generate_synthetic(syn);
            ensure_parent(gen_out);
            data::write_dataset(gen_out, ds);
            nlohmann::json j{{"event", "dataset"}, {"path", gen_out}, {"videos", ds.videos.size()}, {"seed", syn.seed}};
            if (gen_probe) j["linear_probe_accuracy"] = data::linear_probe_accuracy(ds);
            emit(j);
        } else if (*tseg) {
            seg_ov.seed = seg_seed;
            auto cfg = seg_ov.resolve();
            auto ds = data::load_dataset(seg_data);
            pipe::fit_to_dataset(cfg, ds);
            auto split = split_of(ds, cfg);
            auto train = pipe::prepare_set(split.train.videos, cfg.segmenter.encoder.max_text);
            seg::SegmenterModel model(cfg.segmenter, cfg.seed);
            auto opt = cfg.segmenter_train;
            opt.seed = cfg.seed;
            ensure_parent(seg_out);
            emit({{"event", "start"}, {"stage", "segmenter"}, {"videos", train.prepared.size()}, {"config", cfg.segmenter}, {"train", opt}});
            // Saved after every epoch, so a later non-finite loss leaves the last good weights on disk.
            pipe::train_segmenter(model, train, opt, emit, [&](const pipe::EpochStats&) { pipe::save_segmenter(seg_out, model); });
            emit({{"event", "checkpoint"}, {"path", seg_out}});
        } else if (*ttag) {
            tag_ov.seed = tag_seed;
            auto cfg = tag_ov.resolve();
            auto ds = data::load_dataset(tag_data);
            pipe::fit_to_dataset(cfg, ds);
            std::unique_ptr<seg::SegmenterModel> segmenter;
            if (!tag_segmenter.empty()) segmenter = pipe::load_segmenter(tag_segmenter);
            auto split = split_of(ds, cfg);
            auto train = pipe::prepare_set(split.train.videos, cfg.tagger.encoder.max_text);
            auto pairs = pipe::tagger_pairs(segmenter.get(), train, cfg.tagger.categories, cfg.infer);
            tag::TaggerModel model(cfg.tagger, cfg.seed);
            auto opt = cfg.tagger_train;
            opt.seed = cfg.seed;
            ensure_parent(tag_out);
            std::size_t npairs = 0;
            for (const auto& p : pairs) npairs += p.size();
            emit({{"event", "start"}, {"stage", "tagger"}, {"videos", train.prepared.size()}, {"pairs", npairs}, {"config", cfg.tagger}, {"train", opt}});
            pipe::train_tagger(model, train, pairs, opt, emit, [&](const pipe::EpochStats&) { pipe::save_tagger(tag_out, model); });
            emit({{"event", "checkpoint"}, {"path", tag_out}});
        } else if (*bidx) {
            auto cfg = idx_ov.resolve();
            auto tagger = pipe::load_tagger(idx_tagger);
            auto ds = data::load_dataset(idx_data);
            auto split = split_of(ds, cfg);
            auto train = pipe::prepare_set(split.train.videos, tagger->config().encoder.max_text);
            auto index = pipe::build_index(*tagger, train, cfg.infer.threads);
            ensure_parent(idx_out);
            index.save(idx_out);
            emit({{"event", "index"}, {"path", idx_out}, {"entries", index.size()}});
        } else if (*inf) {
            auto cfg = inf_ov.resolve();
            if (cfg.infer.classifier != ret::ClassifierMode::Cls && inf_index.empty()) {
                throw ConfigError("classifier mode '" + ret::to_string(cfg.infer.classifier) + "' needs --index (or use --classifier cls)");
            }
            auto segmenter = pipe::load_segmenter(inf_seg);
            auto tagger = pipe::load_tagger(inf_tag);
            std::optional<ret::RetrievalIndex> index;
            if (!inf_index.empty()) index = ret::RetrievalIndex::load(inf_index);
            auto ds = data::load_dataset(inf_data);
            auto split = split_of(ds, cfg);
            const auto& chosen = inf_split == "all" ? ds : (inf_split == "train" ? split.train : split.test);
            auto videos = pipe::prepare_set(chosen.videos, segmenter->config().encoder.max_text);
            auto out = pipe::infer(*segmenter, *tagger, index ? &*index : nullptr, videos, cfg.infer);
            ensure_parent(inf_out);
            pipe::write_json(inf_out, pipe::predictions_to_json(out));
            if (!inf_dump.empty()) {
                nlohmann::json dumps = nlohmann::json::array();
                for (const auto& v : videos.prepared) {
                    auto so = segmenter->forward(v);
                    auto q = seg::boundary_points(so.tem_values());
                    dumps.push_back(seg::dump_segmenter(v.id, so, seg::score_candidates(q, so.confidence_map(), segmenter->config().confidence)));
                }
                pipe::write_json(inf_dump, dumps);
            }
            emit({{"event", "predictions"}, {"path", inf_out}, {"videos", out.size()}, {"infer", cfg.infer}});
        } else if (*ev) {
            auto ds = data::load_dataset(ev_data);
            auto preds = pipe::predictions_from_json(pipe::read_json(ev_pred));
            auto report = pipe::evaluate_outputs(preds, ds);
            std::cout << metrics::format_table({{fs::path(ev_pred).stem().string(), report}});
            if (!ev_out.empty()) {
                ensure_parent(ev_out);
                pipe::write_json(ev_out, metrics::to_json(report));
            }
            emit({{"event", "evaluation"}, {"report", metrics::to_json(report)}});
        } else if (*sw) {
            sw_ov.seed = sw_seed;
            const auto base = sw_ov.resolve();
            auto ds = data::load_dataset(sw_data);
            std::vector<metrics::TableRow> rows;
            nlohmann::json results = nlohmann::json::array();
            auto run = [&](const std::string& label, pipe::ExperimentConfig cfg) {
                cfg.baseline = false;
                auto r = pipe::run_experiment(ds, cfg, emit);
                rows.push_back({label, r.trained});
                nlohmann::json modes;
                for (const auto& [m, rep] : r.by_mode) modes[m] = metrics::to_json(rep);
                results.push_back({{"label", label}, {"report", metrics::to_json(r.trained)}, {"by_classifier", modes}, {"seconds", r.seconds}});
                emit({{"event", "sweep-row"}, {"label", label}, {"report", metrics::to_json(r.trained)}});
            };
            std::stringstream combos(sw_combos);
            for (std::string combo; std::getline(combos, combo, ',');) {
                if (combo.empty() || combo.find_first_not_of("VAT") != std::string::npos) throw ConfigError("bad modality combination '" + combo + "'");
                auto cfg = base;
                for (auto* e : {&cfg.segmenter.encoder, &cfg.tagger.encoder}) {
                    e->use_video = combo.find('V') != std::string::npos;
                    e->use_audio = combo.find('A') != std::string::npos;
                    e->use_text = combo.find('T') != std::string::npos;
                }
                if (sw_cls && combo == "VAT") cfg.extra_modes = {ret::ClassifierMode::Cls, ret::ClassifierMode::Ret, ret::ClassifierMode::Ensemble};
                run(combo, cfg);
            }
            if (sw_ple) {
                auto cfg = base;
                cfg.tagger.encoder.ple = false;
                run("VAT no-PLE", cfg);
            }
            std::cout << metrics::format_table(rows);
            if (!sw_out.empty()) {
                ensure_parent(sw_out);
                pipe::write_json(sw_out, {{"rows", results}, {"config", base}});
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON input: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
