#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adstruct/errors.hpp"
#include "adstruct/nn/layers.hpp"

namespace adstruct::data {

inline constexpr double kClipSeconds = 0.5;
inline constexpr std::size_t kNumCategories = 82;
inline constexpr int kFormatVersion = 1;

// Row-major feature matrix, rows = time steps.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    bool operator==(const Matrix&) const = default;
};

struct SceneFrame {
    double time = 0.0;
    double prob = 0.0;
    bool operator==(const SceneFrame&) const = default;
};

struct GtSegment {
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<std::size_t> labels;
    bool operator==(const GtSegment&) const = default;
};

struct VideoRecord {
    std::string id;
    double duration_s = 0.0;
    Matrix video;
    Matrix audio;
    std::vector<std::size_t> token_ids;
    std::vector<SceneFrame> scene_frames;
    std::vector<GtSegment> segments;
    bool operator==(const VideoRecord&) const = default;
};

struct DatasetHeader {
    int version = kFormatVersion;
    std::size_t vocab_size = 128;
    std::size_t d_video = 16;
    std::size_t d_audio = 16;
    std::size_t num_categories = kNumCategories;
    double clip_seconds = kClipSeconds;
    bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
    DatasetHeader header;
    std::vector<VideoRecord> videos;

    const VideoRecord* find(const std::string& id) const {
        for (const auto& v : videos)
            if (v.id == id) return &v;
        return nullptr;
    }
};

inline std::size_t clip_count(double duration_s) {
    return static_cast<std::size_t>(std::ceil(duration_s / kClipSeconds - 1e-9));
}

// Linear interpolation along time with aligned end points (the 1-D case of
// bilinear resampling). Output row i samples input position i (m0-1)/(m-1).
inline Matrix resample_features(const Matrix& x, std::size_t target) {
    if (x.rows == 0) throw InputError("resample_features: input has no time steps");
    if (target == 0) throw InputError("resample_features: target length must be >= 1");
    if (x.rows == target) return x;
    Matrix out{target, x.cols, std::vector<double>(target * x.cols)};
    for (std::size_t i = 0; i < target; ++i) {
        const double pos = target == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(x.rows - 1) / static_cast<double>(target - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, x.rows - 1);
        const double f = pos - static_cast<double>(lo);
        for (std::size_t c = 0; c < x.cols; ++c) {
            out.at(i, c) = f == 0.0 ? x.at(lo, c) : (1.0 - f) * x.at(lo, c) + f * x.at(hi, c);
        }
    }
    return out;
}

// Structural checks every record must pass on load and before write.
inline void validate_record(const VideoRecord& r, const DatasetHeader& h) {
    auto fail = [&](const std::string& what) { throw ValidationError("video '" + r.id + "': " + what); };
    if (r.id.empty()) throw ValidationError("record with empty id");
    if (!(r.duration_s > 0.0) || !std::isfinite(r.duration_s)) fail("duration must be positive");
    if (r.segments.empty()) fail("no ground-truth segments");
    constexpr double tol = 1e-9;
    if (std::abs(r.segments.front().start_s) > tol) fail("first segment does not start at 0");
    for (std::size_t i = 0; i < r.segments.size(); ++i) {
        const auto& s = r.segments[i];
        if (!(s.end_s > s.start_s)) fail("segment " + std::to_string(i) + " is empty or reversed");
        if (s.labels.empty()) fail("segment " + std::to_string(i) + " has no labels");
        for (auto l : s.labels)
            if (l >= h.num_categories) fail("label " + std::to_string(l) + " out of range");
        if (i > 0) {
            const double prev_end = r.segments[i - 1].end_s;
            if (s.start_s < prev_end - tol) fail("segments overlap at " + std::to_string(s.start_s) + " s");
            if (s.start_s > prev_end + tol) {
                std::ostringstream os;
                os << "gap [" << prev_end << ", " << s.start_s << ") not covered by any segment";
                fail(os.str());
            }
        }
    }
    if (std::abs(r.segments.back().end_s - r.duration_s) > tol) fail("last segment does not end at the video duration");
    for (auto t : r.token_ids)
        if (t >= h.vocab_size) fail("token id " + std::to_string(t) + " >= vocabulary size");
    auto check_matrix = [&](const Matrix& m, std::size_t cols, const char* name) {
        if (m.rows == 0) fail(std::string(name) + " features are empty");
        if (m.cols != cols || m.values.size() != m.rows * m.cols) fail(std::string(name) + " feature shape mismatch");
        for (double v : m.values)
            if (!std::isfinite(v)) fail(std::string(name) + " features contain non-finite values");
    };
    check_matrix(r.video, h.d_video, "video");
    check_matrix(r.audio, h.d_audio, "audio");
    for (const auto& f : r.scene_frames)
        if (f.time < 0.0 || f.time > r.duration_s + tol || f.prob < 0.0 || f.prob > 1.0) fail("scene frame out of range");
}

namespace detail {

inline std::uint32_t crc32_of(const std::vector<char>& bytes, std::size_t offset, std::size_t len) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + offset), static_cast<uInt>(len)));
}

inline void put_f32_le(std::vector<char>& out, double v) {
    const auto f = static_cast<float>(v);
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline double get_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return static_cast<double>(std::bit_cast<float>(bits));
}

inline nlohmann::json append_blob(std::vector<char>& blob, const Matrix& m) {
    const std::size_t offset = blob.size();
    for (double v : m.values) put_f32_le(blob, v);
    const std::size_t len = blob.size() - offset;
    return {{"offset", offset}, {"bytes", len}, {"rows", m.rows}, {"cols", m.cols}, {"crc32", crc32_of(blob, offset, len)}};
}

inline Matrix read_blob(const std::vector<char>& blob, const nlohmann::json& ref, const std::string& id, const char* name) {
    const auto offset = ref.at("offset").get<std::size_t>();
    const auto bytes = ref.at("bytes").get<std::size_t>();
    Matrix m{ref.at("rows").get<std::size_t>(), ref.at("cols").get<std::size_t>(), {}};
    if (bytes != m.rows * m.cols * 4 || offset + bytes > blob.size()) {
        throw ChecksumError("video '" + id + "': " + name + " blob length does not match its manifest entry");
    }
    if (crc32_of(blob, offset, bytes) != ref.at("crc32").get<std::uint32_t>()) {
        throw ChecksumError("video '" + id + "': " + name + " blob checksum mismatch");
    }
    m.values.resize(m.rows * m.cols);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = get_f32_le(blob.data() + offset + 4 * i);
    return m;
}

}  // namespace detail

inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
    return std::filesystem::path(manifest.string() + ".bin");
}

// Writes the manifest at `path` and the float32 feature blob beside it.
inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    nlohmann::json manifest;
    manifest["format"] = "adstruct-dataset";
    manifest["version"] = ds.header.version;
    manifest["vocab_size"] = ds.header.vocab_size;
    manifest["d_video"] = ds.header.d_video;
    manifest["d_audio"] = ds.header.d_audio;
    manifest["num_categories"] = ds.header.num_categories;
    manifest["clip_seconds"] = ds.header.clip_seconds;
    manifest["blob"] = blob_path_for(path).filename().string();
    std::vector<char> blob;
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : ds.videos) {
        validate_record(r, ds.header);
        nlohmann::json rec;
        rec["id"] = r.id;
        rec["duration_s"] = r.duration_s;
        rec["token_ids"] = r.token_ids;
        nlohmann::json frames = nlohmann::json::array();
        for (const auto& f : r.scene_frames) frames.push_back({{"time", f.time}, {"prob", f.prob}});
        rec["scene_frames"] = frames;
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& s : r.segments) segs.push_back({{"start_s", s.start_s}, {"end_s", s.end_s}, {"labels", s.labels}});
        rec["segments"] = segs;
        rec["video"] = detail::append_blob(blob, r.video);
        rec["audio"] = detail::append_blob(blob, r.audio);
        records.push_back(std::move(rec));
    }
    manifest["records"] = records;
    std::ofstream bf(blob_path_for(path), std::ios::binary);
    if (!bf) throw InputError("cannot write " + blob_path_for(path).string());
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream mf(path);
    if (!mf) throw InputError("cannot write " + path.string());
    mf << manifest.dump(1) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream mf(path);
    if (!mf) throw InputError("dataset not found: " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("dataset manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (manifest.value("format", "") != "adstruct-dataset") throw InputError(path.string() + " is not a dataset manifest");
    Dataset ds;
    ds.header.version = manifest.at("version").get<int>();
    if (ds.header.version != kFormatVersion) {
        throw InputError("unsupported dataset version " + std::to_string(ds.header.version));
    }
    ds.header.vocab_size = manifest.at("vocab_size").get<std::size_t>();
    ds.header.d_video = manifest.at("d_video").get<std::size_t>();
    ds.header.d_audio = manifest.at("d_audio").get<std::size_t>();
    ds.header.num_categories = manifest.at("num_categories").get<std::size_t>();
    ds.header.clip_seconds = manifest.at("clip_seconds").get<double>();

    const auto blob_path = path.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf) throw InputError("dataset blob not found: " + blob_path.string());
    std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    for (const auto& rec : manifest.at("records")) {
        VideoRecord r;
        r.id = rec.at("id").get<std::string>();
        r.duration_s = rec.at("duration_s").get<double>();
        r.token_ids = rec.at("token_ids").get<std::vector<std::size_t>>();
        for (const auto& f : rec.at("scene_frames")) r.scene_frames.push_back({f.at("time").get<double>(), f.at("prob").get<double>()});
        for (const auto& s : rec.at("segments"))
            r.segments.push_back({s.at("start_s").get<double>(), s.at("end_s").get<double>(),
                                  s.at("labels").get<std::vector<std::size_t>>()});
        r.video = detail::read_blob(blob, rec.at("video"), r.id, "video");
        r.audio = detail::read_blob(blob, rec.at("audio"), r.id, "audio");
        validate_record(r, ds.header);
        ds.videos.push_back(std::move(r));
    }
    return ds;
}

// Deterministic split: the trailing `test_fraction` of videos form the test set.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction) {
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.videos.size())));
    Dataset train{ds.header, {}}, test{ds.header, {}};
    for (std::size_t i = 0; i < ds.videos.size(); ++i)
        (i + n_test < ds.videos.size() ? train : test).videos.push_back(ds.videos[i]);
    return {train, test};
}

// ---------------------------------------------------------------------------
// Model-facing view of a record: features resampled to the clip grid.

struct PreparedVideo {
    std::string id;
    double duration_s = 0.0;
    std::size_t clips = 0;
    nn::Tensor video;  // clips x d_video
    nn::Tensor audio;  // clips x d_audio
    std::vector<std::size_t> token_ids;
};

inline nn::Tensor to_tensor(const Matrix& m) { return nn::Tensor({m.rows, m.cols}, m.values); }

inline PreparedVideo prepare_video(const VideoRecord& r, std::size_t max_text = 64) {
    PreparedVideo p;
    p.id = r.id;
    p.duration_s = r.duration_s;
    p.clips = clip_count(r.duration_s);
    p.video = to_tensor(resample_features(r.video, p.clips));
    p.audio = to_tensor(resample_features(r.audio, p.clips));
    p.token_ids.assign(r.token_ids.begin(), r.token_ids.begin() + static_cast<long>(std::min(max_text, r.token_ids.size())));
    return p;
}

// ---------------------------------------------------------------------------
// Synthetic generator.

struct SyntheticConfig {
    std::size_t videos = 200;
    std::size_t clips = 64;
    std::size_t categories = 8;
    std::size_t d_video = 16;
    std::size_t d_audio = 16;
    std::size_t vocab = 128;
    std::uint64_t seed = 42;
    double noise = 1.0;
    std::size_t min_segments = 1;
    std::size_t max_segments = 5;
    std::size_t min_segment_clips = 4;
    double secondary_label_prob = 0.2;
    double secondary_weight = 0.5;
    double token_signal = 0.75;  // probability a caption token comes from the segment's category
    std::size_t max_distractor_frames = 3;
    double boundary_jitter_s = 0.0;  // > 0 moves GT boundaries off the clip grid
};

namespace detail {

inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.videos == 0) throw ConfigError("synthetic: need at least one video");
    if (cfg.categories == 0 || cfg.categories > kNumCategories) {
        throw ConfigError("synthetic: categories must be in [1, " + std::to_string(kNumCategories) + "]");
    }
    if (cfg.max_segments < cfg.min_segments || cfg.min_segments == 0) throw ConfigError("synthetic: bad segment count range");
    if (cfg.max_segments > 1 && cfg.categories < 2) {
        throw ConfigError("synthetic: adjacent segments need two distinct categories");
    }
    if (cfg.clips < cfg.max_segments * cfg.min_segment_clips) {
        throw ConfigError("synthetic: " + std::to_string(cfg.clips) + " clips cannot hold " + std::to_string(cfg.max_segments) +
                          " segments of " + std::to_string(cfg.min_segment_clips) + " clips");
    }
    if (cfg.vocab < cfg.categories) throw ConfigError("synthetic: vocabulary smaller than category count");
    if (cfg.boundary_jitter_s < 0.0 || cfg.boundary_jitter_s >= kClipSeconds / 2) {
        throw ConfigError("synthetic: boundary jitter must be in [0, 0.25) s");
    }

    nn::Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::vector<double>> video_means(cfg.categories), audio_means(cfg.categories);
    for (std::size_t c = 0; c < cfg.categories; ++c) {
        for (std::size_t j = 0; j < cfg.d_video; ++j) video_means[c].push_back(normal(rng));
        for (std::size_t j = 0; j < cfg.d_audio; ++j) audio_means[c].push_back(normal(rng));
    }
    // Category c owns tokens [c * group, (c + 1) * group); the rest are noise.
    const std::size_t group = std::max<std::size_t>(1, (cfg.vocab * 3 / 4) / cfg.categories);

    Dataset ds;
    ds.header = {kFormatVersion, cfg.vocab, cfg.d_video, cfg.d_audio, cfg.categories, kClipSeconds};
    const double duration = static_cast<double>(cfg.clips) * kClipSeconds;

    for (std::size_t v = 0; v < cfg.videos; ++v) {
        VideoRecord r;
        std::ostringstream id;
        id << "syn" << std::setw(5) << std::setfill('0') << v;
        r.id = id.str();
        r.duration_s = duration;

        const std::size_t nseg = std::uniform_int_distribution<std::size_t>(cfg.min_segments, cfg.max_segments)(rng);
        // Cut points: nseg - 1 distinct clip indices with every piece >= min_segment_clips.
        std::vector<std::size_t> cuts;
        {
            const std::size_t slack = cfg.clips - nseg * cfg.min_segment_clips;
            std::vector<std::size_t> extra(nseg, 0);
            for (std::size_t k = 0; k < slack; ++k) ++extra[std::uniform_int_distribution<std::size_t>(0, nseg - 1)(rng)];
            std::size_t pos = 0;
            for (std::size_t s = 0; s + 1 < nseg; ++s) {
                pos += cfg.min_segment_clips + extra[s];
                cuts.push_back(pos);
            }
        }
        std::vector<double> bounds{0.0};
        for (auto c : cuts) {
            double t = static_cast<double>(c) * kClipSeconds;
            if (cfg.boundary_jitter_s > 0.0) t += (2.0 * unit(rng) - 1.0) * cfg.boundary_jitter_s;
            bounds.push_back(detail::round_to_float(t));
        }
        bounds.push_back(duration);

        std::size_t prev = cfg.categories;
        std::vector<std::vector<std::size_t>> seg_labels;
        for (std::size_t s = 0; s < nseg; ++s) {
            std::size_t primary;
            do {
                primary = std::uniform_int_distribution<std::size_t>(0, cfg.categories - 1)(rng);
            } while (primary == prev);
            prev = primary;
            std::vector<std::size_t> labels{primary};
            if (cfg.categories > 2 && unit(rng) < cfg.secondary_label_prob) {
                std::size_t second;
                do {
                    second = std::uniform_int_distribution<std::size_t>(0, cfg.categories - 1)(rng);
                } while (second == primary);
                labels.push_back(second);
            }
            seg_labels.push_back(labels);
            r.segments.push_back({bounds[s], bounds[s + 1], labels});
        }

        auto segment_at = [&](double t) {
            for (std::size_t s = 0; s < nseg; ++s)
                if (t < bounds[s + 1]) return s;
            return nseg - 1;
        };
        auto fill = [&](Matrix& m, std::size_t dim, const std::vector<std::vector<double>>& means) {
            m = Matrix{cfg.clips, dim, std::vector<double>(cfg.clips * dim)};
            for (std::size_t t = 0; t < cfg.clips; ++t) {
                const auto& labels = seg_labels[segment_at((static_cast<double>(t) + 0.5) * kClipSeconds)];
                for (std::size_t j = 0; j < dim; ++j) {
                    double x = means[labels[0]][j];
                    for (std::size_t l = 1; l < labels.size(); ++l) x += cfg.secondary_weight * means[labels[l]][j];
                    x += cfg.noise * normal(rng);
                    m.at(t, j) = detail::round_to_float(x);
                }
            }
        };
        fill(r.video, cfg.d_video, video_means);
        fill(r.audio, cfg.d_audio, audio_means);

        auto token_for = [&](std::size_t category) {
            if (unit(rng) < cfg.token_signal)
                return category * group + std::uniform_int_distribution<std::size_t>(0, group - 1)(rng);
            return std::uniform_int_distribution<std::size_t>(0, cfg.vocab - 1)(rng);
        };
        for (std::size_t s = 0; s < nseg; ++s) {
            const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
            for (std::size_t k = 0; k < n; ++k) r.token_ids.push_back(token_for(seg_labels[s][0]));
            for (std::size_t l = 1; l < seg_labels[s].size(); ++l) r.token_ids.push_back(token_for(seg_labels[s][l]));
        }

        for (std::size_t b = 1; b + 1 < bounds.size(); ++b)
            r.scene_frames.push_back({bounds[b], detail::round_to_float(0.3 + 0.7 * unit(rng))});
        const std::size_t distractors = std::uniform_int_distribution<std::size_t>(0, cfg.max_distractor_frames)(rng);
        for (std::size_t k = 0; k < distractors; ++k)
            r.scene_frames.push_back({detail::round_to_float(unit(rng) * duration), detail::round_to_float(0.1 * unit(rng))});
        std::sort(r.scene_frames.begin(), r.scene_frames.end(), [](const SceneFrame& a, const SceneFrame& b) { return a.time < b.time; });

        ds.videos.push_back(std::move(r));
    }
    return ds;
}

// Generator self-test: multinomial logistic regression on raw per-clip
// [video; audio] features predicting each clip's primary category. Trained on
// the leading 80 % of videos, scored on the rest.
inline double linear_probe_accuracy(const Dataset& ds, int epochs = 200, double lr = 0.5) {
    const std::size_t dim = ds.header.d_video + ds.header.d_audio + 1;
    const std::size_t C = ds.header.num_categories;
    struct Sample {
        std::vector<double> x;
        std::size_t y;
    };
    std::vector<Sample> train, test;
    const std::size_t n_train = ds.videos.size() * 4 / 5;
    for (std::size_t v = 0; v < ds.videos.size(); ++v) {
        const auto& r = ds.videos[v];
        const std::size_t m = r.video.rows;
        for (std::size_t t = 0; t < m; ++t) {
            const double center = (static_cast<double>(t) + 0.5) * kClipSeconds;
            std::size_t label = r.segments.back().labels[0];
            for (const auto& s : r.segments)
                if (center < s.end_s) {
                    label = s.labels[0];
                    break;
                }
            Sample smp{{}, label};
            for (std::size_t j = 0; j < r.video.cols; ++j) smp.x.push_back(r.video.at(t, j));
            for (std::size_t j = 0; j < r.audio.cols; ++j) smp.x.push_back(r.audio.at(std::min(t, r.audio.rows - 1), j));
            smp.x.push_back(1.0);
            (v < n_train ? train : test).push_back(std::move(smp));
        }
    }
    if (train.empty() || test.empty()) throw ConfigError("linear probe needs at least 2 videos");
    std::vector<double> W(dim * C, 0.0), grad(dim * C), p(C);
    auto logits = [&](const std::vector<double>& x) {
        for (std::size_t c = 0; c < C; ++c) {
            double z = 0.0;
            for (std::size_t j = 0; j < dim; ++j) z += W[j * C + c] * x[j];
            p[c] = z;
        }
    };
    for (int e = 0; e < epochs; ++e) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& s : train) {
            logits(s.x);
            const double mx = *std::max_element(p.begin(), p.end());
            double z = 0.0;
            for (auto& v : p) z += (v = std::exp(v - mx));
            for (auto& v : p) v /= z;
            p[s.y] -= 1.0;
            for (std::size_t j = 0; j < dim; ++j)
                for (std::size_t c = 0; c < C; ++c) grad[j * C + c] += s.x[j] * p[c];
        }
        for (std::size_t k = 0; k < W.size(); ++k) W[k] -= lr * grad[k] / static_cast<double>(train.size());
    }
    std::size_t correct = 0;
    for (const auto& s : test) {
        logits(s.x);
        if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == s.y) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace adstruct::data
