#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "adstruct/errors.hpp"
#include "adstruct/nn/layers.hpp"

namespace adstruct {

struct EncoderConfig {
    std::size_t d_video = 16;
    std::size_t d_audio = 16;
    std::size_t vocab = 128;
    std::size_t max_text = 64;
    std::size_t max_clips = 128;
    std::size_t width = 32;
    std::size_t heads = 4;
    std::size_t ffn = 64;
    std::size_t text_layers = 1;
    std::size_t xmodal_layers = 2;
    bool use_video = true;
    bool use_audio = true;
    bool use_text = true;
    bool ple = false;

    void validate() const {
        if (!use_video && !use_audio && !use_text) throw ConfigError("at least one modality must be enabled");
        if (width % 4 != 0) throw ConfigError("model width must be divisible by 4 (inception branches)");
        if (heads == 0 || width % heads != 0) throw ConfigError("model width must be divisible by the head count");
        if (d_video + d_audio == 0) throw ConfigError("video and audio feature widths are both zero");
        if (max_text == 0 || max_clips == 0) throw ConfigError("max_text and max_clips must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"d_video", c.d_video},   {"d_audio", c.d_audio},       {"vocab", c.vocab},       {"max_text", c.max_text},
         {"max_clips", c.max_clips}, {"width", c.width},         {"heads", c.heads},       {"ffn", c.ffn},
         {"text_layers", c.text_layers}, {"xmodal_layers", c.xmodal_layers}, {"use_video", c.use_video},
         {"use_audio", c.use_audio}, {"use_text", c.use_text},   {"ple", c.ple}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    EncoderConfig d;
    c.d_video = j.value("d_video", d.d_video);
    c.d_audio = j.value("d_audio", d.d_audio);
    c.vocab = j.value("vocab", d.vocab);
    c.max_text = j.value("max_text", d.max_text);
    c.max_clips = j.value("max_clips", d.max_clips);
    c.width = j.value("width", d.width);
    c.heads = j.value("heads", d.heads);
    c.ffn = j.value("ffn", d.ffn);
    c.text_layers = j.value("text_layers", d.text_layers);
    c.xmodal_layers = j.value("xmodal_layers", d.xmodal_layers);
    c.use_video = j.value("use_video", d.use_video);
    c.use_audio = j.value("use_audio", d.use_audio);
    c.use_text = j.value("use_text", d.use_text);
    c.ple = j.value("ple", d.ple);
}

// Inclusive clip span [first, last].
struct ClipSpan {
    std::size_t first = 0;
    std::size_t last = 0;
};

// Four parallel branches over time, concatenated on channels:
// 1x1 | 1x1 -> 3 | 1x1 -> 5 | maxpool3 -> 1x1, each followed by ReLU.
class Inception1d {
public:
    Inception1d() = default;
    Inception1d(nn::ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, nn::Rng& rng) {
        if (out % 4 != 0) throw ConfigError(name + ": output channels must split evenly over 4 branches");
        const std::size_t b = out / 4;
        point_ = nn::Conv1d(ps, name + ".b1", in, b, 1, rng);
        reduce3_ = nn::Conv1d(ps, name + ".b3_reduce", in, b, 1, rng);
        conv3_ = nn::Conv1d(ps, name + ".b3", b, b, 3, rng);
        reduce5_ = nn::Conv1d(ps, name + ".b5_reduce", in, b, 1, rng);
        conv5_ = nn::Conv1d(ps, name + ".b5", b, b, 5, rng);
        pool_proj_ = nn::Conv1d(ps, name + ".pool_proj", in, b, 1, rng);
    }

    nn::Tensor operator()(const nn::Tensor& x) const {
        using namespace nn;
        return concat_cols({relu(point_(x)), relu(conv3_(relu(reduce3_(x)))), relu(conv5_(relu(reduce5_(x)))),
                            relu(pool_proj_(max_pool1d(x, 3)))});
    }

private:
    nn::Conv1d point_, reduce3_, conv3_, reduce5_, conv5_, pool_proj_;
};

struct MultiModalOutput {
    nn::Tensor text_states;  // undefined when the caption is empty
    nn::Tensor va_states;    // clips x width
};

class MultiModalEncoder {
public:
    MultiModalEncoder() = default;
    MultiModalEncoder(nn::ParameterSet& ps, const std::string& name, const EncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const std::size_t D = cfg.width;
        const std::size_t C = cfg.d_video + cfg.d_audio;
        token_emb_ = ps.add(name + ".text.token", {cfg.vocab, D}, nn::Init::embedding(), rng);
        text_pos_ = ps.add(name + ".text.position", {cfg.max_text, D}, nn::Init::embedding(), rng);
        text_stack_ = nn::TransformerStack(ps, name + ".text.layer", cfg.text_layers, D, cfg.heads, cfg.ffn, rng);
        if (cfg.ple) {
            in_span_ = ps.add(name + ".ple.in_span", {1, C}, nn::Init::embedding(), rng);
            out_span_ = ps.add(name + ".ple.out_span", {1, C}, nn::Init::embedding(), rng);
        }
        inception1_ = Inception1d(ps, name + ".inception1", C, D, rng);
        inception2_ = Inception1d(ps, name + ".inception2", D, D, rng);
        va_pos_ = ps.add(name + ".va.position", {cfg.max_clips, D}, nn::Init::embedding(), rng);
        type_emb_ = ps.add(name + ".type", {2, D}, nn::Init::embedding(), rng);
        xmodal_ = nn::TransformerStack(ps, name + ".xmodal", cfg.xmodal_layers, D, cfg.heads, cfg.ffn, rng);
    }

    const EncoderConfig& config() const { return cfg_; }

    // Token lookup plus learned positions, then the local text transformer.
    // Returns an undefined tensor for an empty caption.
    nn::Tensor encode_text(std::span<const std::size_t> tokens) const {
        if (!cfg_.use_text || tokens.empty()) return {};
        if (tokens.size() > cfg_.max_text) {
            throw InputError("caption has " + std::to_string(tokens.size()) + " tokens, limit is " + std::to_string(cfg_.max_text));
        }
        for (auto t : tokens)
            if (t >= cfg_.vocab) throw InputError("token id " + std::to_string(t) + " >= vocabulary size " + std::to_string(cfg_.vocab));
        nn::Tensor x = nn::add(nn::gather_rows(token_emb_, tokens), nn::slice_rows(text_pos_, 0, tokens.size()));
        return text_stack_(x);
    }

    // Y = [video; audio] per clip, optionally marked with the span embedding,
    // then two inception modules and learned positions.
    nn::Tensor encode_video_audio(const nn::Tensor& video, const nn::Tensor& audio, std::optional<ClipSpan> span = {}) const {
        return encode_fused_input(marked_input(video, audio, span));
    }

    // The pre-inception input, exposed so the span marking can be inspected.
    nn::Tensor marked_input(const nn::Tensor& video, const nn::Tensor& audio, std::optional<ClipSpan> span) const {
        const std::size_t m = video.rows();
        if (audio.rows() != m) throw DimensionError("video has " + std::to_string(m) + " clips but audio has " + std::to_string(audio.rows()));
        if (video.cols() != cfg_.d_video || audio.cols() != cfg_.d_audio) {
            throw DimensionError("feature widths " + nn::shape_str(video.shape()) + " / " + nn::shape_str(audio.shape()) +
                                 " do not match the encoder configuration");
        }
        if (m > cfg_.max_clips) throw InputError("video has " + std::to_string(m) + " clips, limit is " + std::to_string(cfg_.max_clips));
        nn::Tensor y = nn::concat_cols({cfg_.use_video ? video : nn::Tensor::zeros(video.shape()),
                                        cfg_.use_audio ? audio : nn::Tensor::zeros(audio.shape())});
        if (span && cfg_.ple) {
            if (span->first > span->last || span->last >= m) {
                throw InputError("span [" + std::to_string(span->first) + ", " + std::to_string(span->last) + "] outside " +
                                 std::to_string(m) + " clips");
            }
            nn::Tensor onehot({m, 2});
            for (std::size_t t = 0; t < m; ++t) onehot.at(t, (t >= span->first && t <= span->last) ? 0 : 1) = 1.0;
            y = nn::add(y, nn::matmul(onehot, nn::concat_rows({in_span_, out_span_})));
        } else if (span && (span->first > span->last || span->last >= m)) {
            throw InputError("span outside the video");
        }
        return y;
    }

    nn::Tensor encode_fused_input(const nn::Tensor& y) const {
        nn::Tensor h = inception2_(inception1_(y));
        return nn::add(h, nn::slice_rows(va_pos_, 0, y.rows()));
    }

    // Adds the per-modality type embedding, runs the joint transformer over
    // [text; video-audio] and splits the result back.
    MultiModalOutput cross_modal(const nn::Tensor& text_states, const nn::Tensor& va_states,
                                 std::vector<nn::Tensor>* first_layer_attention = nullptr) const {
        const std::size_t D = cfg_.width;
        if (va_states.cols() != D || (text_states.defined() && text_states.cols() != D)) {
            throw ConfigError("cross-modal input width does not match model width " + std::to_string(D));
        }
        nn::Tensor va = nn::add_row(va_states, nn::slice_rows(type_emb_, 1, 2));
        if (!text_states.defined()) return {{}, xmodal_(va, first_layer_attention)};
        nn::Tensor tx = nn::add_row(text_states, nn::slice_rows(type_emb_, 0, 1));
        const std::size_t n = text_states.rows();
        nn::Tensor joint = xmodal_(nn::concat_rows({tx, va}), first_layer_attention);
        return {nn::slice_rows(joint, 0, n), nn::slice_rows(joint, n, joint.rows())};
    }

    MultiModalOutput operator()(const nn::Tensor& video, const nn::Tensor& audio, std::span<const std::size_t> tokens,
                                std::optional<ClipSpan> span = {}, std::vector<nn::Tensor>* first_layer_attention = nullptr) const {
        return cross_modal(encode_text(tokens), encode_video_audio(video, audio, span), first_layer_attention);
    }

    const nn::Tensor& in_span_embedding() const { return in_span_; }
    const nn::Tensor& out_span_embedding() const { return out_span_; }
    const nn::Tensor& type_embeddings() const { return type_emb_; }

private:
    EncoderConfig cfg_;
    nn::Tensor token_emb_, text_pos_;
    nn::TransformerStack text_stack_;
    nn::Tensor in_span_, out_span_;
    Inception1d inception1_, inception2_;
    nn::Tensor va_pos_, type_emb_;
    nn::TransformerStack xmodal_;
};

}  // namespace adstruct
