#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "adstruct/errors.hpp"
#include "adstruct/nn/checkpoint.hpp"

namespace adstruct::ret {

inline constexpr std::size_t kNeighbors = 10;

enum class ClassifierMode { Cls, Ret, Ensemble };

inline std::string to_string(ClassifierMode m) {
    switch (m) {
        case ClassifierMode::Cls: return "cls";
        case ClassifierMode::Ret: return "ret";
        default: return "ensemble";
    }
}

inline ClassifierMode classifier_mode_from(const std::string& s) {
    if (s == "cls") return ClassifierMode::Cls;
    if (s == "ret") return ClassifierMode::Ret;
    if (s == "ensemble") return ClassifierMode::Ensemble;
    throw ConfigError("unknown classifier mode '" + s + "' (expected cls, ret or ensemble)");
}

inline std::vector<double> ensemble(const std::vector<double>& p_cls, const std::vector<double>& p_ret) {
    if (p_cls.size() != p_ret.size()) throw DimensionError("ensemble: score vectors differ in length");
    std::vector<double> out(p_cls.size());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = 0.5 * (p_cls[c] + p_ret[c]);
    return out;
}

inline std::vector<double> combine(ClassifierMode mode, const std::vector<double>& p_cls, const std::vector<double>& p_ret) {
    switch (mode) {
        case ClassifierMode::Cls: return p_cls;
        case ClassifierMode::Ret: return p_ret;
        default: return ensemble(p_cls, p_ret);
    }
}

inline double norm_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm_of(a), nb = norm_of(b);
    if (na == 0.0 || nb == 0.0) throw RetrievalError("cosine similarity of a zero vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot / (na * nb);
}

struct Neighbor {
    std::size_t entry = 0;
    double similarity = 0.0;
};

// Exact cosine nearest-neighbour store of proposal vectors with multi-hot
// label vectors and the id of the video each came from.
class RetrievalIndex {
public:
    RetrievalIndex(std::size_t dim, std::size_t categories) : dim_(dim), categories_(categories) {
        if (dim == 0 || categories == 0) throw ConfigError("retrieval index needs a non-zero dimension and category count");
    }

    // Returns false (and warns) when the vector is zero and was skipped.
    bool add(std::span<const double> v, std::span<const double> labels, const std::string& source) {
        if (v.size() != dim_ || labels.size() != categories_) {
            throw DimensionError("retrieval entry has " + std::to_string(v.size()) + "/" + std::to_string(labels.size()) +
                                 " values, index expects " + std::to_string(dim_) + "/" + std::to_string(categories_));
        }
        const double n = norm_of(v);
        if (!std::isfinite(n)) throw RetrievalError("non-finite vector from '" + source + "'");
        if (n == 0.0) {
            std::cerr << "warning: skipping zero vector from '" << source << "' in retrieval index\n";
            return false;
        }
        for (double x : v) unit_.push_back(x / n);
        labels_.insert(labels_.end(), labels.begin(), labels.end());
        sources_.push_back(source);
        return true;
    }

    std::size_t size() const { return sources_.size(); }
    std::size_t dim() const { return dim_; }
    std::size_t categories() const { return categories_; }
    const std::string& source(std::size_t i) const { return sources_.at(i); }
    std::span<const double> labels(std::size_t i) const { return {labels_.data() + i * categories_, categories_}; }
    std::span<const double> unit_vector(std::size_t i) const { return {unit_.data() + i * dim_, dim_}; }

    // Top-k by cosine similarity (ties to the earlier entry), skipping
    // entries whose source equals `exclude_source` when it is non-empty.
    std::vector<Neighbor> query(std::span<const double> v, std::size_t k = kNeighbors, const std::string& exclude_source = {}) const {
        if (v.size() != dim_) throw DimensionError("query has " + std::to_string(v.size()) + " values, index expects " + std::to_string(dim_));
        const double n = norm_of(v);
        if (n == 0.0 || !std::isfinite(n)) throw RetrievalError("query vector must be finite and non-zero");
        std::vector<Neighbor> all;
        for (std::size_t i = 0; i < size(); ++i) {
            if (!exclude_source.empty() && sources_[i] == exclude_source) continue;
            const auto u = unit_vector(i);
            double dot = 0.0;
            for (std::size_t d = 0; d < dim_; ++d) dot += u[d] * v[d];
            all.push_back({i, dot / n});
        }
        if (all.empty()) throw RetrievalError("retrieval index has no eligible entries");
        const std::size_t keep = std::min(k, all.size());
        std::partial_sort(all.begin(), all.begin() + static_cast<long>(keep), all.end(), [](const Neighbor& a, const Neighbor& b) {
            if (a.similarity != b.similarity) return a.similarity > b.similarity;
            return a.entry < b.entry;
        });
        all.resize(keep);
        return all;
    }

    // Similarity-weighted vote over the neighbours' label vectors. Negative
    // similarities count as zero; if nothing is positive the result is zero.
    std::vector<double> classify(std::span<const double> v, std::size_t k = kNeighbors, const std::string& exclude_source = {}) const {
        std::vector<double> out(categories_, 0.0);
        double total = 0.0;
        for (const auto& nb : query(v, k, exclude_source)) {
            const double w = std::max(0.0, nb.similarity);
            if (w == 0.0) continue;
            const auto g = labels(nb.entry);
            for (std::size_t c = 0; c < categories_; ++c) out[c] += w * g[c];
            total += w;
        }
        if (total > 0.0)
            for (double& x : out) x /= total;
        return out;
    }

    void save(const std::filesystem::path& path, nlohmann::json meta = nlohmann::json::object()) const {
        if (size() == 0) throw RetrievalError("refusing to save an empty retrieval index");
        meta["kind"] = "retrieval-index";
        meta["sources"] = sources_;
        nn::save_tensors(path, {{"vectors", nn::Tensor({size(), dim_}, unit_)}, {"labels", nn::Tensor({size(), categories_}, labels_)}}, meta);
    }

    static RetrievalIndex load(const std::filesystem::path& path) {
        auto loaded = nn::load_tensors(path);
        if (loaded.meta.value("kind", "") != "retrieval-index") throw InputError(path.string() + " is not a retrieval index");
        const auto& vec = loaded.get("vectors");
        const auto& lab = loaded.get("labels");
        auto sources = loaded.meta.at("sources").get<std::vector<std::string>>();
        if (vec.rows() != lab.rows() || vec.rows() != sources.size()) throw InputError("retrieval index " + path.string() + " is inconsistent");
        RetrievalIndex idx(vec.cols(), lab.cols());
        idx.unit_.assign(vec.data().begin(), vec.data().end());
        idx.labels_.assign(lab.data().begin(), lab.data().end());
        idx.sources_ = std::move(sources);
        return idx;
    }

private:
    std::size_t dim_, categories_;
    std::vector<double> unit_;
    std::vector<double> labels_;
    std::vector<std::string> sources_;
};

}  // namespace adstruct::ret
