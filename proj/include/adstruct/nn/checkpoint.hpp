#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adstruct/errors.hpp"
#include "adstruct/nn/layers.hpp"

// Checkpoint container: a JSON manifest at `path` listing every tensor's name,
// shape and byte range, plus a flat little-endian float64 blob at
// `path + ".bin"`. The manifest's "meta" object carries whatever the caller
// needs to rebuild the owning model (its configuration, index metadata...).
namespace adstruct::nn {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

namespace detail {

inline void put_f64_le(std::vector<char>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline double get_f64_le(const char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                         const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json manifest;
    manifest["format"] = "adstruct-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "float64-le";
    const auto blob_path = std::filesystem::path(path.string() + ".bin");
    manifest["blob"] = blob_path.filename().string();
    manifest["meta"] = meta;
    std::vector<char> blob;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& nt : tensors) {
        const std::size_t offset = blob.size();
        for (double v : nt.tensor.data()) detail::put_f64_le(blob, v);
        entries.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}, {"bytes", blob.size() - offset}});
    }
    manifest["tensors"] = entries;
    std::ofstream bf(blob_path, std::ios::binary);
    if (!bf) throw InputError("cannot write checkpoint blob " + blob_path.string());
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream mf(path);
    if (!mf) throw InputError("cannot write checkpoint manifest " + path.string());
    mf << manifest.dump(2) << '\n';
}

struct LoadedTensors {
    std::vector<NamedTensor> tensors;
    nlohmann::json meta;

    const Tensor& get(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t.tensor;
        throw InputError("checkpoint has no tensor '" + name + "'");
    }
};

inline LoadedTensors load_tensors(const std::filesystem::path& path) {
    std::ifstream mf(path);
    if (!mf) throw InputError("checkpoint not found: " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("checkpoint manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (manifest.value("format", "") != "adstruct-checkpoint" || manifest.value("version", 0) != 1) {
        throw InputError("unsupported checkpoint format in " + path.string());
    }
    const auto blob_path = path.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf) throw InputError("checkpoint blob not found: " + blob_path.string());
    std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    LoadedTensors out;
    out.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest.at("tensors")) {
        const auto shape = e.at("shape").get<Shape>();
        const auto offset = e.at("offset").get<std::size_t>();
        const auto bytes = e.at("bytes").get<std::size_t>();
        const std::size_t n = shape_size(shape);
        if (bytes != n * 8 || offset + bytes > blob.size()) {
            throw InputError("checkpoint tensor '" + e.at("name").get<std::string>() + "' has inconsistent byte range");
        }
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = detail::get_f64_le(blob.data() + offset + 8 * i);
        out.tensors.push_back({e.at("name").get<std::string>(), Tensor(shape, std::move(values))});
    }
    return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    std::vector<NamedTensor> tensors;
    for (const auto& p : params.all()) tensors.push_back({p.name, p.tensor});
    save_tensors(path, tensors, meta);
}

// Copies stored values into an already-constructed model's parameters.
// Names and shapes must match exactly.
inline nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
    auto loaded = load_tensors(path);
    if (loaded.tensors.size() != params.size()) {
        throw InputError("checkpoint " + path.string() + " holds " + std::to_string(loaded.tensors.size()) +
                         " tensors, model expects " + std::to_string(params.size()));
    }
    for (auto& p : params.all()) {
        const Tensor& src = loaded.get(p.name);
        if (src.shape() != p.tensor.shape()) {
            throw InputError("checkpoint tensor '" + p.name + "' has shape " + shape_str(src.shape()) + ", model expects " +
                             shape_str(p.tensor.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), p.tensor.data().begin());
    }
    return loaded.meta;
}

}  // namespace adstruct::nn
