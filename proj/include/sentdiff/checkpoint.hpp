#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentdiff/config.hpp"
#include "sentdiff/model.hpp"

namespace sentdiff {

// Checkpoint container: magic, format version, a kind byte, the serialized
// TrainConfig (which carries every architecture field), step count, dev score,
// then named tensors in row-major float32. BatchNorm running stats ride along
// as named tensors.
namespace ckpt {

inline constexpr char kMagic[4] = {'S', 'D', 'F', 'C'};
inline constexpr uint32_t kVersion = 1;
inline constexpr uint8_t kKindModel = 0;
inline constexpr uint8_t kKindGenerator = 1;

namespace detail {

template <class V>
void write_pod(std::ostream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<uint64_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const auto len = read_pod<uint64_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return s;
}

template <class T>
void write_tensor(std::ostream& out, const std::string& name, const Tensor<T>& t) {
    write_string(out, name);
    write_pod(out, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_pod(out, d);
    std::vector<float> buf(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

template <class T>
std::pair<std::string, Tensor<T>> read_tensor(std::istream& in) {
    const std::string name = read_string(in);
    const auto ndims = read_pod<uint32_t>(in);
    std::vector<int64_t> shape(ndims);
    for (auto& d : shape) d = read_pod<int64_t>(in);
    Tensor<T> t(shape);
    std::vector<float> buf(t.data.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint tensor: " + name);
    for (size_t i = 0; i < buf.size(); ++i) t.data[i] = static_cast<T>(buf[i]);
    return {name, std::move(t)};
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParams<T>& m) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    m.for_each_param([&](Param<T>& p) { out.emplace_back(p.name, &p.value); });
    out.emplace_back("projector.bn1_running_mean", &m.projector.bn1_running_mean);
    out.emplace_back("projector.bn1_running_var", &m.projector.bn1_running_var);
    out.emplace_back("projector.bn2_running_mean", &m.projector.bn2_running_mean);
    out.emplace_back("projector.bn2_running_var", &m.projector.bn2_running_var);
    return out;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(GeneratorParams<T>& g) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    g.for_each_param([&](Param<T>& p) { out.emplace_back(p.name, &p.value); });
    return out;
}

template <class T, class Params>
void write_file(const std::string& path, uint8_t kind, Params& params, const TrainConfig& cfg,
                int64_t step, double dev_score) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, kind);
    write_string(out, serialize_config(cfg));
    write_pod(out, step);
    write_pod(out, dev_score);
    auto tensors = named_tensors(params);
    write_pod(out, static_cast<uint32_t>(tensors.size()));
    for (auto& [name, t] : tensors) write_tensor(out, name, *t);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

struct Header {
    uint8_t kind = 0;
    TrainConfig config;
    int64_t step = 0;
    double dev_score = 0.0;
};

inline Header read_header(std::istream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = read_pod<uint32_t>(in);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    Header h;
    h.kind = read_pod<uint8_t>(in);
    h.config = parse_config_text(read_string(in));
    h.step = read_pod<int64_t>(in);
    h.dev_score = read_pod<double>(in);
    return h;
}

template <class T, class Params>
void fill_tensors(std::istream& in, Params& params, const std::string& path) {
    auto tensors = named_tensors(params);
    const auto count = read_pod<uint32_t>(in);
    if (count != tensors.size())
        throw std::runtime_error("checkpoint tensor count mismatch in " + path);
    for (uint32_t i = 0; i < count; ++i) {
        auto [name, t] = read_tensor<T>(in);
        if (name != tensors[i].first)
            throw std::runtime_error("unexpected tensor " + name + " in " + path);
        if (t.shape != tensors[i].second->shape)
            throw std::runtime_error("tensor shape mismatch for " + name + " in " + path);
        *tensors[i].second = std::move(t);
    }
}

}  // namespace detail

}  // namespace ckpt

template <class T>
void save_checkpoint(const std::string& path, ModelParams<T>& model, const TrainConfig& cfg,
                     int64_t step, double dev_score) {
    ckpt::detail::write_file<T>(path, ckpt::kKindModel, model, cfg, step, dev_score);
}

template <class T>
void save_generator_checkpoint(const std::string& path, GeneratorParams<T>& gen,
                               const TrainConfig& cfg) {
    ckpt::detail::write_file<T>(path, ckpt::kKindGenerator, gen, cfg, 0, 0.0);
}

template <class T>
struct LoadedCheckpoint {
    ModelParams<T> model;
    TrainConfig config;
    int64_t step = 0;
    double dev_score = 0.0;

    explicit LoadedCheckpoint(const EncoderConfig& cfg) : model(cfg) {}
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    const auto header = ckpt::detail::read_header(in, path);
    if (header.kind != ckpt::kKindModel)
        throw std::runtime_error("checkpoint does not hold a model: " + path);
    LoadedCheckpoint<T> loaded(header.config.encoder);
    loaded.config = header.config;
    loaded.step = header.step;
    loaded.dev_score = header.dev_score;
    ckpt::detail::fill_tensors<T>(in, loaded.model, path);
    return loaded;
}

template <class T>
struct LoadedGenerator {
    GeneratorParams<T> params;
    TrainConfig config;

    explicit LoadedGenerator(const EncoderConfig& cfg) : params(cfg) {}
};

template <class T>
LoadedGenerator<T> load_generator_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    const auto header = ckpt::detail::read_header(in, path);
    if (header.kind != ckpt::kKindGenerator)
        throw std::runtime_error("checkpoint does not hold a generator: " + path);
    LoadedGenerator<T> loaded(header.config.generator);
    loaded.config = header.config;
    ckpt::detail::fill_tensors<T>(in, loaded.params, path);
    return loaded;
}

}  // namespace sentdiff
