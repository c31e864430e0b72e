// Checkpoint format: versioned magic header, the serialized config, a tensor
// manifest (name, shape, dtype, byte offset), then raw little-endian
// payloads. Round-trips are byte-exact.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlstm/config.hpp"
#include "xlstm/params.hpp"

namespace xlstm {

struct checkpoint_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_mismatch_error : checkpoint_error {
    using checkpoint_error::checkpoint_error;
};

namespace detail {

inline constexpr char ckpt_magic[8] = {'X', 'L', 'S', 'T', 'M', 'C', 'K', '1'};
inline constexpr std::uint32_t ckpt_version = 1;

template <class Real>
constexpr std::uint8_t dtype_code() {
    static_assert(sizeof(Real) == 4 || sizeof(Real) == 8);
    return sizeof(Real) == 4 ? 0 : 1;
}

// The build targets little-endian hosts; payloads are written verbatim.
template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw checkpoint_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

template <class Real>
void save_checkpoint(const ParameterSet<Real>& params, const ModelConfig& cfg,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("checkpoint: cannot open " + path);

    out.write(detail::ckpt_magic, sizeof detail::ckpt_magic);
    detail::put(out, detail::ckpt_version);

    const std::string cfg_text = serialize_model_config(cfg);
    detail::put(out, std::uint64_t(cfg_text.size()));
    out.write(cfg_text.data(), std::streamsize(cfg_text.size()));

    detail::put(out, std::uint64_t(params.infos.size()));
    for (const auto& info : params.infos) {
        detail::put(out, std::uint16_t(info.name.size()));
        out.write(info.name.data(), std::streamsize(info.name.size()));
        detail::put(out, detail::dtype_code<Real>());
        detail::put(out, std::uint8_t(info.shape.size()));
        for (auto e : info.shape) detail::put(out, std::uint64_t(e));
        detail::put(out, std::uint64_t(info.offset * sizeof(Real)));
    }
    out.write(reinterpret_cast<const char*>(params.data.data()),
              std::streamsize(params.data.size() * sizeof(Real)));
    if (!out) throw checkpoint_error("checkpoint: write failed: " + path);
}

template <class Real>
std::pair<ParameterSet<Real>, ModelConfig> load_checkpoint(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw checkpoint_error("checkpoint: cannot open " + path);

    char magic[sizeof detail::ckpt_magic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, detail::ckpt_magic, sizeof magic) != 0)
        throw checkpoint_error("checkpoint: bad magic in " + path);
    if (detail::get<std::uint32_t>(in) != detail::ckpt_version)
        throw checkpoint_error("checkpoint: unsupported version");

    const auto cfg_len = detail::get<std::uint64_t>(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), std::streamsize(cfg_len));
    if (!in) throw checkpoint_error("checkpoint: truncated config");
    const ModelConfig cfg = parse_model_config(cfg_text);

    ParameterSet<Real> params = build_parameters<Real>(cfg);
    const auto n_tensors = detail::get<std::uint64_t>(in);
    if (n_tensors != params.infos.size())
        throw shape_mismatch_error("checkpoint: manifest lists " +
                                   std::to_string(n_tensors) + " tensors, " +
                                   "config implies " +
                                   std::to_string(params.infos.size()));
    for (const auto& expect : params.infos) {
        const auto name_len = detail::get<std::uint16_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw checkpoint_error("checkpoint: truncated manifest");
        if (name != expect.name)
            throw shape_mismatch_error("checkpoint: unexpected tensor " +
                                       name + " (wanted " + expect.name + ")");
        if (detail::get<std::uint8_t>(in) != detail::dtype_code<Real>())
            throw checkpoint_error("checkpoint: dtype mismatch for " + name);
        const auto ndim = detail::get<std::uint8_t>(in);
        std::vector<std::size_t> shape(ndim);
        for (auto& e : shape)
            e = static_cast<std::size_t>(detail::get<std::uint64_t>(in));
        if (shape != expect.shape)
            throw shape_mismatch_error("checkpoint: shape mismatch for " +
                                       name);
        if (detail::get<std::uint64_t>(in) != expect.offset * sizeof(Real))
            throw checkpoint_error("checkpoint: bad payload offset for " +
                                   name);
    }
    in.read(reinterpret_cast<char*>(params.data.data()),
            std::streamsize(params.data.size() * sizeof(Real)));
    if (!in) throw checkpoint_error("checkpoint: truncated payload");
    return {std::move(params), cfg};
}

}  // namespace xlstm
