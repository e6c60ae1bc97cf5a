#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fedhbn/errors.hpp"
#include "fedhbn/model.hpp"
#include "fedhbn/stats.hpp"

namespace fedhbn {

// Checkpoint layout, all little-endian:
//   magic "FHBN" | version u32
//   param count u32 | per param: name len u32, name bytes, ndim u32,
//                      dims u64..., f32 data
//   stats count u32 | per layer: channels u64, count i64,
//                      sum f64..., sumsq f64...

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void write_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    // this library targets little-endian hosts; memcpy is the identity there
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U read_le(std::istream& is) {
    unsigned char buf[sizeof(U)];
    is.read(reinterpret_cast<char*>(buf), sizeof(U));
    if (!is) throw FormatError("checkpoint: unexpected end of file");
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
}

static_assert(sizeof(float) == 4 && sizeof(double) == 8);

}  // namespace detail

inline void write_channel_stats(std::ostream& os, const ChannelStats& s) {
    detail::write_le<std::uint64_t>(os, s.channels());
    detail::write_le<std::int64_t>(os, s.count);
    for (double v : s.sum) detail::write_le<double>(os, v);
    for (double v : s.sumsq) detail::write_le<double>(os, v);
}

inline ChannelStats read_channel_stats(std::istream& is) {
    const std::uint64_t c = detail::read_le<std::uint64_t>(is);
    ChannelStats s{std::size_t(c)};
    s.count = detail::read_le<std::int64_t>(is);
    for (auto& v : s.sum) v = detail::read_le<double>(is);
    for (auto& v : s.sumsq) v = detail::read_le<double>(is);
    return s;
}

inline void write_params(std::ostream& os, const ModelParams<float>& params) {
    detail::write_le<std::uint32_t>(os, std::uint32_t(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names[i];
        detail::write_le<std::uint32_t>(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        const Tensor<float>& t = params.values[i];
        detail::write_le<std::uint32_t>(os, std::uint32_t(t.ndim()));
        for (std::size_t d : t.shape) detail::write_le<std::uint64_t>(os, std::uint64_t(d));
        for (float v : t.data) detail::write_le<float>(os, v);
    }
}

inline ModelParams<float> read_params(std::istream& is) {
    ModelParams<float> out;
    const std::uint32_t count = detail::read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = detail::read_le<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw FormatError("checkpoint: truncated parameter name");
        const std::uint32_t ndim = detail::read_le<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = std::size_t(detail::read_le<std::uint64_t>(is));
        Tensor<float> t(shape);
        for (auto& v : t.data) v = detail::read_le<float>(is);
        out.names.push_back(std::move(name));
        out.values.push_back(std::move(t));
    }
    return out;
}

inline void write_checkpoint(std::ostream& os, const ModelParams<float>& params,
                             const std::vector<ChannelStats>& stats) {
    os.write("FHBN", 4);
    detail::write_le<std::uint32_t>(os, kCheckpointVersion);
    write_params(os, params);
    detail::write_le<std::uint32_t>(os, std::uint32_t(stats.size()));
    for (const auto& s : stats) write_channel_stats(os, s);
}

struct CheckpointData {
    ModelParams<float> params;
    std::vector<ChannelStats> stats;
};

inline CheckpointData read_checkpoint(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "FHBN")
        throw FormatError("checkpoint: bad magic, not an FHBN file");
    const std::uint32_t version = detail::read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
    CheckpointData out;
    out.params = read_params(is);
    const std::uint32_t nstats = detail::read_le<std::uint32_t>(is);
    out.stats.reserve(nstats);
    for (std::uint32_t i = 0; i < nstats; ++i) out.stats.push_back(read_channel_stats(is));
    return out;
}

inline void write_checkpoint_file(const std::string& path, const ModelParams<float>& params,
                                  const std::vector<ChannelStats>& stats) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    write_checkpoint(f, params, stats);
}

inline CheckpointData read_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open '" + path + "'");
    return read_checkpoint(f);
}

}  // namespace fedhbn
