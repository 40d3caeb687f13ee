#pragma once

// Versioned checkpoint container: magic "CTPCKPT1", a JSON metadata blob
// (model kind + config), then named parameter blocks as little-endian
// float32 arrays with declared shapes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "frontcast/grid.hpp"
#include "frontcast/nn.hpp"
#include "frontcast/tensor.hpp"

namespace frontcast {

inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'P', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                            const ParamStore& params) {
    std::string buf;
    detail::append_bytes(buf, kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string js = meta.dump();
    detail::put_le<uint32_t>(buf, static_cast<uint32_t>(js.size()));
    buf.append(js);
    detail::put_le<uint32_t>(buf, static_cast<uint32_t>(params.entries.size()));
    for (const auto& e : params.entries) {
        detail::put_le<uint32_t>(buf, static_cast<uint32_t>(e.name.size()));
        buf.append(e.name);
        detail::put_le<uint32_t>(buf, static_cast<uint32_t>(e.value.shape.size()));
        for (int64_t d : e.value.shape)
            detail::put_le<uint64_t>(buf, static_cast<uint64_t>(d));
        for (double v : e.value.data)
            detail::put_le<float>(buf, static_cast<float>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw io_error("cannot open checkpoint for writing: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw io_error("checkpoint write failed: " + path.string());
}

struct CheckpointData {
    nlohmann::json meta;
    std::vector<ParamStore::Entry> blocks;
};

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw io_error("cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kCheckpointMagic) ||
        std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw parse_error(parse_error::kind::bad_magic, "checkpoint magic mismatch: " + path.string());
    size_t off = sizeof(kCheckpointMagic);

    const auto json_len = detail::get_le<uint32_t>(buf, off, "checkpoint json length");
    if (off + json_len > buf.size())
        throw parse_error(parse_error::kind::truncated, "checkpoint json truncated");
    CheckpointData ck;
    try {
        ck.meta = nlohmann::json::parse(buf.substr(off, json_len));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(parse_error::kind::bad_value, std::string("checkpoint json invalid: ") + e.what());
    }
    off += json_len;

    const auto nblocks = detail::get_le<uint32_t>(buf, off, "checkpoint block count");
    ck.blocks.reserve(nblocks);
    for (uint32_t bi = 0; bi < nblocks; ++bi) {
        const auto name_len = detail::get_le<uint32_t>(buf, off, "block name length");
        if (off + name_len > buf.size())
            throw parse_error(parse_error::kind::truncated, "block name truncated");
        std::string name = buf.substr(off, name_len);
        off += name_len;
        const auto ndim = detail::get_le<uint32_t>(buf, off, "block ndim");
        std::vector<int64_t> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d)
            shape[d] = static_cast<int64_t>(detail::get_le<uint64_t>(buf, off, "block dim"));
        Tensor t(shape);
        for (double& v : t.data)
            v = static_cast<double>(detail::get_le<float>(buf, off, "block payload"));
        ck.blocks.push_back({std::move(name), std::move(t)});
    }
    return ck;
}

// Copies checkpoint blocks into an already-constructed store; names and
// shapes must match exactly.
inline void restore_params(ParamStore& params, const std::vector<ParamStore::Entry>& blocks) {
    if (blocks.size() != params.entries.size())
        throw parse_error(parse_error::kind::dimension_mismatch,
                          "checkpoint has " + std::to_string(blocks.size()) + " blocks, model has " +
                              std::to_string(params.entries.size()));
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].name != params.entries[i].name)
            throw parse_error(parse_error::kind::bad_value,
                              "checkpoint block '" + blocks[i].name + "' does not match parameter '" +
                                  params.entries[i].name + "'");
        if (blocks[i].value.shape != params.entries[i].value.shape)
            throw parse_error(parse_error::kind::dimension_mismatch,
                              "shape mismatch for parameter '" + blocks[i].name + "'");
        params.entries[i].value = blocks[i].value;
    }
}

}  // namespace frontcast
