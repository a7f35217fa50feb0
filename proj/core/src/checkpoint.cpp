// SPDX-License-Identifier: Apache-2.0
#include "retnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "retnet/config.hpp"

namespace retnet {
namespace detail_ckpt {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'E', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

void put_f32(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

bool get_f32(std::istream& in, float& f) {
    std::uint32_t bits;
    if (!get_u32(in, bits)) return false;
    std::memcpy(&f, &bits, 4);
    return true;
}

} // namespace

void write_file(const std::string& path, const ModelConfig& cfg,
                const std::vector<std::pair<std::string, std::vector<float>>>& blobs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    std::string header = canonical_model_config(cfg);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, data] : blobs) {
        put_u32(out, static_cast<std::uint32_t>(data.size()));
        for (float f : data) put_f32(out, f);
    }
    if (!out) throw Error("checkpoint: write to " + path + " failed");
}

std::pair<ModelConfig, std::vector<std::vector<float>>> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IntegrityError("checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    if (!get_u32(in, version)) throw IntegrityError("checkpoint: truncated version field");
    if (version != kCheckpointVersion)
        throw IntegrityError("checkpoint: unsupported format version " +
                             std::to_string(version));
    std::uint32_t header_len = 0;
    if (!get_u32(in, header_len)) throw IntegrityError("checkpoint: truncated header length");
    std::string header(header_len, '\0');
    if (!in.read(header.data(), header_len))
        throw IntegrityError("checkpoint: truncated header");
    ModelConfig cfg;
    try {
        cfg = parse_model_config_text(header);
    } catch (const Error& e) {
        throw IntegrityError(std::string("checkpoint: bad header: ") + e.what());
    }
    std::vector<std::vector<float>> blobs;
    for (;;) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() == 0 && in.eof()) break;  // clean end of file
        if (in.gcount() != 4)
            throw IntegrityError("checkpoint: truncated length of blob " +
                                 std::to_string(blobs.size()));
        std::uint32_t count = static_cast<std::uint32_t>(b[0]) |
                              (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) |
                              (static_cast<std::uint32_t>(b[3]) << 24);
        std::vector<float> data(count);
        for (std::uint32_t i = 0; i < count; ++i)
            if (!get_f32(in, data[i]))
                throw IntegrityError("checkpoint: blob " + std::to_string(blobs.size()) +
                                     " truncated at element " + std::to_string(i));
        blobs.push_back(std::move(data));
    }
    return {cfg, std::move(blobs)};
}

} // namespace detail_ckpt
} // namespace retnet
