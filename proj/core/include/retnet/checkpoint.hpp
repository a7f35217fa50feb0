// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "retnet/model.hpp"

// Checkpoint file layout (all integers little-endian):
//   magic "RNET" (4 bytes)
//   u32 format version (currently 1)
//   u32 header length
//   header: canonical model config, `key=value` lines, keys sorted
//   one blob per parameter tensor in visit_params order, each as
//   u32 element count followed by raw little-endian 32-bit floats
// Loading rejects a wrong magic or version, blob sizes that disagree with
// the header config, trailing bytes, and non-finite values.
namespace retnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail_ckpt {
void write_file(const std::string& path, const ModelConfig& cfg,
                const std::vector<std::pair<std::string, std::vector<float>>>& blobs);
std::pair<ModelConfig, std::vector<std::vector<float>>> read_file(const std::string& path);
} // namespace detail_ckpt

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const ModelConfig& cfg,
                     const std::string& path) {
    std::vector<std::pair<std::string, std::vector<float>>> blobs;
    visit_params(params, [&](const std::string& name, const Tensor<T>& t) {
        std::vector<float> data(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<float>(t[i]);
        blobs.emplace_back(name, std::move(data));
    });
    detail_ckpt::write_file(path, cfg, blobs);
}

template <typename T = double>
std::pair<ModelParams<T>, ModelConfig> load_checkpoint(const std::string& path) {
    auto [cfg, blobs] = detail_ckpt::read_file(path);
    ModelParams<T> params = zero_params<T>(cfg);
    std::size_t idx = 0;
    visit_params(params, [&](const std::string& name, Tensor<T>& t) {
        if (idx >= blobs.size())
            throw IntegrityError("checkpoint: missing blob '" + name + "'");
        const std::vector<float>& data = blobs[idx];
        if (data.size() != t.size())
            throw IntegrityError("checkpoint: blob '" + name + "' holds " +
                                 std::to_string(data.size()) + " values, expected " +
                                 std::to_string(t.size()));
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::isfinite(data[i]))
                throw IntegrityError("checkpoint: non-finite value in blob '" + name + "'");
            t[i] = static_cast<T>(data[i]);
        }
        ++idx;
    });
    if (idx != blobs.size())
        throw IntegrityError("checkpoint: " + std::to_string(blobs.size() - idx) +
                             " unexpected trailing blob(s)");
    return {std::move(params), cfg};
}

} // namespace retnet
