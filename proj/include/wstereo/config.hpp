#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "wstereo/errors.hpp"

namespace ws {

// Versioned architecture + run configuration. Serialized schema is the
// external contract; unknown keys are rejected only on version mismatch.
struct ModelConfig {
    int version = 1;
    std::uint64_t seed = 17;
    int n_i = 3;           // DWT levels
    int n_j = 4;           // IFA rounds
    int n_k_train = 8;     // update iterations during training
    int n_k_eval = 16;     // update iterations during evaluation
    int lookup_radius = 4; // r
    int pyramid_levels = 4; // P
    int ef_channels = 64;  // matching features
    int ctx_channels = 32; // E_l / E_h / hidden state channels
    int motion_channels = 32; // Encoder_g / Encoder_d output channels
    std::string hsa_pooling = "channel"; // channel | spatial
    std::string upsample = "bilinear";   // convex reserved, not implemented
    double lr = 0.02;
    int steps = 500;
    double gamma = 0.9;

    void validate() const {
        if (version != 1) throw ConfigError("unsupported config version");
        if (n_i < 1 || n_j < 1 || n_k_train < 1 || n_k_eval < 1)
            throw ConfigError("iteration counts must be positive");
        if (lookup_radius < 0 || pyramid_levels < 1)
            throw ConfigError("bad lookup configuration");
        if (hsa_pooling != "channel" && hsa_pooling != "spatial")
            throw ConfigError("hsa_pooling must be 'channel' or 'spatial'");
        if (upsample != "bilinear")
            throw ConfigError("only bilinear upsampling is implemented");
    }

    nlohmann::json to_json() const {
        return {{"version", version},
                {"seed", seed},
                {"n_i", n_i},
                {"n_j", n_j},
                {"n_k_train", n_k_train},
                {"n_k_eval", n_k_eval},
                {"lookup_radius", lookup_radius},
                {"pyramid_levels", pyramid_levels},
                {"ef_channels", ef_channels},
                {"ctx_channels", ctx_channels},
                {"motion_channels", motion_channels},
                {"hsa_pooling", hsa_pooling},
                {"upsample", upsample},
                {"lr", lr},
                {"steps", steps},
                {"gamma", gamma}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.version = j.value("version", 1);
        c.seed = j.value("seed", std::uint64_t(17));
        c.n_i = j.value("n_i", 3);
        c.n_j = j.value("n_j", 4);
        c.n_k_train = j.value("n_k_train", 8);
        c.n_k_eval = j.value("n_k_eval", 16);
        c.lookup_radius = j.value("lookup_radius", 4);
        c.pyramid_levels = j.value("pyramid_levels", 4);
        c.ef_channels = j.value("ef_channels", 64);
        c.ctx_channels = j.value("ctx_channels", 32);
        c.motion_channels = j.value("motion_channels", 32);
        c.hsa_pooling = j.value("hsa_pooling", std::string("channel"));
        c.upsample = j.value("upsample", std::string("bilinear"));
        c.lr = j.value("lr", 0.02);
        c.steps = j.value("steps", 500);
        c.gamma = j.value("gamma", 0.9);
        c.validate();
        return c;
    }

    static ModelConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw FormatError("cannot open config: " + path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad config JSON: " + std::string(e.what()));
        }
        return from_json(j);
    }
};

} // namespace ws
