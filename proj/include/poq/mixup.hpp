#pragma once

#include <vector>

#include "poq/common.hpp"

namespace poq {

/// Minibatch of images with per-sample class-indicator targets; targets stay
/// 0/1 except under soft mixup, which turns them into convex weights.
struct Batch {
    std::size_t image_numel = 0;
    std::size_t num_classes = 0;
    long epoch_index = 0;
    std::vector<std::vector<float>> images;
    std::vector<std::vector<float>> targets;

    std::size_t size() const { return images.size(); }
};

enum class MixupMode { None, Soft, Hard, RestrictedHard };

inline const char* mixup_mode_name(MixupMode m) {
    switch (m) {
        case MixupMode::None: return "none";
        case MixupMode::Soft: return "soft";
        case MixupMode::Hard: return "hard";
        case MixupMode::RestrictedHard: return "restricted-hard";
    }
    return "?";
}

inline MixupMode parse_mixup_mode(const std::string& s) {
    if (s == "none") return MixupMode::None;
    if (s == "soft") return MixupMode::Soft;
    if (s == "hard") return MixupMode::Hard;
    if (s == "restricted-hard") return MixupMode::RestrictedHard;
    throw ConfigError("unknown mixup mode '" + s +
                      "' (expected none | soft | hard | restricted-hard)");
}

struct MixupConfig {
    MixupMode mode = MixupMode::None;
    double alpha = 0.4; // Beta parameter for soft mixup

    void validate() const {
        if (mode == MixupMode::Soft && !(alpha > 0.0))
            throw ConfigError("soft mixup requires alpha > 0");
    }
};

/// Deterministic core of soft mixup: sample i blends with partners[i] under
/// weight lambdas[i], images and targets alike.
Batch soft_mixup_with(const Batch& batch, const std::vector<std::size_t>& partners,
                      const std::vector<double>& lambdas);

/// Pairs every sample with a uniformly drawn partner (never itself) and
/// blends with λ ~ Beta(α, α).
Batch soft_mixup(const Batch& batch, const MixupConfig& config, Rng& rng);

/// Alternating-epoch mixup: even epochs pass through; odd epochs average
/// every image 0.5:0.5 with a random partner and take the label union.
Batch hard_mixup(const Batch& batch, Rng& rng);

/// Every epoch, the first half of the batch is averaged with the second half
/// (sample k with sample k+N/2, labels unioned); the second half is left
/// untouched. N must be even.
Batch restricted_hard_mixup(const Batch& batch);

Batch apply_mixup(const Batch& batch, const MixupConfig& config, Rng& rng);

} // namespace poq
