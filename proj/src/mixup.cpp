#include "poq/mixup.hpp"

namespace poq {

namespace {

std::size_t random_partner(Rng& rng, std::size_t self, std::size_t n) {
    // uniform over the other n-1 samples
    std::size_t p = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(n) - 2));
    return p >= self ? p + 1 : p;
}

void union_into(std::vector<float>& dst, const std::vector<float>& other) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(dst[i], other[i]);
}

} // namespace

Batch soft_mixup_with(const Batch& batch, const std::vector<std::size_t>& partners,
                      const std::vector<double>& lambdas) {
    if (partners.size() != batch.size() || lambdas.size() != batch.size())
        throw DataError("soft_mixup_with: partner/lambda count does not match batch size");
    Batch out = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t j = partners[i];
        float lam = static_cast<float>(lambdas[i]);
        float com = 1.0f - lam;
        const auto& img_j = batch.images[j];
        auto& img = out.images[i];
        for (std::size_t k = 0; k < img.size(); ++k)
            img[k] = lam * batch.images[i][k] + com * img_j[k];
        const auto& tgt_j = batch.targets[j];
        auto& tgt = out.targets[i];
        for (std::size_t k = 0; k < tgt.size(); ++k)
            tgt[k] = lam * batch.targets[i][k] + com * tgt_j[k];
    }
    return out;
}

Batch soft_mixup(const Batch& batch, const MixupConfig& config, Rng& rng) {
    config.validate();
    if (batch.size() < 2) return batch;
    std::vector<std::size_t> partners(batch.size());
    std::vector<double> lambdas(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        partners[i] = random_partner(rng, i, batch.size());
        lambdas[i] = rng.beta_symmetric(config.alpha);
    }
    return soft_mixup_with(batch, partners, lambdas);
}

Batch hard_mixup(const Batch& batch, Rng& rng) {
    if (batch.epoch_index % 2 == 0 || batch.size() < 2) return batch;
    Batch out = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t j = random_partner(rng, i, batch.size());
        auto& img = out.images[i];
        const auto& img_j = batch.images[j];
        for (std::size_t k = 0; k < img.size(); ++k)
            img[k] = 0.5f * (batch.images[i][k] + img_j[k]);
        union_into(out.targets[i], batch.targets[j]);
    }
    return out;
}

Batch restricted_hard_mixup(const Batch& batch) {
    if (batch.size() % 2 != 0)
        throw ConfigError("restricted hard mixup needs an even batch, got " +
                          std::to_string(batch.size()) + " samples");
    Batch out = batch;
    std::size_t half = batch.size() / 2;
    for (std::size_t k = 0; k < half; ++k) {
        auto& img = out.images[k];
        const auto& img_p = batch.images[k + half];
        for (std::size_t i = 0; i < img.size(); ++i)
            img[i] = 0.5f * (batch.images[k][i] + img_p[i]);
        union_into(out.targets[k], batch.targets[k + half]);
    }
    return out;
}

Batch apply_mixup(const Batch& batch, const MixupConfig& config, Rng& rng) {
    switch (config.mode) {
        case MixupMode::None: return batch;
        case MixupMode::Soft: return soft_mixup(batch, config, rng);
        case MixupMode::Hard: return hard_mixup(batch, rng);
        case MixupMode::RestrictedHard: return restricted_hard_mixup(batch);
    }
    return batch;
}

} // namespace poq
