#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "poq/checkpoint.hpp"
#include "poq/model.hpp"

using namespace poq;
using poqtest::gradcheck;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.model_dim = 8;
    cfg.num_queries = 3;
    cfg.num_classes = 2;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.channels = 6;
    return cfg;
}

template <typename T>
std::vector<T> random_image(const ModelConfig& cfg, Rng& rng) {
    std::vector<T> img(static_cast<std::size_t>(cfg.image_size) * cfg.image_size *
                       cfg.image_channels);
    for (auto& v : img) v = static_cast<T>(rng.uniform(0, 1));
    return img;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("backbone patching arithmetic: 32px image, patch 8 gives a 4x4 map") {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    Model<float> model(cfg, 1);
    Rng rng(2);
    auto fm = model.backbone_forward(random_image<float>(cfg, rng));
    CHECK(fm.h == 4);
    CHECK(fm.w == 4);
    CHECK(fm.c == cfg.channels);
    CHECK(fm.tokens->shape == Shape{16, (std::size_t)cfg.channels});
}

TEST_CASE("zero image with zero projection bias gives a zero feature map") {
    ModelConfig cfg = micro_config();
    Model<float> model(cfg, 1);
    std::vector<float> image(static_cast<std::size_t>(cfg.image_size) * cfg.image_size * 3, 0.0f);
    auto fm = model.backbone_forward(image);
    for (auto v : fm.tokens->value) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("swapping two patches swaps exactly the two corresponding tokens") {
    ModelConfig cfg = micro_config(); // 8px image, patch 4 -> 2x2 grid
    Model<float> model(cfg, 3);
    Rng rng(4);
    auto image = random_image<float>(cfg, rng);

    auto swapped = image;
    const int p = cfg.patch_size, w = cfg.image_size, ch = cfg.image_channels;
    // swap patch (0,0) with patch (1,1)
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
            for (int c = 0; c < ch; ++c)
                std::swap(swapped[(y * w + x) * ch + c],
                          swapped[((p + y) * w + p + x) * ch + c]);

    auto base = model.backbone_forward(image);
    auto perm = model.backbone_forward(swapped);
    const std::size_t C = cfg.channels;
    for (std::size_t t : {std::size_t(1), std::size_t(2)}) // untouched tokens
        for (std::size_t j = 0; j < C; ++j) CHECK(perm.tokens->at(t, j) == base.tokens->at(t, j));
    for (std::size_t j = 0; j < C; ++j) {
        CHECK(perm.tokens->at(0, j) == base.tokens->at(3, j));
        CHECK(perm.tokens->at(3, j) == base.tokens->at(0, j));
    }
}

TEST_CASE("indivisible image size is rejected at construction") {
    ModelConfig cfg = micro_config();
    cfg.image_size = 10;
    CHECK_THROWS_AS(Model<float>(cfg, 1), ConfigError);
}

TEST_CASE("model forward emits O x (c+1) logits in every query mode") {
    for (auto mode : {QueryMode::Primal, QueryMode::AdditiveShared, QueryMode::AdditivePerLayer}) {
        ModelConfig cfg = micro_config();
        cfg.query_mode = mode;
        cfg.num_decoder_layers = 2;
        Model<float> model(cfg, 7);
        Rng rng(8);
        auto logits = model.forward(random_image<float>(cfg, rng));
        CHECK(logits->shape == Shape{(std::size_t)cfg.num_queries,
                                     (std::size_t)cfg.num_classes + 1});
    }
}

TEST_CASE("disabling the cross-attention residual changes the output") {
    ModelConfig cfg = micro_config();
    Model<float> a(cfg, 5);
    cfg.residual_cross_enabled = false;
    Model<float> b(cfg, 5); // same seed, same weights
    Rng rng(6);
    auto image = random_image<float>(cfg, rng);
    auto la = a.forward(image);
    auto lb = b.forward(image);
    bool any_diff = false;
    for (std::size_t i = 0; i < la->value.size(); ++i)
        if (std::abs(la->value[i] - lb->value[i]) > 1e-6f) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("permuting encoder input tokens leaves the head output unchanged") {
    ModelConfig cfg = micro_config();
    cfg.image_size = 8;
    cfg.patch_size = 4; // 4 tokens
    Model<float> model(cfg, 9);
    Rng rng(10);
    auto image = random_image<float>(cfg, rng);

    auto swapped = image;
    const int p = cfg.patch_size, w = cfg.image_size, ch = cfg.image_channels;
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
            for (int c = 0; c < ch; ++c)
                std::swap(swapped[(y * w + x) * ch + c], swapped[(y * w + p + x) * ch + c]);

    auto la = model.forward(image);
    auto lb = model.forward(swapped);
    for (std::size_t i = 0; i < la->value.size(); ++i)
        CHECK(la->value[i] == doctest::Approx(lb->value[i]).epsilon(1e-4));
}

TEST_CASE("permuting primal query rows permutes logits rows identically") {
    ModelConfig cfg = micro_config();
    cfg.num_queries = 4;
    Model<float> model(cfg, 11);
    Rng rng(12);
    auto image = random_image<float>(cfg, rng);
    auto base = model.forward(image);

    std::vector<std::size_t> perm{2, 0, 3, 1};
    auto& q = model.primal_queries;
    auto orig = q->value;
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (int j = 0; j < cfg.model_dim; ++j)
            q->at(i, j) = orig[perm[i] * cfg.model_dim + j];

    auto permuted = model.forward(image);
    const std::size_t cols = cfg.num_classes + 1;
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j)
            CHECK(permuted->at(i, j) == doctest::Approx(base->at(perm[i], j)).epsilon(1e-4));
}

TEST_CASE("per-layer additive queries add exactly (layers-1)*O*D parameters") {
    ModelConfig cfg = micro_config();
    cfg.num_decoder_layers = 3;
    cfg.query_mode = QueryMode::AdditiveShared;
    Model<float> shared(cfg, 1);
    cfg.query_mode = QueryMode::AdditivePerLayer;
    Model<float> per_layer(cfg, 1);
    std::size_t expected =
        static_cast<std::size_t>(cfg.num_decoder_layers - 1) * cfg.num_queries * cfg.model_dim;
    CHECK(per_layer.parameter_count() - shared.parameter_count() == expected);
}

TEST_CASE("full micro model gradcheck stays under 1e-4") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        ModelConfig cfg = micro_config();
        Model<double> model(cfg, seed);
        Rng rng(seed + 50);
        auto image = random_image<double>(cfg, rng);

        const std::size_t O = cfg.num_queries, cols = cfg.num_classes + 1;
        std::vector<double> targets(O * cols, 0.0);
        targets[0 * cols + 1] = 1.0; // query 0 -> class 1
        targets[1 * cols + 2] = 1.0; // query 1 -> empty
        targets[2 * cols + 0] = 1.0; // query 2 -> class 0

        auto build = [&] {
            return cross_entropy_rows(model.forward(image), targets, 1.0 / double(O));
        };
        std::vector<TensorPtr<double>> params;
        for (auto& p : model.parameters()) params.push_back(p.tensor);
        CHECK(gradcheck(build, params) < 1e-4);
    }
}

TEST_CASE("checkpoint round-trip restores bit-identical parameters") {
    ModelConfig cfg = micro_config();
    Model<float> model(cfg, 13);
    auto path = temp_path("poq_test_roundtrip.poqt");
    save_checkpoint(model, path);

    Model<float> other(cfg, 14); // different init
    load_checkpoint(other, path);
    auto a = model.parameters();
    auto b = other.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor->value == b[i].tensor->value);
    std::filesystem::remove(path);
}

TEST_CASE("corrupt magic bytes are reported as bad magic") {
    ModelConfig cfg = micro_config();
    Model<float> model(cfg, 1);
    auto path = temp_path("poq_test_badmagic.poqt");
    save_checkpoint(model, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    try {
        load_checkpoint(model, path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::BadMagic);
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("unsupported version and truncated files are distinct errors") {
    ModelConfig cfg = micro_config();
    Model<float> model(cfg, 1);
    auto path = temp_path("poq_test_version.poqt");
    save_checkpoint(model, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        char bad[4] = {99, 0, 0, 0};
        f.write(bad, 4);
    }
    try {
        load_checkpoint(model, path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::BadVersion);
    }

    save_checkpoint(model, path);
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 17);
    try {
        load_checkpoint(model, path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::Truncated);
    }
    std::filesystem::remove(path);
}

TEST_CASE("loading into a mismatched config names the offending tensor") {
    ModelConfig cfg = micro_config();
    Model<float> model(cfg, 1);
    auto path = temp_path("poq_test_mismatch.poqt");
    save_checkpoint(model, path);

    ModelConfig other_cfg = cfg;
    other_cfg.channels = 12;
    Model<float> other(other_cfg, 1);
    try {
        load_checkpoint(other, path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::TensorMismatch);
        CHECK(std::string(e.what()).find("backbone.patch.weight") != std::string::npos);
    }
    std::filesystem::remove(path);
}
