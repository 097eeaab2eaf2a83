#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poq/common.hpp"

namespace poq {

constexpr int kGlyphShapes = 4;
constexpr int kGlyphColors = 6;
constexpr int kGlyphAlphabet = kGlyphShapes * kGlyphColors;

enum class Split { Train = 0, Val = 1, Test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

struct DatasetSpec {
    int num_classes = 12;
    int image_size = 32;
    int max_labels = 4;
    long train_size = 5000;
    long val_size = 1000;
    long test_size = 1000;
    std::uint64_t seed = 1;
    double bias_strength = 0.0;                 // pair co-occurrence boost in [0,1]
    std::vector<std::pair<int, int>> bias_pairs;

    void validate() const;
};

struct Sample {
    std::vector<float> image; // image_size × image_size × 3, row-major, [0,1]
    LabelSet labels;
};

struct GlyphPlacement {
    int cls = 0;
    int x0 = 0, y0 = 0, size = 0;
    float brightness = 1.0f;
};

struct SamplePlan {
    LabelSet labels;
    std::vector<GlyphPlacement> glyphs;
    std::uint64_t noise_seed = 0;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<Sample> train, val, test;
};

// class -> (shape, color); distinct for every class in the 24-glyph alphabet
inline std::pair<int, int> glyph_signature(int cls) {
    return {cls % kGlyphShapes, cls / kGlyphShapes};
}

/// Label-set procedure alone (no rendering); exactly the labels make_sample
/// would emit for this (seed, split, index).
LabelSet sample_labels(const DatasetSpec& spec, Split split, long index);

// Glyph layout plus labels; render_sample turns it into pixels.
SamplePlan plan_sample(const DatasetSpec& spec, Split split, long index);
Sample render_sample(const DatasetSpec& spec, const SamplePlan& plan);
Sample make_sample(const DatasetSpec& spec, Split split, long index);

std::vector<Sample> generate_split(const DatasetSpec& spec, Split split, long count);
Dataset generate(const DatasetSpec& spec);

std::vector<long> class_frequencies(const std::vector<Sample>& samples, int num_classes);

/// Closed-form P(b ∈ L | a ∈ L) induced by the sampling procedure for a
/// configured bias pair (a, b), and the matching marginal P(b ∈ L).
double biased_conditional_target(const DatasetSpec& spec, int a, int b);
double marginal_target(const DatasetSpec& spec, int b);

// Container: magic "POQD", version u32 LE, spec block, sample count u64 LE,
// then per sample a u8 label count, u8 class indices, f32 LE pixels.
void save_dataset(const std::string& path, const DatasetSpec& spec,
                  const std::vector<Sample>& samples);
std::pair<DatasetSpec, std::vector<Sample>> load_dataset(const std::string& path);

} // namespace poq
