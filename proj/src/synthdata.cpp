#include "poq/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "poq/binio.hpp"

namespace poq {

namespace {

constexpr char kMagic[4] = {'P', 'O', 'Q', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr double kNoiseLevel = 0.015;

// plain RGB base colors; brightness jitter happens per glyph
const float kColors[kGlyphColors][3] = {
    {1.0f, 0.1f, 0.1f}, {0.1f, 1.0f, 0.1f}, {0.15f, 0.3f, 1.0f},
    {1.0f, 1.0f, 0.1f}, {1.0f, 0.15f, 1.0f}, {0.1f, 1.0f, 1.0f},
};

std::uint64_t sample_stream_seed(const DatasetSpec& spec, Split split, long index) {
    return mix_seed(spec.seed, static_cast<std::uint64_t>(split) + 11,
                    static_cast<std::uint64_t>(index));
}

// k distinct classes via partial Fisher-Yates, excluding any already chosen
std::vector<int> draw_distinct(Rng& rng, int count, int num_classes,
                               const std::vector<int>& exclude) {
    std::vector<int> pool;
    pool.reserve(num_classes);
    for (int i = 0; i < num_classes; ++i)
        if (std::find(exclude.begin(), exclude.end(), i) == exclude.end()) pool.push_back(i);
    std::vector<int> out;
    for (int t = 0; t < count; ++t) {
        long j = rng.uniform_int(t, static_cast<long>(pool.size()) - 1);
        std::swap(pool[t], pool[j]);
        out.push_back(pool[t]);
    }
    return out;
}

LabelSet draw_label_set(const DatasetSpec& spec, Rng& rng) {
    int k = static_cast<int>(rng.uniform_int(1, spec.max_labels));
    std::vector<int> classes;
    if (k >= 2 && !spec.bias_pairs.empty()) {
        long pair_idx = rng.uniform_int(0, static_cast<long>(spec.bias_pairs.size()) - 1);
        bool inject = rng.uniform(0.0, 1.0) < spec.bias_strength;
        if (inject) {
            auto [a, b] = spec.bias_pairs[pair_idx];
            classes = {a, b};
            auto rest = draw_distinct(rng, k - 2, spec.num_classes, classes);
            classes.insert(classes.end(), rest.begin(), rest.end());
            return make_label_set(std::move(classes));
        }
    }
    classes = draw_distinct(rng, k, spec.num_classes, {});
    return make_label_set(std::move(classes));
}

int cell_grid(const DatasetSpec& spec) {
    int g = 1;
    while (g * g < spec.max_labels) ++g;
    return g;
}

} // namespace

void DatasetSpec::validate() const {
    if (num_classes < 1 || num_classes > kGlyphAlphabet)
        throw ConfigError("class count " + std::to_string(num_classes) +
                          " exceeds the glyph alphabet of " + std::to_string(kGlyphAlphabet));
    if (max_labels < 1 || max_labels > num_classes)
        throw ConfigError("max labels per image must lie in [1, num classes]");
    if (train_size < 0 || val_size < 0 || test_size < 0)
        throw ConfigError("split sizes must be non-negative");
    int g = cell_grid(*this);
    if (image_size / g < 8)
        throw ConfigError("image size " + std::to_string(image_size) +
                          " too small to place " + std::to_string(max_labels) + " glyphs");
    if (bias_strength < 0.0 || bias_strength > 1.0)
        throw ConfigError("bias strength must lie in [0, 1]");
    for (auto [a, b] : bias_pairs) {
        if (a < 0 || b < 0 || a >= num_classes || b >= num_classes || a == b)
            throw ConfigError("bias pair (" + std::to_string(a) + ", " + std::to_string(b) +
                              ") is out of range");
        for (auto [a2, b2] : bias_pairs) {
            if (a == a2 && b == b2) continue;
            if (a == a2 || a == b2 || b == a2 || b == b2)
                throw ConfigError("bias pairs must be disjoint");
        }
    }
}

LabelSet sample_labels(const DatasetSpec& spec, Split split, long index) {
    Rng rng(sample_stream_seed(spec, split, index));
    return draw_label_set(spec, rng);
}

SamplePlan plan_sample(const DatasetSpec& spec, Split split, long index) {
    Rng rng(sample_stream_seed(spec, split, index));
    SamplePlan plan;
    plan.labels = draw_label_set(spec, rng);

    int g = cell_grid(spec);
    int cell = spec.image_size / g;
    std::vector<int> cells(static_cast<std::size_t>(g) * g);
    std::iota(cells.begin(), cells.end(), 0);
    rng.shuffle(cells.begin(), cells.end());

    for (std::size_t i = 0; i < plan.labels.size(); ++i) {
        GlyphPlacement glyph;
        glyph.cls = plan.labels[i];
        glyph.size = std::max(8, static_cast<int>(std::floor(cell * rng.uniform(0.62, 0.92))));
        int cx = (cells[i] % g) * cell;
        int cy = (cells[i] / g) * cell;
        glyph.x0 = cx + static_cast<int>(rng.uniform_int(0, cell - glyph.size));
        glyph.y0 = cy + static_cast<int>(rng.uniform_int(0, cell - glyph.size));
        glyph.brightness = static_cast<float>(rng.uniform(0.85, 1.0));
        plan.glyphs.push_back(glyph);
    }
    plan.noise_seed = mix_seed(sample_stream_seed(spec, split, index), 77);
    return plan;
}

Sample render_sample(const DatasetSpec& spec, const SamplePlan& plan) {
    const int n = spec.image_size;
    Sample sample;
    sample.labels = plan.labels;
    sample.image.assign(static_cast<std::size_t>(n) * n * 3, 0.0f);

    Rng noise(plan.noise_seed);
    for (auto& v : sample.image) v = static_cast<float>(noise.uniform(0.0, kNoiseLevel));

    for (const auto& glyph : plan.glyphs) {
        auto [shape, color_idx] = glyph_signature(glyph.cls);
        float rgb[3];
        for (int c = 0; c < 3; ++c) rgb[c] = kColors[color_idx][c] * glyph.brightness;
        const int s = glyph.size;
        const double cx = (s - 1) / 2.0, cy = (s - 1) / 2.0;
        const double radius = s / 2.0 - 0.1;
        const double bar = std::max(1.0, s / 3.5);
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                bool on = false;
                switch (shape) {
                    case 0: on = true; break; // square
                    case 1: {
                        double dx = x - cx, dy = y - cy;
                        on = dx * dx + dy * dy <= radius * radius;
                        break;
                    }
                    case 2: { // upward triangle
                        double half_w = (y + 0.5) / s * (s / 2.0);
                        on = std::abs(x - cx) <= half_w;
                        break;
                    }
                    case 3: // diagonal cross
                        on = std::abs(x - y) <= bar / 2.0 ||
                             std::abs(x + y - (s - 1)) <= bar / 2.0;
                        break;
                }
                if (!on) continue;
                std::size_t px = (static_cast<std::size_t>(glyph.y0 + y) * n + glyph.x0 + x) * 3;
                for (int c = 0; c < 3; ++c) sample.image[px + c] = rgb[c];
            }
        }
    }
    for (auto& v : sample.image) v = std::clamp(v, 0.0f, 1.0f);
    return sample;
}

Sample make_sample(const DatasetSpec& spec, Split split, long index) {
    return render_sample(spec, plan_sample(spec, split, index));
}

std::vector<Sample> generate_split(const DatasetSpec& spec, Split split, long count) {
    spec.validate();
    std::vector<Sample> out;
    out.reserve(count);
    for (long i = 0; i < count; ++i) out.push_back(make_sample(spec, split, i));
    return out;
}

Dataset generate(const DatasetSpec& spec) {
    Dataset data;
    data.spec = spec;
    data.train = generate_split(spec, Split::Train, spec.train_size);
    data.val = generate_split(spec, Split::Val, spec.val_size);
    data.test = generate_split(spec, Split::Test, spec.test_size);
    return data;
}

std::vector<long> class_frequencies(const std::vector<Sample>& samples, int num_classes) {
    std::vector<long> counts(num_classes, 0);
    for (const auto& s : samples)
        for (int cls : s.labels) counts.at(cls) += 1;
    return counts;
}

namespace {

// P(x ∈ L | k glyphs) decomposed over the injection event
double inclusion_given_k(const DatasetSpec& spec, int x, int k) {
    double p_uniform = double(k) / spec.num_classes;
    if (k < 2 || spec.bias_pairs.empty()) return p_uniform;
    double s = spec.bias_strength, np = double(spec.bias_pairs.size());
    double total = (1.0 - s) * p_uniform;
    for (auto [a, b] : spec.bias_pairs) {
        double in_pair = (x == a || x == b) ? 1.0 : double(k - 2) / (spec.num_classes - 2);
        total += (s / np) * in_pair;
    }
    return total;
}

double joint_given_k(const DatasetSpec& spec, int a, int b, int k) {
    const int c = spec.num_classes;
    double p_uniform = double(k) * (k - 1) / (double(c) * (c - 1));
    if (k < 2 || spec.bias_pairs.empty()) return k >= 2 ? p_uniform : 0.0;
    double s = spec.bias_strength, np = double(spec.bias_pairs.size());
    double total = (1.0 - s) * p_uniform;
    for (auto [pa, pb] : spec.bias_pairs) {
        int hits = (a == pa || a == pb) + (b == pa || b == pb);
        double p;
        if (hits == 2)
            p = 1.0;
        else if (hits == 1)
            p = double(k - 2) / (c - 2);
        else
            p = double(k - 2) * (k - 3) / (double(c - 2) * (c - 3));
        total += (s / np) * p;
    }
    return total;
}

} // namespace

double biased_conditional_target(const DatasetSpec& spec, int a, int b) {
    spec.validate();
    double joint = 0.0, marginal = 0.0;
    for (int k = 1; k <= spec.max_labels; ++k) {
        joint += joint_given_k(spec, a, b, k);
        marginal += inclusion_given_k(spec, a, k);
    }
    if (marginal <= 0.0) throw DataError("biased_conditional_target: class never appears");
    return joint / marginal;
}

double marginal_target(const DatasetSpec& spec, int b) {
    spec.validate();
    double total = 0.0;
    for (int k = 1; k <= spec.max_labels; ++k) total += inclusion_given_k(spec, b, k);
    return total / spec.max_labels;
}

void save_dataset(const std::string& path, const DatasetSpec& spec,
                  const std::vector<Sample>& samples) {
    std::string out;
    out.append(kMagic, 4);
    binio::put_u32(out, kVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(spec.num_classes));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.image_size));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.max_labels));
    binio::put_u64(out, static_cast<std::uint64_t>(spec.train_size));
    binio::put_u64(out, static_cast<std::uint64_t>(spec.val_size));
    binio::put_u64(out, static_cast<std::uint64_t>(spec.test_size));
    binio::put_u64(out, spec.seed);
    binio::put_f32(out, static_cast<float>(spec.bias_strength));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.bias_pairs.size()));
    for (auto [a, b] : spec.bias_pairs) {
        binio::put_u32(out, static_cast<std::uint32_t>(a));
        binio::put_u32(out, static_cast<std::uint32_t>(b));
    }
    binio::put_u64(out, samples.size());
    const std::size_t numel = static_cast<std::size_t>(spec.image_size) * spec.image_size * 3;
    for (const auto& s : samples) {
        if (s.image.size() != numel)
            throw DataError("save_dataset: sample image size does not match the spec");
        binio::put_u8(out, static_cast<std::uint8_t>(s.labels.size()));
        for (int cls : s.labels) binio::put_u8(out, static_cast<std::uint8_t>(cls));
        for (float v : s.image) binio::put_f32(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to '" + path + "'");
}

std::pair<DatasetSpec, std::vector<Sample>> load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open dataset '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    binio::Reader r(std::move(bytes),
                    [&path] { throw DataError("dataset '" + path + "' is truncated"); });
    if (r.str(4) != std::string(kMagic, 4))
        throw DataError("bad magic in dataset '" + path + "'");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError("unsupported dataset version " + std::to_string(version));

    DatasetSpec spec;
    spec.num_classes = static_cast<int>(r.u32());
    spec.image_size = static_cast<int>(r.u32());
    spec.max_labels = static_cast<int>(r.u32());
    spec.train_size = static_cast<long>(r.u64());
    spec.val_size = static_cast<long>(r.u64());
    spec.test_size = static_cast<long>(r.u64());
    spec.seed = r.u64();
    spec.bias_strength = r.f32();
    std::uint32_t npairs = r.u32();
    for (std::uint32_t i = 0; i < npairs; ++i) {
        int a = static_cast<int>(r.u32());
        int b = static_cast<int>(r.u32());
        spec.bias_pairs.emplace_back(a, b);
    }

    std::uint64_t count = r.u64();
    const std::size_t numel = static_cast<std::size_t>(spec.image_size) * spec.image_size * 3;
    std::vector<Sample> samples;
    samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Sample s;
        std::uint8_t nlabels = r.u8();
        for (std::uint8_t k = 0; k < nlabels; ++k) s.labels.push_back(r.u8());
        s.labels = make_label_set(std::move(s.labels));
        s.image.resize(numel);
        for (std::size_t k = 0; k < numel; ++k) s.image[k] = r.f32();
        samples.push_back(std::move(s));
    }
    return {spec, std::move(samples)};
}

} // namespace poq
