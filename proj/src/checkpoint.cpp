#include "poq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace poq {

namespace {

constexpr char kMagic[4] = {'P', 'O', 'Q', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint file is truncated");
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

} // namespace

void write_raw_tensors(const std::string& path, const std::vector<RawTensor>& tensors) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.append(t.name);
        put_u32(out, static_cast<std::uint32_t>(t.extents.size()));
        std::uint64_t numel = 1;
        for (auto e : t.extents) {
            put_u64(out, e);
            numel *= e;
        }
        if (numel != t.data.size())
            throw CheckpointError(CheckpointError::Kind::TensorMismatch,
                                  "tensor '" + t.name + "' data does not match its extents");
        for (float v : t.data) put_f32(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "short write to '" + path + "'");
}

std::vector<RawTensor> read_raw_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(std::move(bytes));
    if (r.str(4) != std::string(kMagic, 4))
        throw CheckpointError(CheckpointError::Kind::BadMagic, "bad magic in '" + path + "'");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw CheckpointError(CheckpointError::Kind::BadVersion,
                              "unsupported checkpoint version " + std::to_string(version));
    std::uint32_t count = r.u32();
    std::vector<RawTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        RawTensor t;
        std::uint32_t name_len = r.u32();
        t.name = r.str(name_len);
        std::uint32_t rank = r.u32();
        std::uint64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.extents.push_back(r.u64());
            numel *= t.extents.back();
        }
        t.data.resize(numel);
        for (std::uint64_t k = 0; k < numel; ++k) t.data[k] = r.f32();
        tensors.push_back(std::move(t));
    }
    return tensors;
}

} // namespace poq
