#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poq/model.hpp"

namespace poq {

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, BadMagic, BadVersion, Truncated, TensorMismatch };

    CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct RawTensor {
    std::string name;
    std::vector<std::uint64_t> extents;
    std::vector<float> data;
};

// Binary container: magic "POQT", version u32 LE, tensor count u32 LE, then
// per tensor: name length u32 LE, UTF-8 name, rank u32 LE, extents u64 LE
// each, raw 32-bit floats LE.
void write_raw_tensors(const std::string& path, const std::vector<RawTensor>& tensors);
std::vector<RawTensor> read_raw_tensors(const std::string& path);

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
    std::vector<RawTensor> tensors;
    for (const auto& p : model.parameters()) {
        RawTensor rt;
        rt.name = p.name;
        for (auto e : p.tensor->shape) rt.extents.push_back(e);
        rt.data.reserve(p.tensor->size());
        for (T v : p.tensor->value) rt.data.push_back(static_cast<float>(v));
        tensors.push_back(std::move(rt));
    }
    write_raw_tensors(path, tensors);
}

template <typename T>
void load_checkpoint(Model<T>& model, const std::string& path) {
    auto tensors = read_raw_tensors(path);
    auto params = model.parameters();
    if (tensors.size() != params.size())
        throw CheckpointError(CheckpointError::Kind::TensorMismatch,
                              "checkpoint holds " + std::to_string(tensors.size()) +
                                  " tensors, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& rt = tensors[i];
        auto& p = params[i];
        if (rt.name != p.name)
            throw CheckpointError(CheckpointError::Kind::TensorMismatch,
                                  "checkpoint tensor '" + rt.name + "' does not match expected '" +
                                      p.name + "'");
        Shape shape(rt.extents.begin(), rt.extents.end());
        if (shape != p.tensor->shape)
            throw CheckpointError(CheckpointError::Kind::TensorMismatch,
                                  "shape mismatch for tensor '" + rt.name + "': checkpoint " +
                                      shape_str(shape) + ", model " + shape_str(p.tensor->shape));
        for (std::size_t j = 0; j < rt.data.size(); ++j)
            p.tensor->value[j] = static_cast<T>(rt.data[j]);
    }
}

} // namespace poq
