#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bdclean {

// Dense row-major float tensor. This is the data-plane type: images,
// persisted embeddings and network weights all travel through it.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::uint32_t> d);

    static Tensor zeros(std::vector<std::uint32_t> d) { return Tensor(std::move(d)); }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return dims.size(); }
    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    // channel/row/col access for 3-d image tensors
    float& at(std::size_t c, std::size_t i, std::size_t j) {
        return data[(c * dims[1] + i) * dims[2] + j];
    }
    float at(std::size_t c, std::size_t i, std::size_t j) const {
        return data[(c * dims[1] + i) * dims[2] + j];
    }
};

std::size_t shape_numel(const std::vector<std::uint32_t>& dims);

// "BDTN" raw tensor file: magic, u32 LE version=1, u8 dtype (0 = f32),
// u8 ndim, ndim x u32 LE dims, row-major LE payload.
void save_bdtn(const std::string& path, const Tensor& t);
Tensor load_bdtn(const std::string& path);

}  // namespace bdclean
