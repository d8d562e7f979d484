#include "bdclean/tensor.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bdclean {

std::size_t shape_numel(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<std::uint32_t> d) : dims(std::move(d)) {
    data.assign(shape_numel(dims), 0.0f);
}

namespace {

constexpr char kMagic[4] = {'B', 'D', 'T', 'N'};

void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_bdtn(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("bdtn: cannot open for write: " + path);
    os.write(kMagic, 4);
    write_u32le(os, 1u);  // version
    unsigned char dtype = 0, ndim = static_cast<unsigned char>(t.dims.size());
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(&ndim), 1);
    for (auto d : t.dims) write_u32le(os, d);
    static_assert(sizeof(float) == 4);
    // payload little-endian; this code assumes a little-endian host
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!os) throw std::runtime_error("bdtn: write failed: " + path);
}

Tensor load_bdtn(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("bdtn: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bdtn: bad magic in " + path);
    std::uint32_t version = read_u32le(is);
    if (version != 1) throw std::runtime_error("bdtn: unsupported version in " + path);
    unsigned char dtype = 0, ndim = 0;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    is.read(reinterpret_cast<char*>(&ndim), 1);
    if (dtype != 0) throw std::runtime_error("bdtn: unsupported dtype in " + path);
    std::vector<std::uint32_t> dims(ndim);
    for (auto& d : dims) d = read_u32le(is);
    Tensor t(dims);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw std::runtime_error("bdtn: truncated payload in " + path);
    return t;
}

}  // namespace bdclean
