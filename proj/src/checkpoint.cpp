#include "spg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace spg {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.good(), "checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(is.good(), "checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

float get_f32(std::istream& is) {
    uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

} // namespace

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), "checkpoint: cannot open '", path, "' for writing");
    os.write("SPG2", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        require(t.defined(), "checkpoint: undefined tensor '", name, "'");
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int d : t.shape) put_u64(os, static_cast<uint64_t>(d));
        for (float f : t.vec()) put_f32(os, f);
    }
    require(os.good(), "checkpoint: write failure on '", path, "'");
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "checkpoint: cannot open '", path, "'");
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::memcmp(magic, "SPG2", 4) == 0,
            "checkpoint: '", path, "' is not an SPG2 container");
    uint32_t version = get_u32(is);
    require(version == kCheckpointVersion, "checkpoint: unsupported version ",
            version);
    uint32_t count = get_u32(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        require(is.good(), "checkpoint: truncated name");
        uint32_t rank = get_u32(is);
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(get_u64(is)));
        int64_t n = shape_numel(shape);
        std::vector<float> data(static_cast<size_t>(n));
        for (int64_t j = 0; j < n; ++j) data[static_cast<size_t>(j)] = get_f32(is);
        out[name] = Tensor::from(shape, std::move(data));
    }
    return out;
}

} // namespace spg
