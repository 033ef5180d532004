#include "spg/png.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "spg/common.hpp"

namespace spg {

namespace {

uint32_t crc32_of(const unsigned char* data, size_t len, uint32_t crc = 0) {
    static uint32_t table[256];
    static bool ready = false;
    if (!ready) {
        for (uint32_t n = 0; n < 256; ++n) {
            uint32_t c = n;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[n] = c;
        }
        ready = true;
    }
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i)
        crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

void push_u32(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

void write_chunk(std::ofstream& os, const char type[4],
                 const std::vector<unsigned char>& payload) {
    std::vector<unsigned char> head;
    push_u32(head, static_cast<uint32_t>(payload.size()));
    os.write(reinterpret_cast<const char*>(head.data()), 4);
    os.write(type, 4);
    if (!payload.empty())
        os.write(reinterpret_cast<const char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size()));
    uint32_t crc = crc32_of(reinterpret_cast<const unsigned char*>(type), 4);
    crc = crc32_of(payload.data(), payload.size(), crc);
    std::vector<unsigned char> tail;
    push_u32(tail, crc);
    os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

} // namespace

void write_png_gray(const std::string& path, const std::vector<float>& pixels,
                    int width, int height, bool invert) {
    require(width > 0 && height > 0 &&
            pixels.size() == static_cast<size_t>(width) * height,
            "png: pixel buffer does not match ", width, "x", height);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), "png: cannot open '", path, "' for writing");

    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    os.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr;
    push_u32(ihdr, static_cast<uint32_t>(width));
    push_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(0); // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(os, "IHDR", ihdr);

    // raw scanlines, filter byte 0 per row
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(height) * (static_cast<size_t>(width) + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < width; ++x) {
            float v = std::clamp(pixels[static_cast<size_t>(y) * width + x], 0.0f, 1.0f);
            if (invert) v = 1.0f - v;
            raw.push_back(static_cast<unsigned char>(v * 255.0f + 0.5f));
        }
    }

    // zlib stream with stored (uncompressed) deflate blocks
    std::vector<unsigned char> idat;
    idat.push_back(0x78);
    idat.push_back(0x01);
    size_t off = 0;
    while (off < raw.size()) {
        size_t len = std::min<size_t>(65535, raw.size() - off);
        bool final = off + len == raw.size();
        idat.push_back(final ? 1 : 0);
        idat.push_back(static_cast<unsigned char>(len & 0xFF));
        idat.push_back(static_cast<unsigned char>(len >> 8));
        idat.push_back(static_cast<unsigned char>(~len & 0xFF));
        idat.push_back(static_cast<unsigned char>((~len >> 8) & 0xFF));
        idat.insert(idat.end(), raw.begin() + static_cast<long>(off),
                    raw.begin() + static_cast<long>(off + len));
        off += len;
    }
    uint32_t a = 1, b = 0;
    for (unsigned char c : raw) {
        a = (a + c) % 65521;
        b = (b + a) % 65521;
    }
    push_u32(idat, (b << 16) | a);
    write_chunk(os, "IDAT", idat);
    write_chunk(os, "IEND", {});
    require(os.good(), "png: write failure on '", path, "'");
}

} // namespace spg
