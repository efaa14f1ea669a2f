#include "msda/image_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace msda::img {

namespace {

[[noreturn]] void fail(const std::filesystem::path& file, const std::string& why) {
    throw std::runtime_error(file.string() + ": " + why);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(file, "cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in, std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf out_len = static_cast<uLongf>(out.size());
    const int rc = uncompress(out.data(), &out_len, in.data(), static_cast<uLong>(in.size()));
    if (rc != Z_OK || out_len != expected) {
        throw std::runtime_error("zlib inflate failed (" + std::to_string(rc) + ")");
    }
    return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(bound);
    const int rc = compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6);
    if (rc != Z_OK) throw std::runtime_error("zlib deflate failed (" + std::to_string(rc) + ")");
    out.resize(bound);
    return out;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

GrayImage read_png(const std::filesystem::path& file, const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0) fail(file, "not a PNG file");
    std::size_t pos = 8;
    GrayImage image;
    std::vector<std::uint8_t> idat;
    bool have_header = false;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = be32(&bytes[pos]);
        const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
        if (pos + 12 + len > bytes.size()) fail(file, "truncated PNG chunk");
        const std::uint8_t* data = &bytes[pos + 8];
        if (type == "IHDR") {
            if (len != 13) fail(file, "bad IHDR");
            image.width = static_cast<int>(be32(data));
            image.height = static_cast<int>(be32(data + 4));
            image.bitdepth = data[8];
            const int color_type = data[9];
            if (color_type != 0) fail(file, "non-grayscale PNG (color type " + std::to_string(color_type) + ")");
            if (image.bitdepth != 8 && image.bitdepth != 16) {
                fail(file, "unsupported PNG bit depth " + std::to_string(image.bitdepth));
            }
            if (data[12] != 0) fail(file, "interlaced PNG not supported");
            have_header = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (!have_header || image.width <= 0 || image.height <= 0) fail(file, "missing PNG header");

    const int bpp = image.bitdepth / 8;
    const std::size_t row_bytes = static_cast<std::size_t>(image.width) * bpp;
    const std::size_t raw_size = (row_bytes + 1) * image.height;
    std::vector<std::uint8_t> raw;
    try {
        raw = zlib_inflate(idat, raw_size);
    } catch (const std::exception& e) {
        fail(file, e.what());
    }

    // Undo per-row filtering.
    std::vector<std::uint8_t> prev(row_bytes, 0);
    image.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y) {
        const std::uint8_t filter = raw[(row_bytes + 1) * y];
        std::uint8_t* row = &raw[(row_bytes + 1) * y + 1];
        for (std::size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? row[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
            switch (filter) {
                case 0: break;
                case 1: row[i] = static_cast<std::uint8_t>(row[i] + a); break;
                case 2: row[i] = static_cast<std::uint8_t>(row[i] + b); break;
                case 3: row[i] = static_cast<std::uint8_t>(row[i] + (a + b) / 2); break;
                case 4: row[i] = static_cast<std::uint8_t>(row[i] + paeth(a, b, c)); break;
                default: fail(file, "unknown PNG filter " + std::to_string(filter));
            }
        }
        std::memcpy(prev.data(), row, row_bytes);
        for (int x = 0; x < image.width; ++x) {
            image.pixels[static_cast<std::size_t>(y) * image.width + x] =
                bpp == 1 ? row[x] : static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
        }
    }
    return image;
}

GrayImage read_pgm(const std::filesystem::path& file, const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 2; // past "P5"
    auto next_token = [&]() -> long {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) fail(file, "malformed PGM header");
        return v;
    };
    GrayImage image;
    image.width = static_cast<int>(next_token());
    image.height = static_cast<int>(next_token());
    const long maxval = next_token();
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail(file, "malformed PGM header");
    ++pos;
    if (image.width <= 0 || image.height <= 0 || maxval <= 0 || maxval > 65535) {
        fail(file, "bad PGM dimensions");
    }
    image.bitdepth = maxval < 256 ? 8 : 16;
    const int bpp = image.bitdepth / 8;
    const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
    if (bytes.size() - pos < count * bpp) fail(file, "truncated PGM data");
    image.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        image.pixels[i] = bpp == 1 ? bytes[pos + i]
                                   : static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) |
                                                                bytes[pos + 2 * i + 1]);
    }
    return image;
}

void write_chunk(std::vector<std::uint8_t>& out, const char* type,
                 const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(crc32(0, nullptr, 0), &out[type_pos],
                            static_cast<uInt>(4 + data.size()));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

void write_png(const std::filesystem::path& file, int width, int height, int bitdepth,
               const std::vector<std::uint8_t>& raw_rows) {
    std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(static_cast<std::uint8_t>(bitdepth));
    ihdr.push_back(0); // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", zlib_deflate(raw_rows));
    write_chunk(out, "IEND", {});

    std::ofstream os(file, std::ios::binary);
    if (!os) fail(file, "cannot open for writing");
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) fail(file, "write failed");
}

} // namespace

GrayImage read_gray(const std::filesystem::path& file) {
    const std::vector<std::uint8_t> bytes = read_file(file);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return read_png(file, bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return read_pgm(file, bytes);
    fail(file, "unrecognized image format (expected grayscale PNG or binary PGM)");
}

void write_png_gray8(const std::filesystem::path& file, int width, int height,
                     const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("write_png_gray8: pixel count mismatch");
    }
    std::vector<std::uint8_t> raw;
    raw.reserve((static_cast<std::size_t>(width) + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0); // filter: none
        raw.insert(raw.end(), pixels.begin() + static_cast<std::size_t>(y) * width,
                   pixels.begin() + static_cast<std::size_t>(y + 1) * width);
    }
    write_png(file, width, height, 8, raw);
}

void write_png_gray16(const std::filesystem::path& file, int width, int height,
                      const std::vector<std::uint16_t>& pixels) {
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("write_png_gray16: pixel count mismatch");
    }
    std::vector<std::uint8_t> raw;
    raw.reserve((static_cast<std::size_t>(2 * width) + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < width; ++x) {
            const std::uint16_t v = pixels[static_cast<std::size_t>(y) * width + x];
            raw.push_back(static_cast<std::uint8_t>(v >> 8));
            raw.push_back(static_cast<std::uint8_t>(v & 0xff));
        }
    }
    write_png(file, width, height, 16, raw);
}

} // namespace msda::img
