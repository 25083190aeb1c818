#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "wstereo/errors.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// Disparity field on the left-image grid. valid is 0/1; invalid pixels are
// excluded from every metric.
struct DisparityMap {
    Tensor<float> values; // [H,W], px
    Tensor<float> valid;  // [H,W], 1 = valid

    int height() const { return values.dim(0); }
    int width() const { return values.dim(1); }
};

inline DisparityMap make_disparity(int h, int w) {
    return {Tensor<float>::zeros({h, w}), Tensor<float>::full({h, w}, 1.0f)};
}

namespace ioutil {

inline bool host_little_endian() {
    const std::uint16_t v = 1;
    return *reinterpret_cast<const unsigned char*>(&v) == 1;
}

inline void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot open for write: " + path);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw FormatError("write failed: " + path);
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw FormatError("rename failed: " + path);
}

inline std::string read_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// PNM-style token: skips whitespace and '#' comments.
inline std::string next_token(const std::string& buf, size_t& pos) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    const size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw FormatError("unexpected end of header");
    return buf.substr(start, pos - start);
}

} // namespace ioutil

// ---- PFM (Middlebury float map, rows stored bottom-up) ----

inline void write_pfm(const std::string& path, const DisparityMap& map) {
    const int h = map.height(), w = map.width();
    std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
    const float nanv = std::numeric_limits<float>::quiet_NaN();
    for (int row = h - 1; row >= 0; --row)
        for (int col = 0; col < w; ++col) {
            float v = map.valid.data()[static_cast<long>(row) * w + col] > 0.5f
                          ? map.values.data()[static_cast<long>(row) * w + col]
                          : nanv;
            char bytes[4];
            std::memcpy(bytes, &v, 4);
            if (!ioutil::host_little_endian()) std::swap(bytes[0], bytes[3]), std::swap(bytes[1], bytes[2]);
            out.append(bytes, 4);
        }
    ioutil::atomic_write(path, out);
}

inline DisparityMap read_pfm(const std::string& path) {
    const std::string buf = ioutil::read_all(path);
    size_t pos = 0;
    const std::string magic = ioutil::next_token(buf, pos);
    if (magic == "PF") throw FormatError("color PFM not accepted for disparity: " + path);
    if (magic != "Pf") throw FormatError("not a PFM file: " + path);
    const int w = std::stoi(ioutil::next_token(buf, pos));
    const int h = std::stoi(ioutil::next_token(buf, pos));
    const double scale = std::stod(ioutil::next_token(buf, pos));
    if (w <= 0 || h <= 0 || scale == 0) throw FormatError("bad PFM header: " + path);
    const bool file_little = scale < 0;
    ++pos; // single whitespace after scale
    if (buf.size() - pos < static_cast<size_t>(4L * w * h))
        throw FormatError("truncated PFM payload: " + path);
    DisparityMap map = make_disparity(h, w);
    auto& vals = map.values.mutable_data();
    auto& valid = map.valid.mutable_data();
    for (int row = h - 1; row >= 0; --row)
        for (int col = 0; col < w; ++col) {
            char bytes[4];
            std::memcpy(bytes, buf.data() + pos, 4);
            pos += 4;
            if (file_little != ioutil::host_little_endian())
                std::swap(bytes[0], bytes[3]), std::swap(bytes[1], bytes[2]);
            float v;
            std::memcpy(&v, bytes, 4);
            const long i = static_cast<long>(row) * w + col;
            if (std::isnan(v)) {
                vals[i] = 0.0f;
                valid[i] = 0.0f;
            } else {
                vals[i] = v;
                valid[i] = 1.0f;
            }
        }
    return map;
}

// ---- 16-bit PNG (KITTI convention: stored = round(256*d), 0 = invalid) ----

inline void write_png16(const std::string& path, const DisparityMap& map) {
    const int h = map.height(), w = map.width();
    const std::string tmp = path + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw FormatError("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw FormatError("libpng write error: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const long i = static_cast<long>(y) * w + x;
            std::uint16_t stored = 0;
            if (map.valid.data()[i] > 0.5f) {
                // Disparities below 1/512 px quantize to 0 and read back invalid,
                // which is inherent to the encoding.
                const double q = std::round(256.0 * map.values.data()[i]);
                stored = static_cast<std::uint16_t>(std::min(65535.0, std::max(0.0, q)));
            }
            row[2 * x] = static_cast<std::uint8_t>(stored >> 8); // PNG is big-endian
            row[2 * x + 1] = static_cast<std::uint8_t>(stored & 0xFF);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw FormatError("rename failed: " + path);
}

inline DisparityMap read_png16(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw FormatError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw FormatError("libpng read error: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw FormatError("expected 16-bit grayscale PNG: " + path);
    }
    DisparityMap map = make_disparity(h, w);
    auto& vals = map.values.mutable_data();
    auto& valid = map.valid.mutable_data();
    std::vector<std::uint8_t> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            const std::uint16_t stored =
                static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
            const long i = static_cast<long>(y) * w + x;
            if (stored == 0) {
                vals[i] = 0.0f;
                valid[i] = 0.0f;
            } else {
                vals[i] = static_cast<float>(stored) / 256.0f;
                valid[i] = 1.0f;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return map;
}

// ---- PGM / PPM (binary P5 / P6, maxval 255) ----
// Images are [1,C,H,W] tensors with values in 0..255.

inline void write_pnm(const std::string& path, const Tensor<float>& img) {
    if (img.ndim() != 4 || img.dim(0) != 1 || (img.dim(1) != 1 && img.dim(1) != 3))
        throw FormatError("write_pnm: image must be [1,1,H,W] or [1,3,H,W]");
    const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
    std::string out = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " +
                      std::to_string(H) + "\n255\n";
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                float v = img.at4(0, c, y, x);
                v = std::min(255.0f, std::max(0.0f, std::round(v)));
                out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
            }
    ioutil::atomic_write(path, out);
}

inline Tensor<float> read_pnm(const std::string& path) {
    const std::string buf = ioutil::read_all(path);
    size_t pos = 0;
    const std::string magic = ioutil::next_token(buf, pos);
    if (magic != "P5" && magic != "P6") throw FormatError("not a binary PGM/PPM: " + path);
    const int C = magic == "P5" ? 1 : 3;
    const int w = std::stoi(ioutil::next_token(buf, pos));
    const int h = std::stoi(ioutil::next_token(buf, pos));
    const int maxval = std::stoi(ioutil::next_token(buf, pos));
    if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("unsupported PNM header: " + path);
    ++pos; // single whitespace before payload
    if (buf.size() - pos < static_cast<size_t>(1L * w * h * C))
        throw FormatError("truncated PNM payload: " + path);
    Tensor<float> img = Tensor<float>::zeros({1, C, h, w});
    auto& data = img.mutable_data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < C; ++c)
                data[(static_cast<long>(c) * h + y) * w + x] =
                    static_cast<float>(static_cast<unsigned char>(buf[pos++]));
    return img;
}

} // namespace ws
