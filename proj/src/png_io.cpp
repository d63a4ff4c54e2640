#include "skyramp/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace skyramp::io {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error(path + ": " + what);
}

} // namespace

void write_png_gray(const std::string& path, const std::vector<float>& img, std::size_t h,
                    std::size_t w) {
    if (img.size() != h * w) fail(path, "image size does not match dimensions");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(path, "cannot open for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(path, "libpng write error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c)
            row[c] = png_byte(quantize8(img[r * w + c]) * 255.0f + 0.5f);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<float> read_png_gray(const std::string& path, std::size_t& h, std::size_t& w) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(path, "cannot open for reading");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "libpng read error");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1, -1);
    png_read_update_info(png, info);

    std::vector<float> img(h * w);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (std::size_t r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t c = 0; c < w; ++c) img[r * w + c] = float(row[c]) / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void read_png_rgb(const std::string& path, std::vector<float>& r, std::vector<float>& g,
                  std::vector<float>& b, std::size_t& h, std::size_t& w) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(path, "cannot open for reading");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "libpng read error");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (!(png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    r.assign(h * w, 0.f);
    g.assign(h * w, 0.f);
    b.assign(h * w, 0.f);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (std::size_t rr = 0; rr < h; ++rr) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t c = 0; c < w; ++c) {
            r[rr * w + c] = float(row[c * 3]) / 255.0f;
            g[rr * w + c] = float(row[c * 3 + 1]) / 255.0f;
            b[rr * w + c] = float(row[c * 3 + 2]) / 255.0f;
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
}

} // namespace skyramp::io
