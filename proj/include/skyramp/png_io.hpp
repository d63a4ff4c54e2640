#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace skyramp::io {

// 8-bit grayscale PNG; values clamped from [0,1] on write, scaled back on read.
void write_png_gray(const std::string& path, const std::vector<float>& img, std::size_t h,
                    std::size_t w);
std::vector<float> read_png_gray(const std::string& path, std::size_t& h, std::size_t& w);

// 8-bit RGB PNG read (for ingesting real sky imagery); returns interleaved
// r,g,b planes.
void read_png_rgb(const std::string& path, std::vector<float>& r, std::vector<float>& g,
                  std::vector<float>& b, std::size_t& h, std::size_t& w);

// Quantize to the 8-bit grid used on disk, so in-memory tensors match what a
// write/read roundtrip would produce.
inline float quantize8(float v) {
    float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    int q = int(c * 255.0f + 0.5f);
    return float(q) / 255.0f;
}

} // namespace skyramp::io
