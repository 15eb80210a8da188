#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "torsion/geometry.hpp"

namespace torsion {

struct RasterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// N x N bit raster of a domain over Q. Pixel (row 0, col 0) covers the
// lower-left corner; centers sit at (-2 + (j+0.5)*4/N, -2 + (i+0.5)*4/N).
struct BinaryImage {
    int n = 0;
    std::vector<uint8_t> bits; // row-major, bit-packed, ceil(n^2/8) bytes
    // provenance
    uint64_t domain_id = 0;
    double angle = 0;
    Vec2 shift{0, 0};

    bool get(int row, int col) const {
        size_t k = size_t(row) * size_t(n) + size_t(col);
        return (bits[k >> 3] >> (k & 7)) & 1;
    }
    void set(int row, int col, bool v) {
        size_t k = size_t(row) * size_t(n) + size_t(col);
        if (v)
            bits[k >> 3] |= uint8_t(1u << (k & 7));
        else
            bits[k >> 3] &= uint8_t(~(1u << (k & 7)));
    }
    size_t ones() const;
};

struct GrayImage {
    int n = 0;
    std::vector<float> v; // row-major, values in [0,1]
};

// even-odd inside test of every pixel center against all loops
BinaryImage rasterize(const Domain& d, int N);

// area-average (box filter) downscale; exact mean preservation when n | N
GrayImage downscale(const BinaryImage& img, int n);
GrayImage to_gray(const BinaryImage& img);

// (#ones) * (4/N)^2, the pixel-counting estimate of the domain area
double pixel_area_fraction(const BinaryImage& img);

// file formats: TORIMG1 bit-packed, TORIMGF float32, both little-endian
void save_image(const BinaryImage& img, const std::string& path);
BinaryImage load_binary_image(const std::string& path);
void save_image(const GrayImage& img, const std::string& path);
GrayImage load_gray_image(const std::string& path);

} // namespace torsion
