#include "torsion/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "torsion/io_util.hpp"

namespace torsion {

size_t BinaryImage::ones() const {
    size_t total = 0;
    for (size_t k = 0, npix = size_t(n) * size_t(n); k < npix; ++k)
        total += (bits[k >> 3] >> (k & 7)) & 1;
    return total;
}

BinaryImage rasterize(const Domain& d, int N) {
    if (N < 8) throw RasterError("raster resolution must be at least 8");
    BinaryImage img;
    img.n = N;
    img.bits.assign((size_t(N) * size_t(N) + 7) / 8, 0);
    img.domain_id = d.id;

    const double step = 2.0 * kBoxHalf / N;
    // one scanline at a time: crossings of all boundary segments with the
    // horizontal line through the pixel centers, parity-filled
    std::vector<double> xs;
    for (int row = 0; row < N; ++row) {
        double y = -kBoxHalf + (row + 0.5) * step;
        xs.clear();
        for (const auto& loop : d.loops) {
            const auto& p = loop.pts;
            for (size_t i = 0, m = p.size(); i < m; ++i) {
                Vec2 a = p[i], b = p[(i + 1) % m];
                if ((a.y > y) != (b.y > y))
                    xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(xs.begin(), xs.end());
        // fill: pixels whose center lies strictly left of an odd number of crossings
        size_t k = 0;
        for (int col = 0; col < N; ++col) {
            double x = -kBoxHalf + (col + 0.5) * step;
            while (k < xs.size() && xs[k] <= x) ++k;
            if ((xs.size() - k) % 2 == 1) img.set(row, col, true);
        }
    }
    return img;
}

GrayImage downscale(const BinaryImage& img, int n) {
    if (n <= 0) throw RasterError("target resolution must be positive");
    if (n > img.n) throw RasterError("downscale cannot upscale (" + std::to_string(img.n) +
                                     " -> " + std::to_string(n) + ")");
    GrayImage out;
    out.n = n;
    out.v.assign(size_t(n) * size_t(n), 0.0f);
    if (img.n % n == 0) {
        int block = img.n / n;
        double inv = 1.0 / (double(block) * double(block));
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                long sum = 0;
                for (int i = 0; i < block; ++i)
                    for (int j = 0; j < block; ++j) sum += img.get(r * block + i, c * block + j);
                out.v[size_t(r) * n + c] = float(sum * inv);
            }
        return out;
    }
    // fractional box filter: each output pixel averages the source pixels it
    // overlaps, weighted by overlap length per axis
    double ratio = double(img.n) / n;
    std::vector<std::pair<int, double>> cover; // reused per axis run
    auto axis_cover = [&](int out_i) {
        cover.clear();
        double lo = out_i * ratio, hi = (out_i + 1) * ratio;
        for (int s = int(std::floor(lo)); s < int(std::ceil(hi)); ++s) {
            double w = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
            if (w > 0) cover.emplace_back(s, w);
        }
        return cover;
    };
    std::vector<std::vector<std::pair<int, double>>> row_cover(static_cast<size_t>(n));
    std::vector<std::vector<std::pair<int, double>>> col_cover(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) row_cover[size_t(i)] = axis_cover(i);
    for (int j = 0; j < n; ++j) col_cover[size_t(j)] = axis_cover(j);
    double cell = ratio * ratio;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            double sum = 0;
            for (const auto& [sr, wr] : row_cover[size_t(r)])
                for (const auto& [sc, wc] : col_cover[size_t(c)])
                    if (img.get(sr, sc)) sum += wr * wc;
            out.v[size_t(r) * n + c] = float(sum / cell);
        }
    return out;
}

GrayImage to_gray(const BinaryImage& img) {
    GrayImage out;
    out.n = img.n;
    out.v.resize(size_t(img.n) * size_t(img.n));
    for (int r = 0; r < img.n; ++r)
        for (int c = 0; c < img.n; ++c) out.v[size_t(r) * img.n + c] = img.get(r, c) ? 1.f : 0.f;
    return out;
}

double pixel_area_fraction(const BinaryImage& img) {
    double px = 2.0 * kBoxHalf / img.n;
    return double(img.ones()) * px * px;
}

static constexpr char kBinMagic[8] = {'T', 'O', 'R', 'I', 'M', 'G', '1', '\0'};
static constexpr char kGrayMagic[8] = {'T', 'O', 'R', 'I', 'M', 'G', 'F', '\0'};

void save_image(const BinaryImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kBinMagic, 7);
    write_u32(os, uint32_t(img.n));
    os.write(reinterpret_cast<const char*>(img.bits.data()), std::streamsize(img.bits.size()));
    if (!os) throw IoError("write failed: " + path);
}

BinaryImage load_binary_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[7];
    if (!is.read(magic, 7) || std::memcmp(magic, kBinMagic, 7) != 0)
        throw IoError(path + ": not a TORIMG1 image");
    BinaryImage img;
    img.n = int(read_u32(is));
    if (img.n < 1 || img.n > 1 << 16) throw IoError(path + ": implausible image size");
    img.bits.resize((size_t(img.n) * size_t(img.n) + 7) / 8);
    if (!is.read(reinterpret_cast<char*>(img.bits.data()), std::streamsize(img.bits.size())))
        throw IoError(path + ": truncated image data");
    return img;
}

void save_image(const GrayImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kGrayMagic, 7);
    write_u32(os, uint32_t(img.n));
    os.write(reinterpret_cast<const char*>(img.v.data()), std::streamsize(img.v.size() * 4));
    if (!os) throw IoError("write failed: " + path);
}

GrayImage load_gray_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[7];
    if (!is.read(magic, 7) || std::memcmp(magic, kGrayMagic, 7) != 0)
        throw IoError(path + ": not a TORIMGF image");
    GrayImage img;
    img.n = int(read_u32(is));
    if (img.n < 1 || img.n > 1 << 16) throw IoError(path + ": implausible image size");
    img.v.resize(size_t(img.n) * size_t(img.n));
    if (!is.read(reinterpret_cast<char*>(img.v.data()), std::streamsize(img.v.size() * 4)))
        throw IoError(path + ": truncated image data");
    return img;
}

} // namespace torsion
