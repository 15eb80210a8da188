#include "torsion/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "torsion/fem.hpp"
#include "torsion/io_util.hpp"
#include "torsion/oracle.hpp"
#include "torsion/rng.hpp"

namespace fs = std::filesystem;

namespace torsion {

const char* split_name(int split) {
    switch (split) {
        case kTrain: return "Tr";
        case kVal: return "Val";
        case kTest: return "Te";
        default: return "-";
    }
}

std::vector<double> Dataset::reference_targets() const {
    std::vector<double> y;
    for (const auto& s : samples)
        if (s.id == s.base_id) y.push_back(s.target);
    return y;
}

const Sample* Dataset::find(uint64_t id) const {
    for (const auto& s : samples)
        if (s.id == id) return &s;
    return nullptr;
}

namespace {

void parallel_indices(int count, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    std::vector<std::string> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
            } catch (const std::exception& e) {
                errors[size_t(w)] = e.what();
            }
        });
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (!e.empty()) throw DatasetError(e);
}

constexpr int kMaxRedraws = 6;

Sample make_base_sample(const GenConfig& cfg, int index, double h, int N) {
    for (uint64_t salt = 0; salt < kMaxRedraws; ++salt) {
        Domain d = random_domain(cfg, index, salt);
        FemSolution sol;
        try {
            sol = compute_torsion(d, h);
        } catch (const std::exception& e) {
            std::cerr << "warning: domain " << index << " (salt " << salt
                      << ") failed to solve, redrawing: " << e.what() << '\n';
            continue;
        }
        double a = sol.domain_area;
        double t = sol.torsion_value;
        if (!(t > 0) || t > saint_venant_bound(a) * 1.01 || !std::isfinite(t)) {
            std::cerr << "warning: domain " << index << " (salt " << salt
                      << ") violated the Saint-Venant gate, redrawing\n";
            continue;
        }
        Sample s;
        s.id = uint64_t(index);
        s.base_id = uint64_t(index);
        s.area = a;
        s.target = t;
        s.image = rasterize(d, N);
        s.image.domain_id = uint64_t(index);
        s.domain = std::move(d);
        return s;
    }
    throw DatasetError("domain " + std::to_string(index) + " failed after " +
                       std::to_string(kMaxRedraws) + " redraws");
}

} // namespace

Dataset generate(const GenConfig& cfg, double h, int N, int workers) {
    cfg.validate();
    if (h <= 0) throw DatasetError("mesh size must be positive");
    if (N < 8) throw DatasetError("raster resolution must be at least 8");
    Dataset ds;
    ds.gen = cfg;
    ds.h = h;
    ds.raster_n = N;
    ds.samples.resize(size_t(cfg.count));
    parallel_indices(cfg.count, workers,
                     [&](int i) { ds.samples[size_t(i)] = make_base_sample(cfg, i, h, N); });
    return ds;
}

Dataset augment(const Dataset& ds, int copies, int workers) {
    if (copies < 0) throw DatasetError("copies must be nonnegative");
    Dataset out = ds;
    out.copies = copies;
    if (copies == 0) return out;
    for (const auto& s : ds.samples)
        if (s.domain.loops.empty())
            throw DatasetError("augment needs domain geometry; augment before save");

    const size_t base_count = ds.samples.size();
    out.samples.resize(base_count * size_t(1 + copies));
    parallel_indices(int(base_count) * copies, workers, [&](int job) {
        const int bi = job / copies;
        const int c = job % copies + 1;
        const Sample& base = ds.samples[size_t(bi)];
        Rng rng(substream_seed(ds.gen.seed ^ 0xA116ull, (base.base_id << 16) | uint64_t(c)));
        Vec2 ctr = centroid(base.domain);

        double angle = 0;
        Vec2 shift{0, 0};
        bool placed = false;
        for (int tries = 0; tries < 32 && !placed; ++tries) {
            double a = rng.uniform(0, 2 * M_PI);
            double ca = std::cos(a), sa = std::sin(a);
            double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
            for (const auto& loop : base.domain.loops)
                for (const auto& p : loop.pts) {
                    Vec2 q = p - ctr;
                    Vec2 r{ca * q.x - sa * q.y + ctr.x, sa * q.x + ca * q.y + ctr.y};
                    xmin = std::min(xmin, r.x);
                    xmax = std::max(xmax, r.x);
                    ymin = std::min(ymin, r.y);
                    ymax = std::max(ymax, r.y);
                }
            const double margin = 1e-9;
            double sx_lo = -kBoxHalf - xmin + margin, sx_hi = kBoxHalf - xmax - margin;
            double sy_lo = -kBoxHalf - ymin + margin, sy_hi = kBoxHalf - ymax - margin;
            if (sx_lo > sx_hi || sy_lo > sy_hi) continue; // rotation does not fit, redraw
            double sx = rng.uniform(sx_lo, sx_hi);
            double sy = rng.uniform(sy_lo, sy_hi);
            angle = a;
            // rotation is about the centroid: fold it into the origin-based form
            shift = Vec2{ctr.x - (ca * ctr.x - sa * ctr.y) + sx,
                         ctr.y - (sa * ctr.x + ca * ctr.y) + sy};
            placed = true;
        }

        Sample copy;
        copy.base_id = base.base_id;
        copy.id = uint64_t(base_count) + base.base_id * uint64_t(copies) + uint64_t(c - 1);
        copy.area = base.area;
        copy.target = base.target; // rototranslation invariance
        copy.angle = angle;
        copy.shift = shift;
        copy.domain = placed ? transform(base.domain, angle, shift) : base.domain;
        copy.image = rasterize(copy.domain, ds.raster_n);
        copy.image.domain_id = copy.id;
        copy.image.angle = angle;
        copy.image.shift = shift;
        out.samples[base_count + size_t(bi) * size_t(copies) + size_t(c - 1)] = std::move(copy);
    });
    return out;
}

void split_dataset(Dataset& ds, std::array<double, 3> fractions, uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0)
        throw DatasetError("split fractions must be nonnegative and sum to 1");
    std::vector<uint64_t> bases;
    for (const auto& s : ds.samples)
        if (s.id == s.base_id) bases.push_back(s.base_id);
    std::sort(bases.begin(), bases.end());
    Rng rng(substream_seed(seed, 0x59117ull));
    for (size_t i = bases.size(); i-- > 1;)
        std::swap(bases[i], bases[size_t(rng.uniform_int(0, int(i)))]);

    const size_t B = bases.size();
    size_t n_tr = size_t(std::lround(fractions[0] * double(B)));
    size_t n_val = size_t(std::lround(fractions[1] * double(B)));
    n_tr = std::min(n_tr, B);
    n_val = std::min(n_val, B - n_tr);

    std::unordered_map<uint64_t, int> by_base;
    for (size_t i = 0; i < B; ++i)
        by_base[bases[i]] = i < n_tr ? kTrain : (i < n_tr + n_val ? kVal : kTest);
    for (auto& s : ds.samples) s.split = by_base.at(s.base_id);
    ds.fractions = fractions;
    ds.split_seed = seed;
}

// --- persistence -------------------------------------------------------------

namespace {

std::string image_file_name(uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/img_%06llu.bin", (unsigned long long)id);
    return buf;
}

std::string manifest_text(const Dataset& ds) {
    std::ostringstream os;
    os << "id,base_id,split,area,target,image_file,angle,shift_x,shift_y\n";
    for (const auto& s : ds.samples)
        os << s.id << ',' << s.base_id << ',' << split_name(s.split) << ',' << fmt_full(s.area)
           << ',' << fmt_full(s.target) << ',' << image_file_name(s.id) << ','
           << fmt_full(s.angle) << ',' << fmt_full(s.shift.x) << ',' << fmt_full(s.shift.y)
           << '\n';
    return os.str();
}

std::string config_text(const Dataset& ds) {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["seed"] = ds.gen.seed;
    j["count"] = ds.gen.count;
    j["min_vertices"] = ds.gen.min_vertices;
    j["max_vertices"] = ds.gen.max_vertices;
    j["spline_prob"] = ds.gen.spline_prob;
    j["h"] = ds.h;
    j["raster_n"] = ds.raster_n;
    j["copies"] = ds.copies;
    j["fractions"] = ds.fractions;
    j["split_seed"] = ds.split_seed;
    return j.dump(2) + "\n";
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::string checksum_of(const std::string& config, const std::string& manifest,
                        const std::vector<std::string>& image_paths) {
    Crc32 crc;
    crc.update(config.data(), config.size());
    crc.update(manifest.data(), manifest.size());
    for (const auto& p : image_paths) {
        std::string bytes = file_bytes(p);
        crc.update(bytes.data(), bytes.size());
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", crc.value());
    return buf;
}

} // namespace

std::string save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    std::vector<std::string> image_paths;
    for (const auto& s : ds.samples) {
        std::string rel = image_file_name(s.id);
        std::string path = (fs::path(dir) / rel).string();
        save_image(s.image, path);
        image_paths.push_back(path);
    }
    std::string manifest = manifest_text(ds);
    std::string config = config_text(ds);
    {
        std::ofstream os(fs::path(dir) / "manifest.csv", std::ios::binary);
        os << manifest;
    }
    {
        std::ofstream os(fs::path(dir) / "config.json", std::ios::binary);
        os << config;
    }
    std::string sum = checksum_of(config, manifest, image_paths);
    {
        std::ofstream os(fs::path(dir) / "checksum.txt", std::ios::binary);
        os << "crc32 " << sum << "\n";
    }
    return sum;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    std::string config = file_bytes((fs::path(dir) / "config.json").string());
    nlohmann::json j = nlohmann::json::parse(config);
    if (j.value("format_version", -1) != 1)
        throw DatasetError(dir + ": unsupported dataset format version");
    ds.gen.seed = j["seed"].get<uint64_t>();
    ds.gen.count = j["count"].get<int>();
    ds.gen.min_vertices = j["min_vertices"].get<int>();
    ds.gen.max_vertices = j["max_vertices"].get<int>();
    ds.gen.spline_prob = j["spline_prob"].get<double>();
    ds.h = j["h"].get<double>();
    ds.raster_n = j["raster_n"].get<int>();
    ds.copies = j["copies"].get<int>();
    auto fr = j["fractions"];
    ds.fractions = {fr[0].get<double>(), fr[1].get<double>(), fr[2].get<double>()};
    ds.split_seed = j["split_seed"].get<uint64_t>();

    std::string manifest = file_bytes((fs::path(dir) / "manifest.csv").string());
    std::istringstream ms(manifest);
    std::string line;
    std::getline(ms, line); // header
    if (line != "id,base_id,split,area,target,image_file,angle,shift_x,shift_y")
        throw DatasetError(dir + ": unrecognized manifest header");
    std::vector<std::string> image_paths;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 9) throw DatasetError(dir + ": malformed manifest row");
        Sample s;
        s.id = std::stoull(f[0]);
        s.base_id = std::stoull(f[1]);
        s.split = f[2] == "Tr" ? kTrain : f[2] == "Val" ? kVal : f[2] == "Te" ? kTest : kUnsplit;
        s.area = std::stod(f[3]);
        s.target = std::stod(f[4]);
        std::string path = (fs::path(dir) / f[5]).string();
        s.image = load_binary_image(path);
        image_paths.push_back(path);
        s.angle = std::stod(f[6]);
        s.shift = {std::stod(f[7]), std::stod(f[8])};
        ds.samples.push_back(std::move(s));
    }

    std::string sumfile = file_bytes((fs::path(dir) / "checksum.txt").string());
    std::istringstream ss(sumfile);
    std::string tag, stored;
    ss >> tag >> stored;
    std::string computed = checksum_of(config, manifest, image_paths);
    if (tag != "crc32" || stored != computed)
        throw DatasetError(dir + ": checksum mismatch, dataset is corrupt");
    ds.checksum = computed;
    return ds;
}

std::string dataset_checksum(const std::string& dir) {
    std::string config = file_bytes((fs::path(dir) / "config.json").string());
    std::string manifest = file_bytes((fs::path(dir) / "manifest.csv").string());
    std::istringstream ms(manifest);
    std::string line;
    std::getline(ms, line);
    std::vector<std::string> image_paths;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() >= 6) image_paths.push_back((fs::path(dir) / f[5]).string());
    }
    return checksum_of(config, manifest, image_paths);
}

} // namespace torsion
