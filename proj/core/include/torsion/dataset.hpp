#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "torsion/geometry.hpp"
#include "torsion/raster.hpp"

namespace torsion {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum Split : int { kUnsplit = -1, kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(int split);

struct Sample {
    uint64_t id = 0;
    uint64_t base_id = 0;
    int split = kUnsplit;
    double area = 0;
    double target = 0; // reference torsion, copied unchanged to augmented copies
    double angle = 0;  // augmentation lineage
    Vec2 shift{0, 0};
    BinaryImage image;
    Domain domain; // geometry; present for generated sets, empty after load()
};

struct Dataset {
    std::vector<Sample> samples;
    GenConfig gen;
    double h = 0.02;
    int raster_n = 256;
    int copies = 0;
    std::array<double, 3> fractions{0.7, 0.1, 0.2};
    uint64_t split_seed = 0;
    std::string checksum; // set by save()/load()

    std::vector<double> reference_targets() const; // Y over base domains
    const Sample* find(uint64_t id) const;
};

// M base samples: random domain -> reference torsion at mesh size h -> raster
// at resolution N. Pure function of (cfg, h, N); workers only change wall time.
Dataset generate(const GenConfig& cfg, double h, int N, int workers = 1);

// per base sample, `copies` extra samples from random in-box rototranslations
// of the geometry, re-rasterized; targets copied unchanged
Dataset augment(const Dataset& ds, int copies, int workers = 1);

// random split at the base-domain level: augmented copies follow their base
void split_dataset(Dataset& ds, std::array<double, 3> fractions, uint64_t seed);

// directory layout: manifest.csv, config.json, checksum.txt, images/
// returns the whole-set checksum it wrote
std::string save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// recompute the whole-set checksum from the files on disk
std::string dataset_checksum(const std::string& dir);

} // namespace torsion
