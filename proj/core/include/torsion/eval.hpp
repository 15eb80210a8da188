#pragma once

#include <optional>
#include <string>
#include <vector>

#include "torsion/dataset.hpp"
#include "torsion/oracle.hpp"
#include "torsion/surrogate.hpp"

namespace torsion {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// torsion-magnitude bands: LV T > 0.1, SV 0.01 < T <= 0.1, NV T <= 0.01
enum class Band { LV, SV, NV };
Band band_of(double t);
const char* band_name(Band b);

double mse(const std::vector<double>& preds, const std::vector<double>& targets);
double loss_with_penalty(const CnnModel<float>& model, const std::vector<double>& preds,
                         const std::vector<double>& targets, double lambda);

// mean absolute percentage error over samples whose target lies in the band;
// empty band yields nullopt (reported as an explicit marker, never zero)
std::optional<double> mape(const std::vector<double>& preds, const std::vector<double>& targets,
                           Band band);

PropertyReport saint_venant_check(const std::vector<double>& preds,
                                  const std::vector<double>& areas, double tol = 0.02);

// domain -> raster at raster_n -> box filter to the model input -> forward
struct Predictor {
    const CnnModel<float>* model = nullptr;
    int raster_n = 256;

    double operator()(const Domain& d) const;
    double predict(const BinaryImage& img) const;
    double predict(const GrayImage& img) const;
};

struct SweepTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows; // NaN marks an empty cell
    std::vector<std::pair<std::string, double>> stats;
};

SweepTable annulus_sweep(const Predictor& p, const std::vector<double>& r_values);

// concentric/eccentric rings, FEM reference per offset (no closed form)
SweepTable eccentric_sweep(const Predictor& p, const std::vector<double>& offsets,
                           double r_in = 0.3, double fem_h = 0.02);

SweepTable dilation_sweep(const Predictor& p, const Domain& d,
                          const std::vector<double>& t_values, double fem_h = 0.02);

struct AdditivityCase {
    Domain a, b;
    std::optional<double> oracle_sum; // closed form when both parts have one
};
SweepTable additivity_sweep(const Predictor& p, const std::vector<AdditivityCase>& cases);

// random simple pentagons plus regular pentagons at several scales, checked
// against the regular-pentagon line c5 * A^2
SweepTable pentagon_sweep(const Predictor& p, int n_random, uint64_t seed, double c5,
                          double fem_h = 0.03, double tol = 0.02);

// simple 5-vertex polygon in Q, pure function of (seed, index)
Domain random_pentagon(uint64_t seed, int index);

struct SplitMetrics {
    int count = 0;
    double loss = 0, mse = 0;
    std::optional<double> mape_lv, mape_sv;
    int nv_count = 0;
    double sv_violation_rate = 0;
};

struct EvalReport {
    std::string checkpoint_id;   // descriptor checksum of the model
    std::string dataset_fingerprint;
    double lambda = 0;
    SplitMetrics per_split[3];
    std::vector<SweepTable> sweeps;
};

// metrics of one dataset split under a model (predictions at the model input size)
SplitMetrics evaluate_split(const CnnModel<float>& model, const Dataset& ds, int split,
                            double lambda, int workers = 1);

// report.json plus one sweep_<name>.csv per sweep
void write_report(const EvalReport& report, const std::string& dir);

// dataset split -> network inputs (targets as float, box-filtered images)
struct SplitTensors {
    std::vector<Tensor<float>> x;
    std::vector<float> y;
    std::vector<double> areas;
};
SplitTensors split_tensors(const Dataset& ds, int split, int input_n);

} // namespace torsion
