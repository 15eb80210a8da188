#include "torsion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "torsion/fem.hpp"
#include "torsion/io_util.hpp"

namespace fs = std::filesystem;

namespace torsion {

static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Band band_of(double t) {
    if (t > 0.1) return Band::LV;
    if (t > 0.01) return Band::SV;
    return Band::NV;
}

const char* band_name(Band b) {
    switch (b) {
        case Band::LV: return "LV";
        case Band::SV: return "SV";
        default: return "NV";
    }
}

double mse(const std::vector<double>& preds, const std::vector<double>& targets) {
    if (preds.empty() || preds.size() != targets.size())
        throw EvalError("mse needs nonempty vectors of equal length");
    double s = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        double d = preds[i] - targets[i];
        s += d * d;
    }
    return s / double(preds.size());
}

double loss_with_penalty(const CnnModel<float>& model, const std::vector<double>& preds,
                         const std::vector<double>& targets, double lambda) {
    return mse(preds, targets) + lambda * double(model.weight_sq_sum());
}

std::optional<double> mape(const std::vector<double>& preds, const std::vector<double>& targets,
                           Band band) {
    if (preds.size() != targets.size()) throw EvalError("mape: size mismatch");
    double s = 0;
    int n = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (band_of(targets[i]) != band) continue;
        if (targets[i] <= 0) throw EvalError("mape: nonpositive target in band");
        s += std::abs(targets[i] - preds[i]) / targets[i];
        ++n;
    }
    if (n == 0) return std::nullopt;
    return s / n;
}

PropertyReport saint_venant_check(const std::vector<double>& preds,
                                  const std::vector<double>& areas, double tol) {
    if (preds.size() != areas.size()) throw EvalError("saint_venant_check: size mismatch");
    PropertyReport rep;
    rep.property = "saint-venant";
    for (size_t i = 0; i < preds.size(); ++i) {
        double bound = saint_venant_bound(areas[i]);
        ++rep.checked;
        double rel = preds[i] / bound - 1.0;
        rep.worst_rel_deviation = std::max(rep.worst_rel_deviation, rel);
        if (preds[i] > bound * (1.0 + tol)) ++rep.violations;
    }
    return rep;
}

double Predictor::predict(const GrayImage& img) const {
    if (!model) throw EvalError("predictor has no model");
    return double(model->forward(img));
}

double Predictor::predict(const BinaryImage& img) const {
    if (img.n == model->input_side()) return predict(to_gray(img));
    return predict(downscale(img, model->input_side()));
}

double Predictor::operator()(const Domain& d) const {
    return predict(rasterize(d, raster_n));
}

// --- sweeps ----------------------------------------------------------------

SweepTable annulus_sweep(const Predictor& p, const std::vector<double>& r_values) {
    SweepTable t;
    t.name = "annulus";
    t.columns = {"r", "prediction", "oracle", "abs_error"};
    for (double r : r_values) {
        double oracle = torsion_annulus(r, 1.0);
        double yhat = p(annulus(r, 1.0, {0, 0}, 256));
        t.rows.push_back({r, yhat, oracle, std::abs(yhat - oracle)});
    }
    return t;
}

SweepTable eccentric_sweep(const Predictor& p, const std::vector<double>& offsets, double r_in,
                           double fem_h) {
    SweepTable t;
    t.name = "eccentric";
    t.columns = {"offset", "prediction", "fem_reference"};
    int monotone = 0;
    double prev_pred = -1e300;
    for (double off : offsets) {
        Domain d = annulus(r_in, 1.0, {off, 0}, 256);
        double ref = compute_torsion(d, fem_h).torsion_value;
        double yhat = p(d);
        if (!t.rows.empty() && yhat >= prev_pred) ++monotone;
        prev_pred = yhat;
        t.rows.push_back({off, yhat, ref});
    }
    if (t.rows.size() > 1)
        t.stats.emplace_back("prediction_monotone_fraction",
                             double(monotone) / double(t.rows.size() - 1));
    return t;
}

SweepTable dilation_sweep(const Predictor& p, const Domain& d,
                          const std::vector<double>& t_values, double fem_h) {
    SweepTable t;
    t.name = "dilation";
    t.columns = {"t", "prediction", "scaled_reference", "ratio"};
    double base = compute_torsion(d, fem_h).torsion_value;
    for (double tv : t_values) {
        Domain scaled = scale(d, tv);
        double yhat = p(scaled);
        double ref = scaling_predict(base, tv);
        t.rows.push_back({tv, yhat, ref, ref != 0 ? yhat / ref : kNaN});
    }
    return t;
}

SweepTable additivity_sweep(const Predictor& p, const std::vector<AdditivityCase>& cases) {
    SweepTable t;
    t.name = "additivity";
    t.columns = {"prediction_union", "prediction_sum", "oracle_sum"};
    for (const auto& c : cases) {
        Domain u = union_disjoint(c.a, c.b);
        double yu = p(u);
        double ys = p(c.a) + p(c.b);
        t.rows.push_back({yu, ys, c.oracle_sum.value_or(kNaN)});
    }
    return t;
}

Domain random_pentagon(uint64_t seed, int index) {
    for (uint64_t attempt = 0;; ++attempt) {
        Rng rng(substream_seed(seed ^ 0x9E47ull, (uint64_t(index) << 16) | attempt));
        std::vector<Vec2> pts(5);
        for (auto& q : pts) {
            q.x = rng.uniform(-kBoxHalf, kBoxHalf);
            q.y = rng.uniform(-kBoxHalf, kBoxHalf);
        }
        // order by angle around the centroid: simple by construction
        Vec2 c{0, 0};
        for (auto& q : pts) c = c + q;
        c = c * 0.2;
        std::sort(pts.begin(), pts.end(), [&](Vec2 a, Vec2 b) {
            return std::atan2(a.y - c.y, a.x - c.x) < std::atan2(b.y - c.y, b.x - c.x);
        });
        BoundaryLoop loop;
        loop.pts = pts;
        loop.kind = LoopKind::Outer;
        if (!loop_is_simple(loop) || std::abs(signed_area(loop)) < 1e-3) continue;
        if (signed_area(loop) < 0) std::reverse(loop.pts.begin(), loop.pts.end());
        Domain d;
        d.loops.push_back(std::move(loop));
        d.id = uint64_t(index);
        return d;
    }
}

SweepTable pentagon_sweep(const Predictor& p, int n_random, uint64_t seed, double c5,
                          double fem_h, double tol) {
    SweepTable t;
    t.name = "pentagon";
    t.columns = {"area_sq", "prediction", "regular_line", "fem_target", "is_regular"};
    int consistent = 0, counted = 0, fem_above = 0;
    for (int i = 0; i < n_random; ++i) {
        Domain d = random_pentagon(seed, i);
        double a2 = area(d) * area(d);
        double line = c5 * a2;
        double yhat = p(d);
        double fem = compute_torsion(d, fem_h).torsion_value;
        t.rows.push_back({a2, yhat, line, fem, 0});
        if (band_of(fem) != Band::NV) { // negligible-torsion pentagons excluded
            ++counted;
            if (yhat <= line * (1.0 + tol)) ++consistent;
        }
        if (fem > line * 1.01) ++fem_above;
    }
    for (double s : {0.4, 0.7, 1.0, 1.3, 1.6}) {
        Domain reg = regular_polygon(5, s);
        double a2 = area(reg) * area(reg);
        t.rows.push_back({a2, p(reg), c5 * a2, compute_torsion(reg, fem_h).torsion_value, 1});
    }
    if (counted > 0)
        t.stats.emplace_back("prediction_consistency_rate", double(consistent) / counted);
    t.stats.emplace_back("random_count", n_random);
    t.stats.emplace_back("fem_targets_above_line", fem_above);
    t.stats.emplace_back("c5", c5);
    return t;
}

// --- split metrics and report -------------------------------------------------

SplitTensors split_tensors(const Dataset& ds, int split, int input_n) {
    SplitTensors out;
    for (const auto& s : ds.samples) {
        if (s.split != split) continue;
        GrayImage g = s.image.n == input_n ? to_gray(s.image) : downscale(s.image, input_n);
        out.x.push_back(tensor_from_gray<float>(g));
        out.y.push_back(float(s.target));
        out.areas.push_back(s.area);
    }
    return out;
}

SplitMetrics evaluate_split(const CnnModel<float>& model, const Dataset& ds, int split,
                            double lambda, int workers) {
    SplitTensors st = split_tensors(ds, split, model.input_side());
    SplitMetrics m;
    m.count = int(st.x.size());
    if (st.x.empty()) return m;
    std::vector<float> preds = predict_batch(model, st.x, workers);
    std::vector<double> pd(preds.begin(), preds.end());
    std::vector<double> td(st.y.begin(), st.y.end());
    m.mse = mse(pd, td);
    m.loss = m.mse + lambda * double(model.weight_sq_sum());
    m.mape_lv = mape(pd, td, Band::LV);
    m.mape_sv = mape(pd, td, Band::SV);
    for (double t : td) m.nv_count += band_of(t) == Band::NV;
    PropertyReport sv = saint_venant_check(pd, st.areas);
    m.sv_violation_rate = sv.checked ? double(sv.violations) / sv.checked : 0.0;
    return m;
}

static void write_sweep_csv(const SweepTable& t, const std::string& dir) {
    std::ofstream os(fs::path(dir) / ("sweep_" + t.name + ".csv"), std::ios::binary);
    if (!os) throw IoError("cannot write sweep csv for " + t.name);
    for (size_t i = 0; i < t.columns.size(); ++i)
        os << t.columns[i] << (i + 1 < t.columns.size() ? "," : "");
    os << '\n';
    for (const auto& row : t.rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (std::isnan(row[i]))
                os << "empty";
            else
                os << fmt_full(row[i]);
            os << (i + 1 < row.size() ? "," : "");
        }
        os << '\n';
    }
}

void write_report(const EvalReport& report, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["checkpoint_id"] = report.checkpoint_id;
    j["dataset_fingerprint"] = report.dataset_fingerprint;
    j["lambda"] = report.lambda;
    const char* names[3] = {"Tr", "Val", "Te"};
    for (int s = 0; s < 3; ++s) {
        const SplitMetrics& m = report.per_split[s];
        nlohmann::ordered_json js;
        js["count"] = m.count;
        js["loss"] = m.loss;
        js["mse"] = m.mse;
        js["mape_lv"] = m.mape_lv ? nlohmann::ordered_json(*m.mape_lv)
                                  : nlohmann::ordered_json("empty-band");
        js["mape_sv"] = m.mape_sv ? nlohmann::ordered_json(*m.mape_sv)
                                  : nlohmann::ordered_json("empty-band");
        js["nv_count"] = m.nv_count;
        js["saint_venant_violation_rate"] = m.sv_violation_rate;
        j["splits"][names[s]] = js;
    }
    for (const auto& sweep : report.sweeps) {
        nlohmann::ordered_json js;
        js["rows"] = sweep.rows.size();
        js["csv"] = "sweep_" + sweep.name + ".csv";
        for (const auto& [k, v] : sweep.stats) js[k] = v;
        j["sweeps"][sweep.name] = js;
        write_sweep_csv(sweep, dir);
    }
    std::ofstream os(fs::path(dir) / "report.json", std::ios::binary);
    if (!os) throw IoError("cannot write report.json");
    os << j.dump(2) << '\n';
}

} // namespace torsion
