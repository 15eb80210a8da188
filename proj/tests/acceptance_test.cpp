// Acceptance suite. Each criterion prints one PASS/FAIL line; the doctest
// assertions behind them gate ctest. Later criteria reuse the dataset and the
// model trained by earlier ones, so the cases run in declaration order.

#include <doctest.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include "torsion/dataset.hpp"
#include "torsion/eval.hpp"
#include "torsion/fem.hpp"
#include "torsion/oracle.hpp"
#include "torsion/surrogate.hpp"

using namespace torsion;
namespace fs = std::filesystem;

namespace {

double now_s() {
    static auto t0 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[criterion %2d] %s  %s  (t=%.0fs)\n", criterion, pass ? "PASS" : "FAIL",
                detail.c_str(), now_s());
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

struct Shared {
    fs::path work = fs::temp_directory_path() / "torsion_acceptance";
    std::optional<Dataset> dataset;
    std::optional<CnnModel<float>> model;
    std::string dataset_checksum_1worker, dataset_checksum_8workers;
    fs::path dataset_dir() const { return work / "dataset"; }
    fs::path ckpt() const { return work / "model.ckpt"; }
};
Shared& shared() {
    static Shared s = [] {
        Shared sh;
        fs::remove_all(sh.work);
        fs::create_directories(sh.work);
        return sh;
    }();
    return s;
}

GenConfig desk_cfg() {
    GenConfig cfg;
    cfg.seed = 7041776;
    cfg.count = 500;
    cfg.spline_prob = 0.5;
    return cfg;
}
constexpr double kDeskH = 0.02;
constexpr int kDeskRaster = 256;
constexpr int kDeskCopies = 3;
constexpr int kInputSide = 64;
constexpr int kWorkers = 8;

} // namespace

TEST_CASE("criterion 1: FEM against closed forms at h = 0.02") {
    struct Case {
        const char* name;
        Domain d;
        double exact, tol;
    };
    std::vector<Case> cases;
    cases.push_back({"disk", disk(1.0, {0, 0}, 1024), torsion_disk(1.0), 0.005});
    cases.push_back({"ellipse", ellipse(1.5, 1.0, 1024), torsion_ellipse(1.5, 1.0), 0.005});
    cases.push_back({"annulus", annulus(0.5, 1.0, {0, 0}, 512), torsion_annulus(0.5, 1.0), 0.01});
    bool pass = true;
    std::string detail;
    for (auto& c : cases) {
        auto t0 = std::chrono::steady_clock::now();
        FemSolution s = compute_torsion(c.d, 0.02);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        double rel = std::abs(s.torsion_value / c.exact - 1);
        bool ok = rel < c.tol && secs < 30.0;
        pass = pass && ok;
        detail += fmt("%s %.2e/%.3f in %.1fs  ", c.name, rel, c.tol, secs);
        CHECK(rel < c.tol);
        CHECK(secs < 30.0);
    }
    report(1, pass, detail);
}

TEST_CASE("criterion 2: thin-hole annulus on a graded mesh") {
    Domain d = annulus(0.02, 1.0, {0, 0}, 512);
    FemSolution s = compute_torsion(d, 0.02);
    double rel = std::abs(s.torsion_value / 0.29237 - 1);
    CHECK(rel < 0.02);
    report(2, rel < 0.02, fmt("T=%.5f vs 0.29237, rel %.2e", s.torsion_value, rel));
}

TEST_CASE("criterion 3: halving h cuts the disk error by at least 3x") {
    Domain d = disk(1.0, {0, 0}, 2048);
    double exact = torsion_disk(1.0);
    double e_coarse = std::abs(compute_torsion(d, 0.04).torsion_value - exact);
    double e_fine = std::abs(compute_torsion(d, 0.02).torsion_value - exact);
    double ratio = e_coarse / e_fine;
    CHECK(ratio >= 3.0);
    report(3, ratio >= 3.0, fmt("error %.2e -> %.2e, ratio %.2f", e_coarse, e_fine, ratio));
}

TEST_CASE("criterion 4: structural FEM invariants over 20 random domains") {
    GenConfig cfg;
    cfg.seed = 1797;
    cfg.count = 20;
    cfg.spline_prob = 0.5;
    double worst_energy = 0, worst_rot = 0, worst_scale = 0, worst_add = 0, worst_sv = -1e300;
    for (int i = 0; i < 20; ++i) {
        Domain d = random_domain(cfg, i);
        FemSolution base = compute_torsion(d, kDeskH);
        double energy = dirichlet_energy(base.mesh, base.u);
        worst_energy = std::max(worst_energy, std::abs(energy / base.torsion_value - 1));
        worst_sv = std::max(worst_sv,
                            base.torsion_value / saint_venant_bound(base.domain_area) - 1);
        // rototranslation on a copy pulled toward the center so it always fits
        Vec2 c = centroid(d);
        Domain centered = transform(d, 0, {-c.x, -c.y});
        double rad = 0;
        for (const auto& l : centered.loops)
            for (const auto& p : l.pts) rad = std::max(rad, norm(p));
        Domain snug = scale(centered, std::min(1.0, 1.2 / rad));
        double t_snug = compute_torsion(snug, kDeskH).torsion_value;
        Domain moved = transform(snug, 0.61, {0.12, -0.2});
        double t_moved = compute_torsion(moved, kDeskH).torsion_value;
        worst_rot = std::max(worst_rot, std::abs(t_moved / t_snug - 1));
        // scaling at fixed h/t
        if (i < 6) {
            Domain unit = scale(centered, 0.9 / rad);
            double t_unit = compute_torsion(unit, kDeskH).torsion_value;
            for (double t : {0.5, 2.0}) {
                double t_scaled = compute_torsion(scale(unit, t), kDeskH * t).torsion_value;
                worst_scale =
                    std::max(worst_scale, std::abs(t_scaled / scaling_predict(t_unit, t) - 1));
            }
        }
    }
    // additivity over disjoint random pairs squeezed into half boxes
    for (int i = 0; i < 10; ++i) {
        Domain a = random_domain(cfg, 2 * (i % 10));
        Domain b = random_domain(cfg, 2 * (i % 10) + 1);
        auto squeeze = [&](const Domain& d, double cx) {
            Vec2 c = centroid(d);
            Domain centered = transform(d, 0, {-c.x, -c.y});
            double rad = 0;
            for (const auto& l : centered.loops)
                for (const auto& p : l.pts) rad = std::max(rad, norm(p));
            return transform(scale(centered, 0.85 / rad), 0, {cx, 0});
        };
        Domain left = squeeze(a, -1.05), right = squeeze(b, 1.05);
        double ta = compute_torsion(left, kDeskH).torsion_value;
        double tb = compute_torsion(right, kDeskH).torsion_value;
        double tu = compute_torsion(union_disjoint(left, right), kDeskH).torsion_value;
        worst_add = std::max(worst_add, std::abs(tu - ta - tb) / (ta + tb));
    }
    bool pass = worst_energy < 1e-7 && worst_rot < 0.01 && worst_scale < 0.01 &&
                worst_add < 0.005 && worst_sv < 0.01;
    CHECK(worst_energy < 1e-7);
    CHECK(worst_rot < 0.01);
    CHECK(worst_scale < 0.01);
    CHECK(worst_add < 0.005);
    CHECK(worst_sv < 0.01);
    report(4, pass,
           fmt("energy %.1e, roto %.2e, scale %.2e, add %.2e, SV margin %.2e", worst_energy,
               worst_rot, worst_scale, worst_add, worst_sv));
}

TEST_CASE("criterion 5: gradient oracle on the 8x8 double-precision build") {
    // conv against the brute-force six-loop reference
    Rng rng(20250101);
    Conv2d<double> layer{4, 2, 3, {}, {}};
    layer.kernel.resize(4 * 2 * 9);
    layer.bias = {0.01, -0.02, 0.03, 0.0};
    for (auto& v : layer.kernel) v = rng.uniform(-1, 1);
    Tensor<double> x(2, 8, 8);
    for (auto& v : x.v) v = rng.uniform(-1, 1);
    int pad = 1;
    double conv_worst = 0;
    Tensor<double> fast = conv2d_forward(x, layer);
    for (int o = 0; o < 4; ++o)
        for (int yy = 0; yy < 8; ++yy)
            for (int xx = 0; xx < 8; ++xx) {
                double acc = layer.bias[size_t(o)];
                for (int ci = 0; ci < 2; ++ci)
                    for (int dy = 0; dy < 3; ++dy)
                        for (int dx = 0; dx < 3; ++dx) {
                            int sy = yy + dy - pad, sx = xx + dx - pad;
                            if (sy < 0 || sy >= 8 || sx < 0 || sx >= 8) continue;
                            acc += layer.kernel[((size_t(o) * 2 + ci) * 3 + dy) * 3 + dx] *
                                   x.at(ci, sy, sx);
                        }
                conv_worst = std::max(conv_worst, std::abs(acc - fast.at(o, yy, xx)));
            }
    CHECK(conv_worst < 1e-12);

    // full finite-difference sweep of the desk model at 8x8
    CnnModel<double> m = build_architecture_t<double>("desk", 8);
    m.init_he(5150);
    m.set_dropout_rate(0);
    Tensor<double> in(1, 8, 8);
    for (auto& v : in.v) v = rng.uniform(0, 1);
    const double target = 0.2, lambda = 1e-6, eps = 1e-3;
    ForwardTrace<double> trace;
    double pred = m.forward_all(in, Mode::Train, nullptr, &trace).v[0];
    std::vector<double> grads(m.param_count(), 0.0);
    m.backward(trace, 2 * (pred - target), grads);
    m.add_weight_decay_grad(2 * lambda, grads);
    std::vector<double> params = m.get_params();
    double fd_worst = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        std::vector<double> pp = params;
        pp[i] = params[i] + eps;
        m.set_params(pp);
        double up = std::pow(m.forward_all(in, Mode::Train, nullptr, nullptr).v[0] - target, 2) +
                    lambda * double(m.weight_sq_sum());
        pp[i] = params[i] - eps;
        m.set_params(pp);
        double dn = std::pow(m.forward_all(in, Mode::Train, nullptr, nullptr).v[0] - target, 2) +
                    lambda * double(m.weight_sq_sum());
        double fd = (up - dn) / (2 * eps);
        double denom = std::max({std::abs(fd), std::abs(grads[i]), 1e-6});
        fd_worst = std::max(fd_worst, std::abs(fd - grads[i]) / denom);
    }
    CHECK(fd_worst < 1e-4);
    report(5, conv_worst < 1e-12 && fd_worst < 1e-4,
           fmt("conv vs reference %.1e, FD max rel err %.2e over %zu params", conv_worst,
               fd_worst, params.size()));
}

TEST_CASE("criterion 6: dataset determinism across worker counts") {
    Shared& sh = shared();
    GenConfig cfg = desk_cfg();
    Dataset ds8 = augment(generate(cfg, kDeskH, kDeskRaster, kWorkers), kDeskCopies, kWorkers);
    split_dataset(ds8, {0.7, 0.1, 0.2}, 41);
    sh.dataset_checksum_8workers = save_dataset(ds8, sh.dataset_dir().string());

    fs::path dir1 = sh.work / "dataset_w1";
    Dataset ds1 = augment(generate(cfg, kDeskH, kDeskRaster, 1), kDeskCopies, 1);
    split_dataset(ds1, {0.7, 0.1, 0.2}, 41);
    sh.dataset_checksum_1worker = save_dataset(ds1, dir1.string());
    fs::remove_all(dir1); // keep only the shared copy

    bool same = sh.dataset_checksum_1worker == sh.dataset_checksum_8workers;
    CHECK(same);

    std::set<uint64_t> split_of_base[3];
    for (const auto& s : ds8.samples) split_of_base[s.split].insert(s.base_id);
    int leaked = 0;
    for (uint64_t b : split_of_base[kTrain])
        leaked += split_of_base[kVal].count(b) + split_of_base[kTest].count(b);
    for (uint64_t b : split_of_base[kVal]) leaked += split_of_base[kTest].count(b);
    CHECK(leaked == 0);

    sh.dataset = std::move(ds8);
    report(6, same && leaked == 0,
           fmt("checksum %s vs %s, leaked bases %d, samples %zu",
               sh.dataset_checksum_1worker.c_str(), sh.dataset_checksum_8workers.c_str(), leaked,
               sh.dataset->samples.size()));
}

TEST_CASE("criterion 7: desk-scale training hits the MAPE targets") {
    Shared& sh = shared();
    REQUIRE(sh.dataset);
    const Dataset& ds = *sh.dataset;
    REQUIRE(ds.samples.size() >= 2000);

    auto t0 = std::chrono::steady_clock::now();
    SplitTensors tr = split_tensors(ds, kTrain, kInputSide);
    SplitTensors val = split_tensors(ds, kVal, kInputSide);
    CnnModel<float> model = build_architecture("desk", kInputSide);
    model.init_he(90210);
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.lambda = 1e-6;
    cfg.dropout = 0.5;
    cfg.batch = 16;
    cfg.epochs = 60;
    cfg.patience = 15;
    cfg.seed = 90210;
    cfg.workers = kWorkers;
    AdamState adam;
    TrainResult res = train(model, tr.x, tr.y, val.x, val.y, cfg, &adam);
    double train_minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

    SplitMetrics te = evaluate_split(model, ds, kTest, cfg.lambda, kWorkers);
    REQUIRE(te.mape_lv.has_value());
    double lv = *te.mape_lv;
    double sv = te.mape_sv.value_or(0.0);
    bool pass = lv <= 0.15 && sv <= 0.25 && te.sv_violation_rate <= 0.10 && train_minutes < 60;
    CHECK(lv <= 0.15);
    CHECK(sv <= 0.25);
    CHECK(te.sv_violation_rate <= 0.10);
    CHECK(train_minutes < 60);

    save_checkpoint(model, sh.ckpt().string(), &adam);
    sh.model = std::move(model);
    report(7, pass,
           fmt("Te MAPE LV %.1f%% (<=15), SV %.1f%% (<=25), SV-violations %.1f%% (<=10), "
               "%.0f epochs in %.1f min",
               lv * 100, sv * 100, te.sv_violation_rate * 100, double(res.history.size()),
               train_minutes));
}

TEST_CASE("criterion 8: overfit sanity on 50 samples") {
    Shared& sh = shared();
    REQUIRE(sh.dataset);
    SplitTensors tr = split_tensors(*sh.dataset, kTrain, kInputSide);
    std::vector<Tensor<float>> xs(tr.x.begin(), tr.x.begin() + 50);
    std::vector<float> ys(tr.y.begin(), tr.y.begin() + 50);
    CnnModel<float> model = build_architecture("desk", kInputSide);
    model.init_he(8);
    TrainConfig cfg;
    cfg.lr = 1e-3; // the criterion pins samples, lambda and epochs; lr is free
    cfg.lambda = 0;
    cfg.dropout = 0;
    cfg.batch = 16;
    cfg.epochs = 200;
    cfg.patience = 1 << 20;
    cfg.seed = 8;
    cfg.workers = kWorkers;
    TrainResult res = train(model, xs, ys, xs, ys, cfg);
    double initial = res.history.front().train_loss;
    double minimum = 1e300;
    for (const auto& e : res.history) minimum = std::min(minimum, e.train_loss);
    double drop = initial / minimum;
    CHECK(drop >= 10.0);
    report(8, drop >= 10.0,
           fmt("training MSE %.3e -> %.3e, factor %.1f", initial, minimum, drop));
}

TEST_CASE("criterion 9: property sweeps end-to-end") {
    Shared& sh = shared();
    REQUIRE(sh.model);
    fs::path out = sh.work / "sweeps";
    Predictor pred{&*sh.model, kDeskRaster};

    // annulus: the oracle column is the closed form itself
    std::vector<double> rs;
    for (int i = 0; i < 18; ++i) rs.push_back(0.05 + (0.9 - 0.05) * i / 17.0);
    SweepTable annulus_t = annulus_sweep(pred, rs);
    double oracle_err = 0;
    for (size_t i = 0; i < rs.size(); ++i)
        oracle_err = std::max(oracle_err,
                              std::abs(annulus_t.rows[i][2] - torsion_annulus(rs[i], 1.0)));
    CHECK(oracle_err < 1e-12);

    // eccentric: FEM reference strictly increasing in offset
    SweepTable ecc = eccentric_sweep(pred, {0.0, 0.15, 0.3, 0.45, 0.6}, 0.3, kDeskH);
    bool strictly_increasing = true;
    for (size_t i = 1; i < ecc.rows.size(); ++i)
        strictly_increasing = strictly_increasing && ecc.rows[i][2] > ecc.rows[i - 1][2];
    CHECK(strictly_increasing);

    // pentagons: no FEM target above the regular-pentagon line
    double c5 = pentagon_coefficient((sh.work / "pentagon_c5.txt").string());
    SweepTable pent = pentagon_sweep(pred, 200, 1776, c5, 0.03);
    double above = -1;
    for (const auto& [k, v] : pent.stats)
        if (k == "fem_targets_above_line") above = v;
    CHECK(above == 0.0);

    EvalReport rep;
    rep.checkpoint_id = "acceptance";
    rep.dataset_fingerprint = sh.dataset_checksum_8workers;
    rep.lambda = 1e-6;
    for (int s = 0; s < 3; ++s)
        rep.per_split[s] = evaluate_split(*sh.model, *sh.dataset, s, 1e-6, kWorkers);
    rep.sweeps = {annulus_t, ecc, pent};
    write_report(rep, out.string());
    bool files = fs::exists(out / "report.json") && fs::exists(out / "sweep_annulus.csv") &&
                 fs::exists(out / "sweep_eccentric.csv") && fs::exists(out / "sweep_pentagon.csv");
    CHECK(files);
    report(9, oracle_err < 1e-12 && strictly_increasing && above == 0.0 && files,
           fmt("oracle err %.1e, eccentric increasing %d, pentagons above line %.0f, c5 %.6f",
               oracle_err, int(strictly_increasing), above, c5));
}

TEST_CASE("criterion 10: bit-exact round trips and pipeline equivalence") {
    Shared& sh = shared();
    REQUIRE(sh.dataset);
    REQUIRE(sh.model);

    // dataset round trip
    Dataset loaded = load_dataset(sh.dataset_dir().string());
    fs::path second = sh.work / "dataset_resave";
    std::string sum2 = save_dataset(loaded, second.string());
    bool ds_ok = sum2 == sh.dataset_checksum_8workers;
    CHECK(ds_ok);
    fs::remove_all(second);

    // checkpoint round trip: identical predictions
    CnnModel<float> back = load_checkpoint(sh.ckpt().string());
    SplitTensors te = split_tensors(*sh.dataset, kTest, kInputSide);
    std::vector<float> p1 = predict_batch(*sh.model, te.x, kWorkers);
    std::vector<float> p2 = predict_batch(back, te.x, kWorkers);
    bool ckpt_ok = p1 == p2;
    CHECK(ckpt_ok);

    // CLI: predict on a domain file equals predict on its raster
    const char* bin = std::getenv("TORSION_BIN");
    REQUIRE(bin);
    Domain shape = ellipse(0.9, 0.6, 256);
    fs::path dom = sh.work / "shape.txt";
    fs::path img = sh.work / "shape.bin";
    save_domain(shape, dom.string());
    save_image(rasterize(shape, kDeskRaster), img.string());
    std::string cmd = std::string(bin) + " predict --checkpoint " + sh.ckpt().string() +
                      " --raster-n 256 " + dom.string() + " " + img.string() + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char l1[128] = {0}, l2[128] = {0};
    bool got = std::fgets(l1, sizeof l1, pipe) && std::fgets(l2, sizeof l2, pipe);
    pclose(pipe);
    bool cli_ok = got && std::string(l1) == std::string(l2);
    CHECK(cli_ok);

    report(10, ds_ok && ckpt_ok && cli_ok,
           fmt("dataset checksum %s, checkpoint bit-exact %d, CLI domain==image %d", sum2.c_str(),
               int(ckpt_ok), int(cli_ok)));
}
