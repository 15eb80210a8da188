#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "torsion/fem.hpp"
#include "torsion/oracle.hpp"
#include "torsion/rng.hpp"

using namespace torsion;

namespace {

std::vector<std::vector<double>> to_dense(const CsrMatrix& m) {
    std::vector<std::vector<double>> d(size_t(m.n), std::vector<double>(size_t(m.n), 0.0));
    for (int i = 0; i < m.n; ++i)
        for (int k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
            d[size_t(i)][size_t(m.col_idx[k])] = m.values[k];
    return d;
}

// dense Cholesky solve, the oracle for the CG path
std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const size_t n = b.size();
    for (size_t k = 0; k < n; ++k) {
        a[k][k] = std::sqrt(a[k][k]);
        for (size_t i = k + 1; i < n; ++i) a[i][k] /= a[k][k];
        for (size_t j = k + 1; j < n; ++j)
            for (size_t i = j; i < n; ++i) a[i][j] -= a[i][k] * a[j][k];
    }
    for (size_t i = 0; i < n; ++i) { // forward
        for (size_t j = 0; j < i; ++j) b[i] -= a[i][j] * b[j];
        b[i] /= a[i][i];
    }
    for (size_t i = n; i-- > 0;) { // backward
        for (size_t j = i + 1; j < n; ++j) b[i] -= a[j][i] * b[j];
        b[i] /= a[i][i];
    }
    return b;
}

// torsion of the unit square from the classical rectangle series
double square_series_torsion() {
    double sum = 0;
    for (int k = 0; k < 40; ++k) {
        double n = 2 * k + 1;
        sum += std::tanh(n * M_PI / 2) / std::pow(n, 5);
    }
    double J = 1.0 / 3.0 - 64.0 / std::pow(M_PI, 5) * sum;
    return J / 4.0;
}

} // namespace

TEST_CASE("element stiffness of the reference triangle") {
    TriMesh m;
    m.vertices = {{0, 0}, {1, 0}, {0, 1}};
    m.triangles = {{0, 1, 2}};
    m.boundary = {0, 0, 0};
    auto k = to_dense(assemble_full_stiffness(m));
    const double expect[3][3] = {{1, -0.5, -0.5}, {-0.5, 0.5, 0}, {-0.5, 0, 0.5}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(k[size_t(i)][size_t(j)] == doctest::Approx(expect[i][j]).epsilon(1e-14));
}

TEST_CASE("full stiffness row sums vanish and load sums to the area") {
    Domain d = disk(1.0, {0, 0}, 128);
    TriMesh m = triangulate(d, 0.1);
    CHECK(assemble_full_stiffness(m).max_abs_row_sum() < 1e-10);
    std::vector<double> f = assemble_load(m);
    double total = std::accumulate(f.begin(), f.end(), 0.0);
    CHECK(total == doctest::Approx(area(d)).epsilon(1e-9));
}

TEST_CASE("cg solves the identity system") {
    SparseSystem sys;
    sys.matrix.n = 4;
    sys.matrix.row_ptr = {0, 1, 2, 3, 4};
    sys.matrix.col_idx = {0, 1, 2, 3};
    sys.matrix.values = {1, 1, 1, 1};
    sys.rhs = {0.5, -1.0, 2.0, 0.0};
    CgResult r = solve(sys, 1e-12);
    for (int i = 0; i < 4; ++i) CHECK(r.x[size_t(i)] == doctest::Approx(sys.rhs[size_t(i)]));
    CHECK(r.residual <= 1e-12);
}

TEST_CASE("cg matches a dense Cholesky oracle on a chain system") {
    const int n = 50;
    SparseSystem sys;
    sys.matrix.n = n;
    Rng rng(123);
    std::vector<int>& rp = sys.matrix.row_ptr;
    rp.push_back(0);
    for (int i = 0; i < n; ++i) {
        if (i > 0) {
            sys.matrix.col_idx.push_back(i - 1);
            sys.matrix.values.push_back(-1.0);
        }
        sys.matrix.col_idx.push_back(i);
        sys.matrix.values.push_back(2.5 + rng.uniform()); // diagonally dominant
        if (i + 1 < n) {
            sys.matrix.col_idx.push_back(i + 1);
            sys.matrix.values.push_back(-1.0);
        }
        rp.push_back(int(sys.matrix.col_idx.size()));
    }
    sys.rhs.resize(size_t(n));
    for (auto& b : sys.rhs) b = rng.uniform(-1, 1);

    CgResult r = solve(sys, 1e-12);
    auto exact = dense_solve(to_dense(sys.matrix), sys.rhs);
    for (int i = 0; i < n; ++i) CHECK(std::abs(r.x[size_t(i)] - exact[size_t(i)]) < 1e-8);
    CHECK(r.residual <= 1e-12);

    // Jacobi-preconditioned run reaches the same solution
    CgResult rj = solve(sys, 1e-12, 0, true);
    for (int i = 0; i < n; ++i) CHECK(std::abs(rj.x[size_t(i)] - exact[size_t(i)]) < 1e-8);
}

TEST_CASE("torsion integral of the zero field is zero") {
    Domain d = rectangle(1, 1);
    TriMesh m = triangulate(d, 0.3);
    std::vector<double> u(m.vertices.size(), 0.0);
    CHECK(torsion::torsion(m, u) == 0.0);
}

TEST_CASE("disk against the closed form") {
    Domain d = disk(1.0, {0, 0}, 512);
    FemSolution s = compute_torsion(d, 0.02);
    CHECK(std::abs(s.torsion_value / torsion_disk(1.0) - 1) < 0.005);
    CHECK(s.residual <= 1e-10);
    // discrete maximum principle: nonnegative nodal values
    for (double v : s.u) CHECK(v >= -1e-12);
}

TEST_CASE("ellipse against the closed form") {
    Domain d = ellipse(1.5, 1.0, 512);
    FemSolution s = compute_torsion(d, 0.02);
    CHECK(std::abs(s.torsion_value / torsion_ellipse(1.5, 1.0) - 1) < 0.005);
}

TEST_CASE("annulus against the closed form") {
    Domain d = annulus(0.5, 1.0, {0, 0}, 512);
    FemSolution s = compute_torsion(d, 0.02);
    CHECK(std::abs(s.torsion_value / torsion_annulus(0.5, 1.0) - 1) < 0.01);
}

TEST_CASE("thin-hole annulus with graded mesh") {
    Domain d = annulus(0.02, 1.0, {0, 0}, 512);
    FemSolution s = compute_torsion(d, 0.02);
    CHECK(std::abs(s.torsion_value / torsion_annulus(0.02, 1.0) - 1) < 0.02);
}

TEST_CASE("unit square against the rectangle series") {
    double exact = square_series_torsion();
    CHECK(exact == doctest::Approx(0.0351443).epsilon(2e-5));
    FemSolution s = compute_torsion(rectangle(1, 1), 0.02);
    CHECK(std::abs(s.torsion_value / exact - 1) < 0.005);
}

TEST_CASE("energy identity and variational consistency") {
    GenConfig cfg;
    cfg.seed = 77;
    cfg.count = 4;
    for (int i = 0; i < 4; ++i) {
        Domain d = random_domain(cfg, i);
        FemSolution s = compute_torsion(d, 0.03);
        double energy = dirichlet_energy(s.mesh, s.u);
        double t = s.torsion_value;
        CHECK(std::abs(energy / t - 1) < 1e-7);         // u^T A u = f^T u
        CHECK(std::abs(t * t / energy / t - 1) < 1e-7); // (f^T u)^2 / u^T A u = T
    }
}

TEST_CASE("refinement monotonicity and convergence rate on the disk") {
    Domain d = disk(1.0, {0, 0}, 1024);
    double exact = torsion_disk(1.0);
    double t_coarse = compute_torsion(d, 0.04).torsion_value;
    double t_fine = compute_torsion(d, 0.02).torsion_value;
    CHECK(t_fine >= t_coarse - 1e-9); // conforming refinement only adds energy
    double ratio = std::abs(t_coarse - exact) / std::abs(t_fine - exact);
    CHECK(ratio >= 3.0);
}

TEST_CASE("monotone by inclusion on nested squares") {
    double inner = compute_torsion(rectangle(0.8, 0.8), 0.03).torsion_value;
    double outer = compute_torsion(rectangle(1.3, 1.3), 0.03).torsion_value;
    CHECK(inner <= outer);
}

TEST_CASE("rototranslation, scaling, additivity, Saint-Venant") {
    GenConfig cfg;
    cfg.seed = 4242;
    cfg.count = 6;
    for (int i = 0; i < 3; ++i) {
        Domain d = random_domain(cfg, i);
        FemSolution base = compute_torsion(d, 0.02);
        CHECK(base.torsion_value <= saint_venant_bound(area(d)) * 1.01);
        try {
            Domain r = transform(d, 0.9, {0.05, -0.02});
            FemSolution rs = compute_torsion(r, 0.02);
            CHECK(std::abs(rs.torsion_value / base.torsion_value - 1) < 0.01);
        } catch (const GeometryError&) {
        }
    }
    // scaling on a centered, normalized domain so both t=0.5 and t=2 fit
    Domain d = random_domain(cfg, 3);
    Vec2 c = centroid(d);
    Domain centered = transform(d, 0, {-c.x, -c.y});
    double rad = 0;
    for (const auto& l : centered.loops)
        for (const auto& p : l.pts) rad = std::max(rad, norm(p));
    Domain base = scale(centered, 0.9 / rad);
    double t_base = compute_torsion(base, 0.02).torsion_value;
    for (double t : {0.5, 2.0}) {
        double t_scaled = compute_torsion(scale(base, t), 0.02 * t).torsion_value;
        CHECK(std::abs(t_scaled / scaling_predict(t_base, t) - 1) < 0.01);
    }
    // additivity on a disjoint pair
    Domain a = transform(ellipse(0.6, 0.4, 256), 0, {-1.1, 0});
    Domain b = transform(ellipse(0.5, 0.7, 256), 0, {1.1, 0});
    double ta = compute_torsion(a, 0.02).torsion_value;
    double tb = compute_torsion(b, 0.02).torsion_value;
    double tu = compute_torsion(union_disjoint(a, b), 0.02).torsion_value;
    CHECK(std::abs(tu - ta - tb) / (ta + tb) < 0.005);
}

TEST_CASE("csv summary row") {
    Domain d = rectangle(1, 1);
    FemSolution s = compute_torsion(d, 0.1);
    std::ostringstream os;
    write_solution_csv_row(os, 7, s);
    std::string row = os.str();
    CHECK(row.find("7,") == 0);
    CHECK(std::count(row.begin(), row.end(), ',') == 5);
}
