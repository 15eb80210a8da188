#include "torsion/fem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "torsion/io_util.hpp"

namespace torsion {

void CsrMatrix::multiply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += values[k] * x[col_idx[k]];
        y[i] = s;
    }
}

double CsrMatrix::max_abs_row_sum() const {
    double worst = 0;
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += values[k];
        worst = std::max(worst, std::abs(s));
    }
    return worst;
}

namespace {

struct Triplet {
    int r, c;
    double v;
};

CsrMatrix csr_from_triplets(int n, std::vector<Triplet>& trip) {
    std::sort(trip.begin(), trip.end(), [](const Triplet& a, const Triplet& b) {
        return a.r < b.r || (a.r == b.r && a.c < b.c);
    });
    CsrMatrix m;
    m.n = n;
    m.row_ptr.assign(size_t(n) + 1, 0);
    for (size_t i = 0; i < trip.size(); ++i) {
        if (i > 0 && trip[i].r == trip[i - 1].r && trip[i].c == trip[i - 1].c) {
            m.values.back() += trip[i].v;
            continue;
        }
        m.col_idx.push_back(trip[i].c);
        m.values.push_back(trip[i].v);
        m.row_ptr[size_t(trip[i].r) + 1] = int(m.values.size());
    }
    for (int i = 0; i < n; ++i)
        m.row_ptr[size_t(i) + 1] = std::max(m.row_ptr[size_t(i) + 1], m.row_ptr[size_t(i)]);
    return m;
}

// element stiffness in closed form: K_ij = (b_i b_j + c_i c_j) / (4A)
void element_stiffness(const Vec2& p0, const Vec2& p1, const Vec2& p2, double k[3][3],
                       double* area_out) {
    double a2 = cross(p1 - p0, p2 - p0); // 2A
    double b[3] = {p1.y - p2.y, p2.y - p0.y, p0.y - p1.y};
    double c[3] = {p2.x - p1.x, p0.x - p2.x, p1.x - p0.x};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (2.0 * a2);
    *area_out = 0.5 * a2;
}

} // namespace

CsrMatrix assemble_full_stiffness(const TriMesh& m) {
    std::vector<Triplet> trip;
    trip.reserve(m.triangles.size() * 9);
    for (const auto& t : m.triangles) {
        double k[3][3], area;
        element_stiffness(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], k, &area);
        if (area <= 0) throw FemError("mesh has a non-positive triangle");
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) trip.push_back({t[i], t[j], k[i][j]});
    }
    return csr_from_triplets(int(m.vertices.size()), trip);
}

std::vector<double> assemble_load(const TriMesh& m) {
    std::vector<double> f(m.vertices.size(), 0.0);
    for (const auto& t : m.triangles) {
        const Vec2 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
        double third = cross(b - a, c - a) / 6.0; // area/3
        for (int i = 0; i < 3; ++i) f[t[i]] += third;
    }
    return f;
}

SparseSystem assemble(const TriMesh& m) {
    SparseSystem sys;
    sys.mesh_vertex_count = int(m.vertices.size());
    sys.free_index.assign(m.vertices.size(), -1);
    int nf = 0;
    for (size_t v = 0; v < m.vertices.size(); ++v)
        if (!m.boundary[v]) sys.free_index[v] = nf++;
    if (nf == 0) throw FemError("mesh has no interior vertices; refine it");

    std::vector<Triplet> trip;
    trip.reserve(m.triangles.size() * 9);
    std::vector<double> f(size_t(nf), 0.0);
    for (const auto& t : m.triangles) {
        double k[3][3], area;
        element_stiffness(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], k, &area);
        if (area <= 0) throw FemError("mesh has a non-positive triangle");
        for (int i = 0; i < 3; ++i) {
            int ri = sys.free_index[t[i]];
            if (ri < 0) continue;
            f[ri] += area / 3.0;
            for (int j = 0; j < 3; ++j) {
                int rj = sys.free_index[t[j]];
                if (rj < 0) continue; // u = 0 there, no right-hand-side shift
                trip.push_back({ri, rj, k[i][j]});
            }
        }
    }
    sys.matrix = csr_from_triplets(nf, trip);
    sys.rhs = std::move(f);
    return sys;
}

CgResult solve(const SparseSystem& sys, double tol, int max_iter, bool jacobi) {
    const CsrMatrix& A = sys.matrix;
    const std::vector<double>& b = sys.rhs;
    const int n = A.n;
    if (max_iter <= 0) max_iter = 10 * n;

    std::vector<double> diag_inv;
    if (jacobi) {
        diag_inv.assign(size_t(n), 1.0);
        for (int i = 0; i < n; ++i)
            for (int k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k)
                if (A.col_idx[k] == i && A.values[k] != 0) diag_inv[i] = 1.0 / A.values[k];
    }

    CgResult res;
    res.x.assign(size_t(n), 0.0);
    std::vector<double> r = b, z, p, Ap(static_cast<size_t>(n));
    double bnorm = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    if (bnorm == 0) {
        res.residual = 0;
        return res;
    }
    auto precond = [&](const std::vector<double>& v, std::vector<double>& out) {
        if (!jacobi) {
            out = v;
            return;
        }
        out.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] * diag_inv[i];
    };
    precond(r, z);
    p = z;
    double rz = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
    for (int it = 0; it < max_iter; ++it) {
        A.multiply(p, Ap);
        double pAp = std::inner_product(p.begin(), p.end(), Ap.begin(), 0.0);
        if (pAp <= 0) throw FemError("system is not positive definite");
        double alpha = rz / pAp;
        for (int i = 0; i < n; ++i) {
            res.x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        double rnorm = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
        res.iterations = it + 1;
        res.residual = rnorm / bnorm;
        if (res.residual <= tol) return res;
        precond(r, z);
        double rz_new = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
        double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    throw FemError("conjugate gradients did not converge in " + std::to_string(max_iter) +
                   " iterations (residual " + fmt_full(res.residual) + ")");
}

double torsion(const TriMesh& m, const std::vector<double>& u) {
    double s = 0;
    for (const auto& t : m.triangles) {
        const Vec2 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
        double area = 0.5 * cross(b - a, c - a);
        s += area * (u[t[0]] + u[t[1]] + u[t[2]]) / 3.0;
    }
    return s;
}

double dirichlet_energy(const TriMesh& m, const std::vector<double>& u) {
    double s = 0;
    for (const auto& t : m.triangles) {
        double k[3][3], area;
        element_stiffness(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], k, &area);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s += u[t[i]] * k[i][j] * u[t[j]];
    }
    return s;
}

FemSolution compute_torsion(const Domain& d, double h, double tol, bool jacobi) {
    FemSolution sol;
    sol.mesh = triangulate(d, SizeField::for_domain(d, h));
    SparseSystem sys = assemble(sol.mesh);
    CgResult cg = solve(sys, tol, 0, jacobi);
    sol.u.assign(sol.mesh.vertices.size(), 0.0);
    for (size_t v = 0; v < sol.mesh.vertices.size(); ++v)
        if (sys.free_index[v] >= 0) sol.u[v] = cg.x[size_t(sys.free_index[v])];
    sol.torsion_value = torsion(sol.mesh, sol.u);
    sol.domain_area = area(d);
    sol.iterations = cg.iterations;
    sol.residual = cg.residual;
    return sol;
}

void write_solution_csv_row(std::ostream& os, uint64_t id, const FemSolution& s) {
    os << id << ',' << fmt_full(s.domain_area) << ',' << fmt_full(s.torsion_value) << ','
       << fmt_full(s.mesh.target_h) << ',' << s.iterations << ',' << fmt_full(s.residual)
       << '\n';
}

} // namespace torsion
