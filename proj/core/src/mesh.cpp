#include "torsion/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "torsion/io_util.hpp"

namespace torsion {

double TriMesh::total_area() const {
    double s = 0;
    for (const auto& t : triangles) {
        const Vec2 &a = vertices[t[0]], &b = vertices[t[1]], &c = vertices[t[2]];
        s += 0.5 * cross(b - a, c - a);
    }
    return s;
}

int TriMesh::interior_count() const {
    int n = 0;
    for (uint8_t f : boundary) n += (f == 0);
    return n;
}

double SizeField::at(Vec2 p) const {
    if (near_h <= 0 || hole_edges.empty()) return h;
    double d2best = 1e300;
    for (const auto& [a, b] : hole_edges) {
        Vec2 ab = b - a;
        double t = dot(p - a, ab) / std::max(dot(ab, ab), 1e-300);
        t = std::clamp(t, 0.0, 1.0);
        Vec2 q = a + ab * t;
        d2best = std::min(d2best, dot(p - q, p - q));
    }
    return std::min(h, near_h + grade * std::sqrt(d2best));
}

SizeField SizeField::uniform(double h) {
    SizeField s;
    s.h = h;
    return s;
}

SizeField SizeField::for_domain(const Domain& d, double h) {
    SizeField s;
    s.h = h;
    double min_seg = 1e300;
    for (const auto& loop : d.loops) {
        if (loop.kind != LoopKind::Hole) continue;
        const auto& p = loop.pts;
        for (size_t i = 0, n = p.size(); i < n; ++i) {
            Vec2 a = p[i], b = p[(i + 1) % n];
            s.hole_edges.emplace_back(a, b);
            min_seg = std::min(min_seg, norm(b - a));
        }
    }
    if (!s.hole_edges.empty()) s.near_h = std::min(h, std::max(h / 32.0, 1.5 * min_seg));
    return s;
}

namespace {

// --- filtered predicates ---------------------------------------------------

double orient2d(Vec2 a, Vec2 b, Vec2 c) {
    double detl = (a.x - c.x) * (b.y - c.y);
    double detr = (a.y - c.y) * (b.x - c.x);
    double det = detl - detr;
    double norm = std::abs(detl) + std::abs(detr);
    if (std::abs(det) > 3.4e-16 * norm) return det;
    long double dl = (long double)(a.x - c.x) * (long double)(b.y - c.y);
    long double dr = (long double)(a.y - c.y) * (long double)(b.x - c.x);
    long double d = dl - dr;
    return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
}

double incircle(Vec2 a, Vec2 b, Vec2 c, Vec2 p) {
    double adx = a.x - p.x, ady = a.y - p.y;
    double bdx = b.x - p.x, bdy = b.y - p.y;
    double cdx = c.x - p.x, cdy = c.y - p.y;
    double ad = adx * adx + ady * ady;
    double bd = bdx * bdx + bdy * bdy;
    double cd = cdx * cdx + cdy * cdy;
    double det = adx * (bdy * cd - cdy * bd) - ady * (bdx * cd - cdx * bd) +
                 ad * (bdx * cdy - cdx * bdy);
    double norm = std::abs(adx) * (std::abs(bdy) * cd + std::abs(cdy) * bd) +
                  std::abs(ady) * (std::abs(bdx) * cd + std::abs(cdx) * bd) +
                  ad * (std::abs(bdx) * std::abs(cdy) + std::abs(cdx) * std::abs(bdy));
    if (std::abs(det) > 1.2e-15 * norm) return det;
    long double ladx = adx, lady = ady, lbdx = bdx, lbdy = bdy, lcdx = cdx, lcdy = cdy;
    long double lad = ladx * ladx + lady * lady;
    long double lbd = lbdx * lbdx + lbdy * lbdy;
    long double lcd = lcdx * lcdx + lcdy * lcdy;
    long double ldet = ladx * (lbdy * lcd - lcdy * lbd) - lady * (lbdx * lcd - lcdx * lbd) +
                       lad * (lbdx * lcdy - lcdx * lbdy);
    return ldet > 0 ? 1.0 : (ldet < 0 ? -1.0 : 0.0);
}

// --- incremental constrained Delaunay triangulation -------------------------

constexpr int kNone = -1;

struct Tri {
    int v[3];   // counterclockwise
    int nbr[3]; // nbr[i] faces v[i]
};

uint64_t edge_key(int u, int v) {
    if (u > v) std::swap(u, v);
    return (uint64_t(uint32_t(u)) << 32) | uint32_t(v);
}

struct Mesher {
    std::vector<Vec2> pts;
    std::vector<uint8_t> is_input; // original loop vertex (shell-split rule)
    std::vector<int> vert2tri;
    std::vector<Tri> tris;
    std::vector<uint8_t> alive;
    std::vector<uint8_t> inside;
    bool flags_valid = false;
    std::unordered_set<uint64_t> constrained;
    int hint = 0;

    // scratch for cavity search
    std::vector<int> stamp;
    int stamp_cur = 0;

    static constexpr size_t kVertexBudget = 2'000'000;

    void init_box(double half) {
        pts = {{-half, -half}, {half, -half}, {half, half}, {-half, half}};
        is_input.assign(4, 0);
        tris.push_back({{0, 1, 2}, {kNone, 1, kNone}});
        tris.push_back({{0, 2, 3}, {kNone, kNone, 0}});
        alive.assign(2, 1);
        inside.assign(2, 0);
        vert2tri = {0, 0, 0, 1};
    }

    int local_index(const Tri& t, int v) const {
        for (int i = 0; i < 3; ++i)
            if (t.v[i] == v) return i;
        return -1;
    }

    bool edge_constrained(int u, int v) const { return constrained.count(edge_key(u, v)) > 0; }

    int locate(Vec2 p, int start) const {
        int t = start;
        if (t < 0 || t >= int(tris.size()) || !alive[t]) {
            t = -1;
            for (int i = int(tris.size()) - 1; i >= 0; --i)
                if (alive[i]) {
                    t = i;
                    break;
                }
        }
        int prev = kNone;
        for (size_t steps = 0, cap = 4 * tris.size() + 64; steps < cap; ++steps) {
            const Tri& tr = tris[t];
            int next = kNone;
            bool outward = false;
            for (int i = 0; i < 3; ++i) {
                int nb = tr.nbr[i];
                Vec2 a = pts[tr.v[(i + 1) % 3]];
                Vec2 b = pts[tr.v[(i + 2) % 3]];
                if (orient2d(a, b, p) < 0) {
                    outward = true;
                    if (nb != kNone && nb != prev) {
                        next = nb;
                        break;
                    }
                }
            }
            if (next == kNone) {
                if (!outward) return t;
                throw MeshError("point location left the triangulation");
            }
            prev = t;
            t = next;
        }
        // fallback: exhaustive scan
        for (int i = 0; i < int(tris.size()); ++i) {
            if (!alive[i]) continue;
            const Tri& tr = tris[i];
            bool ok = true;
            for (int k = 0; k < 3 && ok; ++k)
                if (orient2d(pts[tr.v[(k + 1) % 3]], pts[tr.v[(k + 2) % 3]], p) < 0) ok = false;
            if (ok) return i;
        }
        throw MeshError("point location failed");
    }

    struct Cavity {
        std::vector<int> tris;
        // boundary edge (a,b) counterclockwise seen from inside, outer neighbor
        std::vector<std::array<int, 3>> boundary; // a, b, outer tri (or kNone)
        int coincident_vertex = kNone;
        bool blocked = false; // point degenerate against a constraint, skip insertion
    };

    Cavity find_cavity(Vec2 p, int t0) {
        Cavity cav;
        const Tri& seed = tris[t0];
        for (int i = 0; i < 3; ++i) {
            Vec2 q = pts[seed.v[i]];
            double dx = q.x - p.x, dy = q.y - p.y;
            if (dx * dx + dy * dy < 1e-26) {
                cav.coincident_vertex = seed.v[i];
                return cav;
            }
        }
        if (++stamp_cur == 0) ++stamp_cur;
        stamp.resize(tris.size(), 0);
        std::vector<int> work{t0};
        stamp[t0] = stamp_cur;
        cav.tris.push_back(t0);
        while (!work.empty()) {
            int t = work.back();
            work.pop_back();
            const Tri& tr = tris[t];
            for (int i = 0; i < 3; ++i) {
                int nb = tr.nbr[i];
                if (nb == kNone || stamp[nb] == stamp_cur) continue;
                int u = tr.v[(i + 1) % 3], v = tr.v[(i + 2) % 3];
                if (edge_constrained(u, v)) continue;
                const Tri& nt = tris[nb];
                if (incircle(pts[nt.v[0]], pts[nt.v[1]], pts[nt.v[2]], p) > 0) {
                    stamp[nb] = stamp_cur;
                    cav.tris.push_back(nb);
                    work.push_back(nb);
                }
            }
        }
        // shrink until every boundary edge faces p strictly (keeps the cavity
        // star-shaped so the new fan has positive areas); the seed triangle
        // that contains p is never removed
        while (true) {
            cav.boundary.clear();
            int bad_tri = kNone;
            bool seed_bad = false;
            for (int t : cav.tris) {
                const Tri& tr = tris[t];
                for (int i = 0; i < 3; ++i) {
                    int nb = tr.nbr[i];
                    if (nb != kNone && stamp[nb] == stamp_cur) continue;
                    int a = tr.v[(i + 1) % 3], b = tr.v[(i + 2) % 3];
                    if (orient2d(pts[a], pts[b], p) <= 0) {
                        if (t == t0)
                            seed_bad = true;
                        else
                            bad_tri = t;
                    }
                    cav.boundary.push_back({a, b, nb});
                }
            }
            if (bad_tri == kNone) {
                // p sits on an edge of the seed whose far side is unreachable
                // (constrained or degenerate): refuse to insert here
                cav.blocked = seed_bad;
                break;
            }
            stamp[bad_tri] = 0;
            cav.tris.erase(std::find(cav.tris.begin(), cav.tris.end(), bad_tri));
        }
        return cav;
    }

    // true when point lies strictly inside the diametral circle of (u,v)
    bool encroaches(Vec2 p, int u, int v) const {
        return dot(pts[u] - p, pts[v] - p) < 0;
    }

    std::vector<uint64_t> cavity_constrained_edges(const Cavity& cav) const {
        std::vector<uint64_t> out;
        for (int t : cav.tris) {
            const Tri& tr = tris[t];
            for (int i = 0; i < 3; ++i) {
                int u = tr.v[(i + 1) % 3], v = tr.v[(i + 2) % 3];
                if (edge_constrained(u, v)) out.push_back(edge_key(u, v));
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    int commit_cavity(Vec2 p, const Cavity& cav, bool input_vertex) {
        if (pts.size() >= kVertexBudget) throw MeshError("mesh refinement budget exceeded");
        {
            std::unordered_set<int> starts;
            for (const auto& e : cav.boundary) starts.insert(e[0]);
            if (starts.size() != cav.boundary.size())
                throw MeshError("cavity boundary is not a simple cycle");
        }
        int vn = int(pts.size());
        pts.push_back(p);
        is_input.push_back(input_vertex ? 1 : 0);
        vert2tri.push_back(kNone);

        for (int t : cav.tris) alive[t] = 0;

        std::unordered_map<int, int> fan_by_start; // boundary edge start vertex -> new tri
        std::unordered_map<int, int> fan_by_end;
        std::vector<int> created;
        created.reserve(cav.boundary.size());
        for (const auto& [a, b, outer] : cav.boundary) {
            int nt = int(tris.size());
            bool in_flag = false;
            if (flags_valid && outer != kNone)
                in_flag = edge_constrained(a, b) ? !inside[outer] : bool(inside[outer]);
            tris.push_back({{a, b, vn}, {kNone, kNone, outer}});
            alive.push_back(1);
            inside.push_back(in_flag ? 1 : 0);
            if (outer != kNone) {
                Tri& ot = tris[outer];
                for (int i = 0; i < 3; ++i)
                    if (ot.v[(i + 1) % 3] == b && ot.v[(i + 2) % 3] == a) ot.nbr[i] = nt;
            }
            fan_by_start[a] = nt;
            fan_by_end[b] = nt;
            created.push_back(nt);
        }
        for (int nt : created) {
            Tri& t = tris[nt];
            int a = t.v[0], b = t.v[1];
            t.nbr[0] = fan_by_start.at(b); // across edge (b, vn)
            t.nbr[1] = fan_by_end.at(a);   // across edge (vn, a)
            vert2tri[a] = nt;
            vert2tri[b] = nt;
        }
        vert2tri[vn] = created.front();
        hint = created.front();
        return vn;
    }

    int insert_point(Vec2 p, bool input_vertex) {
        Cavity cav = find_cavity(p, locate(p, hint));
        if (cav.coincident_vertex != kNone) return cav.coincident_vertex;
        if (cav.blocked) throw MeshError("degenerate vertex placement");
        return commit_cavity(p, cav, input_vertex);
    }

    // circulate over triangles incident to v; returns list (may be partial on
    // hull, which cannot happen for interior vertices)
    std::vector<int> star(int v) const {
        std::vector<int> out;
        int t0 = vert2tri[v];
        if (t0 == kNone || !alive[t0]) { // stale hint, rebuild
            t0 = kNone;
            for (int i = 0; i < int(tris.size()); ++i)
                if (alive[i] && local_index(tris[i], v) >= 0) {
                    t0 = i;
                    break;
                }
            if (t0 == kNone) throw MeshError("vertex without incident triangle");
        }
        int t = t0;
        // walk counterclockwise
        for (size_t guard = 0; guard <= tris.size(); ++guard) {
            out.push_back(t);
            int li = local_index(tris[t], v);
            int next = tris[t].nbr[(li + 1) % 3];
            if (next == t0 || next == kNone) {
                if (next == t0) return out;
                break;
            }
            t = next;
        }
        // hit the hull: walk clockwise from t0 for the rest
        int t_back = t0;
        for (size_t guard = 0; guard <= tris.size(); ++guard) {
            int li = local_index(tris[t_back], v);
            int next = tris[t_back].nbr[(li + 2) % 3];
            if (next == kNone) break;
            out.push_back(next);
            t_back = next;
        }
        return out;
    }

    bool edge_exists(int u, int v) const {
        for (int t : star(u))
            if (local_index(tris[t], v) >= 0) return true;
        return false;
    }

    // find triangle having directed edge (u,v); returns {tri, slot of opposite vertex}
    std::pair<int, int> tri_with_edge(int u, int v) const {
        for (int t : star(u)) {
            const Tri& tr = tris[t];
            for (int i = 0; i < 3; ++i)
                if (tr.v[(i + 1) % 3] == u && tr.v[(i + 2) % 3] == v) return {t, i};
        }
        return {kNone, -1};
    }

    // Anglada-style cavity retriangulation for constraint recovery. verts runs
    // along one side from a to b; creates fan triangles, links them locally,
    // records outer adjacency fixes in `edge_owner`.
    void retriangulate(int a, int b, const std::vector<int>& verts,
                       std::unordered_map<uint64_t, std::pair<int, int>>& edge_owner,
                       std::vector<int>& created) {
        if (verts.empty()) return;
        size_t ci = 0;
        for (size_t i = 1; i < verts.size(); ++i)
            if (incircle(pts[a], pts[b], pts[verts[ci]], pts[verts[i]]) > 0) ci = i;
        int c = verts[ci];
        int nt = int(tris.size());
        tris.push_back({{a, b, c}, {kNone, kNone, kNone}});
        alive.push_back(1);
        inside.push_back(0);
        created.push_back(nt);
        for (int i = 0; i < 3; ++i) {
            const Tri& tr = tris[nt];
            int u = tr.v[(i + 1) % 3], v = tr.v[(i + 2) % 3];
            auto [it, fresh] = edge_owner.try_emplace(edge_key(u, v), std::make_pair(nt, i));
            if (!fresh) {
                auto [ot, oi] = it->second;
                tris[nt].nbr[i] = ot;
                tris[ot].nbr[oi] = nt;
            }
        }
        retriangulate(a, c, {verts.begin(), verts.begin() + long(ci)}, edge_owner, created);
        retriangulate(c, b, {verts.begin() + long(ci) + 1, verts.end()}, edge_owner, created);
    }

    void insert_segment(int ia, int ib) {
        if (ia == ib) return;
        if (edge_exists(ia, ib)) {
            constrained.insert(edge_key(ia, ib));
            return;
        }
        Vec2 pa = pts[ia], pb = pts[ib];

        // find the starting triangle whose interior wedge at ia contains ib
        int start = kNone;
        for (int t : star(ia)) {
            const Tri& tr = tris[t];
            int li = local_index(tr, ia);
            int u = tr.v[(li + 1) % 3], w = tr.v[(li + 2) % 3];
            double su = orient2d(pa, pts[u], pb);
            double sw = orient2d(pa, pts[w], pb);
            if (su == 0 && dot(pts[u] - pa, pb - pa) > 0) {
                insert_segment(ia, u);
                insert_segment(u, ib);
                return;
            }
            if (sw == 0 && dot(pts[w] - pa, pb - pa) > 0) {
                insert_segment(ia, w);
                insert_segment(w, ib);
                return;
            }
            if (su > 0 && sw < 0) {
                start = t;
                break;
            }
        }
        if (start == kNone) throw MeshError("constraint recovery: no starting triangle");

        // walk the pipe of crossed triangles, collecting side polylines.
        // In the start triangle (a,u,w), b's direction lies inside the wedge,
        // so u sits right of a->b and w sits left.
        std::vector<int> pipe{start};
        std::vector<int> left, right;
        {
            const Tri& tr = tris[start];
            int li = local_index(tr, ia);
            right.push_back(tr.v[(li + 1) % 3]);
            left.push_back(tr.v[(li + 2) % 3]);
        }
        int eL = left.back(), eR = right.back(); // crossed edge (left, right)
        while (true) {
            if (edge_constrained(eL, eR))
                throw MeshError("constraint recovery crossed another constraint");
            // the triangle beyond the crossed edge carries it directed (L,R)
            auto [nxt, slot] = tri_with_edge(eL, eR);
            if (nxt == kNone) throw MeshError("constraint recovery left the mesh");
            pipe.push_back(nxt);
            int apex = tris[nxt].v[slot];
            if (apex == ib) break;
            double s = orient2d(pa, pb, pts[apex]);
            if (s == 0 && dot(pts[apex] - pa, pb - pa) > 0) {
                // segment passes through a vertex: split the constraint there
                insert_segment(ia, apex);
                insert_segment(apex, ib);
                return;
            }
            if (s > 0) {
                left.push_back(apex);
                eL = apex;
            } else {
                right.push_back(apex);
                eR = apex;
            }
        }

        // collect outer adjacency of the pipe before deleting it
        std::unordered_map<uint64_t, std::pair<int, int>> edge_owner;
        if (++stamp_cur == 0) ++stamp_cur;
        stamp.resize(tris.size(), 0);
        for (int t : pipe) stamp[t] = stamp_cur;
        for (int t : pipe) {
            const Tri& tr = tris[t];
            for (int i = 0; i < 3; ++i) {
                int nb = tr.nbr[i];
                if (nb == kNone || stamp[nb] == stamp_cur) continue;
                int u = tr.v[(i + 1) % 3], v = tr.v[(i + 2) % 3];
                int oslot = -1;
                for (int k = 0; k < 3; ++k)
                    if (tris[nb].v[(k + 1) % 3] == v && tris[nb].v[(k + 2) % 3] == u) oslot = k;
                edge_owner[edge_key(u, v)] = {nb, oslot};
            }
        }
        for (int t : pipe) alive[t] = 0;

        std::vector<int> created;
        retriangulate(ia, ib, left, edge_owner, created); // left side runs a->b
        std::reverse(right.begin(), right.end());
        retriangulate(ib, ia, right, edge_owner, created); // right side runs b->a
        for (int nt : created)
            for (int v : tris[nt].v) vert2tri[v] = nt;
        hint = created.empty() ? hint : created.front();
        constrained.insert(edge_key(ia, ib));
    }

    void classify() {
        // parity flood fill: super-box hull is outside, every constrained edge
        // crossing flips the region
        std::vector<int8_t> state(tris.size(), -1);
        std::deque<int> work;
        for (int t = 0; t < int(tris.size()); ++t)
            if (alive[t] && (tris[t].nbr[0] == kNone || tris[t].nbr[1] == kNone ||
                             tris[t].nbr[2] == kNone)) {
                state[t] = 0;
                work.push_back(t);
            }
        while (!work.empty()) {
            int t = work.front();
            work.pop_front();
            const Tri& tr = tris[t];
            for (int i = 0; i < 3; ++i) {
                int nb = tr.nbr[i];
                if (nb == kNone || state[nb] != -1) continue;
                int u = tr.v[(i + 1) % 3], v = tr.v[(i + 2) % 3];
                state[nb] = edge_constrained(u, v) ? int8_t(1 - state[t]) : state[t];
                work.push_back(nb);
            }
        }
        for (int t = 0; t < int(tris.size()); ++t)
            if (alive[t]) inside[t] = state[t] == 1;
        flags_valid = true;
    }

    double circumradius(const Tri& t, Vec2* center = nullptr) const {
        Vec2 a = pts[t.v[0]], b = pts[t.v[1]], c = pts[t.v[2]];
        double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
        if (std::abs(d) < 1e-300) return 1e300;
        double a2 = dot(a, a), b2 = dot(b, b), c2 = dot(c, c);
        Vec2 cc{(a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
                (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d};
        if (center) *center = cc;
        return norm(a - cc);
    }

    double shortest_edge(const Tri& t) const {
        double e0 = norm(pts[t.v[1]] - pts[t.v[2]]);
        double e1 = norm(pts[t.v[2]] - pts[t.v[0]]);
        double e2 = norm(pts[t.v[0]] - pts[t.v[1]]);
        return std::min({e0, e1, e2});
    }

    static constexpr double kRatioBound = 1.1831; // 1 / (2 sin 25 deg)

    bool is_bad(int t, const SizeField& size) const {
        if (!alive[t] || !inside[t]) return false;
        const Tri& tr = tris[t];
        Vec2 centroid = (pts[tr.v[0]] + pts[tr.v[1]] + pts[tr.v[2]]) * (1.0 / 3.0);
        double local = size.at(centroid);
        double r = circumradius(tr);
        if (r > local) return true;
        double smin = shortest_edge(tr);
        // quality splits stop below a fraction of the local size so constraint
        // corners with small input angles cannot cascade
        if (smin > local / 8.0 && r / smin > kRatioBound) return true;
        return false;
    }

    // split location honoring concentric shells off input vertices
    Vec2 split_point(int u, int v) const {
        Vec2 a = pts[u], b = pts[v];
        bool au = is_input[u], bv = is_input[v];
        if (au == bv) return (a + b) * 0.5;
        if (bv) {
            std::swap(a, b);
        }
        double len = norm(b - a);
        double t = std::exp2(std::round(std::log2(len * 0.5))) / len;
        t = std::clamp(t, 0.25, 0.75);
        return a + (b - a) * t;
    }

    struct SegJob {
        int u, v;
        bool forced; // split even if no mesh vertex encroaches (rejected center)
    };

    void split_subsegment(int u, int v, std::deque<SegJob>& seg_queue,
                          std::deque<int>& tri_queue, const SizeField& size) {
        Vec2 m = split_point(u, v);
        constrained.erase(edge_key(u, v));
        auto [t0, slot] = tri_with_edge(u, v);
        if (t0 == kNone) std::tie(t0, slot) = tri_with_edge(v, u);
        if (t0 == kNone) throw MeshError("lost a boundary subsegment");
        Cavity cav = find_cavity(m, locate(m, t0));
        if (cav.coincident_vertex != kNone || cav.blocked) {
            constrained.insert(edge_key(u, v)); // nothing to do, restore
            return;
        }
        int vm = commit_cavity(m, cav, false);
        constrained.insert(edge_key(u, vm));
        constrained.insert(edge_key(vm, v));
        enqueue_around(vm, seg_queue, tri_queue, size);
    }

    void enqueue_around(int v, std::deque<SegJob>& seg_queue, std::deque<int>& tri_queue,
                        const SizeField& size) {
        for (int t : star(v)) {
            if (!alive[t]) continue;
            if (is_bad(t, size)) tri_queue.push_back(t);
            const Tri& tr = tris[t];
            for (int i = 0; i < 3; ++i) {
                int a = tr.v[(i + 1) % 3], b = tr.v[(i + 2) % 3];
                if (edge_constrained(a, b) && encroaches(pts[tr.v[i]], a, b))
                    seg_queue.push_back({a, b, false});
            }
        }
    }

    bool subseg_encroached(int u, int v) {
        auto [t1, s1] = tri_with_edge(u, v);
        if (t1 != kNone && encroaches(pts[tris[t1].v[s1]], u, v)) return true;
        auto [t2, s2] = tri_with_edge(v, u);
        if (t2 != kNone && encroaches(pts[tris[t2].v[s2]], u, v)) return true;
        return false;
    }

    void refine(const SizeField& size) {
        std::deque<SegJob> seg_queue;
        std::deque<int> tri_queue;
        for (uint64_t key : constrained) {
            int u = int(key >> 32), v = int(key & 0xffffffffu);
            if (subseg_encroached(u, v)) seg_queue.push_back({u, v, false});
        }
        for (int t = 0; t < int(tris.size()); ++t)
            if (is_bad(t, size)) tri_queue.push_back(t);

        while (!seg_queue.empty() || !tri_queue.empty()) {
            if (!seg_queue.empty()) {
                auto [u, v, forced] = seg_queue.front();
                seg_queue.pop_front();
                if (!constrained.count(edge_key(u, v))) continue;
                if (!forced && !subseg_encroached(u, v)) continue;
                if (norm(pts[u] - pts[v]) < 1e-6) continue; // length floor
                split_subsegment(u, v, seg_queue, tri_queue, size);
                continue;
            }
            int t = tri_queue.front();
            tri_queue.pop_front();
            if (!alive[t] || !is_bad(t, size)) continue;
            Vec2 cc;
            double r = circumradius(tris[t], &cc);
            Vec2 insert_at = cc;
            if (r >= 1e300) { // degenerate sliver: bisect its longest edge instead
                const Tri& tr = tris[t];
                double best = -1;
                for (int i = 0; i < 3; ++i) {
                    Vec2 a = pts[tr.v[(i + 1) % 3]], b = pts[tr.v[(i + 2) % 3]];
                    if (norm(b - a) > best) {
                        best = norm(b - a);
                        insert_at = (a + b) * 0.5;
                    }
                }
            }
            int located;
            try {
                located = locate(insert_at, t);
            } catch (const MeshError&) {
                continue;
            }
            Cavity cav = find_cavity(insert_at, located);
            if (cav.coincident_vertex != kNone) continue;
            // constrained edges the center encroaches take priority; this also
            // resolves centers that escaped the domain or sit exactly on an edge
            bool rejected = false;
            auto queue_encroached = [&](int u, int v) {
                if (encroaches(insert_at, u, v) && norm(pts[u] - pts[v]) >= 1e-6) {
                    seg_queue.push_back({u, v, true});
                    rejected = true;
                }
            };
            for (uint64_t key : cavity_constrained_edges(cav)) {
                queue_encroached(int(key >> 32), int(key & 0xffffffffu));
            }
            for (int i = 0; i < 3; ++i) {
                int a = tris[t].v[(i + 1) % 3], b = tris[t].v[(i + 2) % 3];
                if (edge_constrained(a, b)) queue_encroached(a, b);
            }
            if (rejected) {
                tri_queue.push_back(t);
                continue;
            }
            if (!inside[located] || cav.blocked) continue;
            int vn = commit_cavity(insert_at, cav, false);
            enqueue_around(vn, seg_queue, tri_queue, size);
        }
    }

    TriMesh extract(double target_h) const {
        TriMesh m;
        m.target_h = target_h;
        std::vector<int> remap(pts.size(), -1);
        for (int t = 0; t < int(tris.size()); ++t) {
            if (!alive[t] || !inside[t]) continue;
            std::array<int, 3> tv{};
            for (int i = 0; i < 3; ++i) {
                int v = tris[t].v[i];
                if (remap[v] == -1) {
                    remap[v] = int(m.vertices.size());
                    m.vertices.push_back(pts[v]);
                }
                tv[i] = remap[v];
            }
            const Vec2 &a = m.vertices[tv[0]], &b = m.vertices[tv[1]], &c = m.vertices[tv[2]];
            if (cross(b - a, c - a) < 0) std::swap(tv[1], tv[2]);
            m.triangles.push_back(tv);
        }
        m.boundary.assign(m.vertices.size(), 0);
        for (uint64_t key : constrained) {
            int u = int(key >> 32), v = int(key & 0xffffffffu);
            if (remap[u] >= 0) m.boundary[remap[u]] = 1;
            if (remap[v] >= 0) m.boundary[remap[v]] = 1;
        }
        if (m.triangles.empty()) throw MeshError("triangulation produced no interior triangles");
        return m;
    }
};

} // namespace

TriMesh triangulate(const Domain& d, const SizeField& size) {
    validate(d);
    if (size.h <= 0) throw MeshError("mesh size must be positive");
    Mesher M;
    M.init_box(4.0 * kBoxHalf);
    std::vector<std::vector<int>> loop_vertices;
    for (const auto& loop : d.loops) {
        std::vector<int> idx;
        idx.reserve(loop.pts.size());
        for (const auto& p : loop.pts) idx.push_back(M.insert_point(p, true));
        loop_vertices.push_back(std::move(idx));
    }
    for (size_t li = 0; li < loop_vertices.size(); ++li) {
        const auto& idx = loop_vertices[li];
        try {
            for (size_t i = 0, n = idx.size(); i < n; ++i)
                M.insert_segment(idx[i], idx[(i + 1) % n]);
        } catch (const MeshError& e) {
            throw MeshError("meshing failed on loop " + std::to_string(li) + ": " + e.what());
        }
    }
    M.classify();
    M.refine(size);
    return M.extract(size.h);
}

TriMesh triangulate(const Domain& d, double h) { return triangulate(d, SizeField::uniform(h)); }

void dump_mesh(std::ostream& os, const TriMesh& m) {
    for (const auto& v : m.vertices)
        os << "v " << fmt_full(v.x) << ' ' << fmt_full(v.y) << '\n';
    for (const auto& t : m.triangles) os << "t " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    for (size_t i = 0; i < m.boundary.size(); ++i)
        if (m.boundary[i]) os << "b " << i << '\n';
}

} // namespace torsion
