#include "torsion/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "torsion/io_util.hpp"
#include "torsion/rng.hpp"

namespace torsion {

namespace geom_detail {

static int orient_sign(Vec2 a, Vec2 b, Vec2 c) {
    double d = cross(b - a, c - a);
    if (d > 0) return 1;
    if (d < 0) return -1;
    return 0;
}

static bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
    // assumes p collinear with ab
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

// Closed-segment intersection: shared endpoints and collinear overlap count.
bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    int d1 = orient_sign(c, d, a);
    int d2 = orient_sign(c, d, b);
    int d3 = orient_sign(a, b, c);
    int d4 = orient_sign(a, b, d);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
        ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    if (d1 == 0 && on_segment(c, d, a)) return true;
    if (d2 == 0 && on_segment(c, d, b)) return true;
    if (d3 == 0 && on_segment(a, b, c)) return true;
    if (d4 == 0 && on_segment(a, b, d)) return true;
    return false;
}

} // namespace geom_detail

using geom_detail::segments_intersect;

void GenConfig::validate() const {
    if (min_vertices < 3 || max_vertices > 20 || min_vertices > max_vertices)
        throw GeometryError("vertex-count range must lie within [3,20]");
    if (spline_prob < 0.0 || spline_prob > 1.0)
        throw GeometryError("spline probability must lie in [0,1]");
    if (count < 0) throw GeometryError("count must be nonnegative");
}

double signed_area(const BoundaryLoop& loop) {
    double s = 0;
    const auto& p = loop.pts;
    for (size_t i = 0, n = p.size(); i < n; ++i) {
        const Vec2& u = p[i];
        const Vec2& v = p[(i + 1) % n];
        s += u.x * v.y - v.x * u.y;
    }
    return 0.5 * s;
}

double loop_perimeter(const BoundaryLoop& loop) {
    double s = 0;
    const auto& p = loop.pts;
    for (size_t i = 0, n = p.size(); i < n; ++i) s += norm(p[(i + 1) % n] - p[i]);
    return s;
}

bool loop_is_simple(const BoundaryLoop& loop) {
    const auto& p = loop.pts;
    const size_t n = p.size();
    if (n < 3) return false;
    for (size_t i = 0; i < n; ++i) {
        Vec2 a = p[i], b = p[(i + 1) % n];
        if (a == b) return false;
        for (size_t j = i + 1; j < n; ++j) {
            bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
            Vec2 c = p[j], d = p[(j + 1) % n];
            if (adjacent) {
                // consecutive edges may only meet at the shared vertex; a
                // collinear back-fold is a spike
                Vec2 shared = (j == i + 1) ? b : a;
                Vec2 e1 = (j == i + 1) ? a : d;
                Vec2 e2 = (j == i + 1) ? d : a;
                if (geom_detail::orient_sign(e1, shared, e2) == 0 &&
                    dot(e1 - shared, e2 - shared) > 0)
                    return false;
                continue;
            }
            if (segments_intersect(a, b, c, d)) return false;
        }
    }
    return true;
}

bool point_in_loop(const BoundaryLoop& loop, Vec2 p) {
    // even-odd ray cast, half-open in y so shared vertices count once
    bool inside = false;
    const auto& v = loop.pts;
    for (size_t i = 0, n = v.size(); i < n; ++i) {
        Vec2 a = v[i], b = v[(i + 1) % n];
        if ((a.y > p.y) != (b.y > p.y)) {
            double xcross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < xcross) inside = !inside;
        }
    }
    return inside;
}

static bool in_box(Vec2 p, double slack = 1e-12) {
    return std::abs(p.x) <= kBoxHalf + slack && std::abs(p.y) <= kBoxHalf + slack;
}

void validate(const Domain& d) {
    if (d.loops.empty()) throw GeometryError("domain has no loops");
    std::vector<size_t> outers;
    for (size_t li = 0; li < d.loops.size(); ++li) {
        const auto& loop = d.loops[li];
        if (loop.pts.size() < 3)
            throw GeometryError("loop " + std::to_string(li) + " has fewer than 3 vertices");
        for (const auto& p : loop.pts)
            if (!in_box(p))
                throw GeometryError("loop " + std::to_string(li) + " leaves the reference box");
        if (!loop_is_simple(loop))
            throw GeometryError("loop " + std::to_string(li) + " is not simple");
        double sa = signed_area(loop);
        if (loop.kind == LoopKind::Outer && sa <= 0)
            throw GeometryError("outer loop " + std::to_string(li) + " must be counterclockwise");
        if (loop.kind == LoopKind::Hole && sa >= 0)
            throw GeometryError("hole loop " + std::to_string(li) + " must be clockwise");
        if (loop.kind == LoopKind::Outer) outers.push_back(li);
    }
    // loops must be pairwise non-crossing
    for (size_t i = 0; i < d.loops.size(); ++i) {
        for (size_t j = i + 1; j < d.loops.size(); ++j) {
            const auto& pa = d.loops[i].pts;
            const auto& pb = d.loops[j].pts;
            for (size_t s = 0; s < pa.size(); ++s)
                for (size_t t = 0; t < pb.size(); ++t)
                    if (segments_intersect(pa[s], pa[(s + 1) % pa.size()], pb[t],
                                           pb[(t + 1) % pb.size()]))
                        throw GeometryError("loops " + std::to_string(i) + " and " +
                                            std::to_string(j) + " intersect");
        }
    }
    // every hole sits inside exactly one outer loop; outers are disjoint
    for (size_t li = 0; li < d.loops.size(); ++li) {
        const auto& loop = d.loops[li];
        if (loop.kind == LoopKind::Hole) {
            int host = 0;
            for (size_t oi : outers)
                if (point_in_loop(d.loops[oi], loop.pts[0])) ++host;
            if (host != 1)
                throw GeometryError("hole loop " + std::to_string(li) +
                                    " is not inside exactly one outer loop");
        } else {
            for (size_t oi : outers)
                if (oi != li && point_in_loop(d.loops[oi], loop.pts[0]))
                    throw GeometryError("outer loops " + std::to_string(li) + " and " +
                                        std::to_string(oi) + " are nested");
        }
    }
}

double area(const Domain& d) {
    double s = 0;
    for (const auto& loop : d.loops) s += signed_area(loop); // holes are clockwise, negative
    return s;
}

double perimeter(const Domain& d) {
    double s = 0;
    for (const auto& loop : d.loops) s += loop_perimeter(loop);
    return s;
}

Vec2 centroid(const Domain& d) {
    double a6 = 0;
    Vec2 c{0, 0};
    for (const auto& loop : d.loops) {
        const auto& p = loop.pts;
        for (size_t i = 0, n = p.size(); i < n; ++i) {
            const Vec2& u = p[i];
            const Vec2& v = p[(i + 1) % n];
            double w = u.x * v.y - v.x * u.y;
            a6 += w;
            c.x += (u.x + v.x) * w;
            c.y += (u.y + v.y) * w;
        }
    }
    if (a6 == 0) throw GeometryError("degenerate domain: zero area");
    return {c.x / (3 * a6), c.y / (3 * a6)};
}

bool contains_point(const Domain& d, Vec2 p) {
    int crossings = 0;
    for (const auto& loop : d.loops)
        if (point_in_loop(loop, p)) ++crossings;
    return crossings % 2 == 1;
}

// --- random generation ---------------------------------------------------

namespace {

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(),
              [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    size_t n = pts.size();
    if (n < 3) return {};
    std::vector<Vec2> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) { // lower
        while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (size_t i = n - 1, t = k + 1; i-- > 0;) { // upper
        while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

// Star-shaped polygon: order points by angle around their centroid. With
// strictly increasing angles the result is simple; angular ties are resolved
// by dropping the farther point.
std::vector<Vec2> star_polygon(const std::vector<Vec2>& pts) {
    Vec2 c{0, 0};
    for (const auto& p : pts) c = c + p;
    c = c * (1.0 / double(pts.size()));
    struct Ang {
        double angle, r2;
        Vec2 p;
    };
    std::vector<Ang> order;
    order.reserve(pts.size());
    for (const auto& p : pts) {
        Vec2 d = p - c;
        order.push_back({std::atan2(d.y, d.x), dot(d, d), p});
    }
    std::sort(order.begin(), order.end(), [](const Ang& a, const Ang& b) {
        return a.angle < b.angle || (a.angle == b.angle && a.r2 < b.r2);
    });
    std::vector<Vec2> out;
    for (size_t i = 0; i < order.size(); ++i) {
        if (!out.empty() && std::abs(order[i].angle - order[i - 1].angle) < 1e-12)
            continue; // angular tie: keep the nearer point only
        out.push_back(order[i].p);
    }
    return out;
}

void drop_self_intersections(std::vector<Vec2>& poly) {
    BoundaryLoop probe;
    probe.pts = poly;
    while (poly.size() > 3 && !loop_is_simple(probe)) {
        // remove the first vertex participating in a crossing and retry
        bool removed = false;
        size_t n = poly.size();
        for (size_t i = 0; i < n && !removed; ++i) {
            for (size_t j = i + 1; j < n && !removed; ++j) {
                bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
                if (adjacent) continue;
                if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j],
                                       poly[(j + 1) % n])) {
                    poly.erase(poly.begin() + long((j + 1) % n));
                    removed = true;
                }
            }
        }
        if (!removed) break;
        probe.pts = poly;
    }
}

// Closed uniform Catmull-Rom through the polygon vertices, 16 samples per
// segment. Interpolating, so the sampled curve still passes through every
// control point.
std::vector<Vec2> catmull_rom_closed(const std::vector<Vec2>& ctrl, int samples_per_seg) {
    const size_t n = ctrl.size();
    std::vector<Vec2> out;
    out.reserve(n * size_t(samples_per_seg));
    for (size_t i = 0; i < n; ++i) {
        Vec2 p0 = ctrl[(i + n - 1) % n];
        Vec2 p1 = ctrl[i];
        Vec2 p2 = ctrl[(i + 1) % n];
        Vec2 p3 = ctrl[(i + 2) % n];
        for (int s = 0; s < samples_per_seg; ++s) {
            double t = double(s) / samples_per_seg;
            double t2 = t * t, t3 = t2 * t;
            double b0 = -0.5 * t3 + t2 - 0.5 * t;
            double b1 = 1.5 * t3 - 2.5 * t2 + 1.0;
            double b2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
            double b3 = 0.5 * t3 - 0.5 * t2;
            out.push_back(p0 * b0 + p1 * b1 + p2 * b2 + p3 * b3);
        }
    }
    return out;
}

constexpr double kMinGenArea = 1e-3;

} // namespace

Domain random_domain(const GenConfig& cfg, int index, uint64_t salt) {
    cfg.validate();
    if (index < 0 || index >= cfg.count) throw GeometryError("domain index out of range");
    uint64_t master = cfg.seed ^ (salt * 0x9e3779b97f4a7c15ull);
    for (uint64_t attempt = 0;; ++attempt) {
        Rng rng(substream_seed(master, (uint64_t(index) << 20) | attempt));
        int r = rng.uniform_int(cfg.min_vertices, cfg.max_vertices);
        std::vector<Vec2> pts(static_cast<size_t>(r));
        for (auto& p : pts) {
            p.x = rng.uniform(-kBoxHalf, kBoxHalf);
            p.y = rng.uniform(-kBoxHalf, kBoxHalf);
        }
        bool want_spline = rng.bernoulli(cfg.spline_prob);

        std::vector<Vec2> poly = (r <= 5) ? convex_hull(pts) : star_polygon(pts);
        if (poly.size() > 3) drop_self_intersections(poly);

        BoundaryLoop loop;
        loop.pts = poly;
        loop.kind = LoopKind::Outer;
        if (poly.size() < 3 || !loop_is_simple(loop) ||
            std::abs(signed_area(loop)) < kMinGenArea)
            continue; // degenerate draw, next substream

        if (want_spline) {
            BoundaryLoop smooth;
            smooth.pts = catmull_rom_closed(poly, 16);
            smooth.kind = LoopKind::Outer;
            smooth.from_spline = true;
            bool ok = loop_is_simple(smooth) &&
                      std::abs(signed_area(smooth)) >= kMinGenArea &&
                      std::all_of(smooth.pts.begin(), smooth.pts.end(),
                                  [](Vec2 p) { return in_box(p, 0.0); });
            if (ok) loop = std::move(smooth); // else keep the polygon
        }

        if (signed_area(loop) < 0) std::reverse(loop.pts.begin(), loop.pts.end());
        Domain d;
        d.loops.push_back(std::move(loop));
        d.id = uint64_t(index);
        return d;
    }
}

// --- transforms -----------------------------------------------------------

Domain transform(const Domain& d, double angle, Vec2 shift) {
    double ca = std::cos(angle), sa = std::sin(angle);
    Domain out = d;
    for (auto& loop : out.loops)
        for (auto& p : loop.pts) {
            Vec2 q{ca * p.x - sa * p.y, sa * p.x + ca * p.y};
            p = q + shift;
            if (!in_box(p))
                throw GeometryError("transform moves a vertex outside the reference box");
        }
    return out;
}

Domain scale(const Domain& d, double t) {
    if (t <= 0) throw GeometryError("scale factor must be positive");
    Vec2 c = centroid(d);
    Domain out = d;
    for (auto& loop : out.loops)
        for (auto& p : loop.pts) {
            p = c + (p - c) * t;
            if (!in_box(p))
                throw GeometryError("scaling moves a vertex outside the reference box");
        }
    return out;
}

Domain union_disjoint(const Domain& a, const Domain& b) {
    for (const auto& la : a.loops)
        for (const auto& lb : b.loops) {
            for (size_t i = 0; i < la.pts.size(); ++i)
                for (size_t j = 0; j < lb.pts.size(); ++j)
                    if (segments_intersect(la.pts[i], la.pts[(i + 1) % la.pts.size()],
                                           lb.pts[j], lb.pts[(j + 1) % lb.pts.size()]))
                        throw GeometryError("domains overlap: boundary loops intersect");
        }
    if (contains_point(a, b.loops[0].pts[0]) || contains_point(b, a.loops[0].pts[0]))
        throw GeometryError("domains overlap: one contains the other");
    Domain out = a;
    out.loops.insert(out.loops.end(), b.loops.begin(), b.loops.end());
    validate(out);
    return out;
}

// --- primitives ------------------------------------------------------------

static BoundaryLoop circle_loop(Vec2 c, double rx, double ry, int n, bool ccw) {
    BoundaryLoop loop;
    loop.pts.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        double phi = 2.0 * M_PI * i / n;
        if (!ccw) phi = -phi;
        loop.pts.push_back({c.x + rx * std::cos(phi), c.y + ry * std::sin(phi)});
    }
    loop.kind = ccw ? LoopKind::Outer : LoopKind::Hole;
    return loop;
}

Domain disk(double R, Vec2 center, int n) {
    if (R <= 0) throw GeometryError("disk radius must be positive");
    if (n < 3) throw GeometryError("disk needs at least 3 boundary segments");
    Domain d;
    d.loops.push_back(circle_loop(center, R, R, n, true));
    validate(d);
    return d;
}

Domain ellipse(double a, double b, int n) {
    if (a <= 0 || b <= 0) throw GeometryError("ellipse axes must be positive");
    if (n < 3) throw GeometryError("ellipse needs at least 3 boundary segments");
    Domain d;
    d.loops.push_back(circle_loop({0, 0}, a, b, n, true));
    validate(d);
    return d;
}

Domain annulus(double r_in, double R_out, Vec2 inner_offset, int n) {
    if (r_in <= 0 || R_out <= 0) throw GeometryError("annulus radii must be positive");
    if (norm(inner_offset) + r_in >= R_out)
        throw GeometryError("annulus hole must lie strictly inside the outer circle");
    Domain d;
    d.loops.push_back(circle_loop({0, 0}, R_out, R_out, n, true));
    d.loops.push_back(circle_loop(inner_offset, r_in, r_in, n, false));
    validate(d);
    return d;
}

Domain regular_polygon(int k, double circumradius) {
    if (k < 3) throw GeometryError("regular polygon needs at least 3 vertices");
    if (circumradius <= 0) throw GeometryError("circumradius must be positive");
    BoundaryLoop loop;
    for (int i = 0; i < k; ++i) {
        double phi = M_PI / 2 + 2.0 * M_PI * i / k;
        loop.pts.push_back({circumradius * std::cos(phi), circumradius * std::sin(phi)});
    }
    loop.kind = LoopKind::Outer;
    Domain d;
    d.loops.push_back(std::move(loop));
    validate(d);
    return d;
}

Domain rectangle(double w, double h) {
    if (w <= 0 || h <= 0) throw GeometryError("rectangle sides must be positive");
    BoundaryLoop loop;
    loop.pts = {{-w / 2, -h / 2}, {w / 2, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2}};
    loop.kind = LoopKind::Outer;
    Domain d;
    d.loops.push_back(std::move(loop));
    validate(d);
    return d;
}

// --- serialization ----------------------------------------------------------

void write_domain(std::ostream& os, const Domain& d) {
    for (const auto& loop : d.loops) {
        os << "loop " << loop.pts.size() << ' '
           << (loop.kind == LoopKind::Outer ? "outer" : "hole") << '\n';
        for (const auto& p : loop.pts)
            os << fmt_full(p.x) << ' ' << fmt_full(p.y) << '\n';
    }
}

Domain read_domain(std::istream& is) {
    Domain d;
    std::string tok;
    while (is >> tok) {
        if (tok != "loop") throw GeometryError("domain file: expected 'loop' header");
        size_t n = 0;
        std::string kind;
        if (!(is >> n >> kind)) throw GeometryError("domain file: bad loop header");
        BoundaryLoop loop;
        if (kind == "outer")
            loop.kind = LoopKind::Outer;
        else if (kind == "hole")
            loop.kind = LoopKind::Hole;
        else
            throw GeometryError("domain file: loop kind must be outer|hole");
        loop.pts.resize(n);
        for (auto& p : loop.pts)
            if (!(is >> p.x >> p.y)) throw GeometryError("domain file: truncated vertex list");
        d.loops.push_back(std::move(loop));
    }
    validate(d);
    return d;
}

void save_domain(const Domain& d, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_domain(os, d);
}

Domain load_domain(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    return read_domain(is);
}

} // namespace torsion
