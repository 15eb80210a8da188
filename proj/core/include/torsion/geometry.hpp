#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace torsion {

struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    double x = 0, y = 0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

// Reference box: every domain lives in Q = [-2,2]^2.
inline constexpr double kBoxHalf = 2.0;

enum class LoopKind { Outer, Hole };

// Closed simple polyline. Vertices are stored without repeating the first
// point; the closing segment is implicit. Outer loops are counterclockwise,
// holes clockwise.
struct BoundaryLoop {
    std::vector<Vec2> pts;
    LoopKind kind = LoopKind::Outer;
    bool from_spline = false;
};

struct Domain {
    std::vector<BoundaryLoop> loops;
    uint64_t id = 0;
};

struct GenConfig {
    int min_vertices = 3;
    int max_vertices = 20;
    double spline_prob = 0.5;
    uint64_t seed = 1;
    int count = 1;

    void validate() const;
};

// signed shoelace area of one loop (positive when counterclockwise)
double signed_area(const BoundaryLoop& loop);
double loop_perimeter(const BoundaryLoop& loop);
bool loop_is_simple(const BoundaryLoop& loop);
bool point_in_loop(const BoundaryLoop& loop, Vec2 p);

// Simplicity, orientation convention, hole containment, box containment.
// Throws GeometryError with the offending loop index on violation.
void validate(const Domain& d);

double area(const Domain& d);
double perimeter(const Domain& d);
Vec2 centroid(const Domain& d); // area centroid, holes weighted negatively
bool contains_point(const Domain& d, Vec2 p); // even-odd over all loops

// One random simple domain, a pure function of (cfg.seed, index). A nonzero
// salt selects an independent redraw stream for the same index (used when a
// downstream stage rejects the domain).
Domain random_domain(const GenConfig& cfg, int index, uint64_t salt = 0);

Domain transform(const Domain& d, double angle, Vec2 shift);
Domain scale(const Domain& d, double t);
Domain union_disjoint(const Domain& a, const Domain& b);

Domain disk(double R, Vec2 center, int n);
Domain ellipse(double a, double b, int n);
Domain annulus(double r_in, double R_out, Vec2 inner_offset, int n);
Domain regular_polygon(int k, double circumradius);
Domain rectangle(double w, double h);

// Plain-text serialization: per loop a "loop <n> <outer|hole>" header
// followed by n "x y" lines at full precision.
void write_domain(std::ostream& os, const Domain& d);
Domain read_domain(std::istream& is);
void save_domain(const Domain& d, const std::string& path);
Domain load_domain(const std::string& path);

namespace geom_detail {
bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d);
}

} // namespace torsion
