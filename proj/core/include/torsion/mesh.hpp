#pragma once

#include <array>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "torsion/geometry.hpp"

namespace torsion {

struct MeshError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TriMesh {
    std::vector<Vec2> vertices;
    std::vector<std::array<int, 3>> triangles; // counterclockwise
    std::vector<uint8_t> boundary;             // 1 when the vertex lies on the domain boundary
    double target_h = 0;

    double total_area() const;
    int interior_count() const;
};

// Target circumradius as a function of position. With near_h > 0 the bound
// shrinks toward the given hole edges: h(x) = min(h, near_h + grade*dist).
struct SizeField {
    double h = 0.02;
    double near_h = 0;
    double grade = 0.5;
    std::vector<std::pair<Vec2, Vec2>> hole_edges;

    double at(Vec2 p) const;

    static SizeField uniform(double h);
    // grading derived from the domain's hole loops (uniform when none)
    static SizeField for_domain(const Domain& d, double h);
};

TriMesh triangulate(const Domain& d, double h);
TriMesh triangulate(const Domain& d, const SizeField& size);

// debug dump: `v x y` / `t i j k` / `b i` records
void dump_mesh(std::ostream& os, const TriMesh& m);

} // namespace torsion
