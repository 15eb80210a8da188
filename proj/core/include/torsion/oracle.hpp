#pragma once

#include <stdexcept>
#include <string>

namespace torsion {

struct OracleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PropertyReport {
    std::string property;
    int checked = 0;
    int violations = 0;
    double worst_rel_deviation = 0;
};

// closed forms for the few domains that have one
double torsion_disk(double R);              // pi R^4 / 8
double torsion_ellipse(double a, double b); // (pi/8) 2 a^3 b^3 / (a^2 + b^2)
double torsion_annulus(double r, double R); // (pi/8) [(R^4-r^4) - (R^2-r^2)^2/log(R/r)]

// disk value at equal area: T(any domain) <= area^2 / (8 pi)
double saint_venant_bound(double area);

// dilation law T(tΩ) = t^4 T(Ω)
double scaling_predict(double T, double t);

// T/A^2 of the regular pentagon. No closed form exists; computed once by the
// solver with Richardson extrapolation and cached to a small text file.
// cache_path may be empty (compute every call).
double pentagon_coefficient(const std::string& cache_path = "");

} // namespace torsion
