#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "zmfc/linalg.hpp"
#include "zmfc/model.hpp"

namespace zmfc::measures {

// M particles, each carrying a filter state x in R^N_+, an observation state
// y in R^d and a current control a in R^D. Flat struct-of-arrays storage.
struct ParticleCloud {
    std::size_t count = 0;   // M
    std::size_t dim_x = 0;   // N
    std::size_t dim_y = 0;   // d
    std::size_t dim_a = 0;   // D
    double t = 0.0;
    Vec x;  // count * dim_x
    Vec y;  // count * dim_y
    Vec a;  // count * dim_a

    static ParticleCloud uniform(std::size_t count, std::span<const double> x0,
                                 std::span<const double> y0, std::size_t dim_a, double t);

    std::span<double> x_at(std::size_t i) { return {x.data() + i * dim_x, dim_x}; }
    std::span<const double> x_at(std::size_t i) const { return {x.data() + i * dim_x, dim_x}; }
    std::span<double> y_at(std::size_t i) { return {y.data() + i * dim_y, dim_y}; }
    std::span<const double> y_at(std::size_t i) const { return {y.data() + i * dim_y, dim_y}; }
    std::span<double> a_at(std::size_t i) { return {a.data() + i * dim_a, dim_a}; }
    std::span<const double> a_at(std::size_t i) const { return {a.data() + i * dim_a, dim_a}; }

    double mass(std::size_t i) const {
        double s = 0.0;
        for (std::size_t j = 0; j < dim_x; ++j) s += x[i * dim_x + j];
        return s;
    }

    // Smallest filter component over all particles; >= 0 is an invariant.
    double min_x_component() const;
    // Mean and standard error of the particle masses <x_i, 1>.
    struct MassStats { double mean; double stderr_; };
    MassStats mass_stats() const;
};

// Atoms on (y, a) or on (y) alone with nonnegative weights summing to one.
struct WeightedPointMeasure {
    std::size_t count = 0;
    std::size_t dim_y = 0;
    std::size_t dim_a = 0;  // 0 for a y-marginal measure
    Vec y;                  // count * dim_y
    Vec a;                  // count * dim_a
    Vec weights;            // count, normalized

    bool has_controls() const { return dim_a > 0; }
    std::span<const double> y_at(std::size_t i) const { return {y.data() + i * dim_y, dim_y}; }
    std::span<const double> a_at(std::size_t i) const { return {a.data() + i * dim_a, dim_a}; }
};

// Gamma(pi): atoms (y_i, a_i) weighted by <x_i,1> / sum_j <x_j,1>. The particle
// realization of E[<X,1> | (Y,alpha) = (y,a)] P_{Y,alpha}. Weight construction
// uses the fixed pairwise reduction so results are thread-count independent.
// Throws Error("ZeroTotalMass") when all filter mass vanished.
WeightedPointMeasure gamma_measure(const ParticleCloud& cloud);

// Gamma_1(mu): the same reweighting marginalized to y.
WeightedPointMeasure gamma1_measure(const ParticleCloud& cloud);

// sum_i w_i psi(y_i, a_i) for the requested statistic; covariance returns the
// centered second moment entry. Throws Error("DimensionMismatch").
double eval_stat(const WeightedPointMeasure& measure, const model::StatSpec& stat,
                 std::span<const double> a0);

// Values of all statistics of a coefficient, in declaration order.
Vec eval_stats(const WeightedPointMeasure& measure, const std::vector<model::StatSpec>& stats,
               std::span<const double> a0);

enum class NormOn { X, Y };

// (mean_i |v_i|^order)^(1/order) over particle states; the empirical analog of
// the a priori moment bounds.
double empirical_norm(const ParticleCloud& cloud, double order, NormOn on = NormOn::X);

// CSV dump with columns t, particle_id, x_1..x_N, y_1..y_d, a_1..a_D.
void write_csv_header(std::ostream& os, const ParticleCloud& cloud);
void write_csv_rows(std::ostream& os, const ParticleCloud& cloud);

} // namespace zmfc::measures
