#pragma once

#include <string>
#include <vector>

#include "zmfc/linalg.hpp"
#include "zmfc/measures.hpp"
#include "zmfc/model.hpp"
#include "zmfc/sim.hpp"

namespace zmfc::hjb {

// Sparse multivariate polynomial with closed-form gradient and Hessian.
struct Poly {
    struct Term {
        double coef = 0.0;
        std::vector<unsigned> exps;  // one exponent per variable
    };

    std::size_t n_vars = 0;
    std::vector<Term> terms;

    static Poly zero(std::size_t n_vars) { return Poly{n_vars, {}}; }
    static Poly monomial(std::size_t n_vars, std::size_t var, unsigned power, double coef);

    Poly& add_term(double coef, std::vector<unsigned> exps);
    double eval(std::span<const double> v) const;
    void grad(std::span<const double> v, std::span<double> out) const;
    void hess(std::span<const double> v, Mat& out) const;
    unsigned degree() const;
};

// Cylindrical function of a measure: v(t, mu) = F(z_1, ..., z_k) with
// z_j = integral of psi_j(x, y) against mu. F is a polynomial in z (time
// independent, so d/dt v = 0), the inners psi_j are polynomials in (x, y) of
// degree at most 4. Construction self-tests the closed-form derivatives of the
// inners against central finite differences (1e-6 relative) and throws
// Error("DerivativeSelfTest") on disagreement.
class CylindricalTestFn {
public:
    CylindricalTestFn() = default;
    CylindricalTestFn(std::string id, Poly outer, std::vector<Poly> inners, std::size_t n_states,
                      std::size_t dim_d);

    const std::string& id() const { return id_; }
    std::size_t n_inners() const { return inners_.size(); }
    std::size_t n_states() const { return n_; }
    std::size_t dim_d() const { return d_; }

    // z-bar: plain empirical means (1/M) sum_i psi_j(x_i, y_i).
    Vec inner_means(const measures::ParticleCloud& cloud) const;
    double value_at(std::span<const double> zbar) const;
    double value(double t, const measures::ParticleCloud& cloud) const;

    // Flat derivative delta_m v(mu; x, y) = sum_j dF/dz_j (zbar) psi_j(x, y).
    double lfd_at(std::span<const double> zbar, std::span<const double> x,
                  std::span<const double> y) const;

    // Outer partials at zbar, one per inner.
    Vec outer_partials(std::span<const double> zbar) const;
    // (x,y)-gradient and Hessian of delta_m v at fixed zbar weights.
    void lfd_grad(std::span<const double> partials, std::span<const double> x,
                  std::span<const double> y, std::span<double> out) const;
    void lfd_hess(std::span<const double> partials, std::span<const double> x,
                  std::span<const double> y, Mat& out) const;

    // Standard catalog entries.
    static CylindricalTestFn mass(std::size_t n_states, std::size_t dim_d);
    static CylindricalTestFn mass_squared(std::size_t n_states, std::size_t dim_d);
    static CylindricalTestFn y_moment(std::size_t n_states, std::size_t dim_d,
                                      std::size_t component, unsigned power);
    static CylindricalTestFn zero_fn(std::size_t n_states, std::size_t dim_d);
    static CylindricalTestFn by_id(const std::string& id, std::size_t n_states,
                                   std::size_t dim_d);

private:
    std::string id_;
    Poly outer_;
    std::vector<Poly> inners_;
    std::size_t n_ = 0, d_ = 0;
};

// delta_m v(t, mu-hat; x, y) for the empirical law of the cloud.
double lfd_value(const CylindricalTestFn& v, double t, const measures::ParticleCloud& cloud,
                 std::span<const double> x, std::span<const double> y);

// The four trace terms of L^a v plus the running-reward term, averaged over
// the cloud. Controls are the per-particle a carried by the cloud; h and f are
// evaluated at Gamma of the current cloud together with those controls.
struct GeneratorBreakdown {
    double drift_term = 0.0;
    double xx_term = 0.0;
    double xy_term = 0.0;
    double yy_term = 0.0;
    double f_term = 0.0;

    double total() const { return drift_term + xx_term + xy_term + yy_term + f_term; }
    double total_without_f() const { return drift_term + xx_term + xy_term + yy_term; }
};

GeneratorBreakdown generator_apply(const CylindricalTestFn& v, double t,
                                   const measures::ParticleCloud& cloud,
                                   const model::ModelSpec& model);

// | v(T, mu_T) - v(t0, mu_0) - sum_k L v dt | along a trajectory recorded at
// every step; the running-reward term is excluded (the Ito formula has none).
struct ItoResidual {
    double residual = 0.0;
    Vec pathwise_series;  // partial residual at every recorded time
};
ItoResidual ito_residual(const CylindricalTestFn& v, const sim::Trajectory& trajectory,
                         const model::ModelSpec& model);

// Maximizes the generator total (including the f term) over controls constant
// across particles, drawn from a finite grid. Ties break to the lowest index.
// Throws Error("EmptyGrid") on an empty grid.
struct HamiltonianResult {
    double best_value = 0.0;
    Vec best_control;
    std::size_t best_index = 0;
};
HamiltonianResult hamiltonian(const CylindricalTestFn& w, double t,
                              const measures::ParticleCloud& cloud,
                              const model::ModelSpec& model, const std::vector<Vec>& control_grid);

// | w(T, mu-hat) - mean_i <x_i, g(y_i, Gamma_1(mu-hat))> |.
double terminal_residual(const CylindricalTestFn& w, const measures::ParticleCloud& cloud,
                         const model::ModelSpec& model);

// Cylindrical functional matching the terminal condition of the configured g:
// psi(x, y) = <x, g(y, .)>. Requires a g without measure statistics.
CylindricalTestFn make_matched_terminal(const model::ModelSpec& model);

} // namespace zmfc::hjb
