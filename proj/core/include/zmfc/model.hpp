#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zmfc/errors.hpp"
#include "zmfc/linalg.hpp"

namespace zmfc::model {

// Hidden-chain description: state count N, generator matrix and initial law.
struct RegimeModel {
    std::size_t n_states = 0;      // N
    Mat rate_matrix;               // Lambda, N x N, units 1/time
    Vec initial_dist;              // pi_0

    void validate() const;
};

// ok iff off-diagonals >= 0 and every row sums to 0 within 1e-12 absolute.
// Throws Error("NegativeRate") / Error("RowSumNonzero").
void validate_rate_matrix(const Mat& lambda);

// Marginal law p(t) of the chain, solving dp/dt = Lambda^T p from p(0) = pi_0
// by classical RK4 with step <= 1e-3 * (1 + t). Entries are clamped at zero
// (they may undershoot by at most 1e-10) and renormalized to sum 1.
Vec regime_marginal(const RegimeModel& regime, double t);

// Same forward equation started from an arbitrary probability vector.
Vec regime_marginal_from(const RegimeModel& regime, Vec p0, double t);

// Box control set A in R^D with Euclidean metric. Bounded by construction.
struct ControlSpace {
    std::size_t dim = 0;  // D
    Vec lower;
    Vec upper;
    Vec reference;        // a_0, used as the base point of the W_q norms

    void validate() const;
    void clamp(std::span<double> a) const;
    double metric(std::span<const double> a, std::span<const double> b) const;
    double max_distance_to_reference() const;
};

// One statistic of a weighted point measure on (y, a) or on (y) alone.
struct StatSpec {
    enum class Kind { MeanComponent, Moment, Covariance, PsiExpectation };

    Kind kind = Kind::MeanComponent;
    std::size_t index_i = 0;   // MeanComponent: index into (y_1..y_d, a_1..a_D); Covariance: row
    std::size_t index_j = 0;   // Covariance: column
    double gamma = 1.0;        // Moment: order
    std::string psi_id;        // PsiExpectation: "y_power" | "a_power" | "norm_y_power"
    std::size_t psi_index = 0; // PsiExpectation: component for y_power / a_power
    double psi_order = 1.0;    // PsiExpectation: growth order m

    // Polynomial growth order m of the underlying test function.
    double growth_order() const;
    // True when the statistic reads control atoms and is meaningless on a
    // y-marginal measure.
    bool needs_controls(std::size_t dim_d) const;
};

// Declarative cylindrical coefficient. The catalog is closed on purpose: every
// form has known boundedness / growth properties, so the standing assumptions
// can be machine-checked instead of trusted.
//
// Forms by kind:
//   h:     "constant"       h(y,nu,a,i) = regime_params[i]            (R^d)
//          "tanh_linear"    h_k = amp_k(i) * tanh(b(i) + wy.y + wa.a + wz.z)
//          "liquidation_h"  h = (-a_1/eps, (m_i - nu * z_1)/gamma_vol)
//   f:     "constant"       f = c(i)
//          "polynomial"     f = c0(i) + lin(i).y + quad(i).y^2 + wa.a + wz.z
//          "liquidation_f"  f = a_1 * (y_2 - eta * a_1)
//   g:     "constant", "polynomial" (no control terms), and
//          "liquidation_g"  g = -theta * y_1^2
//   sigma: "constant"       fixed invertible d x d matrix
//          "diag_tanh"      sigma_kk(y) = base_k + amp_k * tanh(y_k),
//                           requires base_k - |amp_k| > 0
// z denotes the vector of StatSpec values of the measure argument.
struct CoefficientSpec {
    enum class Kind { H, F, G, Sigma };

    Kind kind = Kind::H;
    std::string form;
    std::vector<StatSpec> stats;
    std::vector<Vec> regime_params;      // length N (unused for sigma)
    std::map<std::string, double> scalar;
    std::map<std::string, Vec> vectors;  // form-specific vectors: "w_y", "w_a", "w_z", ...
    Mat matrix;                          // sigma "constant"
    double bound = 0.0;                  // declared sup bound, h only

    bool is_mean_field() const { return !stats.empty(); }
    double scalar_at(const std::string& key) const;
    const Vec& vector_at(const std::string& key) const;
};

// Integrability/growth exponents of the standing assumptions.
struct GrowthParams {
    double p = 2.0;
    double r = 2.0;
    double q = 1.0;
    double ell = 0.0;
    double chi_exponent = 1.0;  // chi(z) = z^chi_exponent
};

struct ModelSpec;

// Compiled, allocation-free evaluator for one CoefficientSpec; built once and
// then hit millions of times per run.
class Coefficient {
public:
    Coefficient() = default;
    static Coefficient compile(const CoefficientSpec& spec, std::size_t n_states,
                               std::size_t dim_d, const ControlSpace& controls);

    // h: writes the N x d matrix (row per regime).
    void eval_h(std::span<const double> y, std::span<const double> z,
                std::span<const double> a, Mat& out) const;
    // f: scalar per regime.
    double eval_f(std::span<const double> y, std::span<const double> z,
                  std::span<const double> a, std::size_t regime) const;
    // g: scalar per regime, y-marginal measure.
    double eval_g(std::span<const double> y, std::span<const double> z,
                  std::size_t regime) const;
    // sigma: writes the d x d matrix.
    void eval_sigma(std::span<const double> y, Mat& out) const;

    const std::vector<StatSpec>& stats() const { return spec_.stats; }
    const CoefficientSpec& spec() const { return spec_; }
    double bound() const { return spec_.bound; }

private:
    enum class Form {
        Constant,
        TanhLinear,
        LiquidationH,
        Polynomial,
        LiquidationF,
        LiquidationG,
        SigmaConstant,
        SigmaDiagTanh,
    };

    double poly_value(std::span<const double> y, std::span<const double> z,
                      std::span<const double> a, std::size_t regime) const;

    CoefficientSpec spec_;
    Form form_ = Form::Constant;
    std::size_t n_ = 0, d_ = 0, dim_a_ = 0;
    Vec w_y_, w_a_, w_z_;
    double p1_ = 0.0, p2_ = 0.0, p3_ = 0.0;
    Vec diag_base_, diag_amp_;
};

// Full problem data for the separated system.
struct ModelSpec {
    std::size_t dim_d = 0;  // observation dimension
    RegimeModel regime;
    ControlSpace controls;
    CoefficientSpec h_spec, f_spec, g_spec, sigma_spec;
    GrowthParams growth;
    Vec y0;
    bool is_mean_field = false;

    Coefficient h, f, g, sigma;  // compiled evaluators, set by finalize()

    // Validates dimensions and regimes, derives is_mean_field and the h bound,
    // and compiles the evaluators. Must be called before simulation.
    void finalize();
};

// Throws Error("GrowthIncompatible") naming the violated inequality; checks
// the exponent inequalities and the stat orders carried by the h spec.
void validate_growth(const ModelSpec& spec);

// Optimal liquidation scenario: Y = (I, P), inventory and impacted price.
struct LiquidationParams {
    double eps = 1.0;        // inventory noise, > 0
    double gamma_vol = 1.0;  // price volatility, > 0
    double nu = 0.0;         // permanent impact, >= 0
    double eta_cost = 0.0;   // temporary impact, >= 0
    double theta_pen = 0.0;  // terminal inventory penalty, >= 0
    Vec regime_drifts;       // price drift per regime, length N
    double I0 = 1.0;         // initial inventory
    double P0_init = 0.0;    // initial reference price
    double alpha_max = 1.0;  // control bound, A = [0, alpha_max]

    void validate(std::size_t n_states) const;
};

ModelSpec build_liquidation(const LiquidationParams& params, const RegimeModel& regime);

} // namespace zmfc::model
