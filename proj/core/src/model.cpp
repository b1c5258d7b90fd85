#include "zmfc/model.hpp"

#include <algorithm>
#include <cmath>

namespace zmfc::model {

namespace {

constexpr double kRateTol = 1e-12;     // row sums in double precision
constexpr double kProbTol = 1e-12;
constexpr double kMarginalFloor = -1e-10;

void check_finite(std::span<const double> v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw Error("NonFinite", what + " contains a non-finite entry");
}

} // namespace

void validate_rate_matrix(const Mat& lambda) {
    if (lambda.rows != lambda.cols) throw Error("NotSquare", "rate matrix must be square");
    for (std::size_t i = 0; i < lambda.rows; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < lambda.cols; ++j) {
            if (i != j && lambda(i, j) < 0.0)
                throw Error("NegativeRate", "off-diagonal rate lambda(" + std::to_string(i) +
                                                "," + std::to_string(j) + ") is negative");
            row_sum += lambda(i, j);
        }
        if (std::abs(row_sum) > kRateTol)
            throw Error("RowSumNonzero", "row " + std::to_string(i) + " of the rate matrix sums to " +
                                             std::to_string(row_sum));
    }
}

void RegimeModel::validate() const {
    if (n_states == 0) throw Error("BadDimension", "regime model needs at least one state");
    if (rate_matrix.rows != n_states || rate_matrix.cols != n_states)
        throw Error("BadDimension", "rate matrix shape does not match n_states");
    validate_rate_matrix(rate_matrix);
    if (initial_dist.size() != n_states)
        throw Error("BadDimension", "initial distribution length does not match n_states");
    double total = 0.0;
    for (double p : initial_dist) {
        if (p < 0.0) throw Error("BadDistribution", "initial distribution has a negative entry");
        total += p;
    }
    if (std::abs(total - 1.0) > kProbTol)
        throw Error("BadDistribution", "initial distribution sums to " + std::to_string(total));
}

Vec regime_marginal_from(const RegimeModel& regime, Vec p0, double t) {
    if (t < 0.0) throw Error("BadTime", "regime_marginal requires t >= 0");
    const std::size_t n = regime.n_states;
    const Mat lt = transpose(regime.rate_matrix);
    if (t > 0.0) {
        const double hmax = 1e-3 * (1.0 + t);
        const std::size_t steps = static_cast<std::size_t>(std::ceil(t / hmax));
        const double h = t / static_cast<double>(steps);
        Vec k1(n), k2(n), k3(n), k4(n), tmp(n);
        for (std::size_t s = 0; s < steps; ++s) {
            matvec(lt, p0, k1);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = p0[i] + 0.5 * h * k1[i];
            matvec(lt, tmp, k2);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = p0[i] + 0.5 * h * k2[i];
            matvec(lt, tmp, k3);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = p0[i] + h * k3[i];
            matvec(lt, tmp, k4);
            for (std::size_t i = 0; i < n; ++i)
                p0[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    double total = 0.0;
    for (double& p : p0) {
        if (p < kMarginalFloor)
            throw Error("MarginalNegative", "forward equation produced entry " + std::to_string(p));
        p = std::max(p, 0.0);
        total += p;
    }
    for (double& p : p0) p /= total;
    return p0;
}

Vec regime_marginal(const RegimeModel& regime, double t) {
    return regime_marginal_from(regime, regime.initial_dist, t);
}

void ControlSpace::validate() const {
    if (dim == 0) throw Error("BadDimension", "control space needs dim >= 1");
    if (lower.size() != dim || upper.size() != dim || reference.size() != dim)
        throw Error("BadDimension", "control bounds/reference length does not match dim");
    for (std::size_t k = 0; k < dim; ++k) {
        if (!(lower[k] < upper[k]))
            throw Error("BadBounds", "control bounds must satisfy lower < upper componentwise");
        if (reference[k] < lower[k] || reference[k] > upper[k])
            throw Error("BadBounds", "control reference point lies outside the box");
    }
}

void ControlSpace::clamp(std::span<double> a) const {
    for (std::size_t k = 0; k < dim; ++k) a[k] = std::clamp(a[k], lower[k], upper[k]);
}

double ControlSpace::metric(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

double ControlSpace::max_distance_to_reference() const {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        const double m = std::max(upper[k] - reference[k], reference[k] - lower[k]);
        s += m * m;
    }
    return std::sqrt(s);
}

double StatSpec::growth_order() const {
    switch (kind) {
        case Kind::MeanComponent: return 1.0;
        case Kind::Moment: return gamma;
        case Kind::Covariance: return 2.0;
        case Kind::PsiExpectation: return psi_order;
    }
    return 1.0;
}

bool StatSpec::needs_controls(std::size_t dim_d) const {
    switch (kind) {
        case Kind::MeanComponent: return index_i >= dim_d;
        case Kind::Moment: return false;  // d(a, a0) contributes 0 on a y-marginal
        case Kind::Covariance: return false;
        case Kind::PsiExpectation: return psi_id == "a_power";
    }
    return false;
}

double CoefficientSpec::scalar_at(const std::string& key) const {
    const auto it = scalar.find(key);
    if (it == scalar.end())
        throw Error("MissingParam", "coefficient form '" + form + "' needs scalar '" + key + "'");
    return it->second;
}

const Vec& CoefficientSpec::vector_at(const std::string& key) const {
    const auto it = vectors.find(key);
    if (it == vectors.end())
        throw Error("MissingParam", "coefficient form '" + form + "' needs vector '" + key + "'");
    return it->second;
}

Coefficient Coefficient::compile(const CoefficientSpec& spec, std::size_t n_states,
                                 std::size_t dim_d, const ControlSpace& controls) {
    Coefficient c;
    c.spec_ = spec;
    c.n_ = n_states;
    c.d_ = dim_d;
    c.dim_a_ = controls.dim;

    auto require_regimes = [&](std::size_t len) {
        if (spec.regime_params.size() != n_states)
            throw Error("BadDimension",
                        "coefficient '" + spec.form + "' needs one parameter row per regime");
        for (const auto& row : spec.regime_params) {
            if (row.size() != len)
                throw Error("BadDimension", "coefficient '" + spec.form + "' regime rows must have " +
                                                std::to_string(len) + " entries");
            check_finite(row, "regime params");
        }
    };

    using K = CoefficientSpec::Kind;
    if (spec.kind == K::H) {
        if (spec.form == "constant") {
            c.form_ = Form::Constant;
            require_regimes(dim_d);
            if (!spec.stats.empty())
                throw Error("BadSpec", "constant h cannot consume measure statistics");
            double b = 0.0;
            for (const auto& row : spec.regime_params) b = std::max(b, norm2(row));
            c.spec_.bound = std::max(spec.bound, b);
        } else if (spec.form == "tanh_linear") {
            c.form_ = Form::TanhLinear;
            require_regimes(dim_d + 1);  // amplitudes then bias
            c.w_y_ = spec.vectors.count("w_y") ? spec.vector_at("w_y") : Vec(dim_d, 0.0);
            c.w_a_ = spec.vectors.count("w_a") ? spec.vector_at("w_a") : Vec(controls.dim, 0.0);
            c.w_z_ = spec.vectors.count("w_z") ? spec.vector_at("w_z") : Vec(spec.stats.size(), 0.0);
            if (c.w_y_.size() != dim_d || c.w_a_.size() != controls.dim ||
                c.w_z_.size() != spec.stats.size())
                throw Error("BadDimension", "tanh_linear weight vectors have wrong length");
            double b = 0.0;
            for (const auto& row : spec.regime_params) {
                double s = 0.0;
                for (std::size_t k = 0; k < dim_d; ++k) s += row[k] * row[k];
                b = std::max(b, std::sqrt(s));
            }
            c.spec_.bound = std::max(spec.bound, b);
        } else if (spec.form == "liquidation_h") {
            c.form_ = Form::LiquidationH;
            if (dim_d != 2 || controls.dim != 1)
                throw Error("BadDimension", "liquidation_h needs d = 2 and a scalar control");
            require_regimes(1);  // per-regime price drift m_i
            c.p1_ = spec.scalar_at("eps");
            c.p2_ = spec.scalar_at("gamma_vol");
            c.p3_ = spec.scalar_at("nu");
            if (c.p1_ <= 0.0 || c.p2_ <= 0.0)
                throw Error("BadSpec", "liquidation_h needs eps > 0 and gamma_vol > 0");
            if ((c.p3_ != 0.0) != (spec.stats.size() == 1))
                throw Error("BadSpec", "liquidation_h consumes the mean control iff nu != 0");
            const double amax = std::max(std::abs(controls.lower[0]), std::abs(controls.upper[0]));
            double mmax = 0.0;
            for (const auto& row : spec.regime_params) mmax = std::max(mmax, std::abs(row[0]));
            const double b1 = amax / c.p1_;
            const double b2 = (mmax + std::abs(c.p3_) * amax) / c.p2_;
            c.spec_.bound = std::max(spec.bound, std::sqrt(b1 * b1 + b2 * b2));
        } else {
            throw Error("UnknownForm", "unknown h form '" + spec.form + "'");
        }
    } else if (spec.kind == K::F || spec.kind == K::G) {
        const bool is_f = spec.kind == K::F;
        if (spec.form == "constant") {
            c.form_ = Form::Constant;
            require_regimes(1);
            if (!spec.stats.empty())
                throw Error("BadSpec", "constant f/g cannot consume measure statistics");
        } else if (spec.form == "polynomial") {
            c.form_ = Form::Polynomial;
            require_regimes(1 + 2 * dim_d);  // c0, linear in y, quadratic in y
            c.w_a_ = spec.vectors.count("w_a") ? spec.vector_at("w_a") : Vec(controls.dim, 0.0);
            c.w_z_ = spec.vectors.count("w_z") ? spec.vector_at("w_z") : Vec(spec.stats.size(), 0.0);
            if (c.w_a_.size() != controls.dim || c.w_z_.size() != spec.stats.size())
                throw Error("BadDimension", "polynomial weight vectors have wrong length");
            if (!is_f)
                for (double w : c.w_a_)
                    if (w != 0.0) throw Error("BadSpec", "g cannot depend on the control");
        } else if (is_f && spec.form == "liquidation_f") {
            c.form_ = Form::LiquidationF;
            if (dim_d != 2 || controls.dim != 1)
                throw Error("BadDimension", "liquidation_f needs d = 2 and a scalar control");
            c.p1_ = spec.scalar_at("eta");
        } else if (!is_f && spec.form == "liquidation_g") {
            c.form_ = Form::LiquidationG;
            if (dim_d != 2) throw Error("BadDimension", "liquidation_g needs d = 2");
            c.p1_ = spec.scalar_at("theta");
        } else {
            throw Error("UnknownForm", "unknown " + std::string(is_f ? "f" : "g") + " form '" +
                                           spec.form + "'");
        }
    } else {  // Sigma
        if (spec.form == "constant") {
            c.form_ = Form::SigmaConstant;
            if (spec.matrix.rows != dim_d || spec.matrix.cols != dim_d)
                throw Error("BadDimension", "sigma matrix must be d x d");
            if (std::abs(determinant(spec.matrix)) < 1e-12)
                throw Error("SingularSigma", "constant sigma must be invertible");
        } else if (spec.form == "diag_tanh") {
            c.form_ = Form::SigmaDiagTanh;
            c.diag_base_ = spec.vector_at("base");
            c.diag_amp_ = spec.vector_at("amp");
            if (c.diag_base_.size() != dim_d || c.diag_amp_.size() != dim_d)
                throw Error("BadDimension", "diag_tanh base/amp must have length d");
            for (std::size_t k = 0; k < dim_d; ++k)
                if (c.diag_base_[k] - std::abs(c.diag_amp_[k]) <= 0.0)
                    throw Error("SingularSigma",
                                "diag_tanh entries must stay bounded away from zero");
        } else {
            throw Error("UnknownForm", "unknown sigma form '" + spec.form + "'");
        }
    }
    return c;
}

void Coefficient::eval_h(std::span<const double> y, std::span<const double> z,
                         std::span<const double> a, Mat& out) const {
    switch (form_) {
        case Form::Constant:
            for (std::size_t i = 0; i < n_; ++i) {
                const Vec& row = spec_.regime_params[i];
                for (std::size_t k = 0; k < d_; ++k) out(i, k) = row[k];
            }
            return;
        case Form::TanhLinear: {
            double inner = 0.0;
            for (std::size_t k = 0; k < d_; ++k) inner += w_y_[k] * y[k];
            for (std::size_t k = 0; k < dim_a_; ++k) inner += w_a_[k] * a[k];
            for (std::size_t j = 0; j < w_z_.size(); ++j) inner += w_z_[j] * z[j];
            for (std::size_t i = 0; i < n_; ++i) {
                const Vec& row = spec_.regime_params[i];
                const double t = std::tanh(inner + row[d_]);
                for (std::size_t k = 0; k < d_; ++k) out(i, k) = row[k] * t;
            }
            return;
        }
        case Form::LiquidationH: {
            const double mean_a = p3_ != 0.0 ? z[0] : 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                out(i, 0) = -a[0] / p1_;
                out(i, 1) = (spec_.regime_params[i][0] - p3_ * mean_a) / p2_;
            }
            return;
        }
        default:
            throw Error("BadSpec", "coefficient is not an h form");
    }
}

double Coefficient::poly_value(std::span<const double> y, std::span<const double> z,
                               std::span<const double> a, std::size_t regime) const {
    const Vec& row = spec_.regime_params[regime];
    double v = row[0];
    for (std::size_t k = 0; k < d_; ++k) v += row[1 + k] * y[k] + row[1 + d_ + k] * y[k] * y[k];
    for (std::size_t k = 0; k < a.size(); ++k) v += w_a_[k] * a[k];
    for (std::size_t j = 0; j < w_z_.size(); ++j) v += w_z_[j] * z[j];
    return v;
}

double Coefficient::eval_f(std::span<const double> y, std::span<const double> z,
                           std::span<const double> a, std::size_t regime) const {
    switch (form_) {
        case Form::Constant: return spec_.regime_params[regime][0];
        case Form::Polynomial: return poly_value(y, z, a, regime);
        case Form::LiquidationF: return a[0] * (y[1] - p1_ * a[0]);
        default: throw Error("BadSpec", "coefficient is not an f form");
    }
}

double Coefficient::eval_g(std::span<const double> y, std::span<const double> z,
                           std::size_t regime) const {
    switch (form_) {
        case Form::Constant: return spec_.regime_params[regime][0];
        case Form::Polynomial: return poly_value(y, z, {}, regime);
        case Form::LiquidationG: return -p1_ * y[0] * y[0];
        default: throw Error("BadSpec", "coefficient is not a g form");
    }
}

void Coefficient::eval_sigma(std::span<const double> y, Mat& out) const {
    switch (form_) {
        case Form::SigmaConstant:
            out = spec_.matrix;
            return;
        case Form::SigmaDiagTanh:
            out.rows = out.cols = d_;
            out.data.assign(d_ * d_, 0.0);
            for (std::size_t k = 0; k < d_; ++k)
                out(k, k) = diag_base_[k] + diag_amp_[k] * std::tanh(y[k]);
            return;
        default:
            throw Error("BadSpec", "coefficient is not a sigma form");
    }
}

void ModelSpec::finalize() {
    regime.validate();
    controls.validate();
    if (dim_d == 0) throw Error("BadDimension", "observation dimension must be >= 1");
    if (y0.size() != dim_d) throw Error("BadDimension", "y0 length does not match dim_d");
    check_finite(y0, "y0");

    h_spec.kind = CoefficientSpec::Kind::H;
    f_spec.kind = CoefficientSpec::Kind::F;
    g_spec.kind = CoefficientSpec::Kind::G;
    sigma_spec.kind = CoefficientSpec::Kind::Sigma;

    for (const auto* cs : {&h_spec, &f_spec}) {
        for (const auto& st : cs->stats) {
            if (st.kind == StatSpec::Kind::MeanComponent && st.index_i >= dim_d + controls.dim)
                throw Error("DimensionMismatch", "mean-component index out of range");
            if (st.kind == StatSpec::Kind::Covariance &&
                (st.index_i >= dim_d || st.index_j >= dim_d))
                throw Error("DimensionMismatch", "covariance index out of range");
        }
    }
    for (const auto& st : g_spec.stats)
        if (st.needs_controls(dim_d))
            throw Error("DimensionMismatch", "g statistics must not read control atoms");

    h = Coefficient::compile(h_spec, regime.n_states, dim_d, controls);
    h_spec.bound = h.bound();
    f = Coefficient::compile(f_spec, regime.n_states, dim_d, controls);
    g = Coefficient::compile(g_spec, regime.n_states, dim_d, controls);
    sigma = Coefficient::compile(sigma_spec, regime.n_states, dim_d, controls);

    is_mean_field =
        h_spec.is_mean_field() || f_spec.is_mean_field() || g_spec.is_mean_field();
}

void validate_growth(const ModelSpec& spec) {
    const GrowthParams& gp = spec.growth;
    auto fail = [](const std::string& what) { throw Error("GrowthIncompatible", what); };
    if (gp.p < 2.0) fail("p >= 2 violated");
    if (gp.r < 2.0) fail("r >= 2 violated");
    if (gp.q < 1.0) fail("q >= 1 violated");
    if (gp.ell < 0.0) fail("ell >= 0 violated");
    if (gp.chi_exponent < 0.0) fail("chi exponent >= 0 violated");
    const double cap = gp.r * (1.0 - 1.0 / gp.p);
    if (gp.q > cap + 1e-12)
        fail("q <= r(1 - 1/p) violated: q = " + std::to_string(gp.q) + ", r(1 - 1/p) = " +
             std::to_string(cap));
    if (gp.ell > cap + 1e-12)
        fail("ell <= r(1 - 1/p) violated: ell = " + std::to_string(gp.ell) + ", r(1 - 1/p) = " +
             std::to_string(cap));
    for (const auto& st : spec.h_spec.stats) {
        const double m = st.growth_order();
        if (gp.q < m - 1e-12)
            fail("q >= m violated for an h statistic of order " + std::to_string(m));
        if (gp.r < 2.0 * m - 1e-12)
            fail("r >= 2m violated for an h statistic of order " + std::to_string(m));
    }
}

void LiquidationParams::validate(std::size_t n_states) const {
    if (!(eps > 0.0)) throw Error("BadSpec", "liquidation eps must be > 0");
    if (!(gamma_vol > 0.0)) throw Error("BadSpec", "liquidation gamma_vol must be > 0");
    if (!(alpha_max > 0.0)) throw Error("BadSpec", "liquidation alpha_max must be > 0");
    if (nu < 0.0 || eta_cost < 0.0 || theta_pen < 0.0)
        throw Error("BadSpec", "liquidation nu, eta_cost, theta_pen must be >= 0");
    if (regime_drifts.size() != n_states)
        throw Error("BadDimension", "liquidation regime_drifts length does not match n_states");
}

ModelSpec build_liquidation(const LiquidationParams& params, const RegimeModel& regime) {
    params.validate(regime.n_states);

    ModelSpec spec;
    spec.dim_d = 2;
    spec.regime = regime;
    spec.controls.dim = 1;
    spec.controls.lower = {0.0};
    spec.controls.upper = {params.alpha_max};
    spec.controls.reference = {0.0};
    spec.y0 = {params.I0, params.P0_init};

    spec.h_spec.form = "liquidation_h";
    spec.h_spec.scalar = {{"eps", params.eps}, {"gamma_vol", params.gamma_vol}, {"nu", params.nu}};
    for (double m : params.regime_drifts) spec.h_spec.regime_params.push_back({m});
    if (params.nu != 0.0) {
        StatSpec mean_control;
        mean_control.kind = StatSpec::Kind::MeanComponent;
        mean_control.index_i = spec.dim_d;  // first control component of (y, a)
        spec.h_spec.stats.push_back(mean_control);
    }

    spec.f_spec.form = "liquidation_f";
    spec.f_spec.scalar = {{"eta", params.eta_cost}};
    spec.g_spec.form = "liquidation_g";
    spec.g_spec.scalar = {{"theta", params.theta_pen}};

    spec.sigma_spec.form = "constant";
    spec.sigma_spec.matrix = Mat(2, 2);
    spec.sigma_spec.matrix(0, 0) = params.eps;
    spec.sigma_spec.matrix(1, 1) = params.gamma_vol;

    spec.growth.p = 2.0;
    spec.growth.r = 4.0;
    spec.growth.q = 2.0;
    spec.growth.ell = 2.0;
    spec.growth.chi_exponent = 1.0;

    spec.finalize();
    validate_growth(spec);
    return spec;
}

} // namespace zmfc::model
