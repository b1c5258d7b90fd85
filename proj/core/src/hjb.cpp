#include "zmfc/hjb.hpp"

#include <algorithm>
#include <cmath>

#include "zmfc/parallel.hpp"
#include "zmfc/rng.hpp"

namespace zmfc::hjb {

namespace {

double ipow(double base, unsigned e) {
    double r = 1.0;
    while (e != 0) {
        if (e & 1u) r *= base;
        base *= base;
        e >>= 1u;
    }
    return r;
}

} // namespace

Poly Poly::monomial(std::size_t n_vars, std::size_t var, unsigned power, double coef) {
    Poly p;
    p.n_vars = n_vars;
    std::vector<unsigned> exps(n_vars, 0u);
    exps[var] = power;
    p.terms.push_back({coef, std::move(exps)});
    return p;
}

Poly& Poly::add_term(double coef, std::vector<unsigned> exps) {
    if (exps.size() != n_vars) throw Error("BadDimension", "polynomial term has wrong arity");
    terms.push_back({coef, std::move(exps)});
    return *this;
}

double Poly::eval(std::span<const double> v) const {
    double s = 0.0;
    for (const auto& t : terms) {
        double m = t.coef;
        for (std::size_t i = 0; i < n_vars; ++i)
            if (t.exps[i] != 0) m *= ipow(v[i], t.exps[i]);
        s += m;
    }
    return s;
}

void Poly::grad(std::span<const double> v, std::span<double> out) const {
    for (std::size_t i = 0; i < n_vars; ++i) out[i] = 0.0;
    for (const auto& t : terms) {
        for (std::size_t k = 0; k < n_vars; ++k) {
            if (t.exps[k] == 0) continue;
            double m = t.coef * t.exps[k] * ipow(v[k], t.exps[k] - 1);
            for (std::size_t i = 0; i < n_vars; ++i)
                if (i != k && t.exps[i] != 0) m *= ipow(v[i], t.exps[i]);
            out[k] += m;
        }
    }
}

void Poly::hess(std::span<const double> v, Mat& out) const {
    if (out.rows != n_vars || out.cols != n_vars) out = Mat(n_vars, n_vars);
    else std::fill(out.data.begin(), out.data.end(), 0.0);
    for (const auto& t : terms) {
        for (std::size_t k = 0; k < n_vars; ++k) {
            if (t.exps[k] == 0) continue;
            // diagonal entry d^2/dv_k^2
            if (t.exps[k] >= 2) {
                double m = t.coef * t.exps[k] * (t.exps[k] - 1) * ipow(v[k], t.exps[k] - 2);
                for (std::size_t i = 0; i < n_vars; ++i)
                    if (i != k && t.exps[i] != 0) m *= ipow(v[i], t.exps[i]);
                out(k, k) += m;
            }
            for (std::size_t l = k + 1; l < n_vars; ++l) {
                if (t.exps[l] == 0) continue;
                double m = t.coef * t.exps[k] * t.exps[l] * ipow(v[k], t.exps[k] - 1) *
                           ipow(v[l], t.exps[l] - 1);
                for (std::size_t i = 0; i < n_vars; ++i)
                    if (i != k && i != l && t.exps[i] != 0) m *= ipow(v[i], t.exps[i]);
                out(k, l) += m;
                out(l, k) += m;
            }
        }
    }
}

unsigned Poly::degree() const {
    unsigned deg = 0;
    for (const auto& t : terms) {
        unsigned d = 0;
        for (unsigned e : t.exps) d += e;
        deg = std::max(deg, d);
    }
    return deg;
}

namespace {

// Closed-form derivatives must agree with central finite differences at a few
// deterministic sample points before the function is accepted (1e-6 relative).
void self_test_poly(const Poly& p) {
    if (p.terms.empty()) return;
    const CounterRng rng(0x5eeded);
    const std::size_t n = p.n_vars;
    Vec v(n), g(n), g_hi(n), g_lo(n);
    Mat h;
    for (std::uint32_t trial = 0; trial < 4; ++trial) {
        for (std::size_t i = 0; i < n; ++i)
            v[i] = 4.0 * rng.uniform(CounterRng::kOptimizer, trial, i) - 2.0;
        p.grad(v, g);
        p.hess(v, h);
        for (std::size_t k = 0; k < n; ++k) {
            const double step = 1e-5 * std::max(1.0, std::abs(v[k]));
            Vec hi = v, lo = v;
            hi[k] += step;
            lo[k] -= step;
            const double fd = (p.eval(hi) - p.eval(lo)) / (2.0 * step);
            const double scale = std::max({1.0, std::abs(fd), std::abs(g[k])});
            if (std::abs(fd - g[k]) > 1e-6 * scale)
                throw Error("DerivativeSelfTest", "polynomial gradient mismatch");
            p.grad(hi, g_hi);
            p.grad(lo, g_lo);
            for (std::size_t l = 0; l < n; ++l) {
                const double fd2 = (g_hi[l] - g_lo[l]) / (2.0 * step);
                const double scale2 = std::max({1.0, std::abs(fd2), std::abs(h(l, k))});
                if (std::abs(fd2 - h(l, k)) > 1e-6 * scale2)
                    throw Error("DerivativeSelfTest", "polynomial Hessian mismatch");
            }
        }
    }
}

} // namespace

CylindricalTestFn::CylindricalTestFn(std::string id, Poly outer, std::vector<Poly> inners,
                                     std::size_t n_states, std::size_t dim_d)
    : id_(std::move(id)), outer_(std::move(outer)), inners_(std::move(inners)), n_(n_states),
      d_(dim_d) {
    if (outer_.n_vars != inners_.size())
        throw Error("BadDimension", "outer arity must match the number of inner statistics");
    for (const auto& psi : inners_) {
        if (psi.n_vars != n_ + d_)
            throw Error("BadDimension", "inner polynomials must live on (x, y)");
        if (psi.degree() > 4)
            throw Error("BadSpec", "inner polynomials are limited to degree 4");
        self_test_poly(psi);
    }
}

Vec CylindricalTestFn::inner_means(const measures::ParticleCloud& cloud) const {
    Vec zbar(inners_.size(), 0.0);
    Vec vars(n_ + d_);
    Vec contrib(cloud.count);
    for (std::size_t j = 0; j < inners_.size(); ++j) {
        for (std::size_t i = 0; i < cloud.count; ++i) {
            const auto x = cloud.x_at(i);
            const auto y = cloud.y_at(i);
            std::copy(x.begin(), x.end(), vars.begin());
            std::copy(y.begin(), y.end(), vars.begin() + static_cast<std::ptrdiff_t>(n_));
            contrib[i] = inners_[j].eval(vars);
        }
        zbar[j] = pairwise_sum(contrib) / static_cast<double>(cloud.count);
    }
    return zbar;
}

double CylindricalTestFn::value_at(std::span<const double> zbar) const {
    return outer_.terms.empty() ? 0.0 : outer_.eval(zbar);
}

double CylindricalTestFn::value(double, const measures::ParticleCloud& cloud) const {
    return value_at(inner_means(cloud));
}

Vec CylindricalTestFn::outer_partials(std::span<const double> zbar) const {
    Vec partials(inners_.size(), 0.0);
    if (!outer_.terms.empty()) outer_.grad(zbar, partials);
    return partials;
}

double CylindricalTestFn::lfd_at(std::span<const double> zbar, std::span<const double> x,
                                 std::span<const double> y) const {
    const Vec partials = outer_partials(zbar);
    Vec vars(n_ + d_);
    std::copy(x.begin(), x.end(), vars.begin());
    std::copy(y.begin(), y.end(), vars.begin() + static_cast<std::ptrdiff_t>(n_));
    double s = 0.0;
    for (std::size_t j = 0; j < inners_.size(); ++j) s += partials[j] * inners_[j].eval(vars);
    return s;
}

void CylindricalTestFn::lfd_grad(std::span<const double> partials, std::span<const double> x,
                                 std::span<const double> y, std::span<double> out) const {
    Vec vars(n_ + d_);
    std::copy(x.begin(), x.end(), vars.begin());
    std::copy(y.begin(), y.end(), vars.begin() + static_cast<std::ptrdiff_t>(n_));
    for (std::size_t i = 0; i < n_ + d_; ++i) out[i] = 0.0;
    Vec g(n_ + d_);
    for (std::size_t j = 0; j < inners_.size(); ++j) {
        if (partials[j] == 0.0) continue;
        inners_[j].grad(vars, g);
        for (std::size_t i = 0; i < n_ + d_; ++i) out[i] += partials[j] * g[i];
    }
}

void CylindricalTestFn::lfd_hess(std::span<const double> partials, std::span<const double> x,
                                 std::span<const double> y, Mat& out) const {
    Vec vars(n_ + d_);
    std::copy(x.begin(), x.end(), vars.begin());
    std::copy(y.begin(), y.end(), vars.begin() + static_cast<std::ptrdiff_t>(n_));
    if (out.rows != n_ + d_ || out.cols != n_ + d_) out = Mat(n_ + d_, n_ + d_);
    else std::fill(out.data.begin(), out.data.end(), 0.0);
    Mat h;
    for (std::size_t j = 0; j < inners_.size(); ++j) {
        if (partials[j] == 0.0) continue;
        inners_[j].hess(vars, h);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += partials[j] * h.data[i];
    }
}

CylindricalTestFn CylindricalTestFn::mass(std::size_t n_states, std::size_t dim_d) {
    Poly psi = Poly::zero(n_states + dim_d);
    for (std::size_t j = 0; j < n_states; ++j) {
        std::vector<unsigned> e(n_states + dim_d, 0u);
        e[j] = 1u;
        psi.add_term(1.0, std::move(e));
    }
    return {"mass", Poly::monomial(1, 0, 1, 1.0), {psi}, n_states, dim_d};
}

CylindricalTestFn CylindricalTestFn::mass_squared(std::size_t n_states, std::size_t dim_d) {
    Poly psi = Poly::zero(n_states + dim_d);
    for (std::size_t j = 0; j < n_states; ++j) {
        std::vector<unsigned> e(n_states + dim_d, 0u);
        e[j] = 1u;
        psi.add_term(1.0, std::move(e));
    }
    return {"mass_squared", Poly::monomial(1, 0, 2, 1.0), {psi}, n_states, dim_d};
}

CylindricalTestFn CylindricalTestFn::y_moment(std::size_t n_states, std::size_t dim_d,
                                              std::size_t component, unsigned power) {
    if (component >= dim_d) throw Error("BadDimension", "y_moment component out of range");
    const Poly psi = Poly::monomial(n_states + dim_d, n_states + component, power, 1.0);
    const std::string id = "y" + std::to_string(component + 1) + "_moment" + std::to_string(power);
    return {id, Poly::monomial(1, 0, 1, 1.0), {psi}, n_states, dim_d};
}

CylindricalTestFn CylindricalTestFn::zero_fn(std::size_t n_states, std::size_t dim_d) {
    return {"zero", Poly::zero(1), {Poly::zero(n_states + dim_d)}, n_states, dim_d};
}

CylindricalTestFn CylindricalTestFn::by_id(const std::string& id, std::size_t n_states,
                                           std::size_t dim_d) {
    if (id == "mass") return mass(n_states, dim_d);
    if (id == "mass_squared") return mass_squared(n_states, dim_d);
    if (id == "y1_moment1") return y_moment(n_states, dim_d, 0, 1);
    if (id == "y1_moment2") return y_moment(n_states, dim_d, 0, 2);
    if (id == "zero") return zero_fn(n_states, dim_d);
    throw Error("UnknownForm", "unknown test function '" + id + "'");
}

double lfd_value(const CylindricalTestFn& v, double, const measures::ParticleCloud& cloud,
                 std::span<const double> x, std::span<const double> y) {
    return v.lfd_at(v.inner_means(cloud), x, y);
}

GeneratorBreakdown generator_apply(const CylindricalTestFn& v, double,
                                   const measures::ParticleCloud& cloud,
                                   const model::ModelSpec& model) {
    const std::size_t count = cloud.count;
    const std::size_t n = model.regime.n_states;
    const std::size_t d = model.dim_d;

    const Vec zbar = v.inner_means(cloud);
    const Vec partials = v.outer_partials(zbar);

    const auto nu = measures::gamma_measure(cloud);
    const Vec z_h = measures::eval_stats(nu, model.h.stats(), model.controls.reference);
    const Vec z_f = measures::eval_stats(nu, model.f.stats(), model.controls.reference);

    const Mat lambda_t = transpose(model.regime.rate_matrix);

    Vec drift_c(count), xx_c(count), xy_c(count), yy_c(count), f_c(count);
    Mat h_buf(n, d), sig_buf, hess;
    Vec grad(n + d), lam_x(n);

    for (std::size_t i = 0; i < count; ++i) {
        const auto x = cloud.x_at(i);
        const auto y = cloud.y_at(i);
        const auto a = cloud.a_at(i);

        v.lfd_grad(partials, x, y, grad);
        v.lfd_hess(partials, x, y, hess);
        model.h.eval_h(y, z_h, a, h_buf);
        model.sigma.eval_sigma(y, sig_buf);

        matvec(lambda_t, x, lam_x);
        double drift = 0.0;
        for (std::size_t m = 0; m < n; ++m) drift += grad[m] * lam_x[m];
        drift_c[i] = drift;

        double xx = 0.0;
        for (std::size_t m = 0; m < n; ++m)
            for (std::size_t mm = 0; mm < n; ++mm)
                xx += x[m] * x[mm] * dot(h_buf.row(m), h_buf.row(mm)) * hess(m, mm);
        xx_c[i] = 0.5 * xx;

        double xy = 0.0;
        for (std::size_t m = 0; m < n; ++m)
            for (std::size_t k = 0; k < d; ++k) {
                double hs = 0.0;
                for (std::size_t l = 0; l < d; ++l) hs += h_buf(m, l) * sig_buf(k, l);
                xy += x[m] * hs * hess(m, n + k);
            }
        xy_c[i] = xy;

        double yy = 0.0;
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t l = 0; l < d; ++l)
                yy += dot(sig_buf.row(k), sig_buf.row(l)) * hess(n + k, n + l);
        yy_c[i] = 0.5 * yy;

        double fc = 0.0;
        for (std::size_t j = 0; j < n; ++j) fc += x[j] * model.f.eval_f(y, z_f, a, j);
        f_c[i] = fc;
    }

    const double inv = 1.0 / static_cast<double>(count);
    GeneratorBreakdown out;
    out.drift_term = pairwise_sum(drift_c) * inv;
    out.xx_term = pairwise_sum(xx_c) * inv;
    out.xy_term = pairwise_sum(xy_c) * inv;
    out.yy_term = pairwise_sum(yy_c) * inv;
    out.f_term = pairwise_sum(f_c) * inv;
    return out;
}

ItoResidual ito_residual(const CylindricalTestFn& v, const sim::Trajectory& trajectory,
                         const model::ModelSpec& model) {
    const auto& checkpoints = trajectory.rng_checkpoints;
    if (trajectory.clouds.size() < 2)
        throw Error("BadSpec", "ito_residual needs at least two snapshots");
    // Every step of the producing run must be present: snapshots at a uniform
    // counter stride (= 1 for plain runs, = the aggregation factor otherwise).
    const std::uint64_t stride = checkpoints[1].step_index - checkpoints[0].step_index;
    for (std::size_t s = 1; s < checkpoints.size(); ++s)
        if (checkpoints[s].step_index != checkpoints[s - 1].step_index + stride)
            throw Error("BadSpec", "ito_residual needs a trajectory recorded at every step");

    const double v0 = v.value(trajectory.times.front(), trajectory.clouds.front());
    ItoResidual out;
    out.pathwise_series.resize(trajectory.clouds.size());
    out.pathwise_series[0] = 0.0;
    double generator_sum = 0.0;
    for (std::size_t s = 0; s + 1 < trajectory.clouds.size(); ++s) {
        const double dt = trajectory.times[s + 1] - trajectory.times[s];
        const auto breakdown =
            generator_apply(v, trajectory.times[s], trajectory.clouds[s], model);
        generator_sum += breakdown.total_without_f() * dt;
        const double vt = v.value(trajectory.times[s + 1], trajectory.clouds[s + 1]);
        out.pathwise_series[s + 1] = vt - v0 - generator_sum;
    }
    out.residual = std::abs(out.pathwise_series.back());
    return out;
}

HamiltonianResult hamiltonian(const CylindricalTestFn& w, double t,
                              const measures::ParticleCloud& cloud,
                              const model::ModelSpec& model,
                              const std::vector<Vec>& control_grid) {
    if (control_grid.empty()) throw Error("EmptyGrid", "hamiltonian needs a nonempty grid");
    HamiltonianResult best;
    bool first = true;
    measures::ParticleCloud probe = cloud;
    for (std::size_t g = 0; g < control_grid.size(); ++g) {
        const Vec& a = control_grid[g];
        if (a.size() != model.controls.dim)
            throw Error("BadDimension", "grid control has wrong dimension");
        for (std::size_t i = 0; i < probe.count; ++i) {
            auto ai = probe.a_at(i);
            std::copy(a.begin(), a.end(), ai.begin());
            model.controls.clamp(ai);
        }
        const double value = generator_apply(w, t, probe, model).total();
        if (first || value > best.best_value) {
            best.best_value = value;
            best.best_control = a;
            best.best_index = g;
            first = false;
        }
    }
    return best;
}

double terminal_residual(const CylindricalTestFn& w, const measures::ParticleCloud& cloud,
                         const model::ModelSpec& model) {
    const auto gamma1 = measures::gamma1_measure(cloud);
    const Vec z_g = measures::eval_stats(gamma1, model.g.stats(), model.controls.reference);
    const std::size_t n = model.regime.n_states;
    Vec contrib(cloud.count);
    for (std::size_t i = 0; i < cloud.count; ++i) {
        const auto x = cloud.x_at(i);
        const auto y = cloud.y_at(i);
        double gc = 0.0;
        for (std::size_t j = 0; j < n; ++j) gc += x[j] * model.g.eval_g(y, z_g, j);
        contrib[i] = gc;
    }
    const double terminal = pairwise_sum(contrib) / static_cast<double>(cloud.count);
    return std::abs(w.value(cloud.t, cloud) - terminal);
}

CylindricalTestFn make_matched_terminal(const model::ModelSpec& model) {
    if (!model.g_spec.stats.empty())
        throw Error("BadSpec", "matched terminal needs a g without measure statistics");
    const std::size_t n = model.regime.n_states;
    const std::size_t d = model.dim_d;
    Poly psi = Poly::zero(n + d);

    auto x_times_y_power = [&](std::size_t j, std::size_t k, unsigned p, double coef) {
        std::vector<unsigned> e(n + d, 0u);
        e[j] = 1u;
        if (p > 0) e[n + k] = p;
        psi.add_term(coef, std::move(e));
    };

    const auto& g = model.g_spec;
    if (g.form == "constant") {
        for (std::size_t j = 0; j < n; ++j) x_times_y_power(j, 0, 0, g.regime_params[j][0]);
    } else if (g.form == "polynomial") {
        for (std::size_t j = 0; j < n; ++j) {
            const Vec& row = g.regime_params[j];
            if (row[0] != 0.0) x_times_y_power(j, 0, 0, row[0]);
            for (std::size_t k = 0; k < d; ++k) {
                if (row[1 + k] != 0.0) x_times_y_power(j, k, 1, row[1 + k]);
                if (row[1 + d + k] != 0.0) x_times_y_power(j, k, 2, row[1 + d + k]);
            }
        }
    } else if (g.form == "liquidation_g") {
        const double theta = g.scalar_at("theta");
        for (std::size_t j = 0; j < n; ++j) x_times_y_power(j, 0, 2, -theta);
    } else {
        throw Error("BadSpec", "no matched terminal for g form '" + g.form + "'");
    }
    return {"terminal_" + g.form, Poly::monomial(1, 0, 1, 1.0), {psi}, n, d};
}

} // namespace zmfc::hjb
