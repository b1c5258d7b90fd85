#include "zmfc/policy.hpp"

#include <algorithm>
#include <cmath>

#include "zmfc/errors.hpp"

namespace zmfc::opt {

std::size_t Policy::param_count(std::size_t n_states, std::size_t dim_d) const {
    const std::size_t d_ctrl = clamp.dim;
    switch (form) {
        case Form::Constant: return d_ctrl;
        case Form::AffineClamped: return d_ctrl * (2 + n_states + dim_d);
        case Form::PiecewiseTime: return d_ctrl * n_buckets;
    }
    return 0;
}

void Policy::eval(double t, std::span<const double> x, std::span<const double> y,
                  std::span<double> out) const {
    const std::size_t d_ctrl = clamp.dim;
    switch (form) {
        case Form::Constant:
            for (std::size_t k = 0; k < d_ctrl; ++k) out[k] = theta[k];
            break;
        case Form::AffineClamped: {
            // x normalized to the conditional regime distribution
            double total = 0.0;
            for (double v : x) total += v;
            const double inv = total > 1e-300 ? 1.0 / total : 0.0;
            const std::size_t n = x.size(), d = y.size();
            const double* th0 = theta.data();
            const double* thx = th0 + d_ctrl;
            const double* thy = thx + d_ctrl * n;
            const double* tht = thy + d_ctrl * d;
            for (std::size_t k = 0; k < d_ctrl; ++k) {
                double v = th0[k] + tht[k] * t;
                for (std::size_t j = 0; j < n; ++j) v += thx[k * n + j] * x[j] * inv;
                for (std::size_t j = 0; j < d; ++j) v += thy[k * d + j] * y[j];
                out[k] = v;
            }
            break;
        }
        case Form::PiecewiseTime: {
            const double span = t_end - t_start;
            auto b = static_cast<std::ptrdiff_t>(std::floor((t - t_start) / span *
                                                            static_cast<double>(n_buckets)));
            b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_buckets) - 1);
            for (std::size_t k = 0; k < d_ctrl; ++k)
                out[k] = theta[static_cast<std::size_t>(b) * d_ctrl + k];
            break;
        }
    }
    clamp.clamp(out);
}

Policy Policy::with_theta(Vec new_theta) const {
    Policy p = *this;
    if (new_theta.size() != theta.size())
        throw Error("BadDimension", "policy parameter vector has wrong length");
    p.theta = std::move(new_theta);
    return p;
}

Policy Policy::constant(Vec theta, model::ControlSpace clamp) {
    Policy p;
    p.form = Form::Constant;
    p.theta = std::move(theta);
    p.clamp = std::move(clamp);
    if (p.theta.size() != p.clamp.dim)
        throw Error("BadDimension", "constant policy needs one parameter per control dim");
    return p;
}

Policy Policy::affine(Vec theta, model::ControlSpace clamp, std::size_t n_states,
                      std::size_t dim_d) {
    Policy p;
    p.form = Form::AffineClamped;
    p.theta = std::move(theta);
    p.clamp = std::move(clamp);
    if (p.theta.size() != p.param_count(n_states, dim_d))
        throw Error("BadDimension", "affine policy parameter vector has wrong length");
    return p;
}

Policy Policy::piecewise_time(Vec theta, model::ControlSpace clamp, double t_start, double t_end,
                              std::size_t n_buckets) {
    Policy p;
    p.form = Form::PiecewiseTime;
    p.theta = std::move(theta);
    p.clamp = std::move(clamp);
    p.t_start = t_start;
    p.t_end = t_end;
    p.n_buckets = n_buckets;
    if (n_buckets == 0 || !(t_end > t_start))
        throw Error("BadSpec", "piecewise policy needs n_buckets >= 1 and t_end > t_start");
    if (p.theta.size() != n_buckets * p.clamp.dim)
        throw Error("BadDimension", "piecewise policy parameter vector has wrong length");
    return p;
}

Policy parse_policy_form(const std::string& form, Vec theta, const model::ControlSpace& clamp,
                         std::size_t n_states, std::size_t dim_d, double t_start, double t_end,
                         std::size_t n_buckets) {
    for (double v : theta)
        if (!std::isfinite(v)) throw Error("NonFinite", "policy parameters must be finite");
    if (form == "constant") return Policy::constant(std::move(theta), clamp);
    if (form == "affine_clamped") return Policy::affine(std::move(theta), clamp, n_states, dim_d);
    if (form == "piecewise_time")
        return Policy::piecewise_time(std::move(theta), clamp, t_start, t_end, n_buckets);
    throw Error("UnknownForm", "unknown policy form '" + form + "'");
}

} // namespace zmfc::opt
