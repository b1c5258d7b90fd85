#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "zmfc/linalg.hpp"
#include "zmfc/model.hpp"

namespace zmfc::opt {

// Feedback control law a = phi_theta(t, x, y), clamped into the control box.
// The filter state x enters through the normalized regime distribution
// x / <x,1>, which is the decision-relevant statistic.
struct Policy {
    enum class Form { Constant, AffineClamped, PiecewiseTime };

    Form form = Form::Constant;
    Vec theta;
    model::ControlSpace clamp;

    // PiecewiseTime only: bucket b covers [t_start + b*len, ...), len = span/n_buckets.
    double t_start = 0.0;
    double t_end = 1.0;
    std::size_t n_buckets = 1;

    // Expected theta length for the configured form.
    std::size_t param_count(std::size_t n_states, std::size_t dim_d) const;

    void eval(double t, std::span<const double> x, std::span<const double> y,
              std::span<double> out) const;

    Policy with_theta(Vec new_theta) const;

    static Policy constant(Vec theta, model::ControlSpace clamp);
    // theta layout: [theta0 (D), theta_x (D*N), theta_y (D*d), theta_t (D)]
    static Policy affine(Vec theta, model::ControlSpace clamp, std::size_t n_states,
                         std::size_t dim_d);
    // theta layout: bucket-major, D entries per bucket
    static Policy piecewise_time(Vec theta, model::ControlSpace clamp, double t_start,
                                 double t_end, std::size_t n_buckets);
};

Policy parse_policy_form(const std::string& form, Vec theta, const model::ControlSpace& clamp,
                         std::size_t n_states, std::size_t dim_d, double t_start, double t_end,
                         std::size_t n_buckets);

} // namespace zmfc::opt
