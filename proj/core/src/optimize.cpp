#include "zmfc/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zmfc/rng.hpp"

namespace zmfc::opt {

void OptResult::record(Evaluation e) {
    ++evaluations;
    if (history.empty() || e.j_hat > j_star) {
        theta_star = e.theta;
        j_star = e.j_hat;
        j_star_stderr = e.stderr_;
    }
    history.push_back(std::move(e));
}

OptResult nelder_mead(const Objective& objective, const Vec& theta0,
                      const NelderMeadOptions& opts) {
    const std::size_t dim = theta0.size();
    OptResult result;

    auto eval = [&](const Vec& theta) {
        Evaluation e = objective(theta);
        e.theta = theta;
        result.record(e);
        return e.j_hat;
    };

    // Simplex of dim+1 vertices; we maximize, so "best" is the largest J.
    std::vector<Vec> simplex;
    Vec values;
    simplex.push_back(theta0);
    values.push_back(eval(theta0));
    for (std::size_t k = 0; k < dim && result.evaluations < opts.max_evals; ++k) {
        Vec v = theta0;
        v[k] += opts.init_step;
        simplex.push_back(v);
        values.push_back(eval(v));
    }

    auto diameter = [&] {
        double worst = 0.0;
        for (std::size_t i = 1; i < simplex.size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = simplex[i][k] - simplex[0][k];
                s += diff * diff;
            }
            worst = std::max(worst, std::sqrt(s));
        }
        return worst;
    };

    while (result.evaluations < opts.max_evals && simplex.size() == dim + 1) {
        std::vector<std::size_t> order(simplex.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
        std::vector<Vec> sorted_s;
        Vec sorted_v;
        for (std::size_t idx : order) {
            sorted_s.push_back(simplex[idx]);
            sorted_v.push_back(values[idx]);
        }
        simplex = std::move(sorted_s);
        values = std::move(sorted_v);
        if (diameter() < opts.shrink_tol) break;

        Vec centroid(dim, 0.0);
        for (std::size_t i = 0; i + 1 < simplex.size(); ++i)
            for (std::size_t k = 0; k < dim; ++k) centroid[k] += simplex[i][k];
        for (double& c : centroid) c /= static_cast<double>(dim);

        const Vec& worst = simplex.back();
        Vec reflected(dim);
        for (std::size_t k = 0; k < dim; ++k) reflected[k] = centroid[k] + (centroid[k] - worst[k]);
        const double fr = eval(reflected);

        if (fr > values.front()) {
            if (result.evaluations >= opts.max_evals) break;
            Vec expanded(dim);
            for (std::size_t k = 0; k < dim; ++k)
                expanded[k] = centroid[k] + 2.0 * (centroid[k] - worst[k]);
            const double fe = eval(expanded);
            if (fe > fr) {
                simplex.back() = expanded;
                values.back() = fe;
            } else {
                simplex.back() = reflected;
                values.back() = fr;
            }
        } else if (fr > values[values.size() - 2]) {
            simplex.back() = reflected;
            values.back() = fr;
        } else {
            if (result.evaluations >= opts.max_evals) break;
            Vec contracted(dim);
            for (std::size_t k = 0; k < dim; ++k)
                contracted[k] = centroid[k] + 0.5 * (worst[k] - centroid[k]);
            const double fc = eval(contracted);
            if (fc > values.back()) {
                simplex.back() = contracted;
                values.back() = fc;
            } else {
                for (std::size_t i = 1; i < simplex.size(); ++i) {
                    if (result.evaluations >= opts.max_evals) break;
                    for (std::size_t k = 0; k < dim; ++k)
                        simplex[i][k] = simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]);
                    values[i] = eval(simplex[i]);
                }
            }
        }
    }
    return result;
}

OptResult cross_entropy(const Objective& objective, const Vec& prior_mean, const Vec& prior_std,
                        const CrossEntropyOptions& opts) {
    const std::size_t dim = prior_mean.size();
    if (prior_std.size() != dim)
        throw Error("BadDimension", "cross_entropy prior std has wrong length");
    if (opts.population < 2) throw Error("BadSpec", "cross_entropy needs population >= 2");

    OptResult result;
    const CounterRng rng(opts.seed);
    Vec mean = prior_mean;
    Vec stddev = prior_std;
    const auto elite =
        std::max<std::size_t>(1, static_cast<std::size_t>(opts.elite_frac *
                                                          static_cast<double>(opts.population)));

    auto eval = [&](Vec theta) {
        Evaluation e = objective(theta);
        e.theta = std::move(theta);
        result.record(e);
        return result.history.back();
    };

    if (opts.seed_prior_mean) eval(mean);

    for (std::size_t iter = 0; iter < opts.iterations; ++iter) {
        if (*std::max_element(stddev.begin(), stddev.end()) < 1e-12) {
            result.note = "DegenerateStd";
            break;
        }
        std::vector<Evaluation> batch;
        batch.reserve(opts.population);
        for (std::size_t c = 0; c < opts.population; ++c) {
            Vec theta(dim);
            const auto id = static_cast<std::uint32_t>(iter * opts.population + c);
            rng.fill_normals(CounterRng::kOptimizer, id, 0, theta);
            for (std::size_t k = 0; k < dim; ++k) theta[k] = mean[k] + stddev[k] * theta[k];
            batch.push_back(eval(std::move(theta)));
        }
        std::stable_sort(batch.begin(), batch.end(),
                         [](const Evaluation& a, const Evaluation& b) { return a.j_hat > b.j_hat; });
        for (std::size_t k = 0; k < dim; ++k) {
            double m = 0.0;
            for (std::size_t e = 0; e < elite; ++e) m += batch[e].theta[k];
            m /= static_cast<double>(elite);
            double var = 0.0;
            for (std::size_t e = 0; e < elite; ++e) {
                const double diff = batch[e].theta[k] - m;
                var += diff * diff;
            }
            mean[k] = m;
            stddev[k] = std::sqrt(var / static_cast<double>(elite));
        }
    }
    return result;
}

Policy twap_policy(const model::LiquidationParams& params, const model::ControlSpace& controls,
                   double horizon) {
    if (!(horizon > 0.0)) throw Error("BadSpec", "twap needs a positive horizon");
    Vec theta = {params.I0 / horizon};
    Policy p = Policy::constant(std::move(theta), controls);
    controls.clamp(p.theta);
    return p;
}

Objective reward_objective(const model::ModelSpec& model, const Policy& shape,
                           const sim::SimConfig& config) {
    return [&model, shape, config](const Vec& theta) {
        const Policy candidate = shape.with_theta(theta);
        const auto est = sim::estimate_reward(model, candidate, config);
        return Evaluation{theta, est.j_hat, est.stderr_};
    };
}

LiquidationReport optimize_liquidation(const model::ModelSpec& scenario,
                                       const model::LiquidationParams& params,
                                       const sim::SimConfig& config, const std::string& method,
                                       const NelderMeadOptions& nm_opts,
                                       const CrossEntropyOptions& ce_opts) {
    const double horizon = config.T - config.t0;
    const Policy twap = twap_policy(params, scenario.controls, horizon);
    const Objective objective = reward_objective(scenario, twap, config);

    LiquidationReport report;
    report.method = method;
    {
        const auto e = objective(twap.theta);
        report.twap = {twap.theta, e.j_hat, e.stderr_};
    }

    if (method == "nelder_mead") {
        report.details = nelder_mead(objective, twap.theta, nm_opts);
    } else if (method == "cross_entropy") {
        CrossEntropyOptions ce = ce_opts;
        ce.seed_prior_mean = true;  // guarantees the TWAP point is in the history
        Vec prior_std(twap.theta.size(), std::max(0.25 * params.alpha_max, 1e-3));
        report.details = cross_entropy(objective, twap.theta, prior_std, ce);
    } else {
        throw Error("UnknownForm", "unknown optimization method '" + method + "'");
    }

    report.optimized = {report.details.theta_star, report.details.j_star,
                        report.details.j_star_stderr};
    report.improvement = report.optimized.j_hat - report.twap.j_hat;
    return report;
}

} // namespace zmfc::opt
