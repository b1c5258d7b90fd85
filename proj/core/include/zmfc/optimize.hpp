#pragma once

#include <functional>
#include <string>
#include <vector>

#include "zmfc/linalg.hpp"
#include "zmfc/model.hpp"
#include "zmfc/policy.hpp"
#include "zmfc/sim.hpp"

namespace zmfc::opt {

// One reward evaluation. Objectives must use common random numbers (the same
// seed at every theta) so J_hat is a deterministic function of theta.
struct Evaluation {
    Vec theta;
    double j_hat = 0.0;
    double stderr_ = 0.0;
};

using Objective = std::function<Evaluation(const Vec&)>;

struct OptResult {
    Vec theta_star;
    double j_star = 0.0;
    double j_star_stderr = 0.0;
    std::vector<Evaluation> history;
    std::size_t evaluations = 0;
    std::string note;  // e.g. "DegenerateStd" when cross-entropy collapsed early

    void record(Evaluation e);  // keeps (theta_star, j_star) at the best entry
};

struct NelderMeadOptions {
    std::size_t max_evals = 200;
    double init_step = 0.1;
    double shrink_tol = 1e-6;  // simplex diameter termination
};

// Maximizes the objective with the standard reflect/expand/contract/shrink
// simplex. Budget exhaustion is normal termination.
OptResult nelder_mead(const Objective& objective, const Vec& theta0,
                      const NelderMeadOptions& opts);

struct CrossEntropyOptions {
    std::size_t population = 32;
    double elite_frac = 0.25;
    std::size_t iterations = 10;
    std::uint64_t seed = 0;      // drives the sampling substream
    bool seed_prior_mean = true; // evaluate the prior mean as a forced candidate
};

// Gaussian cross-entropy: sample, keep the elite fraction by J_hat, refit
// mean/std. Deterministic given the seed. If every std collapses below 1e-12
// before the budget ends, stops and notes "DegenerateStd".
OptResult cross_entropy(const Objective& objective, const Vec& prior_mean, const Vec& prior_std,
                        const CrossEntropyOptions& opts);

// Constant-rate liquidation baseline a = clamp(I0 / T).
Policy twap_policy(const model::LiquidationParams& params, const model::ControlSpace& controls,
                   double horizon);

// Reward objective under common random numbers: same model, config and seed
// for every theta.
Objective reward_objective(const model::ModelSpec& model, const Policy& shape,
                           const sim::SimConfig& config);

struct LiquidationReport {
    Evaluation twap;
    Evaluation optimized;
    double improvement = 0.0;  // J_opt - J_twap
    OptResult details;
    std::string method;
};

// Evaluates the TWAP baseline and an optimized constant-rate policy with the
// same seed; the TWAP parameters are seeded into the initial simplex or
// population, so J_opt >= J_twap holds exactly under common random numbers.
LiquidationReport optimize_liquidation(const model::ModelSpec& scenario,
                                       const model::LiquidationParams& params,
                                       const sim::SimConfig& config, const std::string& method,
                                       const NelderMeadOptions& nm_opts = {},
                                       const CrossEntropyOptions& ce_opts = {});

} // namespace zmfc::opt
