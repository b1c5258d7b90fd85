#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zmfc/linalg.hpp"
#include "zmfc/measures.hpp"
#include "zmfc/model.hpp"
#include "zmfc/policy.hpp"
#include "zmfc/rng.hpp"

namespace zmfc::sim {

struct SimConfig {
    double t0 = 0.0;
    double T = 1.0;
    double dt = 1e-2;
    std::size_t n_particles = 1000;
    std::uint64_t seed = 0;
    std::size_t record_every = 1;
    unsigned threads = 1;

    // Optional random initial conditions (dedicated RNG substream): normal
    // jitter of y0 per component, and x0 = pi0 * u with u ~ U[1-j, 1+j].
    double init_y_sd = 0.0;
    double init_mass_jitter = 0.0;

    void validate() const;       // grid alignment within 1e-9, dt <= 0.1
    std::uint64_t n_steps() const;
    double time_at(std::uint64_t step) const { return t0 + static_cast<double>(step) * dt; }
};

struct RngCheckpoint {
    std::uint64_t seed = 0;
    std::uint64_t step_index = 0;
};

struct Trajectory {
    Vec times;
    std::vector<measures::ParticleCloud> clouds;
    Vec running_reward;                    // accumulated left-rule f integral per snapshot
    std::vector<RngCheckpoint> rng_checkpoints;
    std::vector<bool> mass_ok;             // |mean<x,1> - 1| <= 5 SE + 1e-12 per snapshot
    double min_x_seen = 0.0;               // over every particle and every step
};

struct RewardEstimate {
    double j_hat = 0.0;
    double stderr_ = 0.0;
};

// E_dt = exp(Lambda^T dt) with entrywise nonnegativity guaranteed in floating
// point: uniformization (shift by theta = max |lambda_ii|) makes every Taylor
// term nonnegative, then 6th-order Taylor plus scaling-and-squaring.
Mat chain_propagator(const Mat& lambda, double dt);

// One Euler-Maruyama observation step y' = y + sigma(y) dW (exact for
// constant sigma).
void y_step(std::span<double> y, std::span<const double> dW, const model::Coefficient& sigma);

// Splitting step of the Zakai system: geometric filter update
// x_i <- x_i * exp(h_i . dW - |h_i|^2 dt / 2) followed by the chain semigroup
// x <- E_dt x. Componentwise nonnegative by construction.
// Throws Error("Overflow") when a geometric exponent exceeds 700 in magnitude.
void zakai_step(std::span<double> x, const Mat& hvals, std::span<const double> dW, double dt,
                const Mat& e_dt);
// Convenience overload building the propagator from Lambda on the fly.
void zakai_step(std::span<double> x, const Mat& hvals, std::span<const double> dW, double dt,
                const Mat& lambda, int);

// Shared per-run stepping machinery: precomputes the chain propagator and
// walks a cloud through (controls -> Gamma measure -> h -> common-noise step).
class Stepper {
public:
    Stepper(const model::ModelSpec& model, double dt, unsigned threads);

    struct StepInfo {
        double f_mean = 0.0;  // (1/M) sum_i <x_i, f(y_i, nu, a_i)>
        Vec f_contrib;        // per-particle <x_i, f>
        Vec z_h;              // h statistics of Gamma(cloud) actually used
        Vec z_self;           // statistics of the current cloud (= z_h unless frozen)
        double min_x = 0.0;
    };

    // Advances the cloud in place with the supplied Brownian increments
    // (count x dim_d, N(0, dt) entries). When frozen_zh is set, h reads those
    // statistics instead of the self-consistent ones (Picard mode).
    StepInfo step(measures::ParticleCloud& cloud, const opt::Policy& policy, const Mat& dw,
                  const Vec* frozen_zh = nullptr, bool want_f = true);

    void assign_controls(measures::ParticleCloud& cloud, const opt::Policy& policy) const;
    const Mat& propagator() const { return e_dt_; }
    double dt() const { return dt_; }

private:
    const model::ModelSpec* model_;
    double dt_;
    unsigned threads_;
    Mat e_dt_;
};

// Spec-level single step: (a) controls from the policy, (b) Gamma measure,
// (c) h per particle, (d) zakai/y step with the same increments, (e) advance t.
void step_cloud(measures::ParticleCloud& cloud, const opt::Policy& policy,
                const model::ModelSpec& model, const Mat& dw, double dt, unsigned threads = 1);

// Fills out (count x dim) with N(0, dt) increments of the path-noise substream
// for the given global step index.
void gaussian_increments(const CounterRng& rng, std::uint64_t step, std::size_t count,
                         std::size_t dim, double dt, Mat& out, unsigned threads);

struct InitialState {
    measures::ParticleCloud cloud;
    std::uint64_t step_index = 0;  // global step the cloud sits at
};

// Full trajectory of the separated system on the configured grid, starting
// from the deterministic initial condition (pi_0, y_0) (plus any configured
// random jitter).
Trajectory simulate_separated(const model::ModelSpec& model, const opt::Policy& policy,
                              const SimConfig& config);

// Restart variant: continues from a snapshot; consumes exactly the counters
// the straight run would, so the result is bitwise identical to it.
Trajectory simulate_separated_from(const model::ModelSpec& model, const opt::Policy& policy,
                                   const SimConfig& config, const InitialState& init);

// Coupled-refinement variant: advances with time step aggregate * config.dt
// while consuming the base-grid increments of config summed aggregate at a
// time, so runs with different aggregation factors share one Brownian path.
Trajectory simulate_separated_aggregated(const model::ModelSpec& model, const opt::Policy& policy,
                                         const SimConfig& config, std::size_t aggregate);

// Monte Carlo reward of the separated problem. The standard error treats
// particles as independent replicas, exact for non-mean-field models and an
// O(1/M) approximation otherwise.
RewardEstimate estimate_reward(const model::ModelSpec& model, const opt::Policy& policy,
                               const SimConfig& config);

// Reward plus the bounded-test measure-change diagnostic
// mean_P[tanh(Y_T,1) <x,1>] used against the original problem.
struct SeparatedReport {
    RewardEstimate reward;
    RewardEstimate phi;  // weighted tanh(y_1) at T
    Trajectory trajectory;
};
SeparatedReport simulate_separated_report(const model::ModelSpec& model,
                                          const opt::Policy& policy, const SimConfig& config);

// Piecewise-constant exact simulation of the hidden chain.
struct ChainPath {
    std::vector<double> jump_times;   // starts at the path origin
    std::vector<std::size_t> states;  // states[k] holds on [jump_times[k], jump_times[k+1])

    std::size_t state_at(double t) const;
};
ChainPath markov_chain_path(const model::RegimeModel& regime, double t_begin, double t_end,
                            SubstreamCursor& draws);

// One path of the original partially observed problem under Q: chain, noise,
// observation path, Girsanov likelihood and reward. The unnormalized filter is
// propagated from the observation increments so feedback policies see the same
// information as in the separated problem.
struct OriginalPath {
    ChainPath regime_path;
    Mat b_increments;   // steps x d
    Mat y_path;         // (steps+1) x d
    double likelihood = 1.0;  // L_T, strictly positive
    double reward = 0.0;      // running f integral plus terminal g
    double phi_terminal = 0.0;
};
OriginalPath simulate_original_path(const model::ModelSpec& model, const opt::Policy& policy,
                                    const SimConfig& config, std::uint32_t path_id);

struct OriginalResult {
    RewardEstimate reward;
    RewardEstimate phi;  // tanh(y_1) at T under Q
};
// Monte Carlo estimate over config.n_particles paths. Requires a
// non-mean-field model; throws Error("MeanFieldUnsupported") otherwise.
OriginalResult simulate_original(const model::ModelSpec& model, const opt::Policy& policy,
                                 const SimConfig& config);

// Discrete Girsanov exponential exp(sum h_k . dW_k - 0.5 sum |h_k|^2 dt).
// Throws Error("Overflow") when the exponent magnitude exceeds 700.
double girsanov_weight(const Mat& hpath, const Mat& dwpath, double dt);

// Picard iteration for the McKean-Vlasov fixed point: iterate j+1 re-simulates
// with the h-statistics flow frozen from iterate j, under the same noise.
// Iterate 0 freezes the flow at the initial measure, so for a non-mean-field
// model every iterate coincides with the plain simulation.
struct FlowSummary {
    Vec times;
    std::vector<Vec> z_per_step;   // h statistics per step (empty when h has none)
    Vec mass_mean;                 // per recorded time
};
struct PicardResult {
    std::vector<FlowSummary> iterates;
    Vec diffs;            // diffs[k-1] = max_grid (mean_i |X^(k) - X^(k-1)|^p)^(1/p)
    bool converged = false;
    std::string note;     // "NotConverged(k_max)" when the budget ran out
};
PicardResult picard_solve(const model::ModelSpec& model, const opt::Policy& policy,
                          const SimConfig& config, std::size_t k_max, double tol);

// Corollary-style flow check: runs [t0,T] straight, then [t0,s] + restart
// [s,T], and returns the max componentwise difference over all particles and
// recorded times. Must be exactly zero.
double flow_restart_check(const model::ModelSpec& model, const opt::Policy& policy,
                          const SimConfig& config, double split_time);

// Compact binary snapshot ("ZMFC", version, little-endian f64 arrays).
void save_snapshot(const std::string& path, const measures::ParticleCloud& cloud,
                   std::uint64_t step_index, std::uint64_t seed);
struct Snapshot {
    measures::ParticleCloud cloud;
    std::uint64_t step_index = 0;
    std::uint64_t seed = 0;
};
Snapshot load_snapshot(const std::string& path);

} // namespace zmfc::sim
