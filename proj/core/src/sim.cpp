#include "zmfc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "zmfc/parallel.hpp"

namespace zmfc::sim {

namespace {

constexpr double kExpGuard = 700.0;
constexpr double kGridTol = 1e-9;

double pairwise_mean(std::span<const double> v) {
    return pairwise_sum(v) / static_cast<double>(v.size());
}

RewardEstimate mean_and_se(std::span<const double> v) {
    const double mean = pairwise_mean(v);
    if (v.size() < 2) return {mean, 0.0};
    Vec dev(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) dev[i] = (v[i] - mean) * (v[i] - mean);
    const double var = pairwise_sum(dev) / static_cast<double>(v.size() - 1);
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

} // namespace

void SimConfig::validate() const {
    if (!(dt > 0.0)) throw Error("BadConfig", "dt must be positive");
    if (dt > 0.1 + 1e-15) throw Error("BadConfig", "dt must be <= 0.1");
    if (T < t0) throw Error("BadConfig", "T must be >= t0");
    if (n_particles == 0) throw Error("BadConfig", "n_particles must be >= 1");
    if (record_every == 0) throw Error("BadConfig", "record_every must be >= 1");
    const double ratio = (T - t0) / dt;
    if (std::abs(ratio - std::round(ratio)) > kGridTol)
        throw Error("BadConfig", "(T - t0)/dt must be an integer within 1e-9");
}

std::uint64_t SimConfig::n_steps() const {
    return static_cast<std::uint64_t>(std::llround((T - t0) / dt));
}

Mat chain_propagator(const Mat& lambda, double dt) {
    model::validate_rate_matrix(lambda);
    const std::size_t n = lambda.rows;
    double theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) theta = std::max(theta, -lambda(i, i));

    // P = Lambda^T + theta I is entrywise nonnegative, so every Taylor term of
    // exp(P dt) is nonnegative and no cancellation can produce negatives.
    Mat a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) = (lambda(j, i) + (i == j ? theta : 0.0)) * dt;

    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += a(i, j);
        norm = std::max(norm, row);
    }
    int squarings = 0;
    while (norm > 0.0625 && squarings < 60) {
        norm *= 0.5;
        ++squarings;
    }
    const double scale = std::ldexp(1.0, -squarings);
    Mat b = a;
    for (double& v : b.data) v *= scale;

    // Horner form of the 6th-order Taylor polynomial; every stage is
    // I + (B/k) * previous, keeping all entries nonnegative.
    Mat s = Mat::identity(n);
    for (int k = 6; k >= 1; --k) {
        Mat bs = matmul(b, s);
        s = Mat::identity(n);
        for (std::size_t idx = 0; idx < s.data.size(); ++idx) s.data[idx] += bs.data[idx] / k;
    }
    for (int i = 0; i < squarings; ++i) s = matmul(s, s);

    const double damp = std::exp(-theta * dt);
    for (double& v : s.data) v *= damp;
    return s;
}

void y_step(std::span<double> y, std::span<const double> dW, const model::Coefficient& sigma) {
    Mat buf;
    sigma.eval_sigma(y, buf);
    const std::size_t d = y.size();
    Vec inc(d);
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += buf(i, j) * dW[j];
        inc[i] = s;
    }
    for (std::size_t i = 0; i < d; ++i) y[i] += inc[i];
}

namespace detail {

void zakai_step_ws(std::span<double> x, const Mat& hvals, std::span<const double> dW, double dt,
                   const Mat& e_dt, std::span<double> tmp) {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto hi = hvals.row(i);
        const double arg = dot(hi, dW) - 0.5 * dot(hi, hi) * dt;
        if (std::abs(arg) > kExpGuard)
            throw Error("Overflow", "zakai geometric exponent exceeds 700");
        tmp[i] = x[i] * std::exp(arg);
    }
    matvec(e_dt, tmp, x);
}

void y_step_ws(std::span<double> y, std::span<const double> dW, const model::Coefficient& sigma,
               Mat& buf, std::span<double> inc) {
    sigma.eval_sigma(y, buf);
    const std::size_t d = y.size();
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += buf(i, j) * dW[j];
        inc[i] = s;
    }
    for (std::size_t i = 0; i < d; ++i) y[i] += inc[i];
}

} // namespace detail

void zakai_step(std::span<double> x, const Mat& hvals, std::span<const double> dW, double dt,
                const Mat& e_dt) {
    Vec tmp(x.size());
    detail::zakai_step_ws(x, hvals, dW, dt, e_dt, tmp);
}

void zakai_step(std::span<double> x, const Mat& hvals, std::span<const double> dW, double dt,
                const Mat& lambda, int) {
    const Mat e = chain_propagator(lambda, dt);
    zakai_step(x, hvals, dW, dt, e);
}

Stepper::Stepper(const model::ModelSpec& model, double dt, unsigned threads)
    : model_(&model), dt_(dt), threads_(threads),
      e_dt_(chain_propagator(model.regime.rate_matrix, dt)) {}

void Stepper::assign_controls(measures::ParticleCloud& cloud, const opt::Policy& policy) const {
    parallel_for(cloud.count, threads_, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            policy.eval(cloud.t, cloud.x_at(i), cloud.y_at(i), cloud.a_at(i));
    });
}

Stepper::StepInfo Stepper::step(measures::ParticleCloud& cloud, const opt::Policy& policy,
                                const Mat& dw, const Vec* frozen_zh, bool want_f) {
    const model::ModelSpec& m = *model_;
    const std::size_t count = cloud.count;
    const std::size_t n = m.regime.n_states;
    const std::size_t d = m.dim_d;

    assign_controls(cloud, policy);
    const auto nu = measures::gamma_measure(cloud);

    StepInfo info;
    info.z_self = measures::eval_stats(nu, m.h.stats(), m.controls.reference);
    info.z_h = frozen_zh ? *frozen_zh : info.z_self;
    const Vec z_f =
        want_f ? measures::eval_stats(nu, m.f.stats(), m.controls.reference) : Vec{};

    info.f_contrib.assign(count, 0.0);
    Vec min_buf(count);

    parallel_for(count, threads_, [&](std::size_t lo, std::size_t hi) {
        Mat h_buf(n, d);
        Mat sig_buf;
        Vec x_tmp(n), y_inc(d);
        for (std::size_t i = lo; i < hi; ++i) {
            auto x = cloud.x_at(i);
            auto y = cloud.y_at(i);
            auto a = cloud.a_at(i);
            if (want_f) {
                double fc = 0.0;
                for (std::size_t j = 0; j < n; ++j) fc += x[j] * m.f.eval_f(y, z_f, a, j);
                info.f_contrib[i] = fc;
            }
            m.h.eval_h(y, info.z_h, a, h_buf);
            const auto dwi = dw.row(i);
            detail::zakai_step_ws(x, h_buf, dwi, dt_, e_dt_, x_tmp);
            detail::y_step_ws(y, dwi, m.sigma, sig_buf, y_inc);
            double mn = x[0];
            for (std::size_t j = 1; j < n; ++j) mn = std::min(mn, x[j]);
            min_buf[i] = mn;
        }
    });

    info.f_mean = want_f ? pairwise_mean(info.f_contrib) : 0.0;
    info.min_x = *std::min_element(min_buf.begin(), min_buf.end());
    if (info.min_x < 0.0)
        throw Error("PositivityViolated", "a filter component went negative");
    cloud.t += dt_;
    return info;
}

void step_cloud(measures::ParticleCloud& cloud, const opt::Policy& policy,
                const model::ModelSpec& model, const Mat& dw, double dt, unsigned threads) {
    Stepper stepper(model, dt, threads);
    stepper.step(cloud, policy, dw);
}

void gaussian_increments(const CounterRng& rng, std::uint64_t step, std::size_t count,
                         std::size_t dim, double dt, Mat& out, unsigned threads) {
    if (out.rows != count || out.cols != dim) out = Mat(count, dim);
    const double sq = std::sqrt(dt);
    parallel_for(count, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            auto row = out.row(i);
            rng.fill_normals(CounterRng::kPathNoise, static_cast<std::uint32_t>(i), step, row);
            for (double& v : row) v *= sq;
        }
    });
}

namespace {

struct EngineOptions {
    std::uint64_t step_begin = 0;
    std::uint64_t step_end = 0;
    const measures::ParticleCloud* init = nullptr;
    const std::vector<Vec>* frozen_zh = nullptr;  // indexed by global step
    bool collect_x_history = false;
};

struct EngineResult {
    Trajectory trajectory;
    std::vector<Vec> realized_zh;  // step_begin .. step_end-1
    std::vector<Vec> x_history;    // every step incl. endpoints, when requested
    Vec particle_total;            // running f integral + terminal g, per particle
    RewardEstimate reward;
    RewardEstimate phi;            // mass-weighted tanh(y_1) at T
    measures::ParticleCloud final_cloud;
};

measures::ParticleCloud build_initial_cloud(const model::ModelSpec& model,
                                            const SimConfig& config) {
    auto cloud = measures::ParticleCloud::uniform(config.n_particles, model.regime.initial_dist,
                                                  model.y0, model.controls.dim, config.t0);
    if (config.init_y_sd > 0.0 || config.init_mass_jitter > 0.0) {
        const CounterRng rng(config.seed);
        for (std::size_t i = 0; i < cloud.count; ++i) {
            if (config.init_y_sd > 0.0) {
                Vec z(cloud.dim_y);
                rng.fill_normals(CounterRng::kInitDraw, static_cast<std::uint32_t>(i), 0, z);
                auto y = cloud.y_at(i);
                for (std::size_t j = 0; j < cloud.dim_y; ++j) y[j] += config.init_y_sd * z[j];
            }
            if (config.init_mass_jitter > 0.0) {
                const double u =
                    rng.uniform(CounterRng::kInitDraw, static_cast<std::uint32_t>(i), 1);
                const double scale = 1.0 + config.init_mass_jitter * (2.0 * u - 1.0);
                for (double& v : cloud.x_at(i)) v *= scale;
            }
        }
    }
    return cloud;
}

EngineResult run_engine(const model::ModelSpec& model, const opt::Policy& policy,
                        const SimConfig& config, const EngineOptions& opts) {
    config.validate();
    const std::size_t count = config.n_particles;
    const std::size_t d = model.dim_d;
    if (opts.init && opts.init->count != count)
        throw Error("BadConfig", "snapshot particle count does not match the configuration");

    measures::ParticleCloud cloud =
        opts.init ? *opts.init : build_initial_cloud(model, config);
    Stepper stepper(model, config.dt, config.threads);
    const CounterRng rng(config.seed);

    EngineResult res;
    Trajectory& traj = res.trajectory;
    traj.min_x_seen = cloud.min_x_component();
    if (traj.min_x_seen < 0.0)
        throw Error("PositivityViolated", "initial filter state has a negative component");

    Vec particle_running(count, 0.0);
    double running = 0.0;
    Mat dw;

    auto record = [&](std::uint64_t k) {
        stepper.assign_controls(cloud, policy);
        traj.times.push_back(cloud.t);
        traj.clouds.push_back(cloud);
        traj.running_reward.push_back(running);
        traj.rng_checkpoints.push_back({config.seed, k});
        const auto ms = cloud.mass_stats();
        traj.mass_ok.push_back(std::abs(ms.mean - 1.0) <= 5.0 * ms.stderr_ + 1e-12);
    };

    for (std::uint64_t k = opts.step_begin;; ++k) {
        cloud.t = config.time_at(k);
        const bool last = k == opts.step_end;
        if (k % config.record_every == 0 || last) record(k);
        if (opts.collect_x_history) res.x_history.push_back(cloud.x);
        if (last) break;

        gaussian_increments(rng, k, count, d, config.dt, dw, config.threads);
        const Vec* frozen =
            opts.frozen_zh ? &(*opts.frozen_zh)[static_cast<std::size_t>(k)] : nullptr;
        const auto info = stepper.step(cloud, policy, dw, frozen);
        res.realized_zh.push_back(info.z_self);

        for (std::size_t i = 0; i < count; ++i)
            particle_running[i] += info.f_contrib[i] * config.dt;
        running += info.f_mean * config.dt;
        traj.min_x_seen = std::min(traj.min_x_seen, info.min_x);
    }

    // Terminal reward term <x, g(y, Gamma_1(mu_T))> and the bounded-test
    // measure-change diagnostic.
    const auto gamma1 = measures::gamma1_measure(cloud);
    const Vec z_g = measures::eval_stats(gamma1, model.g.stats(), model.controls.reference);
    const std::size_t n = model.regime.n_states;
    Vec phi_contrib(count);
    res.particle_total.resize(count);
    parallel_for(count, config.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto x = cloud.x_at(i);
            const auto y = cloud.y_at(i);
            double gc = 0.0;
            for (std::size_t j = 0; j < n; ++j) gc += x[j] * model.g.eval_g(y, z_g, j);
            res.particle_total[i] = particle_running[i] + gc;
            phi_contrib[i] = cloud.mass(i) * std::tanh(y[0]);
        }
    });
    res.reward = mean_and_se(res.particle_total);
    res.phi = mean_and_se(phi_contrib);
    res.final_cloud = std::move(cloud);
    return res;
}

} // namespace

Trajectory simulate_separated(const model::ModelSpec& model, const opt::Policy& policy,
                              const SimConfig& config) {
    EngineOptions opts;
    opts.step_end = config.n_steps();
    return run_engine(model, policy, config, opts).trajectory;
}

Trajectory simulate_separated_from(const model::ModelSpec& model, const opt::Policy& policy,
                                   const SimConfig& config, const InitialState& init) {
    EngineOptions opts;
    opts.step_begin = init.step_index;
    opts.step_end = config.n_steps();
    if (opts.step_begin > opts.step_end)
        throw Error("BadConfig", "snapshot lies beyond the configured horizon");
    opts.init = &init.cloud;
    return run_engine(model, policy, config, opts).trajectory;
}

Trajectory simulate_separated_aggregated(const model::ModelSpec& model, const opt::Policy& policy,
                                         const SimConfig& config, std::size_t aggregate) {
    config.validate();
    if (aggregate == 0) throw Error("BadConfig", "aggregation factor must be >= 1");
    const std::uint64_t base_steps = config.n_steps();
    if (base_steps % aggregate != 0)
        throw Error("BadConfig", "base step count must be divisible by the aggregation factor");
    const std::uint64_t coarse_steps = base_steps / aggregate;
    const double dt_coarse = config.dt * static_cast<double>(aggregate);
    const std::size_t count = config.n_particles;
    const std::size_t d = model.dim_d;

    measures::ParticleCloud cloud = build_initial_cloud(model, config);
    Stepper stepper(model, dt_coarse, config.threads);
    const CounterRng rng(config.seed);

    Trajectory traj;
    traj.min_x_seen = cloud.min_x_component();
    double running = 0.0;
    Mat dw_base, dw_sum(count, d);

    auto record = [&](std::uint64_t k) {
        stepper.assign_controls(cloud, policy);
        traj.times.push_back(cloud.t);
        traj.clouds.push_back(cloud);
        traj.running_reward.push_back(running);
        traj.rng_checkpoints.push_back({config.seed, k * aggregate});
        const auto ms = cloud.mass_stats();
        traj.mass_ok.push_back(std::abs(ms.mean - 1.0) <= 5.0 * ms.stderr_ + 1e-12);
    };

    for (std::uint64_t k = 0;; ++k) {
        cloud.t = config.t0 + static_cast<double>(k) * dt_coarse;
        const bool last = k == coarse_steps;
        if (k % config.record_every == 0 || last) record(k);
        if (last) break;
        std::fill(dw_sum.data.begin(), dw_sum.data.end(), 0.0);
        for (std::size_t j = 0; j < aggregate; ++j) {
            gaussian_increments(rng, k * aggregate + j, count, d, config.dt, dw_base,
                                config.threads);
            for (std::size_t idx = 0; idx < dw_sum.data.size(); ++idx)
                dw_sum.data[idx] += dw_base.data[idx];
        }
        const auto info = stepper.step(cloud, policy, dw_sum);
        running += info.f_mean * dt_coarse;
        traj.min_x_seen = std::min(traj.min_x_seen, info.min_x);
    }
    return traj;
}

RewardEstimate estimate_reward(const model::ModelSpec& model, const opt::Policy& policy,
                               const SimConfig& config) {
    EngineOptions opts;
    opts.step_end = config.n_steps();
    return run_engine(model, policy, config, opts).reward;
}

SeparatedReport simulate_separated_report(const model::ModelSpec& model,
                                          const opt::Policy& policy, const SimConfig& config) {
    EngineOptions opts;
    opts.step_end = config.n_steps();
    auto res = run_engine(model, policy, config, opts);
    return {res.reward, res.phi, std::move(res.trajectory)};
}

std::size_t ChainPath::state_at(double t) const {
    std::size_t k = jump_times.size();
    while (k > 1 && jump_times[k - 1] > t) --k;
    return states[k - 1];
}

ChainPath markov_chain_path(const model::RegimeModel& regime, double t_begin, double t_end,
                            SubstreamCursor& draws) {
    ChainPath path;
    // Initial state from pi_0.
    const double u0 = draws.uniform();
    std::size_t state = regime.n_states - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < regime.n_states; ++i) {
        acc += regime.initial_dist[i];
        if (u0 <= acc) {
            state = i;
            break;
        }
    }
    path.jump_times.push_back(t_begin);
    path.states.push_back(state);

    double t = t_begin;
    while (true) {
        const double rate = -regime.rate_matrix(state, state);
        if (rate <= 0.0) break;  // absorbing
        t += -std::log(draws.uniform()) / rate;
        if (t >= t_end) break;
        const double u = draws.uniform();
        double cum = 0.0;
        std::size_t next = state;
        for (std::size_t j = 0; j < regime.n_states; ++j) {
            if (j == state) continue;
            cum += regime.rate_matrix(state, j) / rate;
            if (u <= cum) {
                next = j;
                break;
            }
        }
        if (next == state) {  // guard against cum rounding just below 1
            for (std::size_t j = regime.n_states; j-- > 0;)
                if (j != state && regime.rate_matrix(state, j) > 0.0) {
                    next = j;
                    break;
                }
        }
        state = next;
        path.jump_times.push_back(t);
        path.states.push_back(state);
    }
    return path;
}

OriginalPath simulate_original_path(const model::ModelSpec& model, const opt::Policy& policy,
                                    const SimConfig& config, std::uint32_t path_id) {
    const std::uint64_t steps = config.n_steps();
    const std::size_t n = model.regime.n_states;
    const std::size_t d = model.dim_d;
    const CounterRng rng(config.seed);

    OriginalPath path;
    SubstreamCursor chain_draws(rng, CounterRng::kChainPath, path_id);
    path.regime_path = markov_chain_path(model.regime, config.t0, config.T, chain_draws);
    path.b_increments = Mat(steps, d);
    path.y_path = Mat(steps + 1, d);

    Vec y(model.y0.begin(), model.y0.end());
    Vec x(model.regime.initial_dist.begin(), model.regime.initial_dist.end());
    const Mat e_dt = chain_propagator(model.regime.rate_matrix, config.dt);

    Mat h_buf(n, d), sig_buf;
    Vec a(model.controls.dim), dw(d), x_tmp(n), y_inc(d);
    const Vec z_empty;
    double log_likelihood = 0.0;
    double reward = 0.0;
    const double sq = std::sqrt(config.dt);

    for (std::size_t j = 0; j < d; ++j) path.y_path(0, j) = y[j];

    for (std::uint64_t k = 0; k < steps; ++k) {
        const double t = config.time_at(k);
        const std::size_t regime_now = path.regime_path.state_at(t);
        policy.eval(t, x, y, a);
        model.h.eval_h(y, z_empty, a, h_buf);
        const auto h_true = h_buf.row(regime_now);

        auto db = path.b_increments.row(k);
        rng.fill_normals(CounterRng::kOriginalNoise, path_id, k, db);
        for (double& v : db) v *= sq;

        reward += model.f.eval_f(y, z_empty, a, regime_now) * config.dt;

        for (std::size_t j = 0; j < d; ++j) dw[j] = h_true[j] * config.dt + db[j];
        log_likelihood += dot(h_true, dw) - 0.5 * dot(h_true, h_true) * config.dt;

        detail::zakai_step_ws(x, h_buf, dw, config.dt, e_dt, x_tmp);
        detail::y_step_ws(y, dw, model.sigma, sig_buf, y_inc);
        for (std::size_t j = 0; j < d; ++j) path.y_path(k + 1, j) = y[j];
    }

    const std::size_t regime_end = path.regime_path.state_at(config.T);
    reward += model.g.eval_g(y, z_empty, regime_end);
    if (std::abs(log_likelihood) > kExpGuard)
        throw Error("Overflow", "girsanov exponent exceeds 700");
    path.likelihood = std::exp(log_likelihood);
    path.reward = reward;
    path.phi_terminal = std::tanh(y[0]);
    return path;
}

OriginalResult simulate_original(const model::ModelSpec& model, const opt::Policy& policy,
                                 const SimConfig& config) {
    if (model.is_mean_field)
        throw Error("MeanFieldUnsupported",
                    "the original-problem oracle does not support Q-law feedback");
    config.validate();
    const std::size_t paths = config.n_particles;
    Vec rewards(paths), phis(paths);
    parallel_for(paths, config.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto p =
                simulate_original_path(model, policy, config, static_cast<std::uint32_t>(i));
            rewards[i] = p.reward;
            phis[i] = p.phi_terminal;
        }
    });
    return {mean_and_se(rewards), mean_and_se(phis)};
}

double girsanov_weight(const Mat& hpath, const Mat& dwpath, double dt) {
    if (hpath.rows != dwpath.rows || hpath.cols != dwpath.cols)
        throw Error("BadDimension", "girsanov_weight needs matching h and dW shapes");
    double exponent = 0.0;
    for (std::size_t k = 0; k < hpath.rows; ++k) {
        const auto h = hpath.row(k);
        exponent += dot(h, dwpath.row(k)) - 0.5 * dot(h, h) * dt;
    }
    if (std::abs(exponent) > kExpGuard)
        throw Error("Overflow", "girsanov exponent exceeds 700");
    return std::exp(exponent);
}

namespace {

FlowSummary summarize(const EngineResult& res) {
    FlowSummary s;
    s.times = res.trajectory.times;
    s.z_per_step = res.realized_zh;
    s.mass_mean.reserve(res.trajectory.clouds.size());
    for (const auto& c : res.trajectory.clouds) s.mass_mean.push_back(c.mass_stats().mean);
    return s;
}

double max_grid_pnorm(const std::vector<Vec>& a, const std::vector<Vec>& b, double p,
                      std::size_t count, std::size_t dim_x) {
    double worst = 0.0;
    Vec contrib(count);
    for (std::size_t s = 0; s < a.size(); ++s) {
        for (std::size_t i = 0; i < count; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < dim_x; ++j) {
                const double diff = a[s][i * dim_x + j] - b[s][i * dim_x + j];
                sq += diff * diff;
            }
            contrib[i] = std::pow(std::sqrt(sq), p);
        }
        const double norm = std::pow(pairwise_mean(contrib), 1.0 / p);
        worst = std::max(worst, norm);
    }
    return worst;
}

} // namespace

PicardResult picard_solve(const model::ModelSpec& model, const opt::Policy& policy,
                          const SimConfig& config, std::size_t k_max, double tol) {
    config.validate();
    const std::size_t steps = static_cast<std::size_t>(config.n_steps());

    // Statistics of the initial measure: the flow frozen for iterate 0.
    EngineOptions head;
    head.step_end = 0;
    const auto head_res = run_engine(model, policy, config, head);
    const auto nu0 = measures::gamma_measure(head_res.final_cloud);
    const Vec z0 = measures::eval_stats(nu0, model.h.stats(), model.controls.reference);
    std::vector<Vec> frozen(steps, z0);

    PicardResult result;
    EngineOptions opts;
    opts.step_end = steps;
    opts.collect_x_history = true;
    opts.frozen_zh = &frozen;
    EngineResult prev = run_engine(model, policy, config, opts);
    result.iterates.push_back(summarize(prev));

    for (std::size_t k = 1; k <= k_max; ++k) {
        frozen = prev.realized_zh;
        EngineResult cur = run_engine(model, policy, config, opts);
        const double diff = max_grid_pnorm(cur.x_history, prev.x_history, model.growth.p,
                                           config.n_particles, model.regime.n_states);
        result.diffs.push_back(diff);
        result.iterates.push_back(summarize(cur));
        prev = std::move(cur);
        if (diff < tol) {
            result.converged = true;
            break;
        }
    }
    if (!result.converged && k_max > 0)
        result.note = "NotConverged(" + std::to_string(k_max) + ")";
    return result;
}

double flow_restart_check(const model::ModelSpec& model, const opt::Policy& policy,
                          const SimConfig& config, double split_time) {
    config.validate();
    const std::uint64_t steps = config.n_steps();
    const double ratio = (split_time - config.t0) / config.dt;
    const auto k0 = static_cast<std::uint64_t>(std::llround(ratio));
    if (std::abs(ratio - std::round(ratio)) > kGridTol || k0 > steps)
        throw Error("BadConfig", "split time must lie on the time grid");

    EngineOptions full;
    full.step_end = steps;
    const auto straight = run_engine(model, policy, config, full);

    EngineOptions first;
    first.step_end = k0;
    const auto part1 = run_engine(model, policy, config, first);

    EngineOptions second;
    second.step_begin = k0;
    second.step_end = steps;
    second.init = &part1.final_cloud;
    const auto part2 = run_engine(model, policy, config, second);

    auto cloud_diff = [](const measures::ParticleCloud& a, const measures::ParticleCloud& b) {
        double worst = std::abs(a.t - b.t);
        for (std::size_t i = 0; i < a.x.size(); ++i)
            worst = std::max(worst, std::abs(a.x[i] - b.x[i]));
        for (std::size_t i = 0; i < a.y.size(); ++i)
            worst = std::max(worst, std::abs(a.y[i] - b.y[i]));
        for (std::size_t i = 0; i < a.a.size(); ++i)
            worst = std::max(worst, std::abs(a.a[i] - b.a[i]));
        return worst;
    };

    // Every snapshot of the straight run has a counterpart in part1 (before
    // the split) or part2 (from the split on), found by its global step index.
    auto find_at = [](const Trajectory& t, std::uint64_t step) -> const measures::ParticleCloud* {
        for (std::size_t s = 0; s < t.rng_checkpoints.size(); ++s)
            if (t.rng_checkpoints[s].step_index == step) return &t.clouds[s];
        return nullptr;
    };

    double worst = 0.0;
    for (std::size_t s = 0; s < straight.trajectory.clouds.size(); ++s) {
        const std::uint64_t k = straight.trajectory.rng_checkpoints[s].step_index;
        const auto* probe =
            k < k0 ? find_at(part1.trajectory, k) : find_at(part2.trajectory, k);
        if (probe == nullptr && k <= k0) probe = find_at(part1.trajectory, k);
        if (probe == nullptr)
            throw Error("BadConfig", "restarted run is missing a recorded step");
        worst = std::max(worst, cloud_diff(straight.trajectory.clouds[s], *probe));
    }
    return worst;
}

namespace {

constexpr char kMagic[4] = {'Z', 'M', 'F', 'C'};
constexpr std::uint32_t kSnapshotVersion = 1;

template <typename T>
void put(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void get(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof v);
}

} // namespace

void save_snapshot(const std::string& path, const measures::ParticleCloud& cloud,
                   std::uint64_t step_index, std::uint64_t seed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("IoError", "cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put(os, kSnapshotVersion);
    put(os, seed);
    put(os, step_index);
    put(os, static_cast<std::uint64_t>(cloud.count));
    put(os, static_cast<std::uint64_t>(cloud.dim_x));
    put(os, static_cast<std::uint64_t>(cloud.dim_y));
    put(os, static_cast<std::uint64_t>(cloud.dim_a));
    put(os, cloud.t);
    os.write(reinterpret_cast<const char*>(cloud.x.data()),
             static_cast<std::streamsize>(cloud.x.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(cloud.y.data()),
             static_cast<std::streamsize>(cloud.y.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(cloud.a.data()),
             static_cast<std::streamsize>(cloud.a.size() * sizeof(double)));
    if (!os) throw Error("IoError", "failed writing snapshot '" + path + "'");
}

Snapshot load_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("IoError", "cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("BadSnapshot", "'" + path + "' is not a ZMFC snapshot");
    std::uint32_t version = 0;
    get(is, version);
    if (version != kSnapshotVersion)
        throw Error("BadSnapshot", "unsupported snapshot version " + std::to_string(version));
    Snapshot snap;
    std::uint64_t count = 0, dim_x = 0, dim_y = 0, dim_a = 0;
    get(is, snap.seed);
    get(is, snap.step_index);
    get(is, count);
    get(is, dim_x);
    get(is, dim_y);
    get(is, dim_a);
    auto& c = snap.cloud;
    get(is, c.t);
    c.count = count;
    c.dim_x = dim_x;
    c.dim_y = dim_y;
    c.dim_a = dim_a;
    c.x.resize(count * dim_x);
    c.y.resize(count * dim_y);
    c.a.resize(count * dim_a);
    is.read(reinterpret_cast<char*>(c.x.data()),
            static_cast<std::streamsize>(c.x.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(c.y.data()),
            static_cast<std::streamsize>(c.y.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(c.a.data()),
            static_cast<std::streamsize>(c.a.size() * sizeof(double)));
    if (!is) throw Error("BadSnapshot", "snapshot '" + path + "' is truncated");
    return snap;
}

} // namespace zmfc::sim
