// zmfc: verification and optimization driver for the separated regime-switching
// mean-field control system. Every command loads a JSON config, writes CSV
// reports plus a manifest.json into --out, and encodes pass/fail in its exit
// status so suites can run it without parsing output.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "zmfc/config.hpp"
#include "zmfc/hjb.hpp"
#include "zmfc/measures.hpp"
#include "zmfc/model.hpp"
#include "zmfc/optimize.hpp"
#include "zmfc/parallel.hpp"
#include "zmfc/sim.hpp"

namespace fs = std::filesystem;
using zmfc::Vec;

namespace {

struct CliOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint32_t> particles;
    std::optional<double> dt;
    std::optional<std::uint32_t> threads;
    std::string out_dir = ".";
    std::string format = "csv";
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Report {
public:
    Report(std::string name, std::vector<std::string> columns)
        : name_(std::move(name)), columns_(std::move(columns)) {}

    void add_row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

    void write(const CliOptions& opts) const {
        const fs::path csv_path = fs::path(opts.out_dir) / (name_ + ".csv");
        std::ofstream os(csv_path);
        if (!os) throw zmfc::Error("IoError", "cannot write " + csv_path.string());
        for (std::size_t c = 0; c < columns_.size(); ++c)
            os << (c ? "," : "") << columns_[c];
        os << "\n";
        for (const auto& row : rows_) {
            for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
            os << "\n";
        }
        if (opts.format == "json") {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& row : rows_) {
                nlohmann::json obj;
                for (std::size_t c = 0; c < row.size(); ++c) obj[columns_[c]] = row[c];
                arr.push_back(obj);
            }
            std::ofstream js(fs::path(opts.out_dir) / (name_ + ".json"));
            js << arr.dump(2) << "\n";
        }
    }

private:
    std::string name_;
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

struct LoadResult {
    zmfc::config::LoadedConfig cfg;
    nlohmann::json resolved;
};

LoadResult load(const CliOptions& opts) {
    std::ifstream is(opts.config_path);
    if (!is) throw zmfc::Error("IoError", "cannot open config '" + opts.config_path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw zmfc::Error("ParseError", e.what());
    }
    zmfc::config::apply_overrides(j, opts.seed, opts.particles, opts.dt, opts.threads);
    auto cfg = zmfc::config::parse_config(j);
    return {std::move(cfg), std::move(j)};
}

class ManifestScope {
public:
    ManifestScope(const std::string& command, const LoadResult& loaded, const CliOptions& opts)
        : opts_(opts),
          manifest_(zmfc::config::make_manifest(command, loaded.resolved, loaded.cfg.sim.seed)),
          start_(std::chrono::steady_clock::now()) {
        fs::create_directories(opts.out_dir);
    }

    ~ManifestScope() {
        manifest_.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        try {
            manifest_.write((fs::path(opts_.out_dir) / "manifest.json").string());
        } catch (...) {
        }
    }

private:
    const CliOptions& opts_;
    zmfc::config::RunManifest manifest_;
    std::chrono::steady_clock::time_point start_;
};

// Per-component empirical mean and standard error of x_j over the cloud.
void component_stats(const zmfc::measures::ParticleCloud& cloud, std::size_t j, double& mean,
                     double& se) {
    Vec v(cloud.count);
    for (std::size_t i = 0; i < cloud.count; ++i) v[i] = cloud.x_at(i)[j];
    mean = zmfc::pairwise_sum(v) / static_cast<double>(cloud.count);
    double var = 0.0;
    for (double xv : v) var += (xv - mean) * (xv - mean);
    var = cloud.count > 1 ? var / static_cast<double>(cloud.count - 1) : 0.0;
    se = std::sqrt(var / static_cast<double>(cloud.count));
}

int cmd_validate(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("validate", loaded, opts);
    std::cout << "validate: ok (model '"
              << (loaded.cfg.liquidation ? "liquidation" : "custom") << "', N="
              << loaded.cfg.model.regime.n_states << ", d=" << loaded.cfg.model.dim_d << ")\n";
    return 0;
}

int cmd_reward(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("reward", loaded, opts);
    const auto est =
        zmfc::sim::estimate_reward(loaded.cfg.model, loaded.cfg.policy, loaded.cfg.sim);
    Report report("reward", {"J_hat", "stderr"});
    report.add_row({fmt(est.j_hat), fmt(est.stderr_)});
    report.write(opts);
    std::cout << "reward: J_hat=" << fmt(est.j_hat) << " stderr=" << fmt(est.stderr_) << "\n";
    return 0;
}

int cmd_filter_check(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("filter-check", loaded, opts);
    const auto& cfg = loaded.cfg;
    const auto traj = zmfc::sim::simulate_separated(cfg.model, cfg.policy, cfg.sim);

    Report report("filter_check", {"t", "j", "mean_xj", "regime_marginal_j", "se", "pass"});
    bool all_pass = true;
    for (std::size_t s = 0; s < traj.clouds.size(); ++s) {
        const double t = traj.times[s];
        const Vec marginal = zmfc::model::regime_marginal(cfg.model.regime, t - cfg.sim.t0);
        for (std::size_t j = 0; j < cfg.model.regime.n_states; ++j) {
            double mean = 0.0, se = 0.0;
            component_stats(traj.clouds[s], j, mean, se);
            const double bound = cfg.tolerances.z_threshold * se +
                                 cfg.tolerances.c_dt_bias * cfg.sim.dt;
            const bool pass = std::abs(mean - marginal[j]) <= bound;
            all_pass = all_pass && pass;
            report.add_row({fmt(t), std::to_string(j + 1), fmt(mean), fmt(marginal[j]), fmt(se),
                            pass ? "1" : "0"});
        }
    }
    if (traj.min_x_seen < 0.0) all_pass = false;
    report.write(opts);
    std::cout << "filter-check: " << (all_pass ? "PASS" : "FAIL")
              << " min_x=" << fmt(traj.min_x_seen) << "\n";
    return all_pass ? 0 : 1;
}

int cmd_equivalence_check(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("equivalence-check", loaded, opts);
    const auto& cfg = loaded.cfg;

    const auto separated =
        zmfc::sim::simulate_separated_report(cfg.model, cfg.policy, cfg.sim);
    const auto original = zmfc::sim::simulate_original(cfg.model, cfg.policy, cfg.sim);

    auto compare = [&](const zmfc::sim::RewardEstimate& s, const zmfc::sim::RewardEstimate& o,
                       double& z, bool& pass) {
        const double combined = std::sqrt(s.stderr_ * s.stderr_ + o.stderr_ * o.stderr_);
        z = combined > 0.0 ? std::abs(s.j_hat - o.j_hat) / combined : 0.0;
        pass = std::abs(s.j_hat - o.j_hat) <=
               cfg.tolerances.z_threshold * combined + cfg.tolerances.c_dt_bias * cfg.sim.dt;
    };

    double z_j = 0.0, z_phi = 0.0;
    bool pass_j = false, pass_phi = false;
    compare(separated.reward, original.reward, z_j, pass_j);
    compare(separated.phi, original.phi, z_phi, pass_phi);

    Report report("equivalence_check",
                  {"J_separated", "se_s", "J_original", "se_o", "z_score", "pass"});
    report.add_row({fmt(separated.reward.j_hat), fmt(separated.reward.stderr_),
                    fmt(original.reward.j_hat), fmt(original.reward.stderr_), fmt(z_j),
                    pass_j ? "1" : "0"});
    report.write(opts);

    Report phi("measure_change", {"phi_separated", "se_s", "phi_original", "se_o", "z_score",
                                  "pass"});
    phi.add_row({fmt(separated.phi.j_hat), fmt(separated.phi.stderr_), fmt(original.phi.j_hat),
                 fmt(original.phi.stderr_), fmt(z_phi), pass_phi ? "1" : "0"});
    phi.write(opts);

    const bool all_pass = pass_j && pass_phi;
    std::cout << "equivalence-check: " << (all_pass ? "PASS" : "FAIL") << " z_J=" << fmt(z_j)
              << " z_phi=" << fmt(z_phi) << "\n";
    return all_pass ? 0 : 1;
}

int cmd_ito_check(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("ito-check", loaded, opts);
    const auto& cfg = loaded.cfg;
    const auto& tol = cfg.tolerances;

    zmfc::sim::SimConfig base = cfg.sim;
    base.n_particles = std::min(base.n_particles, tol.ito_particles);
    base.record_every = 1;

    std::vector<zmfc::hjb::CylindricalTestFn> fns = {
        zmfc::hjb::CylindricalTestFn::mass(cfg.model.regime.n_states, cfg.model.dim_d),
        zmfc::hjb::CylindricalTestFn::y_moment(cfg.model.regime.n_states, cfg.model.dim_d, 0, 1),
        zmfc::hjb::CylindricalTestFn::y_moment(cfg.model.regime.n_states, cfg.model.dim_d, 0, 2),
    };

    // residuals[fn][rung][seed]
    std::vector<std::vector<Vec>> residuals(
        fns.size(), std::vector<Vec>(tol.ito_dts.size(), Vec(tol.ito_seeds, 0.0)));
    double min_x = 0.0;

    for (std::size_t s = 0; s < tol.ito_seeds; ++s) {
        zmfc::sim::SimConfig run_cfg = base;
        run_cfg.seed = base.seed + s;
        for (std::size_t r = 0; r < tol.ito_dts.size(); ++r) {
            const double ratio = tol.ito_dts[r] / base.dt;
            const auto aggregate = static_cast<std::size_t>(std::llround(ratio));
            if (std::abs(ratio - std::round(ratio)) > 1e-9 || aggregate == 0)
                throw zmfc::Error("BadConfig", "ito_dts must be multiples of the base dt");
            const auto traj = zmfc::sim::simulate_separated_aggregated(cfg.model, cfg.policy,
                                                                       run_cfg, aggregate);
            min_x = std::min(min_x, traj.min_x_seen);
            for (std::size_t f = 0; f < fns.size(); ++f)
                residuals[f][r][s] = zmfc::hjb::ito_residual(fns[f], traj, cfg.model).residual;
        }
    }

    Report report("ito_check", {"test_fn_id", "dt", "M", "residual", "stderr"});
    Report decision("ito_check_pass", {"test_fn_id", "delta_mean", "delta_se", "pass"});
    bool all_pass = true;
    for (std::size_t f = 0; f < fns.size(); ++f) {
        for (std::size_t r = 0; r < tol.ito_dts.size(); ++r) {
            double mean = 0.0, se = 0.0;
            const Vec& v = residuals[f][r];
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            for (double x : v) se += (x - mean) * (x - mean);
            se = v.size() > 1 ? std::sqrt(se / static_cast<double>(v.size() - 1) /
                                          static_cast<double>(v.size()))
                              : 0.0;
            report.add_row({fns[f].id(), fmt(tol.ito_dts[r]), std::to_string(base.n_particles),
                            fmt(mean), fmt(se)});
        }
        // Coarse-minus-fine residual per seed; the coarse run must not sit
        // significantly below the fine one once MC error is subtracted.
        Vec delta(tol.ito_seeds);
        for (std::size_t s = 0; s < tol.ito_seeds; ++s)
            delta[s] = residuals[f].front()[s] - residuals[f].back()[s];
        double dm = 0.0, dse = 0.0;
        for (double x : delta) dm += x;
        dm /= static_cast<double>(delta.size());
        for (double x : delta) dse += (x - dm) * (x - dm);
        dse = delta.size() > 1 ? std::sqrt(dse / static_cast<double>(delta.size() - 1) /
                                           static_cast<double>(delta.size()))
                               : 0.0;
        const bool pass = dm >= -tol.z_threshold * dse;
        all_pass = all_pass && pass;
        decision.add_row({fns[f].id(), fmt(dm), fmt(dse), pass ? "1" : "0"});
    }

    // Mass-functional generator must vanish identically (Lambda 1 = 0).
    {
        zmfc::sim::SimConfig small = base;
        small.record_every = std::max<std::size_t>(1, small.n_steps());
        const auto traj = zmfc::sim::simulate_separated(cfg.model, cfg.policy, small);
        const auto breakdown = zmfc::hjb::generator_apply(
            fns[0], traj.times.back(), traj.clouds.back(), cfg.model);
        const bool pass = std::abs(breakdown.total_without_f()) <= tol.mass_generator_tol;
        all_pass = all_pass && pass;
        decision.add_row({"mass_generator", fmt(breakdown.total_without_f()), "0",
                          pass ? "1" : "0"});
    }
    if (min_x < 0.0) all_pass = false;

    report.write(opts);
    decision.write(opts);
    std::cout << "ito-check: " << (all_pass ? "PASS" : "FAIL") << "\n";
    return all_pass ? 0 : 1;
}

int cmd_flow_check(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("flow-check", loaded, opts);
    const auto& cfg = loaded.cfg;

    const std::uint64_t steps = cfg.sim.n_steps();
    const std::uint64_t mid = (steps / 2 / cfg.sim.record_every) * cfg.sim.record_every;
    const std::vector<double> splits = {cfg.sim.t0, cfg.sim.time_at(mid), cfg.sim.T};

    Report report("flow_check", {"split", "max_abs_diff", "pass"});
    bool all_pass = true;
    for (const double s : splits) {
        const double diff = zmfc::sim::flow_restart_check(cfg.model, cfg.policy, cfg.sim, s);
        const bool pass = diff == 0.0;
        all_pass = all_pass && pass;
        report.add_row({fmt(s), fmt(diff), pass ? "1" : "0"});
    }
    report.write(opts);
    std::cout << "flow-check: " << (all_pass ? "PASS" : "FAIL") << "\n";
    return all_pass ? 0 : 1;
}

int cmd_picard(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("picard", loaded, opts);
    const auto& cfg = loaded.cfg;

    zmfc::sim::SimConfig run_cfg = cfg.sim;
    run_cfg.n_particles = std::min(run_cfg.n_particles, cfg.tolerances.picard_particles);
    const auto result = zmfc::sim::picard_solve(cfg.model, cfg.policy, run_cfg,
                                                cfg.tolerances.picard_iters,
                                                cfg.tolerances.picard_tol);

    Report report("picard", {"iter", "diff"});
    for (std::size_t k = 0; k < result.diffs.size(); ++k)
        report.add_row({std::to_string(k + 1), fmt(result.diffs[k])});
    report.write(opts);

    bool pass = true;
    if (!cfg.model.is_mean_field) {
        pass = !result.diffs.empty() && result.diffs.front() == 0.0;
    } else {
        for (std::size_t k = 1; k < result.diffs.size(); ++k)
            pass = pass && result.diffs[k] < result.diffs[k - 1];
    }
    std::cout << "picard: " << (pass ? "PASS" : "FAIL");
    if (!result.note.empty()) std::cout << " (" << result.note << ")";
    std::cout << "\n";
    return pass ? 0 : 1;
}

int cmd_optimize(const CliOptions& opts) {
    const auto loaded = load(opts);
    const ManifestScope scope("optimize", loaded, opts);
    const auto& cfg = loaded.cfg;

    std::vector<std::string> columns = {"eval_id"};
    for (std::size_t k = 0; k < cfg.policy.theta.size(); ++k)
        columns.push_back("theta_" + std::to_string(k + 1));
    columns.push_back("J_hat");
    columns.push_back("stderr");
    Report report("optimize_evals", columns);

    nlohmann::json summary;
    bool pass = true;

    auto dump_history = [&](const zmfc::opt::OptResult& result) {
        for (std::size_t e = 0; e < result.history.size(); ++e) {
            std::vector<std::string> row = {std::to_string(e)};
            for (const double th : result.history[e].theta) row.push_back(fmt(th));
            row.push_back(fmt(result.history[e].j_hat));
            row.push_back(fmt(result.history[e].stderr_));
            report.add_row(row);
        }
    };

    if (cfg.liquidation) {
        const auto rep = zmfc::opt::optimize_liquidation(
            cfg.model, *cfg.liquidation, cfg.sim, cfg.optimize.method,
            cfg.optimize.nelder_mead, cfg.optimize.cross_entropy);
        dump_history(rep.details);
        const double combined = std::sqrt(rep.twap.stderr_ * rep.twap.stderr_ +
                                          rep.optimized.stderr_ * rep.optimized.stderr_);
        pass = rep.optimized.j_hat >= rep.twap.j_hat - combined;
        summary["J_twap"] = rep.twap.j_hat;
        summary["J_twap_stderr"] = rep.twap.stderr_;
        summary["J_opt"] = rep.optimized.j_hat;
        summary["J_opt_stderr"] = rep.optimized.stderr_;
        summary["improvement"] = rep.improvement;
        summary["theta_star"] = rep.optimized.theta;
        summary["method"] = rep.method;
        summary["evaluations"] = rep.details.evaluations;
        if (!rep.details.note.empty()) summary["note"] = rep.details.note;
        std::cout << "optimize: " << (pass ? "PASS" : "FAIL")
                  << " J_twap=" << fmt(rep.twap.j_hat) << " J_opt=" << fmt(rep.optimized.j_hat)
                  << "\n";
    } else {
        const auto objective = zmfc::opt::reward_objective(cfg.model, cfg.policy, cfg.sim);
        zmfc::opt::OptResult result;
        if (cfg.optimize.method == "cross_entropy") {
            Vec prior_std(cfg.policy.theta.size(), 0.25);
            result = zmfc::opt::cross_entropy(objective, cfg.policy.theta, prior_std,
                                              cfg.optimize.cross_entropy);
        } else {
            result = zmfc::opt::nelder_mead(objective, cfg.policy.theta,
                                            cfg.optimize.nelder_mead);
        }
        dump_history(result);
        pass = !result.history.empty() &&
               result.j_star >= result.history.front().j_hat;
        summary["J_theta0"] = result.history.front().j_hat;
        summary["J_opt"] = result.j_star;
        summary["J_opt_stderr"] = result.j_star_stderr;
        summary["theta_star"] = result.theta_star;
        summary["method"] = cfg.optimize.method;
        summary["evaluations"] = result.evaluations;
        std::cout << "optimize: " << (pass ? "PASS" : "FAIL") << " J_opt=" << fmt(result.j_star)
                  << "\n";
    }
    report.write(opts);
    std::ofstream os(fs::path(opts.out_dir) / "optimize_summary.json");
    os << summary.dump(2) << "\n";
    return pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"zmfc: separated Zakai mean-field control simulator and verifier"};
    app.require_subcommand(1);

    CliOptions opts;
    int (*handler)(const CliOptions&) = nullptr;

    auto add_command = [&](const std::string& name, const std::string& desc,
                           int (*fn)(const CliOptions&)) {
        auto* cmd = app.add_subcommand(name, desc);
        cmd->add_option("--config", opts.config_path, "JSON config path")->required();
        cmd->add_option("--seed", opts.seed, "override scenario.seed");
        cmd->add_option("--particles", opts.particles, "override scenario.n_particles");
        cmd->add_option("--dt", opts.dt, "override scenario.dt");
        cmd->add_option("--threads", opts.threads, "override scenario.threads");
        cmd->add_option("--out", opts.out_dir, "output directory (default .)");
        cmd->add_option("--format", opts.format, "csv|json (csv always written)");
        cmd->callback([&, fn] { handler = fn; });
        return cmd;
    };

    add_command("validate", "validate a model configuration", cmd_validate);
    add_command("filter-check", "filter marginals vs the forward equation", cmd_filter_check);
    add_command("equivalence-check", "separated vs original reward", cmd_equivalence_check);
    add_command("ito-check", "Ito-formula residual refinement", cmd_ito_check);
    add_command("flow-check", "restart/flow property", cmd_flow_check);
    add_command("picard", "Picard fixed-point diagnostic", cmd_picard);
    add_command("optimize", "policy optimization report", cmd_optimize);
    add_command("reward", "Monte Carlo reward estimate", cmd_reward);

    CLI11_PARSE(app, argc, argv);

    try {
        return handler ? handler(opts) : 2;
    } catch (const zmfc::Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
