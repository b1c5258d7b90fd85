#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "zmfc/model.hpp"
#include "zmfc/optimize.hpp"
#include "zmfc/policy.hpp"
#include "zmfc/sim.hpp"

namespace zmfc::config {

inline constexpr const char* kToolVersion = "0.1.0";

// Pass/fail thresholds used by the CLI commands. All of them are config fields
// (scenario.tolerances) with these defaults.
struct Tolerances {
    double z_threshold = 3.0;       // z-score bound for two-sample comparisons
    double mass_sigma = 5.0;        // mass martingale band in standard errors
    double c_dt_bias = 1.0;         // additive O(dt) bias allowance, reward units per dt
    Vec dt_ladder = {4e-3, 2e-3, 1e-3};
    Vec ito_dts = {2e-3, 1e-3};     // residual comparison rungs (multiples of the base dt)
    std::size_t ito_seeds = 8;      // seed replicas for residual comparisons
    std::size_t ito_particles = 1000;    // particle cap for residual runs
    std::size_t picard_iters = 3;
    double picard_tol = 0.0;        // 0 disables early convergence exit
    std::size_t picard_particles = 2000; // particle cap for picard runs
    double terminal_tol = 1e-12;
    double mass_generator_tol = 1e-12;
};

struct OptimizeSettings {
    std::string method = "nelder_mead";
    opt::NelderMeadOptions nelder_mead;
    opt::CrossEntropyOptions cross_entropy;
};

struct LoadedConfig {
    model::ModelSpec model;
    std::optional<model::LiquidationParams> liquidation;
    sim::SimConfig sim;
    opt::Policy policy;
    Tolerances tolerances;
    OptimizeSettings optimize;
    nlohmann::json resolved;  // the fully resolved tree (echoed into manifests)
};

// Parses the JSON tree (sections: regime, controls, coefficients, growth,
// scenario). Schema documented in docs/config.md.
LoadedConfig parse_config(const nlohmann::json& j);

// Loads a config file; a manifest file (object with a "config" key) is
// accepted too and replays its embedded config.
LoadedConfig load_config(const std::string& path);

// Applies command-line overrides into the tree before parsing/hashing.
void apply_overrides(nlohmann::json& j, std::optional<std::uint64_t> seed,
                     std::optional<std::uint32_t> particles, std::optional<double> dt,
                     std::optional<std::uint32_t> threads);

// FNV-1a (64-bit) over the canonical serialization: nlohmann::json objects
// keep keys sorted, so permuting keys in the input file cannot change it.
std::uint64_t fnv1a64(std::string_view data);
std::string canonical_dump(const nlohmann::json& j);

struct RunManifest {
    std::string command;
    nlohmann::json config_echo;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string tool_version = kToolVersion;
    double wall_time_s = 0.0;

    nlohmann::json to_json() const;
    void write(const std::string& path) const;
};

RunManifest make_manifest(const std::string& command, const nlohmann::json& resolved,
                          std::uint64_t seed);

} // namespace zmfc::config
