#include "zmfc/config.hpp"

#include <fstream>

namespace zmfc::config {

namespace {

using nlohmann::json;

Vec to_vec(const json& j, const std::string& what) {
    if (!j.is_array()) throw Error("ParseError", what + " must be an array");
    Vec v;
    v.reserve(j.size());
    for (const auto& e : j) {
        if (!e.is_number()) throw Error("ParseError", what + " must contain numbers");
        v.push_back(e.get<double>());
    }
    return v;
}

Mat to_mat(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw Error("ParseError", what + " must be a 2-d array");
    const std::size_t rows = j.size();
    const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
    Mat m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const Vec row = to_vec(j[i], what + " row");
        if (row.size() != cols) throw Error("ParseError", what + " rows have unequal lengths");
        for (std::size_t k = 0; k < cols; ++k) m(i, k) = row[k];
    }
    return m;
}

model::StatSpec parse_stat(const json& j) {
    model::StatSpec st;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "mean_component") {
        st.kind = model::StatSpec::Kind::MeanComponent;
        st.index_i = j.at("index").get<std::size_t>();
    } else if (kind == "moment") {
        st.kind = model::StatSpec::Kind::Moment;
        st.gamma = j.at("gamma").get<double>();
    } else if (kind == "covariance") {
        st.kind = model::StatSpec::Kind::Covariance;
        st.index_i = j.at("i").get<std::size_t>();
        st.index_j = j.at("j").get<std::size_t>();
    } else if (kind == "psi") {
        st.kind = model::StatSpec::Kind::PsiExpectation;
        st.psi_id = j.at("psi").get<std::string>();
        st.psi_index = j.value("index", std::size_t{0});
        st.psi_order = j.at("order").get<double>();
    } else {
        throw Error("ParseError", "unknown statistic kind '" + kind + "'");
    }
    return st;
}

model::CoefficientSpec parse_coefficient(const json& j, model::CoefficientSpec::Kind kind) {
    model::CoefficientSpec spec;
    spec.kind = kind;
    spec.form = j.at("form").get<std::string>();
    if (j.contains("stats"))
        for (const auto& s : j.at("stats")) spec.stats.push_back(parse_stat(s));
    if (j.contains("regime_params"))
        for (const auto& row : j.at("regime_params"))
            spec.regime_params.push_back(to_vec(row, "regime_params row"));
    if (j.contains("scalar"))
        for (const auto& [k, v] : j.at("scalar").items()) spec.scalar[k] = v.get<double>();
    if (j.contains("vectors"))
        for (const auto& [k, v] : j.at("vectors").items()) spec.vectors[k] = to_vec(v, k);
    if (j.contains("matrix")) spec.matrix = to_mat(j.at("matrix"), "sigma matrix");
    if (j.contains("bound")) spec.bound = j.at("bound").get<double>();
    return spec;
}

} // namespace

LoadedConfig parse_config(const nlohmann::json& j) {
    LoadedConfig out;
    out.resolved = j;

    const auto& regime_j = j.at("regime");
    model::RegimeModel regime;
    regime.rate_matrix = to_mat(regime_j.at("rate_matrix"), "rate_matrix");
    regime.n_states = regime_j.value("n_states", regime.rate_matrix.rows);
    regime.initial_dist = to_vec(regime_j.at("initial_dist"), "initial_dist");

    const auto& sc = j.at("scenario");
    const std::string kind = sc.value("kind", std::string("custom"));

    if (kind == "liquidation") {
        const auto& lq = sc.at("liquidation");
        model::LiquidationParams params;
        params.eps = lq.at("eps").get<double>();
        params.gamma_vol = lq.at("gamma_vol").get<double>();
        params.nu = lq.value("nu", 0.0);
        params.eta_cost = lq.value("eta_cost", 0.0);
        params.theta_pen = lq.value("theta_pen", 0.0);
        params.regime_drifts = to_vec(lq.at("regime_drifts"), "regime_drifts");
        params.I0 = lq.at("I0").get<double>();
        params.P0_init = lq.value("P0_init", 0.0);
        params.alpha_max = lq.at("alpha_max").get<double>();
        out.model = model::build_liquidation(params, regime);
        out.liquidation = params;
    } else if (kind == "custom") {
        model::ModelSpec spec;
        spec.regime = regime;
        const auto& controls_j = j.at("controls");
        spec.controls.dim = controls_j.value("dim", std::size_t{0});
        spec.controls.lower = to_vec(controls_j.at("lower"), "controls.lower");
        spec.controls.upper = to_vec(controls_j.at("upper"), "controls.upper");
        spec.controls.reference = to_vec(controls_j.at("reference"), "controls.reference");
        if (spec.controls.dim == 0) spec.controls.dim = spec.controls.lower.size();

        const auto& coeff = j.at("coefficients");
        spec.h_spec = parse_coefficient(coeff.at("h"), model::CoefficientSpec::Kind::H);
        spec.f_spec = parse_coefficient(coeff.at("f"), model::CoefficientSpec::Kind::F);
        spec.g_spec = parse_coefficient(coeff.at("g"), model::CoefficientSpec::Kind::G);
        spec.sigma_spec = parse_coefficient(coeff.at("sigma"), model::CoefficientSpec::Kind::Sigma);

        const auto& growth = j.at("growth");
        spec.growth.p = growth.at("p").get<double>();
        spec.growth.r = growth.at("r").get<double>();
        spec.growth.q = growth.at("q").get<double>();
        spec.growth.ell = growth.value("ell", 0.0);
        spec.growth.chi_exponent = growth.value("chi_exponent", 1.0);

        spec.y0 = to_vec(sc.at("y0"), "scenario.y0");
        spec.dim_d = spec.y0.size();
        spec.finalize();
        model::validate_growth(spec);
        out.model = std::move(spec);
    } else {
        throw Error("ParseError", "unknown scenario kind '" + kind + "'");
    }

    out.sim.t0 = sc.value("t0", 0.0);
    out.sim.T = sc.at("T").get<double>();
    out.sim.dt = sc.at("dt").get<double>();
    out.sim.n_particles = sc.at("n_particles").get<std::size_t>();
    out.sim.seed = sc.value("seed", std::uint64_t{0});
    out.sim.record_every = sc.value("record_every", std::size_t{1});
    out.sim.threads = sc.value("threads", 1u);
    out.sim.init_y_sd = sc.value("init_y_sd", 0.0);
    out.sim.init_mass_jitter = sc.value("init_mass_jitter", 0.0);
    out.sim.validate();

    const auto& pol = sc.at("policy");
    out.policy = opt::parse_policy_form(
        pol.at("form").get<std::string>(), to_vec(pol.at("theta"), "policy.theta"),
        out.model.controls, out.model.regime.n_states, out.model.dim_d, out.sim.t0, out.sim.T,
        pol.value("n_buckets", std::size_t{1}));

    if (sc.contains("tolerances")) {
        const auto& tol = sc.at("tolerances");
        Tolerances& t = out.tolerances;
        t.z_threshold = tol.value("z_threshold", t.z_threshold);
        t.mass_sigma = tol.value("mass_sigma", t.mass_sigma);
        t.c_dt_bias = tol.value("c_dt_bias", t.c_dt_bias);
        if (tol.contains("dt_ladder")) t.dt_ladder = to_vec(tol.at("dt_ladder"), "dt_ladder");
        if (tol.contains("ito_dts")) t.ito_dts = to_vec(tol.at("ito_dts"), "ito_dts");
        t.ito_seeds = tol.value("ito_seeds", t.ito_seeds);
        t.ito_particles = tol.value("ito_particles", t.ito_particles);
        t.picard_iters = tol.value("picard_iters", t.picard_iters);
        t.picard_tol = tol.value("picard_tol", t.picard_tol);
        t.picard_particles = tol.value("picard_particles", t.picard_particles);
        t.terminal_tol = tol.value("terminal_tol", t.terminal_tol);
        t.mass_generator_tol = tol.value("mass_generator_tol", t.mass_generator_tol);
    }

    if (sc.contains("optimize")) {
        const auto& op = sc.at("optimize");
        OptimizeSettings& o = out.optimize;
        o.method = op.value("method", o.method);
        o.nelder_mead.max_evals = op.value("max_evals", o.nelder_mead.max_evals);
        o.nelder_mead.init_step = op.value("init_step", o.nelder_mead.init_step);
        o.nelder_mead.shrink_tol = op.value("shrink_tol", o.nelder_mead.shrink_tol);
        o.cross_entropy.population = op.value("population", o.cross_entropy.population);
        o.cross_entropy.elite_frac = op.value("elite_frac", o.cross_entropy.elite_frac);
        o.cross_entropy.iterations = op.value("iterations", o.cross_entropy.iterations);
        o.cross_entropy.seed = out.sim.seed + 1;
    }
    return out;
}

LoadedConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("IoError", "cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw Error("ParseError", std::string(e.what()));
    }
    if (j.contains("config") && j.contains("config_hash")) j = j.at("config");  // manifest replay
    try {
        return parse_config(j);
    } catch (const json::exception& e) {
        throw Error("ParseError", std::string(e.what()));
    }
}

void apply_overrides(nlohmann::json& j, std::optional<std::uint64_t> seed,
                     std::optional<std::uint32_t> particles, std::optional<double> dt,
                     std::optional<std::uint32_t> threads) {
    if (j.contains("config") && j.contains("config_hash")) {
        nlohmann::json inner = j.at("config");
        apply_overrides(inner, seed, particles, dt, threads);
        j = inner;
        return;
    }
    auto& sc = j["scenario"];
    if (seed) sc["seed"] = *seed;
    if (particles) sc["n_particles"] = *particles;
    if (dt) sc["dt"] = *dt;
    if (threads) sc["threads"] = *threads;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (const char c : data) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::string canonical_dump(const nlohmann::json& j) { return j.dump(); }

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_echo;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash));
    j["config_hash"] = hex;
    j["seed"] = seed;
    j["tool_version"] = tool_version;
    j["wall_time_s"] = wall_time_s;
    return j;
}

void RunManifest::write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("IoError", "cannot write manifest '" + path + "'");
    os << to_json().dump(2) << "\n";
}

RunManifest make_manifest(const std::string& command, const nlohmann::json& resolved,
                          std::uint64_t seed) {
    RunManifest m;
    m.command = command;
    m.config_echo = resolved;
    m.config_hash = fnv1a64(canonical_dump(resolved));
    m.seed = seed;
    return m;
}

} // namespace zmfc::config
