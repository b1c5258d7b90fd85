#include "zmfc/measures.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "zmfc/parallel.hpp"

namespace zmfc::measures {

ParticleCloud ParticleCloud::uniform(std::size_t count, std::span<const double> x0,
                                     std::span<const double> y0, std::size_t dim_a, double t) {
    ParticleCloud cloud;
    cloud.count = count;
    cloud.dim_x = x0.size();
    cloud.dim_y = y0.size();
    cloud.dim_a = dim_a;
    cloud.t = t;
    cloud.x.resize(count * cloud.dim_x);
    cloud.y.resize(count * cloud.dim_y);
    cloud.a.assign(count * dim_a, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < cloud.dim_x; ++j) cloud.x[i * cloud.dim_x + j] = x0[j];
        for (std::size_t j = 0; j < cloud.dim_y; ++j) cloud.y[i * cloud.dim_y + j] = y0[j];
    }
    return cloud;
}

double ParticleCloud::min_x_component() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : x) m = std::min(m, v);
    return m;
}

ParticleCloud::MassStats ParticleCloud::mass_stats() const {
    Vec masses(count);
    for (std::size_t i = 0; i < count; ++i) masses[i] = mass(i);
    const double mean = pairwise_sum(masses) / static_cast<double>(count);
    Vec dev(count);
    for (std::size_t i = 0; i < count; ++i) dev[i] = (masses[i] - mean) * (masses[i] - mean);
    const double var = count > 1 ? pairwise_sum(dev) / static_cast<double>(count - 1) : 0.0;
    return {mean, std::sqrt(var / static_cast<double>(count))};
}

namespace {

WeightedPointMeasure reweight(const ParticleCloud& cloud, bool keep_controls) {
    Vec masses(cloud.count);
    for (std::size_t i = 0; i < cloud.count; ++i) masses[i] = cloud.mass(i);
    const double total = pairwise_sum(masses);
    if (total <= 0.0) throw Error("ZeroTotalMass", "total filter mass is zero");

    WeightedPointMeasure m;
    m.count = cloud.count;
    m.dim_y = cloud.dim_y;
    m.dim_a = keep_controls ? cloud.dim_a : 0;
    m.y = cloud.y;
    if (keep_controls) m.a = cloud.a;
    m.weights.resize(cloud.count);
    for (std::size_t i = 0; i < cloud.count; ++i) m.weights[i] = masses[i] / total;
    return m;
}

} // namespace

WeightedPointMeasure gamma_measure(const ParticleCloud& cloud) { return reweight(cloud, true); }

WeightedPointMeasure gamma1_measure(const ParticleCloud& cloud) { return reweight(cloud, false); }

double eval_stat(const WeightedPointMeasure& measure, const model::StatSpec& stat,
                 std::span<const double> a0) {
    using Kind = model::StatSpec::Kind;
    const std::size_t n = measure.count;
    Vec contrib(n);

    auto weighted_sum = [&](auto&& psi) {
        for (std::size_t i = 0; i < n; ++i) contrib[i] = measure.weights[i] * psi(i);
        return pairwise_sum(contrib);
    };

    switch (stat.kind) {
        case Kind::MeanComponent: {
            if (stat.index_i < measure.dim_y) {
                const std::size_t j = stat.index_i;
                return weighted_sum([&](std::size_t i) { return measure.y_at(i)[j]; });
            }
            const std::size_t j = stat.index_i - measure.dim_y;
            if (!measure.has_controls() || j >= measure.dim_a)
                throw Error("DimensionMismatch", "mean-component index out of range for measure");
            return weighted_sum([&](std::size_t i) { return measure.a_at(i)[j]; });
        }
        case Kind::Moment: {
            if (measure.has_controls() && a0.size() != measure.dim_a)
                throw Error("DimensionMismatch", "moment statistic needs the reference control");
            return weighted_sum([&](std::size_t i) {
                double base = norm2(measure.y_at(i));
                if (measure.has_controls()) {
                    double s = 0.0;
                    const auto ai = measure.a_at(i);
                    for (std::size_t k = 0; k < measure.dim_a; ++k)
                        s += (ai[k] - a0[k]) * (ai[k] - a0[k]);
                    base += std::sqrt(s);
                }
                return std::pow(base, stat.gamma);
            });
        }
        case Kind::Covariance: {
            if (stat.index_i >= measure.dim_y || stat.index_j >= measure.dim_y)
                throw Error("DimensionMismatch", "covariance index out of range for measure");
            const std::size_t ii = stat.index_i, jj = stat.index_j;
            const double mi = weighted_sum([&](std::size_t i) { return measure.y_at(i)[ii]; });
            const double mj = weighted_sum([&](std::size_t i) { return measure.y_at(i)[jj]; });
            const double mij =
                weighted_sum([&](std::size_t i) { return measure.y_at(i)[ii] * measure.y_at(i)[jj]; });
            return mij - mi * mj;
        }
        case Kind::PsiExpectation: {
            if (stat.psi_id == "y_power") {
                if (stat.psi_index >= measure.dim_y)
                    throw Error("DimensionMismatch", "y_power index out of range");
                return weighted_sum([&](std::size_t i) {
                    return std::pow(measure.y_at(i)[stat.psi_index], stat.psi_order);
                });
            }
            if (stat.psi_id == "a_power") {
                if (!measure.has_controls() || stat.psi_index >= measure.dim_a)
                    throw Error("DimensionMismatch", "a_power needs control atoms");
                return weighted_sum([&](std::size_t i) {
                    return std::pow(measure.a_at(i)[stat.psi_index], stat.psi_order);
                });
            }
            if (stat.psi_id == "norm_y_power") {
                return weighted_sum(
                    [&](std::size_t i) { return std::pow(norm2(measure.y_at(i)), stat.psi_order); });
            }
            throw Error("UnknownForm", "unknown psi '" + stat.psi_id + "'");
        }
    }
    throw Error("UnknownForm", "unhandled statistic kind");
}

Vec eval_stats(const WeightedPointMeasure& measure, const std::vector<model::StatSpec>& stats,
               std::span<const double> a0) {
    Vec z(stats.size());
    for (std::size_t j = 0; j < stats.size(); ++j) z[j] = eval_stat(measure, stats[j], a0);
    return z;
}

double empirical_norm(const ParticleCloud& cloud, double order, NormOn on) {
    if (order < 1.0) throw Error("BadSpec", "empirical_norm needs order >= 1");
    Vec contrib(cloud.count);
    for (std::size_t i = 0; i < cloud.count; ++i) {
        const double v = on == NormOn::X ? norm2(cloud.x_at(i)) : norm2(cloud.y_at(i));
        contrib[i] = std::pow(v, order);
    }
    const double mean = pairwise_sum(contrib) / static_cast<double>(cloud.count);
    return std::pow(mean, 1.0 / order);
}

void write_csv_header(std::ostream& os, const ParticleCloud& cloud) {
    os << "t,particle_id";
    for (std::size_t j = 1; j <= cloud.dim_x; ++j) os << ",x_" << j;
    for (std::size_t j = 1; j <= cloud.dim_y; ++j) os << ",y_" << j;
    for (std::size_t j = 1; j <= cloud.dim_a; ++j) os << ",a_" << j;
    os << "\n";
}

void write_csv_rows(std::ostream& os, const ParticleCloud& cloud) {
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (std::size_t i = 0; i < cloud.count; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", cloud.t);
        os << buf << ',' << i;
        for (double v : cloud.x_at(i)) put(v);
        for (double v : cloud.y_at(i)) put(v);
        for (double v : cloud.a_at(i)) put(v);
        os << "\n";
    }
}

} // namespace zmfc::measures
