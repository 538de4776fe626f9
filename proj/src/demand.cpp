#include "evplan/demand.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "evplan/errors.hpp"
#include "json.hpp"

namespace evplan {

namespace {

/// log(sum(exp(x))) without overflow; -inf for an empty range.
double log_sum_exp(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

} // namespace

void ChoiceCoefficients::validate() const {
    for (const auto& n : nests) {
        if (!(n.sigma > 0.0) || n.sigma > 1.0)
            throw DomainError("sigma must lie in (0, 1]");
    }
    if (d_th_km < 0.0) throw DomainError("d_th must be nonnegative");
    if (q_min_kwh > q_max_kwh) throw DomainError("charging demand range is empty");
    for (const auto& lv : levels) {
        if (!(lv.charge_time_h > 0.0)) throw DomainError("charging time must be positive");
    }
}

double provider_utility(const LevelAttributes& level, double price, const EvAgent& agent,
                        const ChoiceCoefficients& coeffs) {
    if (!(level.charge_time_h > 0.0)) throw DomainError("charging time must be positive");
    if (!(agent.income > 0.0)) throw DomainError("agent income must be positive");
    return coeffs.alpha / level.charge_time_h + coeffs.beta * price / agent.income;
}

double station_utility(const StationObservables& obs, const NestCoefficients& c) {
    return c.mu * obs.deviating_km + c.eta * (obs.near_destination ? 1.0 : 0.0) +
           c.gamma * (obs.restaurant ? 1.0 : 0.0) + c.lambda * (obs.shopping ? 1.0 : 0.0) +
           c.delta * (obs.supermarket ? 1.0 : 0.0);
}

ChoiceProbabilities choice_probabilities(std::span<const NestUtilities> nests,
                                         bool include_outside) {
    const std::size_t K = nests.size();
    if (K == 0 && !include_outside) throw EmptyNestError("no alternatives at all");

    // Per nest: lse_k = log sum_j exp(U_jk / sigma_k); the nest contributes
    // exp(sigma_k * lse_k) to the denominator. The outside good contributes 1.
    std::vector<double> lse(K);
    std::vector<double> nest_log_term(K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& nest = nests[k];
        if (nest.alt_utilities.empty())
            throw EmptyNestError("nest " + std::to_string(k) + " has no alternatives");
        if (!(nest.sigma > 0.0) || nest.sigma > 1.0)
            throw DomainError("sigma must lie in (0, 1]");
        std::vector<double> scaled(nest.alt_utilities.size());
        for (std::size_t j = 0; j < scaled.size(); ++j)
            scaled[j] = (nest.nest_utility + nest.alt_utilities[j]) / nest.sigma;
        lse[k] = log_sum_exp(scaled);
        nest_log_term[k] = nest.sigma * lse[k];
    }
    std::vector<double> denom_terms = nest_log_term;
    if (include_outside) denom_terms.push_back(0.0);
    const double log_denom = log_sum_exp(denom_terms);

    ChoiceProbabilities out;
    out.nest_alt.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& nest = nests[k];
        out.nest_alt[k].resize(nest.alt_utilities.size());
        for (std::size_t j = 0; j < nest.alt_utilities.size(); ++j) {
            double u = (nest.nest_utility + nest.alt_utilities[j]) / nest.sigma;
            out.nest_alt[k][j] = std::exp(u + (nest.sigma - 1.0) * lse[k] - log_denom);
        }
    }
    out.outside = include_outside ? std::exp(-log_denom) : 0.0;
    return out;
}

DecomposedChoice choice_probabilities_decomposed(std::span<const NestUtilities> nests,
                                                 bool include_outside) {
    const std::size_t K = nests.size();
    DecomposedChoice out;
    out.nest_prob.resize(K);
    out.within_nest.resize(K);
    out.inclusive_value.resize(K);

    std::vector<double> upper(K); // W_k + sigma_k * I_k
    for (std::size_t k = 0; k < K; ++k) {
        const auto& nest = nests[k];
        if (nest.alt_utilities.empty())
            throw EmptyNestError("nest " + std::to_string(k) + " has no alternatives");
        if (!(nest.sigma > 0.0) || nest.sigma > 1.0)
            throw DomainError("sigma must lie in (0, 1]");
        std::vector<double> scaled(nest.alt_utilities.size());
        for (std::size_t j = 0; j < scaled.size(); ++j)
            scaled[j] = nest.alt_utilities[j] / nest.sigma;
        const double iv = log_sum_exp(scaled);
        out.inclusive_value[k] = iv;
        upper[k] = nest.nest_utility + nest.sigma * iv;
        out.within_nest[k].resize(scaled.size());
        for (std::size_t j = 0; j < scaled.size(); ++j)
            out.within_nest[k][j] = std::exp(scaled[j] - iv);
    }
    std::vector<double> denom_terms = upper;
    if (include_outside) denom_terms.push_back(0.0);
    const double log_denom = log_sum_exp(denom_terms);
    for (std::size_t k = 0; k < K; ++k) out.nest_prob[k] = std::exp(upper[k] - log_denom);
    out.outside = include_outside ? std::exp(-log_denom) : 0.0;
    return out;
}

ChoiceMatrix evaluate_choices(const ChoiceContext& ctx, const Prices& prices) {
    const std::size_t N = ctx.population.size();
    if (ctx.station_util.size() != N)
        throw DimensionMismatchError("station utilities do not align with the population");

    ChoiceMatrix m;
    m.prob.resize(N);
    m.outside.assign(N, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        const EvAgent& agent = ctx.population[n];
        std::vector<NestUtilities> nests;
        std::vector<int> nest_provider;
        nests.reserve(kProviders);
        for (int k = 0; k < kProviders; ++k) {
            const auto& util = ctx.station_util[n][k];
            if (util.empty()) continue;
            if (!prices[k].has_value())
                throw DomainError("active provider " + std::to_string(k + 1) + " has no price");
            NestUtilities nest;
            nest.sigma = ctx.coeffs.nests[k].sigma;
            nest.nest_utility =
                provider_utility(ctx.coeffs.levels[k], *prices[k], agent, ctx.coeffs);
            nest.alt_utilities = util;
            nest_provider.push_back(k);
            nests.push_back(std::move(nest));
        }
        ChoiceProbabilities probs = choice_probabilities(nests, ctx.include_outside);
        for (std::size_t i = 0; i < nest_provider.size(); ++i)
            m.prob[n][nest_provider[i]] = std::move(probs.nest_alt[i]);
        m.outside[n] = probs.outside;
    }
    return m;
}

ChoiceGradient demand_price_gradient(const ChoiceContext& ctx, const ChoiceMatrix& at,
                                     int provider) {
    const std::size_t N = ctx.population.size();
    ChoiceGradient g;
    g.dprob.resize(N);
    g.doutside.assign(N, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        const double slope = ctx.coeffs.beta / ctx.population[n].income;
        double own_share = 0.0;
        for (double p : at.prob[n][provider]) own_share += p;
        for (int t = 0; t < kProviders; ++t) {
            const auto& row = at.prob[n][t];
            auto& out = g.dprob[n][t];
            out.resize(row.size());
            const double factor = slope * ((t == provider ? 1.0 : 0.0) - own_share);
            for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] * factor;
        }
        g.doutside[n] = -slope * own_share * at.outside[n];
    }
    return g;
}

ChoiceGradient demand_price_gradient(const ChoiceContext& ctx, const Prices& prices,
                                     int provider) {
    return demand_price_gradient(ctx, evaluate_choices(ctx, prices), provider);
}

DemandForecast aggregate_demand(std::span<const EvAgent> population, const ChoiceMatrix& choices) {
    if (choices.prob.size() != population.size())
        throw DimensionMismatchError("choice matrix rows do not match the population");
    DemandForecast f;
    for (int k = 0; k < kProviders; ++k) {
        std::size_t cols = choices.prob.empty() ? 0 : choices.prob.front()[k].size();
        f.psi_kwh[k].assign(cols, 0.0);
    }
    for (std::size_t n = 0; n < population.size(); ++n) {
        const double q = population[n].demand_kwh;
        for (int k = 0; k < kProviders; ++k) {
            const auto& row = choices.prob[n][k];
            if (row.size() != f.psi_kwh[k].size())
                throw DimensionMismatchError("ragged choice matrix");
            for (std::size_t j = 0; j < row.size(); ++j) f.psi_kwh[k][j] += q * row[j];
        }
    }
    return f;
}

ChoiceCoefficients load_choice_coefficients(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open coefficients file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }
    ChoiceCoefficients c;
    try {
        c.alpha = j.at("alpha").get<double>();
        c.beta = j.at("beta").get<double>();
        const auto& nests = j.at("nests");
        if (nests.size() != kProviders)
            throw ConfigError("expected exactly 3 nest blocks in " + file.string());
        for (int k = 0; k < kProviders; ++k) {
            const auto& nj = nests[k];
            auto& n = c.nests[k];
            n.sigma = nj.at("sigma").get<double>();
            n.mu = nj.at("mu").get<double>();
            n.eta = nj.at("eta").get<double>();
            n.gamma = nj.at("gamma").get<double>();
            n.lambda = nj.at("lambda").get<double>();
            n.delta = nj.at("delta").get<double>();
        }
        c.d_th_km = j.at("d_th").get<double>();
        c.q_min_kwh = j.value("q_min", c.q_min_kwh);
        c.q_max_kwh = j.value("q_max", c.q_max_kwh);
        if (j.contains("levels")) {
            const auto& levels = j.at("levels");
            if (levels.size() != kProviders)
                throw ConfigError("expected exactly 3 level blocks in " + file.string());
            for (int k = 0; k < kProviders; ++k) {
                const auto& lj = levels[k];
                auto& lv = c.levels[k];
                lv.level = k + 1;
                lv.charge_time_h = lj.value("charge_time_h", lv.charge_time_h);
                lv.voltage_v = lj.value("voltage_v", lv.voltage_v);
                lv.current_a = lj.value("current_a", lv.current_a);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad coefficients schema in " + file.string() + ": " + e.what());
    }
    try {
        c.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("invalid coefficients: ") + e.what());
    }
    return c;
}

} // namespace evplan
