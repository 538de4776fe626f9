#include "evplan/game.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "evplan/errors.hpp"
#include "evplan/rng.hpp"

namespace evplan {

void GameConfig::validate(std::size_t candidate_count) const {
    if (!(opponent_prior > 0.0) || !(opponent_prior < 1.0))
        throw ConfigError("opponent prior must lie in (0, 1)");
    if (opponent_samples < 1) throw ConfigError("opponent sample count must be >= 1");
    if (impact_weight < 0.0) throw ConfigError("impact weight must be >= 0");
    for (int k = 0; k < kProviders; ++k) {
        if (placement_cost[k].size() != candidate_count)
            throw ConfigError("placement cost row " + std::to_string(k + 1) +
                              " does not match the candidate count");
        for (double c : placement_cost[k])
            if (!(c > 0.0)) throw ConfigError("placement costs must be positive");
    }
}

PlacementGame::PlacementGame(const PlanningContext& ctx, GameConfig cfg)
    : ctx_(ctx), cfg_(std::move(cfg)) {
    cfg_.validate(ctx_.candidate_count());
    base_flow_ = solve_power_flow(ctx_.grid());
}

namespace {

double dot_cost(const std::vector<double>& theta, const PlacementPolicy& policy) {
    double c = 0.0;
    for (std::size_t j = 0; j < policy.size(); ++j)
        if (policy.bits[j]) c += theta[j];
    return c;
}

bool any_active(const PlanningContext::Market& market) {
    for (int k = 0; k < kProviders; ++k)
        if (!market.active_index[k].empty()) return true;
    return false;
}

} // namespace

QosEstimate PlacementGame::qos_of(int provider, const PlacementPolicy& policy,
                                  const PolicyTriple& committed, std::uint64_t seed) const {
    PolicyTriple triple = committed;
    triple[provider] = ctx_.clamp_policy(provider + 1, policy);
    const auto market = ctx_.make_market(triple);
    Prices prices{};
    if (any_active(market) && market.choice.coeffs.beta < 0.0)
        prices = solve_bertrand(market, cfg_.pricing).prices;
    const ChoiceMatrix choices = evaluate_choices(market.choice, prices);
    QosConfig qc = cfg_.qos;
    qc.seed = rng::derive(seed, "qos");
    return simulate_qos(ctx_, market, choices, qc)[provider];
}

StrategyEvaluation PlacementGame::evaluate(int provider, const PlacementPolicy& policy,
                                           const PolicyTriple& committed,
                                           std::uint64_t seed) const {
    StrategyEvaluation ev;
    ev.policy = ctx_.clamp_policy(provider + 1, policy);
    ev.placement_cost = dot_cost(cfg_.placement_cost[provider], ev.policy);
    ev.samples = cfg_.opponent_samples;

    const std::size_t L = ctx_.candidate_count();
    double sum_r = 0.0, sum_b = 0.0, sum_u = 0.0, sum_u2 = 0.0;
    int ok = 0;
    Prices warm{}; // previous sample's equilibrium seeds the next solve

    for (int s = 0; s < cfg_.opponent_samples; ++s) {
        rng::Engine eng(rng::derive(rng::derive(seed, "opponents"), static_cast<std::uint64_t>(s)));
        PolicyTriple triple;
        triple[provider] = ev.policy;
        for (int o = 0; o < kProviders; ++o) {
            if (o == provider) continue;
            PlacementPolicy draw = committed[o];
            for (std::size_t j = 0; j < L; ++j) {
                // committed stations stay; free, allowed sites flip a coin
                const bool sampled = eng.bernoulli(cfg_.opponent_prior);
                if (!draw.bits[j] && ctx_.allowed(o + 1, j) && sampled) draw.bits[j] = 1;
            }
            triple[o] = draw;
        }

        try {
            const auto market = ctx_.make_market(triple);
            double revenue = 0.0;
            double impact = 0.0;
            if (any_active(market)) {
                BertrandOptions popts = cfg_.pricing;
                popts.initial = warm;
                const PriceSolution prices = solve_bertrand(market, popts);
                warm = prices.prices;
                const ChoiceMatrix choices = evaluate_choices(market.choice, prices.prices);
                const DemandForecast psi = aggregate_demand(market.choice.population, choices);
                if (prices.prices[provider].has_value()) {
                    for (std::size_t col = 0; col < market.active_index[provider].size(); ++col)
                        revenue += (*prices.prices[provider] - market.lmp[provider][col]) *
                                   psi.psi_kwh[provider][col];
                }
                const auto load_all = ctx_.demand_as_bus_load(market, psi);
                const auto load_others = ctx_.demand_as_bus_load(market, psi, provider);
                PowerFlowSolution with_own =
                    dispatch_with_ev(ctx_.grid(), load_all, ctx_.ev_power_factor, {}, &base_flow_)
                        .ev;
                PowerFlowSolution without_own =
                    load_others.empty()
                        ? base_flow_
                        : dispatch_with_ev(ctx_.grid(), load_others, ctx_.ev_power_factor, {},
                                           &base_flow_)
                              .ev;
                impact = impact_metric(without_own, with_own, ctx_.impact_per_unit,
                                       ctx_.grid().base_mva)
                             .metric;
            }
            const double u = revenue - ev.placement_cost - cfg_.impact_weight * impact;
            sum_r += revenue;
            sum_b += impact;
            sum_u += u;
            sum_u2 += u * u;
            ++ok;
        } catch (const Error&) {
            ++ev.failed_samples;
        }
    }

    if (ev.failed_samples > cfg_.opponent_samples / 10)
        throw SampleFailureError("more than 10% of opponent samples failed (" +
                                 std::to_string(ev.failed_samples) + "/" +
                                 std::to_string(cfg_.opponent_samples) + ")");
    if (ok > 0) {
        ev.expected_revenue = sum_r / ok;
        ev.expected_impact = sum_b / ok;
        ev.expected_utility = sum_u / ok;
        if (ok > 1) {
            const double var = (sum_u2 - sum_u * sum_u / ok) / (ok - 1);
            ev.utility_se = std::sqrt(std::max(0.0, var) / ok);
        }
    }
    return ev;
}

PlacementPolicy PlacementGame::best_response(int provider, const PolicyTriple& committed,
                                             const PlacementPolicy& locked, std::uint64_t seed,
                                             std::vector<StrategyEvaluation>* evaluations) const {
    const std::size_t L = ctx_.candidate_count();
    const PlacementPolicy base = ctx_.clamp_policy(provider + 1, locked);
    std::vector<std::size_t> free_bits;
    for (std::size_t j = 0; j < L; ++j)
        if (!base.bits[j] && ctx_.allowed(provider + 1, j)) free_bits.push_back(j);

    const std::uint64_t eval_seed = rng::derive(seed, "eval");
    const std::uint64_t qos_seed = rng::derive(seed, "qos");

    std::vector<StrategyEvaluation> evals;
    evals.reserve(std::size_t{1} << free_bits.size());

    double nearest_violation = std::numeric_limits<double>::infinity();
    std::uint64_t nearest_mask = 0;

    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << free_bits.size()); ++mask) {
        PlacementPolicy policy = base;
        for (std::size_t i = 0; i < free_bits.size(); ++i)
            if ((mask >> i) & 1u) policy.bits[free_bits[i]] = 1;

        const QosEstimate qos = qos_of(provider, policy, committed, qos_seed);
        const double delay_excess = qos.delay_probability - cfg_.max_delay_probability;
        const double coverage_gap = cfg_.coverage_at_most ? qos.coverage - cfg_.min_coverage
                                                          : cfg_.min_coverage - qos.coverage;
        if (delay_excess <= 0.0 && coverage_gap <= 0.0) {
            StrategyEvaluation ev = evaluate(provider, policy, committed, eval_seed);
            ev.qos = qos;
            ev.feasible = true;
            evals.push_back(std::move(ev));
        } else {
            StrategyEvaluation ev;
            ev.policy = policy;
            ev.qos = qos;
            ev.feasible = false;
            evals.push_back(std::move(ev));
            const double violation = std::max(0.0, delay_excess) + std::max(0.0, coverage_gap);
            if (violation < nearest_violation) {
                nearest_violation = violation;
                nearest_mask = policy.to_mask();
            }
        }
    }

    // feasible argmax; ties prefer fewer stations, then the smaller vector
    const StrategyEvaluation* winner = nullptr;
    for (const auto& ev : evals) {
        if (!ev.feasible) continue;
        if (winner == nullptr) {
            winner = &ev;
            continue;
        }
        if (ev.expected_utility > winner->expected_utility) {
            winner = &ev;
        } else if (ev.expected_utility == winner->expected_utility) {
            if (ev.policy.count() < winner->policy.count() ||
                (ev.policy.count() == winner->policy.count() &&
                 std::lexicographical_compare(ev.policy.bits.begin(), ev.policy.bits.end(),
                                              winner->policy.bits.begin(),
                                              winner->policy.bits.end()))) {
                winner = &ev;
            }
        }
    }
    if (evaluations != nullptr) *evaluations = evals;
    if (winner == nullptr) {
        std::ostringstream msg;
        msg << "no policy for provider " << (provider + 1)
            << " satisfies the QoS constraints; nearest mask 0x" << std::hex << nearest_mask
            << std::dec << " violates them by " << nearest_violation;
        throw InfeasibleError(msg.str());
    }
    return winner->policy;
}

bool hypervolume_contains(std::span<const double> theta, std::size_t l,
                          std::span<const StrategyEvaluation> evaluations, double w) {
    if (l >= evaluations.size()) throw DimensionMismatchError("strategy index out of range");
    const StrategyEvaluation& ref = evaluations[l];
    for (std::size_t j = 0; j < evaluations.size(); ++j) {
        if (j == l) continue;
        const StrategyEvaluation& other = evaluations[j];
        double lhs = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i)
            lhs += theta[i] *
                   (static_cast<double>(other.policy.bits[i]) - static_cast<double>(ref.policy.bits[i]));
        lhs -= other.expected_revenue - ref.expected_revenue;
        lhs += w * (other.expected_impact - ref.expected_impact);
        if (!(lhs > 0.0)) return false;
    }
    return true;
}

} // namespace evplan
