#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evplan/context.hpp"
#include "evplan/pricing.hpp"
#include "evplan/qos.hpp"

namespace evplan {

struct GameConfig {
    double impact_weight = 0.0; ///< w in U = Pi - w * B
    std::array<std::vector<double>, kProviders> placement_cost; ///< Theta, per candidate
    double opponent_prior = 0.5; ///< Bernoulli parameter of each opponent bit
    int opponent_samples = 64;
    double max_delay_probability = 1.0; ///< QoS bound on the delay probability
    double min_coverage = 0.0;          ///< QoS bound on the route coverage
    bool coverage_at_most = false;      ///< flip the coverage comparison direction
    bool iterate_to_fixed_point = false;
    int max_rounds = 10;
    BertrandOptions pricing;
    QosConfig qos;

    void validate(std::size_t candidate_count) const;
};

/// One strategy's Monte-Carlo evaluation against the opponent prior.
struct StrategyEvaluation {
    PlacementPolicy policy;
    double expected_revenue = 0.0; ///< E[R_k]
    double expected_impact = 0.0;  ///< E[B_k], the policy's marginal grid impact
    double expected_utility = 0.0; ///< E[R] - Theta'S - w E[B]
    double utility_se = 0.0;
    double placement_cost = 0.0;   ///< Theta'S
    QosEstimate qos;
    bool feasible = true;
    int samples = 0;
    int failed_samples = 0;
};

/// Placement competition for one planning stage. Opponent policies are
/// drawn from the prior (committed bits stay fixed at 1), retail prices are
/// re-solved per sample, and the grid impact of a policy is the deviation
/// between the dispatch with and without the provider's own stations.
class PlacementGame {
public:
    PlacementGame(const PlanningContext& ctx, GameConfig cfg);

    const GameConfig& config() const { return cfg_; }

    /// E[U_k] of one policy by opponent sampling. `committed` holds the
    /// currently known policies of all providers (bits already built).
    StrategyEvaluation evaluate(int provider, const PlacementPolicy& policy,
                                const PolicyTriple& committed, std::uint64_t seed) const;

    /// QoS of a policy at the committed opponents' stations.
    QosEstimate qos_of(int provider, const PlacementPolicy& policy,
                       const PolicyTriple& committed, std::uint64_t seed) const;

    /// Feasible utility argmax over every policy that keeps `locked` bits.
    /// Ties prefer fewer stations, then the lexicographically smaller vector.
    PlacementPolicy best_response(int provider, const PolicyTriple& committed,
                                  const PlacementPolicy& locked, std::uint64_t seed,
                                  std::vector<StrategyEvaluation>* evaluations = nullptr) const;

private:
    const PlanningContext& ctx_;
    GameConfig cfg_;
    PowerFlowSolution base_flow_;

    double impact_of(const PlanningContext::Market& with_own,
                     const PlanningContext::Market& without_own, const Prices& prices_with,
                     const Prices& prices_without) const;
};

/// Theorem-style membership test: strategy `l` is optimal for cost vector
/// `theta` iff every rival strategy j satisfies
///   theta'(S_j - S_l) - (ER_j - ER_l) + w (B_j - B_l) > 0.
bool hypervolume_contains(std::span<const double> theta, std::size_t l,
                          std::span<const StrategyEvaluation> evaluations, double w);

} // namespace evplan
