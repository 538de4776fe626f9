#pragma once

#include <array>
#include <optional>

#include "evplan/context.hpp"
#include "evplan/demand.hpp"

namespace evplan {

/// Retail prices and margins for a fixed market (placements already chosen).
struct ProviderOutcome {
    double revenue = 0.0; ///< R_k = sum_j s_jk (p_k - c_jk) psi_jk
    double profit = 0.0;  ///< Pi_k = R_k - placement cost
};

/// Revenue and profit at the given prices. `placement_cost` is the total
/// build cost of each provider's active stations.
std::array<ProviderOutcome, kProviders> provider_profit(
    const PlanningContext::Market& market, const Prices& prices,
    const std::array<double, kProviders>& placement_cost);

/// Derivative of each provider's revenue with respect to its own price:
/// component k = sum_n sum_j q_n s_jk [phi + (p_k - c_jk) dphi/dp_k].
/// Inactive providers report 0.
std::array<double, kProviders> foc_residual(const PlanningContext::Market& market,
                                            const Prices& prices);

struct BertrandOptions {
    double tolerance = 1e-8;    ///< infinity norm of the residual
    int max_iterations = 200;
    int max_step_halvings = 30;
    bool multi_start = false;   ///< 5 extra starting points, best root kept
    std::uint64_t seed = 0;     ///< for the multi-start perturbations
    Prices initial{};           ///< warm start; unset entries use the canonical start
};

struct PriceSolution {
    Prices prices;          ///< no value for providers with no stations
    int iterations = 0;
    double residual_inf = 0.0;
};

/// Simultaneous solution of the first-order conditions by damped Newton with
/// a finite-difference Jacobian. Throws UnboundedError when demand is not
/// price sensitive and NonConvergenceError when no root is found.
PriceSolution solve_bertrand(const PlanningContext::Market& market,
                             const BertrandOptions& opts = {});

} // namespace evplan
