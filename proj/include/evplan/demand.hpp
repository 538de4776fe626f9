#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "evplan/road_network.hpp"

namespace evplan {

inline constexpr int kProviders = 3;

/// Electrical rating and mean session length of one charging service level.
struct LevelAttributes {
    int level = 1;
    double charge_time_h = 0.0; ///< averaged charging time t_k
    double voltage_v = 0.0;     ///< informational rating
    double current_a = 0.0;     ///< informational rating

    double power_kw() const { return voltage_v * current_a / 1000.0; }
};

/// Per-nest taste weights. sigma in (0,1] measures within-nest independence;
/// sigma = 1 collapses the nest structure to a plain logit.
struct NestCoefficients {
    double sigma = 1.0;
    double mu = 0.0;     ///< per km of detour (expected < 0)
    double eta = 0.0;    ///< destination-proximity bonus
    double gamma = 0.0;  ///< restaurant
    double lambda = 0.0; ///< shopping center
    double delta = 0.0;  ///< supermarket
};

struct ChoiceCoefficients {
    double alpha = 0.0; ///< utility per 1/hour of charging time
    double beta = 0.0;  ///< utility per price/income unit (expected < 0)
    std::array<NestCoefficients, kProviders> nests{};
    double d_th_km = 0.0;
    double q_min_kwh = 10.0;
    double q_max_kwh = 40.0;
    std::array<LevelAttributes, kProviders> levels{
        LevelAttributes{1, 17.0, 120.0, 12.0},
        LevelAttributes{2, 5.5, 224.0, 32.0},
        LevelAttributes{3, 0.5, 600.0, 400.0},
    };

    /// Throws DomainError / ConfigError on out-of-range values.
    void validate() const;
};

struct EvAgent {
    int id = 0;
    double income = 0.0; ///< i_n, currency per period, > 0
    NodeId origin = 0;
    NodeId dest = 0;
    double demand_kwh = 0.0; ///< q_n, drawn once per stage
};

/// Station attributes as seen by one agent.
struct StationObservables {
    double deviating_km = 0.0;
    bool near_destination = false;
    bool restaurant = false;
    bool shopping = false;
    bool supermarket = false;
};

/// Observable utility of choosing service level k: alpha/t_k + beta*p_k/i_n.
/// The home-charging outside good is normalized to exactly 0.
double provider_utility(const LevelAttributes& level, double price, const EvAgent& agent,
                        const ChoiceCoefficients& coeffs);

/// Observable utility of a station within its nest:
/// mu*d + eta*z + gamma*r + lambda*g + delta*m.
double station_utility(const StationObservables& obs, const NestCoefficients& c);

/// One nest of the choice problem. Total utility of alternative j is
/// nest_utility + alt_utilities[j].
struct NestUtilities {
    double sigma = 1.0;
    double nest_utility = 0.0;          ///< shared component (W)
    std::vector<double> alt_utilities;  ///< per-alternative component (V)
};

/// Choice probabilities for one agent, aligned with the input nests.
struct ChoiceProbabilities {
    std::vector<std::vector<double>> nest_alt; ///< [nest][alternative]
    double outside = 0.0;

    double nest_share(std::size_t k) const {
        double s = 0.0;
        for (double p : nest_alt[k]) s += p;
        return s;
    }
};

/// Closed-form nested-logit probabilities, evaluated in the log domain.
/// With include_outside, a no-purchase alternative of utility 0 contributes
/// one unit to the denominator and receives the residual probability.
ChoiceProbabilities choice_probabilities(std::span<const NestUtilities> nests,
                                         bool include_outside);

/// Two-level decomposition: within-nest logit, nest-choice logit over
/// W_k + sigma_k * I_k, and the inclusive values I_k.
struct DecomposedChoice {
    std::vector<double> nest_prob;                ///< P_k
    std::vector<std::vector<double>> within_nest; ///< P_{j|k}
    std::vector<double> inclusive_value;          ///< I_k
    double outside = 0.0;
};

DecomposedChoice choice_probabilities_decomposed(std::span<const NestUtilities> nests,
                                                 bool include_outside);

/// Choice probabilities for a whole population over the active stations.
/// Rows align with the population; columns with the active station lists.
struct ChoiceMatrix {
    std::vector<std::array<std::vector<double>, kProviders>> prob; ///< [agent][provider][station]
    std::vector<double> outside;                                   ///< [agent]
};

/// Everything needed to evaluate choices as a function of prices: the
/// population and, per agent and provider, the station utilities of the
/// provider's active stations.
struct ChoiceContext {
    ChoiceCoefficients coeffs;
    std::vector<EvAgent> population;
    /// station_util[n][k][j]: V for agent n, provider k, active station j
    std::vector<std::array<std::vector<double>, kProviders>> station_util;
    bool include_outside = true;

    std::size_t station_count(int provider) const {
        return station_util.empty() ? 0 : station_util.front()[provider].size();
    }
    bool provider_active(int provider) const { return station_count(provider) > 0; }
};

/// Prices per provider; disengaged (inactive) providers carry no price.
using Prices = std::array<std::optional<double>, kProviders>;

ChoiceMatrix evaluate_choices(const ChoiceContext& ctx, const Prices& prices);

/// d(prob)/d(price_k) for every agent/provider/station, same shape as the
/// matrix. Closed form: (beta/i_n) * phi * (1{t=k} - nest share of k).
struct ChoiceGradient {
    std::vector<std::array<std::vector<double>, kProviders>> dprob;
    std::vector<double> doutside;
};

ChoiceGradient demand_price_gradient(const ChoiceContext& ctx, const ChoiceMatrix& at,
                                     int provider);
ChoiceGradient demand_price_gradient(const ChoiceContext& ctx, const Prices& prices,
                                     int provider);

/// Predicted station demand: psi_{j,k} = sum_n q_n * phi^n_{j,k}.
struct DemandForecast {
    std::array<std::vector<double>, kProviders> psi_kwh;
};

DemandForecast aggregate_demand(std::span<const EvAgent> population, const ChoiceMatrix& choices);

/// Load coefficients from JSON (alpha, beta, per-nest blocks, d_th, q range,
/// optional level attribute overrides).
ChoiceCoefficients load_choice_coefficients(const std::filesystem::path& file);

} // namespace evplan
