#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <vector>

#include "evplan/demand.hpp"
#include "evplan/power_grid.hpp"
#include "evplan/road_network.hpp"

namespace evplan {

/// A site where a charging station may be built.
struct Candidate {
    int id = 0;
    NodeId node = 0; ///< road network node
    int bus = 0;     ///< power grid bus
    int provider = 0; ///< 0 = open to every provider, 1..3 = restricted
    bool restaurant = false;
    bool shopping = false;
    bool supermarket = false;
};

/// One bit per candidate site.
struct PlacementPolicy {
    std::vector<std::uint8_t> bits;

    std::size_t size() const { return bits.size(); }
    int count() const {
        int c = 0;
        for (auto b : bits) c += b ? 1 : 0;
        return c;
    }
    bool covers(const PlacementPolicy& other) const; ///< bitwise superset
    static PlacementPolicy zeros(std::size_t L) { return {std::vector<std::uint8_t>(L, 0)}; }
    static PlacementPolicy from_mask(std::uint64_t mask, std::size_t L);
    std::uint64_t to_mask() const;
    bool operator==(const PlacementPolicy&) const = default;
};

using PolicyTriple = std::array<PlacementPolicy, kProviders>;

/// Immutable per-stage planning state: the city, the grid, the candidate
/// sites, the consumer model, and the current EV population, plus distance
/// tables shared by every downstream computation.
class PlanningContext {
public:
    PlanningContext(RoadNetwork net, PowerSystem grid, std::vector<Candidate> candidates,
                    ChoiceCoefficients coeffs, std::map<int, double> lmp_by_bus);

    void set_population(std::vector<EvAgent> population);

    const RoadNetwork& network() const { return net_; }
    const PowerSystem& grid() const { return grid_; }
    const std::vector<Candidate>& candidates() const { return candidates_; }
    const ChoiceCoefficients& coefficients() const { return coeffs_; }
    const std::vector<EvAgent>& population() const { return population_; }
    const std::map<int, double>& lmp_by_bus() const { return lmp_; }

    std::size_t candidate_count() const { return candidates_.size(); }
    double lmp_of_candidate(std::size_t j) const;

    /// Station observables for one (agent, candidate) pair.
    const StationObservables& observables(std::size_t agent, std::size_t candidate) const {
        return obs_[agent * candidates_.size() + candidate];
    }

    /// Shortest route of an agent's trip (cached, lexicographic tie-break).
    const Route& trip_route(std::size_t agent) const { return routes_[agent]; }

    /// Graph distance between a route's nodes and a candidate node.
    double distance_to_candidate(NodeId node, std::size_t candidate) const;

    /// True when provider k may build at candidate j.
    bool allowed(int provider_1based, std::size_t candidate) const {
        const int p = candidates_[candidate].provider;
        return p == 0 || p == provider_1based;
    }

    /// Forces disallowed bits to zero; keeps length L.
    PlacementPolicy clamp_policy(int provider_1based, PlacementPolicy policy) const;

    /// kWh of station demand are averaged over this window to obtain MW.
    double ev_load_window_h = 24.0;
    double ev_power_factor = 0.98;
    bool impact_per_unit = false;

    /// Nested-logit context over the stations active under `policies`.
    /// active_index[k] maps nest columns back to candidate indices.
    struct Market {
        ChoiceContext choice;
        std::array<std::vector<std::size_t>, kProviders> active_index;
        std::array<std::vector<double>, kProviders> lmp; ///< aligned with active stations
        PolicyTriple policies;
    };
    Market make_market(const PolicyTriple& policies) const;

    /// Bus -> MW map for the EV charging demand of the active stations,
    /// optionally leaving one provider's stations out.
    std::map<int, double> demand_as_bus_load(const Market& market, const DemandForecast& psi,
                                             int exclude_provider = -1) const;

private:
    RoadNetwork net_;
    PowerSystem grid_;
    std::vector<Candidate> candidates_;
    ChoiceCoefficients coeffs_;
    std::map<int, double> lmp_;
    std::vector<EvAgent> population_;
    std::vector<StationObservables> obs_; ///< row-major [agent][candidate]
    std::vector<Route> routes_;
    std::vector<std::vector<double>> dist_from_candidate_; ///< [candidate][node index]

    void rebuild_observables();
};

std::vector<Candidate> load_candidates(const std::filesystem::path& file);

/// Theta: placement cost per candidate per provider.
std::array<std::vector<double>, kProviders> load_placement_costs(
    const std::filesystem::path& file, std::size_t candidate_count);

} // namespace evplan
