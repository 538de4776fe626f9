#pragma once

// Shared builders for the test suites.

#include <map>
#include <vector>

#include "evplan/context.hpp"
#include "evplan/demand.hpp"
#include "evplan/power_grid.hpp"
#include "evplan/road_network.hpp"

namespace fixtures {

using namespace evplan;

/// Path graph 1-2-...-n with the given edge lengths.
inline RoadNetwork line_network(const std::vector<double>& lengths) {
    std::vector<RoadNode> nodes;
    std::vector<RoadEdge> edges;
    for (std::size_t i = 0; i <= lengths.size(); ++i)
        nodes.push_back({static_cast<NodeId>(i + 1), static_cast<double>(i), 0.0});
    for (std::size_t i = 0; i < lengths.size(); ++i)
        edges.push_back({static_cast<NodeId>(i + 1), static_cast<NodeId>(i + 2), lengths[i]});
    return RoadNetwork(nodes, edges);
}

/// Slack + one PQ bus joined by a short line.
inline PowerSystem two_bus_grid(double p_load_mw = 20.0, double q_load_mvar = 5.0) {
    PowerSystem sys;
    sys.base_mva = 100.0;
    sys.buses.push_back({1, BusKind::Slack, 0.0, 0.0});
    sys.buses.push_back({2, BusKind::PQ, p_load_mw, q_load_mvar});
    sys.branches.push_back({1, 2, 0.01, 0.05, 0.0, 1.0});
    sys.generators.push_back({1, 0.0, 1.0, 1.0});
    return sys;
}

/// Flat coefficients: mild price sensitivity, detour aversion, no amenities.
inline ChoiceCoefficients basic_coefficients() {
    ChoiceCoefficients c;
    c.alpha = 1.0;
    c.beta = -2.0;
    for (auto& n : c.nests) {
        n.sigma = 0.8;
        n.mu = -0.3;
        n.eta = 0.5;
        n.gamma = 0.2;
        n.lambda = 0.2;
        n.delta = 0.2;
    }
    c.d_th_km = 1.5;
    c.q_min_kwh = 10.0;
    c.q_max_kwh = 40.0;
    return c;
}

inline EvAgent agent(int id, double income, NodeId origin, NodeId dest, double q) {
    EvAgent a;
    a.id = id;
    a.income = income;
    a.origin = origin;
    a.dest = dest;
    a.demand_kwh = q;
    return a;
}

/// Small market: a 4-node road line, a 2-bus grid, stations on inner nodes.
/// Every candidate is open to all providers and sits on grid bus 2.
inline PlanningContext small_context(std::size_t candidate_count = 2,
                                     std::size_t population_size = 6,
                                     ChoiceCoefficients coeffs = basic_coefficients()) {
    RoadNetwork net = line_network({1.0, 1.0, 1.0});
    std::vector<Candidate> candidates;
    for (std::size_t j = 0; j < candidate_count; ++j) {
        Candidate c;
        c.id = static_cast<int>(j + 1);
        c.node = static_cast<NodeId>(2 + (j % 2)); // nodes 2 and 3
        c.bus = 2;
        c.restaurant = j % 2 == 0;
        candidates.push_back(c);
    }
    std::map<int, double> lmp{{1, 0.18}, {2, 0.20}};
    PlanningContext ctx(std::move(net), two_bus_grid(), std::move(candidates), std::move(coeffs),
                        std::move(lmp));
    std::vector<EvAgent> pop;
    for (std::size_t n = 0; n < population_size; ++n)
        pop.push_back(agent(static_cast<int>(n), 40.0 + 5.0 * static_cast<double>(n % 3),
                            static_cast<NodeId>(1 + n % 2), static_cast<NodeId>(4 - (n % 2)),
                            15.0 + static_cast<double>(n)));
    ctx.set_population(std::move(pop));
    return ctx;
}

inline PolicyTriple all_on(const PlanningContext& ctx) {
    PolicyTriple t;
    for (int k = 0; k < kProviders; ++k)
        t[k] = PlacementPolicy{std::vector<std::uint8_t>(ctx.candidate_count(), 1)};
    return t;
}

} // namespace fixtures
