#include "evplan/context.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "evplan/errors.hpp"
#include "json.hpp"

namespace evplan {

bool PlacementPolicy::covers(const PlacementPolicy& other) const {
    if (bits.size() != other.bits.size()) return false;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (other.bits[i] && !bits[i]) return false;
    return true;
}

PlacementPolicy PlacementPolicy::from_mask(std::uint64_t mask, std::size_t L) {
    PlacementPolicy p = zeros(L);
    for (std::size_t i = 0; i < L; ++i)
        p.bits[i] = (mask >> i) & 1u ? 1 : 0;
    return p;
}

std::uint64_t PlacementPolicy::to_mask() const {
    std::uint64_t m = 0;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) m |= std::uint64_t{1} << i;
    return m;
}

PlanningContext::PlanningContext(RoadNetwork net, PowerSystem grid,
                                 std::vector<Candidate> candidates, ChoiceCoefficients coeffs,
                                 std::map<int, double> lmp_by_bus)
    : net_(std::move(net)),
      grid_(std::move(grid)),
      candidates_(std::move(candidates)),
      coeffs_(std::move(coeffs)),
      lmp_(std::move(lmp_by_bus)) {
    coeffs_.validate();
    grid_.validate();
    for (const Candidate& c : candidates_) {
        if (!net_.has_node(c.node))
            throw ConfigError("candidate " + std::to_string(c.id) + " references unknown node " +
                              std::to_string(c.node));
        grid_.index_of(c.bus);
        if (c.provider < 0 || c.provider > kProviders)
            throw ConfigError("candidate " + std::to_string(c.id) + " has invalid provider");
        if (!lmp_.count(c.bus))
            throw ConfigError("no LMP for bus " + std::to_string(c.bus));
    }
    dist_from_candidate_.resize(candidates_.size());
    for (std::size_t j = 0; j < candidates_.size(); ++j)
        dist_from_candidate_[j] = net_.distances_from(candidates_[j].node);
}

double PlanningContext::lmp_of_candidate(std::size_t j) const {
    return lmp_.at(candidates_[j].bus);
}

double PlanningContext::distance_to_candidate(NodeId node, std::size_t candidate) const {
    return dist_from_candidate_[candidate][net_.index_of(node)];
}

void PlanningContext::set_population(std::vector<EvAgent> population) {
    population_ = std::move(population);
    rebuild_observables();
}

void PlanningContext::rebuild_observables() {
    const std::size_t N = population_.size();
    const std::size_t L = candidates_.size();
    obs_.assign(N * L, {});
    routes_.clear();
    routes_.reserve(N);

    // one distance map per distinct origin covers d(origin, dest)
    std::map<NodeId, std::vector<double>> from_origin;
    for (const EvAgent& a : population_) {
        if (!from_origin.count(a.origin)) from_origin[a.origin] = net_.distances_from(a.origin);
    }

    constexpr double inf = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < N; ++n) {
        const EvAgent& a = population_[n];
        routes_.push_back(shortest_path(net_, a.origin, a.dest));
        const auto& d_from_o = from_origin.at(a.origin);
        const double direct = d_from_o[net_.index_of(a.dest)];
        for (std::size_t j = 0; j < L; ++j) {
            StationObservables& o = obs_[n * L + j];
            const Candidate& c = candidates_[j];
            const double leg1 = d_from_o[net_.index_of(c.node)];
            const double leg2 = dist_from_candidate_[j][net_.index_of(a.dest)];
            if (direct == inf || leg1 == inf || leg2 == inf)
                throw NoPathError("candidate " + std::to_string(c.id) +
                                  " is unreachable for agent " + std::to_string(a.id));
            o.deviating_km = std::max(0.0, leg1 + leg2 - direct);
            o.near_destination =
                dist_from_candidate_[j][net_.index_of(a.dest)] <= coeffs_.d_th_km;
            o.restaurant = c.restaurant;
            o.shopping = c.shopping;
            o.supermarket = c.supermarket;
        }
    }
}

PlacementPolicy PlanningContext::clamp_policy(int provider_1based, PlacementPolicy policy) const {
    if (policy.size() != candidates_.size())
        throw DimensionMismatchError("policy length does not match the candidate count");
    for (std::size_t j = 0; j < policy.size(); ++j)
        if (!allowed(provider_1based, j)) policy.bits[j] = 0;
    return policy;
}

PlanningContext::Market PlanningContext::make_market(const PolicyTriple& policies) const {
    Market m;
    m.policies = policies;
    m.choice.coeffs = coeffs_;
    m.choice.population = population_;
    const std::size_t L = candidates_.size();
    for (int k = 0; k < kProviders; ++k) {
        if (policies[k].size() != L)
            throw DimensionMismatchError("policy length does not match the candidate count");
        for (std::size_t j = 0; j < L; ++j) {
            if (!policies[k].bits[j]) continue;
            if (!allowed(k + 1, j))
                throw ConfigError("candidate " + std::to_string(candidates_[j].id) +
                                  " is not open to provider " + std::to_string(k + 1));
            m.active_index[k].push_back(j);
            m.lmp[k].push_back(lmp_of_candidate(j));
        }
    }
    const std::size_t N = population_.size();
    m.choice.station_util.resize(N);
    for (std::size_t n = 0; n < N; ++n) {
        for (int k = 0; k < kProviders; ++k) {
            auto& util = m.choice.station_util[n][k];
            util.reserve(m.active_index[k].size());
            for (std::size_t j : m.active_index[k])
                util.push_back(station_utility(observables(n, j), coeffs_.nests[k]));
        }
    }
    return m;
}

std::map<int, double> PlanningContext::demand_as_bus_load(const Market& market,
                                                          const DemandForecast& psi,
                                                          int exclude_provider) const {
    std::map<int, double> mw;
    for (int k = 0; k < kProviders; ++k) {
        if (k == exclude_provider) continue;
        for (std::size_t col = 0; col < market.active_index[k].size(); ++col) {
            const Candidate& c = candidates_[market.active_index[k][col]];
            mw[c.bus] += psi.psi_kwh[k][col] / (1000.0 * ev_load_window_h);
        }
    }
    return mw;
}

std::vector<Candidate> load_candidates(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open candidate file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }
    std::vector<Candidate> out;
    try {
        for (const auto& cj : j.at("candidates")) {
            Candidate c;
            c.id = cj.at("id").get<int>();
            c.node = cj.at("node").get<NodeId>();
            c.bus = cj.at("bus").get<int>();
            c.provider = cj.value("provider", 0);
            c.restaurant = cj.value("restaurant", false);
            c.shopping = cj.value("shopping", false);
            c.supermarket = cj.value("supermarket", false);
            out.push_back(c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad candidate schema in " + file.string() + ": " + e.what());
    }
    return out;
}

std::array<std::vector<double>, kProviders> load_placement_costs(
    const std::filesystem::path& file, std::size_t candidate_count) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open placement cost file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }
    std::array<std::vector<double>, kProviders> theta;
    try {
        const auto& rows = j.at("costs");
        if (rows.size() != kProviders)
            throw ConfigError("expected 3 provider cost rows in " + file.string());
        for (int k = 0; k < kProviders; ++k) {
            theta[k] = rows[k].get<std::vector<double>>();
            if (theta[k].size() != candidate_count)
                throw ConfigError("cost row " + std::to_string(k + 1) +
                                  " does not match the candidate count");
            for (double v : theta[k])
                if (!(v > 0.0)) throw ConfigError("placement costs must be positive");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad placement cost schema in " + file.string() + ": " + e.what());
    }
    return theta;
}

} // namespace evplan
