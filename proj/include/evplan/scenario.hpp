#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evplan/context.hpp"
#include "evplan/game.hpp"
#include "evplan/qos.hpp"

namespace evplan {

struct PopulationConfig {
    double income_mean = 50000.0;
    double income_cv = 0.0; ///< coefficient of variation; 0 = everyone identical
    std::map<NodeId, double> origin_weights; ///< empty = uniform over all nodes
    std::map<NodeId, double> dest_weights;
};

struct ScenarioConfig {
    std::filesystem::path network_file;
    std::filesystem::path grid_file;
    std::filesystem::path candidates_file;
    std::filesystem::path coefficients_file;
    std::filesystem::path lmp_file;
    std::filesystem::path costs_file;
    std::vector<int> stage_ev_counts; ///< strictly increasing
    PopulationConfig population;
    GameConfig game;
    std::uint64_t master_seed = 0;
    std::filesystem::path output_dir;
    double ev_load_window_h = 24.0;
    double ev_power_factor = 0.98;
    bool impact_per_unit = false;
    int heatmap_cells_x = 20;
    int heatmap_cells_y = 20;

    /// Hash over the scenario file and every referenced input, so a report
    /// can be traced back to the exact inputs that produced it.
    std::string config_hash;
};

/// Parse a scenario JSON file; relative paths resolve against its directory.
ScenarioConfig load_scenario(const std::filesystem::path& file);

/// Deterministic stage population: incomes from the configured log-normal,
/// trips sampled by node weights, q_n uniform in [Q_a, Q_b].
std::vector<EvAgent> generate_population(const RoadNetwork& net, const PopulationConfig& cfg,
                                         const ChoiceCoefficients& coeffs, int count,
                                         std::uint64_t seed);

/// Assemble the full planning context for a scenario (loads every input).
PlanningContext make_context(const ScenarioConfig& cfg);

struct ProviderStageReport {
    PlacementPolicy policy;
    std::optional<double> price;
    std::vector<int> station_candidate_ids;
    std::vector<double> psi_kwh; ///< aligned with station_candidate_ids
    QosEstimate qos;
    double expected_utility = 0.0;
    double expected_revenue = 0.0;
    double expected_impact = 0.0;
    double utility_se = 0.0;
    int cumulative_stations = 0;
};

struct StageReport {
    int stage = 0; ///< 1-based
    int ev_count = 0;
    std::array<ProviderStageReport, kProviders> providers;
    double market_impact = 0.0; ///< dispatch deviation, base vs all EV load
    double price_residual_inf = 0.0;
    std::string config_hash;
};

struct MultistageResult {
    std::vector<StageReport> stages;
};

/// Run every stage: regenerate the population, play the placement game with
/// the previous stage's stations locked, price the final market, simulate
/// QoS, and (when an output directory is set) write one JSON report and one
/// heatmap CSV per stage plus a run summary. Files already written survive
/// an Infeasible abort at a later stage.
MultistageResult run_multistage(const ScenarioConfig& cfg);

/// Route-traversal counts on a uniform grid over the network bounding box.
struct Heatmap {
    int cells_x = 0;
    int cells_y = 0;
    std::vector<long> counts; ///< row-major, y-major rows

    long at(int cx, int cy) const { return counts[static_cast<std::size_t>(cy) * cells_x + cx]; }
};

Heatmap route_heatmap(const PlanningContext& ctx, int cells_x, int cells_y);

void write_heatmap_csv(const Heatmap& map, const std::filesystem::path& file);

/// Serialize a stage report (stable field order, suitable for byte-exact
/// comparison across runs).
std::string stage_report_json(const StageReport& report);

} // namespace evplan
