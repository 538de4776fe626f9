#include "evplan/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "evplan/errors.hpp"
#include "evplan/rng.hpp"
#include "json.hpp"

namespace evplan {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::map<NodeId, double> parse_weights(const nlohmann::json& j) {
    std::map<NodeId, double> w;
    for (const auto& row : j) {
        const NodeId node = row.at("node").get<NodeId>();
        const double weight = row.at("weight").get<double>();
        if (weight < 0.0) throw ConfigError("node weights must be nonnegative");
        w[node] = weight;
    }
    return w;
}

} // namespace

ScenarioConfig load_scenario(const std::filesystem::path& file) {
    const std::string raw = read_file(file);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }

    ScenarioConfig cfg;
    const auto base = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    try {
        const auto& files = j.at("files");
        cfg.network_file = resolve(files.at("network").get<std::string>());
        cfg.grid_file = resolve(files.at("grid").get<std::string>());
        cfg.candidates_file = resolve(files.at("candidates").get<std::string>());
        cfg.coefficients_file = resolve(files.at("coefficients").get<std::string>());
        cfg.lmp_file = resolve(files.at("lmp").get<std::string>());
        cfg.costs_file = resolve(files.at("costs").get<std::string>());

        cfg.stage_ev_counts = j.at("stages").at("ev_counts").get<std::vector<int>>();
        if (cfg.stage_ev_counts.empty()) throw ConfigError("at least one stage is required");
        for (std::size_t t = 0; t < cfg.stage_ev_counts.size(); ++t) {
            if (cfg.stage_ev_counts[t] < 0) throw ConfigError("stage EV counts must be >= 0");
            if (t > 0 && cfg.stage_ev_counts[t] <= cfg.stage_ev_counts[t - 1])
                throw ConfigError("stage EV counts must be strictly increasing");
        }

        if (j.contains("population")) {
            const auto& pj = j.at("population");
            cfg.population.income_mean = pj.value("income_mean", cfg.population.income_mean);
            cfg.population.income_cv = pj.value("income_cv", cfg.population.income_cv);
            if (pj.contains("origin_weights"))
                cfg.population.origin_weights = parse_weights(pj.at("origin_weights"));
            if (pj.contains("dest_weights"))
                cfg.population.dest_weights = parse_weights(pj.at("dest_weights"));
        }
        if (!(cfg.population.income_mean > 0.0))
            throw ConfigError("income mean must be positive");
        if (cfg.population.income_cv < 0.0)
            throw ConfigError("income coefficient of variation must be >= 0");

        const auto& gj = j.at("game");
        cfg.game.impact_weight = gj.value("impact_weight", 0.0);
        cfg.game.opponent_prior = gj.value("opponent_prior", 0.5);
        cfg.game.opponent_samples = gj.value("opponent_samples", 64);
        cfg.game.max_delay_probability = gj.value("max_delay_probability", 1.0);
        cfg.game.min_coverage = gj.value("min_coverage", 0.0);
        cfg.game.coverage_at_most = gj.value("coverage_at_most", false);
        cfg.game.iterate_to_fixed_point = gj.value("iterate_to_fixed_point", false);
        cfg.game.max_rounds = gj.value("max_rounds", 10);
        cfg.game.pricing.multi_start = gj.value("price_multi_start", false);

        if (j.contains("qos")) {
            const auto& qj = j.at("qos");
            cfg.game.qos.replications = qj.value("replications", cfg.game.qos.replications);
            cfg.game.qos.trips_per_ev = qj.value("trips_per_ev", cfg.game.qos.trips_per_ev);
            cfg.game.qos.station_capacity =
                qj.value("station_capacity", cfg.game.qos.station_capacity);
            cfg.game.qos.accessibility_radius_km =
                qj.value("accessibility_radius_km", cfg.game.qos.accessibility_radius_km);
            cfg.game.qos.travel_speed_kmh =
                qj.value("travel_speed_kmh", cfg.game.qos.travel_speed_kmh);
            cfg.game.qos.horizon_h = qj.value("horizon_h", cfg.game.qos.horizon_h);
        }

        cfg.master_seed = j.value("seed", 0ULL);
        if (j.contains("output_dir")) cfg.output_dir = resolve(j.at("output_dir").get<std::string>());
        cfg.ev_load_window_h = j.value("ev_load_window_h", 24.0);
        cfg.ev_power_factor = j.value("ev_power_factor", 0.98);
        cfg.impact_per_unit = j.value("impact_per_unit", false);
        cfg.heatmap_cells_x = j.value("heatmap_cells_x", 20);
        cfg.heatmap_cells_y = j.value("heatmap_cells_y", 20);
        if (cfg.heatmap_cells_x < 1 || cfg.heatmap_cells_y < 1)
            throw ConfigError("heatmap grid must have at least one cell per axis");
        if (!(cfg.ev_load_window_h > 0.0))
            throw ConfigError("ev_load_window_h must be positive");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad scenario schema in " + file.string() + ": " + e.what());
    }

    // hash of the scenario plus everything it references
    std::uint64_t h = rng::fnv1a(raw);
    for (const auto& p : {cfg.network_file, cfg.grid_file, cfg.candidates_file,
                          cfg.coefficients_file, cfg.lmp_file, cfg.costs_file})
        h = rng::splitmix64(h ^ rng::fnv1a(read_file(p)));
    cfg.config_hash = hex64(h);
    return cfg;
}

std::vector<EvAgent> generate_population(const RoadNetwork& net, const PopulationConfig& cfg,
                                         const ChoiceCoefficients& coeffs, int count,
                                         std::uint64_t seed) {
    if (count < 0) throw ConfigError("population size must be >= 0");
    if (!(cfg.income_mean > 0.0)) throw ConfigError("income mean must be positive");
    if (cfg.income_cv < 0.0) throw ConfigError("income cv must be >= 0");

    auto make_sampler = [&](const std::map<NodeId, double>& weights) {
        std::vector<NodeId> ids;
        std::vector<double> w;
        if (weights.empty()) {
            for (const RoadNode& n : net.nodes()) {
                ids.push_back(n.id);
                w.push_back(1.0);
            }
        } else {
            double total = 0.0;
            for (const auto& [node, weight] : weights) {
                if (!net.has_node(node))
                    throw ConfigError("weight references unknown node " + std::to_string(node));
                ids.push_back(node);
                w.push_back(weight);
                total += weight;
            }
            if (!(total > 0.0)) throw ConfigError("node weights sum to zero");
        }
        return std::make_pair(ids, w);
    };
    const auto [origin_ids, origin_w] = make_sampler(cfg.origin_weights);
    const auto [dest_ids, dest_w] = make_sampler(cfg.dest_weights);

    const double sigma2 = std::log(1.0 + cfg.income_cv * cfg.income_cv);
    const double log_std = std::sqrt(sigma2);
    const double log_mean = std::log(cfg.income_mean) - sigma2 / 2.0;

    rng::Engine eng(seed);
    std::vector<EvAgent> population;
    population.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        EvAgent a;
        a.id = i;
        a.income = cfg.income_cv == 0.0 ? cfg.income_mean : eng.lognormal(log_mean, log_std);
        a.origin = origin_ids[eng.categorical(origin_w)];
        a.dest = dest_ids[eng.categorical(dest_w)];
        a.demand_kwh = eng.uniform(coeffs.q_min_kwh, coeffs.q_max_kwh);
        population.push_back(a);
    }
    return population;
}

PlanningContext make_context(const ScenarioConfig& cfg) {
    RoadNetwork net = load_road_network(cfg.network_file);
    PowerSystem grid = load_power_system(cfg.grid_file);
    std::vector<Candidate> candidates = load_candidates(cfg.candidates_file);
    ChoiceCoefficients coeffs = load_choice_coefficients(cfg.coefficients_file);
    std::map<int, double> lmp = load_lmp_table(cfg.lmp_file);
    PlanningContext ctx(std::move(net), std::move(grid), std::move(candidates), std::move(coeffs),
                        std::move(lmp));
    ctx.ev_load_window_h = cfg.ev_load_window_h;
    ctx.ev_power_factor = cfg.ev_power_factor;
    ctx.impact_per_unit = cfg.impact_per_unit;
    return ctx;
}

Heatmap route_heatmap(const PlanningContext& ctx, int cells_x, int cells_y) {
    Heatmap map;
    map.cells_x = cells_x;
    map.cells_y = cells_y;
    map.counts.assign(static_cast<std::size_t>(cells_x) * cells_y, 0);
    const auto& nodes = ctx.network().nodes();
    if (nodes.empty()) return map;
    double min_x = nodes.front().x_km, max_x = min_x;
    double min_y = nodes.front().y_km, max_y = min_y;
    for (const RoadNode& n : nodes) {
        min_x = std::min(min_x, n.x_km);
        max_x = std::max(max_x, n.x_km);
        min_y = std::min(min_y, n.y_km);
        max_y = std::max(max_y, n.y_km);
    }
    const double span_x = max_x > min_x ? max_x - min_x : 1.0;
    const double span_y = max_y > min_y ? max_y - min_y : 1.0;
    for (std::size_t n = 0; n < ctx.population().size(); ++n) {
        for (NodeId id : ctx.trip_route(n).nodes) {
            const RoadNode& node = ctx.network().node(id);
            int cx = static_cast<int>((node.x_km - min_x) / span_x * cells_x);
            int cy = static_cast<int>((node.y_km - min_y) / span_y * cells_y);
            cx = std::clamp(cx, 0, cells_x - 1);
            cy = std::clamp(cy, 0, cells_y - 1);
            ++map.counts[static_cast<std::size_t>(cy) * cells_x + cx];
        }
    }
    return map;
}

void write_heatmap_csv(const Heatmap& map, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write heatmap file " + file.string());
    for (int cy = 0; cy < map.cells_y; ++cy) {
        for (int cx = 0; cx < map.cells_x; ++cx) {
            if (cx > 0) out << ',';
            out << map.at(cx, cy);
        }
        out << '\n';
    }
}

namespace {

ordered_json policy_json(const PlacementPolicy& p) {
    ordered_json arr = ordered_json::array();
    for (auto b : p.bits) arr.push_back(b ? 1 : 0);
    return arr;
}

} // namespace

std::string stage_report_json(const StageReport& r) {
    ordered_json j;
    j["stage"] = r.stage;
    j["ev_count"] = r.ev_count;
    j["config_hash"] = r.config_hash;
    j["market_impact"] = r.market_impact;
    j["price_residual_inf"] = r.price_residual_inf;
    ordered_json providers = ordered_json::array();
    for (int k = 0; k < kProviders; ++k) {
        const ProviderStageReport& p = r.providers[k];
        ordered_json pj;
        pj["provider"] = k + 1;
        pj["policy"] = policy_json(p.policy);
        if (p.price.has_value())
            pj["price"] = *p.price;
        else
            pj["price"] = nullptr;
        pj["stations"] = p.station_candidate_ids;
        pj["psi_kwh"] = p.psi_kwh;
        pj["delay_probability"] = p.qos.delay_probability;
        pj["coverage"] = p.qos.coverage;
        pj["expected_utility"] = p.expected_utility;
        pj["expected_revenue"] = p.expected_revenue;
        pj["expected_impact"] = p.expected_impact;
        pj["utility_se"] = p.utility_se;
        pj["cumulative_stations"] = p.cumulative_stations;
        providers.push_back(pj);
    }
    j["providers"] = providers;
    return j.dump(2) + "\n";
}

MultistageResult run_multistage(const ScenarioConfig& cfg) {
    PlanningContext ctx = make_context(cfg);
    GameConfig game_cfg = cfg.game;
    game_cfg.placement_cost = load_placement_costs(cfg.costs_file, ctx.candidate_count());

    const bool write_files = !cfg.output_dir.empty();
    if (write_files) std::filesystem::create_directories(cfg.output_dir);

    MultistageResult result;
    PolicyTriple policies{PlacementPolicy::zeros(ctx.candidate_count()),
                          PlacementPolicy::zeros(ctx.candidate_count()),
                          PlacementPolicy::zeros(ctx.candidate_count())};

    for (std::size_t t = 0; t < cfg.stage_ev_counts.size(); ++t) {
        const std::uint64_t stage_seed = rng::derive(cfg.master_seed, t);
        std::vector<EvAgent> population =
            generate_population(ctx.network(), cfg.population, ctx.coefficients(),
                                cfg.stage_ev_counts[t], rng::derive(stage_seed, "population"));
        ctx.set_population(std::move(population));

        PlacementGame game(ctx, game_cfg);
        const PolicyTriple locked = policies;
        std::array<std::vector<StrategyEvaluation>, kProviders> evals;

        const int rounds = game_cfg.iterate_to_fixed_point ? game_cfg.max_rounds : 1;
        try {
            for (int round = 0; round < rounds; ++round) {
                bool changed = false;
                for (int k = 0; k < kProviders; ++k) {
                    PlacementPolicy next =
                        game.best_response(k, policies, locked[k],
                                           rng::derive(stage_seed, static_cast<std::uint64_t>(k)),
                                           &evals[k]);
                    if (!(next == policies[k])) changed = true;
                    policies[k] = std::move(next);
                }
                if (!changed) break;
            }
        } catch (const InfeasibleError& e) {
            throw InfeasibleError("stage " + std::to_string(t + 1) + ": " + e.what());
        }

        // price, forecast and stress-test the final market of this stage
        StageReport report;
        report.stage = static_cast<int>(t + 1);
        report.ev_count = cfg.stage_ev_counts[t];
        report.config_hash = cfg.config_hash;

        const auto market = ctx.make_market(policies);
        Prices prices{};
        bool any = false;
        for (int k = 0; k < kProviders; ++k) any = any || !market.active_index[k].empty();
        if (any) {
            const PriceSolution ps = solve_bertrand(market, game_cfg.pricing);
            prices = ps.prices;
            report.price_residual_inf = ps.residual_inf;
        }
        const ChoiceMatrix choices = evaluate_choices(market.choice, prices);
        const DemandForecast psi = aggregate_demand(market.choice.population, choices);

        QosConfig qc = game_cfg.qos;
        qc.seed = rng::derive(stage_seed, "qos-report");
        const auto qos = simulate_qos(ctx, market, choices, qc);

        const auto bus_load = ctx.demand_as_bus_load(market, psi);
        if (!bus_load.empty()) {
            const DispatchPair pair =
                dispatch_with_ev(ctx.grid(), bus_load, ctx.ev_power_factor, {});
            report.market_impact =
                impact_metric(pair.base, pair.ev, ctx.impact_per_unit, ctx.grid().base_mva).metric;
        }

        for (int k = 0; k < kProviders; ++k) {
            ProviderStageReport& pr = report.providers[k];
            pr.policy = policies[k];
            pr.price = prices[k];
            for (std::size_t col = 0; col < market.active_index[k].size(); ++col) {
                pr.station_candidate_ids.push_back(
                    ctx.candidates()[market.active_index[k][col]].id);
                pr.psi_kwh.push_back(psi.psi_kwh[k][col]);
            }
            pr.qos = qos[k];
            pr.cumulative_stations = policies[k].count();
            for (const StrategyEvaluation& ev : evals[k]) {
                if (ev.policy == policies[k]) {
                    pr.expected_utility = ev.expected_utility;
                    pr.expected_revenue = ev.expected_revenue;
                    pr.expected_impact = ev.expected_impact;
                    pr.utility_se = ev.utility_se;
                    break;
                }
            }
        }

        result.stages.push_back(report);
        if (write_files) {
            const auto stage_name = "stage_" + std::to_string(t + 1);
            std::ofstream out(cfg.output_dir / (stage_name + ".json"), std::ios::binary);
            out << stage_report_json(report);
            write_heatmap_csv(route_heatmap(ctx, cfg.heatmap_cells_x, cfg.heatmap_cells_y),
                              cfg.output_dir / (stage_name + "_heatmap.csv"));
        }
    }

    if (write_files) {
        ordered_json summary;
        summary["config_hash"] = cfg.config_hash;
        summary["stages"] = cfg.stage_ev_counts.size();
        ordered_json counts = ordered_json::array();
        for (const StageReport& r : result.stages) {
            ordered_json row;
            row["stage"] = r.stage;
            row["ev_count"] = r.ev_count;
            for (int k = 0; k < kProviders; ++k)
                row["stations_p" + std::to_string(k + 1)] = r.providers[k].cumulative_stations;
            counts.push_back(row);
        }
        summary["station_counts"] = counts;
        std::ofstream out(cfg.output_dir / "run.json", std::ios::binary);
        out << summary.dump(2) << "\n";
    }
    return result;
}

} // namespace evplan
