#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "evplan/context.hpp"
#include "evplan/errors.hpp"
#include "evplan/game.hpp"
#include "evplan/power_grid.hpp"
#include "evplan/pricing.hpp"
#include "evplan/qos.hpp"
#include "evplan/rng.hpp"
#include "evplan/scenario.hpp"

namespace {

using evplan::kProviders;
using ordered_json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 2;
constexpr int kExitSolver = 3;
constexpr int kExitConfig = 4;

struct CommonArgs {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> samples;
    std::string format = "json";
    std::optional<int> stage;
    std::optional<std::string> policies;
    std::optional<std::string> prices;
};

evplan::ScenarioConfig load_with_overrides(const std::string& path, const CommonArgs& args) {
    evplan::ScenarioConfig cfg = evplan::load_scenario(path);
    if (args.seed) cfg.master_seed = *args.seed;
    if (args.out) cfg.output_dir = *args.out;
    if (args.samples) cfg.game.opponent_samples = *args.samples;
    return cfg;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

evplan::PolicyTriple parse_policies(const std::string& text, const evplan::PlanningContext& ctx) {
    const auto parts = split(text, ',');
    if (parts.size() != kProviders)
        throw evplan::ConfigError("--policies needs 3 comma-separated bit strings");
    evplan::PolicyTriple triple;
    for (int k = 0; k < kProviders; ++k) {
        if (parts[k].size() != ctx.candidate_count())
            throw evplan::ConfigError("policy bit string length must equal the candidate count");
        evplan::PlacementPolicy p = evplan::PlacementPolicy::zeros(ctx.candidate_count());
        for (std::size_t j = 0; j < parts[k].size(); ++j) {
            if (parts[k][j] != '0' && parts[k][j] != '1')
                throw evplan::ConfigError("policy bit strings may contain only 0 and 1");
            p.bits[j] = parts[k][j] == '1';
        }
        triple[k] = ctx.clamp_policy(k + 1, p);
    }
    return triple;
}

evplan::PolicyTriple default_policies(const evplan::PlanningContext& ctx) {
    evplan::PolicyTriple triple;
    for (int k = 0; k < kProviders; ++k) {
        evplan::PlacementPolicy all{std::vector<std::uint8_t>(ctx.candidate_count(), 1)};
        triple[k] = ctx.clamp_policy(k + 1, all);
    }
    return triple;
}

/// Stage population for the diagnostics subcommands.
void prime_population(evplan::PlanningContext& ctx, const evplan::ScenarioConfig& cfg,
                      int stage_1based) {
    if (stage_1based < 1 || stage_1based > static_cast<int>(cfg.stage_ev_counts.size()))
        throw evplan::ConfigError("stage out of range");
    const std::size_t t = static_cast<std::size_t>(stage_1based - 1);
    const std::uint64_t stage_seed = evplan::rng::derive(cfg.master_seed, t);
    ctx.set_population(evplan::generate_population(
        ctx.network(), cfg.population, ctx.coefficients(), cfg.stage_ev_counts[t],
        evplan::rng::derive(stage_seed, "population")));
}

void emit(const ordered_json& j, const CommonArgs& args) {
    if (args.out) {
        std::ofstream f(*args.out, std::ios::binary);
        if (!f) throw evplan::ConfigError("cannot write " + *args.out);
        f << j.dump(2) << "\n";
    } else {
        std::cout << j.dump(2) << "\n";
    }
}

ordered_json prices_json(const evplan::Prices& p) {
    ordered_json out = ordered_json::array();
    for (int k = 0; k < kProviders; ++k) {
        if (p[k].has_value())
            out.push_back(*p[k]);
        else
            out.push_back(nullptr);
    }
    return out;
}

int cmd_plan(const std::string& scenario, const CommonArgs& args) {
    evplan::ScenarioConfig cfg = load_with_overrides(scenario, args);
    const evplan::MultistageResult result = evplan::run_multistage(cfg);
    ordered_json j;
    j["config_hash"] = cfg.config_hash;
    j["stages"] = ordered_json::array();
    for (const auto& r : result.stages) {
        ordered_json row;
        row["stage"] = r.stage;
        row["ev_count"] = r.ev_count;
        for (int k = 0; k < kProviders; ++k) {
            row["stations_p" + std::to_string(k + 1)] = r.providers[k].cumulative_stations;
        }
        row["market_impact"] = r.market_impact;
        j["stages"].push_back(row);
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_demand(const std::string& scenario, const CommonArgs& args) {
    const evplan::ScenarioConfig cfg = load_with_overrides(scenario, args);
    evplan::PlanningContext ctx = evplan::make_context(cfg);
    prime_population(ctx, cfg, args.stage.value_or(1));
    const auto policies =
        args.policies ? parse_policies(*args.policies, ctx) : default_policies(ctx);
    const auto market = ctx.make_market(policies);

    evplan::Prices prices{};
    double residual = 0.0;
    if (args.prices) {
        const auto parts = split(*args.prices, ',');
        if (parts.size() != kProviders)
            throw evplan::ConfigError("--prices needs 3 comma-separated values");
        for (int k = 0; k < kProviders; ++k)
            if (!market.active_index[k].empty()) prices[k] = std::stod(parts[k]);
    } else {
        const auto sol = evplan::solve_bertrand(market, cfg.game.pricing);
        prices = sol.prices;
        residual = sol.residual_inf;
    }
    const auto choices = evplan::evaluate_choices(market.choice, prices);
    const auto psi = evplan::aggregate_demand(market.choice.population, choices);

    ordered_json j;
    j["stage"] = args.stage.value_or(1);
    j["prices"] = prices_json(prices);
    if (!args.prices) j["price_residual_inf"] = residual;
    ordered_json stations = ordered_json::array();
    double total = 0.0;
    for (int k = 0; k < kProviders; ++k) {
        for (std::size_t col = 0; col < market.active_index[k].size(); ++col) {
            ordered_json row;
            row["provider"] = k + 1;
            row["candidate"] = ctx.candidates()[market.active_index[k][col]].id;
            row["psi_kwh"] = psi.psi_kwh[k][col];
            total += psi.psi_kwh[k][col];
            stations.push_back(row);
        }
    }
    j["stations"] = stations;
    j["total_kwh"] = total;

    if (args.format == "csv") {
        std::ostream& os = std::cout;
        os << "provider,candidate,psi_kwh\n";
        for (const auto& row : stations)
            os << row["provider"] << "," << row["candidate"] << "," << row["psi_kwh"] << "\n";
        return kExitOk;
    }
    emit(j, args);
    return kExitOk;
}

int cmd_equilibrium(const std::string& scenario, const CommonArgs& args) {
    const evplan::ScenarioConfig cfg = load_with_overrides(scenario, args);
    evplan::PlanningContext ctx = evplan::make_context(cfg);
    prime_population(ctx, cfg, args.stage.value_or(1));
    const auto policies =
        args.policies ? parse_policies(*args.policies, ctx) : default_policies(ctx);
    const auto market = ctx.make_market(policies);
    const auto sol = evplan::solve_bertrand(market, cfg.game.pricing);

    ordered_json j;
    j["stage"] = args.stage.value_or(1);
    j["prices"] = prices_json(sol.prices);
    j["iterations"] = sol.iterations;
    j["residual_inf"] = sol.residual_inf;
    emit(j, args);
    return kExitOk;
}

int cmd_power_flow(const std::string& path, const std::string& ev_load, const CommonArgs& args) {
    // accept either a scenario (use its grid) or a grid case file
    evplan::PowerSystem sys;
    {
        std::ifstream probe(path);
        if (!probe) throw evplan::ConfigError("cannot open " + path);
        nlohmann::json j;
        try {
            probe >> j;
        } catch (const nlohmann::json::exception& e) {
            throw evplan::ConfigError("invalid JSON in " + path + ": " + e.what());
        }
        if (j.contains("files"))
            sys = evplan::load_power_system(evplan::load_scenario(path).grid_file);
        else
            sys = evplan::load_power_system(path);
    }

    evplan::ExtraLoad extra;
    if (!ev_load.empty()) {
        for (const auto& part : split(ev_load, ',')) {
            const auto kv = split(part, '=');
            if (kv.size() != 2) throw evplan::ConfigError("--ev-load expects bus=MW pairs");
            const int bus = std::stoi(kv[0]);
            const double mw = std::stod(kv[1]);
            extra.p_mw[bus] += mw;
            extra.q_mvar[bus] += mw * std::tan(std::acos(0.98));
        }
    }
    const auto sol = evplan::solve_power_flow(sys, extra);

    if (args.format == "csv") {
        std::cout << "bus,vm_pu,va_deg\n";
        for (std::size_t i = 0; i < sys.buses.size(); ++i)
            std::cout << sys.buses[i].id << "," << sol.vm_pu[i] << ","
                      << sol.va_rad[i] * 180.0 / M_PI << "\n";
        return kExitOk;
    }
    ordered_json j;
    j["iterations"] = sol.iterations;
    j["residual_inf_pu"] = sol.residual_inf_pu;
    j["loss_mw"] = evplan::total_loss_mw(sys, sol);
    ordered_json buses = ordered_json::array();
    for (std::size_t i = 0; i < sys.buses.size(); ++i) {
        ordered_json row;
        row["bus"] = sys.buses[i].id;
        row["vm_pu"] = sol.vm_pu[i];
        row["va_deg"] = sol.va_rad[i] * 180.0 / M_PI;
        buses.push_back(row);
    }
    j["buses"] = buses;
    ordered_json gens = ordered_json::array();
    for (std::size_t g = 0; g < sys.generators.size(); ++g) {
        ordered_json row;
        row["bus"] = sys.generators[g].bus;
        row["p_mw"] = sol.gen_p_mw[g];
        row["q_mvar"] = sol.gen_q_mvar[g];
        gens.push_back(row);
    }
    j["generators"] = gens;
    emit(j, args);
    return kExitOk;
}

int cmd_qos(const std::string& scenario, const CommonArgs& args) {
    const evplan::ScenarioConfig cfg = load_with_overrides(scenario, args);
    evplan::PlanningContext ctx = evplan::make_context(cfg);
    prime_population(ctx, cfg, args.stage.value_or(1));
    const auto policies =
        args.policies ? parse_policies(*args.policies, ctx) : default_policies(ctx);
    const auto market = ctx.make_market(policies);

    evplan::Prices prices{};
    bool any = false;
    for (int k = 0; k < kProviders; ++k) any = any || !market.active_index[k].empty();
    if (any) prices = evplan::solve_bertrand(market, cfg.game.pricing).prices;
    const auto choices = evplan::evaluate_choices(market.choice, prices);

    evplan::QosConfig qc = cfg.game.qos;
    qc.seed = evplan::rng::derive(cfg.master_seed, "qos-cli");
    const auto qos = evplan::simulate_qos(ctx, market, choices, qc);

    ordered_json j;
    j["stage"] = args.stage.value_or(1);
    ordered_json rows = ordered_json::array();
    for (int k = 0; k < kProviders; ++k) {
        ordered_json row;
        row["provider"] = k + 1;
        row["delay_probability"] = qos[k].delay_probability;
        row["delay_se"] = qos[k].delay_se;
        row["coverage"] = qos[k].coverage;
        row["coverage_se"] = qos[k].coverage_se;
        row["attempts"] = qos[k].attempts;
        rows.push_back(row);
    }
    j["providers"] = rows;
    emit(j, args);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EV charging station planning toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string scenario_path;
    std::string ev_load;

    auto add_common = [&](CLI::App* cmd, bool with_stage) {
        cmd->add_option("--seed", args.seed, "override the master seed");
        cmd->add_option("--out", args.out, "output file or directory");
        cmd->add_option("--samples", args.samples, "override the opponent sample count");
        cmd->add_option("--format", args.format, "output format")
            ->check(CLI::IsMember({"json", "csv"}));
        if (with_stage) {
            cmd->add_option("--stage", args.stage, "stage to diagnose (1-based)");
            cmd->add_option("--policies", args.policies,
                            "placement bit strings, e.g. 10110,01011,11100");
        }
    };

    CLI::App* plan = app.add_subcommand("plan", "run the multi-stage placement plan");
    plan->add_option("scenario", scenario_path, "scenario JSON file")->required();
    add_common(plan, false);

    CLI::App* demand = app.add_subcommand("demand", "forecast station demand");
    demand->add_option("scenario", scenario_path, "scenario JSON file")->required();
    demand->add_option("--prices", args.prices, "retail prices p1,p2,p3 (default: equilibrium)");
    add_common(demand, true);

    CLI::App* equilibrium = app.add_subcommand("equilibrium", "solve Bertrand retail prices");
    equilibrium->add_option("scenario", scenario_path, "scenario JSON file")->required();
    add_common(equilibrium, true);

    CLI::App* power_flow = app.add_subcommand("power-flow", "solve the grid case");
    power_flow->add_option("case", scenario_path, "scenario or grid case JSON file")->required();
    power_flow->add_option("--ev-load", ev_load, "extra load, bus=MW[,bus=MW...]");
    add_common(power_flow, false);

    CLI::App* qos = app.add_subcommand("qos", "simulate quality of service");
    qos->add_option("scenario", scenario_path, "scenario JSON file")->required();
    add_common(qos, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (plan->parsed()) return cmd_plan(scenario_path, args);
        if (demand->parsed()) return cmd_demand(scenario_path, args);
        if (equilibrium->parsed()) return cmd_equilibrium(scenario_path, args);
        if (power_flow->parsed()) return cmd_power_flow(scenario_path, ev_load, args);
        if (qos->parsed()) return cmd_qos(scenario_path, args);
    } catch (const evplan::InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const evplan::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const evplan::Error& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
