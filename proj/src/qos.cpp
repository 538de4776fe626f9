#include "evplan/qos.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "evplan/errors.hpp"
#include "evplan/rng.hpp"

namespace evplan {

namespace {

struct Attempt {
    double arrival_h;
    int provider;
    int station; // column within the provider's active set
    double duration_h;
    std::size_t agent;
    int trip;
};

} // namespace

std::array<QosEstimate, kProviders> simulate_qos(const PlanningContext& ctx,
                                                 const PlanningContext::Market& market,
                                                 const ChoiceMatrix& choices,
                                                 const QosConfig& cfg) {
    if (cfg.replications < 1) throw DomainError("replications must be >= 1");
    if (cfg.station_capacity < 1) throw DomainError("station capacity must be >= 1");
    const auto& population = ctx.population();
    const std::size_t N = population.size();
    if (choices.prob.size() != N)
        throw DimensionMismatchError("choice matrix does not match the population");

    const double radius =
        cfg.accessibility_radius_km < 0.0 ? ctx.coefficients().d_th_km : cfg.accessibility_radius_km;

    std::array<QosEstimate, kProviders> out{};

    // Coverage: stations of provider k within the radius of any route node.
    // Purely geometric, so it is computed once, with spread over agents.
    for (int k = 0; k < kProviders; ++k) {
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            int count = 0;
            for (std::size_t j : market.active_index[k]) {
                for (NodeId nd : ctx.trip_route(n).nodes) {
                    if (ctx.distance_to_candidate(nd, j) <= radius) {
                        ++count;
                        break;
                    }
                }
            }
            sum += count;
            sumsq += static_cast<double>(count) * count;
        }
        if (N > 0) {
            out[k].coverage = sum / static_cast<double>(N);
            if (N > 1) {
                const double var =
                    (sumsq - sum * sum / static_cast<double>(N)) / static_cast<double>(N - 1);
                out[k].coverage_se = std::sqrt(std::max(0.0, var) / static_cast<double>(N));
            }
        }
    }

    // Delay: seeded occupancy replay per replication.
    std::array<std::vector<double>, kProviders> delay_by_rep;
    std::array<long, kProviders> attempts_total{};
    for (int rep = 0; rep < cfg.replications; ++rep) {
        rng::Engine eng(rng::derive(cfg.seed, static_cast<std::uint64_t>(rep)));
        std::vector<Attempt> attempts;
        attempts.reserve(N * static_cast<std::size_t>(cfg.trips_per_ev));
        for (std::size_t n = 0; n < N; ++n) {
            const EvAgent& agent = population[n];
            // flattened choice distribution: provider-major stations, then home
            for (int trip = 0; trip < cfg.trips_per_ev; ++trip) {
                const double depart = eng.uniform(0.0, cfg.horizon_h);
                double r = eng.uniform();
                int chosen_provider = -1, chosen_station = -1;
                double acc = 0.0;
                for (int k = 0; k < kProviders && chosen_provider < 0; ++k) {
                    const auto& row = choices.prob[n][k];
                    for (std::size_t j = 0; j < row.size(); ++j) {
                        acc += row[j];
                        if (r < acc) {
                            chosen_provider = k;
                            chosen_station = static_cast<int>(j);
                            break;
                        }
                    }
                }
                if (chosen_provider < 0) continue; // home charging, no attempt
                const std::size_t cand = market.active_index[chosen_provider][chosen_station];
                const double travel_h =
                    ctx.distance_to_candidate(agent.origin, cand) / cfg.travel_speed_kmh;
                const auto& level = ctx.coefficients().levels[chosen_provider];
                const double duration =
                    std::min(agent.demand_kwh / level.power_kw(), level.charge_time_h);
                attempts.push_back({depart + travel_h, chosen_provider, chosen_station, duration,
                                    n, trip});
            }
        }
        std::sort(attempts.begin(), attempts.end(), [](const Attempt& a, const Attempt& b) {
            if (a.arrival_h != b.arrival_h) return a.arrival_h < b.arrival_h;
            if (a.agent != b.agent) return a.agent < b.agent;
            return a.trip < b.trip;
        });

        // min-heap of session end times per active station
        std::array<std::vector<std::priority_queue<double, std::vector<double>, std::greater<>>>,
                   kProviders>
            busy;
        for (int k = 0; k < kProviders; ++k) busy[k].resize(market.active_index[k].size());

        std::array<long, kProviders> delayed{}, count{};
        for (const Attempt& at : attempts) {
            auto& heap = busy[at.provider][at.station];
            while (!heap.empty() && heap.top() <= at.arrival_h) heap.pop();
            ++count[at.provider];
            if (static_cast<int>(heap.size()) >= cfg.station_capacity) {
                ++delayed[at.provider];
            } else {
                heap.push(at.arrival_h + at.duration_h);
            }
        }
        for (int k = 0; k < kProviders; ++k) {
            attempts_total[k] += count[k];
            delay_by_rep[k].push_back(
                count[k] == 0 ? 0.0
                              : static_cast<double>(delayed[k]) / static_cast<double>(count[k]));
        }
    }

    for (int k = 0; k < kProviders; ++k) {
        const auto& reps = delay_by_rep[k];
        double mean = 0.0;
        for (double v : reps) mean += v;
        mean /= static_cast<double>(reps.size());
        out[k].delay_probability = mean;
        out[k].attempts = attempts_total[k];
        if (reps.size() > 1) {
            double var = 0.0;
            for (double v : reps) var += (v - mean) * (v - mean);
            var /= static_cast<double>(reps.size() - 1);
            out[k].delay_se = std::sqrt(var / static_cast<double>(reps.size()));
        }
    }
    return out;
}

} // namespace evplan
