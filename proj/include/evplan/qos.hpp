#pragma once

#include <array>
#include <cstdint>

#include "evplan/context.hpp"
#include "evplan/demand.hpp"

namespace evplan {

struct QosConfig {
    int replications = 3;
    int trips_per_ev = 1;
    int station_capacity = 4;            ///< chargers per station
    double accessibility_radius_km = -1; ///< < 0 means "use d_th"
    double travel_speed_kmh = 40.0;
    double horizon_h = 24.0;             ///< departures drawn uniformly over this window
    std::uint64_t seed = 0;
};

struct QosEstimate {
    double delay_probability = 0.0; ///< delayed attempts / total attempts
    double coverage = 0.0;          ///< mean accessible stations along the route
    double delay_se = 0.0;
    double coverage_se = 0.0;
    long attempts = 0;
};

/// Seeded trip replay. Each EV makes `trips_per_ev` trips per replication,
/// picks a station (or home charging) from its choice distribution, and is
/// counted as delayed when every charger at the chosen station is busy on
/// arrival. Busy chargers come from an occupancy replay in arrival order;
/// delayed attempts do not occupy a charger.
std::array<QosEstimate, kProviders> simulate_qos(const PlanningContext& ctx,
                                                 const PlanningContext::Market& market,
                                                 const ChoiceMatrix& choices,
                                                 const QosConfig& cfg);

} // namespace evplan
