#include "doctest.h"

#include <cmath>

#include "evplan/errors.hpp"
#include "evplan/pricing.hpp"
#include "fixtures.hpp"

using namespace evplan;

namespace {

/// One provider, one station, deterministic demand psi = q (no outside good).
PlanningContext::Market certain_market(PlanningContext& ctx, double q) {
    std::vector<EvAgent> pop{fixtures::agent(0, 50.0, 1, 4, q)};
    ctx.set_population(pop);
    PolicyTriple policies{PlacementPolicy::from_mask(1, ctx.candidate_count()),
                          PlacementPolicy::zeros(ctx.candidate_count()),
                          PlacementPolicy::zeros(ctx.candidate_count())};
    auto market = ctx.make_market(policies);
    market.choice.include_outside = false;
    return market;
}

double profit_of(const PlanningContext::Market& market, int k, double price) {
    Prices prices{};
    prices[k] = price;
    return provider_profit(market, prices, {})[k].revenue;
}

} // namespace

TEST_CASE("provider profit") {
    PlanningContext ctx = fixtures::small_context(2, 4);

    SUBCASE("empty policies earn nothing") {
        PolicyTriple empty{PlacementPolicy::zeros(2), PlacementPolicy::zeros(2),
                           PlacementPolicy::zeros(2)};
        auto market = ctx.make_market(empty);
        auto out = provider_profit(market, {}, {});
        for (const auto& o : out) {
            CHECK(o.revenue == 0.0);
            CHECK(o.profit == 0.0);
        }
    }
    SUBCASE("one certain station: margin times demand") {
        PlanningContext solo = fixtures::small_context(1, 1);
        auto market = certain_market(solo, 100.0);
        // single alternative and no outside good: choice probability is 1
        Prices prices{};
        prices[0] = 0.5;
        auto out = provider_profit(market, prices, {10.0, 0.0, 0.0});
        CHECK(out[0].revenue == doctest::Approx((0.5 - 0.2) * 100.0));
        CHECK(out[0].profit == doctest::Approx(30.0 - 10.0));
    }
    SUBCASE("price at cost earns zero revenue") {
        PlanningContext solo = fixtures::small_context(1, 1);
        auto market = certain_market(solo, 100.0);
        Prices prices{};
        prices[0] = 0.2; // the candidate sits on bus 2 whose LMP is 0.2
        auto out = provider_profit(market, prices, {7.0, 0.0, 0.0});
        CHECK(out[0].revenue == doctest::Approx(0.0));
        CHECK(out[0].profit == doctest::Approx(-7.0));
    }
}

TEST_CASE("FOC residual matches the profit derivative") {
    PlanningContext ctx = fixtures::small_context(2, 6);
    auto market = ctx.make_market(fixtures::all_on(ctx));
    Prices prices{0.45, 0.50, 0.62};
    auto res = foc_residual(market, prices);
    const double h = 1e-6;
    for (int k = 0; k < kProviders; ++k) {
        Prices up = prices, dn = prices;
        *up[k] += h;
        *dn[k] -= h;
        const double fd =
            (provider_profit(market, up, {})[k].revenue - provider_profit(market, dn, {})[k].revenue) /
            (2.0 * h);
        const double scale = std::max(1.0, std::abs(fd));
        CHECK(std::abs(res[k] - fd) / scale <= 1e-6);
    }
}

TEST_CASE("price-insensitive demand has no equilibrium") {
    ChoiceCoefficients c = fixtures::basic_coefficients();
    c.beta = 0.0;
    PlanningContext ctx = fixtures::small_context(2, 4, c);
    auto market = ctx.make_market(fixtures::all_on(ctx));
    CHECK_THROWS_AS(solve_bertrand(market), UnboundedError);

    // the residual itself stays positive for any finite price
    for (double p : {0.3, 1.0, 10.0, 100.0}) {
        auto res = foc_residual(market, {p, p, p});
        for (int k = 0; k < kProviders; ++k) CHECK(res[k] > 0.0);
    }
}

TEST_CASE("equilibrium residual meets the tolerance") {
    PlanningContext ctx = fixtures::small_context(2, 6);
    auto market = ctx.make_market(fixtures::all_on(ctx));
    auto sol = solve_bertrand(market);
    CHECK(sol.residual_inf <= 1e-8);
    auto res = foc_residual(market, sol.prices);
    for (int k = 0; k < kProviders; ++k) CHECK(std::abs(res[k]) <= 1e-8);
    // no below-cost pricing
    for (int k = 0; k < kProviders; ++k) CHECK(*sol.prices[k] >= 0.2 - 1e-12);
}

TEST_CASE("symmetric providers settle on the same price") {
    ChoiceCoefficients c = fixtures::basic_coefficients();
    // identical charging levels and tastes across the three services
    for (auto& lv : c.levels) lv = {1, 4.0, 224.0, 32.0};
    for (auto& n : c.nests) {
        n.sigma = 0.7;
        n.mu = -0.4;
        n.eta = 0.3;
        n.gamma = n.lambda = n.delta = 0.0;
    }
    RoadNetwork net = fixtures::line_network({1.0, 1.0, 1.0});
    std::vector<Candidate> cands;
    for (int j = 0; j < 3; ++j) {
        Candidate cd;
        cd.id = j + 1;
        cd.node = 2;
        cd.bus = 2;
        cands.push_back(cd);
    }
    std::map<int, double> lmp{{1, 0.2}, {2, 0.2}};
    PlanningContext ctx(std::move(net), fixtures::two_bus_grid(), std::move(cands), c, lmp);
    std::vector<EvAgent> pop;
    for (int n = 0; n < 5; ++n) pop.push_back(fixtures::agent(n, 50.0, 1, 4, 20.0));
    ctx.set_population(pop);

    // provider k gets exactly one station, all identical
    PolicyTriple policies{PlacementPolicy::from_mask(1, 3), PlacementPolicy::from_mask(2, 3),
                          PlacementPolicy::from_mask(4, 3)};
    auto market = ctx.make_market(policies);
    auto sol = solve_bertrand(market);
    CHECK(*sol.prices[0] == doctest::Approx(*sol.prices[1]).epsilon(1e-8));
    CHECK(*sol.prices[1] == doctest::Approx(*sol.prices[2]).epsilon(1e-8));
}

TEST_CASE("single provider matches a grid search") {
    // low incomes keep the optimal markup well inside the search window
    PlanningContext solo = fixtures::small_context(1, 4);
    std::vector<EvAgent> pop;
    for (int n = 0; n < 4; ++n)
        pop.push_back(fixtures::agent(n, 3.0 + 0.5 * n, 1 + n % 2, 4, 20.0));
    solo.set_population(pop);
    PolicyTriple policies{PlacementPolicy::from_mask(1, 1), PlacementPolicy::zeros(1),
                          PlacementPolicy::zeros(1)};
    auto market = solo.make_market(policies);
    auto sol = solve_bertrand(market);

    const double c = 0.2;
    double best_p = c, best_profit = -1e300;
    for (double p = c; p <= c + 5.0 + 1e-12; p += 1e-4) {
        const double profit = profit_of(market, 0, p);
        if (profit > best_profit) {
            best_profit = profit;
            best_p = p;
        }
    }
    CHECK(std::abs(*sol.prices[0] - best_p) <= 2e-4);
}

TEST_CASE("a cost shift weakly raises the equilibrium price") {
    PlanningContext ctx = fixtures::small_context(2, 6);
    auto market = ctx.make_market(fixtures::all_on(ctx));
    auto base = solve_bertrand(market);
    for (double dc : {0.05, 0.10, 0.20}) {
        auto shifted = market;
        for (double& c : shifted.lmp[1]) c += dc;
        auto sol = solve_bertrand(shifted);
        CHECK(*sol.prices[1] >= *base.prices[1] - 1e-9);
    }
}

TEST_CASE("inactive provider is excluded and reported without a price") {
    PlanningContext ctx = fixtures::small_context(2, 4);
    PolicyTriple policies{PlacementPolicy::from_mask(3, 2), PlacementPolicy::zeros(2),
                          PlacementPolicy::from_mask(1, 2)};
    auto market = ctx.make_market(policies);
    auto sol = solve_bertrand(market);
    CHECK(sol.prices[0].has_value());
    CHECK_FALSE(sol.prices[1].has_value());
    CHECK(sol.prices[2].has_value());
}

TEST_CASE("equilibrium is invariant under station relabeling") {
    PlanningContext ctx = fixtures::small_context(2, 6);
    auto market = ctx.make_market(fixtures::all_on(ctx));
    auto sol = solve_bertrand(market);

    // swap the two stations of every provider (columns and costs together)
    auto swapped = market;
    for (int k = 0; k < kProviders; ++k) {
        std::swap(swapped.lmp[k][0], swapped.lmp[k][1]);
        std::swap(swapped.active_index[k][0], swapped.active_index[k][1]);
        for (auto& per_agent : swapped.choice.station_util)
            std::swap(per_agent[k][0], per_agent[k][1]);
    }
    auto sol2 = solve_bertrand(swapped);
    for (int k = 0; k < kProviders; ++k)
        CHECK(*sol.prices[k] == doctest::Approx(*sol2.prices[k]).epsilon(1e-9));
}
