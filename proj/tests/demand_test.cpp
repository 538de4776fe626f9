#include "doctest.h"

#include <cmath>
#include <random>

#include "evplan/demand.hpp"
#include "evplan/errors.hpp"
#include "evplan/rng.hpp"
#include "fixtures.hpp"

using namespace evplan;

namespace {

// Plain multinomial logit over the flattened alternatives; reference for the
// sigma = 1 reduction. Deliberately computed without log-sum-exp tricks.
std::vector<double> plain_logit(const std::vector<NestUtilities>& nests, bool outside) {
    std::vector<double> e;
    for (const auto& nest : nests)
        for (double v : nest.alt_utilities) e.push_back(std::exp(nest.nest_utility + v));
    double denom = outside ? 1.0 : 0.0;
    for (double x : e) denom += x;
    for (double& x : e) x /= denom;
    return e;
}

std::vector<double> flatten(const ChoiceProbabilities& p) {
    std::vector<double> out;
    for (const auto& nest : p.nest_alt)
        for (double v : nest) out.push_back(v);
    return out;
}

// Two-stage race over Gumbel draws: nest by W_t + sigma_t * I_t + G, then
// alternative by V_j / sigma_t + G. Counts choice frequencies.
struct GumbelCounts {
    std::vector<std::vector<long>> nest_alt;
    long outside = 0;
    long draws = 0;
};

GumbelCounts gumbel_race(const std::vector<NestUtilities>& nests, bool outside, long draws,
                         std::uint64_t seed) {
    rng::Engine eng(seed);
    GumbelCounts counts;
    counts.nest_alt.resize(nests.size());
    for (std::size_t k = 0; k < nests.size(); ++k)
        counts.nest_alt[k].assign(nests[k].alt_utilities.size(), 0);
    counts.draws = draws;

    std::vector<double> upper(nests.size());
    for (std::size_t k = 0; k < nests.size(); ++k) {
        double s = 0.0;
        for (double v : nests[k].alt_utilities) s += std::exp(v / nests[k].sigma);
        upper[k] = nests[k].nest_utility + nests[k].sigma * std::log(s);
    }
    for (long d = 0; d < draws; ++d) {
        int best_nest = -1;
        double best = -1e300;
        for (std::size_t k = 0; k < nests.size(); ++k) {
            const double score = upper[k] + eng.gumbel();
            if (score > best) {
                best = score;
                best_nest = static_cast<int>(k);
            }
        }
        if (outside) {
            const double score = eng.gumbel();
            if (score > best) best_nest = -1;
        }
        if (best_nest < 0) {
            ++counts.outside;
            continue;
        }
        const auto& nest = nests[best_nest];
        int best_alt = 0;
        double best_v = -1e300;
        for (std::size_t j = 0; j < nest.alt_utilities.size(); ++j) {
            const double score = nest.alt_utilities[j] / nest.sigma + eng.gumbel();
            if (score > best_v) {
                best_v = score;
                best_alt = static_cast<int>(j);
            }
        }
        ++counts.nest_alt[best_nest][best_alt];
    }
    return counts;
}

std::vector<NestUtilities> random_instance(std::mt19937_64& gen, int max_nests = 3,
                                           int max_alts = 10, double u_lo = -20.0,
                                           double u_hi = 20.0) {
    std::uniform_int_distribution<int> n_nests(1, max_nests);
    std::uniform_int_distribution<int> n_alts(1, max_alts);
    std::uniform_real_distribution<double> util(u_lo, u_hi);
    std::uniform_real_distribution<double> sig(0.05, 1.0);
    std::vector<NestUtilities> nests(n_nests(gen));
    for (auto& nest : nests) {
        nest.sigma = sig(gen);
        nest.nest_utility = util(gen);
        nest.alt_utilities.resize(n_alts(gen));
        for (double& v : nest.alt_utilities) v = util(gen);
    }
    return nests;
}

double total_probability(const ChoiceProbabilities& p) {
    double s = p.outside;
    for (const auto& nest : p.nest_alt)
        for (double v : nest) s += v;
    return s;
}

ChoiceContext gradient_context() {
    ChoiceContext ctx;
    ctx.coeffs = fixtures::basic_coefficients();
    ctx.population = {fixtures::agent(0, 40.0, 1, 2, 12.0), fixtures::agent(1, 70.0, 1, 2, 30.0)};
    ctx.station_util.resize(2);
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> util(-1.5, 1.5);
    for (auto& per_agent : ctx.station_util) {
        per_agent[0] = {util(gen), util(gen)};
        per_agent[1] = {util(gen)};
        per_agent[2] = {util(gen), util(gen), util(gen)};
    }
    return ctx;
}

} // namespace

TEST_CASE("provider utility") {
    ChoiceCoefficients c = fixtures::basic_coefficients();
    EvAgent a = fixtures::agent(0, 5.0, 1, 2, 10.0);

    SUBCASE("direct substitution") {
        c.alpha = 1.0;
        c.beta = -1.0;
        LevelAttributes level{2, 2.0, 224.0, 32.0};
        CHECK(provider_utility(level, 10.0, a, c) == doctest::Approx(-1.5));
    }
    SUBCASE("zero coefficients give zero") {
        c.alpha = 0.0;
        c.beta = 0.0;
        CHECK(provider_utility(c.levels[0], 3.0, a, c) == 0.0);
    }
    SUBCASE("invalid domain") {
        LevelAttributes bad{1, 0.0, 120.0, 12.0};
        CHECK_THROWS_AS(provider_utility(bad, 1.0, a, c), DomainError);
        EvAgent broke = fixtures::agent(1, 0.0, 1, 2, 10.0);
        CHECK_THROWS_AS(provider_utility(c.levels[0], 1.0, broke, c), DomainError);
    }
}

TEST_CASE("station utility") {
    NestCoefficients n;
    SUBCASE("all-zero observables") {
        CHECK(station_utility({}, n) == 0.0);
    }
    SUBCASE("unit weights, full amenities") {
        n.eta = n.gamma = n.lambda = n.delta = 1.0;
        StationObservables obs{0.0, true, true, true, true};
        CHECK(station_utility(obs, n) == doctest::Approx(4.0));
    }
    SUBCASE("detour weight") {
        n.mu = -0.5;
        StationObservables obs{2.0, false, false, false, false};
        CHECK(station_utility(obs, n) == doctest::Approx(-1.0));
    }
}

TEST_CASE("equal utilities split a single nest evenly") {
    NestUtilities nest;
    nest.sigma = 1.0;
    nest.nest_utility = 0.7;
    nest.alt_utilities = {1.3, 1.3, 1.3, 1.3};
    auto p = choice_probabilities(std::vector{nest}, false);
    for (double v : p.nest_alt[0]) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.outside == 0.0);
}

TEST_CASE("sigma = 1 reduces to the multinomial logit") {
    std::mt19937_64 gen(101);
    for (int trial = 0; trial < 200; ++trial) {
        auto nests = random_instance(gen, 3, 6, -8.0, 8.0);
        for (auto& nest : nests) nest.sigma = 1.0;
        const bool outside = trial % 2 == 0;
        auto got = flatten(choice_probabilities(nests, outside));
        auto want = plain_logit(nests, outside);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("probabilities normalize to one") {
    std::mt19937_64 gen(202);
    for (int trial = 0; trial < 500; ++trial) {
        auto nests = random_instance(gen);
        auto p = choice_probabilities(nests, trial % 2 == 0);
        CHECK(total_probability(p) == doctest::Approx(1.0).epsilon(1e-12));
        for (const auto& nest : p.nest_alt)
            for (double v : nest) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0 + 1e-12);
            }
    }
}

TEST_CASE("translation invariance") {
    std::mt19937_64 gen(303);
    for (int trial = 0; trial < 100; ++trial) {
        auto nests = random_instance(gen, 3, 5, -10.0, 10.0);
        auto base = choice_probabilities(nests, false);
        const double shift = 3.7;
        auto shifted_nests = nests;
        for (auto& nest : shifted_nests) nest.nest_utility += shift;
        auto shifted = choice_probabilities(shifted_nests, false);
        auto a = flatten(base);
        auto b = flatten(shifted);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-11));
    }
}

TEST_CASE("the outside good behaves as a one-alternative nest of utility zero") {
    std::mt19937_64 gen(304);
    for (int trial = 0; trial < 50; ++trial) {
        auto nests = random_instance(gen, 2, 4, -6.0, 6.0);
        auto with_flag = choice_probabilities(nests, true);

        auto explicit_nests = nests;
        NestUtilities home;
        home.sigma = 1.0;
        home.nest_utility = 0.0;
        home.alt_utilities = {0.0};
        explicit_nests.push_back(home);
        auto with_nest = choice_probabilities(explicit_nests, false);

        auto a = flatten(with_flag);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(flatten(with_nest)[i]).epsilon(1e-12));
        CHECK(with_flag.outside ==
              doctest::Approx(with_nest.nest_alt.back()[0]).epsilon(1e-12));

        // shifting every nest including the explicit home nest changes nothing
        const double shift = 2.1;
        for (auto& nest : explicit_nests) nest.nest_utility += shift;
        auto shifted = choice_probabilities(explicit_nests, false);
        auto c = flatten(with_nest);
        auto d = flatten(shifted);
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i] == doctest::Approx(d[i]).epsilon(1e-11));
    }
}

TEST_CASE("log-domain evaluation stays finite for huge utilities") {
    std::mt19937_64 gen(404);
    for (double magnitude : {400.0, 500.0}) {
        std::vector<NestUtilities> nests(2);
        for (auto& nest : nests) {
            nest.sigma = 0.3;
            nest.nest_utility = magnitude;
            nest.alt_utilities = {magnitude, -magnitude, magnitude / 2};
        }
        auto p = choice_probabilities(nests, true);
        CHECK(std::isfinite(total_probability(p)));
        CHECK(total_probability(p) == doctest::Approx(1.0).epsilon(1e-12));
        (void)gen;
    }
}

TEST_CASE("empty nest and bad sigma are rejected") {
    NestUtilities nest;
    nest.alt_utilities = {};
    CHECK_THROWS_AS(choice_probabilities(std::vector{nest}, true), EmptyNestError);
    nest.alt_utilities = {1.0};
    nest.sigma = 1.5;
    CHECK_THROWS_AS(choice_probabilities(std::vector{nest}, true), DomainError);
    nest.sigma = 0.0;
    CHECK_THROWS_AS(choice_probabilities(std::vector{nest}, true), DomainError);
}

TEST_CASE("small instance matches the Gumbel race") {
    // 2 nests x 2 alternatives, sigma (0.5, 0.8), utilities (1,2 | 0,1)
    std::vector<NestUtilities> nests(2);
    nests[0].sigma = 0.5;
    nests[0].nest_utility = 0.0;
    nests[0].alt_utilities = {1.0, 2.0};
    nests[1].sigma = 0.8;
    nests[1].nest_utility = 0.0;
    nests[1].alt_utilities = {0.0, 1.0};

    const long draws = 200000;
    auto p = choice_probabilities(nests, true);
    auto counts = gumbel_race(nests, true, draws, 9001);
    int within = 0, cells = 0;
    auto check_cell = [&](double prob, long count) {
        const double se = std::sqrt(prob * (1.0 - prob) / draws);
        const double freq = static_cast<double>(count) / draws;
        ++cells;
        if (std::abs(freq - prob) <= 3.0 * se) ++within;
    };
    for (std::size_t k = 0; k < nests.size(); ++k)
        for (std::size_t j = 0; j < nests[k].alt_utilities.size(); ++j)
            check_cell(p.nest_alt[k][j], counts.nest_alt[k][j]);
    check_cell(p.outside, counts.outside);
    CHECK(within >= cells - 1); // allow a single 3-sigma outlier
}

TEST_CASE("decomposition") {
    SUBCASE("single nest without outside gives nest probability one") {
        NestUtilities nest;
        nest.sigma = 0.6;
        nest.nest_utility = 0.4;
        nest.alt_utilities = {0.2, 0.9, -0.5};
        auto d = choice_probabilities_decomposed(std::vector{nest}, false);
        CHECK(d.nest_prob[0] == doctest::Approx(1.0).epsilon(1e-12));
        double manual = 0.0;
        for (double v : nest.alt_utilities) manual += std::exp(v / nest.sigma);
        CHECK(d.inclusive_value[0] == doctest::Approx(std::log(manual)));
        for (std::size_t j = 0; j < nest.alt_utilities.size(); ++j)
            CHECK(d.within_nest[0][j] ==
                  doctest::Approx(std::exp(nest.alt_utilities[j] / nest.sigma) / manual));
    }
    SUBCASE("identical nests receive equal shares") {
        NestUtilities nest;
        nest.sigma = 0.7;
        nest.nest_utility = 0.3;
        nest.alt_utilities = {0.1, 0.5};
        std::vector<NestUtilities> nests{nest, nest, nest};
        auto d = choice_probabilities_decomposed(nests, false);
        CHECK(d.nest_prob[0] == doctest::Approx(d.nest_prob[1]).epsilon(1e-12));
        CHECK(d.nest_prob[1] == doctest::Approx(d.nest_prob[2]).epsilon(1e-12));
    }
    SUBCASE("product reproduces the direct formula") {
        std::mt19937_64 gen(505);
        for (int trial = 0; trial < 200; ++trial) {
            auto nests = random_instance(gen, 3, 5, -15.0, 15.0);
            const bool outside = trial % 2 == 0;
            auto direct = choice_probabilities(nests, outside);
            auto d = choice_probabilities_decomposed(nests, outside);
            for (std::size_t k = 0; k < nests.size(); ++k)
                for (std::size_t j = 0; j < nests[k].alt_utilities.size(); ++j)
                    CHECK(direct.nest_alt[k][j] ==
                          doctest::Approx(d.nest_prob[k] * d.within_nest[k][j]).epsilon(1e-12));
            CHECK(direct.outside == doctest::Approx(d.outside).epsilon(1e-12));
        }
    }
}

TEST_CASE("price gradient") {
    ChoiceContext ctx = gradient_context();
    Prices prices{0.45, 0.50, 0.70};

    SUBCASE("beta = 0 kills every gradient") {
        ChoiceContext flat = ctx;
        flat.coeffs.beta = 0.0;
        for (int k = 0; k < kProviders; ++k) {
            auto g = demand_price_gradient(flat, prices, k);
            for (const auto& per_agent : g.dprob)
                for (const auto& row : per_agent)
                    for (double v : row) CHECK(v == 0.0);
        }
    }
    SUBCASE("gradients sum to zero per agent") {
        for (int k = 0; k < kProviders; ++k) {
            auto g = demand_price_gradient(ctx, prices, k);
            for (std::size_t n = 0; n < ctx.population.size(); ++n) {
                double s = g.doutside[n];
                for (const auto& row : g.dprob[n])
                    for (double v : row) s += v;
                CHECK(s == doctest::Approx(0.0).epsilon(1e-14));
            }
        }
    }
    SUBCASE("matches central finite differences") {
        const double h = 1e-6;
        for (int k = 0; k < kProviders; ++k) {
            auto g = demand_price_gradient(ctx, prices, k);
            Prices up = prices, dn = prices;
            *up[k] += h;
            *dn[k] -= h;
            auto pu = evaluate_choices(ctx, up);
            auto pd = evaluate_choices(ctx, dn);
            for (std::size_t n = 0; n < ctx.population.size(); ++n) {
                for (int t = 0; t < kProviders; ++t) {
                    for (std::size_t j = 0; j < g.dprob[n][t].size(); ++j) {
                        const double fd = (pu.prob[n][t][j] - pd.prob[n][t][j]) / (2.0 * h);
                        const double scale = std::max(std::abs(fd), 1e-8);
                        CHECK(std::abs(g.dprob[n][t][j] - fd) / scale <= 1e-6);
                    }
                }
                const double fd0 = (pu.outside[n] - pd.outside[n]) / (2.0 * h);
                CHECK(g.doutside[n] == doctest::Approx(fd0).epsilon(1e-5));
            }
        }
    }
    SUBCASE("raising a price shifts share away from that nest") {
        ChoiceMatrix before = evaluate_choices(ctx, prices);
        Prices bumped = prices;
        *bumped[1] += 0.2;
        ChoiceMatrix after = evaluate_choices(ctx, bumped);
        for (std::size_t n = 0; n < ctx.population.size(); ++n) {
            auto share = [&](const ChoiceMatrix& m, int k) {
                double s = 0.0;
                for (double v : m.prob[n][k]) s += v;
                return s;
            };
            CHECK(share(after, 1) < share(before, 1));
            CHECK(share(after, 0) >= share(before, 0));
            CHECK(share(after, 2) >= share(before, 2));
            CHECK(after.outside[n] >= before.outside[n]);
        }
    }
}

TEST_CASE("aggregate demand") {
    SUBCASE("single agent, certain choice") {
        std::vector<EvAgent> pop{fixtures::agent(0, 50.0, 1, 2, 10.0)};
        ChoiceMatrix m;
        m.prob.resize(1);
        m.prob[0][0] = {1.0};
        m.outside = {0.0};
        auto f = aggregate_demand(pop, m);
        CHECK(f.psi_kwh[0][0] == doctest::Approx(10.0));
    }
    SUBCASE("empty population") {
        auto f = aggregate_demand(std::vector<EvAgent>{}, ChoiceMatrix{});
        for (const auto& row : f.psi_kwh) CHECK(row.empty());
    }
    SUBCASE("two agents") {
        std::vector<EvAgent> pop{fixtures::agent(0, 50.0, 1, 2, 5.0),
                                 fixtures::agent(1, 50.0, 1, 2, 15.0)};
        ChoiceMatrix m;
        m.prob.resize(2);
        m.prob[0][0] = {0.2};
        m.prob[1][0] = {0.4};
        m.outside = {0.8, 0.6};
        auto f = aggregate_demand(pop, m);
        CHECK(f.psi_kwh[0][0] == doctest::Approx(7.0));
    }
    SUBCASE("row mismatch is rejected") {
        std::vector<EvAgent> pop{fixtures::agent(0, 50.0, 1, 2, 5.0)};
        CHECK_THROWS_AS(aggregate_demand(pop, ChoiceMatrix{}), DimensionMismatchError);
    }
}

TEST_CASE("coefficient validation") {
    ChoiceCoefficients c = fixtures::basic_coefficients();
    c.nests[1].sigma = 1.2;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c = fixtures::basic_coefficients();
    c.d_th_km = -1.0;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c = fixtures::basic_coefficients();
    c.q_min_kwh = 50.0;
    CHECK_THROWS_AS(c.validate(), DomainError);
}
