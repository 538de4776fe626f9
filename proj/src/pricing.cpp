#include "evplan/pricing.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "evplan/errors.hpp"
#include "evplan/rng.hpp"

namespace evplan {

std::array<ProviderOutcome, kProviders> provider_profit(
    const PlanningContext::Market& market, const Prices& prices,
    const std::array<double, kProviders>& placement_cost) {
    const ChoiceContext& ctx = market.choice;
    std::array<ProviderOutcome, kProviders> out{};
    const ChoiceMatrix choices = evaluate_choices(ctx, prices);
    const DemandForecast psi = aggregate_demand(ctx.population, choices);
    for (int k = 0; k < kProviders; ++k) {
        if (!ctx.provider_active(k)) {
            out[k].revenue = 0.0;
            out[k].profit = -placement_cost[k]; // zero for an empty policy
            continue;
        }
        double revenue = 0.0;
        for (std::size_t j = 0; j < psi.psi_kwh[k].size(); ++j)
            revenue += (*prices[k] - market.lmp[k][j]) * psi.psi_kwh[k][j];
        out[k].revenue = revenue;
        out[k].profit = revenue - placement_cost[k];
    }
    return out;
}

std::array<double, kProviders> foc_residual(const PlanningContext::Market& market,
                                            const Prices& prices) {
    const ChoiceContext& ctx = market.choice;
    const std::size_t N = ctx.population.size();
    const ChoiceMatrix choices = evaluate_choices(ctx, prices);

    std::array<double, kProviders> res{};
    for (int k = 0; k < kProviders; ++k) {
        if (!ctx.provider_active(k)) continue;
        const ChoiceGradient grad = demand_price_gradient(ctx, choices, k);
        double r = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const double q = ctx.population[n].demand_kwh;
            const auto& row = choices.prob[n][k];
            const auto& drow = grad.dprob[n][k];
            for (std::size_t j = 0; j < row.size(); ++j)
                r += q * (row[j] + (*prices[k] - market.lmp[k][j]) * drow[j]);
        }
        res[k] = r;
    }
    return res;
}

namespace {

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

struct ActiveSet {
    std::vector<int> providers; ///< indices of providers with stations
};

Prices assemble(const ActiveSet& act, const Eigen::VectorXd& x) {
    Prices p{};
    for (std::size_t i = 0; i < act.providers.size(); ++i) p[act.providers[i]] = x[i];
    return p;
}

Eigen::VectorXd residual_vector(const PlanningContext::Market& market, const ActiveSet& act,
                                const Eigen::VectorXd& x) {
    const auto res = foc_residual(market, assemble(act, x));
    Eigen::VectorXd f(act.providers.size());
    for (std::size_t i = 0; i < act.providers.size(); ++i) f[i] = res[act.providers[i]];
    return f;
}

/// One damped-Newton run from the given start; returns the final iterate.
struct NewtonResult {
    Eigen::VectorXd x;
    double norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

NewtonResult newton_run(const PlanningContext::Market& market, const ActiveSet& act,
                        Eigen::VectorXd x, const BertrandOptions& opts) {
    const auto dim = static_cast<Eigen::Index>(act.providers.size());
    Eigen::VectorXd f = residual_vector(market, act, x);
    double norm = f.lpNorm<Eigen::Infinity>();
    NewtonResult result;
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        if (norm <= opts.tolerance) {
            result.x = x;
            result.norm = norm;
            result.iterations = iter;
            result.converged = true;
            return result;
        }
        // central-difference Jacobian of the FOC system
        Eigen::MatrixXd J(dim, dim);
        for (Eigen::Index c = 0; c < dim; ++c) {
            const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
            Eigen::VectorXd xp = x, xm = x;
            xp[c] += h;
            xm[c] -= h;
            J.col(c) = (residual_vector(market, act, xp) - residual_vector(market, act, xm)) /
                       (2.0 * h);
        }
        Eigen::VectorXd step = J.partialPivLu().solve(f);
        if (!step.allFinite()) break;
        double damping = 1.0;
        bool improved = false;
        for (int halving = 0; halving <= opts.max_step_halvings; ++halving) {
            Eigen::VectorXd cand = x - damping * step;
            Eigen::VectorXd fc = residual_vector(market, act, cand);
            const double cn = fc.lpNorm<Eigen::Infinity>();
            if (cn < norm) {
                x = cand;
                f = fc;
                norm = cn;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if (!improved) break;
    }
    result.x = x;
    result.norm = norm;
    result.iterations = opts.max_iterations;
    result.converged = norm <= opts.tolerance;
    return result;
}

} // namespace

PriceSolution solve_bertrand(const PlanningContext::Market& market, const BertrandOptions& opts) {
    const ChoiceContext& ctx = market.choice;
    if (!(ctx.coeffs.beta < 0.0))
        throw UnboundedError("demand is not price sensitive (beta >= 0); no finite optimum");

    ActiveSet act;
    for (int k = 0; k < kProviders; ++k)
        if (ctx.provider_active(k)) act.providers.push_back(k);
    if (act.providers.empty()) return {};

    double mean_income = 0.0;
    for (const EvAgent& a : ctx.population) mean_income += a.income;
    mean_income = ctx.population.empty() ? 1.0 : mean_income / ctx.population.size();
    const double markup = mean_income / std::abs(ctx.coeffs.beta);

    const auto dim = static_cast<Eigen::Index>(act.providers.size());
    Eigen::VectorXd canonical(dim), x0(dim);
    bool warm = false;
    for (Eigen::Index i = 0; i < dim; ++i) {
        canonical[i] = mean(market.lmp[act.providers[i]]) + markup;
        const auto& given = opts.initial[act.providers[i]];
        x0[i] = given.has_value() ? *given : canonical[i];
        warm = warm || given.has_value();
    }

    NewtonResult best = newton_run(market, act, x0, opts);
    if (!best.converged && warm) {
        NewtonResult retry = newton_run(market, act, canonical, opts);
        if (retry.norm < best.norm) best = retry;
    }
    if (opts.multi_start && !best.converged) {
        rng::Engine eng(rng::derive(opts.seed, "bertrand-multistart"));
        for (int s = 0; s < 5 && !best.converged; ++s) {
            Eigen::VectorXd xs = x0;
            for (Eigen::Index i = 0; i < dim; ++i)
                xs[i] = std::max(0.0, x0[i] * eng.uniform(0.25, 4.0));
            NewtonResult run = newton_run(market, act, xs, opts);
            if (run.norm < best.norm) best = run;
        }
    }
    if (!best.converged)
        throw NonConvergenceError("Bertrand FOC solve stalled at residual " +
                                  std::to_string(best.norm));

    PriceSolution sol;
    sol.prices = assemble(act, best.x);
    sol.iterations = best.iterations;
    sol.residual_inf = best.norm;
    return sol;
}

} // namespace evplan
