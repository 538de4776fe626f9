#include "evplan/power_grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "evplan/errors.hpp"
#include "json.hpp"

namespace evplan {

namespace {
using cplx = std::complex<double>;
}

std::size_t PowerSystem::index_of(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].id == bus_id) return i;
    throw ConfigError("unknown bus id " + std::to_string(bus_id));
}

std::size_t PowerSystem::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].kind == BusKind::Slack) return i;
    throw ConfigError("no slack bus");
}

void PowerSystem::validate() const {
    int slack_count = 0;
    for (const Bus& b : buses)
        if (b.kind == BusKind::Slack) ++slack_count;
    if (slack_count != 1)
        throw ConfigError("expected exactly one slack bus, found " + std::to_string(slack_count));
    for (const Branch& br : branches) {
        if (br.r_pu == 0.0 && br.x_pu == 0.0)
            throw SingularBranchError("branch " + std::to_string(br.from) + "-" +
                                      std::to_string(br.to) + " has zero impedance");
        index_of(br.from);
        index_of(br.to);
    }
    double total_participation = 0.0;
    for (const Generator& g : generators) {
        index_of(g.bus);
        if (g.participation < 0.0) throw ConfigError("negative participation factor");
        total_participation += g.participation;
    }
    if (!generators.empty() && std::abs(total_participation - 1.0) > 1e-9)
        throw ConfigError("participation factors must sum to 1");
    for (const Bus& b : buses) {
        if (b.kind == BusKind::PQ) continue;
        bool has_gen = std::any_of(generators.begin(), generators.end(),
                                   [&](const Generator& g) { return g.bus == b.id; });
        if (!has_gen)
            throw ConfigError("bus " + std::to_string(b.id) + " is slack/PV but has no generator");
    }
}

AdmittanceMatrix build_admittance(const PowerSystem& sys) {
    const std::size_t n = sys.buses.size();
    AdmittanceMatrix adm;
    adm.Y = Eigen::MatrixXcd::Zero(n, n);
    for (const Branch& br : sys.branches) {
        if (br.r_pu == 0.0 && br.x_pu == 0.0)
            throw SingularBranchError("branch " + std::to_string(br.from) + "-" +
                                      std::to_string(br.to) + " has zero impedance");
        const std::size_t i = sys.index_of(br.from);
        const std::size_t k = sys.index_of(br.to);
        const cplx y = 1.0 / cplx(br.r_pu, br.x_pu);
        const cplx ysh(0.0, br.b_charging_pu / 2.0);
        const double tap = br.tap == 0.0 ? 1.0 : br.tap;
        adm.Y(i, i) += (y + ysh) / (tap * tap);
        adm.Y(k, k) += y + ysh;
        adm.Y(i, k) -= y / tap;
        adm.Y(k, i) -= y / tap;
    }
    for (std::size_t i = 0; i < n; ++i)
        adm.Y(i, i) += cplx(sys.buses[i].shunt_gs_mw, sys.buses[i].shunt_bs_mvar) / sys.base_mva;
    return adm;
}

namespace {

struct NrSetup {
    Eigen::VectorXd p_spec; // p.u. net injection targets
    Eigen::VectorXd q_spec;
    std::vector<BusKind> kind;
    std::vector<double> v_target;
    std::vector<double> gen_setpoint_at_bus; // MW, summed over units
};

NrSetup make_setup(const PowerSystem& sys, const ExtraLoad& extra) {
    const std::size_t n = sys.buses.size();
    NrSetup s;
    s.p_spec = Eigen::VectorXd::Zero(n);
    s.q_spec = Eigen::VectorXd::Zero(n);
    s.kind.resize(n);
    s.v_target.assign(n, 1.0);
    s.gen_setpoint_at_bus.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Bus& b = sys.buses[i];
        s.kind[i] = b.kind;
        double p = -b.p_load_mw;
        double q = -b.q_load_mvar;
        if (auto it = extra.p_mw.find(b.id); it != extra.p_mw.end()) p -= it->second;
        if (auto it = extra.q_mvar.find(b.id); it != extra.q_mvar.end()) q -= it->second;
        s.p_spec[i] = p / sys.base_mva;
        s.q_spec[i] = q / sys.base_mva;
    }
    for (const Generator& g : sys.generators) {
        const std::size_t i = sys.index_of(g.bus);
        s.p_spec[i] += g.p_mw / sys.base_mva;
        s.gen_setpoint_at_bus[i] += g.p_mw;
        if (s.kind[i] != BusKind::PQ) s.v_target[i] = g.v_setpoint_pu;
    }
    return s;
}

void calc_injections(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B,
                     const Eigen::VectorXd& vm, const Eigen::VectorXd& va, Eigen::VectorXd& p,
                     Eigen::VectorXd& q) {
    const Eigen::Index n = vm.size();
    p.setZero(n);
    q.setZero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (G(i, k) == 0.0 && B(i, k) == 0.0) continue;
            const double phi = va[i] - va[k];
            const double c = std::cos(phi);
            const double sn = std::sin(phi);
            const double vv = vm[i] * vm[k];
            pi += vv * (G(i, k) * c + B(i, k) * sn);
            qi += vv * (G(i, k) * sn - B(i, k) * c);
        }
        p[i] = pi;
        q[i] = qi;
    }
}

PowerFlowSolution solve_once(const PowerSystem& sys, const NrSetup& setup,
                             const AdmittanceMatrix& adm, const PowerFlowOptions& opts) {
    const std::size_t n = sys.buses.size();
    const Eigen::MatrixXd G = adm.conductance();
    const Eigen::MatrixXd B = adm.susceptance();

    Eigen::VectorXd vm(n), va = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < n; ++i)
        vm[i] = setup.kind[i] == BusKind::PQ ? 1.0 : setup.v_target[i];

    // variable layout: angles of non-slack buses, then |v| of PQ buses
    std::vector<int> ang_pos(n, -1), mag_pos(n, -1);
    std::vector<std::size_t> ang_bus, mag_bus;
    for (std::size_t i = 0; i < n; ++i) {
        if (setup.kind[i] == BusKind::Slack) continue;
        ang_pos[i] = static_cast<int>(ang_bus.size());
        ang_bus.push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (setup.kind[i] != BusKind::PQ) continue;
        mag_pos[i] = static_cast<int>(mag_bus.size());
        mag_bus.push_back(i);
    }
    const std::size_t na = ang_bus.size();
    const std::size_t nm = mag_bus.size();

    Eigen::VectorXd p_calc(n), q_calc(n);
    auto mismatch = [&](Eigen::VectorXd& f) {
        calc_injections(G, B, vm, va, p_calc, q_calc);
        f.resize(na + nm);
        for (std::size_t a = 0; a < na; ++a) f[a] = setup.p_spec[ang_bus[a]] - p_calc[ang_bus[a]];
        for (std::size_t m = 0; m < nm; ++m)
            f[na + m] = setup.q_spec[mag_bus[m]] - q_calc[mag_bus[m]];
    };

    Eigen::VectorXd f;
    mismatch(f);
    int iter = 0;
    double norm = (na + nm) == 0 ? 0.0 : f.lpNorm<Eigen::Infinity>();
    while (norm > opts.tolerance_pu) {
        if (iter >= opts.max_iterations)
            throw NonConvergenceError("power flow did not converge in " +
                                      std::to_string(opts.max_iterations) + " iterations");
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(na + nm, na + nm);
        for (std::size_t r = 0; r < na; ++r) {
            const std::size_t i = ang_bus[r];
            for (std::size_t k = 0; k < n; ++k) {
                if (k != i && G(i, k) == 0.0 && B(i, k) == 0.0) continue;
                const double phi = va[i] - va[k];
                const double c = std::cos(phi), sn = std::sin(phi);
                if (ang_pos[k] >= 0) {
                    J(r, ang_pos[k]) = (k == i)
                                           ? -q_calc[i] - B(i, i) * vm[i] * vm[i]
                                           : vm[i] * vm[k] * (G(i, k) * sn - B(i, k) * c);
                }
                if (mag_pos[k] >= 0) {
                    J(r, na + mag_pos[k]) = (k == i)
                                                ? p_calc[i] / vm[i] + G(i, i) * vm[i]
                                                : vm[i] * (G(i, k) * c + B(i, k) * sn);
                }
            }
        }
        for (std::size_t r = 0; r < nm; ++r) {
            const std::size_t i = mag_bus[r];
            for (std::size_t k = 0; k < n; ++k) {
                if (k != i && G(i, k) == 0.0 && B(i, k) == 0.0) continue;
                const double phi = va[i] - va[k];
                const double c = std::cos(phi), sn = std::sin(phi);
                if (ang_pos[k] >= 0) {
                    J(na + r, ang_pos[k]) = (k == i)
                                                ? p_calc[i] - G(i, i) * vm[i] * vm[i]
                                                : -vm[i] * vm[k] * (G(i, k) * c + B(i, k) * sn);
                }
                if (mag_pos[k] >= 0) {
                    J(na + r, na + mag_pos[k]) = (k == i)
                                                     ? q_calc[i] / vm[i] - B(i, i) * vm[i]
                                                     : vm[i] * (G(i, k) * sn - B(i, k) * c);
                }
            }
        }
        Eigen::VectorXd dx = J.partialPivLu().solve(f);
        if (!dx.allFinite())
            throw NonConvergenceError("singular Jacobian in power flow iteration " +
                                      std::to_string(iter));
        for (std::size_t a = 0; a < na; ++a) va[ang_bus[a]] += dx[a];
        for (std::size_t m = 0; m < nm; ++m) vm[mag_bus[m]] += dx[na + m];
        ++iter;
        mismatch(f);
        norm = f.lpNorm<Eigen::Infinity>();
    }

    // reference the angles to the slack bus
    const double slack_va = va[sys.slack_index()];
    for (std::size_t i = 0; i < n; ++i) va[i] -= slack_va;

    calc_injections(G, B, vm, va, p_calc, q_calc);
    PowerFlowSolution sol;
    sol.vm_pu.assign(vm.data(), vm.data() + n);
    sol.va_rad.assign(va.data(), va.data() + n);
    sol.iterations = iter;
    sol.residual_inf_pu = norm;

    // Bus-level generation follows from the solved injections:
    //   gen_p(bus) = (p_calc - p_spec) * base + sum of unit setpoints
    //   gen_q(bus) = (q_calc - q_spec) * base
    // Non-slack units report their setpoints exactly; the slack residual and
    // the bus reactive output are split equally among the bus's units.
    const std::size_t ng = sys.generators.size();
    sol.gen_p_mw.assign(ng, 0.0);
    sol.gen_q_mvar.assign(ng, 0.0);
    std::vector<int> units_at_bus(n, 0);
    for (const Generator& g : sys.generators) units_at_bus[sys.index_of(g.bus)]++;
    for (std::size_t gi = 0; gi < ng; ++gi) {
        const Generator& g = sys.generators[gi];
        const std::size_t i = sys.index_of(g.bus);
        const int units = units_at_bus[i];
        if (setup.kind[i] == BusKind::Slack) {
            const double bus_p = (p_calc[i] - setup.p_spec[i]) * sys.base_mva +
                                 setup.gen_setpoint_at_bus[i];
            sol.gen_p_mw[gi] = bus_p / units;
        } else {
            sol.gen_p_mw[gi] = g.p_mw;
        }
        if (setup.kind[i] != BusKind::PQ) {
            const double bus_q = (q_calc[i] - setup.q_spec[i]) * sys.base_mva;
            sol.gen_q_mvar[gi] = bus_q / units;
        }
    }
    for (std::size_t gi = 0; gi < ng; ++gi) {
        const Generator& g = sys.generators[gi];
        if (sol.gen_q_mvar[gi] < g.q_min_mvar - 1e-9 || sol.gen_q_mvar[gi] > g.q_max_mvar + 1e-9)
            sol.q_limit_violations.push_back(static_cast<int>(gi));
    }
    return sol;
}

} // namespace

PowerFlowSolution solve_power_flow(const PowerSystem& sys, const ExtraLoad& extra,
                                   const PowerFlowOptions& opts) {
    sys.validate();
    const AdmittanceMatrix adm = build_admittance(sys);
    NrSetup setup = make_setup(sys, extra);
    PowerFlowSolution sol = solve_once(sys, setup, adm, opts);
    if (!opts.enforce_q_limits || sol.q_limit_violations.empty()) return sol;

    // PV -> PQ switching: clamp the violating bus's reactive output to the
    // offended limit and free its voltage magnitude.
    for (int round = 0; round < 10 && !sol.q_limit_violations.empty(); ++round) {
        bool switched = false;
        for (int gi : sol.q_limit_violations) {
            const Generator& g = sys.generators[gi];
            const std::size_t i = sys.index_of(g.bus);
            if (setup.kind[i] != BusKind::PV) continue;
            const double clamped =
                std::clamp(sol.gen_q_mvar[gi], g.q_min_mvar, g.q_max_mvar);
            setup.kind[i] = BusKind::PQ;
            setup.q_spec[i] += clamped / sys.base_mva;
            switched = true;
        }
        if (!switched) break;
        sol = solve_once(sys, setup, adm, opts);
    }
    return sol;
}

std::vector<BranchFlow> branch_flows(const PowerSystem& sys, const PowerFlowSolution& sol) {
    std::vector<BranchFlow> flows;
    flows.reserve(sys.branches.size());
    for (const Branch& br : sys.branches) {
        const std::size_t i = sys.index_of(br.from);
        const std::size_t k = sys.index_of(br.to);
        const cplx y = 1.0 / cplx(br.r_pu, br.x_pu);
        const cplx ysh(0.0, br.b_charging_pu / 2.0);
        const double tap = br.tap == 0.0 ? 1.0 : br.tap;
        const cplx vi = std::polar(sol.vm_pu[i], sol.va_rad[i]);
        const cplx vk = std::polar(sol.vm_pu[k], sol.va_rad[k]);
        const cplx i_from = (y + ysh) / (tap * tap) * vi - y / tap * vk;
        const cplx i_to = (y + ysh) * vk - y / tap * vi;
        BranchFlow bf;
        bf.from_mva = vi * std::conj(i_from) * sys.base_mva;
        bf.to_mva = vk * std::conj(i_to) * sys.base_mva;
        flows.push_back(bf);
    }
    return flows;
}

double total_loss_mw(const PowerSystem& sys, const PowerFlowSolution& sol) {
    double loss = 0.0;
    for (const BranchFlow& bf : branch_flows(sys, sol))
        loss += bf.from_mva.real() + bf.to_mva.real();
    for (std::size_t i = 0; i < sys.buses.size(); ++i)
        loss += sys.buses[i].shunt_gs_mw * sol.vm_pu[i] * sol.vm_pu[i];
    return loss;
}

DispatchPair dispatch_with_ev(const PowerSystem& sys, const std::map<int, double>& ev_p_mw,
                              double power_factor, const PowerFlowOptions& opts,
                              const PowerFlowSolution* base_solution) {
    sys.validate();
    if (!(power_factor > 0.0) || power_factor > 1.0)
        throw DomainError("power factor must lie in (0, 1]");
    double total_ev_mw = 0.0;
    for (const auto& [bus_id, p] : ev_p_mw) {
        if (p < 0.0) throw DomainError("EV load must be nonnegative");
        if (sys.buses[sys.index_of(bus_id)].kind != BusKind::PQ)
            throw DomainError("EV load must attach to PQ buses (bus " + std::to_string(bus_id) +
                              ")");
        total_ev_mw += p;
    }

    DispatchPair pair;
    pair.base = base_solution ? *base_solution : solve_power_flow(sys, {}, opts);

    const double tan_phi = std::tan(std::acos(power_factor));
    ExtraLoad extra;
    for (const auto& [bus_id, p] : ev_p_mw) {
        extra.p_mw[bus_id] = p;
        extra.q_mvar[bus_id] = p * tan_phi;
    }
    PowerSystem redispatched = sys;
    const std::size_t slack = sys.slack_index();
    for (Generator& g : redispatched.generators) {
        if (sys.index_of(g.bus) == slack) continue; // the slack output is residual anyway
        g.p_mw += g.participation * total_ev_mw;
    }
    pair.ev = solve_power_flow(redispatched, extra, opts);
    return pair;
}

ImpactResult impact_metric(const PowerFlowSolution& base, const PowerFlowSolution& ev,
                           bool per_unit, double base_mva) {
    if (base.gen_p_mw.size() != ev.gen_p_mw.size())
        throw DimensionMismatchError("generator sets differ between dispatches");
    ImpactResult r;
    r.base_p_mw = base.gen_p_mw;
    r.ev_p_mw = ev.gen_p_mw;
    r.base_q_mvar = base.gen_q_mvar;
    r.ev_q_mvar = ev.gen_q_mvar;
    const double scale = per_unit ? 1.0 / base_mva : 1.0;
    double b = 0.0;
    for (std::size_t i = 0; i < base.gen_p_mw.size(); ++i) {
        const double dp = (base.gen_p_mw[i] - ev.gen_p_mw[i]) * scale;
        const double dq = (base.gen_q_mvar[i] - ev.gen_q_mvar[i]) * scale;
        b += dp * dp + dq * dq;
    }
    r.metric = b;
    return r;
}

PowerSystem load_power_system(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open grid case file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }
    PowerSystem sys;
    try {
        sys.base_mva = j.value("base_mva", 100.0);
        for (const auto& bj : j.at("buses")) {
            Bus b;
            b.id = bj.at("id").get<int>();
            const std::string kind = bj.at("kind").get<std::string>();
            if (kind == "slack")
                b.kind = BusKind::Slack;
            else if (kind == "pv")
                b.kind = BusKind::PV;
            else if (kind == "pq")
                b.kind = BusKind::PQ;
            else
                throw ConfigError("unknown bus kind '" + kind + "'");
            b.p_load_mw = bj.value("p_load", 0.0);
            b.q_load_mvar = bj.value("q_load", 0.0);
            b.shunt_gs_mw = bj.value("gs", 0.0);
            b.shunt_bs_mvar = bj.value("bs", 0.0);
            sys.buses.push_back(b);
        }
        for (const auto& brj : j.at("branches")) {
            Branch br;
            br.from = brj.at("from").get<int>();
            br.to = brj.at("to").get<int>();
            br.r_pu = brj.at("r").get<double>();
            br.x_pu = brj.at("x").get<double>();
            br.b_charging_pu = brj.value("b", 0.0);
            br.tap = brj.value("tap", 1.0);
            sys.branches.push_back(br);
        }
        for (const auto& gj : j.at("generators")) {
            Generator g;
            g.bus = gj.at("bus").get<int>();
            g.p_mw = gj.value("p", 0.0);
            g.v_setpoint_pu = gj.value("v", 1.0);
            g.participation = gj.value("participation", -1.0);
            g.q_min_mvar = gj.value("q_min", -1e9);
            g.q_max_mvar = gj.value("q_max", 1e9);
            sys.generators.push_back(g);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad grid case schema in " + file.string() + ": " + e.what());
    }
    // default participation: uniform over non-slack units
    bool any_unset = std::any_of(sys.generators.begin(), sys.generators.end(),
                                 [](const Generator& g) { return g.participation < 0.0; });
    if (any_unset) {
        const std::size_t slack = sys.slack_index();
        std::size_t non_slack = 0;
        for (const Generator& g : sys.generators)
            if (sys.index_of(g.bus) != slack) ++non_slack;
        for (Generator& g : sys.generators) {
            if (non_slack == 0)
                g.participation = 1.0 / static_cast<double>(sys.generators.size());
            else
                g.participation =
                    sys.index_of(g.bus) == slack ? 0.0 : 1.0 / static_cast<double>(non_slack);
        }
    }
    try {
        sys.validate();
    } catch (const Error& e) {
        throw ConfigError("invalid grid case " + file.string() + ": " + e.what());
    }
    return sys;
}

std::map<int, double> load_lmp_table(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open LMP file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + file.string() + ": " + e.what());
    }
    std::map<int, double> lmp;
    try {
        for (const auto& row : j.at("lmp"))
            lmp[row.at("bus").get<int>()] = row.at("price").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad LMP schema in " + file.string() + ": " + e.what());
    }
    return lmp;
}

} // namespace evplan
