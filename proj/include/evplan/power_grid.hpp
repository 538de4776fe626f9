#pragma once

#include <complex>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace evplan {

enum class BusKind { Slack, PV, PQ };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    double p_load_mw = 0.0;
    double q_load_mvar = 0.0;
    double shunt_gs_mw = 0.0;   ///< shunt conductance, MW at |v| = 1
    double shunt_bs_mvar = 0.0; ///< shunt susceptance, MVAr at |v| = 1
};

struct Branch {
    int from = 0;
    int to = 0;
    double r_pu = 0.0;
    double x_pu = 0.0;
    double b_charging_pu = 0.0; ///< total line charging susceptance
    double tap = 1.0;           ///< off-nominal tap ratio on the from side; 0 means 1
};

struct Generator {
    int bus = 0;
    double p_mw = 0.0;          ///< active setpoint (ignored at the slack bus)
    double v_setpoint_pu = 1.0; ///< voltage target for slack/PV buses
    double participation = 0.0; ///< share of extra load picked up on redispatch
    double q_min_mvar = -1e9;
    double q_max_mvar = 1e9;
};

struct PowerSystem {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;

    std::size_t index_of(int bus_id) const;
    std::size_t slack_index() const;
    /// Checks the single-slack rule, branch impedances, bus references, and
    /// participation factors. Throws ConfigError / SingularBranchError.
    void validate() const;
};

struct AdmittanceMatrix {
    Eigen::MatrixXcd Y; ///< bus admittance, ordered like PowerSystem::buses

    Eigen::MatrixXd conductance() const { return Y.real(); }
    Eigen::MatrixXd susceptance() const { return Y.imag(); }
};

/// Y_ii = sum of incident branch admittances plus shunts, Y_ik = -y_ik,
/// with off-nominal taps on the from side.
AdmittanceMatrix build_admittance(const PowerSystem& sys);

/// Extra per-bus load (on top of the base bus loads), in MW/MVAr.
struct ExtraLoad {
    std::map<int, double> p_mw;
    std::map<int, double> q_mvar;
};

struct PowerFlowOptions {
    double tolerance_pu = 1e-8;
    int max_iterations = 50;
    bool enforce_q_limits = false; ///< PV -> PQ switching when on
};

struct PowerFlowSolution {
    std::vector<double> vm_pu;   ///< per bus
    std::vector<double> va_rad;  ///< per bus, slack at 0
    std::vector<double> gen_p_mw;
    std::vector<double> gen_q_mvar;
    int iterations = 0;
    double residual_inf_pu = 0.0;
    std::vector<int> q_limit_violations; ///< generator indices, when not enforced
};

/// Newton-Raphson on the polar node power equations from a flat start.
/// Throws NonConvergenceError when the iteration budget runs out.
PowerFlowSolution solve_power_flow(const PowerSystem& sys, const ExtraLoad& extra = {},
                                   const PowerFlowOptions& opts = {});

/// Complex power entering each branch at both ends, MW/MVAr.
struct BranchFlow {
    std::complex<double> from_mva;
    std::complex<double> to_mva;
};

std::vector<BranchFlow> branch_flows(const PowerSystem& sys, const PowerFlowSolution& sol);

/// Total system loss in MW, re-derived from branch flows and shunts.
double total_loss_mw(const PowerSystem& sys, const PowerFlowSolution& sol);

struct DispatchPair {
    PowerFlowSolution base;
    PowerFlowSolution ev;
};

/// Solve the base case, then re-solve with the EV charging load added at PQ
/// buses and the matching active power spread over generators by their
/// participation factors (the slack absorbs the change in losses).
DispatchPair dispatch_with_ev(const PowerSystem& sys, const std::map<int, double>& ev_p_mw,
                              double power_factor = 0.98, const PowerFlowOptions& opts = {},
                              const PowerFlowSolution* base_solution = nullptr);

struct ImpactResult {
    std::vector<double> base_p_mw, ev_p_mw;
    std::vector<double> base_q_mvar, ev_q_mvar;
    double metric = 0.0; ///< squared 2-norm of the P and Q deviations
};

/// B = |P_base - P_ev|^2 + |Q_base - Q_ev|^2 over generators, in MW^2 +
/// MVAr^2 (or per-unit when requested).
ImpactResult impact_metric(const PowerFlowSolution& base, const PowerFlowSolution& ev,
                           bool per_unit = false, double base_mva = 100.0);

/// Load a grid case from JSON (buses, branches, generators).
PowerSystem load_power_system(const std::filesystem::path& file);

/// Per-bus locational marginal prices, currency/kWh.
std::map<int, double> load_lmp_table(const std::filesystem::path& file);

} // namespace evplan
