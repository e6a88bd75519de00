//! Economic-dispatch clearing: build the dispatch linear program for one
//! market interval, solve it, and extract locational marginal prices from
//! the dual values of the optimal basis.
//!
//! The quadratic generator costs are piecewise-linearized into segments
//! with nondecreasing marginal costs, so the dispatch is an LP over
//! segment outputs plus one bounded flow variable per line:
//!
//! ```text
//!   minimize    sum_gj c_gj p_gj
//!   subject to  sum_gj p_gj = total demand            (hub price dual)
//!               flow_l(p) - f_l = ptdf_l . demand     (line dual)
//!               0 <= p_gj <= width_gj,  -limit <= f_l <= limit
//! ```
//!
//! Each bus price is the hub price plus the congestion component implied
//! by the line duals; the finite-difference check in
//! [`lmp_sensitivity_check`] ties the formula back to the objective's
//! demand sensitivity.

pub mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Network;
use simplex::{LinearProgram, SimplexError};

/// Feasibility and complementarity tolerance, in MW / $ units.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("aggregate bid is negative ({total:.6} MWh): net supply exceeds demand")]
    NegativeAggregateBid { total: f64 },
    #[error("bid vector has {got} entries but the network has {expected} buses")]
    BidLength { got: usize, expected: usize },
    #[error("non-finite bid at bus {0}")]
    BidNotFinite(usize),
    #[error("dispatch is infeasible: {0}")]
    Infeasible(String),
    #[error("internal error: dispatch LP reported unbounded (costs are nonnegative and variables bounded)")]
    Unbounded,
    #[error("degenerate point: one-sided objective differences disagree ({plus:.6} vs {minus:.6})")]
    Degenerate { plus: f64, minus: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Per-bus net demand for one interval, MWh. Individual entries may be
/// negative (net supply); the system-wide sum must be nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidVector {
    demand: Vec<f64>,
}

impl BidVector {
    pub fn new(demand: Vec<f64>) -> Result<Self, DispatchError> {
        for (m, d) in demand.iter().enumerate() {
            if !d.is_finite() {
                return Err(DispatchError::BidNotFinite(m));
            }
        }
        let total: f64 = demand.iter().sum();
        if total < -1e-9 {
            return Err(DispatchError::NegativeAggregateBid { total });
        }
        Ok(Self { demand })
    }

    pub fn values(&self) -> &[f64] {
        &self.demand
    }

    pub fn total(&self) -> f64 {
        self.demand.iter().sum()
    }
}

/// One linear segment of a generator's cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub width: f64,
    pub marginal_cost: f64,
}

/// Piecewise-linear costs: per generator, equal-width segments with
/// nondecreasing marginal costs over the interval's effective capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCost {
    segments: Vec<Vec<Segment>>,
}

impl PiecewiseCost {
    pub fn per_generator(&self) -> &[Vec<Segment>] {
        &self.segments
    }

    pub fn capacity(&self, g: usize) -> f64 {
        self.segments[g].iter().map(|s| s.width).sum()
    }

    pub fn total_capacity(&self) -> f64 {
        (0..self.segments.len()).map(|g| self.capacity(g)).sum()
    }

    /// Marginal cost of the first (cheapest) unit of generator `g`.
    pub fn first_marginal(&self, g: usize) -> f64 {
        self.segments[g].first().map(|s| s.marginal_cost).unwrap_or(0.0)
    }

    /// Marginal cost of the last unit before the capacity bound.
    pub fn last_marginal(&self, g: usize) -> f64 {
        self.segments[g].last().map(|s| s.marginal_cost).unwrap_or(0.0)
    }
}

/// Split every generator's quadratic cost into `segments` equal-width
/// linear pieces over its effective capacity for the interval. Segment
/// marginal cost is the derivative at the segment midpoint; convexity of
/// the quadratic makes the marginals nondecreasing.
pub fn linearize_costs(
    network: &Network,
    capacities: &[f64],
    segments: usize,
) -> Result<PiecewiseCost, DispatchError> {
    if segments == 0 {
        return Err(DispatchError::InvalidInput("segment count must be at least 1".into()));
    }
    if capacities.len() != network.generator_count() {
        return Err(DispatchError::InvalidInput(format!(
            "expected {} capacities, got {}",
            network.generator_count(),
            capacities.len()
        )));
    }
    let mut all = Vec::with_capacity(network.generator_count());
    for (gen, &cap) in network.generators.iter().zip(capacities) {
        if !(0.0..=gen.p_max + 1e-9).contains(&cap) {
            return Err(DispatchError::InvalidInput(format!(
                "capacity {cap} for generator {} outside [0, {}]",
                gen.id, gen.p_max
            )));
        }
        let width = cap / segments as f64;
        let segs = (0..segments)
            .map(|j| {
                let midpoint = (j as f64 + 0.5) * width;
                Segment { width, marginal_cost: 2.0 * gen.cost_a * midpoint + gen.cost_b }
            })
            .collect();
        all.push(segs);
    }
    Ok(PiecewiseCost { segments: all })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

/// One market clearing: generator outputs, objective, and the dual values
/// that define the locational marginal prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchResult {
    /// Output per generator, MW.
    pub p: Vec<f64>,
    /// Linearized dispatch cost, $.
    pub objective: f64,
    /// Dual of the power-balance constraint, $/MWh.
    pub hub_price: f64,
    /// Lower flow-limit multipliers, one per line, >= 0.
    pub mu_lower: Vec<f64>,
    /// Upper flow-limit multipliers, one per line, >= 0.
    pub mu_upper: Vec<f64>,
    /// Generator at-zero multipliers, >= 0.
    pub nu_lower: Vec<f64>,
    /// Generator at-capacity multipliers, >= 0.
    pub nu_upper: Vec<f64>,
    /// Price per bus, $/MWh.
    pub lmp: Vec<f64>,
    pub status: SolveStatus,
}

/// Column layout of the dispatch LP: all segments in (generator, segment)
/// order, then one flow variable per line.
struct DispatchLp {
    lp: LinearProgram,
    seg_count: usize,
    /// (generator, first column, segment count) per generator.
    gen_cols: Vec<(usize, usize)>,
}

fn build_lp(network: &Network, bids: &BidVector, costs: &PiecewiseCost) -> DispatchLp {
    let m_buses = network.bus_count;
    let n_lines = network.line_count();
    let rows = 1 + n_lines;

    let mut objective = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut gen_cols = Vec::with_capacity(network.generator_count());

    for (g, segs) in costs.per_generator().iter().enumerate() {
        let bus = network.generators[g].bus;
        gen_cols.push((columns.len(), segs.len()));
        for seg in segs {
            let mut col = vec![0.0; rows];
            col[0] = 1.0;
            for l in 0..n_lines {
                col[1 + l] = network.ptdf[l][bus];
            }
            columns.push(col);
            objective.push(seg.marginal_cost);
            lower.push(0.0);
            upper.push(seg.width);
        }
    }
    let seg_count = columns.len();

    for (l, line) in network.lines.iter().enumerate() {
        let mut col = vec![0.0; rows];
        col[1 + l] = -1.0;
        columns.push(col);
        objective.push(0.0);
        lower.push(-line.flow_limit);
        upper.push(line.flow_limit);
    }

    let mut rhs = vec![0.0; rows];
    rhs[0] = bids.total();
    for l in 0..n_lines {
        rhs[1 + l] = (0..m_buses).map(|m| network.ptdf[l][m] * bids.values()[m]).sum();
    }

    DispatchLp { lp: LinearProgram { objective, columns, rhs, lower, upper }, seg_count, gen_cols }
}

/// Clear the market for one interval. Returns per-generator outputs, the
/// hub price, line and generator multipliers, and per-bus LMPs.
pub fn solve_dispatch(
    network: &Network,
    bids: &BidVector,
    costs: &PiecewiseCost,
) -> Result<DispatchResult, DispatchError> {
    if bids.values().len() != network.bus_count {
        return Err(DispatchError::BidLength {
            got: bids.values().len(),
            expected: network.bus_count,
        });
    }
    if bids.total() < -1e-9 {
        return Err(DispatchError::NegativeAggregateBid { total: bids.total() });
    }
    if costs.per_generator().len() != network.generator_count() {
        return Err(DispatchError::InvalidInput(format!(
            "expected costs for {} generators, got {}",
            network.generator_count(),
            costs.per_generator().len()
        )));
    }

    let built = build_lp(network, bids, costs);
    let sol = simplex::solve(&built.lp).map_err(|e| match e {
        SimplexError::Infeasible(r) => DispatchError::Infeasible(format!(
            "no dispatch satisfies balance and flow limits (total demand {:.3} MWh, \
             total capacity {:.3} MW, phase-1 residual {r:.3e})",
            bids.total(),
            costs.total_capacity(),
        )),
        SimplexError::Unbounded(_) => DispatchError::Unbounded,
        SimplexError::Numerical(msg) => DispatchError::Numerical(msg),
    })?;

    let n_lines = network.line_count();
    let hub_price = sol.duals[0];
    let mut mu_lower = vec![0.0; n_lines];
    let mut mu_upper = vec![0.0; n_lines];
    for l in 0..n_lines {
        // Row dual y_l splits into the two one-sided limit multipliers:
        // y_l = mu_lower - mu_upper with both nonnegative.
        let y = sol.duals[1 + l];
        mu_lower[l] = y.max(0.0);
        mu_upper[l] = (-y).max(0.0);
    }

    let lmp: Vec<f64> = (0..network.bus_count)
        .map(|m| {
            let congestion: f64 =
                (0..n_lines).map(|l| network.ptdf[l][m] * (mu_upper[l] - mu_lower[l])).sum();
            hub_price - congestion
        })
        .collect();

    let mut p = vec![0.0; network.generator_count()];
    for (g, &(first, count)) in built.gen_cols.iter().enumerate() {
        p[g] = sol.x[first..first + count].iter().sum();
    }
    debug_assert_eq!(built.seg_count, built.gen_cols.iter().map(|&(_, c)| c).sum::<usize>());

    // Generator bound multipliers from the local price and the cost curve:
    // complementary by construction, zero off the bounds.
    let mut nu_lower = vec![0.0; network.generator_count()];
    let mut nu_upper = vec![0.0; network.generator_count()];
    for (g, gen) in network.generators.iter().enumerate() {
        let cap = costs.capacity(g);
        let local = lmp[gen.bus];
        if cap <= KKT_TOL {
            let resid = local - costs.first_marginal(g);
            nu_upper[g] = resid.max(0.0);
            nu_lower[g] = (-resid).max(0.0);
        } else if p[g] <= KKT_TOL {
            nu_lower[g] = (costs.first_marginal(g) - local).max(0.0);
        } else if p[g] >= cap - KKT_TOL {
            nu_upper[g] = (local - costs.last_marginal(g)).max(0.0);
        }
    }

    let objective = sol.objective;
    Ok(DispatchResult {
        p,
        objective,
        hub_price,
        mu_lower,
        mu_upper,
        nu_lower,
        nu_upper,
        lmp,
        status: SolveStatus::Optimal,
    })
}

/// Maximum violation per optimality category, from recomputing the KKT
/// conditions of the dispatch LP against a reported result.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KktReport {
    /// |sum p - sum demand|, MW.
    pub balance: f64,
    /// Flow-limit overrun, MW.
    pub flow_limits: f64,
    /// Generator bound overrun, MW.
    pub capacity_bounds: f64,
    /// Per-segment stationarity residual, $/MWh.
    pub stationarity: f64,
    /// Most negative multiplier, $/MWh (0 when all nonnegative).
    pub dual_feasibility: f64,
    /// Largest multiplier-times-slack product, $.
    pub complementary_slackness: f64,
    /// |lmp - (hub + congestion)| residual, $/MWh.
    pub lmp_formula: f64,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.balance,
            self.flow_limits,
            self.capacity_bounds,
            self.stationarity,
            self.dual_feasibility,
            self.complementary_slackness,
            self.lmp_formula,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_violation() < tol
    }
}

/// Verify a dispatch result against the KKT conditions of the LP it came
/// from. Purely a reporting operation; nothing is recomputed from solver
/// internals.
pub fn verify_kkt(
    result: &DispatchResult,
    network: &Network,
    bids: &BidVector,
    costs: &PiecewiseCost,
) -> KktReport {
    let mut report = KktReport::default();
    let n_lines = network.line_count();

    // Primal: power balance.
    let total_gen: f64 = result.p.iter().sum();
    report.balance = (total_gen - bids.total()).abs();

    // Primal: flows within limits.
    let mut injections = vec![0.0; network.bus_count];
    for (g, gen) in network.generators.iter().enumerate() {
        injections[gen.bus] += result.p[g];
    }
    for (m, d) in bids.values().iter().enumerate() {
        injections[m] -= d;
    }
    let flows: Vec<f64> = (0..n_lines)
        .map(|l| (0..network.bus_count).map(|m| network.ptdf[l][m] * injections[m]).sum())
        .collect();
    for (l, line) in network.lines.iter().enumerate() {
        report.flow_limits = report.flow_limits.max(flows[l].abs() - line.flow_limit).max(0.0);
    }

    // Primal: capacity bounds.
    for (g, &pg) in result.p.iter().enumerate() {
        let cap = costs.capacity(g);
        report.capacity_bounds = report.capacity_bounds.max(-pg).max(pg - cap).max(0.0);
    }

    // Dual feasibility: all inequality multipliers nonnegative.
    let most_negative = result
        .mu_lower
        .iter()
        .chain(&result.mu_upper)
        .chain(&result.nu_lower)
        .chain(&result.nu_upper)
        .fold(0.0f64, |acc, &v| acc.min(v));
    report.dual_feasibility = -most_negative;

    // LMP formula consistency against the reported duals.
    for m in 0..network.bus_count {
        let congestion: f64 = (0..n_lines)
            .map(|l| network.ptdf[l][m] * (result.mu_upper[l] - result.mu_lower[l]))
            .sum();
        report.lmp_formula =
            report.lmp_formula.max((result.lmp[m] - (result.hub_price - congestion)).abs());
    }

    // Stationarity per segment variable. Segment values are recovered by
    // filling each generator's output in marginal-cost order, which is
    // cost-equivalent to any optimal split.
    for (g, gen) in network.generators.iter().enumerate() {
        let local = result.lmp[gen.bus];
        let mut remaining = result.p[g];
        for seg in &costs.per_generator()[g] {
            let value = remaining.min(seg.width).max(0.0);
            remaining -= value;
            let resid = if value <= KKT_TOL {
                // At zero: marginal cost must not be below the local price.
                (local - seg.marginal_cost).max(0.0)
            } else if value >= seg.width - KKT_TOL {
                // At width: marginal cost must not exceed the local price.
                (seg.marginal_cost - local).max(0.0)
            } else {
                (seg.marginal_cost - local).abs()
            };
            report.stationarity = report.stationarity.max(resid);
        }
    }

    // Complementary slackness for line and generator multipliers.
    for l in 0..n_lines {
        let limit = network.lines[l].flow_limit;
        report.complementary_slackness = report
            .complementary_slackness
            .max(result.mu_lower[l].abs() * (flows[l] + limit).abs())
            .max(result.mu_upper[l].abs() * (limit - flows[l]).abs());
    }
    for (g, &pg) in result.p.iter().enumerate() {
        let cap = costs.capacity(g);
        report.complementary_slackness = report
            .complementary_slackness
            .max(result.nu_lower[g].abs() * pg.abs())
            .max(result.nu_upper[g].abs() * (cap - pg).abs());
    }

    report
}

/// Compare the dual-based LMP at a bus with the finite-difference
/// sensitivity of the optimal objective to that bus's demand.
///
/// Returns `(dual_lmp, finite_difference_lmp)`. Errors with `Degenerate`
/// when the two one-sided differences disagree (a tie in the optimal
/// basis), in which case no single sensitivity exists.
pub fn lmp_sensitivity_check(
    network: &Network,
    bids: &BidVector,
    costs: &PiecewiseCost,
    bus: usize,
    epsilon: f64,
) -> Result<(f64, f64), DispatchError> {
    if epsilon <= 0.0 {
        return Err(DispatchError::InvalidInput("epsilon must be positive".into()));
    }
    if bus >= network.bus_count {
        return Err(DispatchError::InvalidInput(format!("bus {bus} out of range")));
    }

    let base = solve_dispatch(network, bids, costs)?;

    let perturb = |delta: f64| -> Result<f64, DispatchError> {
        let mut d = bids.values().to_vec();
        d[bus] += delta;
        let shifted = BidVector::new(d)?;
        Ok(solve_dispatch(network, &shifted, costs)?.objective)
    };

    let plus = (perturb(epsilon)? - base.objective) / epsilon;
    let minus = match perturb(-epsilon) {
        Ok(obj) => (base.objective - obj) / epsilon,
        // Off the feasible edge on the minus side: treat as a tie.
        Err(DispatchError::Infeasible(_)) | Err(DispatchError::NegativeAggregateBid { .. }) => {
            return Err(DispatchError::Degenerate { plus, minus: f64::NAN })
        }
        Err(e) => return Err(e),
    };

    let tol = (1e-3 * plus.abs()).max(1e-4);
    if (plus - minus).abs() > tol {
        return Err(DispatchError::Degenerate { plus, minus });
    }
    Ok((base.lmp[bus], plus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GenKind, Generator, Line, Network};

    fn thermal(id: usize, bus: usize, a: f64, b: f64, p_max: f64) -> Generator {
        Generator {
            id,
            bus,
            kind: GenKind::Oil,
            cost_a: a,
            cost_b: b,
            p_max,
            capacity_factor_profile: vec![],
            capacity_scale: None,
        }
    }

    fn single_bus_network() -> Network {
        let gens = vec![thermal(0, 0, 0.0, 10.0, 50.0), thermal(1, 0, 0.0, 20.0, 50.0)];
        Network::new(1, vec![], vec![], gens, 12).unwrap()
    }

    /// Two buses, cheap generation at bus 0, expensive at bus 1 (the hub),
    /// one line from bus 0 to the hub with PTDF row [1, 0].
    fn congested_network(limit: f64) -> Network {
        let gens = vec![thermal(0, 0, 0.0, 10.0, 100.0), thermal(1, 1, 0.0, 30.0, 100.0)];
        Network::new(
            2,
            vec![Line { id: 0, flow_limit: limit }],
            vec![vec![1.0, 0.0]],
            gens,
            12,
        )
        .unwrap()
    }

    fn full_caps(network: &Network) -> Vec<f64> {
        network.generators.iter().map(|g| g.p_max).collect()
    }

    #[test]
    fn linearize_linear_cost() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &[50.0, 50.0], 3).unwrap();
        for seg in &costs.per_generator()[0] {
            assert!((seg.width - 50.0 / 3.0).abs() < 1e-12);
            assert_eq!(seg.marginal_cost, 10.0);
        }
    }

    #[test]
    fn linearize_quadratic_midpoints() {
        let gens = vec![thermal(0, 0, 0.01, 10.0, 100.0)];
        let net = Network::new(1, vec![], vec![], gens, 12).unwrap();
        let costs = linearize_costs(&net, &[100.0], 2).unwrap();
        let segs = &costs.per_generator()[0];
        assert!((segs[0].marginal_cost - 10.5).abs() < 1e-12);
        assert!((segs[1].marginal_cost - 11.5).abs() < 1e-12);
    }

    #[test]
    fn linearize_zero_capacity() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &[0.0, 50.0], 4).unwrap();
        assert_eq!(costs.capacity(0), 0.0);
        assert_eq!(costs.per_generator()[0].len(), 4);
        // The zero-capacity generator is effectively absent.
        let bids = BidVector::new(vec![30.0]).unwrap();
        let r = solve_dispatch(&net, &bids, &costs).unwrap();
        assert!(r.p[0].abs() < 1e-9);
        assert!((r.p[1] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn merit_order_single_bus() {
        // Hand LP: cheap unit fills to its 50 MW cap, expensive serves the
        // remaining 10 MW and sets the price.
        let net = single_bus_network();
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![60.0]).unwrap();
        let r = solve_dispatch(&net, &bids, &costs).unwrap();
        assert!((r.p[0] - 50.0).abs() < 1e-9);
        assert!((r.p[1] - 10.0).abs() < 1e-9);
        assert!((r.hub_price - 20.0).abs() < 1e-9);
        assert_eq!(r.lmp.len(), 1);
        assert!((r.lmp[0] - 20.0).abs() < 1e-9);
        assert!((r.objective - 700.0).abs() < 1e-9);
        assert!(verify_kkt(&r, &net, &bids, &costs).within(KKT_TOL));
    }

    #[test]
    fn zero_demand_prices_at_cheapest_available() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![0.0]).unwrap();
        let r = solve_dispatch(&net, &bids, &costs).unwrap();
        assert!(r.p.iter().all(|p| p.abs() < 1e-9));
        assert!(r.objective.abs() < 1e-9);
        assert!((r.lmp[0] - 10.0).abs() < 1e-9, "lmp {}", r.lmp[0]);
    }

    #[test]
    fn congested_two_bus_kkt_by_hand() {
        // Demand 25 at the hub, line limit 10: the cheap unit exports 10,
        // the hub unit covers 15 and sets the hub price; the cheap bus
        // prices at its own marginal cost and the upper limit multiplier
        // carries the 20 $/MWh spread.
        let net = congested_network(10.0);
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![0.0, 25.0]).unwrap();
        let r = solve_dispatch(&net, &bids, &costs).unwrap();
        assert!((r.p[0] - 10.0).abs() < 1e-9);
        assert!((r.p[1] - 15.0).abs() < 1e-9);
        assert!((r.hub_price - 30.0).abs() < 1e-9);
        assert!((r.lmp[0] - 10.0).abs() < 1e-9);
        assert!((r.lmp[1] - 30.0).abs() < 1e-9);
        assert!(r.mu_upper[0] > 0.0, "congested line must have a positive upper multiplier");
        assert!((r.mu_upper[0] - 20.0).abs() < 1e-9);
        assert_eq!(r.mu_lower[0], 0.0);
        assert!(verify_kkt(&r, &net, &bids, &costs).within(KKT_TOL));
    }

    #[test]
    fn uncongested_lmps_equal_hub() {
        let net = congested_network(1000.0);
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![5.0, 25.0]).unwrap();
        let r = solve_dispatch(&net, &bids, &costs).unwrap();
        for m in 0..2 {
            assert!((r.lmp[m] - r.hub_price).abs() < 1e-9);
        }
        assert_eq!(r.mu_upper[0], 0.0);
        assert_eq!(r.mu_lower[0], 0.0);
    }

    #[test]
    fn infeasible_when_overloaded() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![150.0]).unwrap();
        assert!(matches!(
            solve_dispatch(&net, &bids, &costs),
            Err(DispatchError::Infeasible(_))
        ));
    }

    #[test]
    fn negative_per_bus_demand_allowed() {
        let net = congested_network(1000.0);
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![-10.0, 30.0]).unwrap();
        let r = solve_dispatch(&net, &bids, &costs).unwrap();
        assert!((r.p.iter().sum::<f64>() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn aggregate_negative_bid_rejected() {
        assert!(matches!(
            BidVector::new(vec![-10.0, 3.0]),
            Err(DispatchError::NegativeAggregateBid { .. })
        ));
    }

    #[test]
    fn kkt_flags_constructed_violations() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![60.0]).unwrap();
        let clean = solve_dispatch(&net, &bids, &costs).unwrap();

        let mut perturbed = clean.clone();
        perturbed.p[0] += 1.0;
        let report = verify_kkt(&perturbed, &net, &bids, &costs);
        assert!((report.balance - 1.0).abs() < 1e-9);

        let net2 = congested_network(10.0);
        let costs2 = linearize_costs(&net2, &full_caps(&net2), 4).unwrap();
        let bids2 = BidVector::new(vec![0.0, 25.0]).unwrap();
        let mut negated = solve_dispatch(&net2, &bids2, &costs2).unwrap();
        negated.mu_upper[0] = -negated.mu_upper[0];
        let report = verify_kkt(&negated, &net2, &bids2, &costs2);
        assert!(report.dual_feasibility > 1.0);
    }

    #[test]
    fn sensitivity_matches_dual_on_merit_order_case() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![60.0]).unwrap();
        let (dual, fd) = lmp_sensitivity_check(&net, &bids, &costs, 0, 0.1).unwrap();
        assert!((dual - 20.0).abs() < 1e-9);
        assert!((fd - 20.0).abs() < 1e-6);
    }

    #[test]
    fn sensitivity_matches_dual_on_congested_case() {
        let net = congested_network(10.0);
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![0.0, 25.0]).unwrap();
        let (dual, fd) = lmp_sensitivity_check(&net, &bids, &costs, 1, 0.1).unwrap();
        assert!((dual - 30.0).abs() < 1e-9);
        assert!((fd - 30.0).abs() < 1e-6);
    }

    #[test]
    fn sensitivity_rejects_zero_epsilon() {
        let net = single_bus_network();
        let costs = linearize_costs(&net, &full_caps(&net), 4).unwrap();
        let bids = BidVector::new(vec![60.0]).unwrap();
        assert!(matches!(
            lmp_sensitivity_check(&net, &bids, &costs, 0, 0.0),
            Err(DispatchError::InvalidInput(_))
        ));
    }

    #[test]
    fn objective_invariant_under_generator_permutation() {
        let gens = vec![
            thermal(0, 0, 0.01, 25.0, 40.0),
            thermal(1, 0, 0.0, 15.0, 30.0),
            thermal(2, 0, 0.005, 20.0, 60.0),
        ];
        let net = Network::new(1, vec![], vec![], gens, 12).unwrap();
        let costs = linearize_costs(&net, &full_caps(&net), 8).unwrap();
        let bids = BidVector::new(vec![80.0]).unwrap();
        let base = solve_dispatch(&net, &bids, &costs).unwrap();

        let permuted_gens = vec![
            thermal(0, 0, 0.005, 20.0, 60.0),
            thermal(1, 0, 0.01, 25.0, 40.0),
            thermal(2, 0, 0.0, 15.0, 30.0),
        ];
        let net2 = Network::new(1, vec![], vec![], permuted_gens, 12).unwrap();
        let costs2 = linearize_costs(&net2, &full_caps(&net2), 8).unwrap();
        let other = solve_dispatch(&net2, &bids, &costs2).unwrap();
        assert!((base.objective - other.objective).abs() < 1e-7);
        assert!((base.lmp[0] - other.lmp[0]).abs() < 1e-7);
    }

    #[test]
    fn refining_segments_converges() {
        // LMP changes shrink monotonically as the piecewise linearization
        // of a quadratic cost is refined, approaching the exact marginal
        // price of the quadratic program.
        let gens = vec![thermal(0, 0, 0.02, 15.0, 100.0), thermal(1, 0, 0.01, 18.0, 100.0)];
        let net = Network::new(1, vec![], vec![], gens, 12).unwrap();
        let bids = BidVector::new(vec![87.3]).unwrap();
        let lmp_at = |k: usize| {
            let costs = linearize_costs(&net, &full_caps(&net), k).unwrap();
            solve_dispatch(&net, &bids, &costs).unwrap().lmp[0]
        };
        let values: Vec<f64> = [4usize, 8, 16, 32, 64].iter().map(|&k| lmp_at(k)).collect();
        // Exact marginal price from equalizing the two cost derivatives.
        let exact = {
            let p0 = (3.0 + 0.02 * 87.3) / 0.06;
            2.0 * 0.02 * p0 + 15.0
        };
        // The dual is quantized to segment midpoints, so successive
        // differences can tie at zero; the distance to the exact price is
        // the monotone quantity.
        let mut prev_err = f64::INFINITY;
        for v in &values {
            let err = (v - exact).abs();
            assert!(err <= prev_err + 1e-9, "errors must shrink: {values:?} vs exact {exact}");
            prev_err = err;
        }
        assert!((values[4] - exact).abs() < 0.05, "K=64 lmp {} vs exact {exact}", values[4]);
    }
}
