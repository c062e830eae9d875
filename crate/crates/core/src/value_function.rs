//! Expected value function of the recursive logit model.
//!
//! `V(k) = mu * ln sum_{a in A(k)} exp((v(a) + V(a)) / mu)` with `V(d) = 0`.
//! With `z = exp(V / mu)` this becomes the linear system `(I - M) z = b`,
//! `M(k, a) = exp(v(a) / mu)` for arc successors and `b(k) = 1` when the
//! destination dummy is a successor of `k`.

use std::fmt;

use crate::error::{Error, Result};
use crate::network::{AugmentedNetwork, Network, StateId, StateKind};
use crate::sparse::{LuFactors, SparseMatrix};

/// Linear-in-parameters arc utility `v(a) = beta . x(a)` with error scale `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilitySpec {
    beta: Vec<f64>,
    mu: f64,
}

impl UtilitySpec {
    pub fn new(beta: Vec<f64>, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Validation(format!("scale mu must be positive, got {mu}")));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(Error::Validation(format!("non-finite coefficient {b}")));
        }
        Ok(Self { beta, mu })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        Self::new(beta, self.mu)
    }

    pub fn utility(&self, attributes: &[f64]) -> f64 {
        self.beta.iter().zip(attributes).map(|(b, x)| b * x).sum()
    }

    pub fn check(&self, net: &Network) -> Result<()> {
        if self.beta.len() != net.attribute_count() {
            return Err(Error::Validation(format!(
                "{} coefficients for {} attributes",
                self.beta.len(),
                net.attribute_count()
            )));
        }
        Ok(())
    }

    /// `v(a)` for every arc of `net`.
    pub fn arc_utilities(&self, net: &Network) -> Vec<f64> {
        net.arcs().iter().map(|a| self.utility(&a.attributes)).collect()
    }
}

/// Utility of entering each state of `anet` (zero for the dummies).
pub fn action_utilities(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec) -> Vec<f64> {
    anet.states()
        .map(|s| anet.attributes(s).map_or(0.0, |x| spec.utility(x)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    LinearSystem,
    ValueIteration,
    BackwardInduction,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::LinearSystem => "linear-system",
            Solver::ValueIteration => "value-iteration",
            Solver::BackwardInduction => "backward-induction",
        })
    }
}

/// `V` and `z` for one destination. States that cannot reach the destination
/// have `z = 0` and no value.
#[derive(Clone, Debug)]
pub struct ValueField {
    pub destination: crate::network::NodeId,
    pub mu: f64,
    pub z: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub solver: Solver,
    pub residual: f64,
    pub iterations: usize,
}

impl ValueField {
    pub fn value(&self, state: StateId) -> Option<f64> {
        self.values[state.0]
    }

    pub fn z(&self, state: StateId) -> f64 {
        self.z[state.0]
    }

    fn from_z(
        anet: &AugmentedNetwork<'_>,
        spec: &UtilitySpec,
        z: Vec<f64>,
        solver: Solver,
        iterations: usize,
    ) -> Self {
        let values = z
            .iter()
            .map(|&zk| (zk > 0.0).then(|| spec.mu * zk.ln()))
            .collect();
        let mut vf = ValueField {
            destination: anet.destination(),
            mu: spec.mu,
            z,
            values,
            solver,
            residual: 0.0,
            iterations,
        };
        vf.residual = bellman_residual(anet, spec, &vf);
        vf
    }

    fn from_values(
        anet: &AugmentedNetwork<'_>,
        spec: &UtilitySpec,
        values: Vec<Option<f64>>,
        solver: Solver,
        iterations: usize,
    ) -> Self {
        let z = values
            .iter()
            .map(|v| v.map_or(0.0, |v| (v / spec.mu).exp()))
            .collect();
        let mut vf = ValueField {
            destination: anet.destination(),
            mu: spec.mu,
            z,
            values,
            solver,
            residual: 0.0,
            iterations,
        };
        vf.residual = bellman_residual(anet, spec, &vf);
        vf
    }

    /// Value at a node: the origin dummy when the node is an origin, the
    /// destination dummy at the destination, otherwise any arc ending there.
    pub fn node_value(&self, anet: &AugmentedNetwork<'_>, node: crate::network::NodeId) -> Option<f64> {
        if node == anet.destination() {
            return self.value(anet.dest_state());
        }
        if let Some(s) = anet.origin_state(node) {
            return self.value(s);
        }
        let arc = anet.base().incoming(node).first()?;
        self.value(anet.arc_state(*arc))
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> Option<f64> {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    if !max.is_finite() {
        return Some(max);
    }
    Some(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}

/// One logsum update at state `k` given current values.
fn logsum_update(
    anet: &AugmentedNetwork<'_>,
    utilities: &[f64],
    mu: f64,
    values: &[Option<f64>],
    k: StateId,
) -> Option<f64> {
    let lse = log_sum_exp(
        anet.succ(k)
            .iter()
            .filter_map(|&a| values[a.0].map(|va| (utilities[a.0] + va) / mu)),
    )?;
    Some(mu * lse)
}

/// Sup-norm violation of the logsum fixed point over states with a value.
pub fn bellman_residual(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec, vf: &ValueField) -> f64 {
    let utilities = action_utilities(anet, spec);
    let mut worst: f64 = 0.0;
    for k in anet.states() {
        let Some(vk) = vf.values[k.0] else { continue };
        if k == anet.dest_state() {
            worst = worst.max(vk.abs());
            continue;
        }
        match logsum_update(anet, &utilities, spec.mu, &vf.values, k) {
            Some(update) => worst = worst.max((vk - update).abs()),
            None => return f64::INFINITY,
        }
    }
    worst
}

/// Below this fraction of its equation's term magnitude, a solved `z` is
/// treated as cancellation noise rather than a positive value.
const Z_TOLERANCE: f64 = 1e-12;

/// A factorisation of `I - M` over arc states. `M` does not depend on the
/// destination, so one factorisation serves every destination; only the
/// right-hand side changes.
#[derive(Clone, Debug)]
pub struct ValueSystem<'n> {
    net: &'n Network,
    spec: UtilitySpec,
    weights: Vec<f64>,
    row_of: Vec<Option<usize>>,
    lu: LuFactors,
}

impl<'n> ValueSystem<'n> {
    /// System over all arcs of `net`.
    pub fn new(net: &'n Network, spec: &UtilitySpec) -> Result<Self> {
        Self::over(net, spec, vec![true; net.arc_count()])
    }

    /// System over the arcs of `anet` that reach its destination.
    pub fn restricted(anet: &AugmentedNetwork<'n>, spec: &UtilitySpec) -> Result<Self> {
        let keep = (0..anet.base().arc_count())
            .map(|a| anet.reaches_destination(StateId(a)))
            .collect();
        Self::over(anet.base(), spec, keep)
    }

    fn over(net: &'n Network, spec: &UtilitySpec, keep: Vec<bool>) -> Result<Self> {
        spec.check(net)?;
        let weights: Vec<f64> = net
            .arcs()
            .iter()
            .map(|a| (spec.utility(&a.attributes) / spec.mu).exp())
            .collect();
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::infeasible(
                &spec.beta,
                format!("arc weight exp(v/mu) overflows ({w})"),
            ));
        }
        let mut row_of = vec![None; net.arc_count()];
        let mut n = 0;
        for (a, &k) in keep.iter().enumerate() {
            if k {
                row_of[a] = Some(n);
                n += 1;
            }
        }
        let mut matrix = SparseMatrix::identity(n);
        for arc in net.arcs() {
            let Some(row) = row_of[arc.id.0] else { continue };
            for &a in net.outgoing(arc.to) {
                if let Some(col) = row_of[a.0] {
                    matrix.add(row, col, -weights[a.0]);
                }
            }
        }
        let lu = matrix.factorize()?;
        Ok(Self {
            net,
            spec: spec.clone(),
            weights,
            row_of,
            lu,
        })
    }

    pub fn spec(&self) -> &UtilitySpec {
        &self.spec
    }

    /// `exp(v(a) / mu)` per arc.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Solves `(I - M) x = rhs` where `rhs` and `x` are indexed by arc.
    /// Arcs outside the system get 0.
    pub fn solve_arcs(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.lu.dim()];
        for (a, row) in self.row_of.iter().enumerate() {
            if let Some(r) = row {
                b[*r] = rhs[a];
            }
        }
        let x = self.lu.solve(&b);
        self.row_of
            .iter()
            .map(|row| row.map_or(0.0, |r| x[r]))
            .collect()
    }

    pub fn solve(&self, anet: &AugmentedNetwork<'_>) -> Result<ValueField> {
        assert!(std::ptr::eq(self.net, anet.base()), "network mismatch");
        let dest = anet.destination();
        let rhs: Vec<f64> = self
            .net
            .arcs()
            .iter()
            .map(|a| if a.to == dest { 1.0 } else { 0.0 })
            .collect();
        let solved = self.solve_arcs(&rhs);

        let mut z = vec![0.0; anet.state_count()];
        for arc in self.net.arcs() {
            let s = anet.arc_state(arc.id);
            if self.row_of[arc.id.0].is_some() && anet.reaches_destination(s) {
                z[s.0] = solved[arc.id.0];
            }
        }
        z[anet.dest_state().0] = 1.0;
        for &o in anet.origins() {
            let s = anet.origin_state(o).unwrap();
            z[s.0] = anet
                .succ(s)
                .iter()
                .map(|&a| self.weights[a.0] * z[a.0])
                .sum();
        }

        for k in anet.states() {
            if !anet.reaches_destination(k) || k == anet.dest_state() {
                continue;
            }
            let magnitude: f64 = anet
                .succ(k)
                .iter()
                .map(|&a| match anet.kind(a) {
                    StateKind::Destination => 1.0,
                    _ => (self.weights[a.0] * z[a.0]).abs(),
                })
                .sum();
            let zk = z[k.0];
            if !zk.is_finite() || zk <= Z_TOLERANCE * magnitude {
                return Err(Error::infeasible(
                    &self.spec.beta,
                    format!(
                        "z = {zk:e} at state {} (the cyclic sum diverges)",
                        anet.label(k)
                    ),
                ));
            }
        }
        Ok(ValueField::from_z(anet, &self.spec, z, Solver::LinearSystem, 1))
    }
}

/// Solves the linearised system for one destination.
/// A singular `I - M` (spectral radius exactly one) is reported as
/// infeasible.
pub fn solve_linear(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec) -> Result<ValueField> {
    match ValueSystem::restricted(anet, spec) {
        Ok(system) => system.solve(anet),
        Err(Error::SingularSystem { column }) => Err(Error::infeasible(
            &spec.beta,
            format!("I - M is singular (column {column})"),
        )),
        Err(e) => Err(e),
    }
}

pub const VALUE_ITERATION_BUDGET: usize = 10_000;

/// Logsum fixed-point iteration until the sup-norm change drops below `tol`.
pub fn value_iteration(
    anet: &AugmentedNetwork<'_>,
    spec: &UtilitySpec,
    tol: f64,
    warm_start: Option<&ValueField>,
) -> Result<ValueField> {
    value_iteration_with_budget(anet, spec, tol, warm_start, VALUE_ITERATION_BUDGET)
}

pub fn value_iteration_with_budget(
    anet: &AugmentedNetwork<'_>,
    spec: &UtilitySpec,
    tol: f64,
    warm_start: Option<&ValueField>,
    budget: usize,
) -> Result<ValueField> {
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }
    spec.check(anet.base())?;
    let utilities = action_utilities(anet, spec);
    let dest = anet.dest_state();
    let mut values: Vec<Option<f64>> = anet
        .states()
        .map(|s| {
            if !anet.reaches_destination(s) {
                None
            } else if s == dest {
                Some(0.0)
            } else {
                Some(
                    warm_start
                        .filter(|w| w.values.len() == anet.state_count())
                        .and_then(|w| w.values[s.0])
                        .unwrap_or(0.0),
                )
            }
        })
        .collect();

    for iteration in 1..=budget {
        let mut change: f64 = 0.0;
        let mut next = values.clone();
        for k in anet.states() {
            if k == dest || values[k.0].is_none() {
                continue;
            }
            let update = logsum_update(anet, &utilities, spec.mu, &values, k)
                .expect("states that reach the destination have a valued successor");
            if !update.is_finite() || update.abs() > 1e12 {
                return Err(Error::NoConvergence {
                    what: "value iteration (diverging)",
                    iterations: iteration,
                });
            }
            change = change.max((update - values[k.0].unwrap()).abs());
            next[k.0] = Some(update);
        }
        values = next;
        if change < tol {
            return Ok(ValueField::from_values(
                anet,
                spec,
                values,
                Solver::ValueIteration,
                iteration,
            ));
        }
    }
    Err(Error::NoConvergence {
        what: "value iteration",
        iterations: budget,
    })
}

/// Exact logsum values in one sweep of reverse topological order.
pub fn backward_induction(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec) -> Result<ValueField> {
    spec.check(anet.base())?;
    let order = anet.topological_order().ok_or(Error::CycleDetected)?;
    let utilities = action_utilities(anet, spec);
    let mut values: Vec<Option<f64>> = vec![None; anet.state_count()];
    for &k in order.iter().rev() {
        values[k.0] = if k == anet.dest_state() {
            Some(0.0)
        } else {
            logsum_update(anet, &utilities, spec.mu, &values, k)
        };
    }
    Ok(ValueField::from_values(
        anet,
        spec,
        values,
        Solver::BackwardInduction,
        1,
    ))
}

/// Backward induction when the reachable state graph is acyclic, the linear
/// system otherwise.
pub fn solve_auto(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec) -> Result<ValueField> {
    if anet.is_acyclic() {
        backward_induction(anet, spec)
    } else {
        solve_linear(anet, spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    /// Estimate of the spectral radius of `M` over states that reach the
    /// destination (exactly 0 when they form an acyclic graph).
    pub spectral_radius: f64,
    /// Collatz-Wielandt bracket around `spectral_radius`.
    pub radius_bounds: (f64, f64),
    pub acyclic: bool,
    /// States from which the destination cannot be reached.
    pub unreachable: Vec<StateId>,
    pub feasible: bool,
}

/// Spectral-radius estimate of `M` and per-state reachability.
pub fn feasibility_check(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec) -> FeasibilityReport {
    let unreachable: Vec<StateId> = anet
        .states()
        .filter(|&s| !anet.reaches_destination(s))
        .collect();
    if anet.is_acyclic() {
        return FeasibilityReport {
            spectral_radius: 0.0,
            radius_bounds: (0.0, 0.0),
            acyclic: true,
            unreachable,
            feasible: true,
        };
    }
    let utilities = action_utilities(anet, spec);
    let active: Vec<StateId> = anet
        .states()
        .filter(|&s| anet.reaches_destination(s) && s != anet.dest_state())
        .collect();
    // Power iteration on M + I keeps the iterate positive and aperiodic. The
    // growth of the max-norm converges to 1 + rho; the Collatz-Wielandt
    // ratios only bracket it.
    let mut x = vec![1.0; anet.state_count()];
    let mut lower = 0.0;
    let mut upper = f64::INFINITY;
    let mut growth = f64::NAN;
    for _ in 0..20_000 {
        let mut y = vec![0.0; anet.state_count()];
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for &k in &active {
            let mut sum = x[k.0];
            for &a in anet.succ(k) {
                if a != anet.dest_state() && anet.reaches_destination(a) {
                    sum += (utilities[a.0] / spec.mu).exp() * x[a.0];
                }
            }
            y[k.0] = sum;
            let ratio = sum / x[k.0];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        lower = f64::max(lower, lo - 1.0);
        upper = f64::min(upper, hi - 1.0);
        let norm = active.iter().map(|k| y[k.0]).fold(0.0_f64, f64::max);
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        for &k in &active {
            x[k.0] = y[k.0] / norm;
        }
        let previous = growth;
        growth = norm;
        if (growth - previous).abs() < 1e-14 * growth {
            break;
        }
    }
    let spectral_radius = (growth - 1.0).clamp(lower, upper);
    let feasible = solve_linear(anet, spec).is_ok();
    FeasibilityReport {
        spectral_radius,
        radius_bounds: (lower, upper),
        acyclic: false,
        unreachable,
        feasible,
    }
}

/// `state_id,V,z` lines, one per state. Unvalued states are written as `-inf`
/// with `z = 0`.
pub fn format_value_field(anet: &AugmentedNetwork<'_>, vf: &ValueField, precision: Option<usize>) -> String {
    let mut out = String::from("state_id,V,z\n");
    for s in anet.states() {
        let v = match (vf.value(s), precision) {
            (Some(v), Some(p)) => format!("{v:.p$}"),
            (Some(v), None) => format!("{v:e}"),
            (None, _) => "-inf".to_string(),
        };
        let z = match precision {
            Some(p) => format!("{:.p$}", vf.z(s)),
            None => format!("{:e}", vf.z(s)),
        };
        out.push_str(&format!("{},{v},{z}\n", anet.label(s)));
    }
    out
}

/// Reads an export written by [`format_value_field`] back into a field usable
/// as a warm start.
pub fn parse_value_field(anet: &AugmentedNetwork<'_>, mu: f64, text: &str) -> Result<ValueField> {
    let mut values = vec![None; anet.state_count()];
    let mut z = vec![0.0; anet.state_count()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || i == 0 && line.starts_with("state_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::parse(i + 1, "expected `state_id,V,z`"));
        }
        let s = anet
            .parse_label(fields[0])
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("invalid value `{}`", fields[1])))?;
        let zk: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("invalid z `{}`", fields[2])))?;
        values[s.0] = v.is_finite().then_some(v);
        z[s.0] = zk;
    }
    Ok(ValueField {
        destination: anet.destination(),
        mu,
        z,
        values,
        solver: Solver::LinearSystem,
        residual: f64::NAN,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::{augment, NetworkBuilder};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn minus_length() -> UtilitySpec {
        UtilitySpec::new(vec![-1.0], 1.0).unwrap()
    }

    fn node_values(net: &Network, anet: &AugmentedNetwork<'_>, vf: &ValueField) -> Vec<f64> {
        ["4", "3", "2", "1"]
            .iter()
            .map(|n| vf.node_value(anet, net.node(n).unwrap()).unwrap())
            .collect()
    }

    #[test]
    fn spec_validation() {
        assert!(UtilitySpec::new(vec![1.0], 0.0).is_err());
        assert!(UtilitySpec::new(vec![f64::NAN], 1.0).is_err());
        let net = fixtures::toy_network();
        assert!(UtilitySpec::new(vec![1.0], 1.0).unwrap().check(&net).is_err());
    }

    #[test]
    fn backward_induction_small_acyclic() {
        let net = fixtures::small_acyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let vf = backward_induction(&anet, &minus_length()).unwrap();
        let v = node_values(&net, &anet, &vf);
        for (got, want) in v.iter().zip([0.0, -1.5, -1.6867, -1.5803]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-4);
        }
        assert!(vf.residual < 1e-12);
        assert_eq!(vf.z(anet.dest_state()), 1.0);
    }

    #[test]
    fn linear_solve_small_cyclic() {
        let net = fixtures::small_cyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let vf = solve_linear(&anet, &minus_length()).unwrap();
        let v = node_values(&net, &anet, &vf);
        for (got, want) in v.iter().zip([0.0, -1.1998, -1.5968, -1.5496]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-4);
        }
        assert!(vf.residual < 1e-9);
        // Every arc with the same head node carries the same value.
        for node in net.nodes() {
            let vals: Vec<f64> = net
                .incoming(node)
                .iter()
                .map(|&a| vf.value(anet.arc_state(a)).unwrap())
                .collect();
            for w in vals.windows(2) {
                assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-12);
            }
        }
        assert!(matches!(
            backward_induction(&anet, &minus_length()),
            Err(Error::CycleDetected)
        ));
    }

    #[test]
    fn single_arc() {
        let net = Network::parse("id,from,to,x\n0,o,d,2\n").unwrap();
        let anet = augment(&net, net.node("o").unwrap(), net.node("d").unwrap()).unwrap();
        let spec = minus_length();
        for vf in [
            solve_linear(&anet, &spec).unwrap(),
            backward_induction(&anet, &spec).unwrap(),
        ] {
            let origin = anet.origin_state(net.node("o").unwrap()).unwrap();
            assert_abs_diff_eq!(vf.value(origin).unwrap(), -2.0, epsilon = 1e-12);
        }
    }

    /// Largest eigenvalue modulus of the dense `M` over arc states.
    fn radius_oracle(anet: &AugmentedNetwork<'_>, spec: &UtilitySpec) -> f64 {
        let u = action_utilities(anet, spec);
        let n = anet.state_count();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for k in anet.states() {
            for &a in anet.succ(k) {
                if a != anet.dest_state() {
                    m[(k.0, a.0)] = (u[a.0] / spec.mu).exp();
                }
            }
        }
        m.complex_eigenvalues().iter().fold(0.0, |r, l| r.max(l.norm()))
    }

    #[test]
    fn positive_cycle_is_infeasible() {
        let net = fixtures::small_cyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let plus = UtilitySpec::new(vec![1.0], 1.0).unwrap();
        assert!(radius_oracle(&anet, &plus) > 1.0);
        assert!(matches!(
            solve_linear(&anet, &plus),
            Err(Error::InfeasibleValueFunction { .. })
        ));
        assert!(matches!(
            value_iteration(&anet, &plus, 1e-8, None),
            Err(Error::NoConvergence { .. })
        ));
        let report = feasibility_check(&anet, &plus);
        assert!(!report.feasible);
        assert!(report.spectral_radius > 1.0);
        assert_abs_diff_eq!(report.spectral_radius, radius_oracle(&anet, &plus), epsilon = 1e-6);
    }

    #[test]
    fn feasibility_reports() {
        let net = fixtures::small_cyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let report = feasibility_check(&anet, &minus_length());
        assert!(report.feasible && !report.acyclic);
        let oracle = radius_oracle(&anet, &minus_length());
        assert!(oracle < 1.0);
        assert_abs_diff_eq!(report.spectral_radius, oracle, epsilon = 1e-6);
        assert!(report.radius_bounds.0 <= oracle + 1e-9 && oracle <= report.radius_bounds.1 + 1e-9);

        let acyclic = fixtures::small_acyclic();
        let anet = augment(&acyclic, o, d).unwrap();
        let report = feasibility_check(&anet, &minus_length());
        assert!(report.feasible && report.acyclic);
        assert_eq!(report.spectral_radius, 0.0);
        assert!(report.unreachable.is_empty());

        // Node x hangs off the network with no way to the destination.
        let net = Network::parse("id,from,to,l\n0,o,d,1\n1,o,x,1\n").unwrap();
        let anet = augment(&net, net.node("o").unwrap(), net.node("d").unwrap()).unwrap();
        let report = feasibility_check(&anet, &minus_length());
        assert_eq!(report.unreachable, vec![StateId(1)]);
        let vf = solve_linear(&anet, &minus_length()).unwrap();
        assert_eq!(vf.value(StateId(1)), None);
        assert_eq!(vf.z(StateId(1)), 0.0);
    }

    #[test]
    fn value_iteration_against_linear() {
        let net = fixtures::small_cyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let spec = minus_length();
        let linear = solve_linear(&anet, &spec).unwrap();
        let iterated = value_iteration(&anet, &spec, 1e-8, None).unwrap();
        for s in anet.states() {
            assert_abs_diff_eq!(
                linear.value(s).unwrap(),
                iterated.value(s).unwrap(),
                epsilon = 1e-7
            );
        }
        let warm = value_iteration(&anet, &spec, 1e-8, Some(&linear)).unwrap();
        assert_eq!(warm.iterations, 1);
        assert!(matches!(
            value_iteration(&anet, &spec, 0.0, None),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            value_iteration_with_budget(&anet, &spec, 1e-12, None, 3),
            Err(Error::NoConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn acyclic_value_iteration_matches_backward() {
        let net = fixtures::small_acyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let spec = minus_length();
        let exact = backward_induction(&anet, &spec).unwrap();
        let iterated = value_iteration(&anet, &spec, 1e-10, None).unwrap();
        for s in anet.states() {
            assert_abs_diff_eq!(
                exact.value(s).unwrap(),
                iterated.value(s).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn toy_origin_value() {
        let net = fixtures::toy_network();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let spec = UtilitySpec::new(fixtures::TOY_BETA.to_vec(), 1.0).unwrap();
        let vf = backward_induction(&anet, &spec).unwrap();
        let origin = anet.origin_state(o).unwrap();
        assert_abs_diff_eq!(vf.value(origin).unwrap(), -0.5478, epsilon = 5e-5);
    }

    #[test]
    fn shared_factorisation_serves_every_destination() {
        let net = fixtures::small_cyclic();
        let spec = minus_length();
        let system = ValueSystem::new(&net, &spec).unwrap();
        for d in net.nodes() {
            let origins: Vec<_> = net
                .nodes()
                .filter(|&n| n != d && net.nodes_reaching(d)[n.0])
                .collect();
            let anet = AugmentedNetwork::new(&net, d, &origins).unwrap();
            let shared = system.solve(&anet).unwrap();
            let own = solve_linear(&anet, &spec).unwrap();
            for s in anet.states() {
                match (shared.value(s), own.value(s)) {
                    (Some(a), Some(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-12),
                    (None, None) => {}
                    other => panic!("mismatch at {s}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn export_round_trip() {
        let net = fixtures::small_cyclic();
        let (o, d) = fixtures::default_od(&net);
        let anet = augment(&net, o, d).unwrap();
        let spec = minus_length();
        let vf = solve_linear(&anet, &spec).unwrap();
        let text = format_value_field(&anet, &vf, None);
        let back = parse_value_field(&anet, 1.0, &text).unwrap();
        for s in anet.states() {
            assert_eq!(back.value(s), vf.value(s));
        }
        let warm = value_iteration(&anet, &spec, 1e-8, Some(&back)).unwrap();
        assert_eq!(warm.iterations, 1);
    }

    fn random_dag() -> impl Strategy<Value = (Network, Vec<f64>)> {
        (3usize..9)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec((0..n, 0..n, 0.1f64..3.0), 1..20),
                    proptest::collection::vec(-2.0f64..0.5, 1),
                )
            })
            .prop_filter_map("destination must be reachable", |(n, edges, beta)| {
                let mut b = NetworkBuilder::new(["x"]);
                // chain guarantees reachability from node 0 to n-1
                let mut id = 0;
                for i in 0..n - 1 {
                    b.push_arc(id, &i.to_string(), &(i + 1).to_string(), vec![1.0]);
                    id += 1;
                }
                for (u, v, x) in edges {
                    let (u, v) = (u.min(v), u.max(v));
                    if u != v {
                        b.push_arc(id, &u.to_string(), &v.to_string(), vec![x]);
                        id += 1;
                    }
                }
                Some((b.build().ok()?, beta))
            })
    }

    proptest! {
        #[test]
        fn acyclic_solvers_agree((net, beta) in random_dag(), mu in 0.5f64..2.0) {
            let spec = UtilitySpec::new(beta, mu).unwrap();
            let o = net.node("0").unwrap();
            let d = net.node(&(net.node_count() - 1).to_string()).unwrap();
            let anet = augment(&net, o, d).unwrap();
            let exact = backward_induction(&anet, &spec).unwrap();
            let linear = solve_linear(&anet, &spec).unwrap();
            let iterated = value_iteration(&anet, &spec, 1e-12, None).unwrap();
            for s in anet.states() {
                match (exact.value(s), linear.value(s), iterated.value(s)) {
                    (Some(a), Some(b), Some(c)) => {
                        prop_assert!((a - b).abs() < 1e-9);
                        prop_assert!((a - c).abs() < 1e-9);
                    }
                    (None, None, None) => {}
                    other => prop_assert!(false, "mismatch {:?}", other),
                }
            }
            prop_assert!(linear.residual < 1e-9);
        }

        #[test]
        fn scaling_utilities_and_mu((net, beta) in random_dag(), c in 0.2f64..5.0) {
            let spec = UtilitySpec::new(beta.clone(), 1.0).unwrap();
            let scaled = UtilitySpec::new(beta.iter().map(|b| b * c).collect(), c).unwrap();
            let o = net.node("0").unwrap();
            let d = net.node(&(net.node_count() - 1).to_string()).unwrap();
            let anet = augment(&net, o, d).unwrap();
            let a = solve_linear(&anet, &spec).unwrap();
            let b = solve_linear(&anet, &scaled).unwrap();
            for s in anet.states() {
                if let (Some(va), Some(vb)) = (a.value(s), b.value(s)) {
                    prop_assert!((va * c - vb).abs() < 1e-9 * (1.0 + vb.abs()));
                    prop_assert!((a.z(s) - b.z(s)).abs() < 1e-9 * a.z(s));
                }
            }
        }

        #[test]
        fn lowering_an_arc_utility_never_raises_values(
            (net, beta) in random_dag(),
            which in 0usize..100,
            drop in 0.1f64..3.0,
        ) {
            let spec = UtilitySpec::new(vec![beta[0].min(-0.1)], 1.0).unwrap();
            let o = net.node("0").unwrap();
            let d = net.node(&(net.node_count() - 1).to_string()).unwrap();
            let anet = augment(&net, o, d).unwrap();
            let before = solve_linear(&anet, &spec).unwrap();
            // Lower one arc's utility by raising its (positive-coefficient) attribute.
            let mut b = NetworkBuilder::new(["x"]);
            for arc in net.arcs() {
                let mut x = arc.attributes[0];
                if arc.id.0 == which % net.arc_count() {
                    x += drop;
                }
                b.push_arc(arc.id.0, net.node_name(arc.from), net.node_name(arc.to), vec![x]);
            }
            let changed = b.build().unwrap();
            let anet2 = augment(&changed, o, d).unwrap();
            let after = solve_linear(&anet2, &spec).unwrap();
            for s in anet.states() {
                if let (Some(x), Some(y)) = (before.value(s), after.value(s)) {
                    prop_assert!(y <= x + 1e-12);
                }
            }
        }
    }
}
