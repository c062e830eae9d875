//! Expected link flows and accessibility for both models.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{AugmentedNetwork, Network, NodeId, StateKind};
use crate::path_logit::{choice_set_logsum, ChoiceSet};
use crate::rl_model::{choice_matrix, ChoiceMatrix};
use crate::sparse::SparseMatrix;
use crate::value_function::{UtilitySpec, ValueField, ValueSystem};

/// Trips from each origin toward one destination.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandVector {
    pub destination: NodeId,
    pub demand: Vec<(NodeId, f64)>,
}

impl DemandVector {
    pub fn new(destination: NodeId, demand: Vec<(NodeId, f64)>) -> Result<Self> {
        for &(o, g) in &demand {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::Validation(format!(
                    "demand must be finite and nonnegative, got {g}"
                )));
            }
            if o == destination {
                return Err(Error::Validation("demand from the destination to itself".into()));
            }
        }
        Ok(Self { destination, demand })
    }

    pub fn single(origin: NodeId, destination: NodeId, amount: f64) -> Result<Self> {
        Self::new(destination, vec![(origin, amount)])
    }

    pub fn total(&self) -> f64 {
        self.demand.iter().map(|d| d.1).sum()
    }

    pub fn origins(&self) -> Vec<NodeId> {
        let mut o: Vec<NodeId> = self.demand.iter().map(|d| d.0).collect();
        o.sort();
        o.dedup();
        o
    }
}

/// Expected arc flows toward one destination.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub destination: NodeId,
    /// indexed by arc id
    pub arc_flows: Vec<f64>,
    /// flow entering the absorbing destination state
    pub absorbed: f64,
    pub demand: DemandVector,
}

impl FlowField {
    /// Largest node-level imbalance `|inflow + injected - outflow|`, relative
    /// to total demand.
    pub fn conservation_error(&self, net: &Network) -> f64 {
        let mut balance = vec![0.0; net.node_count()];
        for arc in net.arcs() {
            let f = self.arc_flows[arc.id.0];
            balance[arc.to.0] += f;
            balance[arc.from.0] -= f;
        }
        for &(o, g) in &self.demand.demand {
            balance[o.0] += g;
        }
        balance[self.destination.0] -= self.absorbed;
        let scale = self.demand.total().max(1.0);
        balance.iter().fold(0.0_f64, |m, b| m.max(b.abs())) / scale
    }
}

/// Solves `(I - P^T) f = g` over the states of `anet`.
pub fn link_flows_rl(cm: &ChoiceMatrix, anet: &AugmentedNetwork<'_>, demand: &DemandVector) -> Result<FlowField> {
    if demand.destination != anet.destination() || cm.destination != anet.destination() {
        return Err(Error::Validation("demand and choice matrix have different destinations".into()));
    }
    let n = anet.state_count();
    let mut g = vec![0.0; n];
    for &(o, amount) in &demand.demand {
        let s = anet.origin_state(o).ok_or_else(|| {
            Error::Validation(format!(
                "`{}` is not an origin of this augmented network",
                anet.base().node_name(o)
            ))
        })?;
        g[s.0] += amount;
    }
    let mut system = SparseMatrix::identity(n);
    for k in anet.states() {
        for &(a, p) in cm.row(k) {
            system.add(a.0, k.0, -p);
        }
    }
    let f = system.factorize()?.solve(&g);
    let mut arc_flows = vec![0.0; anet.base().arc_count()];
    for k in anet.states() {
        if let StateKind::Arc(a) = anet.kind(k) {
            // round-off can leave tiny negatives
            arc_flows[a.0] = f[k.0].max(0.0);
        }
    }
    Ok(FlowField {
        destination: anet.destination(),
        arc_flows,
        absorbed: f[anet.dest_state().0],
        demand: demand.clone(),
    })
}

/// Path flows `demand x P(path)` summed onto arcs.
pub fn link_flows_pl(net: &Network, cs: &ChoiceSet, probabilities: &[f64], demand: f64) -> Result<FlowField> {
    if probabilities.len() != cs.len() {
        return Err(Error::Validation(format!(
            "{} probabilities for {} paths",
            probabilities.len(),
            cs.len()
        )));
    }
    let mut arc_flows = vec![0.0; net.arc_count()];
    for (path, p) in cs.paths.iter().zip(probabilities) {
        for a in path.arcs() {
            arc_flows[a.0] += demand * p;
        }
    }
    Ok(FlowField {
        destination: cs.destination,
        arc_flows,
        absorbed: demand * probabilities.iter().sum::<f64>(),
        demand: DemandVector::single(cs.origin, cs.destination, demand)?,
    })
}

/// Loads every demand vector with the recursive model and returns one flow
/// field per destination in input order.
pub fn load_rl(net: &Network, spec: &UtilitySpec, demands: &[DemandVector]) -> Result<Vec<FlowField>> {
    spec.check(net)?;
    let shared = ValueSystem::new(net, spec).ok();
    demands
        .par_iter()
        .map(|demand| {
            let anet = AugmentedNetwork::new(net, demand.destination, &demand.origins())?;
            let vf = match &shared {
                Some(s) => s.solve(&anet)?,
                None => ValueSystem::restricted(&anet, spec)?.solve(&anet)?,
            };
            let cm = choice_matrix(&vf, &anet, spec)?;
            link_flows_rl(&cm, &anet, demand)
        })
        .collect()
}

/// Arc-wise sum over destinations.
pub fn total_flows(net: &Network, fields: &[FlowField]) -> Vec<f64> {
    let mut total = vec![0.0; net.arc_count()];
    for field in fields {
        for (t, f) in total.iter_mut().zip(&field.arc_flows) {
            *t += f;
        }
    }
    total
}

/// `V(origin)` of the recursive model.
pub fn accessibility_rl(vf: &ValueField, anet: &AugmentedNetwork<'_>, origin: NodeId) -> Result<f64> {
    let s = anet
        .origin_state(origin)
        .ok_or_else(|| Error::Validation(format!("`{}` is not an origin", anet.base().node_name(origin))))?;
    vf.value(s).ok_or_else(|| {
        Error::InfeasibleValueFunction {
            beta: Vec::new(),
            reason: format!("no value at origin {}", anet.base().node_name(origin)),
        }
    })
}

/// Logsum over the choice set.
pub fn accessibility_pl(cs: &ChoiceSet, net: &Network, spec: &UtilitySpec) -> Result<f64> {
    choice_set_logsum(cs, net, spec)
}

/// `link_id,from,to,flow` ordered by arc id.
pub fn format_flow_report(net: &Network, flows: &[f64], rounded: bool) -> String {
    let mut out = String::from("link_id,from,to,flow\n");
    for arc in net.arcs() {
        let f = flows[arc.id.0];
        let _ = write!(out, "{},{},{},", arc.id, net.node_name(arc.from), net.node_name(arc.to));
        if rounded {
            let _ = writeln!(out, "{f:.2}");
        } else {
            let _ = writeln!(out, "{f:e}");
        }
    }
    out
}
