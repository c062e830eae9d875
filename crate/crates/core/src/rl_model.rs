//! Recursive logit link choice probabilities, path probabilities,
//! log-likelihood with its analytic gradient, and path sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{ArcId, AugmentedNetwork, Network, NodeId, StateId, StateKind};
use crate::shortest_path::{parse_paths, Path};
use crate::value_function::{action_utilities, UtilitySpec, ValueField, ValueSystem};

/// Probabilities below this are reported as underflow rather than printed.
pub const UNDERFLOW: f64 = 1e-300;

/// One observed trajectory, stored as base arcs. The state sequence
/// `origin dummy, arcs..., destination dummy` is derived per augmented
/// network.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub origin: NodeId,
    pub destination: NodeId,
    pub arcs: Vec<ArcId>,
}

impl Observation {
    pub fn from_path(net: &Network, path: &Path) -> Self {
        Self {
            origin: path.origin(net),
            destination: path.destination(net),
            arcs: path.arcs().to_vec(),
        }
    }

    /// Builds an observation from a sampled state sequence.
    pub fn from_states(anet: &AugmentedNetwork<'_>, states: &[StateId]) -> Result<Self> {
        let origin = match states.first().map(|&s| anet.kind(s)) {
            Some(StateKind::Origin(o)) => o,
            _ => return Err(Error::InvalidPath("trajectory must start at an origin dummy".into())),
        };
        if states.last() != Some(&anet.dest_state()) {
            return Err(Error::InvalidPath(
                "trajectory must end at the destination dummy".into(),
            ));
        }
        let arcs = states[1..states.len() - 1]
            .iter()
            .map(|&s| match anet.kind(s) {
                StateKind::Arc(a) => Ok(a),
                _ => Err(Error::InvalidPath("dummy state inside a trajectory".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            origin,
            destination: anet.destination(),
            arcs,
        })
    }

    pub fn path(&self, net: &Network) -> Result<Path> {
        Path::new(net, self.arcs.clone())
    }

    /// `k_0 = origin dummy, k_1.. = arcs, k_T = destination dummy`, checked
    /// against the successor sets of `anet`.
    pub fn states(&self, anet: &AugmentedNetwork<'_>) -> Result<Vec<StateId>> {
        if self.destination != anet.destination() {
            return Err(Error::Validation(format!(
                "observation heads to `{}`, network is augmented for `{}`",
                anet.base().node_name(self.destination),
                anet.base().node_name(anet.destination())
            )));
        }
        let start = anet.origin_state(self.origin).ok_or_else(|| {
            Error::Validation(format!(
                "`{}` is not an origin of this augmented network",
                anet.base().node_name(self.origin)
            ))
        })?;
        let mut states = Vec::with_capacity(self.arcs.len() + 2);
        states.push(start);
        for &a in &self.arcs {
            if a.0 >= anet.base().arc_count() {
                return Err(Error::InvalidPath(format!("unknown arc {a}")));
            }
            states.push(anet.arc_state(a));
        }
        states.push(anet.dest_state());
        for pair in states.windows(2) {
            if !anet.succ(pair[0]).contains(&pair[1]) {
                return Err(Error::InvalidTransition {
                    from: pair[0].0,
                    to: pair[1].0,
                });
            }
        }
        Ok(states)
    }

    pub fn is_loopless(&self, net: &Network) -> bool {
        self.path(net).is_ok_and(|p| p.is_loopless(net))
    }
}

/// Reads an observation file (same line format as path files).
pub fn parse_observations(net: &Network, text: &str) -> Result<Vec<Observation>> {
    Ok(parse_paths(net, text)?
        .iter()
        .map(|p| Observation::from_path(net, p))
        .collect())
}

pub fn format_observations(net: &Network, observations: &[Observation]) -> Result<String> {
    let paths = observations
        .iter()
        .map(|o| o.path(net))
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::shortest_path::format_paths(net, &paths))
}

/// `P(a | k)` for every state, rows in successor order.
#[derive(Clone, Debug)]
pub struct ChoiceMatrix {
    pub destination: NodeId,
    rows: Vec<Vec<(StateId, f64)>>,
}

impl ChoiceMatrix {
    pub fn row(&self, k: StateId) -> &[(StateId, f64)] {
        &self.rows[k.0]
    }

    pub fn prob(&self, k: StateId, a: StateId) -> f64 {
        self.rows[k.0]
            .iter()
            .find(|(s, _)| *s == a)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }
}

/// `P(a|k) = M(k,a) z(a) / sum_a' M(k,a') z(a')`.
pub fn choice_matrix(
    vf: &ValueField,
    anet: &AugmentedNetwork<'_>,
    spec: &UtilitySpec,
) -> Result<ChoiceMatrix> {
    if vf.z.len() != anet.state_count() || vf.destination != anet.destination() {
        return Err(Error::Validation(
            "value field does not belong to this augmented network".into(),
        ));
    }
    let utilities = action_utilities(anet, spec);
    let mut rows = Vec::with_capacity(anet.state_count());
    for k in anet.states() {
        if k == anet.dest_state() || !anet.reaches_destination(k) {
            rows.push(Vec::new());
            continue;
        }
        let weighted: Vec<(StateId, f64)> = anet
            .succ(k)
            .iter()
            .map(|&a| {
                let w = if a == anet.dest_state() {
                    1.0
                } else {
                    (utilities[a.0] / spec.mu()).exp()
                };
                (a, w * vf.z(a))
            })
            .collect();
        let total: f64 = weighted.iter().map(|(_, m)| m).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::infeasible(
                spec.beta(),
                format!("no positive continuation from state {}", anet.label(k)),
            ));
        }
        rows.push(weighted.into_iter().map(|(a, m)| (a, m / total)).collect());
    }
    Ok(ChoiceMatrix {
        destination: anet.destination(),
        rows,
    })
}

/// Product of link choice probabilities along a state sequence.
pub fn state_path_probability(states: &[StateId], cm: &ChoiceMatrix) -> Result<f64> {
    let mut p = 1.0;
    for pair in states.windows(2) {
        if pair[0].0 >= cm.rows.len() || !cm.rows[pair[0].0].iter().any(|(s, _)| *s == pair[1]) {
            return Err(Error::InvalidTransition {
                from: pair[0].0,
                to: pair[1].0,
            });
        }
        p *= cm.prob(pair[0], pair[1]);
    }
    Ok(p)
}

pub fn path_probability(
    obs: &Observation,
    anet: &AugmentedNetwork<'_>,
    cm: &ChoiceMatrix,
) -> Result<f64> {
    state_path_probability(&obs.states(anet)?, cm)
}

/// `exp(v(sigma)/mu - V(k_0)/mu)`.
pub fn closed_form_path_probability(
    obs: &Observation,
    anet: &AugmentedNetwork<'_>,
    spec: &UtilitySpec,
    vf: &ValueField,
) -> Result<f64> {
    let states = obs.states(anet)?;
    let origin_value = vf
        .value(states[0])
        .ok_or_else(|| Error::infeasible(spec.beta(), "origin has no value"))?;
    let utility: f64 = obs
        .arcs
        .iter()
        .map(|&a| spec.utility(&anet.base().arc(a).attributes))
        .sum();
    Ok(((utility - origin_value) / spec.mu()).exp())
}

/// Per-destination grouping of observations with aggregated transition
/// counts.
#[derive(Clone, Debug)]
struct DestinationGroup<'n> {
    anet: AugmentedNetwork<'n>,
    /// distinct `(k, a)` transitions with their counts
    transitions: Vec<(StateId, StateId, f64)>,
    /// per observation: global observation index and indices into `transitions`
    members: Vec<(usize, Vec<usize>)>,
}

#[derive(Clone, Debug)]
struct GroupEvaluation {
    ll: f64,
    gradient: Vec<f64>,
    /// per distinct transition: log-probability and its gradient
    per_transition: Vec<(f64, Vec<f64>)>,
}

/// Log-likelihood of a fixed observation set as a function of the utility
/// coefficients. Observations sharing a destination share one value
/// function solve.
#[derive(Clone, Debug)]
pub struct RlLikelihood<'n> {
    net: &'n Network,
    groups: Vec<DestinationGroup<'n>>,
    n_obs: usize,
}

impl<'n> RlLikelihood<'n> {
    pub fn new(net: &'n Network, observations: &[Observation]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Validation("no observations".into()));
        }
        let mut by_dest: Vec<(NodeId, Vec<usize>)> = Vec::new();
        for (i, obs) in observations.iter().enumerate() {
            match by_dest.iter_mut().find(|(d, _)| *d == obs.destination) {
                Some((_, list)) => list.push(i),
                None => by_dest.push((obs.destination, vec![i])),
            }
        }
        by_dest.sort_by_key(|(d, _)| *d);

        let mut groups = Vec::with_capacity(by_dest.len());
        for (dest, members) in by_dest {
            let mut origins: Vec<NodeId> = members.iter().map(|&i| observations[i].origin).collect();
            origins.sort();
            origins.dedup();
            let anet = AugmentedNetwork::new(net, dest, &origins)?;
            let mut index: HashMap<(StateId, StateId), usize> = HashMap::new();
            let mut transitions: Vec<(StateId, StateId, f64)> = Vec::new();
            let mut member_lists = Vec::with_capacity(members.len());
            for i in members {
                let states = observations[i].states(&anet)?;
                let mut list = Vec::with_capacity(states.len() - 1);
                for pair in states.windows(2) {
                    let key = (pair[0], pair[1]);
                    let t = *index.entry(key).or_insert_with(|| {
                        transitions.push((pair[0], pair[1], 0.0));
                        transitions.len() - 1
                    });
                    transitions[t].2 += 1.0;
                    list.push(t);
                }
                member_lists.push((i, list));
            }
            groups.push(DestinationGroup {
                anet,
                transitions,
                members: member_lists,
            });
        }
        Ok(Self {
            net,
            groups,
            n_obs: observations.len(),
        })
    }

    pub fn network(&self) -> &'n Network {
        self.net
    }

    pub fn observation_count(&self) -> usize {
        self.n_obs
    }

    pub fn destinations(&self) -> impl Iterator<Item = &AugmentedNetwork<'n>> {
        self.groups.iter().map(|g| &g.anet)
    }

    /// Number of observed transitions out of states with more than one
    /// action; zero means the likelihood is flat in `beta`.
    pub fn informative_choices(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| {
                g.transitions
                    .iter()
                    .filter(|(k, _, _)| g.anet.succ(*k).len() > 1)
                    .map(|t| t.2 as usize)
            })
            .sum()
    }

    pub fn log_likelihood(&self, spec: &UtilitySpec) -> Result<f64> {
        Ok(self.evaluate(spec, false)?.0)
    }

    pub fn gradient(&self, spec: &UtilitySpec) -> Result<Vec<f64>> {
        Ok(self.evaluate(spec, true)?.1)
    }

    /// Log-likelihood and (when `with_gradient`) its gradient in `beta`.
    pub fn evaluate(&self, spec: &UtilitySpec, with_gradient: bool) -> Result<(f64, Vec<f64>)> {
        let evals = self.evaluate_groups(spec, with_gradient)?;
        let mut ll = 0.0;
        let mut grad = vec![0.0; spec.beta().len()];
        for e in &evals {
            ll += e.ll;
            for (g, x) in grad.iter_mut().zip(&e.gradient) {
                *g += x;
            }
        }
        Ok((ll, grad))
    }

    /// Per-observation score vectors (gradients of each observation's
    /// log-probability), in input order.
    pub fn scores(&self, spec: &UtilitySpec) -> Result<Vec<Vec<f64>>> {
        let evals = self.evaluate_groups(spec, true)?;
        let p = spec.beta().len();
        let mut scores = vec![vec![0.0; p]; self.n_obs];
        for (group, eval) in self.groups.iter().zip(&evals) {
            for (i, list) in &group.members {
                for &t in list {
                    for (s, g) in scores[*i].iter_mut().zip(&eval.per_transition[t].1) {
                        *s += g;
                    }
                }
            }
        }
        Ok(scores)
    }

    fn evaluate_groups(&self, spec: &UtilitySpec, with_gradient: bool) -> Result<Vec<GroupEvaluation>> {
        spec.check(self.net)?;
        let shared = match ValueSystem::new(self.net, spec) {
            Ok(system) => Some(system),
            Err(Error::SingularSystem { .. }) => None,
            Err(e) => return Err(e),
        };
        self.groups
            .par_iter()
            .map(|group| {
                let restricted;
                let system = match &shared {
                    Some(s) => s,
                    None => {
                        restricted = ValueSystem::restricted(&group.anet, spec)?;
                        &restricted
                    }
                };
                evaluate_group(group, system, spec, with_gradient)
            })
            .collect()
    }
}

fn evaluate_group(
    group: &DestinationGroup<'_>,
    system: &ValueSystem<'_>,
    spec: &UtilitySpec,
    with_gradient: bool,
) -> Result<GroupEvaluation> {
    let anet = &group.anet;
    let vf = system.solve(anet)?;
    let mu = spec.mu();
    let p = spec.beta().len();
    let dest = anet.dest_state();
    let w = |a: StateId| -> f64 {
        if a == dest {
            1.0
        } else {
            system.weights()[a.0]
        }
    };
    let x = |a: StateId, m: usize| -> f64 { anet.attributes(a).map_or(0.0, |x| x[m]) };
    let utilities = action_utilities(anet, spec);

    // dz[m][state]
    let mut dz = vec![vec![0.0; anet.state_count()]; if with_gradient { p } else { 0 }];
    if with_gradient {
        let net = anet.base();
        for (m, dzm) in dz.iter_mut().enumerate() {
            let rhs: Vec<f64> = net
                .arcs()
                .iter()
                .map(|arc| {
                    net.outgoing(arc.to)
                        .iter()
                        .map(|&a| {
                            let s = anet.arc_state(a);
                            w(s) * x(s, m) / mu * vf.z(s)
                        })
                        .sum()
                })
                .collect();
            let solved = system.solve_arcs(&rhs);
            for arc in net.arcs() {
                let s = anet.arc_state(arc.id);
                if anet.reaches_destination(s) {
                    dzm[s.0] = solved[arc.id.0];
                }
            }
            for &o in anet.origins() {
                let s = anet.origin_state(o).unwrap();
                dzm[s.0] = anet
                    .succ(s)
                    .iter()
                    .map(|&a| w(a) * (x(a, m) / mu * vf.z(a) + dzm[a.0]))
                    .sum();
            }
        }
    }

    let mut ll = 0.0;
    let mut gradient = vec![0.0; p];
    let mut per_transition = Vec::with_capacity(group.transitions.len());
    for &(k, a, count) in &group.transitions {
        let total: f64 = anet.succ(k).iter().map(|&b| w(b) * vf.z(b)).sum();
        let za = vf.z(a);
        let log_p = utilities[a.0] / mu + za.ln() - total.ln();
        ll += count * log_p;
        let mut g = vec![0.0; p];
        if with_gradient {
            for (m, gm) in g.iter_mut().enumerate() {
                let own = x(a, m) / mu + dz[m][a.0] / za;
                let expected: f64 = anet
                    .succ(k)
                    .iter()
                    .map(|&b| w(b) * (x(b, m) / mu * vf.z(b) + dz[m][b.0]))
                    .sum::<f64>()
                    / total;
                *gm = own - expected;
                gradient[m] += count * *gm;
            }
        }
        per_transition.push((log_p, g));
    }
    Ok(GroupEvaluation {
        ll,
        gradient,
        per_transition,
    })
}

pub fn log_likelihood(obs: &[Observation], net: &Network, spec: &UtilitySpec) -> Result<f64> {
    RlLikelihood::new(net, obs)?.log_likelihood(spec)
}

pub fn log_likelihood_gradient(obs: &[Observation], net: &Network, spec: &UtilitySpec) -> Result<Vec<f64>> {
    RlLikelihood::new(net, obs)?.gradient(spec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub max_steps: usize,
    /// Resample any trajectory that revisits a node.
    pub reject_cycles: bool,
    /// Attempts before giving up when `reject_cycles` is set.
    pub max_attempts: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            max_steps: 10_000,
            reject_cycles: false,
            max_attempts: 10_000,
        }
    }
}

/// Markov walk from `origin_state` to the destination dummy, choosing each
/// action by inverse CDF over the ordered successor list.
pub fn sample_states<R: Rng + ?Sized>(
    cm: &ChoiceMatrix,
    origin_state: StateId,
    rng: &mut R,
    max_steps: usize,
) -> Result<Vec<StateId>> {
    if max_steps == 0 {
        return Err(Error::Validation("max_steps must be at least 1".into()));
    }
    if origin_state.0 >= cm.rows.len() {
        return Err(Error::UnknownState(origin_state.0));
    }
    let mut states = vec![origin_state];
    let mut current = origin_state;
    for _ in 0..max_steps {
        let row = &cm.rows[current.0];
        if row.is_empty() {
            return Ok(states);
        }
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut chosen = None;
        for &(a, p) in row {
            cumulative += p;
            if p > 0.0 {
                chosen = Some(a);
                if u < cumulative {
                    break;
                }
            }
        }
        current = chosen.ok_or(Error::UnknownState(current.0))?;
        states.push(current);
    }
    if cm.rows[current.0].is_empty() {
        Ok(states)
    } else {
        Err(Error::MaxStepsExceeded { max_steps })
    }
}

pub fn sample_observation<R: Rng + ?Sized>(
    cm: &ChoiceMatrix,
    anet: &AugmentedNetwork<'_>,
    origin_state: StateId,
    rng: &mut R,
    options: &SampleOptions,
) -> Result<Observation> {
    let attempts = if options.reject_cycles { options.max_attempts } else { 1 };
    for _ in 0..attempts {
        let states = sample_states(cm, origin_state, rng, options.max_steps)?;
        let obs = Observation::from_states(anet, &states)?;
        if !options.reject_cycles || obs.is_loopless(anet.base()) {
            return Ok(obs);
        }
    }
    Err(Error::NoConvergence {
        what: "cycle-free path sampling",
        iterations: attempts,
    })
}

/// Seeded single-path sampler.
pub fn sample_path(
    cm: &ChoiceMatrix,
    anet: &AugmentedNetwork<'_>,
    origin_state: StateId,
    seed: u64,
    max_steps: usize,
) -> Result<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let options = SampleOptions {
        max_steps,
        ..SampleOptions::default()
    };
    sample_observation(cm, anet, origin_state, &mut rng, &options)
}
