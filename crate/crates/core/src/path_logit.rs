//! Path-based logit over explicit choice sets.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{Network, NodeId};
use crate::rl_model::Observation;
use crate::shortest_path::{k_shortest_paths, Path};
use crate::value_function::UtilitySpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Explicit,
    Generated,
    AugmentedWithChosen,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Explicit => "explicit",
            Provenance::Generated => "generated",
            Provenance::AugmentedWithChosen => "augmented-with-chosen",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceSet {
    pub origin: NodeId,
    pub destination: NodeId,
    pub paths: Vec<Path>,
    pub provenance: Provenance,
}

impl ChoiceSet {
    /// Checks that the set is nonempty, paths are distinct and all connect
    /// the OD pair.
    pub fn new(
        net: &Network,
        origin: NodeId,
        destination: NodeId,
        paths: Vec<Path>,
        provenance: Provenance,
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Validation("choice set is empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &paths {
            if p.origin(net) != origin || p.destination(net) != destination {
                return Err(Error::InvalidPath(format!(
                    "path {} does not connect {} to {}",
                    p.display(net),
                    net.node_name(origin),
                    net.node_name(destination)
                )));
            }
            if !seen.insert(p) {
                return Err(Error::Validation(format!(
                    "path {} appears twice in a choice set",
                    p.display(net)
                )));
            }
        }
        Ok(Self {
            origin,
            destination,
            paths,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn position(&self, path: &Path) -> Option<usize> {
        self.paths.iter().position(|p| p == path)
    }

    /// The set with `chosen` appended if it is not already present.
    pub fn with_chosen(&self, net: &Network, chosen: &Path) -> Result<ChoiceSet> {
        if self.position(chosen).is_some() {
            return Ok(self.clone());
        }
        let mut paths = self.paths.clone();
        paths.push(chosen.clone());
        ChoiceSet::new(
            net,
            self.origin,
            self.destination,
            paths,
            Provenance::AugmentedWithChosen,
        )
    }
}

/// Reads blocks of the form
///
/// ```text
/// od: o,d
/// o,A,B,d
/// o,E,d
/// ```
pub fn parse_choice_sets(net: &Network, text: &str) -> Result<Vec<ChoiceSet>> {
    let mut sets = Vec::new();
    let mut current: Option<(NodeId, NodeId, Vec<Path>, usize)> = None;
    let finish = |cur: Option<(NodeId, NodeId, Vec<Path>, usize)>, sets: &mut Vec<ChoiceSet>| -> Result<()> {
        if let Some((o, d, paths, line)) = cur {
            let set = ChoiceSet::new(net, o, d, paths, Provenance::Explicit)
                .map_err(|e| Error::parse(line, e.to_string()))?;
            sets.push(set);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("od:") {
            finish(current.take(), &mut sets)?;
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(Error::parse(i + 1, "expected `od: <origin>,<destination>`"));
            }
            let o = net
                .node(parts[0])
                .ok_or_else(|| Error::parse(i + 1, format!("unknown node `{}`", parts[0])))?;
            let d = net
                .node(parts[1])
                .ok_or_else(|| Error::parse(i + 1, format!("unknown node `{}`", parts[1])))?;
            current = Some((o, d, Vec::new(), i + 1));
            continue;
        }
        let Some((_, _, paths, _)) = current.as_mut() else {
            return Err(Error::parse(i + 1, "path listed before any `od:` header"));
        };
        let tokens: Vec<&str> = line.split(',').collect();
        let path = Path::from_node_tokens(net, &tokens).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        paths.push(path);
    }
    finish(current, &mut sets)?;
    Ok(sets)
}

pub fn format_choice_sets(net: &Network, sets: &[ChoiceSet]) -> String {
    let mut out = String::new();
    for set in sets {
        out.push_str(&format!(
            "od: {},{}\n",
            net.node_name(set.origin),
            net.node_name(set.destination)
        ));
        out.push_str(&crate::shortest_path::format_paths(net, &set.paths));
    }
    out
}

/// `beta . sum of arc attributes`.
pub fn path_utility(path: &Path, net: &Network, spec: &UtilitySpec) -> Result<f64> {
    spec.check(net)?;
    Ok(spec.utility(&path.attributes(net)))
}

fn softmax(utilities: &[f64], mu: f64) -> Vec<f64> {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = utilities.iter().map(|v| ((v - max) / mu).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn log_sum_exp(utilities: &[f64], mu: f64) -> f64 {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = utilities.iter().map(|v| ((v - max) / mu).exp()).sum();
    max + mu * total.ln()
}

pub fn pl_probabilities(cs: &ChoiceSet, net: &Network, spec: &UtilitySpec) -> Result<Vec<f64>> {
    let v = cs
        .paths
        .iter()
        .map(|p| path_utility(p, net, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax(&v, spec.mu()))
}

/// `mu ln sum exp(v/mu)` over the set.
pub fn choice_set_logsum(cs: &ChoiceSet, net: &Network, spec: &UtilitySpec) -> Result<f64> {
    let v = cs
        .paths
        .iter()
        .map(|p| path_utility(p, net, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&v, spec.mu()))
}

/// How the base choice set of each observation is obtained.
#[derive(Clone, Debug)]
pub enum ChoiceSetGenerator {
    /// Sets read from a file, matched to observations by OD pair.
    Explicit(Vec<ChoiceSet>),
    /// The `k` cheapest loopless paths under a per-arc cost.
    KShortest { k: usize, cost: Vec<f64> },
}

/// One choice set per observation, with the chosen path appended where it
/// is missing.
pub fn build_choice_sets(
    net: &Network,
    observations: &[Observation],
    generator: &ChoiceSetGenerator,
) -> Result<Vec<ChoiceSet>> {
    let mut generated: Vec<ChoiceSet> = Vec::new();
    observations
        .iter()
        .map(|obs| {
            let chosen = obs.path(net)?;
            let base = match generator {
                ChoiceSetGenerator::Explicit(sets) => sets
                    .iter()
                    .find(|s| s.origin == obs.origin && s.destination == obs.destination)
                    .cloned()
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "no choice set for OD pair {},{}",
                            net.node_name(obs.origin),
                            net.node_name(obs.destination)
                        ))
                    })?,
                ChoiceSetGenerator::KShortest { k, cost } => {
                    match generated
                        .iter()
                        .find(|s| s.origin == obs.origin && s.destination == obs.destination)
                    {
                        Some(s) => s.clone(),
                        None => {
                            let paths = k_shortest_paths(net, cost, obs.origin, obs.destination, *k)?;
                            let set = ChoiceSet::new(
                                net,
                                obs.origin,
                                obs.destination,
                                paths,
                                Provenance::Generated,
                            )?;
                            generated.push(set.clone());
                            set
                        }
                    }
                }
            };
            base.with_chosen(net, &chosen)
        })
        .collect()
}

/// Precomputed path attribute sums for each observation's choice set.
#[derive(Clone, Debug)]
pub struct PlLikelihood {
    items: Vec<(Vec<Vec<f64>>, usize)>,
    attribute_count: usize,
}

impl PlLikelihood {
    pub fn new(net: &Network, observations: &[Observation], choice_sets: &[ChoiceSet]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Validation("no observations".into()));
        }
        if observations.len() != choice_sets.len() {
            return Err(Error::Validation(format!(
                "{} observations but {} choice sets",
                observations.len(),
                choice_sets.len()
            )));
        }
        let items = observations
            .iter()
            .zip(choice_sets)
            .enumerate()
            .map(|(n, (obs, cs))| {
                let chosen = obs.path(net)?;
                let idx = cs.position(&chosen).ok_or(Error::ChosenPathMissing { observation: n })?;
                let x = cs.paths.iter().map(|p| p.attributes(net)).collect();
                Ok((x, idx))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            items,
            attribute_count: net.attribute_count(),
        })
    }

    pub fn observation_count(&self) -> usize {
        self.items.len()
    }

    /// True when every choice set is a singleton, so the likelihood does not
    /// depend on `beta`.
    pub fn is_flat(&self) -> bool {
        self.items.iter().all(|(x, _)| x.len() == 1)
    }

    fn check(&self, spec: &UtilitySpec) -> Result<()> {
        if spec.beta().len() != self.attribute_count {
            return Err(Error::Validation(format!(
                "{} coefficients for {} attributes",
                spec.beta().len(),
                self.attribute_count
            )));
        }
        Ok(())
    }

    /// Log-probability of the chosen path and its gradient, per observation.
    fn per_observation(&self, spec: &UtilitySpec, with_gradient: bool) -> Vec<(f64, Vec<f64>)> {
        let mu = spec.mu();
        self.items
            .par_iter()
            .map(|(x, chosen)| {
                let v: Vec<f64> = x.iter().map(|xi| spec.utility(xi)).collect();
                let lp = (v[*chosen] - log_sum_exp(&v, mu)) / mu;
                let mut g = Vec::new();
                if with_gradient {
                    let p = softmax(&v, mu);
                    g = x[*chosen].iter().map(|xc| xc / mu).collect();
                    for (pi, xi) in p.iter().zip(x) {
                        for (gm, xm) in g.iter_mut().zip(xi) {
                            *gm -= pi * xm / mu;
                        }
                    }
                }
                (lp, g)
            })
            .collect()
    }

    pub fn evaluate(&self, spec: &UtilitySpec, with_gradient: bool) -> Result<(f64, Vec<f64>)> {
        self.check(spec)?;
        let mut ll = 0.0;
        let mut grad = vec![0.0; self.attribute_count];
        for (lp, g) in self.per_observation(spec, with_gradient) {
            ll += lp;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((ll, grad))
    }

    pub fn log_likelihood(&self, spec: &UtilitySpec) -> Result<f64> {
        Ok(self.evaluate(spec, false)?.0)
    }

    pub fn gradient(&self, spec: &UtilitySpec) -> Result<Vec<f64>> {
        Ok(self.evaluate(spec, true)?.1)
    }

    pub fn scores(&self, spec: &UtilitySpec) -> Result<Vec<Vec<f64>>> {
        self.check(spec)?;
        Ok(self
            .per_observation(spec, true)
            .into_iter()
            .map(|(_, g)| g)
            .collect())
    }
}

/// `sum_n ln P(chosen_n | C_n)`.
pub fn pl_log_likelihood(
    observations: &[Observation],
    choice_sets: &[ChoiceSet],
    net: &Network,
    spec: &UtilitySpec,
) -> Result<f64> {
    PlLikelihood::new(net, observations, choice_sets)?.log_likelihood(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::augment;
    use crate::rl_model::{choice_matrix, log_likelihood, path_probability};
    use crate::value_function::backward_induction;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy_spec() -> UtilitySpec {
        UtilitySpec::new(fixtures::TOY_BETA.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn toy_path_utilities() {
        let net = fixtures::toy_network();
        let paths = fixtures::toy_paths(&net);
        let spec = UtilitySpec::new(fixtures::TOY_BETA_STATED.to_vec(), 1.0).unwrap();
        // Under the stated coefficients the link constant barely matters.
        assert_abs_diff_eq!(path_utility(&paths[0], &net, &spec).unwrap(), -1.85, epsilon = 1e-12);
        let spec = toy_spec();
        assert_abs_diff_eq!(path_utility(&paths[0], &net, &spec).unwrap(), -2.3, epsilon = 1e-12);
        assert_abs_diff_eq!(path_utility(&paths[11], &net, &spec).unwrap(), -4.2, epsilon = 1e-12);
        let zero = UtilitySpec::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(path_utility(&paths[3], &net, &zero).unwrap(), 0.0);
        let wrong = UtilitySpec::new(vec![1.0], 1.0).unwrap();
        assert!(path_utility(&paths[0], &net, &wrong).is_err());
    }

    #[test]
    fn small_full_set_matches_recursive_logit() {
        let net = fixtures::small_acyclic();
        let (o, d) = fixtures::default_od(&net);
        let spec = UtilitySpec::new(vec![-1.0], 1.0).unwrap();
        let cs = ChoiceSet::new(&net, o, d, fixtures::small_paths(&net), Provenance::Explicit).unwrap();
        let p = pl_probabilities(&cs, &net, &spec).unwrap();
        for (got, want) in p.iter().zip([0.6572, 0.0120, 0.2418, 0.0889]) {
            assert_abs_diff_eq!(*got, want, epsilon = 5e-5);
        }
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);

        let anet = augment(&net, o, d).unwrap();
        let vf = backward_induction(&anet, &spec).unwrap();
        let cm = choice_matrix(&vf, &anet, &spec).unwrap();
        for (path, pl) in cs.paths.iter().zip(&p) {
            let rl = path_probability(&Observation::from_path(&net, path), &anet, &cm).unwrap();
            assert_abs_diff_eq!(rl, *pl, epsilon = 1e-10);
        }
        let obs = vec![Observation::from_path(&net, &cs.paths[2])];
        let ll = pl_log_likelihood(&obs, std::slice::from_ref(&cs), &net, &spec).unwrap();
        assert_abs_diff_eq!(ll, p[2].ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ll, (0.2418f64).ln(), epsilon = 1e-3);
    }

    #[test]
    fn singleton_sets() {
        let net = fixtures::toy_network();
        let paths = fixtures::toy_paths(&net);
        let (o, d) = fixtures::default_od(&net);
        let cs = ChoiceSet::new(&net, o, d, vec![paths[4].clone()], Provenance::Explicit).unwrap();
        assert_eq!(pl_probabilities(&cs, &net, &toy_spec()).unwrap(), vec![1.0]);
        let obs = vec![Observation::from_path(&net, &paths[4])];
        let lik = PlLikelihood::new(&net, &obs, &[cs]).unwrap();
        assert!(lik.is_flat());
        let (ll, g) = lik.evaluate(&toy_spec(), true).unwrap();
        assert_eq!(ll, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chosen_path_appended() {
        let net = fixtures::toy_network();
        let paths = fixtures::toy_paths(&net);
        let c1 = fixtures::toy_choice_set(&net, 1);
        assert_eq!(c1.len(), 5);
        assert_eq!(c1.provenance, Provenance::Explicit);
        let obs = vec![
            Observation::from_path(&net, &paths[6]),
            Observation::from_path(&net, &paths[1]),
        ];
        let sets = build_choice_sets(&net, &obs, &ChoiceSetGenerator::Explicit(vec![c1.clone()])).unwrap();
        assert_eq!(sets[0].len(), 6);
        assert_eq!(sets[0].provenance, Provenance::AugmentedWithChosen);
        assert_eq!(sets[1], c1);
        let wrong = vec![Observation::from_path(&net, &paths[6])];
        assert!(matches!(
            pl_log_likelihood(&wrong, &[c1], &net, &toy_spec()),
            Err(Error::ChosenPathMissing { observation: 0 })
        ));
    }

    #[test]
    fn generated_sets_are_the_cheapest_paths() {
        let net = fixtures::toy_network();
        let paths = fixtures::toy_paths(&net);
        let spec = toy_spec();
        let cost: Vec<f64> = spec.arc_utilities(&net).iter().map(|v| -v).collect();
        let obs = vec![Observation::from_path(&net, &paths[0])];
        let sets = build_choice_sets(&net, &obs, &ChoiceSetGenerator::KShortest { k: 8, cost }).unwrap();
        assert_eq!(sets[0].provenance, Provenance::Generated);
        let got: HashSet<_> = sets[0].paths.iter().collect();
        let c2 = fixtures::toy_choice_set(&net, 2);
        let want: HashSet<_> = c2.paths.iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn choice_set_file_round_trip() {
        let net = fixtures::toy_network();
        let sets: Vec<ChoiceSet> = (1..=4).map(|i| fixtures::toy_choice_set(&net, i)).collect();
        assert_eq!(
            sets.iter().map(ChoiceSet::len).collect::<Vec<_>>(),
            vec![5, 8, 12, 15]
        );
        let text = format_choice_sets(&net, &sets);
        assert_eq!(parse_choice_sets(&net, &text).unwrap(), sets);
        assert!(matches!(
            parse_choice_sets(&net, "o,E,G,d@14\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_choice_sets(&net, "od: o,d\no,E,G,d@14\no,E,G,d@14\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_choice_sets(&net, "od: o,d\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn full_set_likelihood_equals_recursive_logit() {
        let net = fixtures::toy_network();
        let spec = toy_spec();
        let paths = fixtures::toy_paths(&net);
        let c4 = fixtures::toy_choice_set(&net, 4);
        let obs: Vec<Observation> = [0, 0, 3, 7, 14, 2, 9]
            .iter()
            .map(|&i| Observation::from_path(&net, &paths[i]))
            .collect();
        let sets = vec![c4; obs.len()];
        let pl = pl_log_likelihood(&obs, &sets, &net, &spec).unwrap();
        let rl = log_likelihood(&obs, &net, &spec).unwrap();
        assert_abs_diff_eq!(pl, rl, epsilon = 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = fixtures::toy_network();
        let paths = fixtures::toy_paths(&net);
        let c3 = fixtures::toy_choice_set(&net, 3);
        let obs: Vec<Observation> = [0, 1, 5, 10].iter().map(|&i| Observation::from_path(&net, &paths[i])).collect();
        let lik = PlLikelihood::new(&net, &obs, &vec![c3; 4]).unwrap();
        let beta = [-1.3, 0.4];
        let g = lik.gradient(&UtilitySpec::new(beta.to_vec(), 1.0).unwrap()).unwrap();
        let h = 1e-6;
        for m in 0..2 {
            let mut up = beta.to_vec();
            let mut down = beta.to_vec();
            up[m] += h;
            down[m] -= h;
            let fd = (lik.log_likelihood(&UtilitySpec::new(up, 1.0).unwrap()).unwrap()
                - lik.log_likelihood(&UtilitySpec::new(down, 1.0).unwrap()).unwrap())
                / (2.0 * h);
            assert!((g[m] - fd).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn softmax_properties(
            v in proptest::collection::vec(-30.0f64..30.0, 2..10),
            shift in -100.0f64..100.0,
            drop in 0usize..10,
            mu in 0.2f64..3.0,
        ) {
            let p = softmax(&v, mu);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted, mu)) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let drop = drop % v.len();
            let mut reduced = v.clone();
            reduced.remove(drop);
            let q = softmax(&reduced, mu);
            let rest: f64 = p.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, x)| x).sum();
            let mut j = 0;
            for (i, pi) in p.iter().enumerate() {
                if i == drop { continue; }
                prop_assert!(q[j] >= *pi);
                prop_assert!((q[j] - pi / rest).abs() <= 1e-9 * q[j].max(1e-300));
                j += 1;
            }
            // logsum never decreases when a path is added
            prop_assert!(log_sum_exp(&v, mu) >= log_sum_exp(&reduced, mu));
        }
    }
}
