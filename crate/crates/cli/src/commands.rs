use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use route_choice::estimation::{
    estimate_pl, estimate_rl, format_estimation_report, simulate_observations, EstimationOptions, EstimationResult,
    StdErrorMethod, SyntheticConfig,
};
use route_choice::path_logit::{
    build_choice_sets, format_choice_sets, parse_choice_sets, pl_probabilities, ChoiceSet, ChoiceSetGenerator,
    Provenance,
};
use route_choice::prediction::{accessibility_pl, accessibility_rl, link_flows_pl, link_flows_rl, DemandVector};
use route_choice::rl_model::{
    choice_matrix, format_observations, parse_observations, path_probability, Observation, SampleOptions,
};
use route_choice::shortest_path::k_shortest_paths;
use route_choice::value_function::{format_value_field, solve_auto};
use route_choice::{augment, AugmentedNetwork, Error, Network, NodeId, UtilitySpec};

use crate::config::{Resolved, StdErrors};

/// What a command produced; non-convergence maps to its own exit code.
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub converged: bool,
}

impl Outcome {
    fn done(written: Vec<PathBuf>) -> Self {
        Self {
            written,
            converged: true,
        }
    }
}

struct Session<'a> {
    run: &'a Resolved,
    net: Network,
}

impl<'a> Session<'a> {
    fn new(run: &'a Resolved) -> Result<Self> {
        let path = run.network_path()?;
        let full = Network::load(&path).with_context(|| format!("loading network {}", path.display()))?;
        let net = if run.config.attributes.is_empty() {
            full
        } else {
            full.select_attributes(&run.config.attributes)?
        };
        Ok(Self { run, net })
    }

    fn spec(&self) -> Result<UtilitySpec> {
        let beta = &self.run.config.beta;
        if beta.len() != self.net.attribute_count() {
            bail!(
                "beta has {} entries but the utility has {} attributes ({})",
                beta.len(),
                self.net.attribute_count(),
                self.net.attribute_names().join(", ")
            );
        }
        Ok(UtilitySpec::new(beta.clone(), self.run.mu())?)
    }

    fn node(&self, name: &str) -> Result<NodeId> {
        Ok(self.net.require_node(name)?)
    }

    fn origin(&self) -> Result<NodeId> {
        match &self.run.config.origin {
            Some(o) => self.node(o),
            None => bail!("no origin configured"),
        }
    }

    fn destinations(&self) -> Result<Vec<NodeId>> {
        if self.run.config.destinations.is_empty() {
            bail!("no destinations configured");
        }
        self.run.config.destinations.iter().map(|d| self.node(d)).collect()
    }

    fn observations(&self) -> Result<Vec<Observation>> {
        let Some(p) = &self.run.config.observations else {
            bail!("no observation file configured");
        };
        let path = self.run.path(p);
        let text = fs::read_to_string(&path).with_context(|| format!("reading observations {}", path.display()))?;
        let obs = parse_observations(&self.net, &text).with_context(|| format!("in {}", path.display()))?;
        if obs.is_empty() {
            return Err(Error::Validation(format!("{} contains no observations", path.display())).into());
        }
        Ok(obs)
    }

    /// `(label, sets)` for each configured choice-set file.
    fn choice_sets(&self) -> Result<Vec<(String, Vec<ChoiceSet>)>> {
        self.run
            .config
            .choice_sets
            .iter()
            .map(|p| self.choice_set_file(p))
            .collect()
    }

    fn choice_set_file(&self, p: &Path) -> Result<(String, Vec<ChoiceSet>)> {
        let path = self.run.path(p);
        let text = fs::read_to_string(&path).with_context(|| format!("reading choice sets {}", path.display()))?;
        let sets = parse_choice_sets(&self.net, &text).with_context(|| format!("in {}", path.display()))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok((label, sets))
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let dir = self.run.output_dir();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let text = format!("# config sha256 {}\n{body}", self.run.hash);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn number(&self, x: f64, decimals: usize) -> String {
        if self.run.config.rounded {
            format!("{x:.decimals$}")
        } else {
            format!("{x:e}")
        }
    }
}

fn find_set(sets: &[ChoiceSet], o: NodeId, d: NodeId) -> Option<&ChoiceSet> {
    sets.iter().find(|s| s.origin == o && s.destination == d)
}

/// Every node other than `d` that can reach it.
fn all_origins(net: &Network, d: NodeId) -> Vec<NodeId> {
    let reaching = net.nodes_reaching(d);
    net.nodes().filter(|&n| n != d && reaching[n.0]).collect()
}

pub fn values(run: &Resolved) -> Result<Outcome> {
    let cx = Session::new(run)?;
    let spec = cx.spec()?;
    let precision = run.config.rounded.then_some(4);
    let mut written = Vec::new();
    for d in cx.destinations()? {
        let anet = AugmentedNetwork::new(&cx.net, d, &all_origins(&cx.net, d))?;
        let vf = solve_auto(&anet, &spec)?;
        let mut nodes = String::from("node,V\n");
        for n in cx.net.nodes() {
            let v = vf
                .node_value(&anet, n)
                .map_or("-inf".to_string(), |v| cx.number(v, 4));
            let _ = writeln!(nodes, "{},{v}", cx.net.node_name(n));
        }
        let name = cx.net.node_name(d);
        written.push(cx.write(&format!("values_{name}.csv"), &nodes)?);
        written.push(cx.write(
            &format!("states_{name}.csv"),
            &format_value_field(&anet, &vf, precision),
        )?);
    }
    Ok(Outcome::done(written))
}

fn estimation_options(run: &Resolved) -> EstimationOptions {
    EstimationOptions {
        gradient_tol: run.config.solver.tolerance,
        max_iterations: run.config.solver.max_iterations,
        std_errors: match run.config.solver.std_errors {
            StdErrors::None => StdErrorMethod::None,
            StdErrors::Hessian => StdErrorMethod::Hessian,
            StdErrors::Sandwich => StdErrorMethod::Sandwich,
        },
    }
}

pub fn estimate(run: &Resolved) -> Result<Outcome> {
    let cx = Session::new(run)?;
    let obs = cx.observations()?;
    let dim = cx.net.attribute_count();
    let init = if run.config.beta.is_empty() {
        vec![0.0; dim]
    } else {
        cx.spec()?.beta().to_vec()
    };
    let options = estimation_options(run);
    let mut rows: Vec<(String, EstimationResult)> = Vec::new();
    if run.config.model.includes_rl() {
        let result = match estimate_rl(&obs, &cx.net, &init, run.mu(), &options) {
            Ok(r) => r,
            Err(Error::EstimationDidNotConverge(r)) => *r,
            Err(e) => return Err(e.into()),
        };
        rows.push(("RL".into(), result));
    }
    if run.config.model.includes_pl() {
        let files = cx.choice_sets()?;
        if files.is_empty() {
            bail!("path logit estimation needs at least one choice-set file");
        }
        for (label, base) in files {
            let sets = build_choice_sets(&cx.net, &obs, &ChoiceSetGenerator::Explicit(base))?;
            let result = estimate_pl(&obs, &sets, &cx.net, &init, run.mu(), &options)?;
            rows.push((format!("PL({label})"), result));
        }
    }
    let report = format_estimation_report(cx.net.attribute_names(), &rows, run.config.rounded);
    let written = vec![cx.write("estimation.csv", &report)?];
    let converged = rows.iter().all(|(_, r)| r.converged);
    for (label, r) in &rows {
        if let Some(why) = &r.std_error_failure {
            eprintln!("{label}: no standard errors ({why})");
        }
        if !r.converged {
            eprintln!("{label}: did not converge after {} iterations", r.iterations);
        }
    }
    Ok(Outcome { written, converged })
}

pub fn predict(run: &Resolved) -> Result<Outcome> {
    let cx = Session::new(run)?;
    let spec = cx.spec()?;
    let o = cx.origin()?;
    let demand = run.config.predict.demand;
    let pl_files = if run.config.model.includes_pl() {
        cx.choice_sets()?
    } else {
        Vec::new()
    };
    let mut written = Vec::new();
    for d in cx.destinations()? {
        let mut columns: Vec<(String, Vec<f64>, f64)> = Vec::new();
        for (label, sets) in &pl_files {
            let Some(cs) = find_set(sets, o, d) else {
                bail!(
                    "{label} has no choice set for {},{}",
                    cx.net.node_name(o),
                    cx.net.node_name(d)
                );
            };
            let probs = pl_probabilities(cs, &cx.net, &spec)?;
            let flows = link_flows_pl(&cx.net, cs, &probs, demand)?;
            columns.push((format!("PL({label})"), flows.arc_flows, accessibility_pl(cs, &cx.net, &spec)?));
        }
        if run.config.model.includes_rl() {
            let anet = augment(&cx.net, o, d)?;
            let vf = solve_auto(&anet, &spec)?;
            let cm = choice_matrix(&vf, &anet, &spec)?;
            let flows = link_flows_rl(&cm, &anet, &DemandVector::single(o, d, demand)?)?;
            columns.push(("RL".into(), flows.arc_flows, accessibility_rl(&vf, &anet, o)?));
        }
        let mut grid = String::from("link_id,from,to");
        for (label, _, _) in &columns {
            let _ = write!(grid, ",{label}");
        }
        grid.push('\n');
        for arc in cx.net.arcs() {
            let _ = write!(grid, "{},{},{}", arc.id, cx.net.node_name(arc.from), cx.net.node_name(arc.to));
            for (_, flows, _) in &columns {
                let _ = write!(grid, ",{}", cx.number(flows[arc.id.0], 2));
            }
            grid.push('\n');
        }
        let mut access = String::from("model,accessibility\n");
        for (label, _, a) in &columns {
            let _ = writeln!(access, "{label},{}", cx.number(*a, 4));
        }
        let name = cx.net.node_name(d);
        written.push(cx.write(&format!("flows_{name}.csv"), &grid)?);
        written.push(cx.write(&format!("accessibility_{name}.csv"), &access)?);
    }
    Ok(Outcome::done(written))
}

pub fn simulate(run: &Resolved) -> Result<Outcome> {
    let cx = Session::new(run)?;
    let spec = cx.spec()?;
    let o = cx.origin()?;
    let destinations = cx.destinations()?;
    let n = run.config.simulate.n;
    if n == 0 {
        bail!("simulate.n must be at least 1");
    }
    // Observations are split evenly across destinations, remainder first.
    let share = n / destinations.len();
    let extra = n % destinations.len();
    let od_demand = destinations
        .iter()
        .enumerate()
        .map(|(i, &d)| (o, d, share + usize::from(i < extra)))
        .filter(|t| t.2 > 0)
        .collect();
    let restriction = match &run.config.simulate.restriction {
        Some(p) => Some(cx.choice_set_file(p)?.1),
        None => None,
    };
    let cfg = SyntheticConfig {
        true_beta: spec.beta().to_vec(),
        mu: spec.mu(),
        od_demand,
        restriction,
        seed: run.config.seed,
        sampling: SampleOptions {
            max_steps: run.config.simulate.max_steps,
            ..SampleOptions::default()
        },
    };
    let obs = simulate_observations(&cfg, &cx.net)?;
    let written = vec![cx.write("observations.txt", &format_observations(&cx.net, &obs)?)?];
    Ok(Outcome::done(written))
}

/// OD pairs from the observations when present, else origin x destinations.
fn od_pairs(cx: &Session<'_>) -> Result<Vec<(NodeId, NodeId)>> {
    if cx.run.config.observations.is_some() {
        let mut pairs: Vec<(NodeId, NodeId)> = cx
            .observations()?
            .iter()
            .map(|o| (o.origin, o.destination))
            .collect();
        pairs.sort();
        pairs.dedup();
        return Ok(pairs);
    }
    let o = cx.origin()?;
    Ok(cx.destinations()?.into_iter().map(|d| (o, d)).collect())
}

pub fn choicesets(run: &Resolved) -> Result<Outcome> {
    let cx = Session::new(run)?;
    let cost: Vec<f64> = match &run.config.generate.cost {
        Some(name) => {
            let column = cx
                .net
                .attribute_names()
                .iter()
                .position(|n| n == name)
                .with_context(|| format!("unknown cost attribute `{name}`"))?;
            cx.net.arcs().iter().map(|a| a.attributes[column]).collect()
        }
        None => cx.spec()?.arc_utilities(&cx.net).iter().map(|u| -u).collect(),
    };
    let mut sets = Vec::new();
    for (o, d) in od_pairs(&cx)? {
        let paths = k_shortest_paths(&cx.net, &cost, o, d, run.config.generate.k)?;
        sets.push(ChoiceSet::new(&cx.net, o, d, paths, Provenance::Generated)?);
    }
    let written = vec![cx.write("choice_sets.txt", &format_choice_sets(&cx.net, &sets))?];
    Ok(Outcome::done(written))
}

pub fn probabilities(run: &Resolved) -> Result<Outcome> {
    let cx = Session::new(run)?;
    let spec = cx.spec()?;
    let o = cx.origin()?;
    let files = cx.choice_sets()?;
    let mut written = Vec::new();
    for d in cx.destinations()? {
        let anet = augment(&cx.net, o, d)?;
        let vf = solve_auto(&anet, &spec)?;
        let cm = choice_matrix(&vf, &anet, &spec)?;
        let mut links = String::from("state,next,probability\n");
        for k in anet.states() {
            for &(a, p) in cm.row(k) {
                let _ = writeln!(links, "{},{},{}", anet.label(k), anet.label(a), cx.number(p, 4));
            }
        }
        let name = cx.net.node_name(d);
        written.push(cx.write(&format!("link_probabilities_{name}.csv"), &links)?);

        let mut paths = String::from("choice_set,path,rl,pl\n");
        for (label, sets) in &files {
            let Some(cs) = find_set(sets, o, d) else { continue };
            let pl = pl_probabilities(cs, &cx.net, &spec)?;
            for (path, q) in cs.paths.iter().zip(pl) {
                let rl = path_probability(&Observation::from_path(&cx.net, path), &anet, &cm)?;
                let _ = writeln!(
                    paths,
                    "{label},{},{},{}",
                    path.display(&cx.net),
                    cx.number(rl, 4),
                    cx.number(q, 4)
                );
            }
        }
        if !files.is_empty() {
            written.push(cx.write(&format!("path_probabilities_{name}.csv"), &paths)?);
        }
    }
    Ok(Outcome::done(written))
}
