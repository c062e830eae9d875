//! Deterministic shortest paths toward a destination and loopless k-shortest
//! path generation.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::network::{ArcId, Network, NodeId};

/// A chain of arcs, head of each equal to the tail of the next.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    arcs: Vec<ArcId>,
}

impl Path {
    pub fn new(net: &Network, arcs: Vec<ArcId>) -> Result<Path> {
        if arcs.is_empty() {
            return Err(Error::InvalidPath("empty path".into()));
        }
        if let Some(bad) = arcs.iter().find(|a| a.0 >= net.arc_count()) {
            return Err(Error::InvalidPath(format!("unknown arc {bad}")));
        }
        for pair in arcs.windows(2) {
            if net.arc(pair[0]).to != net.arc(pair[1]).from {
                return Err(Error::InvalidPath(format!(
                    "arc {} does not continue arc {}",
                    pair[1], pair[0]
                )));
            }
        }
        Ok(Path { arcs })
    }

    /// Resolves a node sequence. A token `name@id` pins the arc used to reach
    /// `name`; it is required when several arcs join the same pair of nodes.
    pub fn from_node_tokens<S: AsRef<str>>(net: &Network, tokens: &[S]) -> Result<Path> {
        if tokens.len() < 2 {
            return Err(Error::InvalidPath(
                "a path needs at least two nodes".into(),
            ));
        }
        let split = |tok: &str| -> Result<(NodeId, Option<usize>)> {
            let (name, selector) = match tok.split_once('@') {
                Some((name, id)) => {
                    let id = id
                        .parse()
                        .map_err(|_| Error::InvalidPath(format!("bad arc selector in `{tok}`")))?;
                    (name, Some(id))
                }
                None => (tok, None),
            };
            Ok((net.require_node(name.trim())?, selector))
        };
        let (mut current, first_sel) = split(tokens[0].as_ref().trim())?;
        if first_sel.is_some() {
            return Err(Error::InvalidPath(
                "the first node cannot carry an arc selector".into(),
            ));
        }
        let mut arcs = Vec::with_capacity(tokens.len() - 1);
        for tok in &tokens[1..] {
            let (next, selector) = split(tok.as_ref().trim())?;
            let candidates: Vec<ArcId> = net.arcs_between(current, next).collect();
            let arc = match (selector, candidates.as_slice()) {
                (_, []) => {
                    return Err(Error::InvalidPath(format!(
                        "no arc from `{}` to `{}`",
                        net.node_name(current),
                        net.node_name(next)
                    )))
                }
                (None, [only]) => *only,
                (None, _) => {
                    return Err(Error::InvalidPath(format!(
                        "ambiguous hop `{}` -> `{}`: add @<arc id>",
                        net.node_name(current),
                        net.node_name(next)
                    )))
                }
                (Some(id), _) => *candidates.iter().find(|a| a.0 == id).ok_or_else(|| {
                    Error::InvalidPath(format!(
                        "arc {id} does not join `{}` to `{}`",
                        net.node_name(current),
                        net.node_name(next)
                    ))
                })?,
            };
            arcs.push(arc);
            current = next;
        }
        Ok(Path { arcs })
    }

    pub fn arcs(&self) -> &[ArcId] {
        &self.arcs
    }

    pub fn origin(&self, net: &Network) -> NodeId {
        net.arc(self.arcs[0]).from
    }

    pub fn destination(&self, net: &Network) -> NodeId {
        net.arc(*self.arcs.last().unwrap()).to
    }

    pub fn nodes(&self, net: &Network) -> Vec<NodeId> {
        let mut nodes = vec![self.origin(net)];
        nodes.extend(self.arcs.iter().map(|&a| net.arc(a).to));
        nodes
    }

    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.arcs.iter().map(|a| cost[a.0]).sum()
    }

    /// Sum of arc attribute vectors.
    pub fn attributes(&self, net: &Network) -> Vec<f64> {
        let mut total = vec![0.0; net.attribute_count()];
        for &a in &self.arcs {
            for (t, x) in total.iter_mut().zip(&net.arc(a).attributes) {
                *t += x;
            }
        }
        total
    }

    pub fn is_loopless(&self, net: &Network) -> bool {
        let nodes = self.nodes(net);
        let unique: HashSet<_> = nodes.iter().collect();
        unique.len() == nodes.len()
    }

    /// Node tokens, with `@id` added only on ambiguous hops.
    pub fn to_tokens(&self, net: &Network) -> Vec<String> {
        let mut tokens = vec![net.node_name(self.origin(net)).to_string()];
        for &a in &self.arcs {
            let arc = net.arc(a);
            let name = net.node_name(arc.to);
            if net.arcs_between(arc.from, arc.to).nth(1).is_some() {
                tokens.push(format!("{name}@{}", a.0));
            } else {
                tokens.push(name.to_string());
            }
        }
        tokens
    }

    pub fn display(&self, net: &Network) -> String {
        self.to_tokens(net).join("-")
    }
}

/// Reads a path file: one path per line as comma-separated node tokens.
/// Blank lines and `#` comments are skipped.
pub fn parse_paths(net: &Network, text: &str) -> Result<Vec<Path>> {
    let mut paths = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').collect();
        let path = Path::from_node_tokens(net, &tokens).map_err(|e| match e {
            Error::InvalidPath(m) | Error::Validation(m) => Error::parse(i + 1, m),
            Error::UnknownNode(n) => Error::parse(i + 1, format!("unknown node `{n}`")),
            other => other,
        })?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn format_paths(net: &Network, paths: &[Path]) -> String {
    let mut out = String::new();
    for p in paths {
        out.push_str(&p.to_tokens(net).join(","));
        out.push('\n');
    }
    out
}

/// Cost-to-destination per node. Unreachable nodes hold `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostField {
    pub destination: NodeId,
    pub values: Vec<Option<f64>>,
    /// Best first arc out of each node toward the destination.
    pub next_arc: Vec<Option<ArcId>>,
}

impl CostField {
    pub fn cost(&self, node: NodeId) -> Option<f64> {
        self.values[node.0]
    }

    /// Follows `next_arc` pointers from `origin`.
    pub fn path_from(&self, net: &Network, origin: NodeId) -> Option<Path> {
        if origin == self.destination {
            return None;
        }
        self.values[origin.0]?;
        let mut arcs = Vec::new();
        let mut node = origin;
        while node != self.destination {
            let arc = self.next_arc[node.0]?;
            arcs.push(arc);
            node = net.arc(arc).to;
            if arcs.len() > net.arc_count() {
                return None;
            }
        }
        Some(Path { arcs })
    }

    /// Largest violation of `C(i) = min_(i,j) c_ij + C(j)` over reachable nodes.
    pub fn optimality_gap(&self, net: &Network, cost: &[f64]) -> f64 {
        let mut gap: f64 = 0.0;
        for node in net.nodes() {
            let Some(c) = self.values[node.0] else { continue };
            if node == self.destination {
                gap = gap.max(c.abs());
                continue;
            }
            let best = net
                .outgoing(node)
                .iter()
                .filter_map(|&a| self.values[net.arc(a).to.0].map(|cj| cost[a.0] + cj))
                .fold(f64::INFINITY, f64::min);
            gap = gap.max((c - best).abs());
        }
        gap
    }
}

fn check_cost_len(net: &Network, cost: &[f64]) -> Result<()> {
    if cost.len() != net.arc_count() {
        return Err(Error::Validation(format!(
            "cost vector has {} entries for {} arcs",
            cost.len(),
            net.arc_count()
        )));
    }
    if let Some(bad) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::Validation(format!("non-finite arc cost {bad}")));
    }
    Ok(())
}

/// Backward induction over `|V| - 1` sweeps. A further improving sweep
/// means a negative cycle that reaches the destination.
pub fn bellman_ford(net: &Network, cost: &[f64], dest: NodeId) -> Result<CostField> {
    check_cost_len(net, cost)?;
    let n = net.node_count();
    let mut values: Vec<Option<f64>> = vec![None; n];
    let mut next_arc = vec![None; n];
    values[dest.0] = Some(0.0);

    let relax = |values: &mut Vec<Option<f64>>, next_arc: &mut Vec<Option<ArcId>>| -> bool {
        let mut changed = false;
        for arc in net.arcs() {
            if arc.from == dest {
                continue;
            }
            let Some(cj) = values[arc.to.0] else { continue };
            let candidate = cost[arc.id.0] + cj;
            let better = match values[arc.from.0] {
                None => true,
                Some(ci) => candidate < ci,
            };
            if better {
                values[arc.from.0] = Some(candidate);
                next_arc[arc.from.0] = Some(arc.id);
                changed = true;
            }
        }
        changed
    };

    for _ in 0..n.saturating_sub(1) {
        if !relax(&mut values, &mut next_arc) {
            return Ok(CostField {
                destination: dest,
                values,
                next_arc,
            });
        }
    }
    if relax(&mut values, &mut next_arc) {
        return Err(Error::NegativeCycleDetected);
    }
    Ok(CostField {
        destination: dest,
        values,
        next_arc,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Label-setting search backward from `dest` over incoming arcs.
pub fn dijkstra(net: &Network, cost: &[f64], dest: NodeId) -> Result<CostField> {
    check_cost_len(net, cost)?;
    if let Some((i, &c)) = cost.iter().enumerate().find(|(_, &c)| c < 0.0) {
        return Err(Error::NegativeCostInput { arc: i, cost: c });
    }
    let n = net.node_count();
    let mut values: Vec<Option<f64>> = vec![None; n];
    let mut next_arc = vec![None; n];
    let mut done = vec![false; n];
    values[dest.0] = Some(0.0);
    let mut heap = BinaryHeap::from([HeapEntry {
        cost: 0.0,
        node: dest.0,
    }]);
    while let Some(HeapEntry { cost: c, node }) = heap.pop() {
        if std::mem::replace(&mut done[node], true) {
            continue;
        }
        for &a in net.incoming(NodeId(node)) {
            let tail = net.arc(a).from.0;
            if done[tail] || tail == dest.0 {
                continue;
            }
            let candidate = c + cost[a.0];
            if values[tail].is_none_or(|old| candidate < old) {
                values[tail] = Some(candidate);
                next_arc[tail] = Some(a);
                heap.push(HeapEntry {
                    cost: candidate,
                    node: tail,
                });
            }
        }
    }
    Ok(CostField {
        destination: dest,
        values,
        next_arc,
    })
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Orders by cost, treating near-equal costs as ties broken by the arc-id
/// sequence.
fn path_order(a: &(f64, Path), b: &(f64, Path)) -> Ordering {
    let scale = 1.0_f64.max(a.0.abs()).max(b.0.abs());
    if (a.0 - b.0).abs() <= TIE_TOLERANCE * scale {
        a.1.arcs.cmp(&b.1.arcs)
    } else {
        a.0.total_cmp(&b.0)
    }
}

/// Forward shortest path from `source` to `dest` avoiding banned arcs and
/// nodes.
fn restricted_shortest(
    net: &Network,
    cost: &[f64],
    source: NodeId,
    dest: NodeId,
    banned_arcs: &HashSet<ArcId>,
    banned_nodes: &[bool],
) -> Option<(f64, Vec<ArcId>)> {
    let n = net.node_count();
    let mut dist: Vec<Option<f64>> = vec![None; n];
    let mut via: Vec<Option<ArcId>> = vec![None; n];
    let mut done = vec![false; n];
    dist[source.0] = Some(0.0);
    let mut heap = BinaryHeap::from([HeapEntry {
        cost: 0.0,
        node: source.0,
    }]);
    while let Some(HeapEntry { cost: c, node }) = heap.pop() {
        if std::mem::replace(&mut done[node], true) {
            continue;
        }
        if node == dest.0 {
            break;
        }
        for &a in net.outgoing(NodeId(node)) {
            let head = net.arc(a).to.0;
            if banned_arcs.contains(&a) || banned_nodes[head] || done[head] {
                continue;
            }
            let candidate = c + cost[a.0];
            if dist[head].is_none_or(|old| candidate < old) {
                dist[head] = Some(candidate);
                via[head] = Some(a);
                heap.push(HeapEntry {
                    cost: candidate,
                    node: head,
                });
            }
        }
    }
    let total = dist[dest.0]?;
    let mut arcs = Vec::new();
    let mut node = dest;
    while node != source {
        let a = via[node.0]?;
        arcs.push(a);
        node = net.arc(a).from;
    }
    arcs.reverse();
    Some((total, arcs))
}

/// Yen's loopless k-shortest paths, in nondecreasing cost order.
pub fn k_shortest_paths(
    net: &Network,
    cost: &[f64],
    origin: NodeId,
    dest: NodeId,
    k: usize,
) -> Result<Vec<Path>> {
    Ok(k_shortest_paths_with_costs(net, cost, origin, dest, k)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

pub fn k_shortest_paths_with_costs(
    net: &Network,
    cost: &[f64],
    origin: NodeId,
    dest: NodeId,
    k: usize,
) -> Result<Vec<(f64, Path)>> {
    check_cost_len(net, cost)?;
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if origin == dest {
        return Err(Error::Validation(
            "origin and destination must differ".into(),
        ));
    }
    if let Some((i, &c)) = cost.iter().enumerate().find(|(_, &c)| c < 0.0) {
        return Err(Error::NegativeCostInput { arc: i, cost: c });
    }
    let unreachable = || Error::UnreachableDestination {
        origin: net.node_name(origin).to_string(),
        destination: net.node_name(dest).to_string(),
    };
    let no_nodes = vec![false; net.node_count()];
    let (c0, first) =
        restricted_shortest(net, cost, origin, dest, &HashSet::new(), &no_nodes)
            .ok_or_else(unreachable)?;

    let mut accepted: Vec<(f64, Path)> = vec![(c0, Path { arcs: first })];
    let mut candidates: Vec<(f64, Path)> = Vec::new();
    let mut seen: HashSet<Vec<ArcId>> = HashSet::from([accepted[0].1.arcs.clone()]);

    loop {
        let last = accepted.last().unwrap().1.clone();
        let last_nodes = last.nodes(net);
        for i in 0..last.arcs.len() {
            let spur = last_nodes[i];
            let root = &last.arcs[..i];
            let mut banned_arcs = HashSet::new();
            for (_, p) in &accepted {
                if p.arcs.len() > i && p.arcs[..i] == *root {
                    banned_arcs.insert(p.arcs[i]);
                }
            }
            let mut banned_nodes = vec![false; net.node_count()];
            for &node in &last_nodes[..i] {
                banned_nodes[node.0] = true;
            }
            if let Some((_, spur_arcs)) =
                restricted_shortest(net, cost, spur, dest, &banned_arcs, &banned_nodes)
            {
                let mut arcs = root.to_vec();
                arcs.extend(spur_arcs);
                if seen.insert(arcs.clone()) {
                    let path = Path { arcs };
                    candidates.push((path.cost(cost), path));
                }
            }
        }

        if candidates.is_empty() {
            break;
        }
        let best = (0..candidates.len())
            .min_by(|&a, &b| path_order(&candidates[a], &candidates[b]))
            .unwrap();
        // Keep drawing past k while the next candidate ties the k-th cost so
        // the final tie-break sees every tied path.
        if accepted.len() >= k {
            let kth = &accepted[k - 1];
            let next = &candidates[best];
            let scale = 1.0_f64.max(kth.0.abs());
            if next.0 - kth.0 > TIE_TOLERANCE * scale {
                break;
            }
        }
        accepted.push(candidates.swap_remove(best));
    }

    accepted.sort_by(path_order);
    accepted.truncate(k);
    Ok(accepted)
}
