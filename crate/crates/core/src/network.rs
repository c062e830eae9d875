//! Directed network model and its augmentation into the state space of the
//! route choice MDP.
//!
//! States are arcs. For a destination `d`, the augmented network adds an
//! absorbing dummy state entered from every arc whose head is `d`, plus one
//! zero-attribute dummy state per origin whose successors are the origin's
//! outgoing arcs.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path as FsPath;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArcId(pub usize);

impl fmt::Display for ArcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arc {
    pub id: ArcId,
    pub from: NodeId,
    pub to: NodeId,
    pub attributes: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Network {
    node_names: Vec<String>,
    node_lookup: HashMap<String, NodeId>,
    arcs: Vec<Arc>,
    attribute_names: Vec<String>,
    outgoing: Vec<Vec<ArcId>>,
    incoming: Vec<Vec<ArcId>>,
}

/// Accumulates arcs before validation. Node ids are strings; nodes are
/// indexed in order of first appearance once arcs are sorted by id.
#[derive(Clone, Debug, Default)]
pub struct NetworkBuilder {
    attribute_names: Vec<String>,
    rows: Vec<(usize, String, String, Vec<f64>)>,
}

impl NetworkBuilder {
    pub fn new<S: Into<String>>(attribute_names: impl IntoIterator<Item = S>) -> Self {
        Self {
            attribute_names: attribute_names.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn arc(mut self, id: usize, from: &str, to: &str, attributes: &[f64]) -> Self {
        self.push_arc(id, from, to, attributes.to_vec());
        self
    }

    pub fn push_arc(&mut self, id: usize, from: &str, to: &str, attributes: Vec<f64>) {
        self.rows
            .push((id, from.to_string(), to.to_string(), attributes));
    }

    pub fn build(mut self) -> Result<Network> {
        if self.rows.is_empty() {
            return Err(Error::Validation("network has no arcs".into()));
        }
        self.rows.sort_by_key(|row| row.0);
        for (expected, row) in self.rows.iter().enumerate() {
            if row.0 != expected {
                let message = if expected > 0 && self.rows[expected - 1].0 == row.0 {
                    format!("duplicate arc id {}", row.0)
                } else {
                    format!("arc ids must be dense from 0; missing id {expected}")
                };
                return Err(Error::Validation(message));
            }
        }

        let n_attr = self.attribute_names.len();
        let mut node_names = Vec::new();
        let mut node_lookup = HashMap::new();
        let mut intern = |name: &str| -> NodeId {
            if let Some(&id) = node_lookup.get(name) {
                return id;
            }
            let id = NodeId(node_names.len());
            node_names.push(name.to_string());
            node_lookup.insert(name.to_string(), id);
            id
        };

        let mut arcs = Vec::with_capacity(self.rows.len());
        for (id, from, to, attributes) in self.rows {
            if from.is_empty() || to.is_empty() {
                return Err(Error::Validation(format!("arc {id} has an empty endpoint")));
            }
            if from == to {
                return Err(Error::Validation(format!(
                    "arc {id} is a self-loop at node `{from}`"
                )));
            }
            if attributes.len() != n_attr {
                return Err(Error::Validation(format!(
                    "arc {id} has {} attributes, expected {n_attr}",
                    attributes.len()
                )));
            }
            if let Some(bad) = attributes.iter().find(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "arc {id} has a non-finite attribute {bad}"
                )));
            }
            let from = intern(&from);
            let to = intern(&to);
            arcs.push(Arc {
                id: ArcId(id),
                from,
                to,
                attributes,
            });
        }

        let mut outgoing = vec![Vec::new(); node_names.len()];
        let mut incoming = vec![Vec::new(); node_names.len()];
        for arc in &arcs {
            outgoing[arc.from.0].push(arc.id);
            incoming[arc.to.0].push(arc.id);
        }

        Ok(Network {
            node_names,
            node_lookup,
            arcs,
            attribute_names: self.attribute_names,
            outgoing,
            incoming,
        })
    }
}

impl Network {
    /// Parses an arc file: a header `id,from,to,<attr>...` followed by one
    /// arc per row. Lines starting with `#` are comments.
    pub fn parse(source: &str) -> Result<Network> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(source.as_bytes());

        let header = reader
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .clone();
        let columns: Vec<&str> = header.iter().collect();
        if columns.len() < 3 || columns[..3] != ["id", "from", "to"] {
            return Err(Error::parse(
                1,
                "header must start with `id,from,to`".to_string(),
            ));
        }
        let mut builder = NetworkBuilder::new(columns[3..].iter().copied());
        let n_attr = columns.len() - 3;

        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::parse(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != n_attr + 3 {
                return Err(Error::parse(
                    line,
                    format!("expected {} fields, found {}", n_attr + 3, record.len()),
                ));
            }
            let id: usize = record[0]
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid arc id `{}`", &record[0])))?;
            let attributes = record
                .iter()
                .skip(3)
                .map(|field| {
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::parse(line, format!("invalid number `{field}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            builder.push_arc(id, &record[1], &record[2], attributes);
        }
        builder.build()
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Network> {
        let text = std::fs::read_to_string(path)?;
        Network::parse(&text)
    }

    /// Serializes back to the arc-file format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,from,to");
        for name in &self.attribute_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for arc in &self.arcs {
            out.push_str(&format!(
                "{},{},{}",
                arc.id,
                self.node_name(arc.from),
                self.node_name(arc.to)
            ));
            for x in &arc.attributes {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: ArcId) -> &Arc {
        &self.arcs[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_names.len()).map(NodeId)
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.node_lookup.get(name).copied()
    }

    pub fn require_node(&self, name: &str) -> Result<NodeId> {
        self.node(name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        &self.node_names[node.0]
    }

    pub fn outgoing(&self, node: NodeId) -> &[ArcId] {
        &self.outgoing[node.0]
    }

    pub fn incoming(&self, node: NodeId) -> &[ArcId] {
        &self.incoming[node.0]
    }

    /// Arcs from `from` to `to`, in id order.
    pub fn arcs_between(&self, from: NodeId, to: NodeId) -> impl Iterator<Item = ArcId> + '_ {
        self.outgoing[from.0]
            .iter()
            .copied()
            .filter(move |&a| self.arcs[a.0].to == to)
    }

    /// Returns a network keeping only the named attributes, in the given order.
    pub fn select_attributes<S: AsRef<str>>(&self, names: &[S]) -> Result<Network> {
        let columns = names
            .iter()
            .map(|name| {
                self.attribute_names
                    .iter()
                    .position(|n| n == name.as_ref())
                    .ok_or_else(|| {
                        Error::Validation(format!("unknown attribute `{}`", name.as_ref()))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = self.clone();
        net.attribute_names = names.iter().map(|n| n.as_ref().to_string()).collect();
        for arc in &mut net.arcs {
            arc.attributes = columns.iter().map(|&c| arc.attributes[c]).collect();
        }
        Ok(net)
    }

    /// Nodes from which `target` can be reached (including `target`).
    pub fn nodes_reaching(&self, target: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::from([target]);
        seen[target.0] = true;
        while let Some(node) = queue.pop_front() {
            for &a in self.incoming(node) {
                let tail = self.arcs[a.0].from;
                if !seen[tail.0] {
                    seen[tail.0] = true;
                    queue.push_back(tail);
                }
            }
        }
        seen
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Arc(ArcId),
    Origin(NodeId),
    Destination,
}

/// The MDP state space for one destination.
#[derive(Clone, Debug)]
pub struct AugmentedNetwork<'a> {
    base: &'a Network,
    destination: NodeId,
    origins: Vec<NodeId>,
    successors: Vec<Vec<StateId>>,
    reaches_destination: Vec<bool>,
}

/// Single-origin augmentation.
pub fn augment(net: &Network, origin: NodeId, destination: NodeId) -> Result<AugmentedNetwork<'_>> {
    AugmentedNetwork::new(net, destination, &[origin])
}

impl<'a> AugmentedNetwork<'a> {
    /// Builds the state space for `destination` with one dummy origin state
    /// per entry of `origins`. Every origin must reach the destination.
    pub fn new(base: &'a Network, destination: NodeId, origins: &[NodeId]) -> Result<Self> {
        if destination.0 >= base.node_count() {
            return Err(Error::UnknownNode(format!("#{}", destination.0)));
        }
        let reaching = base.nodes_reaching(destination);
        let mut seen = vec![false; base.node_count()];
        for &o in origins {
            if o.0 >= base.node_count() {
                return Err(Error::UnknownNode(format!("#{}", o.0)));
            }
            if o == destination {
                return Err(Error::Validation(format!(
                    "origin and destination are the same node `{}`",
                    base.node_name(o)
                )));
            }
            if std::mem::replace(&mut seen[o.0], true) {
                return Err(Error::Validation(format!(
                    "origin `{}` augmented twice for destination `{}`",
                    base.node_name(o),
                    base.node_name(destination)
                )));
            }
            if !reaching[o.0] {
                return Err(Error::UnreachableDestination {
                    origin: base.node_name(o).to_string(),
                    destination: base.node_name(destination).to_string(),
                });
            }
        }

        let n_arcs = base.arc_count();
        let dest_state = StateId(n_arcs + origins.len());
        let arc_states =
            |node: NodeId| -> Vec<StateId> { base.outgoing(node).iter().map(|a| StateId(a.0)).collect() };

        let mut successors = Vec::with_capacity(n_arcs + origins.len() + 1);
        for arc in base.arcs() {
            let mut next = arc_states(arc.to);
            if arc.to == destination {
                next.push(dest_state);
            }
            successors.push(next);
        }
        for &o in origins {
            successors.push(arc_states(o));
        }
        successors.push(Vec::new());

        let mut reaches_destination = vec![false; successors.len()];
        for s in 0..successors.len() {
            reaches_destination[s] = match s {
                s if s < n_arcs => reaching[base.arcs()[s].to.0],
                s if s == dest_state.0 => true,
                s => reaching[origins[s - n_arcs].0],
            };
        }

        Ok(Self {
            base,
            destination,
            origins: origins.to_vec(),
            successors,
            reaches_destination,
        })
    }

    pub fn base(&self) -> &'a Network {
        self.base
    }

    pub fn destination(&self) -> NodeId {
        self.destination
    }

    pub fn origins(&self) -> &[NodeId] {
        &self.origins
    }

    pub fn state_count(&self) -> usize {
        self.successors.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.successors.len()).map(StateId)
    }

    pub fn dest_state(&self) -> StateId {
        StateId(self.successors.len() - 1)
    }

    pub fn arc_state(&self, arc: ArcId) -> StateId {
        StateId(arc.0)
    }

    pub fn origin_state(&self, origin: NodeId) -> Option<StateId> {
        self.origins
            .iter()
            .position(|&o| o == origin)
            .map(|i| StateId(self.base.arc_count() + i))
    }

    pub fn kind(&self, state: StateId) -> StateKind {
        let n_arcs = self.base.arc_count();
        if state.0 < n_arcs {
            StateKind::Arc(ArcId(state.0))
        } else if state == self.dest_state() {
            StateKind::Destination
        } else {
            StateKind::Origin(self.origins[state.0 - n_arcs])
        }
    }

    /// Node at which the state ends (the node where its actions start).
    pub fn head(&self, state: StateId) -> NodeId {
        match self.kind(state) {
            StateKind::Arc(a) => self.base.arc(a).to,
            StateKind::Origin(o) => o,
            StateKind::Destination => self.destination,
        }
    }

    /// Node at which the state starts; origin dummies have no tail.
    pub fn tail(&self, state: StateId) -> Option<NodeId> {
        match self.kind(state) {
            StateKind::Arc(a) => Some(self.base.arc(a).from),
            StateKind::Origin(_) => None,
            StateKind::Destination => Some(self.destination),
        }
    }

    pub fn contains(&self, state: StateId) -> bool {
        state.0 < self.successors.len()
    }

    /// A(k) in deterministic order: outgoing arcs by id, then the destination
    /// dummy when `k` ends at the destination.
    pub fn successors(&self, state: StateId) -> Result<&[StateId]> {
        self.successors
            .get(state.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownState(state.0))
    }

    pub(crate) fn succ(&self, state: StateId) -> &[StateId] {
        &self.successors[state.0]
    }

    pub fn reaches_destination(&self, state: StateId) -> bool {
        self.reaches_destination[state.0]
    }

    /// Attribute vector of a state when taken as an action; dummies are zero.
    pub fn attributes(&self, state: StateId) -> Option<&[f64]> {
        match self.kind(state) {
            StateKind::Arc(a) => Some(&self.base.arc(a).attributes),
            _ => None,
        }
    }

    /// Human-readable state label used in reports: the arc id, `o:<node>` for
    /// origin dummies, `d` for the destination dummy.
    pub fn label(&self, state: StateId) -> String {
        match self.kind(state) {
            StateKind::Arc(a) => a.to_string(),
            StateKind::Origin(o) => format!("o:{}", self.base.node_name(o)),
            StateKind::Destination => "d".to_string(),
        }
    }

    pub fn parse_label(&self, label: &str) -> Result<StateId> {
        if label == "d" {
            return Ok(self.dest_state());
        }
        if let Some(name) = label.strip_prefix("o:") {
            let node = self.base.require_node(name)?;
            return self
                .origin_state(node)
                .ok_or_else(|| Error::Validation(format!("`{name}` is not an origin")));
        }
        let id: usize = label
            .parse()
            .map_err(|_| Error::Validation(format!("invalid state label `{label}`")))?;
        if id >= self.base.arc_count() {
            return Err(Error::UnknownState(id));
        }
        Ok(StateId(id))
    }

    /// Whether the state graph restricted to states that reach the
    /// destination has a cycle.
    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Topological order (every state before its successors) over states
    /// that reach the destination, or `None` when those states form a cycle.
    pub fn topological_order(&self) -> Option<Vec<StateId>> {
        let n = self.state_count();
        let mut indegree = vec![0usize; n];
        for k in 0..n {
            if !self.reaches_destination[k] {
                continue;
            }
            for &a in &self.successors[k] {
                if self.reaches_destination[a.0] {
                    indegree[a.0] += 1;
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..n)
            .filter(|&k| self.reaches_destination[k] && indegree[k] == 0)
            .collect();
        let mut order = Vec::new();
        while let Some(k) = queue.pop_front() {
            order.push(StateId(k));
            for &a in &self.successors[k] {
                if !self.reaches_destination[a.0] {
                    continue;
                }
                indegree[a.0] -= 1;
                if indegree[a.0] == 0 {
                    queue.push_back(a.0);
                }
            }
        }
        let expected = self.reaches_destination.iter().filter(|&&r| r).count();
        (order.len() == expected).then_some(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn loads_small_acyclic() {
        let net = fixtures::small_acyclic();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.arc_count(), 6);
        assert_eq!(net.attribute_names(), ["length"]);
        let one = net.node("1").unwrap();
        let four = net.node("4").unwrap();
        let direct: Vec<_> = net.arcs_between(one, four).collect();
        assert_eq!(direct, vec![ArcId(0), ArcId(5)]);
    }

    #[test]
    fn loads_toy_network() {
        let net = fixtures::toy_network();
        assert_eq!(net.node_count(), 11);
        assert_eq!(net.arc_count(), 19);
        assert_eq!(net.attribute_names(), ["travel_time", "link_constant"]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Network::parse("id,from,to,length\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Network::parse("id,from,to,length\n0,a,a,1\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Network::parse("id,from,to,length\n0,a,b,1\n0,b,c,1\n"),
            Err(Error::Validation(m)) if m.contains("duplicate")
        ));
        assert!(matches!(
            Network::parse("id,from,to,length\n0,a,b,1\n2,b,c,1\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Network::parse("id,from,to,length\n0,a,b\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Network::parse("id,from,to,length\n0,a,b,x\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Network::parse("src,dst,length\n0,a,b\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn comments_and_order_are_ignored() {
        let a = Network::parse("id,from,to,w\n# header comment\n1,b,c,2\n0,a,b,1\n").unwrap();
        let b = Network::parse("id,from,to,w\n0,a,b,1\n1,b,c,2\n").unwrap();
        assert_eq!(a.arcs(), b.arcs());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn augmentation_of_small_networks() {
        let net = fixtures::small_acyclic();
        let (o, d) = (net.node("1").unwrap(), net.node("4").unwrap());
        let anet = augment(&net, o, d).unwrap();
        assert_eq!(anet.state_count(), 8);
        assert!(anet.successors(anet.dest_state()).unwrap().is_empty());
        let origin = anet.origin_state(o).unwrap();
        let out: Vec<_> = net.outgoing(o).iter().map(|a| StateId(a.0)).collect();
        assert_eq!(anet.successors(origin).unwrap(), out.as_slice());
        for arc in net.arcs() {
            let succ = anet.successors(anet.arc_state(arc.id)).unwrap();
            assert_eq!(succ.contains(&anet.dest_state()), arc.to == d);
        }
        assert!(anet.is_acyclic());
        assert_eq!(
            anet.successors(StateId(1)).unwrap(),
            [StateId(2), StateId(3)]
        );

        let cyclic = fixtures::small_cyclic();
        let anet = augment(&cyclic, o, d).unwrap();
        assert_eq!(anet.state_count(), 9);
        assert!(!anet.is_acyclic());
        assert_eq!(
            anet.successors(StateId(3)).unwrap(),
            [StateId(4), StateId(6)]
        );
    }

    #[test]
    fn augmentation_errors() {
        let net = fixtures::small_acyclic();
        let (one, four) = (net.node("1").unwrap(), net.node("4").unwrap());
        assert!(matches!(augment(&net, one, one), Err(Error::Validation(_))));
        assert!(matches!(
            augment(&net, four, one),
            Err(Error::UnreachableDestination { .. })
        ));
        assert!(matches!(
            AugmentedNetwork::new(&net, four, &[one, one]),
            Err(Error::Validation(m)) if m.contains("twice")
        ));
        let anet = augment(&net, one, four).unwrap();
        assert!(matches!(
            anet.successors(StateId(99)),
            Err(Error::UnknownState(99))
        ));
    }

    #[test]
    fn successor_heads_match_tails() {
        for net in [
            fixtures::small_acyclic(),
            fixtures::small_cyclic(),
            fixtures::toy_network(),
        ] {
            let (o, d) = fixtures::default_od(&net);
            let anet = augment(&net, o, d).unwrap();
            for k in anet.states() {
                for &a in anet.successors(k).unwrap() {
                    assert_eq!(Some(anet.head(k)), anet.tail(a));
                }
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        let net = fixtures::small_acyclic();
        let anet = augment(&net, net.node("1").unwrap(), net.node("4").unwrap()).unwrap();
        for s in anet.states() {
            assert_eq!(anet.parse_label(&anet.label(s)).unwrap(), s);
        }
    }

    #[test]
    fn select_attributes_reorders() {
        let net = fixtures::toy_network();
        let sub = net.select_attributes(&["link_constant"]).unwrap();
        assert_eq!(sub.attribute_count(), 1);
        assert!(sub.arcs().iter().all(|a| a.attributes == [1.0]));
        assert!(net.select_attributes(&["nope"]).is_err());
    }
}
