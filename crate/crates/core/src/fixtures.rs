//! Bundled reference networks and path sets (the files under `data/`).

use crate::network::{Network, NodeId};
use crate::path_logit::{parse_choice_sets, ChoiceSet};
use crate::shortest_path::{parse_paths, Path};

pub const SMALL_ACYCLIC_CSV: &str = include_str!("../../../data/small_acyclic/arcs.csv");
pub const SMALL_CYCLIC_CSV: &str = include_str!("../../../data/small_cyclic/arcs.csv");
pub const TOY_CSV: &str = include_str!("../../../data/toy/arcs.csv");
pub const TOY_PATHS: &str = include_str!("../../../data/toy/paths.txt");

pub const TOY_CHOICE_SETS: [&str; 4] = [
    include_str!("../../../data/toy/choice_set_c1.txt"),
    include_str!("../../../data/toy/choice_set_c2.txt"),
    include_str!("../../../data/toy/choice_set_c3.txt"),
    include_str!("../../../data/toy/choice_set_c4.txt"),
];

/// Four nodes, six arcs, acyclic; utility is minus `length`.
pub fn small_acyclic() -> Network {
    Network::parse(SMALL_ACYCLIC_CSV).expect("bundled network is valid")
}

/// `small_acyclic` plus arc 3->1.
pub fn small_cyclic() -> Network {
    Network::parse(SMALL_CYCLIC_CSV).expect("bundled network is valid")
}

/// Eleven nodes, nineteen arcs with `travel_time` and `link_constant`.
pub fn toy_network() -> Network {
    Network::parse(TOY_CSV).expect("bundled network is valid")
}

/// The single OD pair used with each bundled network.
pub fn default_od(net: &Network) -> (NodeId, NodeId) {
    match (net.node("1"), net.node("4"), net.node("o"), net.node("d")) {
        (Some(o), Some(d), _, _) | (_, _, Some(o), Some(d)) => (o, d),
        _ => panic!("not a bundled network"),
    }
}

/// The four loopless paths 1->4 of the small networks, ordered
/// 1-4 (length 2), 1-4 (length 6), 1-2-4, 1-2-3-4.
pub fn small_paths(net: &Network) -> Vec<Path> {
    parse_paths(net, "1,4@0\n1,4@5\n1,2,4\n1,2,3,4\n").expect("bundled paths are valid")
}

/// All fifteen o->d paths of the toy network in decreasing utility order.
pub fn toy_paths(net: &Network) -> Vec<Path> {
    parse_paths(net, TOY_PATHS).expect("bundled paths are valid")
}

/// Choice sets C1..C4 (`index` 1-based) of the toy network.
pub fn toy_choice_set(net: &Network, index: usize) -> ChoiceSet {
    let text = TOY_CHOICE_SETS[index - 1];
    parse_choice_sets(net, text)
        .expect("bundled choice sets are valid")
        .remove(0)
}

/// Utility coefficients `(travel_time, link_constant)` under which the toy
/// path utilities, choice-set link flows and accessibilities are tabulated.
pub const TOY_BETA: [f64; 2] = [-2.0, -0.1];

/// Coefficients stated for the synthetic data experiments; the recursive
/// logit link-flow column is tabulated under these.
pub const TOY_BETA_STATED: [f64; 2] = [-2.0, -0.01];
