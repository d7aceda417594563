//! Tree metrics. All of them are computed from a [`TreeSnapshot`], so a
//! report rebuilt from a saved snapshot matches the live run exactly.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::TreeSnapshot;

/// For every state node, the number of state-node layers below it in its
/// subtree (0 for a node without expanded actions), counted per depth.
pub fn depth_histogram(tree: &TreeSnapshot) -> BTreeMap<usize, u64> {
    let mut depth = vec![0usize; tree.states.len()];
    // children are always created after their parents
    for x in (0..tree.states.len()).rev() {
        depth[x] = tree.states[x]
            .children
            .iter()
            .flat_map(|&y| &tree.actions[y].children)
            .map(|&s| depth[s] + 1)
            .max()
            .unwrap_or(0);
    }
    let mut hist = BTreeMap::new();
    for d in depth {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Lower median of a depth histogram.
pub fn median_depth(hist: &BTreeMap<usize, u64>) -> Option<usize> {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return None;
    }
    let rank = total.div_ceil(2);
    let mut seen = 0;
    for (&d, &c) in hist {
        seen += c;
        if seen >= rank {
            return Some(d);
        }
    }
    None
}

/// Mean number of expanded actions over the visited state nodes that have
/// at least one expanded action.
pub fn expansions_per_node(tree: &TreeSnapshot) -> Result<f64> {
    let counts: Vec<usize> = tree
        .states
        .iter()
        .filter(|s| s.visits > 0 && !s.children.is_empty())
        .map(|s| s.children.len())
        .collect();
    if counts.is_empty() {
        return Err(Error::NotReady("no state node has an expanded action".into()));
    }
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

/// Label of the expanded root action with the largest `Q-bar`, ties to the
/// lowest action index.
pub fn recommendation(tree: &TreeSnapshot) -> Option<&str> {
    let root = tree.states.first()?;
    root.children
        .iter()
        .map(|&y| &tree.actions[y])
        .min_by(|a, b| {
            b.q_value
                .total_cmp(&a.q_value)
                .then(a.action_index.cmp(&b.action_index))
        })
        .map(|a| a.label.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeMetrics {
    pub iterations: u64,
    pub recommendation: Option<String>,
    pub root_value: f64,
    pub expansions_per_node: Option<f64>,
    pub median_depth: Option<usize>,
    pub max_depth: usize,
    pub state_nodes: usize,
    pub action_nodes: usize,
    pub root_expanded: usize,
    pub depth_histogram: BTreeMap<usize, u64>,
}

impl TreeMetrics {
    pub fn from_snapshot(tree: &TreeSnapshot) -> Self {
        let hist = depth_histogram(tree);
        Self {
            iterations: tree.iteration,
            recommendation: recommendation(tree).map(str::to_string),
            root_value: tree.states.first().map_or(0.0, |r| r.value),
            expansions_per_node: expansions_per_node(tree).ok(),
            median_depth: median_depth(&hist),
            max_depth: hist.keys().next_back().copied().unwrap_or(0),
            state_nodes: tree.states.len(),
            action_nodes: tree.actions.len(),
            root_expanded: tree.states.first().map_or(0, |r| r.children.len()),
            depth_histogram: hist,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{SnapshotActionNode, SnapshotStateNode};

    fn state(id: usize, parent: Option<usize>, children: Vec<usize>) -> SnapshotStateNode {
        SnapshotStateNode {
            id,
            parent,
            stage: 0,
            visits: 1,
            simulations: 0,
            value: 0.0,
            value_mean: 0.0,
            label: format!("s{id}"),
            children,
        }
    }

    fn action(id: usize, parent: usize, index: usize, q: f64, children: Vec<usize>) -> SnapshotActionNode {
        SnapshotActionNode {
            id,
            parent,
            action_index: index,
            visits: 1,
            q_value: q,
            retired_dual: None,
            label: format!("a{index}"),
            children,
        }
    }

    fn snapshot(states: Vec<SnapshotStateNode>, actions: Vec<SnapshotActionNode>) -> TreeSnapshot {
        TreeSnapshot {
            iteration: 1,
            states,
            actions,
            unexpanded: Vec::new(),
        }
    }

    #[test]
    fn bare_root() {
        let t = snapshot(vec![state(0, None, vec![])], vec![]);
        assert_eq!(depth_histogram(&t), BTreeMap::from([(0, 1)]));
        assert!(expansions_per_node(&t).is_err());
        assert_eq!(recommendation(&t), None);
    }

    #[test]
    fn root_with_one_grandchild() {
        let t = snapshot(
            vec![state(0, None, vec![0]), state(1, Some(0), vec![])],
            vec![action(0, 0, 0, 1.0, vec![1])],
        );
        assert_eq!(depth_histogram(&t), BTreeMap::from([(0, 1), (1, 1)]));
        assert_eq!(expansions_per_node(&t).unwrap(), 1.0);
    }

    #[test]
    fn histogram_partitions_the_state_nodes() {
        // root -a0-> 1 -a0-> 3, root -a1-> 2; node 1 also expands a1 and a2
        let t = snapshot(
            vec![
                state(0, None, vec![0, 1]),
                state(1, Some(0), vec![2, 3, 4]),
                state(2, Some(1), vec![]),
                state(3, Some(2), vec![]),
            ],
            vec![
                action(0, 0, 0, 1.0, vec![1]),
                action(1, 0, 1, 2.0, vec![2]),
                action(2, 1, 0, 0.0, vec![3]),
                action(3, 1, 1, 0.0, vec![]),
                action(4, 1, 2, 0.0, vec![]),
            ],
        );
        let hist = depth_histogram(&t);
        assert_eq!(hist, BTreeMap::from([(0, 2), (1, 1), (2, 1)]));
        assert_eq!(hist.values().sum::<u64>(), 4);
        assert_eq!(median_depth(&hist), Some(0));
        // nodes 0 and 1 have 2 and 3 expanded actions
        assert_eq!(expansions_per_node(&t).unwrap(), 2.5);
        assert_eq!(recommendation(&t), Some("a1"));
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        let t = snapshot(
            vec![state(0, None, vec![0, 1])],
            vec![action(0, 0, 3, -3.5, vec![]), action(1, 0, 1, -3.5, vec![])],
        );
        assert_eq!(recommendation(&t), Some("a1"));
    }

    #[test]
    fn lower_median() {
        let h = BTreeMap::from([(0, 2), (3, 2)]);
        assert_eq!(median_depth(&h), Some(0));
        let h = BTreeMap::from([(0, 1), (3, 2)]);
        assert_eq!(median_depth(&h), Some(3));
        assert_eq!(median_depth(&BTreeMap::new()), None);
    }
}
