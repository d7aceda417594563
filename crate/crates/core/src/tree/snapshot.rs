//! Plain-text tree snapshots.
//!
//! A snapshot is a tab-separated, line-oriented dump of a [`SearchTree`]:
//!
//! ```text
//! pdmcts-tree v1
//! iteration <n>
//! S <id> <parent|-> <stage> <visits> <simulations> <V-bar> <V-tilde> <state>
//! A <id> <parent> <action index> <visits> <Q-bar> <retired u|-> <retired l> <action>
//! U <state id> <action index> <u> <l> <action>
//! ```
//!
//! `S` lines list state nodes, `A` lines state-action nodes and `U` lines the
//! dual statistics of actions that were considered but not expanded. Ids are
//! dense and in creation order; children are recovered from parent links.
//! States and actions are written with their `Debug` representation. Reals
//! use Rust's shortest round-trip formatting, so parsing a snapshot restores
//! every value bit for bit.

use std::fmt::{self, Debug, Write as _};

use super::SearchTree;
use crate::error::{Error, Result};
use crate::mdp::Stage;

const HEADER: &str = "pdmcts-tree v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStateNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub stage: Stage,
    pub visits: u64,
    pub simulations: u64,
    pub value: f64,
    pub value_mean: f64,
    pub label: String,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotActionNode {
    pub id: usize,
    pub parent: usize,
    pub action_index: usize,
    pub visits: u64,
    pub q_value: f64,
    pub retired_dual: Option<(f64, u64)>,
    pub label: String,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDual {
    pub state: usize,
    pub action_index: usize,
    pub estimate: f64,
    pub lookaheads: u64,
    pub label: String,
}

/// Label-only copy of a search tree, sufficient for every harness metric.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSnapshot {
    pub iteration: u64,
    pub states: Vec<SnapshotStateNode>,
    pub actions: Vec<SnapshotActionNode>,
    pub unexpanded: Vec<SnapshotDual>,
}

impl TreeSnapshot {
    pub fn from_tree<S: Debug, A: Debug>(tree: &SearchTree<S, A>) -> Self {
        let states = tree
            .states
            .iter()
            .map(|n| SnapshotStateNode {
                id: n.id.0,
                parent: n.parent.map(|p| p.0),
                stage: n.stage,
                visits: n.visits,
                simulations: n.simulations,
                value: n.value,
                value_mean: n.value_mean,
                label: format!("{:?}", n.state),
                children: n.children.iter().map(|c| c.0).collect(),
            })
            .collect();
        let actions = tree
            .actions
            .iter()
            .map(|n| SnapshotActionNode {
                id: n.id.0,
                parent: n.parent.0,
                action_index: n.action_index,
                visits: n.visits,
                q_value: n.q_value,
                retired_dual: n.retired_dual.map(|d| (d.estimate, d.lookaheads)),
                label: format!("{:?}", n.action),
                children: n.successors.iter().map(|e| e.node.0).collect(),
            })
            .collect();
        let unexpanded = tree
            .states
            .iter()
            .flat_map(|n| {
                n.dual.iter().enumerate().filter_map(move |(i, d)| {
                    d.map(|d| SnapshotDual {
                        state: n.id.0,
                        action_index: i,
                        estimate: d.estimate,
                        lookaheads: d.lookaheads,
                        label: format!("{:?}", n.actions[i]),
                    })
                })
            })
            .collect();
        Self {
            iteration: tree.iteration,
            states,
            actions,
            unexpanded,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_text(&mut out).expect("writing to a String");
        out
    }

    fn write_text(&self, out: &mut String) -> fmt::Result {
        writeln!(out, "{HEADER}")?;
        writeln!(out, "iteration\t{}", self.iteration)?;
        for n in &self.states {
            let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
            writeln!(
                out,
                "S\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                n.id,
                parent,
                n.stage,
                n.visits,
                n.simulations,
                n.value,
                n.value_mean,
                clean(&n.label)
            )?;
        }
        for n in &self.actions {
            let (u, l) = match n.retired_dual {
                Some((u, l)) => (u.to_string(), l.to_string()),
                None => ("-".to_string(), "0".to_string()),
            };
            writeln!(
                out,
                "A\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                n.id,
                n.parent,
                n.action_index,
                n.visits,
                n.q_value,
                u,
                l,
                clean(&n.label)
            )?;
        }
        for d in &self.unexpanded {
            writeln!(
                out,
                "U\t{}\t{}\t{}\t{}\t{}",
                d.state,
                d.action_index,
                d.estimate,
                d.lookaheads,
                clean(&d.label)
            )?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == HEADER => {}
            _ => return Err(parse_error(1, "missing snapshot header")),
        }
        let mut snap = TreeSnapshot {
            iteration: 0,
            states: Vec::new(),
            actions: Vec::new(),
            unexpanded: Vec::new(),
        };
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(9, '\t').collect();
            let field = |k: usize| {
                fields
                    .get(k)
                    .copied()
                    .ok_or_else(|| parse_error(line_no, &format!("missing field {k}")))
            };
            match fields[0] {
                "iteration" => snap.iteration = num(field(1)?, line_no)?,
                "S" => {
                    let id: usize = num(field(1)?, line_no)?;
                    if id != snap.states.len() {
                        return Err(parse_error(line_no, "state ids must be dense"));
                    }
                    let parent = match field(2)? {
                        "-" => None,
                        p => Some(num(p, line_no)?),
                    };
                    snap.states.push(SnapshotStateNode {
                        id,
                        parent,
                        stage: num(field(3)?, line_no)?,
                        visits: num(field(4)?, line_no)?,
                        simulations: num(field(5)?, line_no)?,
                        value: num(field(6)?, line_no)?,
                        value_mean: num(field(7)?, line_no)?,
                        label: field(8)?.to_string(),
                        children: Vec::new(),
                    });
                }
                "A" => {
                    let id: usize = num(field(1)?, line_no)?;
                    if id != snap.actions.len() {
                        return Err(parse_error(line_no, "action ids must be dense"));
                    }
                    let retired_dual = match field(6)? {
                        "-" => None,
                        u => Some((num(u, line_no)?, num(field(7)?, line_no)?)),
                    };
                    snap.actions.push(SnapshotActionNode {
                        id,
                        parent: num(field(2)?, line_no)?,
                        action_index: num(field(3)?, line_no)?,
                        visits: num(field(4)?, line_no)?,
                        q_value: num(field(5)?, line_no)?,
                        retired_dual,
                        label: field(8)?.to_string(),
                        children: Vec::new(),
                    });
                }
                "U" => {
                    let fields: Vec<&str> = line.splitn(6, '\t').collect();
                    if fields.len() != 6 {
                        return Err(parse_error(line_no, "malformed dual line"));
                    }
                    snap.unexpanded.push(SnapshotDual {
                        state: num(fields[1], line_no)?,
                        action_index: num(fields[2], line_no)?,
                        estimate: num(fields[3], line_no)?,
                        lookaheads: num(fields[4], line_no)?,
                        label: fields[5].to_string(),
                    });
                }
                other => {
                    return Err(parse_error(line_no, &format!("unknown record type {other:?}")))
                }
            }
        }
        snap.link()?;
        Ok(snap)
    }

    fn link(&mut self) -> Result<()> {
        for a in 0..self.actions.len() {
            let parent = self.actions[a].parent;
            let node = self
                .states
                .get_mut(parent)
                .ok_or_else(|| parse_error(0, &format!("action {a} has unknown parent {parent}")))?;
            node.children.push(a);
        }
        for s in 0..self.states.len() {
            if let Some(parent) = self.states[s].parent {
                let node = self.actions.get_mut(parent).ok_or_else(|| {
                    parse_error(0, &format!("state {s} has unknown parent {parent}"))
                })?;
                node.children.push(s);
            }
        }
        Ok(())
    }
}

fn clean(label: &str) -> String {
    label.replace(['\t', '\n'], " ")
}

fn num<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_error(line, &format!("cannot parse {field:?}")))
}

fn parse_error(line: usize, message: &str) -> Error {
    Error::Parse {
        location: format!("snapshot line {line}"),
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::random_mdp::{generate_random_mdp, RandomMdpSizes};
    use crate::tree::{DualStat, WideningConfig};

    #[test]
    fn text_round_trip_is_exact() {
        let mdp = generate_random_mdp(
            RandomMdpSizes {
                states: 3,
                actions: 3,
                outcomes: 2,
                horizon: 2,
            },
            5,
        )
        .unwrap();
        let mut tree = SearchTree::new(&mdp, WideningConfig::default(), 10.0).unwrap();
        let root = tree.root();
        let y = tree.add_state_action_child(&mdp, root, &1).unwrap();
        let s = tree.action(y).unexpanded_support()[0].state;
        let x = tree.add_state_child(&mdp, y, s).unwrap();
        tree.action_mut(y).q_value = 0.1 + 0.2;
        tree.state_mut(x).value = -1.0 / 3.0;
        tree.state_mut(root).dual[2] = Some(DualStat {
            estimate: 2.0_f64.sqrt(),
            lookaheads: 4,
        });
        tree.iteration = 9;

        let snap = tree.snapshot();
        let parsed = TreeSnapshot::parse(&snap.to_text()).unwrap();
        assert_eq!(parsed, snap);
        assert_eq!(parsed.states[0].children, vec![0]);
        assert_eq!(parsed.actions[0].children, vec![1]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(TreeSnapshot::parse("hello").is_err());
        assert!(TreeSnapshot::parse("pdmcts-tree v1\nS\t3\t-\t0\t0\t0\t0\t0\tx\n").is_err());
    }
}
