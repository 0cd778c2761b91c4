//! Binary classification trees: routing, count refresh against a dataset,
//! terminal-node predictive distributions, and the persistent structural
//! edits the sampler's moves are built from.
//!
//! Trees are immutable values. Nodes live in a preorder `Vec` with the root
//! at index 0; every edit returns a fresh, re-canonicalized tree with its
//! counts marked stale, so a rejected proposal needs no undo logic.

use std::collections::BTreeSet;

use crate::dataset::{render_exact, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        attribute: usize,
        rule: f64,
        left: usize,
        right: usize,
    },
    Terminal {
        /// Per-class sample counts, length `class_count`.
        counts: Vec<u32>,
    },
}

/// A terminal node's smoothed class distribution; components sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistribution {
    probabilities: Vec<f64>,
}

impl NodeDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probabilities
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    class_count: usize,
    counts_fresh: bool,
}

enum Edit {
    SplitTerminal {
        target: usize,
        attribute: usize,
        rule: f64,
    },
    Prune {
        target: usize,
    },
    SetSplit {
        target: usize,
        attribute: usize,
        rule: f64,
    },
}

impl DecisionTree {
    /// A tree with a single terminal node and zeroed, stale counts.
    pub fn single_terminal(class_count: usize) -> Self {
        DecisionTree {
            nodes: vec![Node::Terminal {
                counts: vec![0; class_count],
            }],
            class_count,
            counts_fresh: false,
        }
    }

    /// A one-split tree (stump) with stale counts.
    pub fn stump(attribute: usize, rule: f64, class_count: usize) -> Self {
        DecisionTree {
            nodes: vec![
                Node::Split {
                    attribute,
                    rule,
                    left: 1,
                    right: 2,
                },
                Node::Terminal {
                    counts: vec![0; class_count],
                },
                Node::Terminal {
                    counts: vec![0; class_count],
                },
            ],
            class_count,
            counts_fresh: false,
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Whether terminal counts reflect a recount against some dataset.
    pub fn counts_fresh(&self) -> bool {
        self.counts_fresh
    }

    pub fn split_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }

    pub fn terminal_count(&self) -> usize {
        self.nodes.len() - self.split_count()
    }

    pub fn terminal_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Terminal { .. }))
            .collect()
    }

    pub fn split_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Split { .. }))
            .collect()
    }

    /// Splits whose children are both terminal, i.e. valid Death targets.
    pub fn pruneable_splits(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| match self.nodes[i] {
                Node::Split { left, right, .. } => {
                    matches!(self.nodes[left], Node::Terminal { .. })
                        && matches!(self.nodes[right], Node::Terminal { .. })
                }
                Node::Terminal { .. } => false,
            })
            .collect()
    }

    /// Counts stored at a terminal node.
    pub fn counts(&self, terminal: usize) -> &[u32] {
        match &self.nodes[terminal] {
            Node::Terminal { counts } => counts,
            Node::Split { .. } => panic!("node {terminal} is not a terminal"),
        }
    }

    /// The set of attributes used by splitting nodes; empty iff the tree is
    /// a single terminal.
    pub fn attributes_used(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { attribute, .. } => Some(*attribute),
                Node::Terminal { .. } => None,
            })
            .collect()
    }

    /// Deterministic descent: left when `x[attribute] <= rule`. Returns the
    /// terminal node index the sample lands in.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    attribute,
                    rule,
                    left,
                    right,
                } => {
                    at = if x[attribute] <= rule { left } else { right };
                }
                Node::Terminal { .. } => return at,
            }
        }
    }

    /// Re-tallies terminal counts by routing every sample of `data`.
    /// `valid` is true iff every terminal holds at least `min_node_size`
    /// samples.
    pub fn recount(&self, data: &Dataset, min_node_size: usize) -> (DecisionTree, bool) {
        let mut tree = self.clone();
        for node in tree.nodes.iter_mut() {
            if let Node::Terminal { counts } = node {
                counts.iter_mut().for_each(|c| *c = 0);
            }
        }
        for i in 0..data.n_samples() {
            let t = tree.route(data.row(i));
            match &mut tree.nodes[t] {
                Node::Terminal { counts } => counts[data.label(i) - 1] += 1,
                Node::Split { .. } => unreachable!("route returned a split node"),
            }
        }
        tree.counts_fresh = true;
        let valid = tree.nodes.iter().all(|n| match n {
            Node::Terminal { counts } => {
                counts.iter().map(|&c| c as usize).sum::<usize>() >= min_node_size
            }
            Node::Split { .. } => true,
        });
        (tree, valid)
    }

    /// Smoothed class distribution of the terminal `x` routes to:
    /// `(n_tj + alpha) / (n_t + C * alpha)`.
    pub fn predict_distribution(&self, x: &[f64], alpha: f64) -> Result<NodeDistribution> {
        if !self.counts_fresh {
            return Err(Error::StaleCounts);
        }
        let counts = self.counts(self.route(x));
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let denom = total + self.class_count as f64 * alpha;
        Ok(NodeDistribution {
            probabilities: counts.iter().map(|&c| (c as f64 + alpha) / denom).collect(),
        })
    }

    /// Replaces the terminal `target` with a split on `(attribute, rule)`
    /// over two fresh terminals. Counts come back stale.
    pub fn split_terminal(&self, target: usize, attribute: usize, rule: f64) -> Result<DecisionTree> {
        if !matches!(self.nodes.get(target), Some(Node::Terminal { .. })) {
            return Err(Error::StructuralEdit {
                edit: "split_terminal",
                node: target,
                message: "target is not a terminal node".into(),
            });
        }
        Ok(self.rebuild(&Edit::SplitTerminal {
            target,
            attribute,
            rule,
        }))
    }

    /// Collapses a split with two terminal children back into one terminal.
    pub fn prune_split(&self, target: usize) -> Result<DecisionTree> {
        match self.nodes.get(target) {
            Some(Node::Split { left, right, .. })
                if matches!(self.nodes[*left], Node::Terminal { .. })
                    && matches!(self.nodes[*right], Node::Terminal { .. }) => {}
            Some(Node::Split { .. }) => {
                return Err(Error::StructuralEdit {
                    edit: "prune_split",
                    node: target,
                    message: "children are not both terminal".into(),
                })
            }
            _ => {
                return Err(Error::StructuralEdit {
                    edit: "prune_split",
                    node: target,
                    message: "target is not a split node".into(),
                })
            }
        }
        Ok(self.rebuild(&Edit::Prune { target }))
    }

    /// Reassigns an existing split's attribute and rule in place.
    pub fn set_split(&self, target: usize, attribute: usize, rule: f64) -> Result<DecisionTree> {
        if !matches!(self.nodes.get(target), Some(Node::Split { .. })) {
            return Err(Error::StructuralEdit {
                edit: "set_split",
                node: target,
                message: "target is not a split node".into(),
            });
        }
        Ok(self.rebuild(&Edit::SetSplit {
            target,
            attribute,
            rule,
        }))
    }

    /// Copies the tree in preorder with one edit applied.
    fn rebuild(&self, edit: &Edit) -> DecisionTree {
        let mut nodes = Vec::with_capacity(self.nodes.len() + 2);
        self.copy_into(0, edit, &mut nodes);
        DecisionTree {
            nodes,
            class_count: self.class_count,
            counts_fresh: false,
        }
    }

    fn copy_into(&self, at: usize, edit: &Edit, out: &mut Vec<Node>) -> usize {
        let blank = || Node::Terminal {
            counts: vec![0; self.class_count],
        };
        match (edit, &self.nodes[at]) {
            (
                &Edit::SplitTerminal {
                    target,
                    attribute,
                    rule,
                },
                Node::Terminal { .. },
            ) if at == target => {
                let index = out.len();
                out.push(Node::Split {
                    attribute,
                    rule,
                    left: index + 1,
                    right: index + 2,
                });
                out.push(blank());
                out.push(blank());
                index
            }
            (&Edit::Prune { target }, Node::Split { .. }) if at == target => {
                out.push(blank());
                out.len() - 1
            }
            (
                &Edit::SetSplit {
                    target,
                    attribute,
                    rule,
                },
                &Node::Split { left, right, .. },
            ) if at == target => {
                let index = out.len();
                out.push(Node::Split {
                    attribute,
                    rule,
                    left: 0,
                    right: 0,
                });
                let new_left = self.copy_into(left, edit, out);
                let new_right = self.copy_into(right, edit, out);
                if let Node::Split { left, right, .. } = &mut out[index] {
                    *left = new_left;
                    *right = new_right;
                }
                index
            }
            (_, &Node::Split {
                attribute,
                rule,
                left,
                right,
            }) => {
                let index = out.len();
                out.push(Node::Split {
                    attribute,
                    rule,
                    left: 0,
                    right: 0,
                });
                let new_left = self.copy_into(left, edit, out);
                let new_right = self.copy_into(right, edit, out);
                if let Node::Split { left, right, .. } = &mut out[index] {
                    *left = new_left;
                    *right = new_right;
                }
                index
            }
            (_, Node::Terminal { counts }) => {
                out.push(Node::Terminal {
                    counts: counts.clone(),
                });
                out.len() - 1
            }
        }
    }

    /// Nested text record: `(s ATTR RULE LEFT RIGHT)` for splits and
    /// `(t C1 .. CK)` for terminals. Rules render with 17 significant
    /// digits, so parsing reproduces the exact f64.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_node(0, &mut out);
        out
    }

    fn write_node(&self, at: usize, out: &mut String) {
        match &self.nodes[at] {
            Node::Split {
                attribute,
                rule,
                left,
                right,
            } => {
                out.push_str(&format!("(s {attribute} {} ", render_exact(*rule)));
                self.write_node(*left, out);
                out.push(' ');
                self.write_node(*right, out);
                out.push(')');
            }
            Node::Terminal { counts } => {
                out.push_str("(t");
                for c in counts {
                    out.push_str(&format!(" {c}"));
                }
                out.push(')');
            }
        }
    }

    /// Parses the `to_text` format. Parsed trees carry fresh counts as
    /// recorded in the text.
    pub fn from_text(text: &str, class_count: usize) -> Result<DecisionTree> {
        let tokens = tokenize(text);
        let mut pos = 0;
        let mut nodes = Vec::new();
        parse_node(&tokens, &mut pos, class_count, &mut nodes)?;
        if pos != tokens.len() {
            return Err(Error::EnsembleFormat(format!(
                "trailing tokens after tree record: {:?}",
                &tokens[pos..]
            )));
        }
        Ok(DecisionTree {
            nodes,
            class_count,
            counts_fresh: true,
        })
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn parse_node(
    tokens: &[String],
    pos: &mut usize,
    class_count: usize,
    nodes: &mut Vec<Node>,
) -> Result<usize> {
    let bad = |msg: String| Error::EnsembleFormat(msg);
    let next = |pos: &mut usize| -> Result<&String> {
        let t = tokens
            .get(*pos)
            .ok_or_else(|| bad("unexpected end of tree record".into()))?;
        *pos += 1;
        Ok(t)
    };
    if next(pos)? != "(" {
        return Err(bad("expected `(`".into()));
    }
    let kind = next(pos)?.clone();
    match kind.as_str() {
        "s" => {
            let attribute: usize = next(pos)?
                .parse()
                .map_err(|_| bad("bad attribute index".into()))?;
            let rule: f64 = next(pos)?.parse().map_err(|_| bad("bad rule value".into()))?;
            let index = nodes.len();
            nodes.push(Node::Split {
                attribute,
                rule,
                left: 0,
                right: 0,
            });
            let left = parse_node(tokens, pos, class_count, nodes)?;
            let right = parse_node(tokens, pos, class_count, nodes)?;
            if next(pos)? != ")" {
                return Err(bad("expected `)` after split".into()));
            }
            if let Node::Split {
                left: l, right: r, ..
            } = &mut nodes[index]
            {
                *l = left;
                *r = right;
            }
            Ok(index)
        }
        "t" => {
            let mut counts = Vec::with_capacity(class_count);
            loop {
                let t = next(pos)?;
                if t == ")" {
                    break;
                }
                counts.push(t.parse().map_err(|_| bad("bad terminal count".into()))?);
            }
            if counts.len() != class_count {
                return Err(bad(format!(
                    "terminal has {} counts, expected {class_count}",
                    counts.len()
                )));
            }
            nodes.push(Node::Terminal { counts });
            Ok(nodes.len() - 1)
        }
        other => Err(bad(format!("unknown node kind `{other}`"))),
    }
}
