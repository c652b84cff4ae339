//! Smooth, decomposable probabilistic circuits over finite discrete variables.
//!
//! A [`Circuit`] is an arena of [`Node`]s addressed by [`NodeId`]. Leaves hold
//! categorical tables over their (sorted) scope, indexed with the convention
//! of [`crate::world`]; a univariate Bernoulli leaf is the arity-2,
//! single-variable case. Construction checks structure (dangling children,
//! cycles, table shapes); [`Circuit::validate`] reports the semantic
//! properties (smoothness, decomposability, normalization) without repairing
//! anything.

mod builder;
mod inference;
mod json;
mod sample;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::world_count;

pub use builder::CircuitBuilder;

/// Index of a variable; ids are dense `0..n`.
pub type VarId = usize;

/// Tolerance on `sum == 1` for sum weights and leaf tables.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub id: VarId,
    pub name: String,
    pub arity: usize,
}

impl Variable {
    pub fn binary(id: VarId, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            arity: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Sum {
        children: Vec<NodeId>,
        weights: Vec<f64>,
    },
    Product {
        children: Vec<NodeId>,
    },
    Leaf {
        scope: Vec<VarId>,
        table: Vec<f64>,
    },
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Sum { children, .. } | Node::Product { children } => children,
            Node::Leaf { .. } => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    fn kind(&self) -> &'static str {
        match self {
            Node::Sum { .. } => "sum",
            Node::Product { .. } => "product",
            Node::Leaf { .. } => "leaf",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("cycle detected through node {0}")]
    CycleDetected(NodeId),
    #[error("node {node} references missing child {child}")]
    DanglingChild { node: NodeId, child: NodeId },
    #[error("root {0} does not exist")]
    MissingRoot(NodeId),
    #[error("malformed node {node}: {reason}")]
    MalformedNode { node: NodeId, reason: String },
    #[error("invalid variables: {0}")]
    InvalidVariables(String),
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("no leaf has scope {0:?}")]
    ScopeNotPresent(Vec<VarId>),
    #[error("circuit is not valid: {0}")]
    NotValid(String),
    #[error("circuit json: {0}")]
    Json(String),
}

/// Partial assignment; unassigned variables are marginalized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence(BTreeMap<VarId, usize>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: VarId, value: usize) -> Self {
        self.0.insert(var, value);
        self
    }

    pub fn insert(&mut self, var: VarId, value: usize) {
        self.0.insert(var, value);
    }

    pub fn get(&self, var: VarId) -> Option<usize> {
        self.0.get(&var).copied()
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.0.contains_key(&var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, usize)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(VarId, usize)> for Evidence {
    fn from_iter<I: IntoIterator<Item = (VarId, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Result of [`Circuit::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub acyclic: bool,
    pub reachable: bool,
    pub smooth: bool,
    pub decomposable: bool,
    pub normalized_sums: bool,
    pub normalized_leaves: bool,
    /// Root scope is the full variable set.
    pub complete: bool,
    pub non_smooth: Vec<NodeId>,
    pub non_decomposable: Vec<NodeId>,
    pub unnormalized: Vec<NodeId>,
    pub unreachable: Vec<NodeId>,
    /// `(sum node, child position)` pairs carrying weight exactly 0.
    pub zero_weight_edges: Vec<(NodeId, usize)>,
    pub scopes: Vec<Vec<VarId>>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.acyclic
            && self.reachable
            && self.smooth
            && self.decomposable
            && self.normalized_sums
            && self.normalized_leaves
    }

    fn describe_failure(&self) -> String {
        let mut parts = Vec::new();
        if !self.reachable {
            parts.push(format!("unreachable nodes {:?}", self.unreachable));
        }
        if !self.smooth {
            parts.push(format!("non-smooth sums {:?}", self.non_smooth));
        }
        if !self.decomposable {
            parts.push(format!("non-decomposable products {:?}", self.non_decomposable));
        }
        if !(self.normalized_sums && self.normalized_leaves) {
            parts.push(format!("unnormalized nodes {:?}", self.unnormalized));
        }
        parts.join("; ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    variables: Vec<Variable>,
    nodes: Vec<Node>,
    root: NodeId,
    /// Every node, children before parents.
    topo: Vec<NodeId>,
    /// Reachable nodes only, children before parents.
    order: Vec<NodeId>,
    scopes: Vec<Vec<VarId>>,
}

/// Structural checks plus the property report, without building a [`Circuit`].
pub fn validate_parts(
    variables: Vec<Variable>,
    nodes: Vec<Node>,
    root: NodeId,
) -> Result<ValidityReport, CircuitError> {
    Circuit::new(variables, nodes, root).map(|c| c.validate())
}

impl Circuit {
    /// Builds a circuit after structural checks. Semantic properties are
    /// reported by [`Circuit::validate`]; use [`Circuit::new_valid`] to reject
    /// circuits that are not smooth, decomposable and normalized.
    pub fn new(variables: Vec<Variable>, nodes: Vec<Node>, root: NodeId) -> Result<Self, CircuitError> {
        check_variables(&variables)?;
        if root.0 >= nodes.len() {
            return Err(CircuitError::MissingRoot(root));
        }
        for (i, node) in nodes.iter().enumerate() {
            check_node(NodeId(i), node, &variables, nodes.len())?;
        }
        let topo = topological_order(&nodes)?;
        let mut scopes: Vec<Vec<VarId>> = vec![Vec::new(); nodes.len()];
        for &id in &topo {
            scopes[id.0] = match &nodes[id.0] {
                Node::Leaf { scope, .. } => scope.clone(),
                node => {
                    let mut s: Vec<VarId> = node
                        .children()
                        .iter()
                        .flat_map(|c| scopes[c.0].iter().copied())
                        .collect();
                    s.sort_unstable();
                    s.dedup();
                    s
                }
            };
        }
        let reachable = reachable_from(&nodes, root);
        let order = topo.iter().copied().filter(|id| reachable[id.0]).collect();
        Ok(Self {
            variables,
            nodes,
            root,
            topo,
            order,
            scopes,
        })
    }

    pub fn new_valid(variables: Vec<Variable>, nodes: Vec<Node>, root: NodeId) -> Result<Self, CircuitError> {
        let circuit = Self::new(variables, nodes, root)?;
        circuit.ensure_valid()?;
        Ok(circuit)
    }

    pub fn ensure_valid(&self) -> Result<(), CircuitError> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(CircuitError::NotValid(report.describe_failure()))
        }
    }

    pub fn validate(&self) -> ValidityReport {
        let mut report = ValidityReport {
            acyclic: true,
            reachable: true,
            smooth: true,
            decomposable: true,
            normalized_sums: true,
            normalized_leaves: true,
            complete: self.scopes[self.root.0].len() == self.variables.len(),
            non_smooth: Vec::new(),
            non_decomposable: Vec::new(),
            unnormalized: Vec::new(),
            unreachable: Vec::new(),
            zero_weight_edges: Vec::new(),
            scopes: self.scopes.clone(),
        };
        let reachable = reachable_from(&self.nodes, self.root);
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            if !reachable[i] {
                report.reachable = false;
                report.unreachable.push(id);
            }
            match node {
                Node::Sum { children, weights } => {
                    let first = &self.scopes[children[0].0];
                    if children.iter().any(|c| &self.scopes[c.0] != first) {
                        report.smooth = false;
                        report.non_smooth.push(id);
                    }
                    for (k, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            report.zero_weight_edges.push((id, k));
                        }
                    }
                    if !is_distribution(weights) {
                        report.normalized_sums = false;
                        report.unnormalized.push(id);
                    }
                }
                Node::Product { children } => {
                    let total: usize = children.iter().map(|c| self.scopes[c.0].len()).sum();
                    if total != self.scopes[i].len() {
                        report.decomposable = false;
                        report.non_decomposable.push(id);
                    }
                }
                Node::Leaf { table, .. } => {
                    if !is_distribution(table) {
                        report.normalized_leaves = false;
                        report.unnormalized.push(id);
                    }
                }
            }
        }
        report
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn arity(&self, var: VarId) -> usize {
        self.variables[var].arity
    }

    pub fn variable_by_name(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn scope(&self, id: NodeId) -> &[VarId] {
        &self.scopes[id.0]
    }

    /// Reachable nodes, children before parents.
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    /// All nodes (reachable or not), children before parents.
    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Reachable leaves in id order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .order
            .iter()
            .copied()
            .filter(|id| self.nodes[id.0].is_leaf())
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn leaf_table(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0] {
            Node::Leaf { table, .. } => Some(table),
            _ => None,
        }
    }

    /// Replaces a leaf table in place. Shape and finiteness are checked;
    /// normalization is left to [`Circuit::validate`].
    pub fn set_leaf_table(&mut self, id: NodeId, new_table: Vec<f64>) -> Result<(), CircuitError> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or(CircuitError::MissingRoot(id))?;
        match node {
            Node::Leaf { table, .. } => {
                if table.len() != new_table.len() {
                    return Err(CircuitError::MalformedNode {
                        node: id,
                        reason: format!("table length {} != {}", new_table.len(), table.len()),
                    });
                }
                if new_table.iter().any(|p| !p.is_finite()) {
                    return Err(CircuitError::MalformedNode {
                        node: id,
                        reason: "non-finite table entry".into(),
                    });
                }
                *table = new_table;
                Ok(())
            }
            other => Err(CircuitError::MalformedNode {
                node: id,
                reason: format!("expected leaf, found {}", other.kind()),
            }),
        }
    }

    pub fn into_parts(self) -> (Vec<Variable>, Vec<Node>, NodeId) {
        (self.variables, self.nodes, self.root)
    }

    /// Drops unreachable nodes and renumbers the rest, keeping relative id
    /// order. Returns the new circuit and the old-to-new id map.
    pub fn compact(&self) -> (Circuit, Vec<Option<NodeId>>) {
        let reachable = reachable_from(&self.nodes, self.root);
        let mut map = vec![None; self.nodes.len()];
        let mut next = 0;
        for (i, &r) in reachable.iter().enumerate() {
            if r {
                map[i] = Some(NodeId(next));
                next += 1;
            }
        }
        let remap = |c: &NodeId| map[c.0].expect("child of reachable node is reachable");
        let nodes: Vec<Node> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| reachable[*i])
            .map(|(_, node)| match node {
                Node::Sum { children, weights } => Node::Sum {
                    children: children.iter().map(remap).collect(),
                    weights: weights.clone(),
                },
                Node::Product { children } => Node::Product {
                    children: children.iter().map(remap).collect(),
                },
                leaf => leaf.clone(),
            })
            .collect();
        let root = map[self.root.0].expect("root is reachable");
        let circuit = Circuit::new(self.variables.clone(), nodes, root)
            .expect("compaction preserves structure");
        (circuit, map)
    }
}

fn is_distribution(values: &[f64]) -> bool {
    values.iter().all(|&p| p.is_finite() && p >= 0.0)
        && (values.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOL
}

fn check_variables(variables: &[Variable]) -> Result<(), CircuitError> {
    let mut names = std::collections::HashSet::new();
    for (i, v) in variables.iter().enumerate() {
        if v.id != i {
            return Err(CircuitError::InvalidVariables(format!(
                "variable ids must be dense 0..n, found {} at position {i}",
                v.id
            )));
        }
        if v.arity < 2 {
            return Err(CircuitError::InvalidVariables(format!(
                "variable {} has arity {} < 2",
                v.name, v.arity
            )));
        }
        if v.name.is_empty() || !names.insert(v.name.as_str()) {
            return Err(CircuitError::InvalidVariables(format!(
                "variable name {:?} is empty or duplicated",
                v.name
            )));
        }
    }
    Ok(())
}

fn check_node(id: NodeId, node: &Node, variables: &[Variable], n_nodes: usize) -> Result<(), CircuitError> {
    let malformed = |reason: String| CircuitError::MalformedNode { node: id, reason };
    for &child in node.children() {
        if child.0 >= n_nodes {
            return Err(CircuitError::DanglingChild { node: id, child });
        }
    }
    match node {
        Node::Sum { children, weights } => {
            if children.is_empty() {
                return Err(malformed("sum node without children".into()));
            }
            if children.len() != weights.len() {
                return Err(malformed(format!(
                    "{} children but {} weights",
                    children.len(),
                    weights.len()
                )));
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(malformed("non-finite weight".into()));
            }
        }
        Node::Product { children } => {
            if children.is_empty() {
                return Err(malformed("product node without children".into()));
            }
        }
        Node::Leaf { scope, table } => {
            if scope.is_empty() {
                return Err(malformed("leaf with empty scope".into()));
            }
            if scope.windows(2).any(|w| w[0] >= w[1]) {
                return Err(malformed("leaf scope must be strictly increasing".into()));
            }
            if let Some(&v) = scope.iter().find(|&&v| v >= variables.len()) {
                return Err(malformed(format!("unknown variable {v} in leaf scope")));
            }
            let arities: Vec<usize> = scope.iter().map(|&v| variables[v].arity).collect();
            let expected = world_count(&arities).ok_or_else(|| malformed("leaf table size overflows".into()))?;
            if table.len() != expected {
                return Err(malformed(format!(
                    "table has {} entries, scope requires {expected}",
                    table.len()
                )));
            }
            if table.iter().any(|p| !p.is_finite()) {
                return Err(malformed("non-finite table entry".into()));
            }
        }
    }
    Ok(())
}

/// Children-before-parents order over every node; fails on cycles.
fn topological_order(nodes: &[Node]) -> Result<Vec<NodeId>, CircuitError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark = vec![Mark::New; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for start in 0..nodes.len() {
        if mark[start] != Mark::New {
            continue;
        }
        mark[start] = Mark::Open;
        stack.push((start, 0));
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let children = nodes[v].children();
            if *next < children.len() {
                let c = children[*next].0;
                *next += 1;
                match mark[c] {
                    Mark::New => {
                        mark[c] = Mark::Open;
                        stack.push((c, 0));
                    }
                    Mark::Open => return Err(CircuitError::CycleDetected(NodeId(c))),
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                order.push(NodeId(v));
                stack.pop();
            }
        }
    }
    Ok(order)
}

fn reachable_from(nodes: &[Node], root: NodeId) -> Vec<bool> {
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![root.0];
    seen[root.0] = true;
    while let Some(v) = stack.pop() {
        for c in nodes[v].children() {
            if !seen[c.0] {
                seen[c.0] = true;
                stack.push(c.0);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernoulli(var: VarId, p1: f64) -> Node {
        Node::Leaf {
            scope: vec![var],
            table: vec![1.0 - p1, p1],
        }
    }

    #[test]
    fn single_leaf_is_valid() {
        let c = Circuit::new(vec![Variable::binary(0, "x0")], vec![bernoulli(0, 0.2)], NodeId(0)).unwrap();
        let r = c.validate();
        assert!(r.is_valid() && r.complete);
        assert_eq!(r.scopes[0], vec![0]);
    }

    #[test]
    fn sum_over_different_scopes_is_not_smooth() {
        let vars = vec![Variable::binary(0, "a"), Variable::binary(1, "b")];
        let nodes = vec![
            bernoulli(0, 0.5),
            bernoulli(1, 0.5),
            Node::Sum {
                children: vec![NodeId(0), NodeId(1)],
                weights: vec![0.5, 0.5],
            },
        ];
        let r = validate_parts(vars, nodes, NodeId(2)).unwrap();
        assert!(!r.smooth);
        assert_eq!(r.non_smooth, vec![NodeId(2)]);
    }

    #[test]
    fn product_with_overlapping_children_is_not_decomposable() {
        let vars = vec![Variable::binary(0, "a")];
        let nodes = vec![
            bernoulli(0, 0.5),
            bernoulli(0, 0.3),
            Node::Product {
                children: vec![NodeId(0), NodeId(1)],
            },
        ];
        let r = validate_parts(vars, nodes, NodeId(2)).unwrap();
        assert!(!r.decomposable);
    }

    #[test]
    fn cycles_and_dangling_children_are_errors() {
        let vars = vec![Variable::binary(0, "a")];
        let cyclic = vec![
            Node::Product { children: vec![NodeId(1)] },
            Node::Product { children: vec![NodeId(0)] },
        ];
        assert!(matches!(
            validate_parts(vars.clone(), cyclic, NodeId(0)),
            Err(CircuitError::CycleDetected(_))
        ));
        let dangling = vec![Node::Product { children: vec![NodeId(5)] }];
        assert!(matches!(
            validate_parts(vars, dangling, NodeId(0)),
            Err(CircuitError::DanglingChild { child: NodeId(5), .. })
        ));
    }

    #[test]
    fn unnormalized_and_zero_weights_are_flagged() {
        let vars = vec![Variable::binary(0, "a")];
        let nodes = vec![
            bernoulli(0, 0.5),
            Node::Leaf {
                scope: vec![0],
                table: vec![0.5, 0.6],
            },
            Node::Sum {
                children: vec![NodeId(0), NodeId(1)],
                weights: vec![1.0, 0.0],
            },
        ];
        let r = validate_parts(vars, nodes, NodeId(2)).unwrap();
        assert!(!r.normalized_leaves);
        assert!(r.normalized_sums);
        assert_eq!(r.zero_weight_edges, vec![(NodeId(2), 1)]);
    }

    #[test]
    fn compact_drops_unreachable_nodes() {
        let vars = vec![Variable::binary(0, "a")];
        let nodes = vec![bernoulli(0, 0.1), bernoulli(0, 0.2)];
        let c = Circuit::new(vars, nodes, NodeId(1)).unwrap();
        assert!(!c.validate().reachable);
        let (compacted, map) = c.compact();
        assert_eq!(compacted.num_nodes(), 1);
        assert_eq!(map, vec![None, Some(NodeId(0))]);
        assert!(compacted.validate().is_valid());
    }
}
