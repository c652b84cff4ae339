//! Circuit JSON format:
//!
//! ```json
//! {"variables": [{"id": 0, "name": "x0", "arity": 2}],
//!  "nodes": [{"id": 0, "kind": "leaf", "scope": [0], "table": [0.8, 0.2]}],
//!  "root": 0}
//! ```
//!
//! Sum nodes carry `children` and `weights`, product nodes `children`.
//! Tables are in world-index order. Loading re-runs structural checks and
//! requires a valid circuit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Circuit, CircuitError, Node, NodeId, VarId, Variable};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum NodeRecord {
    Sum {
        id: usize,
        children: Vec<usize>,
        weights: Vec<f64>,
    },
    Product {
        id: usize,
        children: Vec<usize>,
    },
    Leaf {
        id: usize,
        scope: Vec<VarId>,
        table: Vec<f64>,
    },
}

impl NodeRecord {
    fn id(&self) -> usize {
        match self {
            NodeRecord::Sum { id, .. } | NodeRecord::Product { id, .. } | NodeRecord::Leaf { id, .. } => *id,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CircuitFile {
    variables: Vec<Variable>,
    nodes: Vec<NodeRecord>,
    root: usize,
}

fn ids(children: &[NodeId]) -> Vec<usize> {
    children.iter().map(|c| c.0).collect()
}

impl Circuit {
    pub fn to_json_value(&self) -> serde_json::Value {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match node {
                Node::Sum { children, weights } => NodeRecord::Sum {
                    id,
                    children: ids(children),
                    weights: weights.clone(),
                },
                Node::Product { children } => NodeRecord::Product {
                    id,
                    children: ids(children),
                },
                Node::Leaf { scope, table } => NodeRecord::Leaf {
                    id,
                    scope: scope.clone(),
                    table: table.clone(),
                },
            })
            .collect();
        let file = CircuitFile {
            variables: self.variables.clone(),
            nodes,
            root: self.root.0,
        };
        serde_json::to_value(file).expect("circuit serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("circuit serializes")
    }

    /// Parses and validates. Node records may appear in any order but their
    /// ids must be exactly `0..n`.
    pub fn from_json_str(text: &str) -> Result<Circuit, CircuitError> {
        let file: CircuitFile = serde_json::from_str(text).map_err(|e| CircuitError::Json(e.to_string()))?;
        let mut records = file.nodes;
        records.sort_by_key(NodeRecord::id);
        for (i, r) in records.iter().enumerate() {
            if r.id() != i {
                return Err(CircuitError::Json(format!(
                    "node ids must be dense 0..{}, found {} at position {i}",
                    records.len(),
                    r.id()
                )));
            }
        }
        let nodes = records
            .into_iter()
            .map(|r| match r {
                NodeRecord::Sum { children, weights, .. } => Node::Sum {
                    children: children.into_iter().map(NodeId).collect(),
                    weights,
                },
                NodeRecord::Product { children, .. } => Node::Product {
                    children: children.into_iter().map(NodeId).collect(),
                },
                NodeRecord::Leaf { scope, table, .. } => Node::Leaf { scope, table },
            })
            .collect();
        Circuit::new_valid(file.variables, nodes, NodeId(file.root))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Circuit, CircuitError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CircuitError::Json(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json_string())
    }
}
