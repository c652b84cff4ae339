use super::{Circuit, CircuitError, Node, NodeId, VarId, Variable};

/// Incremental construction of a [`Circuit`].
///
/// ```
/// use pplpc::circuit::CircuitBuilder;
///
/// let mut b = CircuitBuilder::with_binary_variables(2);
/// let l0 = b.bernoulli(0, 0.2);
/// let l1 = b.bernoulli(1, 0.5);
/// let root = b.product(vec![l0, l1]);
/// let circuit = b.build(root).unwrap();
/// assert!(circuit.validate().is_valid());
/// ```
#[derive(Debug, Clone, Default)]
pub struct CircuitBuilder {
    variables: Vec<Variable>,
    nodes: Vec<Node>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binary variables named `x0`, `x1`, ...
    pub fn with_binary_variables(n: usize) -> Self {
        Self {
            variables: (0..n).map(|i| Variable::binary(i, format!("x{i}"))).collect(),
            nodes: Vec::new(),
        }
    }

    pub fn with_variables(variables: Vec<Variable>) -> Self {
        Self {
            variables,
            nodes: Vec::new(),
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, arity: usize) -> VarId {
        let id = self.variables.len();
        self.variables.push(Variable {
            id,
            name: name.into(),
            arity,
        });
        id
    }

    pub fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, scope: Vec<VarId>, table: Vec<f64>) -> NodeId {
        self.push(Node::Leaf { scope, table })
    }

    /// Binary leaf with `p(var = 1) = p1`.
    pub fn bernoulli(&mut self, var: VarId, p1: f64) -> NodeId {
        self.leaf(vec![var], vec![1.0 - p1, p1])
    }

    pub fn sum(&mut self, children: Vec<NodeId>, weights: Vec<f64>) -> NodeId {
        self.push(Node::Sum { children, weights })
    }

    pub fn product(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(Node::Product { children })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn build(self, root: NodeId) -> Result<Circuit, CircuitError> {
        Circuit::new(self.variables, self.nodes, root)
    }
}
