//! Structural rewrites that keep the distribution fixed: merging factorized
//! bucket variables into joint leaves, and expanding joint leaves into sums
//! of indicator products.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::circuit::{Circuit, CircuitError, Node, NodeId, VarId};
use crate::logic::Bucket;
use crate::world::WorldSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("bucket {scope:?} cannot be merged at node {node}: {reason}; retrain with these variables kept together")]
    NotMergeable { scope: Vec<VarId>, node: NodeId, reason: String },
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("node {node} has {worlds} worlds, over the cap of {cap}")]
    TooLarge { node: NodeId, worlds: u128, cap: usize },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketScoping {
    pub scope: Vec<VarId>,
    pub satisfied: bool,
    /// Nodes whose scope meets the bucket without containing it.
    pub violating: Vec<NodeId>,
    pub mergeable: bool,
    /// Why merging is refused, when it is.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopingReport {
    pub buckets: Vec<BucketScoping>,
}

impl ScopingReport {
    pub fn all_satisfied(&self) -> bool {
        self.buckets.iter().all(|b| b.satisfied)
    }
}

enum Overlap {
    None,
    Contains,
    Inside,
    Partial,
}

fn overlap(scope: &[VarId], bucket: &[VarId]) -> Overlap {
    let common = scope.iter().filter(|v| bucket.binary_search(v).is_ok()).count();
    if common == 0 {
        Overlap::None
    } else if common == bucket.len() {
        Overlap::Contains
    } else if common == scope.len() {
        Overlap::Inside
    } else {
        Overlap::Partial
    }
}

pub fn check_bucket_scoping(circuit: &Circuit, buckets: &[Bucket]) -> ScopingReport {
    let buckets = buckets
        .iter()
        .map(|b| {
            let violating: Vec<NodeId> = {
                let mut v: Vec<NodeId> = circuit
                    .order()
                    .iter()
                    .copied()
                    .filter(|&id| {
                        let common = circuit
                            .scope(id)
                            .iter()
                            .filter(|v| b.scope.binary_search(v).is_ok())
                            .count();
                        common > 0 && common < b.scope.len()
                    })
                    .collect();
                v.sort_unstable();
                v
            };
            let satisfied = violating.is_empty();
            let (mergeable, reason) = if satisfied {
                (false, None)
            } else {
                match plan_merge(circuit, &b.scope) {
                    Ok(_) => (true, None),
                    Err(e) => (false, Some(e.to_string())),
                }
            };
            BucketScoping {
                scope: b.scope.clone(),
                satisfied,
                violating,
                mergeable,
                reason,
            }
        })
        .collect();
    ScopingReport { buckets }
}

/// Grows every bucket scope to include all variables sharing a reachable
/// leaf with it, then merges buckets whose grown scopes meet. Constraints
/// over a bucket are unchanged when read over a larger world space, so
/// this only widens the tables the solver works on.
pub fn close_over_leaf_scopes(circuit: &Circuit, buckets: &[Bucket]) -> Vec<Bucket> {
    let leaf_scopes: Vec<&[VarId]> = circuit
        .leaves()
        .into_iter()
        .map(|l| circuit.scope(l))
        .filter(|s| s.len() > 1)
        .collect();
    let mut out: Vec<Bucket> = buckets.to_vec();
    loop {
        let mut changed = false;
        for b in out.iter_mut().filter(|b| !b.scope.is_empty()) {
            for s in &leaf_scopes {
                if s.iter().any(|v| b.scope.binary_search(v).is_ok()) && s.iter().any(|v| b.scope.binary_search(v).is_err()) {
                    b.scope.extend_from_slice(s);
                    b.scope.sort_unstable();
                    b.scope.dedup();
                    changed = true;
                }
            }
        }
        let mut i = 0;
        while i < out.len() {
            let mut j = i + 1;
            while j < out.len() {
                let meet = out[j].scope.iter().any(|v| out[i].scope.binary_search(v).is_ok());
                if meet {
                    let other = out.remove(j);
                    out[i].constraints.extend(other.constraints);
                    out[i].constraints.sort_unstable();
                    out[i].scope.extend(other.scope);
                    out[i].scope.sort_unstable();
                    out[i].scope.dedup();
                    changed = true;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !changed {
            break;
        }
    }
    // Keep smallest-variable order, constant buckets last.
    out.sort_by_key(|b| (b.scope.is_empty(), b.scope.first().copied(), b.constraints[0]));
    out
}

/// How one product node that splits the bucket is rewritten.
struct SplitPlan {
    product: NodeId,
    /// Subcircuits with no bucket variables, kept as product children.
    kept: Vec<NodeId>,
    /// Subcircuits entirely inside the bucket, folded into the joint leaf.
    members: Vec<NodeId>,
}

fn plan_merge(circuit: &Circuit, bucket: &[VarId]) -> Result<Vec<SplitPlan>, TransformError> {
    let refuse = |node: NodeId, reason: &str| TransformError::NotMergeable {
        scope: bucket.to_vec(),
        node,
        reason: reason.to_string(),
    };
    let mut plans = Vec::new();
    for &id in circuit.order() {
        let Node::Product { children } = circuit.node(id) else {
            continue;
        };
        if !matches!(overlap(circuit.scope(id), bucket), Overlap::Contains) {
            continue;
        }
        let touching = children
            .iter()
            .filter(|c| !matches!(overlap(circuit.scope(**c), bucket), Overlap::None))
            .count();
        if touching < 2 {
            continue;
        }
        let mut plan = SplitPlan {
            product: id,
            kept: Vec::new(),
            members: Vec::new(),
        };
        let mut stack: Vec<NodeId> = children.iter().rev().copied().collect();
        while let Some(c) = stack.pop() {
            match overlap(circuit.scope(c), bucket) {
                Overlap::None => plan.kept.push(c),
                Overlap::Inside => plan.members.push(c),
                Overlap::Contains => unreachable!("decomposable product child cannot contain a split bucket"),
                Overlap::Partial => match circuit.node(c) {
                    Node::Product { children } => stack.extend(children.iter().rev().copied()),
                    Node::Sum { .. } => {
                        return Err(refuse(c, "sum node mixes bucket and non-bucket variables"));
                    }
                    Node::Leaf { .. } => {
                        return Err(refuse(c, "leaf mixes bucket and non-bucket variables"));
                    }
                },
            }
        }
        plans.push(plan);
    }
    Ok(plans)
}

/// Distribution of the subcircuit at `node` as a table over its scope.
fn subcircuit_table(circuit: &Circuit, node: NodeId) -> (Vec<VarId>, Vec<f64>) {
    if let Node::Leaf { scope, table } = circuit.node(node) {
        return (scope.clone(), table.clone());
    }
    let scope = circuit.scope(node).to_vec();
    let arities: Vec<usize> = scope.iter().map(|&v| circuit.arity(v)).collect();
    let space = WorldSpace::new(&arities).expect("bucket-sized scope");
    let mut evidence = vec![None; circuit.num_variables()];
    let mut digits = vec![0; scope.len()];
    let table = (0..space.size())
        .map(|w| {
            space.decode_into(w, &mut digits);
            for (v, d) in scope.iter().zip(&digits) {
                evidence[*v] = Some(*d);
            }
            circuit.node_values(&evidence)[node.0]
        })
        .collect();
    (scope, table)
}

/// Joint table over `scope` of independent factors with disjoint scopes
/// covering it.
fn outer_product(circuit: &Circuit, scope: &[VarId], factors: &[(Vec<VarId>, Vec<f64>)]) -> Vec<f64> {
    let arities: Vec<usize> = scope.iter().map(|&v| circuit.arity(v)).collect();
    let space = WorldSpace::new(&arities).expect("bucket-sized scope");
    let spaces: Vec<(Vec<usize>, WorldSpace)> = factors
        .iter()
        .map(|(s, _)| {
            let pos = s.iter().map(|v| scope.binary_search(v).expect("factor inside scope")).collect();
            let ar: Vec<usize> = s.iter().map(|&v| circuit.arity(v)).collect();
            (pos, WorldSpace::new(&ar).expect("sub-scope"))
        })
        .collect();
    let mut digits = vec![0; scope.len()];
    let mut local = Vec::new();
    (0..space.size())
        .map(|w| {
            space.decode_into(w, &mut digits);
            factors
                .iter()
                .zip(&spaces)
                .map(|((_, table), (pos, sp))| {
                    local.clear();
                    local.extend(pos.iter().map(|&p| digits[p]));
                    table[sp.index(&local)]
                })
                .product::<f64>()
        })
        .collect()
}

/// Provenance of one joint leaf created by a merge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedLeaf {
    /// The new joint leaf, in the returned circuit.
    pub leaf: NodeId,
    /// Product node that now holds it, in the returned circuit.
    pub product: NodeId,
    /// Original nodes folded into the leaf, in the input circuit.
    pub members: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Merged {
    pub circuit: Circuit,
    pub merged: Vec<MergedLeaf>,
}

/// Replaces factorized occurrences of the bucket variables by joint leaves.
///
/// Every product node that splits the bucket among its children is
/// flattened through nested products; the parts inside the bucket become
/// one leaf holding their (independent) joint distribution. Sum nodes or
/// leaves that mix bucket and outside variables below such a product make
/// the merge impossible without changing the distribution.
pub fn merge_bucket_leaves(circuit: &Circuit, bucket: &Bucket) -> Result<Merged, TransformError> {
    let scope = &bucket.scope;
    let plans = plan_merge(circuit, scope)?;
    if plans.is_empty() {
        return Ok(Merged {
            circuit: circuit.clone(),
            merged: Vec::new(),
        });
    }
    let mut nodes = circuit.nodes().to_vec();
    let mut created = Vec::new();
    for plan in &plans {
        let factors: Vec<(Vec<VarId>, Vec<f64>)> =
            plan.members.iter().map(|&m| subcircuit_table(circuit, m)).collect();
        let table = outer_product(circuit, scope, &factors);
        nodes.push(Node::Leaf {
            scope: scope.clone(),
            table,
        });
        let leaf = NodeId(nodes.len() - 1);
        let mut children = plan.kept.clone();
        children.push(leaf);
        nodes[plan.product.0] = Node::Product { children };
        created.push((leaf, plan.product, plan.members.clone()));
    }
    let (variables, _, root) = circuit.clone().into_parts();
    let rebuilt = Circuit::new(variables, nodes, root)?;
    let (compacted, map) = rebuilt.compact();
    let merged = created
        .into_iter()
        .map(|(leaf, product, members)| MergedLeaf {
            leaf: map[leaf.0].expect("new leaf is reachable"),
            product: map[product.0].expect("split product is reachable"),
            members,
        })
        .collect();
    Ok(Merged {
        circuit: compacted,
        merged,
    })
}

/// Replaces a leaf over two or more variables by a sum with one product of
/// indicator leaves per world, weighted by the table entry. Univariate
/// leaves are returned unchanged. Node ids of the input are preserved.
pub fn expand_joint_leaf(circuit: &Circuit, leaf: NodeId) -> Result<Circuit, TransformError> {
    expand_joint_leaves(circuit, &[leaf])
}

/// [`expand_joint_leaf`] for several leaves; indicator leaves are shared.
pub fn expand_joint_leaves(circuit: &Circuit, leaves: &[NodeId]) -> Result<Circuit, TransformError> {
    let mut nodes = circuit.nodes().to_vec();
    let mut indicators: BTreeMap<(VarId, usize), NodeId> = BTreeMap::new();
    for &id in leaves {
        let Node::Leaf { scope, table } = circuit.node(id) else {
            return Err(TransformError::NotALeaf(id));
        };
        if scope.len() < 2 {
            continue;
        }
        let arities: Vec<usize> = scope.iter().map(|&v| circuit.arity(v)).collect();
        let space = WorldSpace::new(&arities).expect("leaf table exists");
        let mut products = Vec::with_capacity(space.size());
        for w in 0..space.size() {
            let children = scope
                .iter()
                .zip(space.decode(w))
                .map(|(&var, value)| {
                    *indicators.entry((var, value)).or_insert_with(|| {
                        let mut t = vec![0.0; circuit.arity(var)];
                        t[value] = 1.0;
                        nodes.push(Node::Leaf {
                            scope: vec![var],
                            table: t,
                        });
                        NodeId(nodes.len() - 1)
                    })
                })
                .collect();
            nodes.push(Node::Product { children });
            products.push(NodeId(nodes.len() - 1));
        }
        nodes[id.0] = Node::Sum {
            children: products,
            weights: table.clone(),
        };
    }
    let (variables, _, root) = circuit.clone().into_parts();
    Ok(Circuit::new(variables, nodes, root)?)
}

/// Expands every reachable leaf with a multivariate scope.
pub fn expand_all(circuit: &Circuit) -> Result<Circuit, TransformError> {
    let joint: Vec<NodeId> = circuit
        .leaves()
        .into_iter()
        .filter(|&l| circuit.scope(l).len() > 1)
        .collect();
    expand_joint_leaves(circuit, &joint)
}

/// Replaces the subcircuit at `node` by one leaf holding its distribution.
/// Other parents of shared descendants are unaffected.
pub fn collapse_to_leaf(circuit: &Circuit, node: NodeId, max_worlds: usize) -> Result<Circuit, TransformError> {
    let worlds: u128 = circuit.scope(node).iter().map(|&v| circuit.arity(v) as u128).product();
    if worlds > max_worlds as u128 {
        return Err(TransformError::TooLarge {
            node,
            worlds,
            cap: max_worlds,
        });
    }
    let (scope, table) = subcircuit_table(circuit, node);
    let mut nodes = circuit.nodes().to_vec();
    nodes[node.0] = Node::Leaf { scope, table };
    let (variables, _, root) = circuit.clone().into_parts();
    Ok(Circuit::new(variables, nodes, root)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::CircuitBuilder;

    fn bucket(scope: &[VarId]) -> Bucket {
        Bucket {
            constraints: vec![0],
            scope: scope.to_vec(),
        }
    }

    fn all_worlds(c: &Circuit) -> Vec<f64> {
        let n = c.num_variables();
        (0..1usize << n)
            .map(|w| {
                let ev: Vec<Option<usize>> = (0..n).map(|i| Some((w >> i) & 1)).collect();
                c.evaluate_dense(&ev)
            })
            .collect()
    }

    fn max_gap(a: &Circuit, b: &Circuit) -> f64 {
        all_worlds(a)
            .iter()
            .zip(all_worlds(b))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn joint_leaf_satisfies_scoping() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let c = b.build(l).unwrap();
        let r = check_bucket_scoping(&c, &[bucket(&[0, 1])]);
        assert!(r.buckets[0].satisfied && r.buckets[0].violating.is_empty());
    }

    #[test]
    fn partial_sum_is_a_violation_and_not_mergeable() {
        // sum( leaf{x0,x1}, product(sum(leaf x0, leaf x0), leaf x1) ) is fine;
        // a sum over {x0,x5} under a product splitting {x0,x1} is not.
        let mut b = CircuitBuilder::with_binary_variables(3);
        let a0 = b.bernoulli(0, 0.2);
        let a2 = b.bernoulli(2, 0.6);
        let pa = b.product(vec![a0, a2]);
        let c0 = b.bernoulli(0, 0.7);
        let c2 = b.bernoulli(2, 0.1);
        let pc = b.product(vec![c0, c2]);
        let mix = b.sum(vec![pa, pc], vec![0.5, 0.5]);
        let l1 = b.bernoulli(1, 0.3);
        let root = b.product(vec![mix, l1]);
        let c = b.build(root).unwrap();
        let r = check_bucket_scoping(&c, &[bucket(&[0, 1])]);
        let s = &r.buckets[0];
        assert!(!s.satisfied && !s.mergeable);
        assert!(s.violating.contains(&mix));
        assert!(matches!(
            merge_bucket_leaves(&c, &bucket(&[0, 1])),
            Err(TransformError::NotMergeable { node, .. }) if node == mix
        ));
    }

    #[test]
    fn factorized_product_is_mergeable() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l0 = b.leaf(vec![0], vec![0.8, 0.2]);
        let l1 = b.leaf(vec![1], vec![0.5, 0.5]);
        let root = b.product(vec![l0, l1]);
        let c = b.build(root).unwrap();
        let r = check_bucket_scoping(&c, &[bucket(&[0, 1])]);
        assert!(!r.buckets[0].satisfied && r.buckets[0].mergeable);
        let m = merge_bucket_leaves(&c, &bucket(&[0, 1])).unwrap();
        let joint = m.merged[0].leaf;
        assert_eq!(m.circuit.leaf_table(joint).unwrap(), &[0.4, 0.1, 0.4, 0.1]);
        assert_eq!(m.merged[0].members, vec![l0, l1]);
        assert!(check_bucket_scoping(&m.circuit, &[bucket(&[0, 1])]).all_satisfied());
        assert!(m.circuit.validate().is_valid());
    }

    #[test]
    fn merging_a_joint_leaf_is_a_no_op() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let c = b.build(l).unwrap();
        let m = merge_bucket_leaves(&c, &bucket(&[0, 1])).unwrap();
        assert_eq!(m.circuit, c);
        assert!(m.merged.is_empty());
    }

    #[test]
    fn per_branch_merge_preserves_the_joint() {
        // Two mixture branches factorized differently over {x0,x1,x2};
        // bucket {x0,x1}.
        let mut b = CircuitBuilder::with_binary_variables(3);
        let a0 = b.bernoulli(0, 0.2);
        let a1 = b.bernoulli(1, 0.9);
        let a2 = b.bernoulli(2, 0.4);
        let inner = b.product(vec![a0, a2]);
        let left = b.product(vec![inner, a1]);
        let j01 = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let c0 = b.bernoulli(0, 0.6);
        let c1 = b.bernoulli(1, 0.3);
        let s0 = b.sum(vec![c0, a0], vec![0.5, 0.5]);
        let p01 = b.product(vec![s0, c1]);
        let m01 = b.sum(vec![j01, p01], vec![0.25, 0.75]);
        let b2 = b.bernoulli(2, 0.8);
        let right = b.product(vec![m01, b2]);
        let root = b.sum(vec![left, right], vec![0.3, 0.7]);
        let c = b.build(root).unwrap();
        let m = merge_bucket_leaves(&c, &bucket(&[0, 1])).unwrap();
        assert_eq!(m.merged.len(), 2);
        assert!(m.circuit.validate().is_valid());
        assert!(check_bucket_scoping(&m.circuit, &[bucket(&[0, 1])]).all_satisfied());
        assert!(max_gap(&c, &m.circuit) <= 1e-12);
    }

    #[test]
    fn buckets_grow_to_cover_joint_leaves() {
        let mut b = CircuitBuilder::with_binary_variables(5);
        let j = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let k = b.leaf(vec![2, 3], vec![0.25; 4]);
        let l4 = b.bernoulli(4, 0.5);
        let root = b.product(vec![j, k, l4]);
        let c = b.build(root).unwrap();
        let buckets = vec![
            Bucket { constraints: vec![0], scope: vec![0] },
            Bucket { constraints: vec![1], scope: vec![1] },
            Bucket { constraints: vec![2], scope: vec![3] },
            Bucket { constraints: vec![3], scope: vec![4] },
        ];
        let closed = close_over_leaf_scopes(&c, &buckets);
        assert_eq!(
            closed,
            vec![
                Bucket { constraints: vec![0, 1], scope: vec![0, 1] },
                Bucket { constraints: vec![2], scope: vec![2, 3] },
                Bucket { constraints: vec![3], scope: vec![4] },
            ]
        );
    }

    #[test]
    fn expansion_matches_table_weights() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let c = b.build(l).unwrap();
        let e = expand_joint_leaf(&c, l).unwrap();
        match e.node(l) {
            Node::Sum { children, weights } => {
                assert_eq!(weights, &[0.1, 0.2, 0.3, 0.4]);
                // Second world is x0=1, x1=0.
                let Node::Product { children: ind } = e.node(children[1]) else { panic!() };
                assert_eq!(e.leaf_table(ind[0]).unwrap(), &[0.0, 1.0]);
                assert_eq!(e.leaf_table(ind[1]).unwrap(), &[1.0, 0.0]);
            }
            other => panic!("{other:?}"),
        }
        assert!(e.validate().is_valid());
        assert!(max_gap(&c, &e) <= 1e-12);
    }

    #[test]
    fn uniform_expansion_and_three_variable_round_trip() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.25; 4]);
        let c = b.build(l).unwrap();
        let Node::Sum { weights, .. } = expand_joint_leaf(&c, l).unwrap().node(l).clone() else { panic!() };
        assert_eq!(weights, vec![0.25; 4]);

        let table = vec![0.05, 0.1, 0.15, 0.2, 0.05, 0.1, 0.15, 0.2];
        let mut b = CircuitBuilder::with_binary_variables(3);
        let l = b.leaf(vec![0, 1, 2], table.clone());
        let c = b.build(l).unwrap();
        let e = expand_joint_leaf(&c, l).unwrap();
        assert_eq!(e.node(l).children().len(), 8);
        let back = collapse_to_leaf(&e, l, 1 << 20).unwrap();
        let got = back.leaf_table(l).unwrap();
        for (a, b) in got.iter().zip(&table) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn expansion_is_idempotent_after_first_pass() {
        let mut b = CircuitBuilder::with_binary_variables(3);
        let j = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let l2 = b.bernoulli(2, 0.3);
        let root = b.product(vec![j, l2]);
        let c = b.build(root).unwrap();
        let once = expand_all(&c).unwrap();
        let twice = expand_all(&once).unwrap();
        assert_eq!(once, twice);
        let merged = merge_bucket_leaves(&once, &bucket(&[0, 1])).unwrap().circuit;
        let again = expand_all(&merged).unwrap();
        assert!(max_gap(&c, &again) <= 1e-12);
        assert_eq!(expand_all(&again).unwrap(), again);
    }
}
