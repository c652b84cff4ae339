//! Feed-forward marginal queries and the backward flow pass.

use std::collections::BTreeMap;

use super::{Circuit, CircuitError, Evidence, Node, NodeId, VarId};

impl Circuit {
    /// Dense evidence vector indexed by variable id.
    pub fn dense_evidence(&self, evidence: &Evidence) -> Result<Vec<Option<usize>>, CircuitError> {
        let mut dense = vec![None; self.variables.len()];
        for (var, value) in evidence.iter() {
            let variable = self
                .variables
                .get(var)
                .ok_or_else(|| CircuitError::InvalidEvidence(format!("unknown variable {var}")))?;
            if value >= variable.arity {
                return Err(CircuitError::InvalidEvidence(format!(
                    "value {value} out of range for {} (arity {})",
                    variable.name, variable.arity
                )));
            }
            dense[var] = Some(value);
        }
        Ok(dense)
    }

    /// `p(X_o = x_o)`; variables absent from `evidence` are summed out.
    pub fn evaluate(&self, evidence: &Evidence) -> Result<f64, CircuitError> {
        let dense = self.dense_evidence(evidence)?;
        Ok(self.evaluate_dense(&dense))
    }

    /// As [`Circuit::evaluate`] with pre-checked dense evidence.
    pub fn evaluate_dense(&self, evidence: &[Option<usize>]) -> f64 {
        let mut values = vec![0.0; self.nodes.len()];
        self.forward(evidence, &mut values);
        values[self.root.0]
    }

    /// Value of every reachable node under `evidence`; unreachable entries are 0.
    pub fn node_values(&self, evidence: &[Option<usize>]) -> Vec<f64> {
        let mut values = vec![0.0; self.nodes.len()];
        self.forward(evidence, &mut values);
        values
    }

    pub(crate) fn forward(&self, evidence: &[Option<usize>], values: &mut [f64]) {
        for &id in &self.order {
            values[id.0] = match &self.nodes[id.0] {
                Node::Leaf { scope, table } => self.leaf_marginal(scope, table, evidence),
                Node::Product { children } => children.iter().map(|c| values[c.0]).product(),
                Node::Sum { children, weights } => children
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| w * values[c.0])
                    .sum(),
            };
        }
    }

    /// `log p(X_o = x_o)` with log-sum-exp at sum nodes; `-inf` for
    /// zero-probability evidence.
    pub fn log_evaluate(&self, evidence: &Evidence) -> Result<f64, CircuitError> {
        let dense = self.dense_evidence(evidence)?;
        Ok(self.log_evaluate_dense(&dense))
    }

    pub fn log_evaluate_dense(&self, evidence: &[Option<usize>]) -> f64 {
        let mut values = vec![f64::NEG_INFINITY; self.nodes.len()];
        let mut terms = Vec::new();
        for &id in &self.order {
            values[id.0] = match &self.nodes[id.0] {
                Node::Leaf { scope, table } => self.leaf_marginal(scope, table, evidence).ln(),
                Node::Product { children } => children.iter().map(|c| values[c.0]).sum(),
                Node::Sum { children, weights } => {
                    terms.clear();
                    terms.extend(
                        children
                            .iter()
                            .zip(weights)
                            .filter(|(_, &w)| w > 0.0)
                            .map(|(c, w)| w.ln() + values[c.0]),
                    );
                    log_sum_exp(&terms)
                }
            };
        }
        values[self.root.0]
    }

    /// Sum of the leaf table entries consistent with `evidence`.
    fn leaf_marginal(&self, scope: &[VarId], table: &[f64], evidence: &[Option<usize>]) -> f64 {
        let mut base = 0;
        let mut stride = 1;
        let mut free: Vec<(usize, usize)> = Vec::new();
        for &v in scope {
            let arity = self.variables[v].arity;
            match evidence[v] {
                Some(x) => base += x * stride,
                None => free.push((stride, arity)),
            }
            stride *= arity;
        }
        if free.is_empty() {
            return table[base];
        }
        if free.len() == scope.len() {
            return table.iter().sum();
        }
        let mut digits = vec![0usize; free.len()];
        let mut total = 0.0;
        loop {
            let offset: usize = digits.iter().zip(&free).map(|(d, (s, _))| d * s).sum();
            total += table[base + offset];
            let mut k = 0;
            loop {
                if k == free.len() {
                    return total;
                }
                digits[k] += 1;
                if digits[k] < free[k].1 {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
        }
    }

    /// Backward pass from the root with every leaf outputting 1: the value
    /// at node `v` is the total mixture mass of latent states routed
    /// through `v`.
    pub fn flows(&self) -> Vec<f64> {
        let mut flow = vec![0.0; self.nodes.len()];
        flow[self.root.0] = 1.0;
        for &id in self.order.iter().rev() {
            let f = flow[id.0];
            match &self.nodes[id.0] {
                Node::Sum { children, weights } => {
                    for (c, w) in children.iter().zip(weights) {
                        flow[c.0] += w * f;
                    }
                }
                Node::Product { children } => {
                    for c in children {
                        flow[c.0] += f;
                    }
                }
                Node::Leaf { .. } => {}
            }
        }
        flow
    }

    /// Mixture weight `w_l` of every reachable leaf whose scope equals
    /// `scope_filter` (any order, duplicates ignored).
    pub fn leaf_weights(&self, scope_filter: &[VarId]) -> Result<BTreeMap<NodeId, f64>, CircuitError> {
        let mut filter = scope_filter.to_vec();
        filter.sort_unstable();
        filter.dedup();
        let flow = self.flows();
        let weights: BTreeMap<NodeId, f64> = self
            .order
            .iter()
            .filter(|id| self.nodes[id.0].is_leaf() && self.scopes[id.0] == filter)
            .map(|&id| (id, flow[id.0]))
            .collect();
        if weights.is_empty() {
            return Err(CircuitError::ScopeNotPresent(filter));
        }
        Ok(weights)
    }

    /// Most probable value of `target` given `evidence`; ties go to the
    /// smaller value index.
    pub fn conditional_argmax(&self, target: VarId, evidence: &Evidence) -> Result<usize, CircuitError> {
        if target >= self.variables.len() {
            return Err(CircuitError::InvalidEvidence(format!("unknown target variable {target}")));
        }
        if evidence.contains(target) {
            return Err(CircuitError::InvalidEvidence(format!(
                "target {} is part of the evidence",
                self.variables[target].name
            )));
        }
        let mut dense = self.dense_evidence(evidence)?;
        Ok(self.argmax_dense(target, &mut dense))
    }

    /// Dense variant; `evidence[target]` is overwritten and restored to `None`.
    pub fn argmax_dense(&self, target: VarId, evidence: &mut [Option<usize>]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        let mut values = vec![0.0; self.nodes.len()];
        for v in 0..self.variables[target].arity {
            evidence[target] = Some(v);
            self.forward(evidence, &mut values);
            let p = values[self.root.0];
            if p > best.1 {
                best = (v, p);
            }
        }
        evidence[target] = None;
        best.0
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::super::CircuitBuilder;
    use super::*;

    /// Root sum (0.8, 0.2) over two fully factorized products on 3 variables.
    fn three_var_mixture() -> Circuit {
        let mut b = CircuitBuilder::with_binary_variables(3);
        let a: Vec<NodeId> = [0.1, 0.6, 0.3].iter().enumerate().map(|(v, &p)| b.bernoulli(v, p)).collect();
        let c: Vec<NodeId> = [0.7, 0.2, 0.9].iter().enumerate().map(|(v, &p)| b.bernoulli(v, p)).collect();
        let pa = b.product(a);
        let pc = b.product(c);
        let root = b.sum(vec![pa, pc], vec![0.8, 0.2]);
        b.build(root).unwrap()
    }

    #[test]
    fn bernoulli_lookup() {
        let mut b = CircuitBuilder::with_binary_variables(1);
        let l = b.leaf(vec![0], vec![0.8, 0.2]);
        let c = b.build(l).unwrap();
        assert_eq!(c.evaluate(&Evidence::new().with(0, 1)).unwrap(), 0.2);
        assert!((c.evaluate(&Evidence::new()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_matches_enumeration_of_worlds() {
        let c = three_var_mixture();
        let mut brute = 0.0;
        for x1 in 0..2 {
            for x2 in 0..2 {
                brute += c
                    .evaluate(&Evidence::new().with(0, 1).with(1, x1).with(2, x2))
                    .unwrap();
            }
        }
        let direct = c.evaluate(&Evidence::new().with(0, 1)).unwrap();
        assert!((direct - brute).abs() < 1e-15);
        // 0.8 * 0.1 + 0.2 * 0.7
        assert!((direct - 0.22).abs() < 1e-15);
    }

    #[test]
    fn log_domain_agrees() {
        let c = three_var_mixture();
        for ev in [
            Evidence::new(),
            Evidence::new().with(0, 1),
            Evidence::new().with(0, 1).with(2, 0),
        ] {
            let p = c.evaluate(&ev).unwrap();
            let lp = c.log_evaluate(&ev).unwrap();
            assert!((lp.exp() - p).abs() <= 1e-12 * p);
        }
    }

    #[test]
    fn zero_probability_gives_negative_infinity() {
        let mut b = CircuitBuilder::with_binary_variables(1);
        let l = b.leaf(vec![0], vec![1.0, 0.0]);
        let c = b.build(l).unwrap();
        assert_eq!(c.log_evaluate(&Evidence::new().with(0, 1)).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn out_of_range_evidence_is_rejected() {
        let c = three_var_mixture();
        assert!(matches!(
            c.evaluate(&Evidence::new().with(0, 2)),
            Err(CircuitError::InvalidEvidence(_))
        ));
    }

    #[test]
    fn leaf_weights_read_off_root_sum() {
        let mut b = CircuitBuilder::with_binary_variables(3);
        let ja = b.leaf(vec![0, 1], vec![0.25; 4]);
        let ra = b.bernoulli(2, 0.5);
        let jb = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let rb = b.bernoulli(2, 0.1);
        let pa = b.product(vec![ja, ra]);
        let pb = b.product(vec![jb, rb]);
        let root = b.sum(vec![pa, pb], vec![0.3, 0.7]);
        let c = b.build(root).unwrap();
        let w = c.leaf_weights(&[1, 0]).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w[&ja] - 0.3).abs() < 1e-15);
        assert!((w[&jb] - 0.7).abs() < 1e-15);
        assert!(matches!(c.leaf_weights(&[0]), Err(CircuitError::ScopeNotPresent(_))));
    }

    #[test]
    fn single_leaf_weight_is_one() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.25; 4]);
        let c = b.build(l).unwrap();
        assert_eq!(c.leaf_weights(&[0, 1]).unwrap()[&l], 1.0);
    }

    #[test]
    fn conditional_argmax_examples() {
        // Joint leaf over (y = 0, x' = 1): worlds (y,x') = 00,10,01,11.
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let c = b.build(l).unwrap();
        // p(y=0, x'=1) = 0.3 < p(y=1, x'=1) = 0.4
        assert_eq!(c.conditional_argmax(0, &Evidence::new().with(1, 1)).unwrap(), 1);
        assert!(c.conditional_argmax(0, &Evidence::new().with(0, 1)).is_err());

        let mut b = CircuitBuilder::with_binary_variables(1);
        let l = b.leaf(vec![0], vec![1.0, 0.0]);
        let c = b.build(l).unwrap();
        assert_eq!(c.conditional_argmax(0, &Evidence::new()).unwrap(), 0);

        let mut b = CircuitBuilder::with_binary_variables(1);
        let l = b.leaf(vec![0], vec![0.5, 0.5]);
        let c = b.build(l).unwrap();
        assert_eq!(c.conditional_argmax(0, &Evidence::new()).unwrap(), 0);
    }

    #[test]
    fn figure_one_topology_is_valid() {
        // Three variables, root sum (.8, .2); inner sums (.5, .5) and (.3, .7).
        let mut b = CircuitBuilder::new();
        for name in ["X1", "X2", "X3"] {
            b.add_variable(name, 3);
        }
        let cat = |b: &mut CircuitBuilder, v: usize, t: [f64; 3]| b.leaf(vec![v], t.to_vec());
        let pa = cat(&mut b, 0, [0.2, 0.3, 0.5]);
        let pb = cat(&mut b, 1, [0.6, 0.2, 0.2]);
        let pc = cat(&mut b, 2, [0.1, 0.1, 0.8]);
        let pd = cat(&mut b, 1, [0.3, 0.3, 0.4]);
        let pe = cat(&mut b, 2, [0.5, 0.25, 0.25]);
        let pf = cat(&mut b, 0, [0.9, 0.05, 0.05]);
        let pg = cat(&mut b, 0, [0.4, 0.4, 0.2]);
        let ph = cat(&mut b, 2, [0.2, 0.7, 0.1]);
        let pi = cat(&mut b, 1, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let p31 = b.product(vec![pb, pc]);
        let p32 = b.product(vec![pd, pe]);
        // pe is shared between the two branches in the drawing.
        let p33 = b.product(vec![pe, pf]);
        let p34 = b.product(vec![pg, ph]);
        let s21 = b.sum(vec![p31, p32], vec![0.5, 0.5]);
        let s22 = b.sum(vec![p33, p34], vec![0.3, 0.7]);
        let p11 = b.product(vec![pa, s21]);
        let p12 = b.product(vec![s22, pi]);
        let root = b.sum(vec![p11, p12], vec![0.8, 0.2]);
        let c = b.build(root).unwrap();
        let report = c.validate();
        assert!(report.is_valid() && report.complete, "{report:?}");
        let total: f64 = (0..27)
            .map(|w| {
                let ev = Evidence::new().with(0, w % 3).with(1, (w / 3) % 3).with(2, w / 9);
                c.evaluate(&ev).unwrap()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
