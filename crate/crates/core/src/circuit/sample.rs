use rand::Rng;

use super::{Circuit, Node, NodeId};

fn pick(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding fell off the end: last index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl Circuit {
    /// One ancestral sample of every variable. Variables outside the root
    /// scope are left at 0.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = vec![0; self.variables.len()];
        let mut stack = vec![self.root];
        while let Some(NodeId(id)) = stack.pop() {
            match &self.nodes[id] {
                Node::Sum { children, weights } => stack.push(children[pick(rng, weights)]),
                Node::Product { children } => stack.extend(children.iter().copied()),
                Node::Leaf { scope, table } => {
                    let mut w = pick(rng, table);
                    for &v in scope {
                        let a = self.variables[v].arity;
                        out[v] = w % a;
                        w /= a;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use crate::circuit::CircuitBuilder;
    use crate::rng::rng_from_seed;

    #[test]
    fn sample_frequencies_follow_the_joint() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let j = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let l0 = b.bernoulli(0, 0.5);
        let l1 = b.bernoulli(1, 0.5);
        let p = b.product(vec![l0, l1]);
        let root = b.sum(vec![j, p], vec![0.6, 0.4]);
        let c = b.build(root).unwrap();
        let mut rng = rng_from_seed(7);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let s = c.sample(&mut rng);
            counts[s[0] + 2 * s[1]] += 1;
        }
        let expect = [0.16, 0.22, 0.28, 0.34];
        for (k, e) in counts.iter().zip(expect) {
            let f = *k as f64 / n as f64;
            assert!((f - e).abs() < 4.0 * (e * (1.0 - e) / n as f64).sqrt(), "{f} vs {e}");
        }
    }
}
