//! Indexing of joint assignments ("worlds") over a sorted variable scope.
//!
//! An assignment to the scope `v0 < v1 < ... < v(k-1)` maps to
//! `sum_j value(v_j) * prod_{i<j} arity(v_i)`, so the lowest variable id is
//! the least significant digit. Leaf tables, constraint rows, indicators and
//! every file format share this convention.

/// Mixed-radix index space over a list of arities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldSpace {
    arities: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl WorldSpace {
    /// Returns `None` when the number of worlds overflows `usize`.
    pub fn new(arities: &[usize]) -> Option<Self> {
        let mut strides = Vec::with_capacity(arities.len());
        let mut size: usize = 1;
        for &a in arities {
            strides.push(size);
            size = size.checked_mul(a)?;
        }
        Some(Self {
            arities: arities.to_vec(),
            strides,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn arities(&self) -> &[usize] {
        &self.arities
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index(&self, values: &[usize]) -> usize {
        debug_assert_eq!(values.len(), self.arities.len());
        values
            .iter()
            .zip(&self.strides)
            .map(|(v, s)| v * s)
            .sum()
    }

    /// Value of the `position`-th scope variable in `world`.
    pub fn digit(&self, world: usize, position: usize) -> usize {
        (world / self.strides[position]) % self.arities[position]
    }

    pub fn decode(&self, world: usize) -> Vec<usize> {
        (0..self.arities.len())
            .map(|j| self.digit(world, j))
            .collect()
    }

    pub fn decode_into(&self, world: usize, out: &mut [usize]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.digit(world, j);
        }
    }
}

/// Number of worlds for the given arities, or `None` on overflow.
pub fn world_count(arities: &[usize]) -> Option<usize> {
    arities.iter().try_fold(1usize, |acc, &a| acc.checked_mul(a))
}
