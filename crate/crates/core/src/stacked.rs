use crate::error::{Error, Result};

/// Network-level vector `col{w_1, ..., w_K}`: `K` blocks of dimension `M`
/// stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkVector {
    agents: usize,
    dim: usize,
    data: Vec<f64>,
}

impl NetworkVector {
    pub fn zeros(agents: usize, dim: usize) -> Self {
        Self {
            agents,
            dim,
            data: vec![0.0; agents * dim],
        }
    }

    pub fn from_blocks<B: AsRef<[f64]>>(blocks: &[B]) -> Result<Self> {
        let dim = blocks.first().map(|b| b.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(blocks.len() * dim);
        for (k, b) in blocks.iter().enumerate() {
            let b = b.as_ref();
            if b.len() != dim {
                return Err(Error::shape(
                    format!("block {k} of dimension {dim}"),
                    b.len(),
                ));
            }
            data.extend_from_slice(b);
        }
        Ok(Self {
            agents: blocks.len(),
            dim,
            data,
        })
    }

    /// Every agent holds the same block.
    pub fn replicate(block: &[f64], agents: usize) -> Self {
        let mut data = Vec::with_capacity(agents * block.len());
        for _ in 0..agents {
            data.extend_from_slice(block);
        }
        Self {
            agents,
            dim: block.len(),
            data,
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn block(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.agents)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Network average `(1/K) sum_k w_k`.
    pub fn mean_block(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for b in self.blocks() {
            for (m, x) in mean.iter_mut().zip(b) {
                *m += x;
            }
        }
        let inv = 1.0 / self.agents as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.agents == other.agents && self.dim == other.dim
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
