use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest state dimension among the supported benchmarks.
pub const MAX_DIM: usize = 4;

/// A plant state: a short, fixed-capacity vector of reals.
///
/// Stored inline so rollouts never allocate per step.
#[derive(Clone, Copy, PartialEq)]
pub struct State {
    values: [f64; MAX_DIM],
    dim: usize,
}

impl State {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim <= MAX_DIM, "state dimension {dim} exceeds {MAX_DIM}");
        State {
            values: [0.0; MAX_DIM],
            dim,
        }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut s = State::zeros(values.len());
        s.values[..values.len()].copy_from_slice(values);
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values[..self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`
    #[inline]
    pub fn axpy(&self, scale: f64, other: &State) -> State {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for j in 0..self.dim {
            out.values[j] += scale * other.values[j];
        }
        out
    }

    pub fn neg(&self) -> State {
        let mut out = *self;
        for v in out.as_mut_slice() {
            *v = -*v;
        }
        out
    }
}

impl std::fmt::Debug for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl Index<usize> for State {
    type Output = f64;

    #[inline]
    fn index(&self, j: usize) -> &f64 {
        &self.as_slice()[j]
    }
}

impl IndexMut<usize> for State {
    #[inline]
    fn index_mut(&mut self, j: usize) -> &mut f64 {
        &mut self.as_mut_slice()[j]
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.as_slice().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        if values.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "state has {} entries, at most {MAX_DIM} supported",
                values.len()
            )));
        }
        Ok(State::from_slice(&values))
    }
}
