//! Exact nearest-neighbour search under squared L2 distance.
//!
//! Keys live in one row-major `f32` buffer; distances are accumulated in
//! `f64`. Both datastores (sentence and token level) sit on top of
//! [`FlatIndex`].
//!
//! Result ordering is total: ascending distance, then ascending entry id.
//! [`FlatIndex::query_topk`] selects with a bounded heap and
//! [`FlatIndex::query_topk_oracle`] sorts every entry; the two must agree
//! element for element.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value at coordinate {coord} of key {key}")]
    NonFinite { key: usize, coord: usize },

    #[error("index is empty")]
    EmptyIndex,

    #[error("invalid k: must be greater than 0")]
    InvalidK,

    #[error("dimension must be at least 1")]
    ZeroDimension,
}

/// An owned embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorKey(pub Vec<f32>);

impl VectorKey {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f32>> for VectorKey {
    fn from(values: Vec<f32>) -> Self {
        Self(values)
    }
}

impl AsRef<[f32]> for VectorKey {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// One search hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    /// Squared L2 distance to the query.
    pub distance: f64,
}

impl Neighbor {
    fn rank_cmp(&self, other: &Self) -> Ordering {
        self.distance.total_cmp(&other.distance).then(self.id.cmp(&other.id))
    }
}

// Heap wrapper ordered by (distance, id) so the max-heap top is the worst kept hit.
#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Squared L2 distance between two equal-length vectors, accumulated in `f64`.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Flat exact index. Mutable through [`FlatIndex::insert_batch`]; queries only
/// need `&self`, so a built index can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    data: Vec<f32>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(Self { dim, data: Vec::new() })
    }

    /// Rebuilds an index from a row-major key buffer.
    pub fn from_raw(dim: usize, data: Vec<f32>) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite {
                key: pos / dim,
                coord: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn key(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    /// Row-major view of every stored key.
    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Appends `keys` and returns their ids. The whole batch is validated
    /// before anything is written, so a bad key leaves the index unchanged.
    pub fn insert_batch<K: AsRef<[f32]>>(&mut self, keys: &[K]) -> Result<Vec<usize>, IndexError> {
        for (i, key) in keys.iter().enumerate() {
            let key = key.as_ref();
            if key.len() != self.dim {
                return Err(IndexError::DimensionMismatch {
                    expected: self.dim,
                    actual: key.len(),
                });
            }
            if let Some(coord) = key.iter().position(|v| !v.is_finite()) {
                return Err(IndexError::NonFinite {
                    key: self.len() + i,
                    coord,
                });
            }
        }
        let start = self.len();
        self.data.reserve(keys.len() * self.dim);
        for key in keys {
            self.data.extend_from_slice(key.as_ref());
        }
        Ok((start..start + keys.len()).collect())
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<(), IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        Ok(())
    }

    /// The `min(k, len)` closest entries, nearest first.
    pub fn query_topk(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.check_query(query, k)?;
        let k = k.min(self.len());
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        for (id, key) in self.data.chunks_exact(self.dim).enumerate() {
            let hit = Neighbor {
                id,
                distance: squared_l2(query, key),
            };
            if heap.len() < k {
                heap.push(Ranked(hit));
            } else if let Some(worst) = heap.peek() {
                if hit.rank_cmp(&worst.0) == Ordering::Less {
                    heap.pop();
                    heap.push(Ranked(hit));
                }
            }
        }
        Ok(heap.into_sorted_vec().into_iter().map(|r| r.0).collect())
    }

    /// Exhaustive scan followed by a full sort. Ground truth for `query_topk`.
    pub fn query_topk_oracle(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.check_query(query, k)?;
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|id| Neighbor {
                id,
                distance: squared_l2(query, self.key(id)),
            })
            .collect();
        all.sort_by(Neighbor::rank_cmp);
        all.truncate(k);
        Ok(all)
    }
}
