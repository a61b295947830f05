use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use super::params::ValueHead;
use super::tensor::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: Vec<f64>,
    value: Vec<f64>,
    label: Option<usize>,
}

/// FIFO memory of spatially averaged keys, their head values and
/// optional image-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainBank {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Entry>,
}

/// Frozen copy of a bank's contents for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySnapshot {
    /// Unit-normalized keys, one per row.
    pub keys: Matrix,
    pub values: Matrix,
    /// Labels of labeled entries (all entries, or none).
    pub labels: Option<Vec<usize>>,
}

impl MemorySnapshot {
    pub fn len(&self) -> usize {
        self.keys.rows
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows == 0
    }

    /// One-hot label matrix `len × num_classes`.
    pub fn one_hot(&self, num_classes: usize) -> Result<Matrix> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::input("memory entries carry no labels"))?;
        let mut m = Matrix::zeros(labels.len(), num_classes);
        for (r, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::Dimension {
                    expected: num_classes,
                    actual: l + 1,
                });
            }
            m.data[r * num_classes + l] = 1.0;
        }
        Ok(m)
    }
}

impl PretrainBank {
    pub fn new(capacity: usize, dim: usize) -> Self {
        PretrainBank {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys oldest first.
    pub fn keys(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.entries.iter().map(|e| e.key.as_slice())
    }

    pub fn values(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.entries.iter().map(|e| e.value.as_slice())
    }

    pub fn labels(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.entries.iter().map(|e| e.label)
    }

    /// Pushes one entry per feature grid: the key is the grid's spatial
    /// mean and the value is `head(key)` over the whole pushed batch.
    /// Oldest entries are evicted beyond capacity.
    pub fn push(
        &mut self,
        grids: &[Matrix],
        head: &ValueHead,
        labels: Option<&[usize]>,
    ) -> Result<()> {
        if let Some(l) = labels {
            if l.len() != grids.len() {
                return Err(Error::shape(format!(
                    "{} labels for {} grids",
                    l.len(),
                    grids.len()
                )));
            }
        }
        if grids.is_empty() {
            return Ok(());
        }
        let mut keys = Matrix::zeros(grids.len(), self.dim);
        for (i, g) in grids.iter().enumerate() {
            if g.cols != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    actual: g.cols,
                });
            }
            if g.rows == 0 {
                return Err(Error::Empty("cannot average an empty grid"));
            }
            keys.row_mut(i).copy_from_slice(&g.mean_rows().data);
        }
        if !keys.is_finite() {
            return Err(Error::NonFinite("memory key".into()));
        }
        let values = head.apply(&keys);
        for i in 0..grids.len() {
            if self.capacity == 0 {
                break;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(Entry {
                key: keys.row(i).to_vec(),
                value: values.row(i).to_vec(),
                label: labels.map(|l| l[i]),
            });
        }
        Ok(())
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        let n = self.entries.len();
        let mut keys = Matrix::zeros(n, self.dim);
        let mut values = Matrix::zeros(n, self.dim);
        for (i, e) in self.entries.iter().enumerate() {
            let norm = crate::math::norm_f64(&e.key);
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            keys.row_mut(i)
                .iter_mut()
                .zip(&e.key)
                .for_each(|(o, k)| *o = k * scale);
            values.row_mut(i).copy_from_slice(&e.value);
        }
        let labels = if n > 0 && self.entries.iter().all(|e| e.label.is_some()) {
            Some(self.entries.iter().filter_map(|e| e.label).collect())
        } else {
            None
        };
        MemorySnapshot {
            keys,
            values,
            labels,
        }
    }
}
