//! Dense double-precision tensors and named parameter sets.
//!
//! [`Tensor`] is a row-major array with an explicit shape; it is the carrier
//! for sensor vectors, coordinate batches, weight matrices and solution
//! grids. [`ParamSet`] is an ordered name -> tensor map holding everything
//! trainable, with a per-entry trainable flag. Iteration order is insertion
//! order and survives save/load, which keeps gradient accumulation and
//! optimizer state deterministic.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data. The data length must
    /// equal the product of the extents.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec".into(),
                expected: format!("{expect} values for shape {shape:?}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interpret as a matrix: 1-D tensors become a single row, 2-D keep
    /// their shape. Higher ranks flatten all leading dims into rows.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reject NaN/Inf. Used at the boundaries where model inputs and
    /// parameters are constructed.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.into(),
            })
        }
    }
}

/// One named entry of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered map name -> tensor with a trainable flag per entry.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a new entry. Names must be unique and values finite.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        value.ensure_finite(&format!("parameter `{name}`"))?;
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(Error::UnknownParam(name.into())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    /// Total number of scalar values across trainable entries.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Same names, shapes and order; values may differ.
    pub fn same_structure(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::StructuralMismatch(format!(
                "entry count {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(other.entries.iter()) {
            if a.name != b.name {
                return Err(Error::StructuralMismatch(a.name.clone()));
            }
            if a.value.shape() != b.value.shape() {
                return Err(Error::StructuralMismatch(a.name.clone()));
            }
        }
        Ok(())
    }

    /// Zero tensors with this set's structure. Used for gradients.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for p in &self.entries {
            out.insert(
                p.name.clone(),
                Tensor::zeros(p.value.shape().to_vec()),
                p.trainable,
            )
            .expect("structure is valid by construction");
        }
        out
    }

    /// FNV-1a over the raw little-endian bytes of every entry, in order.
    /// Bitwise-sensitive; used for freeze contracts and determinism checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.entries {
            for b in p.name.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            for v in p.value.data() {
                for b in v.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        h
    }

    /// Checksum restricted to entries matching a predicate.
    pub fn checksum_filtered(&self, mut keep: impl FnMut(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.entries.iter().filter(|p| keep(&p.name)) {
            for b in p.name.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            for v in p.value.data() {
                for b in v.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        h
    }
}

/// Elementwise mean of structurally identical parameter sets.
///
/// Per element, the addends are ordered by `total_cmp` before summing, so
/// the result is bitwise invariant under permutation of the argument list
/// and exactly idempotent on identical inputs.
pub fn average_params(sets: &[&ParamSet]) -> Result<ParamSet> {
    let first = *sets.first().ok_or_else(|| Error::Empty("average_params".into()))?;
    for other in &sets[1..] {
        first.same_structure(other)?;
    }
    let c = sets.len() as f64;
    let mut out = first.clone();
    let mut scratch: Vec<f64> = Vec::with_capacity(sets.len());
    for (ei, entry) in out.entries.iter_mut().enumerate() {
        let n = entry.value.len();
        let dst = entry.value.data_mut();
        for i in 0..n {
            scratch.clear();
            scratch.extend(sets.iter().map(|s| s.entries[ei].value.data()[i]));
            scratch.sort_unstable_by(f64::total_cmp);
            dst[i] = scratch.iter().sum::<f64>() / c;
        }
    }
    Ok(out)
}
