//! Low-rank adapters: `W_eff = W + A B` with the base weight frozen.
//!
//! `A` is `[out, r]` with Gaussian(0, 1/r) entries and `B` is `[r, in]`
//! initialized to zero, so a freshly wrapped layer reproduces the base
//! weight exactly. Only `A`/`B` are trainable in adapter mode; base weights
//! and biases are frozen. Ranks are clamped per layer to `min(out, in)` so
//! narrow layers (e.g. a 100 -> 1 head) still get a valid adapter.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

/// Requested ranks; the effective rank of each wrapped layer is
/// `min(requested, out, in)`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LoraRanks {
    pub branch: usize,
    pub trunk: usize,
    pub trunk_final: usize,
}

impl Default for LoraRanks {
    fn default() -> Self {
        LoraRanks {
            branch: 10,
            trunk: 10,
            trunk_final: 4,
        }
    }
}

/// `W + A B` without mutating the base. Shapes: `base [out, in]`,
/// `a [out, r]`, `b [r, in]`, with `1 <= r <= min(out, in)`.
pub fn lora_effective_weight(base: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, cols) = base.matrix_dims();
    let (ar, rank) = a.matrix_dims();
    let (br, bc) = b.matrix_dims();
    if ar != rows || bc != cols || br != rank {
        return Err(Error::ShapeMismatch {
            context: "lora_effective_weight".into(),
            expected: format!("A [{rows},r], B [r,{cols}]"),
            actual: format!("A [{ar},{rank}], B [{br},{bc}]"),
        });
    }
    if rank == 0 || rank > rows.min(cols) {
        return Err(Error::InvalidRank { rank, rows, cols });
    }
    let mut out = base.data().to_vec();
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for k in 0..rank {
                acc += a.data()[i * rank + k] * b.data()[k * cols + j];
            }
            out[i * cols + j] += acc;
        }
    }
    Tensor::from_vec(vec![rows, cols], out)
}

pub fn adapter_a_name(weight: &str) -> String {
    format!("{weight}.lora_a")
}

pub fn adapter_b_name(weight: &str) -> String {
    format!("{weight}.lora_b")
}

/// Add adapter factors for one weight. Returns the effective rank.
pub fn wrap_weight(
    params: &mut ParamSet,
    weight: &str,
    requested_rank: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    if requested_rank == 0 {
        let (rows, cols) = params.get(weight)?.value.matrix_dims();
        return Err(Error::InvalidRank {
            rank: 0,
            rows,
            cols,
        });
    }
    let (rows, cols) = params.get(weight)?.value.matrix_dims();
    let rank = requested_rank.min(rows).min(cols);
    let normal = Normal::new(0.0, (1.0 / rank as f64).sqrt()).expect("valid stddev");
    let a: Vec<f64> = (0..rows * rank).map(|_| normal.sample(rng)).collect();
    params.insert(adapter_a_name(weight), Tensor::from_vec(vec![rows, rank], a)?, true)?;
    params.insert(adapter_b_name(weight), Tensor::zeros(vec![rank, cols]), true)?;
    Ok(rank)
}

/// Count of adapter entries attached to a weight, zero when unwrapped.
pub fn adapter_param_count(params: &ParamSet, weight: &str) -> usize {
    let mut n = 0;
    if let Ok(p) = params.get(&adapter_a_name(weight)) {
        n += p.value.len();
    }
    if let Ok(p) = params.get(&adapter_b_name(weight)) {
        n += p.value.len();
    }
    n
}

pub fn is_adapter_name(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_b_reproduces_base_exactly() {
        let base = Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 4.0, 0.0, 7.0]).unwrap();
        let a = Tensor::from_vec(vec![2, 1], vec![3.0, -1.0]).unwrap();
        let b = Tensor::zeros(vec![1, 3]);
        let eff = lora_effective_weight(&base, &a, &b).unwrap();
        assert_eq!(eff.data(), base.data());
    }

    #[test]
    fn hand_matrix_product() {
        // W = 0 (2x2), A = [[1],[0]], B = [[0,3]] -> W~ = [[0,3],[0,0]]
        let base = Tensor::zeros(vec![2, 2]);
        let a = Tensor::from_vec(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 2], vec![0.0, 3.0]).unwrap();
        let eff = lora_effective_weight(&base, &a, &b).unwrap();
        assert_eq!(eff.data(), &[0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_rank_rejected() {
        let base = Tensor::zeros(vec![2, 2]);
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![3, 2]);
        assert!(matches!(
            lora_effective_weight(&base, &a, &b),
            Err(Error::InvalidRank { rank: 3, .. })
        ));
    }

    #[test]
    fn full_rank_factorization_recovers_any_delta() {
        // r = min(dims): set A = delta, B = I; A B reproduces delta exactly.
        let delta: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let base = Tensor::zeros(vec![4, 3]);
        let a = Tensor::from_vec(vec![4, 3], delta.clone()).unwrap();
        let b = Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let eff = lora_effective_weight(&base, &a, &b).unwrap();
        for (x, y) in eff.data().iter().zip(delta.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn wrap_clamps_rank_to_narrow_layers() {
        let mut params = ParamSet::new();
        params
            .insert("net.w1", Tensor::zeros(vec![1, 100]), true)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rank = wrap_weight(&mut params, "net.w1", 10, &mut rng).unwrap();
        assert_eq!(rank, 1);
        assert_eq!(params.get("net.w1.lora_a").unwrap().value.shape(), &[1, 1]);
        assert_eq!(params.get("net.w1.lora_b").unwrap().value.shape(), &[1, 100]);
    }

    #[test]
    fn rank_zero_is_an_error() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::zeros(vec![4, 4]), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(wrap_weight(&mut params, "w", 0, &mut rng).is_err());
    }
}
