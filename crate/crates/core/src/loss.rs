//! NT-Xent contrastive loss.
//!
//! For two aligned batches of view embeddings `z_i`, `z_j` (`N x d`), rows
//! are L2-normalized and stacked into `r` (`2N x d`). With
//! `Θ = r rᵀ / τ`, the loss is
//!
//! ```text
//! L = -1/(2N) Σ_i log( exp(Θ[i, pos(i)]) / Σ_{j != i} exp(Θ[i, j]) )
//! ```
//!
//! where `pos(i) = i + N` for the first view and `i - N` for the second.
//! The log-sum-exp is evaluated with the row max subtracted.

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature={} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Index of each row's positive partner in the stacked `2N` matrix.
pub fn positive_index(i: usize, n: usize) -> usize {
    if i < n {
        i + n
    } else {
        i - n
    }
}

/// Records the loss on `g` for view embeddings `z_i`, `z_j` and returns the
/// scalar loss node.
pub fn nt_xent_graph(g: &mut Graph, z_i: Var, z_j: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let (si, sj) = (g.shape(z_i).to_vec(), g.shape(z_j).to_vec());
    if si.len() != 2 || si != sj || si[0] == 0 {
        return Err(Error::Shape(format!("nt_xent views {si:?} and {sj:?}")));
    }
    for v in [z_i, z_j] {
        if let Some(x) = g.value(v).data().iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {x}")));
        }
    }
    let n = si[0];
    let a = g.l2_normalize(z_i)?;
    let b = g.l2_normalize(z_j)?;
    let r = g.concat(&[a, b])?;
    let rt = g.transpose(r)?;
    let sim = g.matmul(r, rt)?;
    let theta = g.div_scalar(sim, cfg.temperature);
    let two_n = 2 * n;
    let self_mask: Vec<bool> = (0..two_n * two_n)
        .map(|k| k / two_n == k % two_n)
        .collect();
    let masked = g.masked_fill(theta, &self_mask, f64::NEG_INFINITY)?;
    let log_probs = g.log_softmax(masked)?;
    let targets: Vec<usize> = (0..two_n).map(|i| positive_index(i, n)).collect();
    let picked = g.gather_rows(log_probs, &targets)?;
    let mean = g.mean(picked);
    Ok(g.scale(mean, -1.0))
}

/// Loss value for two `N x d` embedding batches.
pub fn nt_xent(z_i: &Tensor, z_j: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(z_i.clone());
    let b = g.constant(z_j.clone());
    let l = nt_xent_graph(&mut g, a, b, cfg)?;
    // Adding zero turns the -0.0 of a single pair into 0.0.
    Ok(g.value(l).item() + 0.0)
}

/// Loss value and gradients with respect to both inputs.
pub fn nt_xent_with_grad(
    z_i: &Tensor,
    z_j: &Tensor,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let a = g.param(z_i.clone());
    let b = g.param(z_j.clone());
    let l = nt_xent_graph(&mut g, a, b, cfg)?;
    g.backward(l)?;
    let ga = g.grad(a).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; z_i.numel()]);
    let gb = g.grad(b).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; z_j.numel()]);
    Ok((g.value(l).item(), ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let z = m(&[vec![0.3, -1.2, 2.0]]);
        let w = m(&[vec![1.0, 0.5, -0.1]]);
        assert_eq!(nt_xent(&z, &w, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn positive_indices() {
        assert_eq!(positive_index(0, 3), 3);
        assert_eq!(positive_index(2, 3), 5);
        assert_eq!(positive_index(4, 3), 1);
    }

    #[test]
    fn rejects_zero_rows_and_non_finite() {
        let z = m(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let w = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            nt_xent(&z, &w, &LossConfig::default()),
            Err(Error::ZeroNorm { .. })
        ));
        let bad = m(&[vec![f64::NAN, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(
            nt_xent(&bad, &w, &LossConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert!(LossConfig { temperature: 0.0 }.validate().is_err());
    }

    #[test]
    fn large_inputs_stay_finite() {
        let z = m(&[vec![1e200, 1.0], vec![-3.0, 1e-200]]);
        let w = m(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let l = nt_xent(&z, &w, &LossConfig { temperature: 1e-3 }).unwrap();
        assert!(l.is_finite());
    }
}
