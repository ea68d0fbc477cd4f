use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Iteration limits for Sinkhorn normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub max_iter: usize,
    /// Early-stop threshold on the max-abs change between iterates. Zero
    /// disables early stopping.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-4,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn needs max_iter >= 1 and tol >= 0, got {} and {}",
                self.max_iter, self.tol
            )));
        }
        Ok(())
    }
}

/// A (near) doubly-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation {
    pub p: Tensor,
    pub iterations: usize,
    pub converged: bool,
}

impl SoftPermutation {
    /// Largest deviation of any row or column sum from 1.
    pub fn marginal_error(&self) -> f64 {
        marginal_error(&self.p)
    }
}

pub fn marginal_error(p: &Tensor) -> f64 {
    let (r, c) = (p.rows(), p.cols());
    let rows = (0..r).map(|i| (p.row_slice(i).iter().sum::<f64>() - 1.0).abs());
    let cols = (0..c).map(|j| ((0..r).map(|i| p.get(i, j)).sum::<f64>() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Log-space Sinkhorn on the tape. `log_alpha` is already temperature
/// scaled. Returns `exp` of the normalized log matrix and the iteration count.
pub fn sinkhorn_tape(
    tape: &mut Tape,
    log_alpha: Var,
    cfg: SinkhornConfig,
) -> Result<(Var, usize, bool)> {
    cfg.validate()?;
    let [r, c] = tape.shape(log_alpha);
    if r != c {
        return Err(Error::NotSquare { rows: r, cols: c });
    }
    if !tape.value(log_alpha).is_finite() {
        return Err(Error::NonFinite("sinkhorn logits"));
    }
    let mut la = log_alpha;
    let mut prev: Option<Tensor> = None;
    for it in 1..=cfg.max_iter {
        let lr = tape.logsumexp_rows(la);
        la = tape.sub(la, lr)?;
        let lc = tape.logsumexp_cols(la);
        la = tape.sub(la, lc)?;
        if cfg.tol > 0.0 {
            let cur = tape.value(la).map(f64::exp);
            let done = prev.as_ref().is_some_and(|p| p.max_abs_diff(&cur) < cfg.tol);
            if done {
                return Ok((tape.exp(la), it, true));
            }
            prev = Some(cur);
        }
    }
    Ok((tape.exp(la), cfg.max_iter, false))
}

/// Sinkhorn normalization of `exp(logits / temperature)`.
pub fn sinkhorn(logits: &Tensor, temperature: f64, cfg: SinkhornConfig) -> Result<SoftPermutation> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let x = tape.scale(x, 1.0 / temperature);
    let (p, iterations, converged) = sinkhorn_tape(&mut tape, x, cfg)?;
    Ok(SoftPermutation {
        p: tape.value(p).clone(),
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_logits_give_uniform() {
        for t in [0.1, 1.0, 5.0] {
            let s = sinkhorn(&Tensor::zeros(6, 6), t, SinkhornConfig::default()).unwrap();
            assert!(s.p.data().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        }
    }

    #[test]
    fn diagonal_logits_give_identity() {
        let l = Tensor::from_fn(8, 8, |i, j| if i == j { 10.0 } else { 0.0 });
        let s = sinkhorn(&l, 0.1, SinkhornConfig::default()).unwrap();
        assert!(s.p.max_abs_diff(&Tensor::identity(8)) < 1e-2);
    }

    #[test]
    fn shift_invariance_and_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = Tensor::from_fn(10, 10, |_, _| rng.random_range(-3.0..3.0));
        let shifted = l.map(|x| x + 17.5);
        let a = sinkhorn(&l, 0.7, SinkhornConfig::default()).unwrap();
        let b = sinkhorn(&shifted, 0.7, SinkhornConfig::default()).unwrap();
        assert!(a.p.max_abs_diff(&b.p) < 1e-9);
        assert!(a.converged && a.marginal_error() < 1e-3);
        assert!(a.p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn rejects_bad_input() {
        let mut l = Tensor::zeros(3, 3);
        assert!(sinkhorn(&l, 0.0, SinkhornConfig::default()).is_err());
        assert!(sinkhorn(&Tensor::zeros(2, 3), 1.0, SinkhornConfig::default()).is_err());
        l.set(1, 1, f64::INFINITY);
        assert!(matches!(
            sinkhorn(&l, 1.0, SinkhornConfig::default()),
            Err(Error::NonFinite(_))
        ));
        let cfg = SinkhornConfig { max_iter: 0, tol: 1e-4 };
        assert!(sinkhorn(&Tensor::zeros(2, 2), 1.0, cfg).is_err());
    }

    #[test]
    fn zero_tol_runs_every_iteration() {
        let cfg = SinkhornConfig { max_iter: 7, tol: 0.0 };
        let s = sinkhorn(&Tensor::zeros(3, 3), 1.0, cfg).unwrap();
        assert_eq!((s.iterations, s.converged), (7, false));
    }
}
