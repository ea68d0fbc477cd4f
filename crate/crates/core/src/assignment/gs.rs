//! The Gumbel-Sinkhorn module and its pre-training on random matrices.
//!
//! The module maps a cost matrix `C` to `sinkhorn((-w * C + g) / t)` where
//! `w = softplus(a)` and `t = softplus(b)` are learned scalars and `g` is
//! truncated Gumbel noise, drawn only in training mode.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian, permutation_matrix};
use super::sinkhorn::{sinkhorn_tape, SinkhornConfig, SoftPermutation};
use crate::autodiff::{
    adam_step, softplus_inverse, softplus_unit, AdamState, Binding, ParamGrads, ParamId,
    ParamStore, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::eval::kendall_tau;

/// Frame sizes the module is pre-trained for.
pub const FRAME_SIZES: [usize; 3] = [16, 32, 64];

/// Gumbel samples are clipped to `[-GUMBEL_CLIP, GUMBEL_CLIP]`.
pub const GUMBEL_CLIP: f64 = 3.0;

const WEIGHT: &str = "gs.weight";
const TEMPERATURE: &str = "gs.temperature";
pub const GS_GROUP: &str = "gs";

/// Truncated Gumbel(0, 1) noise times `scale`; deterministic per seed.
pub fn truncated_gumbel_noise(rows: usize, cols: usize, scale: f64, seed: u64) -> Tensor {
    if scale == 0.0 {
        return Tensor::zeros(rows, cols);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gumbel = Gumbel::<f64>::new(0.0, 1.0).expect("unit Gumbel is valid");
    Tensor::from_fn(rows, cols, |_, _| {
        gumbel.sample(&mut rng).clamp(-GUMBEL_CLIP, GUMBEL_CLIP) * scale
    })
}

#[derive(Debug, Clone)]
pub struct GsParams {
    store: ParamStore,
    weight: ParamId,
    temperature: ParamId,
    pub sinkhorn: SinkhornConfig,
    pub noise_scale: f64,
    pub frame_size: usize,
}

/// Tape handles of the module's two scalars.
#[derive(Debug, Clone, Copy)]
pub struct GsVars {
    weight: Var,
    temperature: Var,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GsMeta {
    frame_size: usize,
    temperature: f64,
    weight: f64,
    max_iter: usize,
    tol: f64,
    noise_scale: f64,
}

impl GsParams {
    /// Untrained module with unit weight and unit temperature.
    pub fn new(frame_size: usize) -> Result<Self> {
        if !FRAME_SIZES.contains(&frame_size) {
            return Err(Error::InvalidArgument(format!(
                "frame size must be one of {FRAME_SIZES:?}, got {frame_size}"
            )));
        }
        let mut store = ParamStore::new();
        let weight = store.add(WEIGHT, GS_GROUP, Tensor::scalar(softplus_inverse(1.0)));
        let temperature = store.add(TEMPERATURE, GS_GROUP, Tensor::scalar(softplus_inverse(1.0)));
        Ok(Self {
            store,
            weight,
            temperature,
            sinkhorn: SinkhornConfig::default(),
            noise_scale: 0.5,
            frame_size,
        })
    }

    /// Module with the given positive weight and temperature.
    pub fn with_scalars(frame_size: usize, weight: f64, temperature: f64) -> Result<Self> {
        if !(weight > 0.0 && temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight {weight} and temperature {temperature} must be positive"
            )));
        }
        let mut gs = Self::new(frame_size)?;
        *gs.store.value_mut(gs.weight) = Tensor::scalar(softplus_inverse(weight));
        *gs.store.value_mut(gs.temperature) = Tensor::scalar(softplus_inverse(temperature));
        Ok(gs)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn weight(&self) -> f64 {
        softplus_unit(self.store.value(self.weight).item())
    }

    pub fn temperature(&self) -> f64 {
        softplus_unit(self.store.value(self.temperature).item())
    }

    fn vars(&self, binding: &Binding) -> GsVars {
        GsVars {
            weight: binding.get(self.weight),
            temperature: binding.get(self.temperature),
        }
    }

    /// Places the (frozen) module on a tape as constants.
    pub fn bind_frozen(&self, tape: &mut Tape) -> GsVars {
        GsVars {
            weight: tape.constant(self.store.value(self.weight).clone()),
            temperature: tape.constant(self.store.value(self.temperature).clone()),
        }
    }

    pub fn check_frame(&self, n: usize) -> Result<()> {
        if n > self.frame_size {
            return Err(Error::FrameTooLarge {
                frame: n,
                limit: self.frame_size,
            });
        }
        Ok(())
    }

    /// Soft permutation of a cost matrix on the tape.
    pub fn apply(
        &self,
        tape: &mut Tape,
        vars: GsVars,
        cost: Var,
        noise: Option<&Tensor>,
    ) -> Result<(Var, usize, bool)> {
        let [n, m] = tape.shape(cost);
        if n != m {
            return Err(Error::NotSquare { rows: n, cols: m });
        }
        self.check_frame(n)?;
        if !tape.value(cost).is_finite() {
            return Err(Error::NonFinite("assignment cost"));
        }
        let w = tape.softplus(vars.weight, 1.0);
        let t = tape.softplus(vars.temperature, 1.0);
        let mut x = tape.mul(cost, w)?;
        x = tape.neg(x);
        if let Some(g) = noise {
            let g = tape.constant(g.clone());
            x = tape.add(x, g)?;
        }
        x = tape.div(x, t)?;
        sinkhorn_tape(tape, x, self.sinkhorn)
    }

    /// Forward pass outside any training graph. Noise is drawn from `seed`
    /// only in training mode.
    pub fn gumbel_sinkhorn(&self, cost: &Tensor, train_mode: bool, seed: u64) -> Result<SoftPermutation> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let c = tape.constant(cost.clone());
        let noise = train_mode
            .then(|| truncated_gumbel_noise(cost.rows(), cost.cols(), self.noise_scale, seed));
        let (p, iterations, converged) = self.apply(&mut tape, vars, c, noise.as_ref())?;
        Ok(SoftPermutation {
            p: tape.value(p).clone(),
            iterations,
            converged,
        })
    }

    /// `sum(P * C)` at inference.
    pub fn soft_total(&self, cost: &Tensor) -> Result<f64> {
        let p = self.gumbel_sinkhorn(cost, false, 0)?.p;
        Ok(p.data().iter().zip(cost.data()).map(|(a, b)| a * b).sum())
    }

    fn meta(&self) -> Result<BTreeMap<String, serde_json::Value>> {
        let meta = GsMeta {
            frame_size: self.frame_size,
            temperature: self.temperature(),
            weight: self.weight(),
            max_iter: self.sinkhorn.max_iter,
            tol: self.sinkhorn.tol,
            noise_scale: self.noise_scale,
        };
        match serde_json::to_value(meta)? {
            serde_json::Value::Object(map) => Ok(map.into_iter().collect()),
            _ => unreachable!("struct serializes to an object"),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, self.meta()?)
    }

    pub fn to_json(&self) -> Result<String> {
        self.store.to_json(self.meta()?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (loaded, meta) = ParamStore::from_json(text)?;
        let meta: GsMeta = serde_json::from_value(serde_json::Value::Object(meta.into_iter().collect()))
            .map_err(|e| Error::Checkpoint(format!("gumbel-sinkhorn metadata: {e}")))?;
        let mut gs = Self::new(meta.frame_size)?;
        gs.store.copy_values_from(&loaded)?;
        gs.sinkhorn = SinkhornConfig {
            max_iter: meta.max_iter,
            tol: meta.tol,
        };
        gs.sinkhorn.validate()?;
        gs.noise_scale = meta.noise_scale;
        Ok(gs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsPretrainConfig {
    pub frame_size: usize,
    pub n_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub held_out: usize,
    pub seed: u64,
}

impl Default for GsPretrainConfig {
    fn default() -> Self {
        Self {
            frame_size: 16,
            n_samples: 256,
            epochs: 150,
            batch_size: 16,
            lr: 1e-3,
            held_out: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsPretrainReport {
    pub tau_untrained: f64,
    pub tau_trained: f64,
    pub epoch_loss: Vec<f64>,
    pub weight: f64,
    pub temperature: f64,
    pub mean_lsa_total: f64,
}

/// Training matrix with entries uniform on `[0, 10]`.
pub fn random_cost_matrix(n: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(n, n, |_, _| rng.random_range(0.0..10.0))
}

/// Held-out matrices: entries uniform on `[0, u]` with `u` uniform on
/// `[1, 10]` per matrix, so assignment totals spread over an order of
/// magnitude.
pub fn held_out_matrices(n: usize, count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u = rng.random_range(1.0..10.0);
            Tensor::from_fn(n, n, |_, _| rng.random_range(0.0..u))
        })
        .collect()
}

/// Kendall tau between soft totals and exact assignment totals.
pub fn evaluate_gs(gs: &GsParams, matrices: &[Tensor]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = matrices
        .par_iter()
        .map(|c| Ok((gs.soft_total(c)?, hungarian(c)?.1)))
        .collect::<Result<_>>()?;
    let (soft, exact): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    kendall_tau(&soft, &exact)
}

fn sample_grads(gs: &GsParams, cost: &Tensor, target: &Tensor, noise: &Tensor) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let bind = gs.store.bind(&mut tape);
    let vars = gs.vars(&bind);
    let c = tape.constant(cost.clone());
    let (p, _, _) = gs.apply(&mut tape, vars, c, Some(noise))?;
    let t = tape.constant(target.clone());
    let d = tape.sub(p, t)?;
    let h = tape.huber(d, 1.0);
    let loss = tape.mean(h);
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok((value, bind.collect(&mut grads)))
}

/// Pre-trains the module to reproduce exact assignments under an entry-wise
/// Huber loss. During the first quarter of epochs half of the matrices have a
/// zero diagonal.
pub fn pretrain_gs(cfg: &GsPretrainConfig) -> Result<(GsParams, GsPretrainReport)> {
    if cfg.n_samples == 0 || cfg.batch_size == 0 || cfg.held_out < 2 {
        return Err(Error::InvalidArgument(
            "pre-training needs samples, a batch size and at least two held-out matrices".into(),
        ));
    }
    let mut gs = GsParams::new(cfg.frame_size)?;
    let n = cfg.frame_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: Vec<Tensor> = (0..cfg.n_samples).map(|_| random_cost_matrix(n, &mut rng)).collect();
    let zero_diag: Vec<Tensor> = base
        .iter()
        .map(|c| Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { c.get(i, j) }))
        .collect();
    let targets = |set: &[Tensor]| -> Result<Vec<Tensor>> {
        set.par_iter()
            .map(|c| Ok(permutation_matrix(&hungarian(c)?.0)))
            .collect()
    };
    let base_targets = targets(&base)?;
    let zero_targets = targets(&zero_diag)?;
    let held_out = held_out_matrices(n, cfg.held_out, cfg.seed ^ 0x005e_ed0f_4e1d);
    let tau_untrained = evaluate_gs(&gs, &held_out)?;

    let mut adam = AdamState::new(gs.store(), cfg.lr);
    let curriculum_epochs = cfg.epochs.div_ceil(4);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<(usize, bool)> = (0..cfg.n_samples)
            .map(|k| (k, epoch < curriculum_epochs && rng.random_bool(0.5)))
            .collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let results: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&(k, zd), &seed)| {
                    let (c, t) = if zd {
                        (&zero_diag[k], &zero_targets[k])
                    } else {
                        (&base[k], &base_targets[k])
                    };
                    sample_grads(&gs, c, t, &truncated_gumbel_noise(n, n, gs.noise_scale, seed))
                })
                .collect::<Result<_>>()?;
            gs.store.zero_grad();
            for (loss, g) in &results {
                total += loss;
                gs.store.accumulate(g);
            }
            gs.store.scale_grads(1.0 / batch.len() as f64);
            adam_step(&mut gs.store, &mut adam)?;
        }
        let mean = total / cfg.n_samples as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: "gumbel-sinkhorn pre-training loss is not finite".into(),
            });
        }
        epoch_loss.push(mean);
    }
    gs.store.set_all_trainable(false);
    let tau_trained = evaluate_gs(&gs, &held_out)?;
    let mean_lsa_total = held_out
        .par_iter()
        .map(|c| Ok(hungarian(c)?.1))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>()
        / held_out.len() as f64;
    let report = GsPretrainReport {
        tau_untrained,
        tau_trained,
        epoch_loss,
        weight: gs.weight(),
        temperature: gs.temperature(),
        mean_lsa_total,
    };
    Ok((gs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn noise_contract() {
        assert_eq!(truncated_gumbel_noise(3, 4, 0.0, 1), Tensor::zeros(3, 4));
        let a = truncated_gumbel_noise(5, 5, 1.0, 42);
        assert_eq!(a, truncated_gumbel_noise(5, 5, 1.0, 42));
        assert_ne!(a, truncated_gumbel_noise(5, 5, 1.0, 43));
        let s = truncated_gumbel_noise(40, 40, 0.5, 3);
        assert!(s.data().iter().all(|x| x.abs() <= 1.5));
    }

    #[test]
    fn gumbel_sampler_mean_is_euler_mascheroni() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Gumbel::<f64>::new(0.0, 1.0).unwrap();
        let mean = (0..100_000).map(|_| g.sample(&mut rng)).sum::<f64>() / 1e5;
        // Standard error is pi / sqrt(6e5) ~ 0.004.
        assert!((mean - 0.577_215_664_9).abs() < 0.015, "mean {mean}");
    }

    #[test]
    fn inference_is_deterministic_and_doubly_stochastic() {
        let gs = GsParams::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cost_matrix(12, &mut rng);
        let a = gs.gumbel_sinkhorn(&c, false, 1).unwrap();
        assert_eq!(a, gs.gumbel_sinkhorn(&c, false, 2).unwrap());
        assert!(a.marginal_error() < 1e-3);
        assert_ne!(a.p, gs.gumbel_sinkhorn(&c, true, 2).unwrap().p);
        assert!(matches!(
            gs.gumbel_sinkhorn(&random_cost_matrix(17, &mut rng), false, 0),
            Err(Error::FrameTooLarge { frame: 17, limit: 16 })
        ));
        assert!(GsParams::new(20).is_err());
    }

    #[test]
    fn hard_rounding_agrees_with_hungarian() {
        let gs = GsParams::new(16).unwrap();
        let c = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let p = gs.gumbel_sinkhorn(&c, false, 0).unwrap().p;
        let argmax: Vec<usize> = (0..2)
            .map(|i| if p.get(i, 0) > p.get(i, 1) { 0 } else { 1 })
            .collect();
        assert_eq!(argmax, hungarian(&c).unwrap().0);
    }

    #[test]
    fn soft_total_approaches_assignment_as_temperature_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_cost_matrix(8, &mut rng);
        let exact = hungarian(&c).unwrap().1;
        let mut gs = GsParams::new(16).unwrap();
        gs.sinkhorn = SinkhornConfig { max_iter: 2000, tol: 1e-9 };
        let mut prev = f64::INFINITY;
        for t in [1.0, 0.3, 0.1, 0.03] {
            gs.store.value_mut(gs.temperature).data_mut()[0] = softplus_inverse(t);
            let total = gs.soft_total(&c).unwrap();
            assert!(total >= exact - 1e-6 && total <= prev + 1e-9, "t={t}: {total}");
            prev = total;
        }
        assert!(prev - exact < 0.05 * exact);
    }

    #[test]
    fn gradients_flow_through_module() {
        let gs = GsParams::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cost_matrix(5, &mut rng);
        let noise = truncated_gumbel_noise(5, 5, 0.5, 1);
        let mut exact_gs = gs.clone();
        exact_gs.sinkhorn = SinkhornConfig { max_iter: 20, tol: 0.0 };
        let err = grad_check(
            |tape, v| {
                let vars = GsVars {
                    weight: v[0],
                    temperature: v[1],
                };
                let cost = tape.constant(c.clone());
                let (p, _, _) = exact_gs.apply(tape, vars, cost, Some(&noise))?;
                let pc = tape.mul(p, cost)?;
                Ok(tape.sum(pc))
            },
            &[Tensor::scalar(0.3), Tensor::scalar(-0.2)],
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut gs = GsParams::new(32).unwrap();
        gs.store.value_mut(gs.temperature).data_mut()[0] = -1.25;
        let back = GsParams::from_json(&gs.to_json().unwrap()).unwrap();
        assert_eq!(back.frame_size, 32);
        assert_eq!(back.temperature(), gs.temperature());
        assert_eq!(back.store.value(back.weight), gs.store.value(gs.weight));
    }

    #[test]
    fn short_pretraining_improves_tau() {
        let cfg = GsPretrainConfig {
            n_samples: 64,
            epochs: 8,
            batch_size: 8,
            held_out: 200,
            lr: 0.01,
            ..GsPretrainConfig::default()
        };
        let (gs, report) = pretrain_gs(&cfg).unwrap();
        assert!(report.tau_trained > report.tau_untrained, "{report:?}");
        assert!(!gs.store().group_trainable(GS_GROUP));
        let (_, again) = pretrain_gs(&cfg).unwrap();
        assert_eq!(report, again);
    }
}
