//! Velocity-parameterized diffusion over 12D wrist vectors: schedule,
//! embedding, forward noising, probability-flow sampling and likelihood.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::svd_project;

pub type Vec12 = SVector<f64, 12>;

/// Scale applied to translation (meters) inside the 12D embedding.
pub const K_TRANS: f64 = 25.0;
/// Finite-difference step for the divergence estimate.
pub const TRACE_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_train: usize,
    pub t_inference: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::new(1e-4, 0.02, 1000, 200).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    pub fn new(beta_min: f64, beta_max: f64, t_train: usize, t_inference: usize) -> Result<Self> {
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidArgument(format!("betas must satisfy 0 < {beta_min} <= {beta_max} < 1")));
        }
        if t_train < 2 || t_inference == 0 || t_train % t_inference != 0 {
            return Err(Error::InvalidArgument(format!(
                "inference steps {t_inference} must divide training steps {t_train}"
            )));
        }
        let betas: Vec<f64> = (1..=t_train)
            .map(|i| beta_min + (i - 1) as f64 / (t_train - 1) as f64 * (beta_max - beta_min))
            .collect();
        let mut alpha_bars = Vec::with_capacity(t_train);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            beta_min,
            beta_max,
            t_train,
            t_inference,
            betas,
            alpha_bars,
        })
    }

    /// `beta_i` for a 1-based training index.
    pub fn beta_at(&self, i: usize) -> Result<f64> {
        self.check(i)?;
        Ok(self.betas[i - 1])
    }

    /// `alpha_bar_i` for a 1-based training index; index 0 is the clean data (1.0).
    pub fn alpha_bar_at(&self, i: usize) -> Result<f64> {
        if i == 0 {
            return Ok(1.0);
        }
        self.check(i)?;
        Ok(self.alpha_bars[i - 1])
    }

    fn check(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.t_train {
            return Err(Error::OutOfRange {
                index: i,
                max: self.t_train,
            });
        }
        Ok(())
    }

    /// Training index nearest to continuous time `t` in `[0, 1]`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t * self.t_train as f64).round() as usize).min(self.t_train)
    }

    /// Continuous time of a 1-based training index.
    pub fn time_of(&self, i: usize) -> f64 {
        i as f64 / self.t_train as f64
    }

    pub fn alpha_bar(&self, t: f64) -> f64 {
        match self.index_of(t) {
            0 => 1.0,
            i => self.alpha_bars[i - 1],
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.betas[self.index_of(t).max(1) - 1]
    }

    /// Coefficient turning the network velocity into the ODE drift at time `t`.
    pub fn drift_scale(&self, t: f64) -> f64 {
        let ab = self.alpha_bar(t);
        self.t_train as f64 * self.beta(t) * ab.sqrt() / (2.0 * (1.0 - ab).sqrt())
    }

    /// Sampling times from 1 down to `dt`.
    pub fn inference_times(&self) -> Vec<f64> {
        let stride = self.t_train / self.t_inference;
        (1..=self.t_inference)
            .rev()
            .map(|j| self.time_of(j * stride))
            .collect()
    }
}

/// `[k T, rows of R]`.
pub fn embed(translation: &Vector3<f64>, rotation: &Matrix3<f64>, k_trans: f64) -> Vec12 {
    let mut g = Vec12::zeros();
    for i in 0..3 {
        g[i] = k_trans * translation[i];
    }
    for r in 0..3 {
        for c in 0..3 {
            g[3 + 3 * r + c] = rotation[(r, c)];
        }
    }
    g
}

/// Inverse of [`embed`], projecting the rotation channels onto SO(3).
pub fn unembed(g: &Vec12, k_trans: f64) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let t = Vector3::new(g[0], g[1], g[2]) / k_trans;
    let m = Matrix3::from_fn(|r, c| g[3 + 3 * r + c]);
    Ok((t, svd_project(&m)?))
}

/// `sqrt(ab) g + sqrt(1 - ab) eps`
pub fn noise_sample(g: &Vec12, alpha_bar: f64, eps: &Vec12) -> Vec12 {
    alpha_bar.sqrt() * g + (1.0 - alpha_bar).sqrt() * eps
}

/// `sqrt(ab) eps - sqrt(1 - ab) g`
pub fn velocity_target(g: &Vec12, alpha_bar: f64, eps: &Vec12) -> Vec12 {
    alpha_bar.sqrt() * eps - (1.0 - alpha_bar).sqrt() * g
}

/// A conditional velocity predictor `v(g, f, t)`.
pub trait VelocityField: Sync {
    fn velocity(&self, g: &Vec12, feature: &[f64], t: f64) -> Vec12;

    /// Several states under one feature and time.
    fn velocity_batch(&self, gs: &[Vec12], feature: &[f64], t: f64) -> Vec<Vec12> {
        gs.iter().map(|g| self.velocity(g, feature, t)).collect()
    }
}

impl<F: Fn(&Vec12, &[f64], f64) -> Vec12 + Sync> VelocityField for F {
    fn velocity(&self, g: &Vec12, feature: &[f64], t: f64) -> Vec12 {
        self(g, feature, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    /// Final unprojected state.
    pub raw: Vec12,
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    /// States from `t = 1` down to `t = 0`.
    pub trajectory: Vec<Vec12>,
}

fn check_finite(v: &Vec12, step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteVelocity { step })
    }
}

/// Integrates the probability-flow ODE from `g1` at `t = 1` to `t = 0`.
pub fn denoise(
    v: &dyn VelocityField,
    feature: &[f64],
    g1: &Vec12,
    sched: &DiffusionSchedule,
    k_trans: f64,
) -> Result<Denoised> {
    let dt = 1.0 / sched.t_inference as f64;
    let mut g = *g1;
    let mut trajectory = Vec::with_capacity(sched.t_inference + 1);
    trajectory.push(g);
    for (step, t) in sched.inference_times().into_iter().enumerate() {
        let vel = v.velocity(&g, feature, t);
        check_finite(&vel, step)?;
        g -= sched.drift_scale(t) * dt * vel;
        trajectory.push(g);
    }
    let (translation, rotation) = unembed(&g, k_trans)?;
    Ok(Denoised {
        raw: g,
        translation,
        rotation,
        trajectory,
    })
}

/// Standard normal log-density in 12 dimensions.
pub fn standard_normal_log_density(g: &Vec12) -> f64 {
    -6.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * g.norm_squared()
}

/// Divergence of `v` at `g` by central differences, plus `v(g)` itself.
fn velocity_and_divergence(v: &dyn VelocityField, feature: &[f64], g: &Vec12, t: f64, h: f64) -> (Vec12, f64) {
    let mut batch = Vec::with_capacity(25);
    batch.push(*g);
    for k in 0..12 {
        let mut p = *g;
        p[k] += h;
        let mut m = *g;
        m[k] -= h;
        batch.push(p);
        batch.push(m);
    }
    let out = v.velocity_batch(&batch, feature, t);
    let div = (0..12).map(|k| (out[1 + 2 * k][k] - out[2 + 2 * k][k]) / (2.0 * h)).sum();
    (out[0], div)
}

/// Log-likelihood of the endpoint of `trajectory` under the flow of `v`.
pub fn log_prob(v: &dyn VelocityField, feature: &[f64], trajectory: &[Vec12], sched: &DiffusionSchedule) -> Result<f64> {
    if trajectory.len() != sched.t_inference + 1 {
        return Err(Error::ShapeMismatch {
            expected: sched.t_inference + 1,
            got: trajectory.len(),
        });
    }
    let dt = 1.0 / sched.t_inference as f64;
    let mut lp = standard_normal_log_density(&trajectory[0]);
    for (step, t) in sched.inference_times().into_iter().enumerate() {
        let (_, div) = velocity_and_divergence(v, feature, &trajectory[step], t, TRACE_STEP);
        if !div.is_finite() {
            return Err(Error::NonFiniteVelocity { step });
        }
        lp += sched.drift_scale(t) * div * dt;
    }
    Ok(lp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedGrasp {
    pub denoised: Denoised,
    pub log_p: f64,
}

/// Sampling and likelihood in a single pass over the trajectory.
pub fn sample_with_log_prob(
    v: &dyn VelocityField,
    feature: &[f64],
    g1: &Vec12,
    sched: &DiffusionSchedule,
    k_trans: f64,
) -> Result<GeneratedGrasp> {
    let dt = 1.0 / sched.t_inference as f64;
    let mut g = *g1;
    let mut lp = standard_normal_log_density(&g);
    let mut trajectory = Vec::with_capacity(sched.t_inference + 1);
    trajectory.push(g);
    for (step, t) in sched.inference_times().into_iter().enumerate() {
        let (vel, div) = velocity_and_divergence(v, feature, &g, t, TRACE_STEP);
        check_finite(&vel, step)?;
        if !div.is_finite() {
            return Err(Error::NonFiniteVelocity { step });
        }
        let scale = sched.drift_scale(t);
        lp += scale * div * dt;
        g -= scale * dt * vel;
        trajectory.push(g);
    }
    let (translation, rotation) = unembed(&g, k_trans)?;
    Ok(GeneratedGrasp {
        denoised: Denoised {
            raw: g,
            translation,
            rotation,
            trajectory,
        },
        log_p: lp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    pub eta: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        Self { eta: 10.0 }
    }
}

pub fn rank(log_p: f64, gs: f64, w: &RankWeights) -> f64 {
    log_p + w.eta * gs
}

/// Indices sorted by descending score, lowest index first on ties.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Exact velocity field whose flow carries `N(0, I)` to `N(mean, sigma^2 I)`.
#[derive(Debug, Clone)]
pub struct GaussianTargetField {
    pub mean: Vec12,
    pub sigma: f64,
    pub schedule: DiffusionSchedule,
}

impl GaussianTargetField {
    pub fn standard(schedule: DiffusionSchedule) -> Self {
        Self {
            mean: Vec12::zeros(),
            sigma: 1.0,
            schedule,
        }
    }

    pub fn log_density(&self, g: &Vec12) -> f64 {
        let s2 = self.sigma * self.sigma;
        -6.0 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * (g - self.mean).norm_squared() / s2
    }
}

impl VelocityField for GaussianTargetField {
    fn velocity(&self, g: &Vec12, _feature: &[f64], t: f64) -> Vec12 {
        let ab = self.schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let s2 = self.sigma * self.sigma;
        let var = ab * s2 + (1.0 - ab);
        (a * s * (1.0 - s2) / var) * (g - a * self.mean) - s * self.mean
    }
}

/// `v = rate * g`.
#[derive(Debug, Clone, Copy)]
pub struct LinearField {
    pub rate: f64,
}

impl VelocityField for LinearField {
    fn velocity(&self, g: &Vec12, _feature: &[f64], _t: f64) -> Vec12 {
        self.rate * g
    }
}
