use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::descriptor::{canonical_rotation, rotate_descriptor, FeatureScaling};
use super::mlp::{Activation, LayerSpec, Mlp};
use crate::diffusion::{Vec12, VelocityField};
use crate::error::{Error, Result};

/// Interleaved `(sin, cos)` pairs of `t` at frequencies geometric in `[1, 1e4]`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding width must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            10f64.powf(4.0 * k as f64 / (half - 1) as f64)
        };
        out.push((freq * t).sin());
        out.push((freq * t).cos());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub feature_dim: usize,
    /// Hidden widths of the graspness head; empty gives a single affine layer.
    pub graspness_hidden: Vec<usize>,
    pub denoiser_hidden: Vec<usize>,
    pub joint_hidden: usize,
    /// Total affine layers in the joint head.
    pub joint_layers: usize,
    /// 16 for the dexterous hand, 1 for the gripper width.
    pub joint_dim: usize,
    pub k_trans: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            graspness_hidden: vec![128],
            denoiser_hidden: vec![512, 256],
            joint_hidden: 128,
            joint_layers: 6,
            joint_dim: 16,
            k_trans: crate::diffusion::K_TRANS,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 || self.feature_dim % 2 != 0 {
            return Err(Error::InvalidArgument("feature width must be even".into()));
        }
        if self.joint_layers < 2 || self.joint_dim == 0 || self.joint_hidden == 0 || self.denoiser_hidden.is_empty() {
            return Err(Error::InvalidArgument("head sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn graspness_specs(&self) -> Vec<LayerSpec> {
        mish_chain(self.feature_dim, &self.graspness_hidden, 3)
    }

    pub fn denoiser_specs(&self) -> Vec<LayerSpec> {
        mish_chain(self.feature_dim + 12, &self.denoiser_hidden, 12)
    }

    pub fn joint_specs(&self) -> Vec<LayerSpec> {
        let h = self.joint_hidden;
        let n = self.joint_layers;
        (0..n)
            .map(|k| {
                let n_in = if k == 0 { self.feature_dim + 12 } else { h };
                let last = k + 1 == n;
                LayerSpec {
                    n_in,
                    n_out: if last { self.joint_dim } else { h },
                    activation: if last { Activation::Identity } else { Activation::Relu },
                    residual: k > 0 && !last,
                }
            })
            .collect()
    }
}

/// The GS output unit is read through a fixed affine map so the head works
/// at unit scale while scores span roughly `[ln 0.001, 3]`.
pub const GS_OUTPUT_SHIFT: f64 = -3.45;
pub const GS_OUTPUT_SCALE: f64 = 4.0;

pub fn gs_from_output(z: f64) -> f64 {
    GS_OUTPUT_SHIFT + GS_OUTPUT_SCALE * z
}

fn mish_chain(n_in: usize, hidden: &[usize], n_out: usize) -> Vec<LayerSpec> {
    let mut sizes = vec![n_in];
    sizes.extend(hidden);
    sizes.push(n_out);
    let n = sizes.len() - 1;
    (0..n)
        .map(|k| LayerSpec {
            n_in: sizes[k],
            n_out: sizes[k + 1],
            activation: if k + 1 == n { Activation::Identity } else { Activation::Mish },
            residual: false,
        })
        .collect()
}

/// The three prediction heads over a shared per-point feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspNet {
    pub config: HeadConfig,
    /// Applied to raw descriptors by every `predict_*` method.
    pub input: FeatureScaling,
    pub graspness: Mlp,
    pub denoiser: Mlp,
    pub joints: Mlp,
}

impl GraspNet {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let graspness = Mlp::new(&config.graspness_specs(), false, rng)?;
        let denoiser = Mlp::new(&config.denoiser_specs(), true, rng)?;
        let joints = Mlp::new(&config.joint_specs(), false, rng)?;
        Ok(Self {
            input: FeatureScaling::identity(config.feature_dim),
            config,
            graspness,
            denoiser,
            joints,
        })
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.input.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Rows of `[object logits (2), GS]` per raw descriptor row.
    pub fn predict_graspness(&self, descriptors: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(descriptors.ncols())?;
        let mut x = descriptors.clone();
        self.input.apply_rows(&mut x);
        let mut out = self.graspness.forward(x.view())?;
        out.column_mut(2).mapv_inplace(gs_from_output);
        Ok(out)
    }

    pub fn predict_velocity(&self, g: &Vec12, descriptor: &[f64], t: f64) -> Result<Vec12> {
        self.check_width(descriptor.len())?;
        Ok(self.velocity_field().velocity(g, descriptor, t))
    }

    pub fn predict_joints(&self, descriptor: &[f64], translation: &Vector3<f64>, rotation: &Matrix3<f64>) -> Result<Vec<f64>> {
        self.check_width(descriptor.len())?;
        let mut f = self.input.applied(descriptor);
        let c = canonicalize_feature(&mut f);
        let x = joint_input(&[(&f, c * translation, c * rotation)], self.config.k_trans)?;
        Ok(self.joints.forward(x.view())?.row(0).to_vec())
    }

    /// The denoiser as a field over raw descriptors.
    pub fn velocity_field(&self) -> DenoiserField<'_> {
        DenoiserField {
            net: &self.denoiser,
            input: Some(&self.input),
            canonical: true,
        }
    }
}

/// Rotates `f` into its canonical camera-axis orientation and returns the
/// rotation applied.
pub fn canonicalize_feature(f: &mut [f64]) -> Matrix3<f64> {
    let c = canonical_rotation(f);
    rotate_descriptor(f, &c);
    c
}

/// `embed(c T, c R)` for `g = embed(T, R)`.
pub fn rotate_embedded(g: &Vec12, c: &Matrix3<f64>) -> Vec12 {
    let mut out = Vec12::zeros();
    for r in 0..3 {
        for k in 0..3 {
            out[r] += c[(r, k)] * g[k];
            for col in 0..3 {
                out[3 + 3 * r + col] += c[(r, k)] * g[3 + 3 * k + col];
            }
        }
    }
    out
}

/// Rows of `[g (12), f + embed(t)]`.
pub fn denoiser_input(gs: &[Vec12], feature: &[f64], t: f64) -> Result<Array2<f64>> {
    let f = feature.len();
    let emb = sinusoidal_embed(t, f);
    let mut x = Array2::zeros((gs.len(), 12 + f));
    for (r, g) in gs.iter().enumerate() {
        for k in 0..12 {
            x[(r, k)] = g[k];
        }
        for k in 0..f {
            x[(r, 12 + k)] = feature[k] + emb[k];
        }
    }
    Ok(x)
}

/// Denoiser rows for examples that each carry their own feature and time.
pub fn denoiser_batch(examples: &[(&[f64], Vec12, f64)]) -> Array2<f64> {
    let f = examples.first().map_or(0, |e| e.0.len());
    let mut x = Array2::zeros((examples.len(), 12 + f));
    for (r, (feat, g, t)) in examples.iter().enumerate() {
        let emb = sinusoidal_embed(*t, f);
        for k in 0..12 {
            x[(r, k)] = g[k];
        }
        for k in 0..f {
            x[(r, 12 + k)] = feat[k] + emb[k];
        }
    }
    x
}

/// Rows of `[f, k T, rows of R]`.
pub fn joint_input(examples: &[(&[f64], Vector3<f64>, Matrix3<f64>)], k_trans: f64) -> Result<Array2<f64>> {
    let f = examples.first().map_or(0, |e| e.0.len());
    let mut x = Array2::zeros((examples.len(), f + 12));
    for (r, (feat, t, rot)) in examples.iter().enumerate() {
        if feat.len() != f {
            return Err(Error::ShapeMismatch {
                expected: f,
                got: feat.len(),
            });
        }
        x.slice_mut(s![r, ..f]).assign(&ndarray::ArrayView1::from(*feat));
        for k in 0..3 {
            x[(r, f + k)] = k_trans * t[k];
        }
        for a in 0..3 {
            for b in 0..3 {
                x[(r, f + 3 + 3 * a + b)] = rot[(a, b)];
            }
        }
    }
    Ok(x)
}

/// The denoiser viewed as a velocity field for sampling.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserField<'a> {
    pub net: &'a Mlp,
    /// Scaling applied to the feature passed to each call.
    pub input: Option<&'a FeatureScaling>,
    /// Evaluate the network in the canonical frame of the feature and rotate
    /// the velocity back.
    pub canonical: bool,
}

impl VelocityField for DenoiserField<'_> {
    fn velocity(&self, g: &Vec12, feature: &[f64], t: f64) -> Vec12 {
        self.velocity_batch(std::slice::from_ref(g), feature, t)[0]
    }

    fn velocity_batch(&self, gs: &[Vec12], feature: &[f64], t: f64) -> Vec<Vec12> {
        let mut f = match self.input {
            Some(sc) => sc.applied(feature),
            None => feature.to_vec(),
        };
        let c = if self.canonical {
            canonicalize_feature(&mut f)
        } else {
            Matrix3::identity()
        };
        let rotated: Vec<Vec12> = gs.iter().map(|g| rotate_embedded(g, &c)).collect();
        let x = denoiser_input(&rotated, &f, t).expect("denoiser input");
        let y = self.net.forward(x.view()).expect("denoiser width matches feature");
        let back = c.transpose();
        y.rows()
            .into_iter()
            .map(|r| rotate_embedded(&Vec12::from_iterator(r.iter().copied()), &back))
            .collect()
    }
}
