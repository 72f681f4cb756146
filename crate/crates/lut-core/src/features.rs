//! Frame preprocessing: right-context stacking, rate reduction, corpus-level
//! mean/variance normalization, and random time/frequency masking for
//! augmentation. Stacking happens before downsampling.

use crate::error::{LutError, Result};
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_STACK_RIGHT: usize = 5;
pub const DEFAULT_DOWNSAMPLE: usize = 3;
const NORM_EPS: f64 = 1e-8;

/// Concatenate each frame with its `stack_right` right neighbours (the final
/// frame repeats at the edge), then keep every `downsample`-th stacked frame.
/// Output: `[ceil(t/downsample), (stack_right+1)·f]`.
pub fn stack_and_downsample(x: &Tensor, stack_right: usize, downsample: usize) -> Result<Tensor> {
    let (t, f) = x.dims2("stack_and_downsample")?;
    if t == 0 {
        return Err(LutError::EmptyInput("stack_and_downsample on zero frames"));
    }
    if downsample == 0 {
        return Err(LutError::Config("downsample factor must be >= 1".into()));
    }
    let width = (stack_right + 1) * f;
    let out_t = t.div_ceil(downsample);
    let mut data = Vec::with_capacity(out_t * width);
    for ti in (0..t).step_by(downsample) {
        for k in 0..=stack_right {
            let src = (ti + k).min(t - 1);
            data.extend_from_slice(x.row(src));
        }
    }
    Tensor::new(vec![out_t, width], data)
}

/// Per-coordinate corpus statistics. Coordinates whose variance is below an
/// epsilon normalize to exactly zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(frames: impl Iterator<Item = &'a Tensor>) -> Result<Normalizer> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sumsq: Vec<f64> = Vec::new();
        for x in frames {
            let (t, f) = x.dims2("normalizer_fit")?;
            if sum.is_empty() {
                sum = vec![0.0; f];
                sumsq = vec![0.0; f];
            } else if sum.len() != f {
                return Err(LutError::shape(
                    "normalizer_fit",
                    format!("inconsistent widths {} vs {f}", sum.len()),
                ));
            }
            for ti in 0..t {
                for (j, &v) in x.row(ti).iter().enumerate() {
                    sum[j] += v;
                    sumsq[j] += v * v;
                }
            }
            n += t;
        }
        if n == 0 {
            return Err(LutError::EmptyInput("normalizer fit over zero frames"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n as f64 - m * m).max(0.0).sqrt())
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (t, f) = x.dims2("normalizer_apply")?;
        if f != self.mean.len() {
            return Err(LutError::shape(
                "normalizer_apply",
                format!("width {f} vs fitted {}", self.mean.len()),
            ));
        }
        let mut data = Vec::with_capacity(t * f);
        for ti in 0..t {
            for (j, &v) in x.row(ti).iter().enumerate() {
                if self.std[j] < NORM_EPS {
                    data.push(0.0);
                } else {
                    data.push((v - self.mean[j]) / self.std[j]);
                }
            }
        }
        Tensor::new(vec![t, f], data)
    }
}

/// The full preprocessing pipeline for one utterance.
pub fn featurize(x: &Tensor, norm: &Normalizer) -> Result<Tensor> {
    let stacked = stack_and_downsample(x, DEFAULT_STACK_RIGHT, DEFAULT_DOWNSAMPLE)?;
    norm.apply(&stacked)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Maximum width of one frequency band, in coordinates.
    pub f_max: usize,
    /// Number of frequency bands.
    pub m_f: usize,
    /// Maximum width of one time span, in frames.
    pub t_max: usize,
    /// Number of time spans.
    pub m_t: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { f_max: 2, m_f: 2, t_max: 6, m_t: 2 }
    }
}

/// Zero out up to `m_f` frequency bands and `m_t` time spans, widths drawn
/// uniformly from `0..=max` and clipped to the tensor.
pub fn spec_augment(x: &Tensor, aug: &AugmentSpec, rng: &mut StdRng) -> Result<Tensor> {
    let (t, f) = x.dims2("spec_augment")?;
    let mut out = x.clone();
    for _ in 0..aug.m_f {
        let w = rng.gen_range(0..=aug.f_max.min(f));
        let start = if f > w { rng.gen_range(0..=f - w) } else { 0 };
        for ti in 0..t {
            for j in start..start + w {
                out.data_mut()[ti * f + j] = 0.0;
            }
        }
    }
    for _ in 0..aug.m_t {
        let w = rng.gen_range(0..=aug.t_max.min(t));
        let start = if t > w { rng.gen_range(0..=t - w) } else { 0 };
        for ti in start..start + w {
            for j in 0..f {
                out.data_mut()[ti * f + j] = 0.0;
            }
        }
    }
    Ok(out)
}
