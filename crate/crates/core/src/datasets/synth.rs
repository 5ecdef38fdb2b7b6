//! Synthetic LayerNorm mappings.
//!
//! Tokens are generated, pushed through [`layernorm_forward`] and the affine
//! transform is inverted again, exactly as for captured activations. The
//! shape of the pooled `(x, y_pre)` cloud depends on the token generator:
//!
//! * `Linear`: i.i.d. Gaussian features. Every token has nearly the same
//!   statistics, so `y_pre` is close to a straight line in `x`.
//! * `SShaped`: a low-variance bulk plus `round(d / A^2)` outlier channels
//!   sharing a per-token magnitude. The outliers dominate their token's
//!   variance, so large inputs are compressed toward `+-A`.
//! * `Mixed`: a per-token coin flip between the two.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layernorm::{layernorm_forward, pre_affine_invert, AffineParams, DEFAULT_EPS};
use super::{DatasetError, MappingDataset, Provenance, SplitTag};
use crate::rng::stream;

const BULK_STD: f64 = 0.3;
const OUTLIER_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthProfile {
    Linear { scale: f64 },
    SShaped { amplitude: f64 },
    Mixed { amplitude: f64, outlier_fraction: f64 },
}

impl SynthProfile {
    pub fn name(&self) -> &'static str {
        match self {
            SynthProfile::Linear { .. } => "linear",
            SynthProfile::SShaped { .. } => "s-shaped",
            SynthProfile::Mixed { .. } => "mixed",
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let ok = match *self {
            SynthProfile::Linear { scale } => scale > 0.0 && scale.is_finite(),
            SynthProfile::SShaped { amplitude } => amplitude >= 1.0 && amplitude.is_finite(),
            SynthProfile::Mixed {
                amplitude,
                outlier_fraction,
            } => amplitude >= 1.0 && amplitude.is_finite() && (0.0..=1.0).contains(&outlier_fraction),
        };
        if ok {
            Ok(())
        } else {
            Err(DatasetError::InvalidProfile(format!("{self:?}")))
        }
    }
}

fn linear_token(d: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..d)
        .map(|_| {
            scale * {
                let z: f64 = StandardNormal.sample(rng);
                z
            }
        })
        .collect::<Vec<f64>>()
}

fn outlier_token(d: usize, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let bulk = Normal::new(0.0, BULK_STD).expect("valid std");
    let mut token: Vec<f64> = (0..d).map(|_| bulk.sample(rng)).collect();
    let k = ((d as f64 / (amplitude * amplitude)).round() as usize).clamp(1, d - 1);
    let z: f64 = StandardNormal.sample(rng);
    let magnitude = OUTLIER_SCALE * z.abs();
    for i in index::sample(rng, d, k) {
        token[i] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }
    token
}

/// Pools every `(x, y_pre)` cell of `n_tokens` synthetic tokens of width `d`.
pub fn synth_mappings(
    layer_id: &str,
    profile: SynthProfile,
    d: usize,
    n_tokens: usize,
    params: &AffineParams,
    rng: &mut impl Rng,
) -> Result<MappingDataset, DatasetError> {
    profile.validate()?;
    if d < 2 {
        return Err(DatasetError::TokenTooShort(d));
    }
    if params.dim() != d {
        return Err(DatasetError::ShapeMismatch {
            token: d,
            params: params.dim(),
        });
    }
    let mut xs = Vec::with_capacity(d * n_tokens);
    let mut ys = Vec::with_capacity(d * n_tokens);
    for _ in 0..n_tokens {
        let token = match profile {
            SynthProfile::Linear { scale } => linear_token(d, scale, rng),
            SynthProfile::SShaped { amplitude } => outlier_token(d, amplitude, rng),
            SynthProfile::Mixed {
                amplitude,
                outlier_fraction,
            } => {
                if rng.random_bool(outlier_fraction) {
                    outlier_token(d, amplitude, rng)
                } else {
                    linear_token(d, 1.0, rng)
                }
            }
        };
        let y = layernorm_forward(&token, params)?;
        for i in 0..d {
            xs.push(token[i]);
            ys.push(pre_affine_invert(y[i], params.w[i], params.b[i], params.eps)?);
        }
    }
    MappingDataset::new(layer_id, xs, ys, SplitTag::All, Provenance::Synthetic)
}

/// Random affine parameters with weights bounded away from zero.
pub fn random_affine(d: usize, rng: &mut impl Rng) -> AffineParams {
    AffineParams {
        w: (0..d).map(|_| rng.random_range(0.5..1.5)).collect(),
        b: (0..d).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect(),
        eps: DEFAULT_EPS,
    }
}

/// One layer of a synthetic depth progression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteLayer {
    pub layer_id: String,
    pub profile: SynthProfile,
}

/// Transformer-style layer names: two per block, then the final norm.
pub fn layer_name(index: usize, n_layers: usize) -> String {
    if index + 1 == n_layers && n_layers % 2 == 1 {
        "norm".to_string()
    } else {
        format!("blocks.{}.norm{}", index / 2, index % 2 + 1)
    }
}

/// Depth progression from near-linear early layers, through mixed layers,
/// to S-shaped deep layers whose amplitude ramps up to `max_amplitude`.
pub fn synth_suite(n_layers: usize, max_amplitude: f64) -> Vec<SuiteLayer> {
    (0..n_layers)
        .map(|i| {
            let f = if n_layers > 1 {
                i as f64 / (n_layers - 1) as f64
            } else {
                1.0
            };
            let amplitude = 1.5 + (max_amplitude - 1.5).max(0.0) * f;
            let profile = if f < 1.0 / 3.0 {
                SynthProfile::Linear { scale: 0.8 + 0.6 * f }
            } else if f < 2.0 / 3.0 {
                SynthProfile::Mixed {
                    amplitude,
                    outlier_fraction: 0.5,
                }
            } else {
                SynthProfile::SShaped { amplitude }
            };
            SuiteLayer {
                layer_id: layer_name(i, n_layers),
                profile,
            }
        })
        .collect()
}

impl SuiteLayer {
    /// Generates this layer's pool from its own stream of `seed`.
    pub fn generate(&self, index: usize, d: usize, n_tokens: usize, seed: u64) -> Result<MappingDataset, DatasetError> {
        let mut rng = stream(seed, &[0x5f_4e_54_48, index as u64]);
        let params = random_affine(d, &mut rng);
        synth_mappings(&self.layer_id, self.profile, d, n_tokens, &params, &mut rng)
    }
}
