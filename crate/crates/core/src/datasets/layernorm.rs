use serde::{Deserialize, Serialize};

use super::DatasetError;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Per-channel affine weights `w`, biases `b` and the variance epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub eps: f64,
}

impl AffineParams {
    pub fn identity(d: usize) -> Self {
        AffineParams {
            w: vec![1.0; d],
            b: vec![0.0; d],
            eps: DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// `(x - mu) / sqrt(var + eps)` with the population variance of the token.
pub fn normalize_token(x: &[f64], eps: f64) -> Result<Vec<f64>, DatasetError> {
    let d = x.len();
    if d < 2 {
        return Err(DatasetError::TokenTooShort(d));
    }
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv_std = 1.0 / (var + eps).sqrt();
    Ok(x.iter().map(|v| (v - mean) * inv_std).collect())
}

pub fn layernorm_forward(x: &[f64], params: &AffineParams) -> Result<Vec<f64>, DatasetError> {
    if params.w.len() != x.len() || params.b.len() != x.len() {
        return Err(DatasetError::ShapeMismatch {
            token: x.len(),
            params: params.w.len().min(params.b.len()),
        });
    }
    let normalized = normalize_token(x, params.eps)?;
    Ok(normalized
        .iter()
        .zip(params.w.iter().zip(&params.b))
        .map(|(n, (w, b))| n * w + b)
        .collect())
}

/// Removes the affine transform: `(y - b) / (w + eps)`.
pub fn pre_affine_invert(y: f64, w: f64, b: f64, eps: f64) -> Result<f64, DatasetError> {
    let denom = w + eps;
    if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
        return Err(DatasetError::VanishingDenominator(denom));
    }
    Ok((y - b) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_token_maps_to_bias() {
        let p = AffineParams {
            w: vec![2.0, 3.0, 4.0],
            b: vec![0.1, -0.2, 0.3],
            eps: 1e-6,
        };
        assert_eq!(layernorm_forward(&[1.5; 3], &p).unwrap(), p.b);
    }

    #[test]
    fn two_element_token() {
        let p = AffineParams {
            eps: 0.0,
            ..AffineParams::identity(2)
        };
        assert_eq!(layernorm_forward(&[1.0, -1.0], &p).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn normalized_part_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-10.0..10.0)).collect();
            let n = normalize_token(&x, 1e-6).unwrap();
            assert!((n.iter().sum::<f64>() / 64.0).abs() < 1e-12);
        }
    }

    #[test]
    fn short_or_mismatched_tokens_fail() {
        assert!(matches!(
            layernorm_forward(&[1.0], &AffineParams::identity(1)),
            Err(DatasetError::TokenTooShort(1))
        ));
        assert!(matches!(
            layernorm_forward(&[1.0, 2.0], &AffineParams::identity(3)),
            Err(DatasetError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(pre_affine_invert(0.4, 2.0, 0.4, 1e-6).unwrap(), 0.0);
        let v = pre_affine_invert(3.0, 2.0, 1.0, 1e-6).unwrap();
        assert!((v - 2.0 / 2.000001).abs() < 1e-15);
        assert!((v - 0.9999995).abs() < 1e-9);
        assert!(matches!(
            pre_affine_invert(1.0, -1e-6, 0.0, 1e-6),
            Err(DatasetError::VanishingDenominator(_))
        ));
    }

    #[test]
    fn inversion_recovers_normalized_values_within_eps_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = 32;
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = AffineParams {
                w: (0..d).map(|_| rng.random_range(0.2..2.0)).collect(),
                b: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                eps: 1e-6,
            };
            let y = layernorm_forward(&x, &p).unwrap();
            let direct = normalize_token(&x, p.eps).unwrap();
            let max_dev = y.iter().zip(&p.b).map(|(y, b)| (y - b).abs()).fold(0.0, f64::max);
            let min_w = p.w.iter().map(|w| w.abs()).fold(f64::INFINITY, f64::min);
            let bound = p.eps * max_dev / (min_w * min_w);
            for i in 0..d {
                let rec = pre_affine_invert(y[i], p.w[i], p.b[i], p.eps).unwrap();
                assert!(
                    (rec - direct[i]).abs() <= bound,
                    "{} > {bound}",
                    (rec - direct[i]).abs()
                );
            }
        }
    }
}
