use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{TopoGraph, N_MAX};
use crate::{Error, Result};

/// Stand-in for a learned edge classifier: logits `alpha * (2y - 1)` on a
/// possibly flipped label `y`, plus Gaussian jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub alpha: f64,
    pub jitter: f64,
    pub flip: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            jitter: 1.5,
            flip: 0.1,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("noise alpha must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config("noise jitter must be non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.flip) {
            return Err(Error::Config("noise flip must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Noisy edge probabilities (`N_MAX x N_MAX`) for the first `n` nodes of a
/// ground-truth mask. Symmetric, zero diagonal, zero padding.
pub fn corrupt_edges(gt: &[bool], n: usize, model: &NoiseModel, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    if gt.len() != N_MAX * N_MAX || n > N_MAX {
        return Err(Error::InvalidGraph("ground-truth mask must be N_MAX x N_MAX".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, model.jitter).expect("validated jitter");
    let mut e = vec![0.0; N_MAX * N_MAX];
    for i in 0..n {
        for j in i + 1..n {
            let mut y = gt[i * N_MAX + j];
            if rng.random::<f64>() < model.flip {
                y = !y;
            }
            let eta = if model.jitter > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let sign = if y { 1.0 } else { -1.0 };
            let p = sigmoid(model.alpha * sign + eta);
            e[i * N_MAX + j] = p;
            e[j * N_MAX + i] = p;
        }
    }
    Ok(e)
}

/// Replaces the edge probabilities of `g` with a noisy view of its ground
/// truth.
pub fn apply_noise(g: &mut TopoGraph, model: &NoiseModel, seed: u64) -> Result<()> {
    let probs = corrupt_edges(g.gt_mask()?, g.n_nodes, model, seed)?;
    g.edge_probs = probs;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mask(n: usize, seed: u64) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = vec![false; N_MAX * N_MAX];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random::<bool>();
                m[i * N_MAX + j] = v;
                m[j * N_MAX + i] = v;
            }
        }
        m
    }

    #[test]
    fn noise_free_model_maps_labels_to_two_values() {
        let gt = random_mask(32, 1);
        let model = NoiseModel {
            alpha: 3.0,
            jitter: 0.0,
            flip: 0.0,
        };
        let e = corrupt_edges(&gt, 32, &model, 9).unwrap();
        let (hi, lo) = (1.0 / (1.0 + (-3.0f64).exp()), 1.0 / (1.0 + 3.0f64.exp()));
        assert!((hi - 0.9526).abs() < 1e-4 && (lo - 0.0474).abs() < 1e-4);
        for i in 0..N_MAX {
            for j in 0..N_MAX {
                let v = e[i * N_MAX + j];
                if i == j || i >= 32 || j >= 32 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, if gt[i * N_MAX + j] { hi } else { lo });
                }
            }
        }
    }

    #[test]
    fn flip_rate_matches_binomial() {
        let model = NoiseModel {
            alpha: 3.0,
            jitter: 0.0,
            flip: 0.15,
        };
        let (mut flips, mut total) = (0usize, 0usize);
        for seed in 0..40 {
            let gt = random_mask(32, seed);
            let e = corrupt_edges(&gt, 32, &model, seed + 1000).unwrap();
            for i in 0..32 {
                for j in i + 1..32 {
                    total += 1;
                    flips += usize::from((e[i * N_MAX + j] > 0.5) != gt[i * N_MAX + j]);
                }
            }
        }
        let p = flips as f64 / total as f64;
        let sd = (0.15 * 0.85 / total as f64).sqrt();
        assert!((p - 0.15).abs() < 3.0 * sd, "flip rate {p}");
    }

    #[test]
    fn noisy_edges_stay_informative() {
        let model = NoiseModel::default();
        for seed in 0..100 {
            let gt = random_mask(32, seed);
            let e = corrupt_edges(&gt, 32, &model, seed).unwrap();
            let (mut t, mut nt, mut f, mut nf) = (0.0, 0, 0.0, 0);
            for i in 0..32 {
                for j in 0..32 {
                    if i == j {
                        continue;
                    }
                    let v = e[i * N_MAX + j];
                    assert_eq!(v, e[j * N_MAX + i]);
                    if gt[i * N_MAX + j] {
                        t += v;
                        nt += 1;
                    } else {
                        f += v;
                        nf += 1;
                    }
                }
            }
            assert!(t / nt as f64 > f / nf as f64);
        }
    }

    #[test]
    fn invalid_models_are_rejected() {
        let gt = vec![false; N_MAX * N_MAX];
        for m in [
            NoiseModel { alpha: 0.0, ..NoiseModel::default() },
            NoiseModel { jitter: -1.0, ..NoiseModel::default() },
            NoiseModel { flip: 0.5, ..NoiseModel::default() },
        ] {
            assert!(corrupt_edges(&gt, 4, &m, 0).is_err());
        }
        let m = NoiseModel::default();
        assert_eq!(corrupt_edges(&gt, 8, &m, 3).unwrap(), corrupt_edges(&gt, 8, &m, 3).unwrap());
    }
}
