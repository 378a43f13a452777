//! A stand-in noise predictor and the dual-branch training loss.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FeatureTensor;
use crate::error::{Error, Result};

/// Per-token two-layer network
/// `ε̂ = tanh(x·W₁ + b₁ + t·w_t + e_y)·W₂ + b₂`, where `e_y` is the learned
/// embedding of the conditioning tag `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser {
    pub w1: DMatrix<f64>,
    pub b1: RowDVector<f64>,
    pub w_time: RowDVector<f64>,
    /// One row per conditioning tag.
    pub tags: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: RowDVector<f64>,
}

impl ToyDenoiser {
    pub fn new(channels: usize, hidden: usize, tags: usize, seed: u64) -> Result<Self> {
        if channels == 0 || hidden == 0 || tags == 0 {
            return Err(Error::arg("denoiser sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize, std: f64| {
            let n = Normal::new(0.0, std).expect("valid deviation");
            DMatrix::from_fn(r, c, |_, _| n.sample(&mut rng))
        };
        let s1 = 1.0 / (channels as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        Ok(ToyDenoiser {
            w1: draw(channels, hidden, s1),
            b1: RowDVector::zeros(hidden),
            w_time: draw(1, hidden, 1.0).row(0).into_owned(),
            tags: draw(tags, hidden, 0.5),
            w2: draw(hidden, channels, s2),
            b2: RowDVector::zeros(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.w1.nrows()
    }

    pub fn tag_count(&self) -> usize {
        self.tags.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w_time.len() + self.tags.len() + self.w2.len() + self.b2.len()
    }

    /// Predicted noise for a noisy latent at timestep `t` under tag `tag`;
    /// same shape as `latent`.
    pub fn predict(&self, latent: &FeatureTensor, t: f64, tag: usize) -> Result<FeatureTensor> {
        if latent.channels() != self.channels() {
            return Err(Error::shape(format!(
                "latent has {} channels, denoiser expects {}",
                latent.channels(),
                self.channels()
            )));
        }
        if tag >= self.tag_count() {
            return Err(Error::arg(format!("tag {tag} out of range ({} tags)", self.tag_count())));
        }
        let x = latent.matrix();
        let bias: DVector<f64> = (&self.b1 + &self.w_time * t + self.tags.row(tag)).transpose();
        let mut h = x * &self.w1;
        for mut row in h.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(bias.iter()) {
                *v = (*v + b).tanh();
            }
        }
        let mut y = h * &self.w2;
        for mut row in y.row_iter_mut() {
            row += &self.b2;
        }
        Ok(latent.with_matrix(&y))
    }
}

fn mse(noise: &FeatureTensor, pred: &FeatureTensor) -> Result<f64> {
    if !noise.same_shape(pred) {
        return Err(Error::shape("noise and prediction shapes differ"));
    }
    let n = noise.data().len() as f64;
    Ok(noise.data().iter().zip(pred.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// `L* + (1/N) Σᵢ Lⁱ`, each term the mean squared error between a noise
/// sample and its prediction. `pano` and every entry of `views` are
/// `(noise, prediction)` pairs.
pub fn generation_loss(
    pano: (&FeatureTensor, &FeatureTensor),
    views: &[(&FeatureTensor, &FeatureTensor)],
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::arg("the generation loss needs at least one perspective branch"));
    }
    let mut sum = 0.0;
    for (noise, pred) in views {
        sum += mse(noise, pred)?;
    }
    Ok(mse(pano.0, pano.1)? + sum / views.len() as f64)
}
