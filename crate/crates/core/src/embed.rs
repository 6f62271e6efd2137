//! Frozen random image embedder used by every semantic loss and metric.
//!
//! Four stride-2 3×3 convolutions with sine activations, a global average
//! pool and a linear head, followed by L2 normalization. Weights are drawn
//! once from a seed and never trained.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::uniform;

pub const EMBED_DIM: usize = 128;
pub const CHANNELS: [usize; 5] = [3, 16, 32, 64, 64];
pub const DEFAULT_EMBEDDER_SEED: u64 = 0x5eed_e3b;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEmbedder {
    resolution: usize,
    seed: u64,
    convs: Vec<(Tensor, Tensor)>,
    head_w: Tensor,
    head_b: Tensor,
}

impl FeatureEmbedder {
    pub fn new(seed: u64, resolution: usize) -> Result<Self> {
        if resolution < 16 || resolution % 16 != 0 {
            return Err(Error::Config(format!(
                "embedder resolution must be a positive multiple of 16, got {resolution}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = CHANNELS
            .windows(2)
            .map(|c| {
                let fan_in = (c[0] * 9) as f64;
                let bound = (6.0 / fan_in).sqrt();
                (
                    uniform(&[c[1], c[0], 3, 3], bound, &mut rng),
                    uniform(&[c[1]], std::f64::consts::PI, &mut rng),
                )
            })
            .collect();
        let last = CHANNELS[4];
        let bound = (6.0 / last as f64).sqrt();
        Ok(Self {
            resolution,
            seed,
            convs,
            head_w: uniform(&[last, EMBED_DIM], bound, &mut rng),
            head_b: uniform(&[EMBED_DIM], 1.0 / (last as f64).sqrt(), &mut rng),
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unit `[128]` embedding of a `[3, R, R]` image.
    ///
    /// # Panics
    /// If the image is not `[3, R, R]` at the embedder's resolution; use
    /// [`embed`](Self::embed) for a checked call.
    pub fn embed_var<'g>(&self, img: Var<'g>) -> Var<'g> {
        let r = self.resolution;
        assert_eq!(img.shape(), vec![3, r, r], "embed: image shape vs embedder resolution");
        let g = img.graph();
        // centre pixel values on zero
        let mut h = img.scale(2.0).add_scalar(-1.0);
        for (w, b) in &self.convs {
            h = h.conv2d(g.constant(w.clone()), g.constant(b.clone()), 2, 1).sin();
        }
        let s = h.shape();
        let pooled = h.reshape(&[s[0], s[1] * s[2]]).mean_axis(1).reshape(&[1, s[0]]);
        let out = pooled.matmul(g.constant(self.head_w.clone())) + g.constant(self.head_b.clone());
        out.normalize().reshape(&[EMBED_DIM])
    }

    pub fn embed(&self, img: &Tensor) -> Result<Vec<f64>> {
        let r = self.resolution;
        if img.shape() != [3, r, r] {
            return Err(Error::Shape(format!(
                "embed: expected a [3, {r}, {r}] image, got {:?}",
                img.shape()
            )));
        }
        let g = crate::autodiff::Graph::new();
        Ok(self.embed_var(g.constant(img.clone())).detach().into_data())
    }
}

/// Dot product of two unit vectors.
pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_at;

    fn random_image(seed: u64, r: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform(&[3, r, r], 0.5, &mut rng).map(|x| x + 0.5)
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let e = FeatureEmbedder::new(1, 32).unwrap();
        let img = random_image(2, 32);
        let a = e.embed(&img).unwrap();
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_eq!(a, FeatureEmbedder::new(1, 32).unwrap().embed(&img).unwrap());
        assert!((cos(&a, &a) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((cos(&a, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_resolution_rejected() {
        let e = FeatureEmbedder::new(1, 32).unwrap();
        assert!(e.embed(&random_image(0, 16)).is_err());
        assert!(FeatureEmbedder::new(1, 20).is_err());
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        let e = FeatureEmbedder::new(3, 16).unwrap();
        let img = random_image(4, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = uniform(&[EMBED_DIM], 1.0, &mut rng);
        let idx: Vec<usize> = (0..img.numel()).step_by(37).collect();
        let r = grad_check_at(
            |g, x| (e.embed_var(x) * g.constant(w.clone())).sum(),
            &img,
            1e-5,
            1e-3,
            &idx,
        );
        assert!(r.passed, "{:?} at {}", r.max_rel_error, r.worst_index);
    }
}
