//! Synthetic unit-norm embeddings grouped around well-separated centroids.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clusterset::FeatureSet;
use crate::error::{Error, Result};

/// Centroid placement gives up after this many rejected draws.
pub const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// RMS angle, in radians, between a sample and its centroid. Samples
    /// move along the geodesic in a random tangent direction.
    pub sigma: f64,
    /// Minimum pairwise angle between centroids, radians.
    pub min_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dimension {} < 2", self.dim)));
        }
        if self.n_classes == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "need at least one class and one sample".into(),
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be ≥ 0", self.sigma)));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.min_separation) {
            return Err(Error::Config(format!(
                "separation {} outside [0, π]",
                self.min_separation
            )));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn to_f32_unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32 as f64).collect()
}

/// Class-major samples (`samples_per_class` rows of class 0, then class 1,
/// …) with labels equal to the class index. Values are rounded to `f32` so
/// the set survives a feature-file round trip unchanged.
pub fn synth_blobs(spec: &SynthSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cos_limit = spec.min_separation.cos();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    let mut rejections = 0;
    while centroids.len() < spec.n_classes {
        let c = random_unit(&mut rng, spec.dim);
        let ok = centroids
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() <= cos_limit);
        if ok {
            centroids.push(c);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::Config(format!(
                    "cannot place {} centroids {:.3} rad apart in {} dimensions",
                    spec.n_classes, spec.min_separation, spec.dim
                )));
            }
        }
    }

    // one generator stream per class so classes can be drawn independently
    let draw_class = |class: usize| -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(class as u64 + 1);
        let c = &centroids[class];
        let scale = spec.sigma / ((spec.dim - 1) as f64).sqrt();
        (0..spec.samples_per_class)
            .map(|_| {
                let g: Vec<f64> = (0..spec.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect();
                let along: f64 = g.iter().zip(c).map(|(a, b)| a * b).sum();
                let t: Vec<f64> = g.iter().zip(c).map(|(gi, ci)| gi - along * ci).collect();
                let angle = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                if angle == 0.0 {
                    return to_f32_unit(c);
                }
                let (sin, cos) = angle.sin_cos();
                let x: Vec<f64> = c
                    .iter()
                    .zip(&t)
                    .map(|(ci, ti)| cos * ci + sin * ti / angle)
                    .collect();
                to_f32_unit(&x)
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let per_class: Vec<Vec<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..spec.n_classes)
            .into_par_iter()
            .map(draw_class)
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_class: Vec<Vec<Vec<f64>>> = (0..spec.n_classes).map(draw_class).collect();

    let n = spec.n_classes * spec.samples_per_class;
    let mut features = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for (class, rows) in per_class.iter().enumerate() {
        for (i, row) in rows.iter().enumerate() {
            let r = class * spec.samples_per_class + i;
            for (d, v) in row.iter().enumerate() {
                features[[r, d]] = *v;
            }
            labels.push(class as u32);
        }
    }
    FeatureSet::new(features, Some(labels))
}
