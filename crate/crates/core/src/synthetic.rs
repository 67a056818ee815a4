//! Seeded synthetic dataset and a matching linear-softmax classifier.
//!
//! Each image has a random two-axis color gradient, a few random disks, and
//! a small square patch in its class color near the center. The classifier
//! scores an image against per-class templates (expected pixel values under
//! the generator), so it needs no training and is fully deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experiment::LabeledImage;
use crate::image_io::ImageTensor;
use crate::oracle::LinearSoftmax;
use crate::vq_codec::round_half_up;

pub const PALETTE: [[u8; 3]; 10] = [
    [230, 40, 40],
    [40, 200, 40],
    [40, 60, 230],
    [230, 220, 40],
    [220, 40, 220],
    [40, 220, 220],
    [240, 140, 30],
    [140, 60, 200],
    [250, 250, 250],
    [20, 20, 20],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// At most `PALETTE.len()`.
    pub classes: usize,
    /// Images are `size × size × 3`.
    pub size: usize,
    /// Side of the class patch in pixels.
    pub patch: usize,
    /// Maximum patch offset from the center, per axis.
    pub jitter: usize,
    /// Maximum per-channel deviation of the patch from its class color.
    pub color_jitter: f64,
    /// Maximum per-value uniform noise.
    pub noise: f64,
    pub blobs: usize,
    /// Logit scale of the template classifier.
    pub temperature: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            size: 32,
            patch: 6,
            jitter: 1,
            color_jitter: 50.0,
            noise: 8.0,
            blobs: 2,
            temperature: 0.25,
        }
    }
}

impl SyntheticConfig {
    fn patch_origin(&self, offset: i64) -> usize {
        (self.size as i64 / 2 - self.patch as i64 / 2 + offset) as usize
    }
}

pub fn generate_image<R: Rng>(rng: &mut R, label: usize, cfg: &SyntheticConfig) -> ImageTensor {
    let n = cfg.size;
    let span = (n - 1).max(1) as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..215.0));
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-60.0..60.0)));
    let mut px = vec![0.0f64; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                px[(y * n + x) * 3 + c] =
                    base[c] + grad[c][0] * x as f64 / span + grad[c][1] * y as f64 / span;
            }
        }
    }
    for _ in 0..cfg.blobs {
        let (cx, cy) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let r = rng.random_range(2.0..6.0f64);
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        for y in 0..n {
            for x in 0..n {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r {
                    px[(y * n + x) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    let j = cfg.jitter as i64;
    let (x0, y0) = (
        cfg.patch_origin(rng.random_range(-j..=j)),
        cfg.patch_origin(rng.random_range(-j..=j)),
    );
    let color: [f64; 3] = std::array::from_fn(|c| {
        PALETTE[label][c] as f64 + rng.random_range(-cfg.color_jitter..=cfg.color_jitter)
    });
    for y in y0..y0 + cfg.patch {
        for x in x0..x0 + cfg.patch {
            px[(y * n + x) * 3..][..3].copy_from_slice(&color);
        }
    }
    let data = px
        .into_iter()
        .map(|v| round_half_up(v + rng.random_range(-cfg.noise..=cfg.noise)))
        .collect();
    ImageTensor::new(n, n, 3, data).expect("valid synthetic shape")
}

/// `n` images with uniformly drawn labels; ids are `syn0000`, `syn0001`, ...
pub fn generate_dataset(n: usize, seed: u64, cfg: &SyntheticConfig) -> Vec<LabeledImage> {
    assert!(cfg.classes >= 2 && cfg.classes <= PALETTE.len(), "classes out of range");
    assert!(cfg.patch + 2 * cfg.jitter <= cfg.size, "patch does not fit");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = rng.random_range(0..cfg.classes);
            LabeledImage {
                id: format!("syn{i:04}"),
                image: generate_image(&mut rng, label, cfg),
                label,
            }
        })
        .collect()
}

/// Expected normalized pixel values per class: mid-gray background, blended
/// toward the class color by the probability that the patch covers a pixel.
pub fn class_templates(cfg: &SyntheticConfig) -> Vec<Vec<f64>> {
    let n = cfg.size;
    let j = cfg.jitter as i64;
    let mut coverage = vec![0.0f64; n * n];
    let placements = ((2 * j + 1) * (2 * j + 1)) as f64;
    for oy in -j..=j {
        for ox in -j..=j {
            let (x0, y0) = (cfg.patch_origin(ox), cfg.patch_origin(oy));
            for y in y0..y0 + cfg.patch {
                for x in x0..x0 + cfg.patch {
                    coverage[y * n + x] += 1.0 / placements;
                }
            }
        }
    }
    (0..cfg.classes)
        .map(|k| {
            coverage
                .iter()
                .flat_map(|&p| (0..3).map(move |c| 0.5 + p * (PALETTE[k][c] as f64 / 255.0 - 0.5)))
                .collect()
        })
        .collect()
}

/// Nearest-template classifier as a linear softmax:
/// `logit_k = τ·(m_k · x̂ − ‖m_k‖² / 2)` with `x̂ = x / 255`.
pub fn template_classifier(cfg: &SyntheticConfig) -> LinearSoftmax {
    let templates = class_templates(cfg);
    let tau = cfg.temperature;
    let weights = templates
        .iter()
        .flat_map(|m| m.iter().map(move |&v| (tau * v) as f32))
        .collect();
    let bias = templates
        .iter()
        .map(|m| (-tau * m.iter().map(|v| v * v).sum::<f64>() / 2.0) as f32)
        .collect();
    LinearSoftmax::new(cfg.classes, cfg.size * cfg.size * 3, weights, bias)
        .expect("template dimensions are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleHandle;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_dataset(5, 42, &cfg);
        assert_eq!(a, generate_dataset(5, 42, &cfg));
        assert_ne!(a, generate_dataset(5, 43, &cfg));
        assert!(a.iter().all(|d| d.image.shape() == (32, 32, 3) && d.label < 10));
    }

    #[test]
    fn templates_match_their_own_class() {
        let cfg = SyntheticConfig::default();
        let oracle = OracleHandle::fixture(template_classifier(&cfg));
        for (k, m) in class_templates(&cfg).iter().enumerate() {
            let img = ImageTensor::new(32, 32, 3, m.iter().map(|&v| round_half_up(v * 255.0)).collect())
                .unwrap();
            assert_eq!(oracle.classify(&img).unwrap().argmax(), k);
        }
    }

    #[test]
    fn clean_images_are_mostly_recognized() {
        let cfg = SyntheticConfig::default();
        let oracle = OracleHandle::fixture(template_classifier(&cfg));
        let data = generate_dataset(200, 1, &cfg);
        let correct = data
            .iter()
            .filter(|d| oracle.classify(&d.image).unwrap().argmax() == d.label)
            .count();
        assert!(correct >= 150, "{correct}/200");
    }
}
