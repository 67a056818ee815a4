//! Linde–Buzo–Gray codebook training: binary splitting plus Lloyd refinement.
//!
//! Training starts from the global centroid. Each stage splits codewords
//! `c → c(1+δ), c(1−δ)` and runs Lloyd iterations until the relative
//! improvement in mean distortion drops below `epsilon` or `max_iters` is
//! reached. When the target length is not a power of two, the last stage
//! only splits the cells with the highest distortion.
//!
//! Within a stage the recorded distortion never increases. Splitting itself
//! is not a Lloyd iteration and may raise distortion slightly (the children
//! `c(1±δ)` both differ from `c`), so monotonicity is tracked per stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gather_block, Codebook, CodecError, MAX_CODEBOOK_LEN};
use crate::image_io::ImageTensor;

const SPLIT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct LbgConfig {
    pub codebook_len: usize,
    pub block_w: usize,
    pub block_h: usize,
    /// Relative distortion improvement below which a stage stops.
    pub epsilon: f64,
    /// Lloyd iteration cap per stage.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for LbgConfig {
    fn default() -> Self {
        Self {
            codebook_len: 64,
            block_w: 2,
            block_h: 2,
            epsilon: 1e-3,
            max_iters: 50,
            seed: 0,
        }
    }
}

/// Distortion history of one splitting stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LbgStage {
    pub codewords: usize,
    /// Mean squared error per component, one entry per Lloyd iteration.
    pub distortions: Vec<f64>,
}

impl LbgStage {
    pub fn is_non_increasing(&self) -> bool {
        self.distortions.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Debug, Clone)]
pub struct LbgRun {
    pub codebook: Codebook,
    pub stages: Vec<LbgStage>,
}

impl LbgRun {
    pub fn final_distortion(&self) -> f64 {
        *self
            .stages
            .last()
            .and_then(|s| s.distortions.last())
            .expect("training records at least one stage")
    }
}

struct TrainingSet {
    dim: usize,
    vectors: Vec<f64>,
}

impl TrainingSet {
    fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

struct Assignment {
    cell: Vec<usize>,
    sse: Vec<f64>,
    count: Vec<usize>,
    total: f64,
}

pub fn train_codebook_lbg(images: &[ImageTensor], cfg: &LbgConfig) -> Result<LbgRun, CodecError> {
    if !(2..=MAX_CODEBOOK_LEN).contains(&cfg.codebook_len) {
        return Err(CodecError::InvalidCodebook(format!(
            "codebook length {} outside [2, {MAX_CODEBOOK_LEN}]",
            cfg.codebook_len
        )));
    }
    if cfg.block_w == 0 || cfg.block_h == 0 {
        return Err(CodecError::InvalidCodebook("zero block dimension".into()));
    }
    if !(cfg.epsilon >= 0.0) || cfg.max_iters == 0 {
        return Err(CodecError::InvalidCodebook(
            "epsilon must be >= 0 and max_iters >= 1".into(),
        ));
    }
    let data = collect_blocks(images, cfg.block_w, cfg.block_h)?;
    if data.len() < cfg.codebook_len {
        return Err(CodecError::InsufficientTrainingData {
            vectors: data.len(),
            required: cfg.codebook_len,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = data.dim;
    let mut centroid = vec![0.0; dim];
    for i in 0..data.len() {
        for (c, x) in centroid.iter_mut().zip(data.vector(i)) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= data.len() as f64);

    let mut codewords = vec![centroid];
    let mut assignment = assign(&data, &codewords);
    let mut stages = vec![LbgStage {
        codewords: 1,
        distortions: vec![assignment.total / (data.len() * dim) as f64],
    }];

    while codewords.len() < cfg.codebook_len {
        let splits = codewords.len().min(cfg.codebook_len - codewords.len());
        let mut chosen: Vec<usize> = (0..codewords.len()).collect();
        if splits < codewords.len() {
            chosen.sort_by(|&a, &b| assignment.sse[b].total_cmp(&assignment.sse[a]).then(a.cmp(&b)));
            chosen.truncate(splits);
            chosen.sort_unstable();
        }
        for j in chosen {
            let parent = codewords[j].clone();
            codewords[j] = parent
                .iter()
                .map(|v| (v * (1.0 + SPLIT_DELTA)).clamp(0.0, 255.0))
                .collect();
            codewords.push(
                parent
                    .iter()
                    .map(|v| (v * (1.0 - SPLIT_DELTA)).clamp(0.0, 255.0))
                    .collect(),
            );
        }
        let (stage, last) = lloyd(&data, &mut codewords, cfg, &mut rng);
        log::debug!(
            "lbg stage L={} iterations={} distortion={:.4}",
            stage.codewords,
            stage.distortions.len(),
            stage.distortions.last().copied().unwrap_or_default()
        );
        assignment = last;
        stages.push(stage);
    }

    let flat: Vec<f32> = codewords
        .iter()
        .flatten()
        .map(|&v| (v as f32).clamp(0.0, 255.0))
        .collect();
    let codebook = Codebook::new(cfg.block_w, cfg.block_h, flat)?;
    Ok(LbgRun { codebook, stages })
}

fn collect_blocks(images: &[ImageTensor], bw: usize, bh: usize) -> Result<TrainingSet, CodecError> {
    let dim = bw * bh;
    let mut vectors = Vec::new();
    let mut block = vec![0.0; dim];
    for img in images {
        let (h, w, c) = img.shape();
        if h % bh != 0 || w % bw != 0 {
            return Err(CodecError::NonDivisible {
                height: h,
                width: w,
                block_h: bh,
                block_w: bw,
            });
        }
        for row in 0..h / bh {
            for col in 0..w / bw {
                for ch in 0..c {
                    gather_block(img, row, col, ch, bh, bw, &mut block);
                    vectors.extend_from_slice(&block);
                }
            }
        }
    }
    Ok(TrainingSet { dim, vectors })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(codewords: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, cw) in codewords.iter().enumerate() {
        let d = sq_dist(v, cw);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(data: &TrainingSet, codewords: &[Vec<f64>]) -> Assignment {
    let mut out = Assignment {
        cell: Vec::with_capacity(data.len()),
        sse: vec![0.0; codewords.len()],
        count: vec![0; codewords.len()],
        total: 0.0,
    };
    for i in 0..data.len() {
        let (j, d) = nearest(codewords, data.vector(i));
        out.cell.push(j);
        out.sse[j] += d;
        out.count[j] += 1;
        out.total += d;
    }
    out
}

fn lloyd(
    data: &TrainingSet,
    codewords: &mut [Vec<f64>],
    cfg: &LbgConfig,
    rng: &mut ChaCha8Rng,
) -> (LbgStage, Assignment) {
    let norm = (data.len() * data.dim) as f64;
    let mut distortions: Vec<f64> = Vec::new();
    loop {
        let current = assign(data, codewords);
        let mean = current.total / norm;
        if let Some(&prev) = distortions.last() {
            debug_assert!(mean <= prev, "Lloyd distortion increased: {prev} -> {mean}");
        }
        let converged = match distortions.last() {
            Some(&prev) => prev == 0.0 || (prev - mean) / prev < cfg.epsilon,
            None => mean == 0.0,
        };
        distortions.push(mean);
        if converged || distortions.len() >= cfg.max_iters {
            let stage = LbgStage {
                codewords: codewords.len(),
                distortions,
            };
            return (stage, current);
        }
        update_centroids(data, codewords, &current, rng);
    }
}

fn update_centroids(
    data: &TrainingSet,
    codewords: &mut [Vec<f64>],
    current: &Assignment,
    rng: &mut ChaCha8Rng,
) {
    let dim = data.dim;
    let mut sums = vec![vec![0.0; dim]; codewords.len()];
    for (i, &j) in current.cell.iter().enumerate() {
        for (s, x) in sums[j].iter_mut().zip(data.vector(i)) {
            *s += x;
        }
    }
    let mut candidate_sse = vec![0.0; codewords.len()];
    for (j, sum) in sums.iter_mut().enumerate() {
        if current.count[j] > 0 {
            sum.iter_mut().for_each(|s| *s /= current.count[j] as f64);
        }
    }
    for (i, &j) in current.cell.iter().enumerate() {
        candidate_sse[j] += sq_dist(data.vector(i), &sums[j]);
    }
    // The mean minimizes a cell's error; only rounding can break that, and
    // then the old codeword is kept.
    for (j, mean) in sums.into_iter().enumerate() {
        if current.count[j] > 0 && candidate_sse[j] <= current.sse[j] {
            codewords[j] = mean;
        }
    }

    let empty: Vec<usize> = (0..codewords.len()).filter(|&j| current.count[j] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let worst = (0..codewords.len())
        .max_by(|&a, &b| current.sse[a].total_cmp(&current.sse[b]).then(b.cmp(&a)))
        .expect("non-empty codebook");
    let members: Vec<usize> = current
        .cell
        .iter()
        .enumerate()
        .filter_map(|(i, &j)| (j == worst).then_some(i))
        .collect();
    for j in empty {
        let pick = members[rng.random_range(0..members.len())];
        codewords[j] = data.vector(pick).to_vec();
    }
}
