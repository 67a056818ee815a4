//! Batch attack campaigns and their measurements.
//!
//! [`run_batch`] attacks every correctly classified image of a dataset and
//! aggregates the outcomes into a [`BatchReport`]: success rate, confidence,
//! a true-class × adversarial-class heatmap, and per-class counts before and
//! after the attack. [`run_ablation`] compares the three search arms under
//! equal evaluation budgets.

mod export;
mod manifest;

pub use export::{
    heatmap_csv, read_report_json, records_csv, report_json, snapshots_csv, trajectories_csv,
    write_report_dir,
};
pub use manifest::{load_manifest, parse_manifest, write_dataset, MANIFEST_FILE};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    de_attack, random_search_attack, AttackContext, AttackError, AttackResult, DeConfig,
    Perturbation,
};
use crate::codebook_sort::{remap_indices, sort_codebook, SortError};
use crate::image_io::{ImageError, ImageTensor};
use crate::oracle::{OracleError, OracleHandle};
use crate::vq_codec::{decode, encode, CodecError, Codebook};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("image {id} has label {label} but the oracle has {classes} classes")]
    InvalidLabel {
        id: String,
        label: usize,
        classes: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sort(#[from] SortError),
    #[error(transparent)]
    Attack(AttackError),
    #[error("oracle failed on image {image}: {source}")]
    Oracle {
        image: usize,
        #[source]
        source: OracleError,
        /// Report over the images completed before the failure.
        partial: Box<BatchReport>,
    },
    #[error("invalid batch configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub id: String,
    pub image: ImageTensor,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// DE over the PCA-sorted codebook.
    De,
    /// DE over the codebook in its original order.
    DeUnsorted,
    /// Uniform random sampling with the same budget.
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::De, Method::DeUnsorted, Method::Random];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::De => "de",
            Method::DeUnsorted => "de-unsorted",
            Method::Random => "random",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "de" => Ok(Method::De),
            "de-unsorted" => Ok(Method::DeUnsorted),
            "random" => Ok(Method::Random),
            other => Err(format!(
                "unknown method {other:?} (expected de, de-unsorted or random)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub method: Method,
    pub de: DeConfig,
    /// Evaluations per image; `None` means the DE configuration's full budget.
    pub budget: Option<usize>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            method: Method::De,
            de: DeConfig::default(),
            budget: None,
            seed: 0,
            workers: 1,
        }
    }
}

impl BatchConfig {
    pub fn budget(&self) -> usize {
        self.budget.unwrap_or_else(|| self.de.full_budget())
    }
}

/// Seed for image `index` of a campaign seeded with `seed`.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over a Weyl step
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Attacked,
    /// Already misclassified before any perturbation.
    Excluded,
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordStatus::Attacked => "attacked",
            RecordStatus::Excluded => "excluded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub id: String,
    pub true_label: usize,
    /// Oracle label of the unperturbed decoded image.
    pub original_label: usize,
    pub status: RecordStatus,
    pub seed: u64,
    pub result: Option<AttackResult>,
}

impl ImageRecord {
    /// Label after the attack, or the original label if none was run.
    pub fn attacked_label(&self) -> usize {
        self.result
            .as_ref()
            .map_or(self.original_label, |r| r.adversarial_label)
    }

    pub fn success(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub method: Method,
    pub classes: usize,
    pub seed: u64,
    pub budget: usize,
    /// One record per processed image, ordered by dataset index.
    pub records: Vec<ImageRecord>,
    pub attacked: usize,
    pub excluded: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean adversarial-class probability over successful attacks.
    pub mean_confidence: Option<f64>,
    /// `heatmap[i][j]`: images of true class `i` misclassified as `j`.
    pub heatmap: Vec<Vec<u64>>,
    /// Oracle labels of attacked images before the attack.
    pub class_counts_before: Vec<u64>,
    /// Oracle labels of attacked images after the attack.
    pub class_counts_after: Vec<u64>,
}

impl BatchReport {
    /// Aggregates records; they are sorted by index first.
    pub fn from_records(
        method: Method,
        classes: usize,
        seed: u64,
        budget: usize,
        mut records: Vec<ImageRecord>,
    ) -> Self {
        records.sort_by_key(|r| r.index);
        let mut heatmap = vec![vec![0u64; classes]; classes];
        let mut before = vec![0u64; classes];
        let mut after = vec![0u64; classes];
        let (mut attacked, mut successes, mut confidence) = (0usize, 0usize, 0.0f64);
        for r in &records {
            let Some(res) = &r.result else { continue };
            attacked += 1;
            before[r.original_label] += 1;
            after[res.adversarial_label] += 1;
            if res.success {
                successes += 1;
                confidence += res.confidence;
                heatmap[r.true_label][res.adversarial_label] += 1;
            }
        }
        let excluded = records
            .iter()
            .filter(|r| r.status == RecordStatus::Excluded)
            .count();
        Self {
            method,
            classes,
            seed,
            budget,
            records,
            attacked,
            excluded,
            successes,
            success_rate: if attacked == 0 {
                0.0
            } else {
                successes as f64 / attacked as f64
            },
            mean_confidence: (successes > 0).then(|| confidence / successes as f64),
            heatmap,
            class_counts_before: before,
            class_counts_after: after,
        }
    }
}

/// Headline numbers of a campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub success_rate: f64,
    pub mean_confidence: Option<f64>,
}

impl fmt::Display for Summary {
    /// Tab-separated percentages, e.g. `44.8%\t80.3%`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}%\t", self.success_rate * 100.0)?;
        match self.mean_confidence {
            Some(c) => write!(f, "{:.1}%", c * 100.0),
            None => f.write_str("n/a"),
        }
    }
}

pub fn summarize(report: &BatchReport) -> Summary {
    Summary {
        success_rate: report.success_rate,
        mean_confidence: report.mean_confidence,
    }
}

/// The codebooks a campaign attacks through.
struct Codebooks {
    unsorted: Codebook,
    sorted: Codebook,
}

impl Codebooks {
    fn new(cb: &Codebook) -> Result<Self, SortError> {
        Ok(if cb.is_sorted() {
            Self {
                unsorted: cb.unsorted(),
                sorted: cb.clone(),
            }
        } else {
            Self {
                unsorted: cb.clone(),
                sorted: sort_codebook(cb)?.0,
            }
        })
    }
}

enum Failure {
    Oracle(OracleError),
    Other(ExperimentError),
}

fn attack_one(
    index: usize,
    item: &LabeledImage,
    books: &Codebooks,
    oracle: &OracleHandle,
    cfg: &BatchConfig,
) -> Result<ImageRecord, Failure> {
    let other = |e: ExperimentError| Failure::Other(e);
    let seed = derive_seed(cfg.seed, index);
    let original = encode(&item.image, &books.unsorted).map_err(|e| other(e.into()))?;
    let (indices, codebook) = match cfg.method {
        Method::De => {
            let perm = books.sorted.permutation().expect("sorted codebook");
            let remapped = remap_indices(&original, perm, &books.sorted).map_err(|e| other(e.into()))?;
            (remapped, &books.sorted)
        }
        Method::DeUnsorted | Method::Random => (original, &books.unsorted),
    };
    let img = decode(&indices, codebook).map_err(|e| other(e.into()))?;
    let original_label = oracle.classify(&img).map_err(Failure::Oracle)?.argmax();
    let mut record = ImageRecord {
        index,
        id: item.id.clone(),
        true_label: item.label,
        original_label,
        status: RecordStatus::Excluded,
        seed,
        result: None,
    };
    if original_label != item.label {
        return Ok(record);
    }
    let ctx = AttackContext::new(&indices, codebook, oracle, item.label, cfg.budget(), seed)
        .map_err(|e| other(ExperimentError::Attack(e)))?;
    let result = match cfg.method {
        Method::De | Method::DeUnsorted => de_attack(&ctx, &cfg.de),
        Method::Random => random_search_attack(&ctx, cfg.budget()),
    };
    let result = result.map_err(|e| match e {
        AttackError::Oracle { source, .. } => Failure::Oracle(source),
        e => other(ExperimentError::Attack(e)),
    })?;
    record.status = RecordStatus::Attacked;
    record.result = Some(result);
    Ok(record)
}

/// Attacks every image whose decoded version the oracle classifies correctly.
///
/// Images are processed in parallel on `cfg.workers` threads; each uses a
/// seed derived from `(cfg.seed, index)`, so the report does not depend on
/// the worker count. An oracle failure stops the campaign and returns the
/// records completed so far inside the error.
pub fn run_batch(
    dataset: &[LabeledImage],
    cb: &Codebook,
    oracle: &OracleHandle,
    cfg: &BatchConfig,
) -> Result<BatchReport, ExperimentError> {
    cfg.de.validate().map_err(ExperimentError::Attack)?;
    if cfg.workers == 0 {
        return Err(ExperimentError::InvalidConfig("workers must be at least 1".into()));
    }
    let classes = oracle.classes();
    if let Some(bad) = dataset.iter().find(|d| d.label >= classes) {
        return Err(ExperimentError::InvalidLabel {
            id: bad.id.clone(),
            label: bad.label,
            classes,
        });
    }
    let books = Codebooks::new(cb)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let failed = AtomicBool::new(false);
    let outcomes: Vec<Option<Result<ImageRecord, Failure>>> = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                if failed.load(Ordering::SeqCst) {
                    return None;
                }
                let out = attack_one(i, item, &books, oracle, cfg);
                if out.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                Some(out)
            })
            .collect()
    });

    let mut records = Vec::with_capacity(dataset.len());
    let mut first_failure = None;
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Some(Ok(r)) => records.push(r),
            Some(Err(f)) if first_failure.is_none() => first_failure = Some((i, f)),
            _ => {}
        }
    }
    let report = BatchReport::from_records(cfg.method, classes, cfg.seed, cfg.budget(), records);
    match first_failure {
        None => {
            log::info!(
                "{} on {} images: {}/{} attacks succeeded, {} excluded",
                cfg.method,
                dataset.len(),
                report.successes,
                report.attacked,
                report.excluded
            );
            Ok(report)
        }
        Some((image, Failure::Oracle(source))) => Err(ExperimentError::Oracle {
            image,
            source,
            partial: Box::new(report),
        }),
        Some((_, Failure::Other(e))) => Err(e),
    }
}

/// Success rates of the three arms for one campaign seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub de: f64,
    pub de_unsorted: f64,
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Evaluations per image, identical across arms.
    pub budget: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Mean success rates `(de, de_unsorted, random)` over seeds.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: fn(&AblationRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        (sum(|r| r.de), sum(|r| r.de_unsorted), sum(|r| r.random))
    }
}

/// Runs every arm once per seed with the DE configuration's full budget.
pub fn run_ablation(
    dataset: &[LabeledImage],
    cb: &Codebook,
    oracle: &OracleHandle,
    de: &DeConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<AblationReport, ExperimentError> {
    let budget = de.full_budget();
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let rate = |method| -> Result<f64, ExperimentError> {
            let cfg = BatchConfig {
                method,
                de: de.clone(),
                budget: Some(budget),
                seed,
                workers,
            };
            Ok(run_batch(dataset, cb, oracle, &cfg)?.success_rate)
        };
        rows.push(AblationRow {
            seed,
            de: rate(Method::De)?,
            de_unsorted: rate(Method::DeUnsorted)?,
            random: rate(Method::Random)?,
        });
    }
    Ok(AblationReport { budget, rows })
}

/// Spread of the replacement indices across a population: the standard
/// deviation over individuals of each value slot, averaged over slots.
///
/// Pooling all slots together would hide convergence whenever the population
/// settles on a vector such as `[0, L-1, 0]`.
pub fn index_spread(population: &[Perturbation]) -> f64 {
    let slots = population.iter().map(|p| p.values.len()).min().unwrap_or(0);
    if slots == 0 {
        return 0.0;
    }
    let n = population.len() as f64;
    let total: f64 = (0..slots)
        .map(|k| {
            let mean = population.iter().map(|p| p.values[k] as f64).sum::<f64>() / n;
            let var = population.iter().map(|p| (p.values[k] as f64 - mean).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .sum();
    total / slots as f64
}
