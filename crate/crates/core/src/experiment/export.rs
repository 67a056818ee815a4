use std::fs;
use std::path::{Path, PathBuf};

use super::{summarize, BatchReport, ExperimentError};

pub fn report_json(report: &BatchReport) -> Result<Vec<u8>, ExperimentError> {
    let mut out = serde_json::to_vec_pretty(report)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_report_json(bytes: &[u8]) -> Result<BatchReport, ExperimentError> {
    Ok(serde_json::from_slice(bytes)?)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ExperimentError> {
    w.into_inner()
        .map_err(|e| ExperimentError::Csv(e.into_error().into()))
}

/// One row per processed image, excluded ones included.
pub fn records_csv(report: &BatchReport) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id",
        "true_label",
        "attacked_label",
        "success",
        "confidence",
        "evaluations",
        "status",
    ])?;
    for r in &report.records {
        let (confidence, evaluations) = match &r.result {
            Some(res) => (res.confidence.to_string(), res.evaluations.to_string()),
            None => (String::new(), "0".to_string()),
        };
        w.write_record([
            r.id.clone(),
            r.true_label.to_string(),
            r.attacked_label().to_string(),
            r.success().to_string(),
            confidence,
            evaluations,
            r.status.to_string(),
        ])?;
    }
    finish(w)
}

/// K×K grid without a header; row = true class, column = adversarial class.
pub fn heatmap_csv(report: &BatchReport) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.heatmap {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    finish(w)
}

/// Best fitness per generation for every attacked image.
pub fn trajectories_csv(report: &BatchReport) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "generation", "best_fitness"])?;
    for r in &report.records {
        let Some(res) = &r.result else { continue };
        for (g, f) in res.trajectory.iter().enumerate() {
            w.write_record([r.id.clone(), g.to_string(), f.to_string()])?;
        }
    }
    finish(w)
}

/// Population dumps; `values` holds the channel indices separated by spaces.
pub fn snapshots_csv(report: &BatchReport) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "stage", "generation", "individual", "row", "col", "values"])?;
    for r in &report.records {
        let Some(snaps) = r.result.as_ref().and_then(|res| res.snapshots.as_ref()) else {
            continue;
        };
        let last = r.result.as_ref().map_or(0, |res| res.trajectory.len() - 1);
        for (stage, generation, pop) in [
            ("initial", 0, &snaps.initial),
            ("middle", snaps.middle_generation.min(last), &snaps.middle),
            ("final", last, &snaps.final_),
        ] {
            for (i, p) in pop.iter().enumerate() {
                let values: Vec<String> = p.values.iter().map(|v| v.to_string()).collect();
                w.write_record([
                    r.id.clone(),
                    stage.to_string(),
                    generation.to_string(),
                    i.to_string(),
                    p.row.to_string(),
                    p.col.to_string(),
                    values.join(" "),
                ])?;
            }
        }
    }
    finish(w)
}

/// Writes every report artifact into `dir` and returns the paths written.
pub fn write_report_dir(dir: &Path, report: &BatchReport) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = vec![
        ("report.json", report_json(report)?),
        ("records.csv", records_csv(report)?),
        ("heatmap.csv", heatmap_csv(report)?),
        ("trajectories.csv", trajectories_csv(report)?),
        ("summary.txt", format!("{}\n", summarize(report)).into_bytes()),
    ];
    if report
        .records
        .iter()
        .any(|r| r.result.as_ref().is_some_and(|res| res.snapshots.is_some()))
    {
        files.push(("snapshots.csv", snapshots_csv(report)?));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
