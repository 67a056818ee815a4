//! `vqattack`: train, sort and apply VQ codebooks, and run one-index attacks.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when the oracle fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use vqattack_core::attack::{de_attack, AttackContext, AttackError, DeConfig};
use vqattack_core::codebook_sort::{
    align_indices, distance_profile, index_distance_correlation, sort_codebook_with, Centering,
};
use vqattack_core::experiment::{
    load_manifest, run_batch, summarize, write_dataset, write_report_dir, BatchConfig,
    ExperimentError, Method,
};
use vqattack_core::image_io::{load_image, save_image};
use vqattack_core::oracle::{write_fixture_weights, OracleError, OracleHandle};
use vqattack_core::synthetic::{generate_dataset, template_classifier, SyntheticConfig};
use vqattack_core::vq_codec::{
    decode, encode, read_codebook, read_indices, train_codebook_lbg, write_codebook,
    write_indices, Codebook, LbgConfig,
};

#[derive(Parser)]
#[command(name = "vqattack", version, about = "One-index adversarial attacks on VQ-compressed images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an LBG codebook on every PGM/PPM image in a directory.
    TrainCodebook(TrainArgs),
    /// Reorder a codebook by first principal component.
    SortCodebook(SortArgs),
    /// Encode an image into an index tensor.
    Encode(EncodeArgs),
    /// Decode an index tensor into an image.
    Decode(DecodeArgs),
    /// Attack one encoded image.
    Attack(AttackArgs),
    /// Attack every image of a manifest and write a report directory.
    Batch(BatchArgs),
    /// Distances from one codeword to all others, as CSV.
    DistanceProfile(ProfileArgs),
    /// Generate a synthetic labeled dataset and its fixture classifier.
    MakeFixture(FixtureArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    images: PathBuf,
    /// Codebook length.
    #[arg(long = "L", default_value_t = 64)]
    codebook_len: usize,
    /// Block size as WxH.
    #[arg(long, default_value = "2x2")]
    block: String,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenteringArg {
    PerComponent,
    PerCodeword,
}

#[derive(Args)]
struct SortArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "per-component")]
    centering: CenteringArg,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    indices: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Base URL of a classification service.
    #[arg(long, env = "VQATTACK_ORACLE_URL")]
    oracle: Option<String>,
    /// Linear-softmax weight file; takes precedence over --oracle.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Per-request timeout for a remote oracle.
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

impl OracleArgs {
    fn open(&self) -> Result<OracleHandle> {
        if let Some(path) = &self.fixture {
            let bytes = read(path, "--fixture")?;
            return OracleHandle::load_fixture(&bytes)
                .map_err(|e| invalid("--fixture", e));
        }
        let Some(url) = &self.oracle else {
            return Err(invalid(
                "--oracle",
                "either --oracle (or VQATTACK_ORACLE_URL) or --fixture is required",
            ));
        };
        Ok(OracleHandle::connect_remote(url, Duration::from_millis(self.timeout_ms))?)
    }
}

#[derive(Args)]
struct DeArgs {
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 50)]
    generations: usize,
    /// Mutation scale factor.
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    /// Evaluations per image; defaults to population × (generations + 1).
    #[arg(long)]
    budget: Option<usize>,
    /// Stop at the first misclassified candidate.
    #[arg(long)]
    early_stop: bool,
    /// Record initial, middle and final populations.
    #[arg(long)]
    snapshots: bool,
    /// Query the oracle again for repeated candidates.
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DeArgs {
    fn config(&self) -> Result<DeConfig> {
        if self.population < 4 {
            return Err(invalid("--population", format!("must be at least 4, got {}", self.population)));
        }
        if !(self.scale > 0.0 && self.scale <= 2.0) {
            return Err(invalid("--scale", format!("must lie in (0, 2], got {}", self.scale)));
        }
        let cfg = DeConfig {
            population: self.population,
            generations: self.generations,
            scale: self.scale,
            early_stop: self.early_stop,
            snapshots: self.snapshots,
            cache: !self.no_cache,
        };
        if let Some(b) = self.budget {
            if b < self.population {
                return Err(invalid("--budget", format!("must be at least the population ({})", self.population)));
            }
        }
        Ok(cfg)
    }

    fn budget(&self, cfg: &DeConfig) -> usize {
        self.budget.unwrap_or_else(|| cfg.full_budget())
    }
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    indices: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long)]
    true_label: usize,
    #[command(flatten)]
    de: DeArgs,
    /// Attack result as JSON.
    #[arg(long)]
    report: PathBuf,
    /// Also write the decoded adversarial image.
    #[arg(long)]
    adversarial_image: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long, default_value = "de", value_parser = parse_method)]
    method: Method,
    #[command(flatten)]
    de: DeArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long)]
    report: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long = "ref", default_value_t = 0)]
    reference: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    /// Directory for the images, manifest.csv and fixture.lsmw.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A validation error naming the offending flag.
fn invalid(flag: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("invalid value for {flag}: {msg}")
}

fn read(path: &Path, flag: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| invalid(flag, format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_codebook(path: &Path, flag: &str) -> Result<Codebook> {
    read_codebook(&read(path, flag)?).map_err(|e| invalid(flag, e))
}

fn parse_block(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| invalid("--block", format!("expected WxH, got {s:?}")))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid("--block", format!("bad dimension {v:?}")))
    };
    Ok((dim(w)?, dim(h)?))
}

fn train(args: &TrainArgs) -> Result<()> {
    if args.codebook_len < 2 {
        return Err(invalid("--L", format!("must be at least 2, got {}", args.codebook_len)));
    }
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(invalid("--epsilon", "must be positive"));
    }
    if args.max_iters == 0 {
        return Err(invalid("--max-iters", "must be at least 1"));
    }
    let (block_w, block_h) = parse_block(&args.block)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&args.images)
        .map_err(|e| invalid("--images", format!("{}: {e}", args.images.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(invalid("--images", "no .pgm or .ppm files found"));
    }
    let images = files
        .iter()
        .map(|p| load_image(&read(p, "--images")?).map_err(|e| invalid("--images", format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    let cfg = LbgConfig {
        codebook_len: args.codebook_len,
        block_w,
        block_h,
        epsilon: args.epsilon,
        max_iters: args.max_iters,
        seed: args.seed,
    };
    let run = train_codebook_lbg(&images, &cfg).map_err(|e| invalid("--images", e))?;
    info!(
        "trained L={} on {} images, distortion {:.4}",
        run.codebook.len(),
        images.len(),
        run.final_distortion()
    );
    write(&args.out, &write_codebook(&run.codebook))
}

fn sort(args: &SortArgs) -> Result<()> {
    let cb = load_codebook(&args.input, "--in")?;
    let centering = match args.centering {
        CenteringArg::PerComponent => Centering::PerComponent,
        CenteringArg::PerCodeword => Centering::PerCodeword,
    };
    let (sorted, _) = sort_codebook_with(&cb, centering)?;
    info!(
        "index/distance correlation {:.3} -> {:.3}",
        index_distance_correlation(&cb, 0)?,
        index_distance_correlation(&sorted, 0)?
    );
    write(&args.out, &write_codebook(&sorted))
}

fn encode_cmd(args: &EncodeArgs) -> Result<()> {
    let cb = load_codebook(&args.codebook, "--codebook")?;
    let img = load_image(&read(&args.image, "--image")?).map_err(|e| invalid("--image", e))?;
    let idx = encode(&img, &cb).map_err(|e| invalid("--image", e))?;
    write(&args.out, &write_indices(&idx))
}

fn decode_cmd(args: &DecodeArgs) -> Result<()> {
    let cb = load_codebook(&args.codebook, "--codebook")?;
    let idx = read_indices(&read(&args.indices, "--indices")?).map_err(|e| invalid("--indices", e))?;
    let idx = align_indices(&idx, &cb).map_err(|e| invalid("--codebook", e))?;
    write(&args.out, &save_image(&decode(&idx, &cb)?))
}

fn attack_cmd(args: &AttackArgs) -> Result<()> {
    let cb = load_codebook(&args.codebook, "--codebook")?;
    let idx = read_indices(&read(&args.indices, "--indices")?).map_err(|e| invalid("--indices", e))?;
    let idx = align_indices(&idx, &cb).map_err(|e| invalid("--codebook", e))?;
    let cfg = args.de.config()?;
    let oracle = args.oracle.open()?;
    if args.true_label >= oracle.classes() {
        return Err(invalid(
            "--true-label",
            format!("oracle has {} classes", oracle.classes()),
        ));
    }
    let ctx = AttackContext::new(&idx, &cb, &oracle, args.true_label, args.de.budget(&cfg), args.de.seed)
        .map_err(|e| invalid("--indices", e))?;
    let baseline = ctx.baseline()?;
    if baseline.label != args.true_label {
        log::warn!(
            "unperturbed image is already classified as {} (p={:.4})",
            baseline.label,
            baseline.confidence
        );
    }
    let result = de_attack(&ctx, &cfg)?;
    let mut json = serde_json::to_vec_pretty(&result)?;
    json.push(b'\n');
    write(&args.report, &json)?;
    if let Some(path) = &args.adversarial_image {
        write(path, &save_image(&decode(&result.adversarial_indices(&idx)?, &cb)?))?;
    }
    println!(
        "{}\t{} -> {}\tconfidence {:.4}\tevaluations {}",
        if result.success { "success" } else { "failure" },
        result.true_label,
        result.adversarial_label,
        result.confidence,
        result.evaluations
    );
    Ok(())
}

fn batch_cmd(args: &BatchArgs) -> Result<()> {
    if args.workers == 0 {
        return Err(invalid("--workers", "must be at least 1"));
    }
    let de = args.de.config()?;
    let cb = load_codebook(&args.codebook, "--codebook")?;
    let dataset = load_manifest(&args.manifest).map_err(|e| invalid("--manifest", e))?;
    let oracle = args.oracle.open()?;
    let cfg = BatchConfig {
        method: args.method,
        budget: Some(args.de.budget(&de)),
        de,
        seed: args.de.seed,
        workers: args.workers,
    };
    let report = match run_batch(&dataset, &cb, &oracle, &cfg) {
        Ok(r) => r,
        Err(ExperimentError::Oracle { image, source, partial }) => {
            write_report_dir(&args.report, &partial)?;
            return Err(anyhow::Error::new(source)
                .context(format!("oracle failed on image {image}; partial report written")));
        }
        Err(ExperimentError::InvalidLabel { id, label, classes }) => {
            return Err(invalid(
                "--manifest",
                format!("{id} has label {label} but the oracle has {classes} classes"),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    write_report_dir(&args.report, &report)?;
    println!("{}", summarize(&report));
    Ok(())
}

fn profile_cmd(args: &ProfileArgs) -> Result<()> {
    let cb = load_codebook(&args.codebook, "--codebook")?;
    let profile = distance_profile(&cb, args.reference).map_err(|e| invalid("--ref", e))?;
    let mut csv = String::from("index,distance\n");
    for (i, d) in profile.distances.iter().enumerate() {
        csv.push_str(&format!("{i},{d}\n"));
    }
    write(&args.out, csv.as_bytes())
}

fn fixture_cmd(args: &FixtureArgs) -> Result<()> {
    if !(2..=10).contains(&args.classes) {
        return Err(invalid("--classes", "must lie in [2, 10]"));
    }
    let cfg = SyntheticConfig {
        classes: args.classes,
        ..SyntheticConfig::default()
    };
    let manifest = write_dataset(&args.out, &generate_dataset(args.count, args.seed, &cfg))?;
    write(&args.out.join("fixture.lsmw"), &write_fixture_weights(&template_classifier(&cfg)))?;
    info!("wrote {} images and {}", args.count, manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::TrainCodebook(a) => train(a),
        Command::SortCodebook(a) => sort(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Batch(a) => batch_cmd(a),
        Command::DistanceProfile(a) => profile_cmd(a),
        Command::MakeFixture(a) => fixture_cmd(a),
    }
}

fn is_oracle_failure(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<OracleError>()
            || matches!(cause.downcast_ref::<AttackError>(), Some(AttackError::Oracle { .. }))
            || matches!(cause.downcast_ref::<ExperimentError>(), Some(ExperimentError::Oracle { .. }))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_oracle_failure(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_parsing() {
        assert_eq!(parse_block("2x2").unwrap(), (2, 2));
        assert_eq!(parse_block("4X3").unwrap(), (4, 3));
        for bad in ["2", "0x2", "ax2", "2x"] {
            assert!(parse_block(bad).unwrap_err().to_string().contains("--block"));
        }
    }

    #[test]
    fn de_defaults() {
        let cli = Cli::try_parse_from([
            "vqattack", "attack", "--indices", "i", "--codebook", "c", "--fixture", "f",
            "--true-label", "0", "--report", "r",
        ])
        .unwrap();
        let Command::Attack(a) = cli.command else { panic!() };
        let cfg = a.de.config().unwrap();
        assert_eq!((cfg.population, cfg.generations, cfg.scale), (50, 50, 0.5));
        assert_eq!(a.de.budget(&cfg), 2550);
    }

    #[test]
    fn de_validation_names_the_flag() {
        let parse = |extra: &[&str]| {
            let mut argv = vec!["vqattack", "batch", "--manifest", "m", "--codebook", "c", "--report", "r"];
            argv.extend_from_slice(extra);
            let Command::Batch(b) = Cli::try_parse_from(argv).unwrap().command else { panic!() };
            b.de.config().map(|_| ()).unwrap_err().to_string()
        };
        assert!(parse(&["--population", "3"]).contains("--population"));
        assert!(parse(&["--scale", "0"]).contains("--scale"));
        assert!(parse(&["--scale", "2.5"]).contains("--scale"));
        assert!(parse(&["--budget", "10"]).contains("--budget"));
    }

    #[test]
    fn oracle_failures_are_classified() {
        let e: anyhow::Error = OracleError::Transport("refused".into()).into();
        assert!(is_oracle_failure(&e));
        assert!(is_oracle_failure(&e.context("while attacking")));
        assert!(!is_oracle_failure(&invalid("--L", "too small")));
    }
}
