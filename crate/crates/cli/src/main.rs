use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expressive::audio::{load_manifest, write_atomic};
use expressive::classify::{comparison_to_csv, parse_custom_set};
use expressive::dataset::{matrix_to_csv, normalized_to_json, read_matrix_csv};
use expressive::pipeline::{analysis_summary, analyze, compare, comparison_summary, extract_recordings};
use expressive::stats::{anova_to_csv, separation_to_csv};
use expressive::synth::{archetypes, synth_corpus, PerformancePreset};
use expressive::{AnalysisConfig, Error};

#[derive(Parser)]
#[command(name = "expressive", version, about = "Emotion-oriented audio feature analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Extract the feature matrix from a manifest.
    Extract(ExtractArgs),
    /// Normalize, gate, separate and run PCA on a feature matrix.
    Analyze(AnalyzeArgs),
    /// Leave-one-out SVM comparison of feature sets.
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct Common {
    /// Analysis configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    performers: usize,
    #[arg(long, default_value_t = 12)]
    notes: usize,
    /// JSON list of performance presets replacing the built-in archetypes.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Manifest CSV (`path,performer,emotion`); paths are relative to it.
    manifest: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Feature matrix CSV written by `extract`.
    matrix: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct ClassifyArgs {
    matrix: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    alpha: Option<f64>,
    /// Extra feature set, `NAME:feat,feat,...`; repeatable.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    /// Some inputs failed; outputs were still written.
    Partial(String),
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Schema(_)
            | Error::Label { .. }
            | Error::Duplicate { .. }
            | Error::Subset(_)
            | Error::Csv(_)
            | Error::Json(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => with_jobs(a.jobs, || cmd_synth(&a)),
        Command::Extract(a) => with_jobs(a.jobs, || cmd_extract(&a)),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Classify(a) => with_jobs(a.jobs, || cmd_classify(&a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn with_jobs(jobs: Option<usize>, f: impl FnOnce() -> Outcome + Send) -> Outcome {
    match jobs {
        None => f(),
        Some(0) => Err(Failure::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Runtime(e.to_string()))?
            .install(f),
    }
}

fn load_config(path: Option<&Path>) -> Result<AnalysisConfig, Failure> {
    let cfg = match path {
        None => AnalysisConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    write_atomic(dir.join(name), text.as_bytes()).map_err(Failure::from)
}

fn write_config(dir: &Path, cfg: &AnalysisConfig) -> Result<(), Failure> {
    let text = toml::to_string(cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(dir, "config.toml", &text)
}

fn cmd_synth(a: &SynthArgs) -> Outcome {
    let presets: Vec<PerformancePreset> = match &a.spec {
        None => archetypes(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
    };
    prepare_out(&a.out)?;
    let truth = synth_corpus(&presets, a.performers, a.notes, a.seed, &a.out)?;
    println!(
        "wrote {} recordings; manifest {}; truth table {}",
        truth.recordings.len(),
        a.out.join("manifest.csv").display(),
        a.out.join("truth.json").display()
    );
    Ok(())
}

fn cmd_extract(a: &ExtractArgs) -> Outcome {
    let cfg = load_config(a.common.config.as_deref())?;
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Failure::Config(format!("{}: no recordings", a.manifest.display())));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let n = records.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let extraction = extract_recordings(&records, base, &cfg, |_, path, r| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        match r {
            Ok(()) => eprintln!("[{k}/{n}] {}", path.display()),
            Err(e) => eprintln!("[{k}/{n}] {}: {} ({})", path.display(), e.kind(), e),
        }
    });
    prepare_out(&a.common.out)?;
    let mut summary = String::new();
    if !extraction.rows.is_empty() {
        let matrix = expressive::dataset::assemble_matrix(&extraction.rows)?;
        write(&a.common.out, "features.csv", &matrix_to_csv(&matrix)?)?;
        summary.push_str(&format!("rows: {}\nfeatures: {}\n", matrix.n_rows(), matrix.n_features()));
    } else {
        summary.push_str("rows: 0\n");
    }
    summary.push_str(&format!("failures: {}\n", extraction.failures.len()));
    for (path, e) in &extraction.failures {
        summary.push_str(&format!("  {}: {}: {}\n", path.display(), e.kind(), e));
    }
    write(&a.common.out, "summary.txt", &summary)?;
    write_config(&a.common.out, &cfg)?;
    print!("{summary}");
    if extraction.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!("{} of {n} recordings failed", extraction.failures.len())))
    }
}

fn analysis_config(common: &Common, alpha: Option<f64>) -> Result<AnalysisConfig, Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(alpha) = alpha {
        cfg.alpha = alpha;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Outcome {
    let cfg = analysis_config(&a.common, a.alpha)?;
    let matrix = read_matrix_csv(&a.matrix)?;
    let analysis = analyze(&matrix, &cfg)?;
    let out = &a.common.out;
    prepare_out(out)?;
    write(out, "anova.csv", &anova_to_csv(&analysis.anova, &analysis.kept))?;
    write(out, "separation.csv", &separation_to_csv(&analysis.separation))?;
    write(out, "pc_anova.csv", &anova_to_csv(&analysis.pc_anova, &[]))?;
    write(out, "pca.json", &serde_json::to_string_pretty(&analysis.pca).map_err(Error::from)?)?;
    write(out, "normalization.json", &normalized_to_json(&analysis.normalized)?)?;
    let summary = analysis_summary(&analysis, &cfg);
    write(out, "summary.txt", &summary)?;
    write_config(out, &cfg)?;
    print!("{summary}");
    Ok(())
}

fn cmd_classify(a: &ClassifyArgs) -> Outcome {
    let cfg = analysis_config(&a.common, a.alpha)?;
    let mut extra = Vec::new();
    for text in &a.sets {
        let (spec, warnings) = parse_custom_set(text)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        extra.push(spec);
    }
    let matrix = read_matrix_csv(&a.matrix)?;
    let analysis = analyze(&matrix, &cfg)?;
    let table = compare(&analysis, &cfg, &extra)?;
    let out = &a.common.out;
    prepare_out(out)?;
    write(out, "comparison.csv", &comparison_to_csv(&table))?;
    write(out, "comparison.json", &serde_json::to_string_pretty(&table).map_err(Error::from)?)?;
    let summary = comparison_summary(&table);
    write(out, "summary.txt", &summary)?;
    write_config(out, &cfg)?;
    print!("{summary}");
    Ok(())
}
