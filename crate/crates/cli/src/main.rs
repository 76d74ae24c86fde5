mod config;

use std::fs::{self, File};
use std::io::{BufReader, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use visor_core::corpus::{generate_corpus, read_corpus, write_corpus, CorpusConfig, Prompt, VariantKind};
use visor_core::detection::{parse_detections, ImageDetections, DEFAULT_THRESHOLD};
use visor_core::metrics::{consistency, delta_summary, parse_scores};
use visor_core::pipeline::{
    evaluate_run, read_evaluations, threshold_sweep, visor_score_records, write_evaluations, EvalOptions,
    EvaluationRun, DEFAULT_IMAGES_PER_PROMPT,
};
use visor_core::report::{
    consistency_table, correlation_table, delta_table, emit_benchmark_table, emit_supercategory_matrix, sweep_table,
    Format, ReportMetadata, RunReport,
};
use visor_core::stats::{correlate_with_cooccurrence, CooccurrenceTable};
use visor_core::vocab::Vocabulary;

use config::Config;

#[derive(Parser)]
#[command(name = "visor", version, about = "Spatial-relation prompt corpus and VISOR evaluation")]
struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a prompt corpus.
    Gen(GenArgs),
    /// Score detections against a corpus and write evaluations plus a report.
    Evaluate(EvaluateArgs),
    /// Consistency between equivalent phrasings, from an evaluation file.
    Consistency(ConsistencyArgs),
    /// Mean score difference between original and relation-flipped prompts.
    DeltaS(DeltaArgs),
    /// Correlate per-pair OA and conditional VISOR with co-occurrence.
    Correlate(CorrelateArgs),
    /// Rebuild the benchmark table from an evaluation file.
    Report(ReportArgs),
    /// Re-evaluate at several confidence thresholds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// csv, json or markdown.
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct GenArgs {
    /// `coco80`, `attr11` or a `name,supercategory` file.
    #[arg(long)]
    categories: Option<String>,
    /// Prompt variants, comma separated or repeated.
    #[arg(long, value_delimiter = ',', default_value = "phrase")]
    variant: Vec<String>,
    /// Number of attributed prompts to sample.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunInputs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    categories: Option<String>,
    #[arg(long)]
    images_per_prompt: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: RunInputs,
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Format of the benchmark and consistency tables.
    #[arg(long)]
    format: Option<Format>,
    /// Defaults to the detection file name.
    #[arg(long)]
    detector_id: Option<String>,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    evaluations: PathBuf,
    #[arg(long)]
    categories: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DeltaArgs {
    /// Score file with `score` and `score_flipped` per image.
    #[arg(long, conflicts_with_all = ["corpus", "detections"])]
    scores: Option<PathBuf>,
    /// With --detections, use VISOR itself as the score.
    #[arg(long, requires = "detections")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    detections: Option<PathBuf>,
    #[arg(long)]
    categories: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    evaluations: PathBuf,
    /// COCO instances `.json`, image listing `.jsonl`, or pair-count `.csv`.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    categories: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    evaluations: PathBuf,
    #[arg(long)]
    categories: Option<String>,
    /// Threshold the evaluation file was produced with.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    detector_id: Option<String>,
    /// Write the supercategory matrix here as well.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: RunInputs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4])]
    thresholds: Vec<f64>,
    #[command(flatten)]
    common: Common,
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file not found: {}", path.display());
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn vocabulary(cfg: &Config, flag: Option<String>) -> Result<Vocabulary> {
    let name: String = cfg.resolve(flag, "categories", "coco80".to_string())?;
    if let Some(v) = Vocabulary::preset(&name) {
        return Ok(v);
    }
    let path = Path::new(&name);
    require_file(path).with_context(|| format!("`{name}` is neither a category preset nor a file"))?;
    Vocabulary::read(open(path)?).with_context(|| format!("reading categories {}", path.display()))
}

fn load_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<Prompt>> {
    read_corpus(open(path)?, vocab).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_detections(path: &Path, n: Option<usize>) -> Result<Vec<ImageDetections>> {
    parse_detections(open(path)?, n).with_context(|| format!("reading detections {}", path.display()))
}

fn load_evaluations(path: &Path, vocab: &Vocabulary) -> Result<EvaluationRun> {
    read_evaluations(open(path)?, vocab).with_context(|| format!("reading evaluations {}", path.display()))
}

fn emit(out: Option<&Path>, bytes: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(bytes.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "jsonl",
        Format::Markdown => "md",
    }
}

fn warn_all(lines: impl IntoIterator<Item = String>) {
    for l in lines {
        eprintln!("warning: {l}");
    }
}

fn options(cfg: &Config, threshold: Option<f64>, n: Option<usize>) -> Result<EvalOptions> {
    let options = EvalOptions {
        threshold: cfg.resolve(threshold, "threshold", DEFAULT_THRESHOLD)?,
        images_per_prompt: cfg.resolve(n, "images_per_prompt", DEFAULT_IMAGES_PER_PROMPT)?,
    };
    options.validate()?;
    Ok(options)
}

fn cmd_gen(cfg: &Config, args: GenArgs) -> Result<()> {
    let vocab = vocabulary(cfg, args.categories)?;
    let variants = args
        .variant
        .iter()
        .map(|v| v.parse::<VariantKind>())
        .collect::<Result<Vec<_>, _>>()
        .context("--variant")?;
    let defaults = CorpusConfig::default();
    let config = CorpusConfig {
        variants,
        attribute_samples: cfg.resolve(args.samples, "samples", defaults.attribute_samples)?,
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
        ..defaults
    };
    let prompts = generate_corpus(&vocab, &config)?;
    let mut buf = Vec::new();
    let count = write_corpus(&mut buf, &prompts)?;
    emit(args.out.as_deref(), &String::from_utf8(buf)?)?;
    match &args.out {
        Some(p) => println!("{count} prompts written to {}", p.display()),
        None => eprintln!("{count} prompts"),
    }
    Ok(())
}

fn cmd_evaluate(cfg: &Config, args: EvaluateArgs) -> Result<()> {
    let inputs = &args.inputs;
    require_file(&inputs.corpus)?;
    require_file(&inputs.detections)?;
    let options = options(cfg, args.threshold, inputs.images_per_prompt)?;
    let format = cfg.resolve(args.format, "format", Format::Csv)?;
    let vocab = vocabulary(cfg, inputs.categories.clone())?;

    let prompts = load_corpus(&inputs.corpus, &vocab)?;
    let records = load_detections(&inputs.detections, Some(options.images_per_prompt))?;
    let run = evaluate_run(&prompts, &records, &options)?;
    warn_all(run.coverage.warnings());

    let mut evaluations = Vec::new();
    write_evaluations(&mut evaluations, &run, &prompts)?;
    let metadata = ReportMetadata {
        corpus_id: stem(&inputs.corpus),
        detector_id: cfg.resolve(args.detector_id, "detector_id", stem(&inputs.detections))?,
        threshold: options.threshold,
        images_per_prompt: options.images_per_prompt,
    };
    let report = RunReport::build(&run, &vocab, metadata)?;

    let dir = &args.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let ext = extension(format);
    emit(Some(&dir.join("evaluations.jsonl")), &String::from_utf8(evaluations)?)?;
    emit(Some(&dir.join("report.json")), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    emit(Some(&dir.join(format!("benchmark.{ext}"))), &emit_benchmark_table(&report, format)?)?;
    emit(Some(&dir.join("supercategory_matrix.csv")), &emit_supercategory_matrix(&report)?)?;
    if let Some(c) = &report.consistency {
        emit(Some(&dir.join(format!("consistency.{ext}"))), &consistency_table(c).render(format)?)?;
    }
    let s = &report.overall;
    println!(
        "{} prompts, {} images: OA {:.2}, VISOR {:.2}",
        s.prompts, s.images, s.oa_pct, s.visor_uncond_pct
    );
    Ok(())
}

fn cmd_consistency(cfg: &Config, args: ConsistencyArgs) -> Result<()> {
    require_file(&args.evaluations)?;
    let format = cfg.resolve(args.common.format, "format", Format::Csv)?;
    let vocab = vocabulary(cfg, args.categories)?;
    let run = load_evaluations(&args.evaluations, &vocab)?;
    let table = consistency(&run.groups)?;
    emit(args.common.out.as_deref(), &consistency_table(&table).render(format)?)
}

fn cmd_delta(cfg: &Config, args: DeltaArgs) -> Result<()> {
    let format = cfg.resolve(args.common.format, "format", Format::Csv)?;
    let scores = match (&args.scores, &args.corpus, &args.detections) {
        (Some(path), _, _) => {
            require_file(path)?;
            parse_scores(open(path)?).with_context(|| format!("reading scores {}", path.display()))?
        }
        (None, Some(corpus), Some(detections)) => {
            require_file(corpus)?;
            require_file(detections)?;
            let options = options(cfg, args.threshold, None)?;
            let vocab = vocabulary(cfg, args.categories)?;
            let prompts = load_corpus(corpus, &vocab)?;
            let records = load_detections(detections, None)?;
            visor_score_records(&prompts, &records, options.threshold)?
        }
        _ => bail!("give either --scores or both --corpus and --detections"),
    };
    emit(args.common.out.as_deref(), &delta_table(&delta_summary(&scores)?).render(format)?)
}

fn read_cooccurrence(path: &Path) -> Result<CooccurrenceTable> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let table = match ext.as_str() {
        "csv" => CooccurrenceTable::read_pair_table(open(path)?),
        "jsonl" => CooccurrenceTable::read_listing(open(path)?),
        "json" => CooccurrenceTable::read_coco_instances(open(path)?),
        _ => bail!("{}: expected a .json, .jsonl or .csv annotation file", path.display()),
    };
    table.with_context(|| format!("reading annotations {}", path.display()))
}

fn cmd_correlate(cfg: &Config, args: CorrelateArgs) -> Result<()> {
    require_file(&args.evaluations)?;
    require_file(&args.annotations)?;
    let format = cfg.resolve(args.common.format, "format", Format::Csv)?;
    let vocab = vocabulary(cfg, args.categories)?;
    let run = load_evaluations(&args.evaluations, &vocab)?;
    let table = read_cooccurrence(&args.annotations)?;
    let corr = correlate_with_cooccurrence(&run.groups, &table)?;
    emit(args.common.out.as_deref(), &correlation_table(&corr).render(format)?)?;
    let show = |r: Option<f64>| r.map_or("undefined".to_string(), |r| format!("{r:.4}"));
    eprintln!(
        "Pearson r over {} pairs: OA {}, VISOR_cond {}",
        corr.points.len(),
        show(corr.pearson_oa),
        show(corr.pearson_visor_cond)
    );
    Ok(())
}

fn cmd_report(cfg: &Config, args: ReportArgs) -> Result<()> {
    require_file(&args.evaluations)?;
    let format = cfg.resolve(args.common.format, "format", Format::Csv)?;
    let vocab = vocabulary(cfg, args.categories)?;
    let run = load_evaluations(&args.evaluations, &vocab)?;
    let Some(first) = run.groups.first() else {
        bail!("{}: no relational prompts", args.evaluations.display());
    };
    let metadata = ReportMetadata {
        corpus_id: stem(&args.evaluations),
        detector_id: cfg.resolve(args.detector_id, "detector_id", "unknown".to_string())?,
        threshold: cfg.resolve(args.threshold, "threshold", DEFAULT_THRESHOLD)?,
        images_per_prompt: first.images(),
    };
    let report = RunReport::build(&run, &vocab, metadata)?;
    warn_all(report.notes.iter().cloned());
    emit(args.common.out.as_deref(), &emit_benchmark_table(&report, format)?)?;
    if let Some(path) = &args.matrix {
        emit(Some(path), &emit_supercategory_matrix(&report)?)?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &Config, args: SweepArgs) -> Result<()> {
    let inputs = &args.inputs;
    require_file(&inputs.corpus)?;
    require_file(&inputs.detections)?;
    let n = cfg.resolve(inputs.images_per_prompt, "images_per_prompt", DEFAULT_IMAGES_PER_PROMPT)?;
    let format = cfg.resolve(args.common.format, "format", Format::Csv)?;
    let vocab = vocabulary(cfg, inputs.categories.clone())?;
    let prompts = load_corpus(&inputs.corpus, &vocab)?;
    let records = load_detections(&inputs.detections, Some(n))?;
    let points = threshold_sweep(&prompts, &records, &args.thresholds, n)?;
    emit(args.common.out.as_deref(), &sweep_table(&points).render(format)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => cmd_gen(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Consistency(a) => cmd_consistency(&cfg, a),
        Command::DeltaS(a) => cmd_delta(&cfg, a),
        Command::Correlate(a) => cmd_correlate(&cfg, a),
        Command::Report(a) => cmd_report(&cfg, a),
        Command::Sweep(a) => cmd_sweep(&cfg, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
