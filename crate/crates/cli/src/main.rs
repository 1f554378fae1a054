//! Command-line interface to the dnahnet model and pipelines: training,
//! perplexity evaluation, generation, variant-effect and essentiality
//! scoring, boundary statistics, FLOP sweeps and scaling fits.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
//! Diagnostics go to stderr; data goes to files or stdout only. Every run
//! writes a manifest alongside its primary output.

mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dnahnet::autodiff::TensorError;
use dnahnet::eval::{write_atomically, EvalError};
use dnahnet::flops::FlopsError;
use dnahnet::hnet::{load_model, load_model_config, HNetModel, ModelError};
use dnahnet::seqdata::{AmbiguityPolicy, SeqError};
use dnahnet::train::{
    fit, load_corpus, load_run_config, load_train_checkpoint, TrainError,
};
use dnahnet::Scalar;

use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(name = "dnahnet", version, about = "Hierarchical dynamic-chunking DNA language model")]
struct Cli {
    /// Worker threads for evaluation pipelines.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Floating-point precision for model math.
    #[arg(long, global = true, value_parser = ["f32", "f64"], default_value = "f64")]
    precision: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Evaluate held-out perplexity on a FASTA file.
    Eval(EvalArgs),
    /// Sample nucleotides from a trained model.
    Generate(GenerateArgs),
    /// Score variants by log-likelihood difference against a reference.
    Vep(VepArgs),
    /// Score gene essentiality via in-silico stop-cassette knockouts.
    Essentiality(EssArgs),
    /// Boundary selection statistics over annotated genomes.
    Boundaries(BoundArgs),
    /// Analytic FLOP estimates over a sweep of sequence lengths.
    Flops(FlopsArgs),
    /// Fit a power law to (compute, perplexity) points.
    FitScaling(FitArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run config file with [model], [train] and [data] sections.
    #[arg(long)]
    config: PathBuf,
    /// Resume from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.
    #[arg(long, default_value = "runs/train")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    fasta: PathBuf,
    /// Window length; defaults to the model context.
    #[arg(long)]
    window: Option<usize>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of nucleotides to generate after the prompt.
    #[arg(long)]
    length: usize,
    /// Prompt nucleotides (ACGT).
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output FASTA (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Reference sequences; variant gene_ids must name records here.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    variants: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EssArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    genome: PathBuf,
    /// Gene table (annotations TSV); every row is scored.
    #[arg(long)]
    genes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Window length; defaults to the model context.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    genome: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Stats CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-position boundary dump CSV.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Window length; defaults to the model context.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct FlopsArgs {
    /// Config file with a [model] section.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated ascending sequence lengths.
    #[arg(long)]
    lengths: String,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV of compute,perplexity points.
    #[arg(long)]
    points: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error carrying its exit code and originating subsystem.
struct CliError {
    code: i32,
    module: &'static str,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, module: "cli", message: message.into() }
    }

    fn data(module: &'static str, message: impl Into<String>) -> Self {
        CliError { code: 2, module, message: message.into() }
    }
}

impl From<SeqError> for CliError {
    fn from(e: SeqError) -> Self {
        CliError::data("seqdata", e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError { code: 3, module: "autodiff", message: e.to_string() }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => CliError { code: 3, module: "hnet", message: t.to_string() },
            other => CliError::data("hnet", other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Step { .. } => CliError { code: 3, module: "train", message: e.to_string() },
            TrainError::Model(ModelError::Tensor(_)) => {
                CliError { code: 3, module: "train", message: e.to_string() }
            }
            _ => CliError::data("train", e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Model(ModelError::Tensor(_)) => {
                CliError { code: 3, module: "eval", message: e.to_string() }
            }
            _ => CliError::data("eval", e.to_string()),
        }
    }
}

impl From<FlopsError> for CliError {
    fn from(e: FlopsError) -> Self {
        CliError::data("flops", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data("cli", e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            if is_help {
                std::process::exit(0);
            }
            eprintln!("ERROR 1 cli: invalid usage");
            std::process::exit(1);
        }
    };
    let result = match cli.precision.as_str() {
        "f32" => run::<f32>(&cli),
        _ => run::<f64>(&cli),
    };
    if let Err(e) = result {
        eprintln!("ERROR {} {}: {}", e.code, e.module, e.message);
        std::process::exit(e.code);
    }
}

fn run<T: Scalar>(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => cmd_train::<T>(cli, args),
        Command::Eval(args) => cmd_eval::<T>(cli, args),
        Command::Generate(args) => cmd_generate::<T>(cli, args),
        Command::Vep(args) => cmd_vep::<T>(cli, args),
        Command::Essentiality(args) => cmd_essentiality::<T>(cli, args),
        Command::Boundaries(args) => cmd_boundaries::<T>(cli, args),
        Command::Flops(args) => cmd_flops(cli, args),
        Command::FitScaling(args) => cmd_fit_scaling(cli, args),
    }
}

fn load_model_checked<T: Scalar>(path: &Path) -> Result<HNetModel<T>, CliError> {
    let (model, _) = load_model::<T>(path)?;
    Ok(model)
}

/// Emit either to a file (atomically) or stdout.
fn emit(out: &Option<PathBuf>, body: String) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_atomically(path, |w| std::io::Write::write_all(w, body.as_bytes()))?;
            Ok(())
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_train<T: Scalar>(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let run_config = load_run_config(&args.config)?;
    let mut manifest = ManifestBuilder::new("train", cli, run_config.train.seed);
    manifest.input(&args.config)?;
    if let Some(r) = &args.resume {
        manifest.input(r)?;
    }
    manifest.config(serde_json::to_value(&run_config).unwrap_or_default());

    let corpus = load_corpus(&run_config.data, run_config.model.context)?;
    let outcome = if let Some(resume) = &args.resume {
        let (mut model, opt, step) = load_train_checkpoint::<T>(resume)?;
        if model.config != run_config.model {
            return Err(CliError::data(
                "train",
                "checkpoint model config differs from the run config",
            ));
        }
        fit(&mut model, &corpus, &run_config.train, &args.out_dir, Some((opt, step)))?
    } else {
        let mut model = dnahnet::hnet::build_model::<T>(&run_config.model, run_config.train.seed)?;
        fit(&mut model, &corpus, &run_config.train, &args.out_dir, None)?
    };

    eprintln!(
        "trained {} step(s); final checkpoint {}; {} warning(s)",
        outcome.steps_run,
        outcome.final_checkpoint.display(),
        outcome.warning_count
    );
    manifest.output(&outcome.final_checkpoint);
    manifest.output(&outcome.metrics_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(())
}

fn cmd_eval<T: Scalar>(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let model = load_model_checked::<T>(&args.model)?;
    let mut manifest = ManifestBuilder::new("eval", cli, 0);
    manifest.input(&args.model)?;
    manifest.input(&args.fasta)?;
    let seqs = dnahnet::seqdata::read_fasta(&args.fasta, AmbiguityPolicy::Reject)?;
    let window = args.window.unwrap_or(model.config.context).min(model.config.context);
    let mut windows = Vec::new();
    for s in &seqs {
        windows.extend(dnahnet::seqdata::window_genome(s, window));
    }
    let tokens: usize = windows.iter().map(|w| w.len().saturating_sub(1)).sum();
    let ppl = dnahnet::eval::eval_perplexity_parallel(&model, &windows, cli.threads)?;
    let body = format!(
        "windows,tokens,nll,perplexity\n{},{},{},{}\n",
        windows.len(),
        tokens,
        dnahnet::fmt_sig(ppl.ln()),
        dnahnet::fmt_sig(ppl)
    );
    emit(&args.out, body)?;
    if let Some(out) = &args.out {
        manifest.output(out);
    }
    manifest.write_default(&args.out, "eval")?;
    Ok(())
}

fn cmd_generate<T: Scalar>(cli: &Cli, args: &GenerateArgs) -> Result<(), CliError> {
    if args.temperature < 0.0 {
        return Err(CliError::usage("temperature must be non-negative"));
    }
    let model = load_model_checked::<T>(&args.model)?;
    let mut manifest = ManifestBuilder::new("generate", cli, args.seed);
    manifest.input(&args.model)?;
    let prompt_codes = if args.prompt.is_empty() {
        Vec::new()
    } else {
        dnahnet::seqdata::encode_sequence("prompt", &args.prompt, AmbiguityPolicy::Reject)?.codes
    };
    let seq = model.generate_sequence(&prompt_codes, args.length, args.temperature, args.seed)?;
    let body = format!(">{}\n{}\n", seq.id, seq.decode());
    emit(&args.out, body)?;
    if let Some(out) = &args.out {
        manifest.output(out);
    }
    manifest.write_default(&args.out, "generate")?;
    Ok(())
}

fn cmd_vep<T: Scalar>(cli: &Cli, args: &VepArgs) -> Result<(), CliError> {
    let model = load_model_checked::<T>(&args.model)?;
    let mut manifest = ManifestBuilder::new("vep", cli, 0);
    manifest.input(&args.model)?;
    manifest.input(&args.reference)?;
    manifest.input(&args.variants)?;

    let references = dnahnet::seqdata::read_fasta(&args.reference, AmbiguityPolicy::Reject)?;
    let variants = dnahnet::seqdata::read_variants(&args.variants)?;

    // Score per referenced gene so each reference likelihood is computed
    // once; unknown gene ids are skipped and counted.
    let mut gene_order: Vec<&str> = Vec::new();
    for v in &variants {
        if !gene_order.contains(&v.gene_id.as_str()) {
            gene_order.push(&v.gene_id);
        }
    }
    let mut all = dnahnet::eval::VepOutcome { scored: Vec::new(), skipped: Vec::new() };
    for gene in gene_order {
        let group: Vec<dnahnet::seqdata::VariantRecord> = variants
            .iter()
            .filter(|v| v.gene_id == gene)
            .cloned()
            .collect();
        match references.iter().find(|s| s.id == gene) {
            Some(reference) => {
                let outcome =
                    dnahnet::eval::vep_score_parallel(&model, reference, &group, cli.threads)?;
                all.scored.extend(outcome.scored);
                all.skipped.extend(outcome.skipped);
            }
            None => {
                for v in group {
                    all.skipped.push((v, format!("no reference sequence named {gene}")));
                }
            }
        }
    }

    write_atomically(&args.out, |w| dnahnet::eval::write_vep_csv(w, &all))?;
    for (v, reason) in &all.skipped {
        eprintln!("skipped {}:{} {}>{}: {}", v.gene_id, v.position, v.ref_base, v.alt_base, reason);
    }
    eprintln!("scored={} skipped={}", all.scored.len(), all.skipped.len());
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_essentiality<T: Scalar>(cli: &Cli, args: &EssArgs) -> Result<(), CliError> {
    let model = load_model_checked::<T>(&args.model)?;
    let mut manifest = ManifestBuilder::new("essentiality", cli, 0);
    manifest.input(&args.model)?;
    manifest.input(&args.genome)?;
    manifest.input(&args.genes)?;

    let genomes = dnahnet::seqdata::read_fasta(&args.genome, AmbiguityPolicy::Reject)?;
    let (genes, warnings) = dnahnet::seqdata::read_annotations(&args.genes)?;
    for w in &warnings {
        eprintln!("annotation warning: {w}");
    }
    let window = args.window.unwrap_or(model.config.context).min(model.config.context);

    let mut all = dnahnet::eval::EssentialityOutcome { scored: Vec::new(), skipped: Vec::new() };
    for genome in &genomes {
        let own: Vec<dnahnet::seqdata::GeneAnnotation> = genes
            .iter()
            .filter(|g| g.genome_id == genome.id)
            .cloned()
            .collect();
        if own.is_empty() {
            continue;
        }
        let outcome = dnahnet::eval::essentiality_scores_parallel(
            &model, genome, &own, window, cli.threads,
        )?;
        all.scored.extend(outcome.scored);
        all.skipped.extend(outcome.skipped);
    }
    for g in &genes {
        if !genomes.iter().any(|s| s.id == g.genome_id) {
            all.skipped
                .push((g.gene_id.clone(), format!("no genome sequence named {}", g.genome_id)));
        }
    }

    write_atomically(&args.out, |w| dnahnet::eval::write_essentiality_csv(w, &all))?;
    for (gene, reason) in &all.skipped {
        eprintln!("skipped {gene}: {reason}");
    }
    eprintln!("scored={} skipped={}", all.scored.len(), all.skipped.len());
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_boundaries<T: Scalar>(cli: &Cli, args: &BoundArgs) -> Result<(), CliError> {
    let model = load_model_checked::<T>(&args.model)?;
    let mut manifest = ManifestBuilder::new("boundaries", cli, 0);
    manifest.input(&args.model)?;
    manifest.input(&args.genome)?;
    manifest.input(&args.annotations)?;

    let genomes = dnahnet::seqdata::read_fasta(&args.genome, AmbiguityPolicy::Reject)?;
    let (annotations, warnings) = dnahnet::seqdata::read_annotations(&args.annotations)?;
    for w in &warnings {
        eprintln!("annotation warning: {w}");
    }
    let window = args.window.unwrap_or(model.config.context).min(model.config.context);
    let mut windows = Vec::new();
    for g in &genomes {
        windows.extend(dnahnet::seqdata::window_genome(g, window));
    }
    let (stats, rows) = dnahnet::eval::boundary_stats(&model, &windows, &annotations, cli.threads)?;
    for s in &stats {
        if s.uncovered > 0 {
            eprintln!("stage {}: {} position(s) without annotation", s.stage, s.uncovered);
        }
    }
    write_atomically(&args.out, |w| dnahnet::eval::write_stats_csv(w, &stats))?;
    if let Some(dump) = &args.dump {
        write_atomically(dump, |w| dnahnet::chunking::write_boundary_dump(w, &rows))?;
        manifest.output(dump);
    }
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

fn cmd_flops(cli: &Cli, args: &FlopsArgs) -> Result<(), CliError> {
    let config = load_model_config(&args.config)?;
    let mut manifest = ManifestBuilder::new("flops", cli, 0);
    manifest.input(&args.config)?;
    let lengths: Vec<u64> = args
        .lengths
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::usage(format!("bad length '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    let sweep = dnahnet::flops::flops_sweep(&config, &lengths)?;
    let mut buf = Vec::new();
    dnahnet::flops::write_sweep_csv(&mut buf, &sweep)?;
    emit(&args.out, String::from_utf8(buf).expect("CSV is UTF-8"))?;
    if let Some(out) = &args.out {
        manifest.output(out);
    }
    manifest.write_default(&args.out, "flops")?;
    Ok(())
}

fn cmd_fit_scaling(cli: &Cli, args: &FitArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("fit-scaling", cli, 0);
    manifest.input(&args.points)?;
    let text = std::fs::read_to_string(&args.points)?;
    let points = dnahnet::flops::parse_points_csv(&text)?;
    let fit = dnahnet::flops::fit_power_law(&points)?;
    let mut buf = Vec::new();
    dnahnet::flops::write_fit_csv(&mut buf, &fit)?;
    emit(&args.out, String::from_utf8(buf).expect("CSV is UTF-8"))?;
    if let Some(out) = &args.out {
        manifest.output(out);
    }
    manifest.write_default(&args.out, "fit-scaling")?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".manifest.json");
    PathBuf::from(os)
}
