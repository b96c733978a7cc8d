use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use memo::bench::{self, BatchSize, Exp1Config, Exp2Config};
use memo::corpus::Vocabulary;
use memo::embeddings::{jll_min_dimension, nov_check, EmbeddingTable};
use memo::memo::{MemoModel, MemoParams};
use memo::persist::{load_any, save_model, AnyModel};
use memo::{MemoError, Real, Result};

#[derive(Parser)]
#[command(name = "memo", version, about = "Build, query and benchmark memorizing language models")]
struct Cli {
    /// Seed for every random table and generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Element type of new models and experiments.
    #[arg(long, global = true, value_enum, default_value_t = DtypeArg::F64)]
    dtype: DtypeArg,

    /// Append results as CSV rows to this file (header written when new).
    #[arg(long, global = true)]
    csv: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Memorize a whitespace-tokenized corpus into a new model file.
    Build(BuildArgs),
    /// Continue a prompt greedily with a stored model.
    Complete(CompleteArgs),
    /// Remove a text's next-token associations from a model file.
    Forget(ForgetArgs),
    /// Capacity of a single memory against its parameter count.
    Exp1(Exp1Args),
    /// Recall of stored windows on decoy texts, by depth.
    Exp2(Exp2Args),
    /// Smallest dimension hosting m points at distortion epsilon.
    JllBound(JllArgs),
    /// Measure near-orthogonality of a random token table.
    OrthoCheck(OrthoArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 1024)]
    dim: usize,
    /// Tokens between consecutive windows (default: h).
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 1)]
    tokens: usize,
}

#[derive(Args)]
struct ForgetArgs {
    #[arg(long)]
    model: PathBuf,
    /// Text to forget, read like a build corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Must match the stride the text was built with (default: h).
    #[arg(long)]
    stride: Option<usize>,
    /// Where to write the edited model (default: overwrite --model).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Exp1Args {
    #[arg(long, value_delimiter = ',', default_values_t = [2, 8, 32])]
    h: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 64, 256])]
    d_h: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [512])]
    dim: Vec<usize>,
    /// Pairs per batch.
    #[arg(long, default_value_t = 1000, conflicts_with = "batch_per_nop")]
    batch: usize,
    /// Use NoP/K pairs per batch instead of a fixed size.
    #[arg(long)]
    batch_per_nop: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, default_value_t = 50)]
    max_batches: usize,
    #[arg(long, default_value_t = 100_000)]
    vocab: usize,
    /// Pairs per batch used to estimate accuracy (default: whole batch).
    #[arg(long)]
    eval_sample: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    memory_budget_mib: usize,
}

#[derive(Args)]
struct Exp2Args {
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [2048])]
    dim: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 20, 40])]
    decoys: Vec<usize>,
    #[arg(long, default_value_t = 20_000)]
    windows: usize,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long, default_value_t = 200)]
    eval_sample: usize,
    #[arg(long, default_value_t = 100_000)]
    vocab: usize,
    /// Expected share of word slots taken by each decoy.
    #[arg(long, default_value_t = 0.005)]
    decoy_rate: f64,
    #[arg(long, default_value_t = 4096)]
    memory_budget_mib: usize,
}

#[derive(Args)]
struct JllArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    m: u64,
}

#[derive(Args)]
struct OrthoArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 100_000)]
    pairs: u64,
}

fn append_csv(path: &Path, header: &str, body: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if f.metadata()?.len() == 0 {
        writeln!(f, "{header}")?;
    }
    f.write_all(body.as_bytes())?;
    Ok(())
}

/// Writes `csv` (header line first) to stdout and, when asked, appends its
/// rows to the CSV file.
fn emit_csv(cli: &Cli, csv: &str) -> Result<()> {
    print!("{csv}");
    if let Some(path) = &cli.csv {
        let (header, body) = csv.split_once('\n').unwrap_or((csv, ""));
        append_csv(path, header, body)?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn build<F: Real>(cli: &Cli, a: &BuildArgs) -> Result<()> {
    let text = read_text(&a.corpus)?;
    let vocab = Vocabulary::from_text(&text)?;
    let tokens = vocab.tokenize(&text)?;
    let params = MemoParams { h: a.h, l: a.layers, d: a.dim, seed: cli.seed };
    let mut model = MemoModel::<F>::new(vocab, params)?;
    let windows = model.ingest_text(&tokens, a.stride.unwrap_or(a.h))?;
    save_model(&model, &a.out)?;
    println!(
        "stored {windows} windows of {} tokens from {} tokens ({} distinct) in {}",
        model.window() + 1,
        tokens.len(),
        model.vocab().len() - 1,
        a.out.display()
    );
    Ok(())
}

fn complete<F: Real>(model: &MemoModel<F>, a: &CompleteArgs) -> Result<()> {
    let prompt = model.vocab().tokenize(&a.prompt)?;
    let out = model.generate(&prompt, a.tokens)?;
    println!("{}", model.vocab().detokenize(&out)?);
    Ok(())
}

fn forget<F: Real>(mut model: MemoModel<F>, a: &ForgetArgs) -> Result<()> {
    let text = read_text(&a.corpus)?;
    let tokens = model.vocab().tokenize(&text)?;
    let windows = model.forget_text(&tokens, a.stride.unwrap_or(model.h()))?;
    let out = a.out.as_ref().unwrap_or(&a.model);
    save_model(&model, out)?;
    println!("forgot {windows} windows; wrote {}", out.display());
    Ok(())
}

fn exp1<F: Real>(cli: &Cli, a: &Exp1Args) -> Result<()> {
    let cfg = Exp1Config {
        h: a.h.clone(),
        d_h: a.d_h.clone(),
        d: a.dim.clone(),
        batch: a.batch_per_nop.map_or(BatchSize::Fixed(a.batch), BatchSize::PerParameters),
        threshold: a.threshold,
        max_batches: a.max_batches,
        vocab_size: a.vocab,
        eval_sample: a.eval_sample,
        memory_budget: a.memory_budget_mib << 20,
        threads: bench::threads_from_env(),
        seed: cli.seed,
    };
    let report = bench::run_exp1::<F>(&cfg)?;
    emit_csv(cli, &report.to_csv())?;
    if let Ok(fit) = report.fit() {
        eprintln!("capacity ~ {:.5} * NoP + {:.1}  (R^2 = {:.4})", fit.slope, fit.intercept, fit.r2);
    }
    for r in report.rows.iter().filter(|r| r.censored) {
        eprintln!("h={} d_h={} d={}: never dropped below threshold; capacity is a lower bound", r.h, r.d_h, r.d);
    }
    Ok(())
}

fn exp2<F: Real>(cli: &Cli, a: &Exp2Args) -> Result<()> {
    let cfg = Exp2Config {
        h: a.h,
        layers: a.layers.clone(),
        d: a.dim.clone(),
        decoys: a.decoys.clone(),
        windows: a.windows,
        eval_every: a.eval_every,
        eval_sample: a.eval_sample,
        vocab_size: a.vocab,
        occurrence_rate: a.decoy_rate,
        memory_budget: a.memory_budget_mib << 20,
        threads: bench::threads_from_env(),
        seed: cli.seed,
    };
    let report = bench::run_exp2::<F>(&cfg)?;
    emit_csv(cli, &report.to_csv())
}

fn ortho_check<F: Real>(cli: &Cli, a: &OrthoArgs) -> Result<()> {
    let table = EmbeddingTable::<F>::build(a.n, a.d, cli.seed)?;
    let r = nov_check(&table, a.epsilon, a.pairs, cli.seed)?;
    println!(
        "n={} d={} epsilon={} pairs={} violation_fraction={:.6} theta_bound={:e}",
        a.n, a.d, a.epsilon, r.pairs_tested, r.violation_fraction, r.theta_bound
    );
    if let Some(path) = &cli.csv {
        append_csv(
            path,
            "n,d,epsilon,pairs,violation_fraction,theta_bound",
            &format!(
                "{},{},{},{},{},{:e}\n",
                a.n, a.d, a.epsilon, r.pairs_tested, r.violation_fraction, r.theta_bound
            ),
        )?;
    }
    Ok(())
}

macro_rules! with_dtype {
    ($cli:expr, $f:ident ( $($arg:expr),* )) => {
        match $cli.dtype {
            DtypeArg::F32 => $f::<f32>($($arg),*),
            DtypeArg::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::Build(a) => with_dtype!(cli, build(cli, a)),
        Command::Complete(a) => match load_any(&a.model)? {
            AnyModel::F32(m) => complete(&m, a),
            AnyModel::F64(m) => complete(&m, a),
        },
        Command::Forget(a) => match load_any(&a.model)? {
            AnyModel::F32(m) => forget(m, a),
            AnyModel::F64(m) => forget(m, a),
        },
        Command::Exp1(a) => with_dtype!(cli, exp1(cli, a)),
        Command::Exp2(a) => with_dtype!(cli, exp2(cli, a)),
        Command::JllBound(a) => {
            let d = jll_min_dimension(a.epsilon, a.m)?;
            println!("{d}");
            if let Some(path) = &cli.csv {
                append_csv(path, "epsilon,m,dimension", &format!("{},{},{d}\n", a.epsilon, a.m))?;
            }
            Ok(())
        }
        Command::OrthoCheck(a) => with_dtype!(cli, ortho_check(cli, a)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memo: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &MemoError) -> u8 {
    if e.is_input_error() {
        1
    } else {
        2
    }
}
