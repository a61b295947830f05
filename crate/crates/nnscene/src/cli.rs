//! `nnscene` command line.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 1 for
//! runtime failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nnscene_core::bank::{build_bank, SamplerConfig};
use nnscene_core::decode::DecodeConfig;
use nnscene_core::index::{AnnIndex, IndexParams, KeySet, SearchParams};
use nnscene_core::synth::{generate_synthetic_scene_set, SceneConfig, SceneKind};

use crate::bench::{self, BenchConfig};
use crate::config::{params_bytes, run_pretrain, write_loss_csv, PretrainRun};
use crate::error::{Error, Result};
use crate::format::hbpr::PredictionFile;
use crate::format::{hbfs, hbmb, hbpr};
use crate::pipeline::{evaluate, predict_set, threads_from_env};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// k 30, temperature 0.02, memory 10,240,000, 2 augmentation epochs.
    Default,
    /// k 90, temperature 0.1, memory 20,480,000, 8 augmentation epochs.
    LowData,
}

struct PresetValues {
    memory_size: usize,
    k: usize,
    temperature: f64,
    aug_epochs: usize,
}

impl Preset {
    fn values(self) -> PresetValues {
        match self {
            Preset::Default => PresetValues {
                memory_size: 10_240_000,
                k: 30,
                temperature: 0.02,
                aug_epochs: 2,
            },
            Preset::LowData => PresetValues {
                memory_size: 20_480_000,
                k: 90,
                temperature: 0.1,
                aug_epochs: 8,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Segmentation,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexArg {
    None,
    Exact,
    Quantized,
}

#[derive(Debug, Parser)]
#[command(name = "nnscene", version, about = "Retrieval-based dense scene understanding on patch features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic HBFS feature set.
    Synth(SynthArgs),
    /// Sample a memory bank (and optionally an index) from an HBFS set.
    BuildBank(BuildBankArgs),
    /// Decode an HBFS set against a bank into an HBPR file.
    Decode(DecodeArgs),
    /// Decode an HBFS set and print mIoU or RMSE against its labels.
    Eval(EvalArgs),
    /// Lookup latency sweep over bank sizes.
    Bench(BenchArgs),
    /// Train the toy contextual pretraining model.
    PretrainToy(PretrainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "segmentation")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 8)]
    pub images: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Feature-grid height in patches.
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    /// Feature-grid width in patches.
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Augmentation epochs stored in the file.
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub first_image_id: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PresetArg {
    /// Named hyperparameter column; explicit flags override it.
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Partitions of the quantized index [default: round(√|M|/2), 512 from 2,621,440 keys]
    #[arg(long)]
    pub num_leaves: Option<usize>,
    /// Partitions searched per query [default: 32 per 512 leaves, rounded up]
    #[arg(long)]
    pub leaves_to_search: Option<usize>,
    /// Dimensions per quantization block.
    #[arg(long, default_value_t = 4)]
    pub dims_per_block: usize,
    /// Candidates rescored exactly.
    #[arg(long, default_value_t = 120)]
    pub reorder_n: usize,
    /// Rows used to train partitions and codebooks (0: all).
    #[arg(long, default_value_t = 0)]
    pub training_sample: usize,
}

impl IndexArgs {
    fn params(&self, len: usize, seed: u64) -> Result<IndexParams> {
        let mut p = IndexParams::scaled_for(len);
        if let Some(n) = self.num_leaves {
            p.num_leaves = n;
            if self.leaves_to_search.is_none() {
                p.leaves_to_search = p.leaves_to_search.min(n);
            }
        }
        if let Some(l) = self.leaves_to_search {
            p.leaves_to_search = l;
        }
        p.dims_per_block = self.dims_per_block;
        p.reorder_n = self.reorder_n;
        p.training_sample = self.training_sample;
        p.seed = seed;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct BuildBankArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub preset: PresetArg,
    /// Memory bank length |M| [default: 10240000; low-data: 20480000]
    #[arg(long)]
    pub memory_size: Option<usize>,
    /// Augmentation epochs taken from the feature set [default: 2; low-data: 8]
    #[arg(long)]
    pub aug_epochs: Option<usize>,
    /// Store every patch instead of a per-image sample.
    #[arg(long)]
    pub no_downsample: bool,
    /// Index written after the bank.
    #[arg(long, value_enum, default_value = "quantized")]
    pub index: IndexArg,
    #[command(flatten)]
    pub index_args: IndexArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DecodeFlags {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub preset: PresetArg,
    /// Nearest neighbors attended per patch [default: 30; low-data: 90]
    #[arg(long)]
    pub k: Option<usize>,
    /// Softmax temperature [default: 0.02; low-data: 0.1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Override the stored leaves searched per query.
    #[arg(long)]
    pub leaves_to_search: Option<usize>,
    /// Override the stored reorder count.
    #[arg(long)]
    pub reorder_n: Option<usize>,
    /// Search the bank exactly even if it carries a quantized index.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub flags: DecodeFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Also store per-pixel class distributions.
    #[arg(long)]
    pub distributions: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub flags: DecodeFlags,
    /// Also write the predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated ascending bank sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [10_000usize, 100_000, 1_000_000, 4_000_000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Query grid side in patches (side² queries per image).
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    #[arg(long, default_value_t = 0.02)]
    pub temperature: f64,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 65_536)]
    pub training_sample: usize,
    #[arg(long)]
    pub no_exact: bool,
    #[arg(long)]
    pub no_quantized: bool,
    /// Largest estimated footprint of one bank, in MiB.
    #[arg(long, default_value_t = 4096)]
    pub memory_budget_mib: usize,
    #[arg(long)]
    pub csv: PathBuf,
    /// SVG plot path.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss log CSV (step,total,ssl,sup).
    #[arg(long)]
    pub log: PathBuf,
    /// Final online parameters as little-endian f64.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SceneConfig {
        kind: match a.task {
            TaskArg::Segmentation => SceneKind::Segmentation,
            TaskArg::Depth => SceneKind::Depth,
        },
        num_images: a.images,
        height: a.height,
        width: a.width,
        dim: a.dim,
        num_classes: a.classes,
        noise_sigma: a.noise,
        epochs: a.epochs,
        seed: a.seed,
        first_image_id: a.first_image_id,
    };
    let set = generate_synthetic_scene_set(&cfg)?;
    hbfs::save(&set, &a.out)?;
    println!("images={} epochs={} dim={}", set.num_images(), set.num_epochs(), set.dim);
    Ok(())
}

fn build(a: &BuildBankArgs) -> Result<()> {
    let set = hbfs::load(&a.features)?;
    let p = a.preset.preset.values();
    let cfg = SamplerConfig {
        capacity: a.memory_size.unwrap_or(p.memory_size),
        aug_epochs: a.aug_epochs.unwrap_or(p.aug_epochs),
        downsample: !a.no_downsample,
        seed: a.seed,
    };
    let built = build_bank(&set, &cfg)?;
    let keys = KeySet::from(&built.bank);
    let index = match a.index {
        IndexArg::None => None,
        IndexArg::Exact => Some(AnnIndex::build_exact(keys)?),
        IndexArg::Quantized => {
            let params = a.index_args.params(built.bank.len(), a.seed)?;
            Some(AnnIndex::build_quantized(keys, &params)?)
        }
    };
    hbmb::save(&built.bank, index.as_ref(), &a.out)?;
    println!(
        "bank_len={} per_image={} truncated={} index={}",
        built.bank.len(),
        built.per_image,
        built.truncated,
        index.as_ref().map_or("none", AnnIndex::mode_name)
    );
    Ok(())
}

fn predict(f: &DecodeFlags, distributions: bool) -> Result<PredictionFile> {
    let (bank, stored) = hbmb::load(&f.bank)?;
    let set = hbfs::load(&f.features)?;
    let p = f.preset.preset.values();
    let (index, mut search) = match stored {
        Some(AnnIndex::Quantized(q)) if !f.exact => {
            let s = q.params().search_params();
            (AnnIndex::Quantized(q), s)
        }
        _ => (AnnIndex::build_exact(KeySet::from(&bank))?, SearchParams::default()),
    };
    if let Some(l) = f.leaves_to_search {
        search.leaves_to_search = l;
    }
    if let Some(r) = f.reorder_n {
        search.reorder_n = r;
    }
    let cfg = DecodeConfig {
        k: f.k.unwrap_or(p.k),
        temperature: f.temperature.unwrap_or(p.temperature),
        search,
    };
    let records = predict_set(&set, &index, &bank, &cfg, threads_from_env()?)?;
    Ok(PredictionFile {
        task: bank.task,
        distributions,
        records,
    })
}

fn eval(a: &EvalArgs) -> Result<()> {
    let preds = predict(&a.flags, false)?;
    if let Some(path) = &a.predictions {
        hbpr::save(&preds, path)?;
    }
    let set = hbfs::load(&a.flags.features)?;
    print!("{}", report::render(&evaluate(&set, &preds)?));
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        dim: a.dim,
        grid_height: a.grid,
        grid_width: a.grid,
        k: a.k,
        temperature: a.temperature,
        repetitions: a.repetitions,
        training_sample: a.training_sample,
        include_exact: !a.no_exact,
        include_quantized: !a.no_quantized,
        memory_budget: a.memory_budget_mib.saturating_mul(1 << 20),
        seed: a.seed,
        ..BenchConfig::default()
    };
    let rows = bench::run_latency_sweep(&a.sizes, &cfg)?;
    let f = std::fs::File::create(&a.csv).map_err(|e| Error::io(format!("creating {}", a.csv.display()), e))?;
    bench::write_csv(&rows, std::io::BufWriter::new(f))?;
    if let Some(plot) = &a.plot {
        let svg = bench::render_svg(&rows)?;
        std::fs::write(plot, svg).map_err(|e| Error::io(format!("writing {}", plot.display()), e))?;
    }
    bench::write_csv(&rows, std::io::stdout())
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut run = match &a.config {
        Some(p) => PretrainRun::load(p)?,
        None => PretrainRun::default(),
    };
    if let Some(s) = a.steps {
        run.steps = s;
    }
    if let Some(s) = a.seed {
        run.set("seed", &s.to_string(), 0)?;
    }
    let (state, log) = run_pretrain(&run)?;
    let f = std::fs::File::create(&a.log).map_err(|e| Error::io(format!("creating {}", a.log.display()), e))?;
    write_loss_csv(&log, std::io::BufWriter::new(f))?;
    if let Some(p) = &a.params {
        std::fs::write(p, params_bytes(&state)).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    }
    if let Some(last) = log.last() {
        println!("steps={} total={:.6} ssl={:.6} sup={:.6}", last.step, last.total, last.ssl, last.sup);
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildBank(a) => build(a),
        Command::Decode(a) => {
            let preds = predict(&a.flags, a.distributions)?;
            hbpr::save(&preds, &a.out)?;
            println!("images={}", preds.records.len());
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::PretrainToy(a) => pretrain(a),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
