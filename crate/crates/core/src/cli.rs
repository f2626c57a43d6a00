//! Command-line interface: dataset generation, training, evaluation and verification.
//!
//! Every subcommand accepts `--config FILE`, a JSON object keyed by the long flag names.
//! Flags given on the command line override the file; unknown keys are rejected.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::amortized::DEFAULT_RANK;
use crate::checkpoint::Checkpoint;
use crate::data::formats::{dictionary_grid, matrix_to_rows, read_dataset, read_dictionary, read_pgm, write_pgm, write_scd1};
use crate::data::{dead_leaves_image, extract_patches, generate_bars, BarsSpec, PatchSpec, Whitening};
use crate::error::{Error, Result};
use crate::metrics::GiniReport;
use crate::model::{Dataset, PosteriorKind};
use crate::objectives::ElboBreakdown;
use crate::optim::{
    amortized_train, eval_external_dictionary, train, AnnealingSchedule, DictionaryOptimizer, EvalOptions,
    TraceRow, TrainAlgorithm, TrainConfig, TRACE_HEADER,
};
use crate::special::ErfBackend;
use crate::verify::{run_suite, Suite, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "entropy-sc", version, about = "Sparse coding with analytic entropy-based ELBOs")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "SC_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic bars dataset with its ground-truth dictionary.
    GenerateBars(GenerateBarsArgs),
    /// Extract (whitened) image patches from PGM images or synthetic dead-leaves images.
    ExtractPatches(ExtractPatchesArgs),
    /// Train a dictionary and write checkpoint, trace and field images.
    Train(TrainArgs),
    /// Evaluate a checkpoint or an external dictionary on a dataset.
    Eval(EvalArgs),
    /// Run a randomized verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorArg {
    Full,
    Diag,
    Lowrank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnealArg {
    None,
    Prior,
    Beta,
    Tempering,
}

/// `em`: minibatch EM with a plain gradient M-step; `adam`: the same with an Adam M-step;
/// `joint`: full-batch L-BFGS over posteriors and dictionary together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Em,
    Adam,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhiteningArg {
    None,
    Zca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErfArg {
    Libm,
    Burmann,
}

impl From<ErfArg> for ErfBackend {
    fn from(e: ErfArg) -> Self {
        match e {
            ErfArg::Libm => ErfBackend::Libm,
            ErfArg::Burmann => ErfBackend::Burmann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteArg {
    Math,
    Theorems,
    Gradients,
    Mc,
}

/// Fills every `None` field of `self` from `file`.
trait Overlay: Sized + DeserializeOwned {
    fn overlay(self, file: Self) -> Self;
    fn config_path(&self) -> Option<&Path>;

    fn resolve(self) -> Result<Self> {
        let Some(path) = self.config_path().map(Path::to_path_buf) else { return Ok(self) };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Ok(self.overlay(file))
    }
}

macro_rules! overlay_impl {
    ($ty:ty; $($field:ident),* $(,)?) => {
        impl Overlay for $ty {
            fn overlay(self, file: Self) -> Self {
                Self { config: self.config, $($field: self.$field.or(file.$field)),* }
            }
            fn config_path(&self) -> Option<&Path> {
                self.config.as_deref()
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenerateBarsArgs {
    /// JSON file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Image side length (D = grid^2).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Number of bars (at most 2 * grid).
    #[arg(long)]
    pub n_fields: Option<usize>,
    /// Laplace scale of the activations.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Observation noise standard deviation.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (data.scd1, ground_truth.json, ground_truth.pgm, samples.pgm).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
overlay_impl!(GenerateBarsArgs; grid, n_fields, lambda, noise_sigma, n, seed, out);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExtractPatchesArgs {
    /// JSON file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Source PGM images.
    #[arg(long, num_args = 1..)]
    pub images: Option<Vec<PathBuf>>,
    /// Use this many synthetic dead-leaves images instead of PGM files.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side length of the synthetic images.
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub patch_side: Option<usize>,
    #[arg(long)]
    pub n_patches: Option<usize>,
    #[arg(long, value_enum)]
    pub whitening: Option<WhiteningArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset file (.scd1).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
overlay_impl!(ExtractPatchesArgs; images, synthetic, image_side, patch_side, n_patches, whitening, seed, out);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset file (.scd1 or .csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of latents H.
    #[arg(long)]
    pub latents: Option<usize>,
    #[arg(long, value_enum)]
    pub posterior: Option<PosteriorArg>,
    /// Rank of the low-rank covariance factor.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Train an encoder instead of per-datapoint posteriors.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub amortized: Option<bool>,
    #[arg(long, value_enum)]
    pub anneal: Option<AnnealArg>,
    /// Constant c of the tempering schedule.
    #[arg(long)]
    pub gamma_const: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Dictionary step size of EM training.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam learning rate of amortized training.
    #[arg(long)]
    pub encoder_lr: Option<f64>,
    /// L-BFGS iterations per E-step (per epoch with --optimizer joint).
    #[arg(long)]
    pub e_step_iters: Option<usize>,
    /// L-BFGS iterations of the per-epoch posterior refinement.
    #[arg(long)]
    pub eval_iters: Option<usize>,
    /// Encoder hidden width.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, value_enum)]
    pub erf: Option<ErfArg>,
    /// Write a field image every this many epochs (0: final only).
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Output directory (checkpoint.json, trace.csv, fields_*.pgm).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
overlay_impl!(TrainArgs; data, latents, posterior, rank, amortized, anneal, gamma_const, epochs, batch, seed,
    optimizer, lr, encoder_lr, e_step_iters, eval_iters, hidden, erf, snapshot_every, out);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    /// JSON file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint (JSON).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// External D x H dictionary (CSV or JSON rows).
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Posterior family (default: the checkpoint's, else diag).
    #[arg(long, value_enum)]
    pub posterior: Option<PosteriorArg>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// L-BFGS iterations over the posteriors.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, value_enum)]
    pub erf: Option<ErfArg>,
    /// Output JSON file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
overlay_impl!(EvalArgs; checkpoint, dictionary, data, posterior, rank, iters, erf, out);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct VerifyArgs {
    /// JSON file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub suite: Option<SuiteArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Monte-Carlo samples per datapoint (mc suite).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
overlay_impl!(VerifyArgs; suite, seed, trials, samples, out);

/// Parses the arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Shape(_) | Error::ZeroColumn { .. } | Error::Data(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::NonFinite(_) | Error::Quadrature(_) => EXIT_FAILURE,
    }
}

fn execute(cli: Cli) -> Result<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config(vec!["threads must be >= 1".into()]));
        }
        // a pool already built by an earlier call in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::GenerateBars(a) => cmd_generate_bars(a.resolve()?).map(|_| EXIT_OK),
        Command::ExtractPatches(a) => cmd_extract_patches(a.resolve()?).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(a.resolve()?).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(a.resolve()?).map(|_| EXIT_OK),
        Command::Verify(a) => cmd_verify(a.resolve()?),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("<stdout>", e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

/// Side lengths of the square fields of a `D`-dimensional dictionary, or a single row.
fn field_shape(d: usize) -> (usize, usize) {
    let s = (d as f64).sqrt().round() as usize;
    if s * s == d {
        (s, s)
    } else {
        (1, d)
    }
}

fn write_fields(path: &Path, w: &nalgebra::DMatrix<f64>) -> Result<()> {
    let (rows, cols) = field_shape(w.nrows());
    write_pgm(path, &dictionary_grid(w, rows, cols)?)
}

pub fn cmd_generate_bars(a: GenerateBarsArgs) -> Result<()> {
    let d = BarsSpec::default();
    let spec = BarsSpec {
        grid: a.grid.unwrap_or(d.grid),
        n_fields: a.n_fields.unwrap_or(2 * a.grid.unwrap_or(d.grid)),
        lambda: a.lambda.unwrap_or(d.lambda),
        noise_sigma: a.noise_sigma.unwrap_or(d.noise_sigma),
        n: a.n.unwrap_or(d.n),
        seed: a.seed.unwrap_or(d.seed),
    };
    let mut errs = Vec::new();
    if a.out.is_none() {
        errs.push("--out is required".to_string());
    }
    if let Err(Error::Config(e)) = spec.validate() {
        errs.extend(e);
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let out = a.out.expect("checked above");
    let (data, w) = generate_bars(&spec)?;
    create_dir(&out)?;
    write_scd1(&out.join("data.scd1"), &data)?;
    write_json(&out.join("ground_truth.json"), &matrix_to_rows(&w))?;
    write_fields(&out.join("ground_truth.pgm"), &w)?;
    let preview = data.x.rows(0, data.n().min(25)).transpose();
    write_fields(&out.join("samples.pgm"), &preview.into_owned())?;
    log::info!("wrote {} bars datapoints (D={}) to {}", data.n(), data.d(), out.display());
    Ok(())
}

pub fn cmd_extract_patches(a: ExtractPatchesArgs) -> Result<()> {
    let d = PatchSpec::default();
    let spec = PatchSpec {
        patch_side: a.patch_side.unwrap_or(d.patch_side),
        n_patches: a.n_patches.unwrap_or(d.n_patches),
        whitening: match a.whitening {
            Some(WhiteningArg::None) => Whitening::None,
            Some(WhiteningArg::Zca) | None => Whitening::Zca,
        },
        seed: a.seed.unwrap_or(d.seed),
    };
    let mut errs = Vec::new();
    if a.out.is_none() {
        errs.push("--out is required".to_string());
    }
    match (&a.images, a.synthetic) {
        (Some(_), Some(_)) => errs.push("--images and --synthetic are mutually exclusive".into()),
        (None, None) => errs.push("one of --images or --synthetic is required".into()),
        (None, Some(0)) => errs.push("--synthetic must be >= 1".into()),
        _ => {}
    }
    let side = a.image_side.unwrap_or(256);
    if side < spec.patch_side {
        errs.push(format!("--image-side {side} is smaller than --patch-side {}", spec.patch_side));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let images = match (&a.images, a.synthetic) {
        (Some(paths), _) => paths.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?,
        (None, Some(k)) => (0..k)
            .map(|i| dead_leaves_image(side, crate::numeric::derive_seed(spec.seed, 1 << 32 | i as u64)))
            .collect(),
        (None, None) => unreachable!("validated above"),
    };
    let data = extract_patches(&images, &spec)?;
    let out = a.out.expect("checked above");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_scd1(&out, &data)?;
    log::info!("wrote {} patches (D={}) to {}", data.n(), data.d(), out.display());
    Ok(())
}

fn posterior_kind(p: PosteriorArg, rank: Option<usize>) -> PosteriorKind {
    match p {
        PosteriorArg::Full => PosteriorKind::Full,
        PosteriorArg::Diag => PosteriorKind::Diagonal,
        PosteriorArg::Lowrank => PosteriorKind::LowRank { rank: rank.unwrap_or(DEFAULT_RANK) },
    }
}

/// Builds the training configuration from the resolved flags, collecting every problem.
pub fn train_config(a: &TrainArgs, errs: &mut Vec<String>) -> TrainConfig {
    let d = TrainConfig::default();
    let optimizer = a.optimizer.unwrap_or(OptimizerArg::Em);
    let anneal = a.anneal.unwrap_or(AnnealArg::None);
    if a.gamma_const.is_some() && anneal != AnnealArg::Tempering {
        errs.push("--gamma-const only applies to --anneal tempering".into());
    }
    if a.rank.is_some() && a.posterior != Some(PosteriorArg::Lowrank) {
        errs.push("--rank only applies to --posterior lowrank".into());
    }
    if a.amortized == Some(true) && optimizer != OptimizerArg::Em && a.optimizer.is_some() {
        errs.push("--optimizer does not apply to amortized training".into());
    }
    TrainConfig {
        algorithm: if optimizer == OptimizerArg::Joint { TrainAlgorithm::Joint } else { TrainAlgorithm::Em },
        latents: a.latents.unwrap_or(d.latents),
        posterior: posterior_kind(a.posterior.unwrap_or(PosteriorArg::Diag), a.rank),
        batch_size: a.batch.unwrap_or(d.batch_size),
        epochs: a.epochs.unwrap_or(d.epochs),
        e_step_iters: a.e_step_iters.unwrap_or(d.e_step_iters),
        eval_e_step_iters: a.eval_iters.unwrap_or(d.eval_e_step_iters),
        lbfgs_memory: d.lbfgs_memory,
        e_step_tolerance: d.e_step_tolerance,
        dictionary_lr: a.lr.unwrap_or(d.dictionary_lr),
        dictionary_optimizer: if optimizer == OptimizerArg::Adam { DictionaryOptimizer::Adam } else { DictionaryOptimizer::Sgd },
        encoder_lr: a.encoder_lr.unwrap_or(d.encoder_lr),
        hidden: a.hidden,
        seed: a.seed.unwrap_or(d.seed),
        schedule: match anneal {
            AnnealArg::None => AnnealingSchedule::None,
            AnnealArg::Prior => AnnealingSchedule::Prior,
            AnnealArg::Beta => AnnealingSchedule::Beta,
            AnnealArg::Tempering => AnnealingSchedule::Tempering { c: a.gamma_const.unwrap_or(1.0) },
        },
        erf: a.erf.map_or(d.erf, ErfBackend::from),
    }
}

pub fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut errs = Vec::new();
    if a.data.is_none() {
        errs.push("--data is required".to_string());
    }
    if a.out.is_none() {
        errs.push("--out is required".to_string());
    }
    let mut config = train_config(&a, &mut errs);
    let amortized = a.amortized.unwrap_or(false);
    let data = match &a.data {
        Some(p) if errs.is_empty() => Some(read_dataset(p)?),
        _ => None,
    };
    // validate against the dataset size when it is known
    let n = data.as_ref().map_or(config.batch_size.max(1), Dataset::n);
    if a.batch.is_none() {
        config.batch_size = config.batch_size.min(n);
    }
    if let Err(Error::Config(e)) = config.validate(n, amortized) {
        errs.extend(e);
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let data = data.expect("read above");
    let out = a.out.expect("checked above");
    create_dir(&out)?;

    let snapshot_every = a.snapshot_every.unwrap_or(0);
    let trace_path = out.join("trace.csv");
    let mut trace = BufWriter::new(File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?);
    writeln!(trace, "{TRACE_HEADER}").map_err(|e| Error::io(&trace_path, e))?;
    let mut hook = |row: &TraceRow, pre: &crate::model::DictionaryPreimage| -> Result<()> {
        writeln!(trace, "{}", row.csv_line()).map_err(|e| Error::io(&trace_path, e))?;
        trace.flush().map_err(|e| Error::io(&trace_path, e))?;
        if snapshot_every > 0 && row.epoch.is_multiple_of(snapshot_every) {
            write_fields(&out.join(format!("fields_epoch_{:04}.pgm", row.epoch)), &pre.w_tilde()?)?;
        }
        Ok(())
    };
    let outcome = if amortized {
        amortized_train(&data, &config, None, None, Some(&mut hook))?
    } else {
        train(&data, &config, None, Some(&mut hook))?
    };
    drop(trace);
    Checkpoint::from_outcome(&config, amortized, &outcome)?.save(&out.join("checkpoint.json"))?;
    write_fields(&out.join("fields_final.pgm"), &outcome.preimage.w_tilde()?)?;
    if let Some(bd) = &outcome.final_breakdown {
        log::info!("final ELBO {:.6} (sigma2 {:.4e})", bd.total, bd.sigma2_opt);
    }
    Ok(())
}

/// Output of `eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub breakdown: ElboBreakdown,
    pub gini_mean: f64,
    pub gini_sd: f64,
    pub gini_all_zero: usize,
    pub lbfgs_status: String,
    pub lbfgs_iterations: usize,
}

impl EvalReport {
    fn new(breakdown: ElboBreakdown, gini: &GiniReport, status: String, iterations: usize) -> Self {
        Self { breakdown, gini_mean: gini.mean, gini_sd: gini.sd, gini_all_zero: gini.all_zero, lbfgs_status: status, lbfgs_iterations: iterations }
    }
}

pub fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut errs = Vec::new();
    if a.data.is_none() {
        errs.push("--data is required".to_string());
    }
    match (&a.checkpoint, &a.dictionary) {
        (Some(_), Some(_)) => errs.push("--checkpoint and --dictionary are mutually exclusive".into()),
        (None, None) => errs.push("one of --checkpoint or --dictionary is required".into()),
        _ => {}
    }
    if a.rank.is_some() && a.posterior != Some(PosteriorArg::Lowrank) {
        errs.push("--rank only applies to --posterior lowrank".into());
    }
    if a.iters == Some(0) {
        errs.push("--iters must be >= 1".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let data = read_dataset(a.data.as_deref().expect("checked above"))?;
    let mut options = EvalOptions { erf: a.erf.map_or(ErfBackend::Libm, ErfBackend::from), ..EvalOptions::default() };
    if let Some(i) = a.iters {
        options.iters = i;
    }
    let (w, kind) = match (&a.checkpoint, &a.dictionary) {
        (Some(path), _) => {
            let ck = Checkpoint::load(path)?;
            let kind = a.posterior.map_or(ck.posterior_kind, |p| posterior_kind(p, a.rank));
            // posteriors saved with the checkpoint seed the optimization when they fit
            if let Some(set) = ck.posterior_set()? {
                if set.kind() == kind && set.n() == data.n() {
                    options.warm_start = Some(set);
                }
            }
            (ck.w_tilde()?, kind)
        }
        (None, Some(path)) => (read_dictionary(path)?, posterior_kind(a.posterior.unwrap_or(PosteriorArg::Diag), a.rank)),
        (None, None) => unreachable!("validated above"),
    };
    if let PosteriorKind::LowRank { rank } = kind {
        if rank == 0 || rank > w.ncols() {
            return Err(Error::Config(vec![format!("low-rank rank must be in 1..={}, got {rank}", w.ncols())]));
        }
    }
    let res = eval_external_dictionary(&w, &data, kind, &options)?;
    let report = EvalReport::new(res.breakdown, &res.gini, format!("{:?}", res.status), res.iterations);
    emit_json(a.out.as_deref(), &report)
}

pub fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let d = VerifyOptions::default();
    let suite = match a.suite {
        Some(SuiteArg::Math) => Suite::Math,
        Some(SuiteArg::Theorems) => Suite::Theorems,
        Some(SuiteArg::Gradients) => Suite::Gradients,
        Some(SuiteArg::Mc) => Suite::Mc,
        None => return Err(Error::Config(vec!["--suite is required".into()])),
    };
    let options = VerifyOptions {
        seed: a.seed.unwrap_or(d.seed),
        trials: a.trials.unwrap_or(d.trials),
        mc_samples: a.samples.unwrap_or(d.mc_samples),
    };
    if options.mc_samples < 100 {
        return Err(Error::Config(vec![format!("--samples must be >= 100, got {}", options.mc_samples)]));
    }
    let report = run_suite(suite, &options)?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "FAIL {} at trial {} (instance seed {}; replay with --seed {} --trials {}): error {:e} >= {:e}",
            c.name,
            c.trial,
            c.seed,
            options.seed,
            c.trial + 1,
            c.error,
            c.tolerance
        );
    }
    eprintln!("{}: {} passed, {} failed", suite.name(), report.passed, report.failed);
    emit_json(a.out.as_deref(), &report)?;
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_VERIFY })
}
