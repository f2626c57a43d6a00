use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, lbfgs_minimize, schedule_weights, AdamState, AnnealingSchedule, LbfgsStatus};
use crate::amortized::EncoderParams;
use crate::error::{Error, Result};
use crate::metrics::{gini_report, GiniReport};
use crate::model::{Dataset, DictionaryPreimage, PosteriorKind, PosteriorSet};
use crate::numeric::{derive_seed, rng};
use crate::objectives::{
    entropy_elbo_and_gradients_cols, entropy_elbo_cols, entropy_elbo_posterior_gradient_cols, AnnealingWeights,
    ElboBreakdown,
};
use crate::special::ErfBackend;

/// Column names of the training trace, in order.
pub const TRACE_HEADER: &str = "epoch,total_elbo,q_entropy_avg,prior_entropy,likelihood_entropy,sigma2_opt,gini_mean,gini_sd,gamma,delta,wallclock_seconds";

/// Update rule for the dictionary preimage in EM-like training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryOptimizer {
    #[default]
    Sgd,
    Adam,
}

/// Non-amortized training algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainAlgorithm {
    /// Minibatch E-step followed by one dictionary ascent step.
    #[default]
    Em,
    /// Full-batch L-BFGS over posteriors and preimage together.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: TrainAlgorithm,
    /// Number of latents `H`.
    pub latents: usize,
    pub posterior: PosteriorKind,
    pub batch_size: usize,
    pub epochs: usize,
    /// L-BFGS iterations per minibatch E-step, or per epoch in joint training.
    pub e_step_iters: usize,
    /// L-BFGS iterations when refining all posteriors for the per-epoch evaluation.
    pub eval_e_step_iters: usize,
    pub lbfgs_memory: usize,
    /// Gradient-norm tolerance of the E-step optimizer.
    pub e_step_tolerance: f64,
    /// M-step step size in EM-like training.
    pub dictionary_lr: f64,
    pub dictionary_optimizer: DictionaryOptimizer,
    /// Adam learning rate of amortized training, used for the encoder and the dictionary.
    pub encoder_lr: f64,
    /// Encoder hidden width; `4 D` when absent.
    pub hidden: Option<usize>,
    pub seed: u64,
    pub schedule: AnnealingSchedule,
    pub erf: ErfBackend,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: TrainAlgorithm::Em,
            latents: 10,
            posterior: PosteriorKind::Diagonal,
            batch_size: 512,
            epochs: 10,
            e_step_iters: 50,
            eval_e_step_iters: 200,
            lbfgs_memory: 10,
            e_step_tolerance: 1e-7,
            dictionary_lr: 0.05,
            dictionary_optimizer: DictionaryOptimizer::Sgd,
            encoder_lr: 1e-3,
            hidden: None,
            seed: 0,
            schedule: AnnealingSchedule::None,
            erf: ErfBackend::Libm,
        }
    }
}

impl TrainConfig {
    /// Collects every violated constraint for a dataset with `n` datapoints.
    pub fn validate(&self, n: usize, amortized: bool) -> Result<()> {
        let mut errs = Vec::new();
        if self.latents == 0 {
            errs.push("latents must be >= 1".to_string());
        }
        if self.batch_size == 0 || self.batch_size > n {
            errs.push(format!("batch_size must be in 1..={n}, got {}", self.batch_size));
        }
        if self.e_step_iters == 0 {
            errs.push("e_step_iters must be >= 1".into());
        }
        if self.lbfgs_memory == 0 {
            errs.push("lbfgs_memory must be >= 1".into());
        }
        if !(self.e_step_tolerance > 0.0) {
            errs.push("e_step_tolerance must be > 0".into());
        }
        for (name, lr) in [("dictionary_lr", self.dictionary_lr), ("encoder_lr", self.encoder_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                errs.push(format!("{name} must be finite and >= 0, got {lr}"));
            }
        }
        if let PosteriorKind::LowRank { rank } = self.posterior {
            if rank == 0 || rank > self.latents {
                errs.push(format!("low-rank rank must be in 1..={}, got {rank}", self.latents));
            }
        }
        if let AnnealingSchedule::Tempering { c } = self.schedule {
            if !(c.is_finite() && c > 0.0) {
                errs.push(format!("tempering constant must be finite and > 0, got {c}"));
            }
        }
        if amortized && self.posterior == PosteriorKind::Full {
            errs.push("amortized training requires diagonal or low-rank posteriors".into());
        }
        if self.hidden == Some(0) {
            errs.push("hidden width must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// One row of the training trace, evaluated on the full dataset with weights `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub total_elbo: f64,
    pub q_entropy_avg: f64,
    pub prior_entropy: f64,
    pub likelihood_entropy: f64,
    pub sigma2_opt: f64,
    pub gini_mean: f64,
    pub gini_sd: f64,
    /// Weights used for training during this epoch.
    pub gamma: f64,
    pub delta: f64,
    pub wallclock_seconds: f64,
}

impl TraceRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:.3}",
            self.epoch,
            self.total_elbo,
            self.q_entropy_avg,
            self.prior_entropy,
            self.likelihood_entropy,
            self.sigma2_opt,
            self.gini_mean,
            self.gini_sd,
            self.gamma,
            self.delta,
            self.wallclock_seconds
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub e_steps: usize,
    pub line_search_failures: usize,
    pub m_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub preimage: DictionaryPreimage,
    /// Per-datapoint posteriors (EM-like training only).
    pub posteriors: Option<PosteriorSet>,
    /// Trained encoder (amortized training only).
    pub encoder: Option<EncoderParams>,
    /// Full-dataset breakdown of the last epoch, or of the initialization when `epochs = 0`.
    pub final_breakdown: Option<ElboBreakdown>,
    pub diagnostics: TrainDiagnostics,
}

/// Called after every epoch with the trace row and the current preimage.
pub type EpochHook<'a> = &'a mut dyn FnMut(&TraceRow, &DictionaryPreimage) -> Result<()>;

/// Result of optimizing only the posteriors for a fixed dictionary.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub breakdown: ElboBreakdown,
    pub gini: GiniReport,
    pub posteriors: PosteriorSet,
    pub status: LbfgsStatus,
    pub iterations: usize,
}

/// Initial unit-norm preimage: i.i.d. standard normal entries, columns normalized.
pub fn initial_preimage(d: usize, h: usize, seed: u64) -> DictionaryPreimage {
    let mut p = DictionaryPreimage::random(d, h, derive_seed(seed, u64::MAX));
    p.renormalize();
    p
}

/// Maximizes the weighted objective over all posterior parameters with the dictionary fixed.
pub(crate) fn optimize_posteriors(
    posteriors: &PosteriorSet,
    w: &DMatrix<f64>,
    xcols: &DMatrix<f64>,
    weights: AnnealingWeights,
    iters: usize,
    memory: usize,
    tolerance: f64,
    backend: ErfBackend,
) -> Result<(PosteriorSet, LbfgsStatus, usize)> {
    let kind = posteriors.kind();
    let h = posteriors.h();
    let res = lbfgs_minimize(
        |p| {
            let set = PosteriorSet::from_flat(kind, h, p.to_vec()).expect("layout preserved");
            match entropy_elbo_posterior_gradient_cols(&set, w, xcols, weights, backend) {
                Ok((bd, mut g)) if bd.total.is_finite() => {
                    g.iter_mut().for_each(|v| *v = -*v);
                    (-bd.total, g)
                }
                _ => (f64::INFINITY, vec![0.0; p.len()]),
            }
        },
        posteriors.params(),
        iters,
        memory,
        tolerance,
    );
    if !res.value.is_finite() {
        return Err(Error::NonFinite("posterior optimization started from a non-finite objective".into()));
    }
    Ok((PosteriorSet::from_flat(kind, h, res.x)?, res.status, res.iterations))
}

fn check_data(data: &Dataset, config: &TrainConfig, init: Option<&DictionaryPreimage>) -> Result<()> {
    if let Some(p) = init {
        if p.d() != data.d() || p.h() != config.latents {
            return Err(Error::Shape(format!(
                "initial dictionary is {}x{}, expected {}x{}",
                p.d(),
                p.h(),
                data.d(),
                config.latents
            )));
        }
    }
    Ok(())
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(derive_seed(seed, epoch as u64)));
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

fn ensure_finite(bd: &ElboBreakdown, what: &str) -> Result<()> {
    if bd.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: objective is {}", bd.total)))
    }
}

fn row(epoch: usize, bd: &ElboBreakdown, gini: &GiniReport, weights: AnnealingWeights, start: Instant) -> TraceRow {
    TraceRow {
        epoch,
        total_elbo: bd.total,
        q_entropy_avg: bd.q_entropy_avg,
        prior_entropy: bd.prior_entropy,
        likelihood_entropy: bd.likelihood_entropy,
        sigma2_opt: bd.sigma2_opt,
        gini_mean: gini.mean,
        gini_sd: gini.sd,
        gamma: weights.gamma,
        delta: weights.delta,
        wallclock_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Gini report that tolerates a single datapoint.
fn gini_or_trivial(set: &PosteriorSet) -> GiniReport {
    gini_report(set).unwrap_or_else(|_| {
        let g = crate::metrics::gini(&set.block(0)[..set.h()]);
        GiniReport { mean: g, sd: 0.0, per_sample: vec![g], all_zero: 0 }
    })
}

/// EM-like training: per minibatch an L-BFGS E-step over that batch's posteriors with the
/// dictionary fixed, then one ascent step on the preimage. Each epoch ends with a full-dataset
/// evaluation at weights `(1, 1)` after refining a copy of all posteriors.
pub fn em_train(
    data: &Dataset,
    config: &TrainConfig,
    init: Option<DictionaryPreimage>,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    config.validate(data.n(), false)?;
    check_data(data, config, init.as_ref())?;
    let start = Instant::now();
    let (n, h) = (data.n(), config.latents);
    let xcols = data.columns();
    let mut preimage = init.unwrap_or_else(|| initial_preimage(data.d(), h, config.seed));
    let mut posteriors = PosteriorSet::standard(config.posterior, h, n);
    let mut adam = AdamState::new(preimage.v.len(), config.dictionary_lr);
    let mut diagnostics = TrainDiagnostics::default();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut final_breakdown = None;

    if config.epochs == 0 {
        let bd = entropy_elbo_cols(&posteriors, &preimage.w_tilde()?, &xcols, AnnealingWeights::UNANNEALED, config.erf)?;
        final_breakdown = Some(bd);
    }

    for epoch in 1..=config.epochs {
        let weights = schedule_weights(config.schedule, epoch);
        for batch in epoch_batches(n, config.batch_size, config.seed, epoch) {
            let xb = xcols.select_columns(&batch);
            let w = preimage.w_tilde()?;
            let sub = posteriors.gather(&batch);
            let (sub, status, _) = optimize_posteriors(
                &sub,
                &w,
                &xb,
                weights,
                config.e_step_iters,
                config.lbfgs_memory,
                config.e_step_tolerance,
                config.erf,
            )?;
            diagnostics.e_steps += 1;
            if status == LbfgsStatus::LineSearchFailed {
                diagnostics.line_search_failures += 1;
            }
            posteriors.scatter(&batch, &sub);

            if config.dictionary_lr > 0.0 {
                let (bd, grads) = entropy_elbo_and_gradients_cols(&sub, &preimage, &w, &xb, weights, config.erf)?;
                ensure_finite(&bd, "M-step")?;
                match config.dictionary_optimizer {
                    DictionaryOptimizer::Sgd => preimage.v += grads.preimage * config.dictionary_lr,
                    DictionaryOptimizer::Adam => {
                        adam_step(&mut adam, preimage.v.as_mut_slice(), grads.preimage.as_slice())?
                    }
                }
                preimage.renormalize();
                diagnostics.m_steps += 1;
            }
        }

        let w = preimage.w_tilde()?;
        let (refined, _, _) = optimize_posteriors(
            &posteriors,
            &w,
            &xcols,
            AnnealingWeights::UNANNEALED,
            config.eval_e_step_iters,
            config.lbfgs_memory,
            config.e_step_tolerance,
            config.erf,
        )?;
        let bd = entropy_elbo_cols(&refined, &w, &xcols, AnnealingWeights::UNANNEALED, config.erf)?;
        ensure_finite(&bd, "epoch evaluation")?;
        let gini = gini_or_trivial(&posteriors);
        let r = row(epoch, &bd, &gini, weights, start);
        log::info!(
            "epoch {epoch}: elbo {:.4} sigma2 {:.4e} gini {:.3} (gamma {}, delta {:.3})",
            r.total_elbo,
            r.sigma2_opt,
            r.gini_mean,
            r.gamma,
            r.delta
        );
        if let Some(hook) = hook.as_mut() {
            hook(&r, &preimage)?;
        }
        trace.push(r);
        if epoch == config.epochs {
            posteriors = refined;
        }
        final_breakdown = Some(bd);
    }

    Ok(TrainOutcome {
        trace,
        preimage,
        posteriors: Some(posteriors),
        encoder: None,
        final_breakdown,
        diagnostics,
    })
}

/// Non-amortized training with the configured algorithm.
pub fn train(
    data: &Dataset,
    config: &TrainConfig,
    init: Option<DictionaryPreimage>,
    hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    match config.algorithm {
        TrainAlgorithm::Em => em_train(data, config, init, hook),
        TrainAlgorithm::Joint => joint_train(data, config, init, hook),
    }
}

/// Joint training: each epoch runs `e_step_iters` L-BFGS iterations on the full-batch weighted
/// objective over all posterior parameters and the preimage. `batch_size` is not used.
pub fn joint_train(
    data: &Dataset,
    config: &TrainConfig,
    init: Option<DictionaryPreimage>,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    config.validate(data.n(), false)?;
    check_data(data, config, init.as_ref())?;
    let start = Instant::now();
    let (n, d, h) = (data.n(), data.d(), config.latents);
    let kind = config.posterior;
    let xcols = data.columns();
    let mut preimage = init.unwrap_or_else(|| initial_preimage(d, h, config.seed));
    let mut posteriors = PosteriorSet::standard(kind, h, n);
    let mut diagnostics = TrainDiagnostics::default();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut final_breakdown = None;

    if config.epochs == 0 {
        let bd = entropy_elbo_cols(&posteriors, &preimage.w_tilde()?, &xcols, AnnealingWeights::UNANNEALED, config.erf)?;
        final_breakdown = Some(bd);
    }

    // posterior gradients carry a 1/N factor that the dictionary gradient lacks, so the preimage
    // is stored scaled by sqrt(N) inside the optimizer to keep the two blocks comparably curved
    let scale = (n as f64).sqrt();
    for epoch in 1..=config.epochs {
        let weights = schedule_weights(config.schedule, epoch);
        let np = posteriors.params().len();
        let mut x0 = posteriors.params().to_vec();
        x0.extend(preimage.v.iter().map(|v| v * scale));
        let res = lbfgs_minimize(
            |x| {
                let set = PosteriorSet::from_flat(kind, h, x[..np].to_vec()).expect("layout preserved");
                let v: Vec<f64> = x[np..].iter().map(|v| v / scale).collect();
                let evaluated = DictionaryPreimage::new(DMatrix::from_vec(d, h, v)).and_then(|p| {
                    let w = p.w_tilde()?;
                    entropy_elbo_and_gradients_cols(&set, &p, &w, &xcols, weights, config.erf)
                });
                match evaluated {
                    Ok((bd, g)) if bd.total.is_finite() => {
                        let grad = g.posterior.iter().map(|v| -v).chain(g.preimage.iter().map(|v| -v / scale)).collect();
                        (-bd.total, grad)
                    }
                    _ => (f64::INFINITY, vec![0.0; x.len()]),
                }
            },
            &x0,
            config.e_step_iters,
            config.lbfgs_memory,
            config.e_step_tolerance,
        );
        if !res.value.is_finite() {
            return Err(Error::NonFinite(format!("joint optimization diverged in epoch {epoch}")));
        }
        diagnostics.e_steps += 1;
        diagnostics.m_steps += res.iterations;
        if res.status == LbfgsStatus::LineSearchFailed {
            diagnostics.line_search_failures += 1;
        }
        posteriors = PosteriorSet::from_flat(kind, h, res.x[..np].to_vec())?;
        preimage = DictionaryPreimage::new(DMatrix::from_vec(d, h, res.x[np..].iter().map(|v| v / scale).collect()))?;
        preimage.renormalize();

        let bd = entropy_elbo_cols(&posteriors, &preimage.w_tilde()?, &xcols, AnnealingWeights::UNANNEALED, config.erf)?;
        ensure_finite(&bd, "epoch evaluation")?;
        let gini = gini_or_trivial(&posteriors);
        let r = row(epoch, &bd, &gini, weights, start);
        log::info!(
            "epoch {epoch}: joint elbo {:.4} sigma2 {:.4e} gini {:.3} ({} iterations, {:?})",
            r.total_elbo,
            r.sigma2_opt,
            r.gini_mean,
            res.iterations,
            res.status
        );
        if let Some(hook) = hook.as_mut() {
            hook(&r, &preimage)?;
        }
        trace.push(r);
        final_breakdown = Some(bd);
    }

    Ok(TrainOutcome {
        trace,
        preimage,
        posteriors: Some(posteriors),
        encoder: None,
        final_breakdown,
        diagnostics,
    })
}

/// Amortized training: joint Adam ascent on encoder and preimage, gradients of the
/// batch objective chained through the encoder's backward pass.
pub fn amortized_train(
    data: &Dataset,
    config: &TrainConfig,
    encoder: Option<EncoderParams>,
    init: Option<DictionaryPreimage>,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    config.validate(data.n(), true)?;
    check_data(data, config, init.as_ref())?;
    let start = Instant::now();
    let (n, h) = (data.n(), config.latents);
    let xcols = data.columns();
    let mut preimage = init.unwrap_or_else(|| initial_preimage(data.d(), h, config.seed));
    let mut encoder = match encoder {
        Some(e) => {
            if e.kind != config.posterior || e.d != data.d() || e.h != h {
                return Err(Error::Shape("encoder does not match the posterior family or data shape".into()));
            }
            e.validate()?;
            e
        }
        None => EncoderParams::new(config.posterior, data.d(), h, config.hidden, derive_seed(config.seed, 1))?,
    };
    let mut enc_adam = AdamState::new(encoder.n_params(), config.encoder_lr);
    let mut dict_adam = AdamState::new(preimage.v.len(), config.encoder_lr);
    let mut diagnostics = TrainDiagnostics::default();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut final_breakdown = None;

    let evaluate = |encoder: &EncoderParams, preimage: &DictionaryPreimage| -> Result<(ElboBreakdown, GiniReport)> {
        let set = encoder.encode_batch(&xcols)?;
        let bd = entropy_elbo_cols(&set, &preimage.w_tilde()?, &xcols, AnnealingWeights::UNANNEALED, config.erf)?;
        Ok((bd, gini_or_trivial(&set)))
    };

    if config.epochs == 0 {
        final_breakdown = Some(evaluate(&encoder, &preimage)?.0);
    }

    for epoch in 1..=config.epochs {
        let weights = schedule_weights(config.schedule, epoch);
        for batch in epoch_batches(n, config.batch_size, config.seed, epoch) {
            let xb = xcols.select_columns(&batch);
            let w = preimage.w_tilde()?;
            let set = encoder.encode_batch(&xb)?;
            let (bd, grads) = entropy_elbo_and_gradients_cols(&set, &preimage, &w, &xb, weights, config.erf)?;
            ensure_finite(&bd, "amortized step")?;
            if config.encoder_lr > 0.0 {
                let g_enc = encoder.encode_backward(&xb, &grads.posterior)?;
                adam_step(&mut enc_adam, &mut encoder.params, &g_enc)?;
                adam_step(&mut dict_adam, preimage.v.as_mut_slice(), grads.preimage.as_slice())?;
                preimage.renormalize();
            }
            diagnostics.m_steps += 1;
        }
        let (bd, gini) = evaluate(&encoder, &preimage)?;
        ensure_finite(&bd, "epoch evaluation")?;
        let r = row(epoch, &bd, &gini, weights, start);
        log::info!("epoch {epoch}: amortized elbo {:.4} gini {:.3}", r.total_elbo, r.gini_mean);
        if let Some(hook) = hook.as_mut() {
            hook(&r, &preimage)?;
        }
        trace.push(r);
        final_breakdown = Some(bd);
    }

    Ok(TrainOutcome {
        trace,
        preimage,
        posteriors: None,
        encoder: Some(encoder),
        final_breakdown,
        diagnostics,
    })
}

/// Options of [`eval_external_dictionary`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub iters: usize,
    pub memory: usize,
    pub tolerance: f64,
    pub erf: ErfBackend,
    /// Starting posteriors; standard normal when absent.
    pub warm_start: Option<PosteriorSet>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { iters: 500, memory: 10, tolerance: 1e-9, erf: ErfBackend::Libm, warm_start: None }
    }
}

/// Normalizes the columns of `w`, optimizes only the posteriors at weights `(1, 1)`, and
/// reports the full-dataset breakdown with Gini statistics of the posterior means.
pub fn eval_external_dictionary(
    w: &DMatrix<f64>,
    data: &Dataset,
    kind: PosteriorKind,
    options: &EvalOptions,
) -> Result<EvalOutcome> {
    if w.nrows() != data.d() {
        return Err(Error::Shape(format!("dictionary has D={}, data has D={}", w.nrows(), data.d())));
    }
    let w_tilde = DictionaryPreimage::new(w.clone())?.w_tilde()?;
    let h = w.ncols();
    let start = match &options.warm_start {
        Some(p) => {
            if p.kind() != kind || p.h() != h || p.n() != data.n() {
                return Err(Error::Shape("warm-start posteriors do not match dictionary and data".into()));
            }
            p.clone()
        }
        None => PosteriorSet::standard(kind, h, data.n()),
    };
    let xcols = data.columns();
    let (posteriors, status, iterations) = optimize_posteriors(
        &start,
        &w_tilde,
        &xcols,
        AnnealingWeights::UNANNEALED,
        options.iters,
        options.memory,
        options.tolerance,
        options.erf,
    )?;
    let breakdown = entropy_elbo_cols(&posteriors, &w_tilde, &xcols, AnnealingWeights::UNANNEALED, options.erf)?;
    ensure_finite(&breakdown, "evaluation")?;
    let gini = gini_or_trivial(&posteriors);
    Ok(EvalOutcome { breakdown, gini, posteriors, status, iterations })
}
