//! Full-batch (or mini-batch) training with reparameterized sampling and Adam.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::diffnum::{Param, Tape, Var};
use crate::error::{Error, Result};
use crate::evalsep::match_sources;
use crate::matrix::Matrix;
use crate::model::{Architecture, InputScaling, InputTransform, PdgmmVae};
use crate::objective::{loss_and_grads, LossBreakdown, LossWeights};
use crate::prior::DEFAULT_LOG_VARIANCE_FLOOR;
use crate::synthgen::derive_seed;

const INIT_STREAM: u64 = 11;
const NOISE_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Convergence {
    pub window: usize,
    pub tol: f64,
    /// Stop early once [`converged`] reports true.
    #[serde(default = "yes")]
    pub stop_early: bool,
}

fn yes() -> bool {
    true
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 100,
            tol: 1e-5,
            stop_early: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Latent sources `n`.
    pub sources: usize,
    /// Mixture components per latent dimension `K`.
    pub components: usize,
    /// Upper bound on optimizer steps.
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub v_y: f64,
    pub seed: u64,
    pub architecture: Architecture,
    /// `None` trains on the full batch every step.
    pub batch_size: Option<usize>,
    pub eval_every: usize,
    /// Lower bound applied to prior and posterior log-variances.
    pub log_variance_floor: f64,
    pub convergence: Convergence,
    /// Rescaling applied to observations before encoding.
    pub input_scaling: InputScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sources: 3,
            components: 3,
            epochs: 20_000,
            learning_rate: 1e-3,
            beta: 1.0,
            v_y: 0.01,
            seed: 0,
            architecture: Architecture::linear(),
            batch_size: None,
            eval_every: 10,
            log_variance_floor: DEFAULT_LOG_VARIANCE_FLOOR,
            convergence: Convergence::default(),
            input_scaling: InputScaling::Zscore,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta,
            v_y: self.v_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 {
            return Err(Error::invalid("train.sources", "must be at least 1"));
        }
        if self.components == 0 {
            return Err(Error::invalid("train.components", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate", "must be > 0"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("train.beta", "must be > 0"));
        }
        if !(self.v_y > 0.0 && self.v_y.is_finite()) {
            return Err(Error::invalid("train.v_y", "must be > 0"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("train.eval_every", "must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("train.batch_size", "must be at least 1"));
        }
        if self.convergence.window < 2 {
            return Err(Error::invalid(
                "train.convergence.window",
                "must be at least 2",
            ));
        }
        if !self.log_variance_floor.is_finite() {
            return Err(Error::invalid("train.log_variance_floor", "must be finite"));
        }
        if self.architecture.encoder_hidden.contains(&0)
            || self.architecture.decoder_hidden.contains(&0)
        {
            return Err(Error::invalid(
                "train.architecture",
                "hidden widths must be positive",
            ));
        }
        Ok(())
    }
}

/// Draws a `rows x cols` matrix of independent standard normals.
pub fn draw_noise<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `z = μ + σ ⊙ ε` with `σ_j = exp(½·log_var_j)` and fresh noise from `rng`.
pub fn reparameterize<R: Rng>(mu: &Matrix, log_var: &[f64], rng: &mut R) -> Result<Matrix> {
    if log_var.len() != mu.cols() {
        return Err(Error::Shape {
            op: "reparameterize",
            left: mu.shape(),
            right: (1, log_var.len()),
        });
    }
    let eps = draw_noise(rng, mu.rows(), mu.cols());
    reparameterize_with(mu, log_var, &eps)
}

/// Reparameterization with frozen noise.
pub fn reparameterize_with(mu: &Matrix, log_var: &[f64], eps: &Matrix) -> Result<Matrix> {
    let sd = Matrix::row_vector(&log_var.iter().map(|l| (0.5 * l).exp()).collect::<Vec<_>>());
    mu.add(&eps.row_broadcast(&sd, "reparameterize", |e, s| e * s)?)
}

/// Tape version: gradients reach `mu` directly and `log_var` through `σ·ε`.
pub fn reparameterize_tape(tape: &mut Tape, mu: Var, log_var: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(log_var, 0.5);
    let sd = tape.exp(half);
    let noise = tape.mul_row(eps, sd)?;
    tape.add(mu, noise)
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[&mut Param]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

/// One Adam update from each param's `grad`.
///
/// Fails, leaving every parameter untouched, if any gradient is not finite.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, lr: f64) -> Result<()> {
    assert_eq!(
        params.len(),
        state.first.len(),
        "optimizer state built for other params"
    );
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.first[i].as_mut_slice();
        let v = state.second[i].as_mut_slice();
        let g = p.grad.as_slice();
        let x = p.value.as_mut_slice();
        for k in 0..x.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            x[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Relative change between the means of the last two `window`-length
/// blocks of `losses` is below `tol`.
pub fn converged(losses: &[f64], window: usize, tol: f64) -> bool {
    assert!(window >= 2, "convergence window must be at least 2");
    if losses.len() < 2 * window {
        return false;
    }
    let end = losses.len();
    let recent = losses[end - window..].iter().sum::<f64>() / window as f64;
    let before = losses[end - 2 * window..end - window].iter().sum::<f64>() / window as f64;
    let scale = before.abs().max(f64::MIN_POSITIVE);
    (recent - before).abs() / scale < tol
}

/// Trailing mean of up to `window` losses ending at index `at`.
pub fn windowed_mean(losses: &[f64], at: usize, window: usize) -> f64 {
    let start = (at + 1).saturating_sub(window);
    let s = &losses[start..=at];
    s.iter().sum::<f64>() / s.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub posterior_var: Vec<f64>,
    pub prior_weights: Vec<f64>,
    pub prior_means: Vec<f64>,
    pub prior_variances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_corrs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub entries: Vec<RecordEntry>,
    /// Total loss of every step, in order.
    pub losses: Vec<f64>,
    pub converged_at: Option<usize>,
}

impl TrainRecord {
    /// Rows for the training-log CSV.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.entries.first() else {
            return "epoch,total,rec,kl_surrogate\n".to_string();
        };
        let n = first.posterior_var.len();
        let nk = first.prior_weights.len();
        let k = nk / n.max(1);
        let mut header: Vec<String> = ["epoch", "total", "rec", "kl_surrogate", "log_q", "log_p"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=n).map(|j| format!("sigma2_{j}")));
        for name in ["weight", "mean", "var"] {
            for j in 1..=n {
                for c in 1..=k {
                    header.push(format!("prior_{name}_{j}_{c}"));
                }
            }
        }
        if first.abs_corrs.is_some() {
            header.extend((1..=n).map(|j| format!("abs_corr_{j}")));
        }
        let rows: Vec<Vec<f64>> = self
            .entries
            .iter()
            .map(|e| {
                let mut r = vec![
                    e.epoch as f64,
                    e.loss.total,
                    e.loss.rec,
                    e.loss.kl_surrogate,
                    e.loss.log_q,
                    e.loss.log_p,
                ];
                r.extend(&e.posterior_var);
                r.extend(&e.prior_weights);
                r.extend(&e.prior_means);
                r.extend(&e.prior_variances);
                if let Some(c) = &e.abs_corrs {
                    r.extend(c);
                }
                r
            })
            .collect();
        crate::csvio::to_csv_string(&header, &rows)
    }
}

/// Runs the training loop until convergence or `config.epochs` steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    abort_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            abort_dir: None,
        }
    }

    /// Where to write the last finite model if training hits a NaN.
    pub fn abort_checkpoint(mut self, dir: impl AsRef<Path>) -> Self {
        self.abort_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Freshly initialized model for observations `y`.
    pub fn init_model(&self, y: &Matrix) -> Result<PdgmmVae> {
        let cfg = &self.config;
        let mut model = PdgmmVae::init(
            y.cols(),
            cfg.sources,
            cfg.components,
            &cfg.architecture,
            derive_seed(cfg.seed, INIT_STREAM),
        );
        model.input = InputTransform::fit(y, cfg.input_scaling)?;
        Ok(model)
    }

    pub fn fit(&self, y: &Matrix, z_true: Option<&Matrix>) -> Result<(PdgmmVae, TrainRecord)> {
        let cfg = &self.config;
        cfg.validate()?;
        if y.rows() == 0 || y.cols() == 0 {
            return Err(Error::invalid("dataset", "observations are empty"));
        }
        if !y.is_finite() {
            return Err(Error::invalid(
                "dataset",
                "observations contain non-finite values",
            ));
        }
        if let Some(z) = z_true {
            if z.cols() != cfg.sources || z.rows() != y.rows() {
                return Err(Error::Shape {
                    op: "fit ground truth",
                    left: y.shape(),
                    right: z.shape(),
                });
            }
        }
        if let Some(b) = cfg.batch_size {
            if b > y.rows() {
                return Err(Error::invalid(
                    "train.batch_size",
                    "larger than the dataset",
                ));
            }
        }

        let mut model = self.init_model(y)?;
        let y_std = model.input.apply(y)?;
        let weights = cfg.weights();
        let mut record = TrainRecord::default();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, NOISE_STREAM));
        let mut adam = AdamState::new(&model.params_mut());
        let mut last_good = model.clone();
        let mut order: Vec<usize> = (0..y.rows()).collect();

        for epoch in 0..cfg.epochs {
            let breakdown = match cfg.batch_size {
                None => {
                    let eps = draw_noise(&mut rng, y.rows(), cfg.sources);
                    let b = loss_and_grads(&mut model, &y_std, &eps, weights)?;
                    self.check_finite(&b, epoch, &last_good)?;
                    if epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
                        record
                            .entries
                            .push(snapshot_entry(&model, epoch, b, &y_std, z_true)?);
                    }
                    last_good.clone_from(&model);
                    self.step(&mut model, &mut adam)?;
                    b
                }
                Some(size) => {
                    order.shuffle(&mut rng);
                    let mut acc = [0.0; 5];
                    let mut batches = 0.0;
                    if epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
                        // evaluate once on the full batch for the log
                        let eps = draw_noise(&mut rng, y.rows(), cfg.sources);
                        let b = crate::objective::evaluate(&model, &y_std, &eps, weights)?;
                        self.check_finite(&b, epoch, &last_good)?;
                        record
                            .entries
                            .push(snapshot_entry(&model, epoch, b, &y_std, z_true)?);
                    }
                    for chunk in order.chunks(size) {
                        let batch = y_std.select_rows(chunk);
                        let eps = draw_noise(&mut rng, batch.rows(), cfg.sources);
                        let b = loss_and_grads(&mut model, &batch, &eps, weights)?;
                        self.check_finite(&b, epoch, &last_good)?;
                        last_good.clone_from(&model);
                        self.step(&mut model, &mut adam)?;
                        for (a, v) in
                            acc.iter_mut()
                                .zip([b.total, b.rec, b.kl_surrogate, b.log_q, b.log_p])
                        {
                            *a += v;
                        }
                        batches += 1.0;
                    }
                    LossBreakdown {
                        total: acc[0] / batches,
                        rec: acc[1] / batches,
                        kl_surrogate: acc[2] / batches,
                        log_q: acc[3] / batches,
                        log_p: acc[4] / batches,
                    }
                }
            };
            record.losses.push(breakdown.total);
            if epoch % (cfg.eval_every * 100) == 0 {
                debug!(
                    "epoch {epoch}: total {:.6} rec {:.6} kl {:.6}",
                    breakdown.total, breakdown.rec, breakdown.kl_surrogate
                );
            }
            if cfg.convergence.stop_early
                && converged(&record.losses, cfg.convergence.window, cfg.convergence.tol)
            {
                info!("converged after {} epochs", epoch + 1);
                record.converged_at = Some(epoch);
                break;
            }
        }
        Ok((model, record))
    }

    fn step(&self, model: &mut PdgmmVae, adam: &mut AdamState) -> Result<()> {
        adam_step(&mut model.params_mut(), adam, self.config.learning_rate)?;
        apply_floor(model, self.config.log_variance_floor);
        Ok(())
    }

    fn check_finite(&self, b: &LossBreakdown, epoch: usize, last_good: &PdgmmVae) -> Result<()> {
        if b.is_finite() {
            return Ok(());
        }
        let mut path = None;
        if let Some(dir) = &self.abort_dir {
            checkpoint::write(dir, last_good)?;
            path = Some(dir.clone());
        }
        Err(Error::NonFiniteLoss {
            epoch,
            last_good: path,
        })
    }
}

/// Raises prior and posterior log-variances to at least `floor`.
pub fn apply_floor(model: &mut PdgmmVae, floor: f64) {
    model.prior.clamp_log_variances(floor);
    for l in model.log_var.value.as_mut_slice() {
        if *l < floor {
            *l = floor;
        }
    }
}

fn snapshot_entry(
    model: &PdgmmVae,
    epoch: usize,
    loss: LossBreakdown,
    y_std: &Matrix,
    z_true: Option<&Matrix>,
) -> Result<RecordEntry> {
    let abs_corrs = match z_true {
        Some(z) => {
            let mu = model.encoder.forward(y_std)?;
            match match_sources(z, &mu) {
                Ok(m) => Some(m.abs_corrs),
                // a collapsed latent has no defined correlation yet
                Err(Error::DegenerateColumn { .. }) => Some(vec![0.0; z.cols()]),
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    Ok(RecordEntry {
        epoch,
        loss,
        posterior_var: model.posterior_variances(),
        prior_weights: model.prior.weights().into_vec(),
        prior_means: model.prior.means().as_slice().to_vec(),
        prior_variances: model.prior.variances().into_vec(),
        abs_corrs,
    })
}

/// Convenience wrapper around [`Trainer::fit`].
pub fn fit(
    config: &TrainConfig,
    y: &Matrix,
    z_true: Option<&Matrix>,
) -> Result<(PdgmmVae, TrainRecord)> {
    Trainer::new(config.clone()).fit(y, z_true)
}
