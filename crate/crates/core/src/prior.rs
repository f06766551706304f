//! Per-dimension learnable Gaussian-mixture prior.
//!
//! Each latent coordinate `j` has `K` components parameterized by
//! unconstrained logits `alpha[j, k]`, means `mu[j, k]` and log-variances
//! `eta[j, k]`. Weights are the row-wise softmax of `alpha` and variances
//! are `exp(eta)`, so every point in parameter space is a valid mixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnum::{log_sum_exp, softmax_row, Param, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Lowest admissible log-variance for mixture components (variance 1e-6).
pub const DEFAULT_LOG_VARIANCE_FLOOR: f64 = -13.8;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPriorParams {
    pub alpha: Param,
    pub mu: Param,
    pub eta: Param,
}

/// Tape handles for the three prior parameter blocks.
#[derive(Debug, Clone, Copy)]
pub struct PriorVars {
    pub alpha: Var,
    pub mu: Var,
    pub eta: Var,
}

impl GmmPriorParams {
    /// Uniform weights, means evenly spaced over `[-2, 2]`, unit variances.
    pub fn init(n: usize, k: usize) -> Self {
        let means = Matrix::from_fn(n, k, |_, c| {
            if k == 1 {
                0.0
            } else {
                -2.0 + 4.0 * c as f64 / (k - 1) as f64
            }
        });
        Self::from_raw(Matrix::zeros(n, k), means, Matrix::zeros(n, k)).expect("shapes agree")
    }

    pub fn from_raw(alpha: Matrix, mu: Matrix, eta: Matrix) -> Result<Self> {
        for (name, m) in [("mu", &mu), ("eta", &eta)] {
            if m.shape() != alpha.shape() {
                return Err(Error::Shape {
                    op: if name == "mu" {
                        "prior mu"
                    } else {
                        "prior eta"
                    },
                    left: alpha.shape(),
                    right: m.shape(),
                });
            }
        }
        if !(alpha.is_finite() && mu.is_finite() && eta.is_finite()) {
            return Err(Error::invalid("prior", "parameters must be finite"));
        }
        Ok(Self {
            alpha: Param::new("prior.alpha", alpha),
            mu: Param::new("prior.mu", mu),
            eta: Param::new("prior.eta", eta),
        })
    }

    /// Builds a prior from constrained weights, means and variances.
    pub fn from_constrained(weights: &Matrix, means: &Matrix, variances: &Matrix) -> Result<Self> {
        if weights.as_slice().iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid("weights", "must be strictly positive"));
        }
        if variances.as_slice().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("variances", "must be strictly positive"));
        }
        Self::from_raw(weights.map(f64::ln), means.clone(), variances.map(f64::ln))
    }

    pub fn dims(&self) -> usize {
        self.alpha.value.rows()
    }

    pub fn components(&self) -> usize {
        self.alpha.value.cols()
    }

    /// Row-wise softmax of the logits.
    pub fn weights(&self) -> Matrix {
        let (n, k) = self.alpha.value.shape();
        let mut out = Matrix::zeros(n, k);
        for j in 0..n {
            for (c, w) in softmax_row(self.alpha.value.row(j)).into_iter().enumerate() {
                out.set(j, c, w);
            }
        }
        out
    }

    pub fn variances(&self) -> Matrix {
        self.eta.value.map(f64::exp)
    }

    pub fn means(&self) -> &Matrix {
        &self.mu.value
    }

    pub fn params(&self) -> [&Param; 3] {
        [&self.alpha, &self.mu, &self.eta]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.alpha, &mut self.mu, &mut self.eta]
    }

    pub fn bind(&self, tape: &mut Tape) -> PriorVars {
        PriorVars {
            alpha: tape.param(&self.alpha),
            mu: tape.param(&self.mu),
            eta: tape.param(&self.eta),
        }
    }

    /// Log mixture density of dimension `j` at `z`, evaluated in log space.
    pub fn log_density_scalar(&self, j: usize, z: f64) -> f64 {
        let log_w = log_softmax(self.alpha.value.row(j));
        let mu = self.mu.value.row(j);
        let eta = self.eta.value.row(j);
        let terms: Vec<f64> = (0..log_w.len())
            .map(|k| {
                let d = z - mu[k];
                log_w[k] - HALF_LN_2PI - 0.5 * eta[k] - 0.5 * d * d * (-eta[k]).exp()
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// `Σ_t Σ_j log p_j(z[t, j])` without recording on a tape.
    pub fn log_prior_value(&self, z: &Matrix) -> Result<f64> {
        Ok(mixture_pass(&self.alpha.value, &self.mu.value, &self.eta.value, z, false)?.value)
    }

    /// Raises every log-variance below `floor` to `floor`.
    pub fn clamp_log_variances(&mut self, floor: f64) {
        for e in self.eta.value.as_mut_slice() {
            if *e < floor {
                *e = floor;
            }
        }
    }

    /// Draws `count` i.i.d. samples from the mixture of dimension `j`.
    pub fn sample_from_prior(&self, j: usize, count: usize, seed: u64) -> Vec<f64> {
        let w = softmax_row(self.alpha.value.row(j));
        let mu = self.mu.value.row(j);
        let sd: Vec<f64> = self
            .eta
            .value
            .row(j)
            .iter()
            .map(|e| (0.5 * e).exp())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let k = pick_component(&w, rng.random::<f64>());
                let e: f64 = rng.sample(StandardNormal);
                mu[k] + sd[k] * e
            })
            .collect()
    }

    pub fn snapshot(&self) -> PriorSnapshot {
        let w = self.weights();
        let v = self.variances();
        let dims = (0..self.dims())
            .map(|j| DimSnapshot {
                weights: w.row(j).to_vec(),
                means: self.mu.value.row(j).to_vec(),
                variances: v.row(j).to_vec(),
                logits: self.alpha.value.row(j).to_vec(),
                log_variances: self.eta.value.row(j).to_vec(),
            })
            .collect();
        PriorSnapshot { dims }
    }

    pub fn from_snapshot(s: &PriorSnapshot) -> Result<Self> {
        let n = s.dims.len();
        let k = s.dims.first().map_or(0, |d| d.logits.len());
        if n == 0 || k == 0 {
            return Err(Error::invalid("prior snapshot", "empty"));
        }
        let mut alpha = Vec::with_capacity(n * k);
        let mut mu = Vec::with_capacity(n * k);
        let mut eta = Vec::with_capacity(n * k);
        for d in &s.dims {
            alpha.extend_from_slice(&d.logits);
            mu.extend_from_slice(&d.means);
            eta.extend_from_slice(&d.log_variances);
        }
        Self::from_raw(
            Matrix::from_vec(n, k, alpha)?,
            Matrix::from_vec(n, k, mu)?,
            Matrix::from_vec(n, k, eta)?,
        )
    }
}

/// Records `Σ_t Σ_j log p_j(z[t, j])` on the tape as one fused node.
///
/// The adjoints with respect to `z`, the logits, means and log-variances
/// are computed alongside the value from the component responsibilities.
pub fn log_prior(tape: &mut Tape, prior: PriorVars, z: Var) -> Result<Var> {
    let out = mixture_pass(
        tape.value(prior.alpha),
        tape.value(prior.mu),
        tape.value(prior.eta),
        tape.value(z),
        true,
    )?;
    let grads = out.grads.expect("requested");
    let backward = Box::new(move |g: &Matrix| {
        let s = g.item();
        vec![
            grads.alpha.scale(s),
            grads.mu.scale(s),
            grads.eta.scale(s),
            grads.z.scale(s),
        ]
    });
    Ok(tape.custom(
        "log_prior",
        vec![prior.alpha, prior.mu, prior.eta, z],
        Matrix::scalar(out.value),
        backward,
    ))
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

struct PassGrads {
    alpha: Matrix,
    mu: Matrix,
    eta: Matrix,
    z: Matrix,
}

struct PassOut {
    value: f64,
    grads: Option<PassGrads>,
}

struct ChunkOut {
    value: f64,
    dz: Vec<f64>,
    d_alpha: Vec<f64>,
    d_mu: Vec<f64>,
    d_eta: Vec<f64>,
}

fn mixture_pass(
    alpha: &Matrix,
    mu: &Matrix,
    eta: &Matrix,
    z: &Matrix,
    want_grad: bool,
) -> Result<PassOut> {
    let (n, k) = alpha.shape();
    if z.cols() != n {
        return Err(Error::Shape {
            op: "log_prior",
            left: z.shape(),
            right: alpha.shape(),
        });
    }
    let log_w: Vec<Vec<f64>> = (0..n).map(|j| log_softmax(alpha.row(j))).collect();
    let weights: Vec<Vec<f64>> = log_w
        .iter()
        .map(|r| r.iter().map(|l| l.exp()).collect())
        .collect();
    let inv_var: Vec<f64> = eta.as_slice().iter().map(|e| (-e).exp()).collect();
    // per-component constant: log w - ½ln2π - ½η
    let base: Vec<f64> = (0..n * k)
        .map(|i| log_w[i / k][i % k] - HALF_LN_2PI - 0.5 * eta.as_slice()[i])
        .collect();
    let means = mu.as_slice();

    let chunks = par::map_chunks(z.rows(), par::ROW_CHUNK, n * k * 4, |range| {
        let mut out = ChunkOut {
            value: 0.0,
            dz: if want_grad {
                Vec::with_capacity(range.len() * n)
            } else {
                Vec::new()
            },
            d_alpha: vec![0.0; if want_grad { n * k } else { 0 }],
            d_mu: vec![0.0; if want_grad { n * k } else { 0 }],
            d_eta: vec![0.0; if want_grad { n * k } else { 0 }],
        };
        let mut terms = vec![0.0; k];
        for t in range {
            let row = z.row(t);
            for j in 0..n {
                let zt = row[j];
                let off = j * k;
                let mut max = f64::NEG_INFINITY;
                for c in 0..k {
                    let d = zt - means[off + c];
                    let term = base[off + c] - 0.5 * d * d * inv_var[off + c];
                    terms[c] = term;
                    if term > max {
                        max = term;
                    }
                }
                let mut total = 0.0;
                for term in terms.iter_mut() {
                    *term = (*term - max).exp();
                    total += *term;
                }
                out.value += max + total.ln();
                if want_grad {
                    let mut dz = 0.0;
                    for c in 0..k {
                        let r = terms[c] / total;
                        let d = zt - means[off + c];
                        let scaled = d * inv_var[off + c];
                        dz -= r * scaled;
                        out.d_mu[off + c] += r * scaled;
                        out.d_eta[off + c] += r * 0.5 * (d * scaled - 1.0);
                        out.d_alpha[off + c] += r;
                    }
                    out.dz.push(dz);
                }
            }
        }
        out
    });

    let mut value = 0.0;
    if !want_grad {
        for c in &chunks {
            value += c.value;
        }
        return Ok(PassOut { value, grads: None });
    }
    let mut dz = Vec::with_capacity(z.len());
    let mut d_alpha = vec![0.0; n * k];
    let mut d_mu = vec![0.0; n * k];
    let mut d_eta = vec![0.0; n * k];
    for c in chunks {
        value += c.value;
        dz.extend_from_slice(&c.dz);
        for i in 0..n * k {
            d_alpha[i] += c.d_alpha[i];
            d_mu[i] += c.d_mu[i];
            d_eta[i] += c.d_eta[i];
        }
    }
    // softmax Jacobian: Σ_t (r_tk - w_k)
    let t = z.rows() as f64;
    for i in 0..n * k {
        d_alpha[i] -= t * weights[i / k][i % k];
    }
    Ok(PassOut {
        value,
        grads: Some(PassGrads {
            alpha: Matrix::from_vec(n, k, d_alpha)?,
            mu: Matrix::from_vec(n, k, d_mu)?,
            eta: Matrix::from_vec(n, k, d_eta)?,
            z: Matrix::from_vec(z.rows(), n, dz)?,
        }),
    })
}

/// Constrained and raw view of one prior dimension, for checkpoints and plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSnapshot {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSnapshot {
    pub dims: Vec<DimSnapshot>,
}

/// Gaussian log density in terms of the log-variance.
pub fn log_normal(z: f64, mean: f64, log_var: f64) -> f64 {
    let d = z - mean;
    -HALF_LN_2PI - 0.5 * log_var - 0.5 * d * d * (-log_var).exp()
}

/// Density of a 1-D mixture given explicit weights, means, variances.
pub fn mixture_density(weights: &[f64], means: &[f64], variances: &[f64], z: f64) -> f64 {
    let terms: Vec<f64> = (0..weights.len())
        .map(|k| weights[k].ln() + log_normal(z, means[k], variances[k].ln()))
        .collect();
    log_sum_exp(&terms).exp()
}
