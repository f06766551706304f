//! Encoder, decoder and the source-wise shared-variance posterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnum::{Param, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prior::{GmmPriorParams, PriorVars};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Dense layer storing its weight input-major (`in x out`): `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, `hidden` activation on every
    /// layer but the last, which is always identity.
    pub fn glorot<R: Rng>(name: &str, sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
                Layer {
                    weight: Param::new(format!("{name}.{i}.weight"), weight),
                    bias: Param::new(format!("{name}.{i}.bias"), Matrix::zeros(1, fan_out)),
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp", "no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape {
                    op: "mlp chain",
                    left: pair[0].weight.value.shape(),
                    right: pair[1].weight.value.shape(),
                });
            }
        }
        for l in &layers {
            if l.bias.value.shape() != (1, l.output_dim()) {
                return Err(Error::Shape {
                    op: "mlp bias",
                    left: l.weight.value.shape(),
                    right: l.bias.value.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Layer::output_dim));
        w
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                left: x.shape(),
                right: self.layers[0].weight.value.shape(),
            });
        }
        Ok(())
    }

    /// Row-wise forward pass without recording.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = h
                .matmul(&l.weight.value)?
                .row_broadcast(&l.bias.value, "bias", |a, b| a + b)?;
            if l.activation == Activation::Tanh {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(&l.weight), tape.param(&l.bias), l.activation))
                .collect(),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                left: tape.shape(x),
                right: self.layers[0].weight.value.shape(),
            });
        }
        let mut h = x;
        for &(w, b, act) in &vars.layers {
            let lin = tape.matmul(h, w)?;
            h = tape.add_row(lin, b)?;
            if act == Activation::Tanh {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Posterior means `μ_t = f_φ(y_t)`.
pub fn encode(enc: &Mlp, y: &Matrix) -> Result<Matrix> {
    enc.forward(y)
}

/// Reconstructions `ŷ_t = g_θ(z_t)`.
pub fn decode(dec: &Mlp, z: &Matrix) -> Result<Matrix> {
    dec.forward(z)
}

/// Per-sample means plus one log-variance per latent dimension, shared
/// across all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub mu: Matrix,
    pub log_var: Vec<f64>,
}

fn check_posterior_shapes(
    mu: (usize, usize),
    log_var: (usize, usize),
    z: (usize, usize),
) -> Result<()> {
    if mu != z {
        return Err(Error::Shape {
            op: "log_posterior",
            left: mu,
            right: z,
        });
    }
    if log_var != (1, mu.1) {
        return Err(Error::Shape {
            op: "log_posterior log_var",
            left: mu,
            right: log_var,
        });
    }
    Ok(())
}

impl PosteriorState {
    /// `Σ_j Σ_t log N(z[t,j] | μ[t,j], exp(log_var[j]))`.
    pub fn log_density(&self, z: &Matrix) -> Result<f64> {
        check_posterior_shapes(self.mu.shape(), (1, self.log_var.len()), z.shape())?;
        let n = z.cols();
        let inv: Vec<f64> = self.log_var.iter().map(|l| (-l).exp()).collect();
        let mut quad = 0.0;
        for t in 0..z.rows() {
            for j in 0..n {
                let d = z.get(t, j) - self.mu.get(t, j);
                quad += d * d * inv[j];
            }
        }
        let rows = z.rows() as f64;
        Ok(-(rows * n as f64) * HALF_LN_2PI
            - 0.5 * rows * self.log_var.iter().sum::<f64>()
            - 0.5 * quad)
    }
}

/// Records `log q(Z | Y)` under the shared-variance Gaussian posterior.
pub fn log_posterior(tape: &mut Tape, mu: Var, log_var: Var, z: Var) -> Result<Var> {
    check_posterior_shapes(tape.shape(mu), tape.shape(log_var), tape.shape(z))?;
    let (rows, n) = tape.shape(z);
    let diff = tape.sub(z, mu)?;
    let sq = tape.square(diff);
    let neg = tape.scale(log_var, -1.0);
    let inv_var = tape.exp(neg);
    let weighted = tape.mul_row(sq, inv_var)?;
    let quad = tape.sum(weighted);
    let quad = tape.scale(quad, -0.5);
    let lv_sum = tape.sum(log_var);
    let norm = tape.scale(lv_sum, -0.5 * rows as f64);
    let total = tape.add(quad, norm)?;
    Ok(tape.offset(total, -((rows * n) as f64) * HALF_LN_2PI))
}

/// How observations are rescaled before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputScaling {
    None,
    /// Per-column zero mean, unit standard deviation.
    Zscore,
    /// Zero mean, identity covariance (symmetric `Σ^{-1/2}`).
    Whiten,
}

/// Affine map `x ↦ (x − mean)·matrix` applied to observations before
/// encoding; reconstructions live in the transformed space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub mean: Vec<f64>,
    pub matrix: Matrix,
}

impl InputTransform {
    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            matrix: Matrix::identity(cols),
        }
    }

    pub fn fit(y: &Matrix, scaling: InputScaling) -> Result<Self> {
        match scaling {
            InputScaling::None => Ok(Self::identity(y.cols())),
            InputScaling::Zscore => Self::zscore(y),
            InputScaling::Whiten => Self::whiten(y),
        }
    }

    pub fn zscore(y: &Matrix) -> Result<Self> {
        let (mean, cov) = moments(y)?;
        let m = y.cols();
        let mut matrix = Matrix::zeros(m, m);
        for c in 0..m {
            let var = cov.get(c, c);
            if !(var > 0.0) {
                return Err(Error::DegenerateColumn { column: c });
            }
            matrix.set(c, c, 1.0 / var.sqrt());
        }
        Ok(Self { mean, matrix })
    }

    pub fn whiten(y: &Matrix) -> Result<Self> {
        let (mean, cov) = moments(y)?;
        let m = y.cols();
        for c in 0..m {
            if !(cov.get(c, c) > 0.0) {
                return Err(Error::DegenerateColumn { column: c });
            }
        }
        let eig = nalgebra::DMatrix::from_row_slice(m, m, cov.as_slice()).symmetric_eigen();
        let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if let Some(k) = eig.eigenvalues.iter().position(|&v| !(v > 1e-12 * largest)) {
            return Err(Error::invalid(
                "observations",
                format!(
                    "covariance is singular (eigenvalue {k} is {:e})",
                    eig.eigenvalues[k]
                ),
            ));
        }
        let inv_sqrt = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        let matrix = Matrix::from_fn(m, m, |r, c| 0.5 * (w[(r, c)] + w[(c, r)]));
        Ok(Self { mean, matrix })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "input transform",
                left: x.shape(),
                right: (1, self.mean.len()),
            });
        }
        Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - self.mean[c]).matmul(&self.matrix)
    }
}

/// Column means and the unbiased covariance.
fn moments(y: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let t = y.rows();
    if t < 2 {
        return Err(Error::invalid("observations", "need at least 2 rows"));
    }
    let mean: Vec<f64> = (0..y.cols())
        .map(|c| y.column(c).iter().sum::<f64>() / t as f64)
        .collect();
    let centered = Matrix::from_fn(t, y.cols(), |r, c| y.get(r, c) - mean[c]);
    let cov = centered.t_matmul(&centered)?.scale(1.0 / (t - 1) as f64);
    Ok((mean, cov))
}

/// Network shapes for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Architecture {
    /// One tanh hidden layer of 16 in the encoder, affine decoder.
    pub fn linear() -> Self {
        Self {
            encoder_hidden: vec![16],
            decoder_hidden: vec![],
            activation: Activation::Tanh,
        }
    }

    /// Encoder 32-32, decoder 16-16, tanh throughout.
    pub fn nonlinear() -> Self {
        Self {
            encoder_hidden: vec![32, 32],
            decoder_hidden: vec![16, 16],
            activation: Activation::Tanh,
        }
    }
}

/// Initial posterior log-variance per latent dimension, `ln 0.01`.
pub const INITIAL_POSTERIOR_LOG_VAR: f64 = -4.605_170_185_988_091;

/// Complete trainable model.
#[derive(Debug, Clone, PartialEq)]
pub struct PdgmmVae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// `1 x n` source-wise posterior log-variances.
    pub log_var: Param,
    pub prior: GmmPriorParams,
    pub input: InputTransform,
}

/// Tape handles for every model parameter.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: MlpVars,
    pub decoder: MlpVars,
    pub log_var: Var,
    pub prior: PriorVars,
}

impl PdgmmVae {
    pub fn init(
        observed: usize,
        sources: usize,
        components: usize,
        arch: &Architecture,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc_sizes = vec![observed];
        enc_sizes.extend(&arch.encoder_hidden);
        enc_sizes.push(sources);
        let mut dec_sizes = vec![sources];
        dec_sizes.extend(&arch.decoder_hidden);
        dec_sizes.push(observed);
        Self {
            encoder: Mlp::glorot("encoder", &enc_sizes, arch.activation, &mut rng),
            decoder: Mlp::glorot("decoder", &dec_sizes, arch.activation, &mut rng),
            log_var: Param::new(
                "posterior.log_var",
                Matrix::filled(1, sources, INITIAL_POSTERIOR_LOG_VAR),
            ),
            prior: GmmPriorParams::init(sources, components),
            input: InputTransform::identity(observed),
        }
    }

    pub fn sources(&self) -> usize {
        self.log_var.value.cols()
    }

    pub fn observed(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn architecture(&self) -> Architecture {
        let inner = |m: &Mlp| {
            let w = m.widths();
            w[1..w.len() - 1].to_vec()
        };
        let activation = self
            .encoder
            .layers
            .iter()
            .chain(&self.decoder.layers)
            .map(|l| l.activation)
            .find(|&a| a != Activation::Identity)
            .unwrap_or(Activation::Tanh);
        Architecture {
            encoder_hidden: inner(&self.encoder),
            decoder_hidden: inner(&self.decoder),
            activation,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
            log_var: tape.param(&self.log_var),
            prior: self.prior.bind(tape),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v.push(&self.log_var);
        v.extend(self.prior.params());
        v
    }

    /// All trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v.push(&mut self.log_var);
        v.extend(self.prior.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Concatenation of every parameter value in [`Self::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.as_slice().to_vec())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for p in self.params_mut() {
            let len = p.value.len();
            p.value.as_mut_slice().copy_from_slice(&flat[at..at + len]);
            at += len;
        }
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.as_slice().to_vec())
            .collect()
    }

    /// Posterior means for raw (unstandardized) observations.
    pub fn posterior_means(&self, y: &Matrix) -> Result<Matrix> {
        encode(&self.encoder, &self.input.apply(y)?)
    }

    pub fn posterior_variances(&self) -> Vec<f64> {
        self.log_var
            .value
            .as_slice()
            .iter()
            .map(|l| l.exp())
            .collect()
    }

    pub fn posterior(&self, y: &Matrix) -> Result<PosteriorState> {
        Ok(PosteriorState {
            mu: self.posterior_means(y)?,
            log_var: self.log_var.value.as_slice().to_vec(),
        })
    }
}
