//! Training loss: scaled reconstruction error plus a β-weighted
//! single-sample estimate of `KL(q ‖ p)`, both normalized per observed entry.

use serde::{Deserialize, Serialize};

use crate::diffnum::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{log_posterior, PdgmmVae};
use crate::prior::log_prior;
use crate::trainer::reparameterize_tape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub kl_surrogate: f64,
    pub log_q: f64,
    pub log_p: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.rec,
            self.kl_surrogate,
            self.log_q,
            self.log_p,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// The two objective constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub v_y: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(
                "beta",
                format!("must be > 0, got {}", self.beta),
            ));
        }
        if !(self.v_y > 0.0 && self.v_y.is_finite()) {
            return Err(Error::invalid(
                "v_y",
                format!("must be > 0, got {}", self.v_y),
            ));
        }
        Ok(())
    }
}

/// `Σ‖ŷ_t − y_t‖² / (2·v_y·T·m)`.
pub fn rec_loss(tape: &mut Tape, y_hat: Var, y: Var, v_y: f64) -> Result<Var> {
    if !(v_y > 0.0) {
        return Err(Error::invalid("v_y", format!("must be > 0, got {v_y}")));
    }
    let (t, m) = tape.shape(y);
    let diff = tape.sub(y_hat, y)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / (2.0 * v_y * (t * m) as f64)))
}

/// `β·(log q − log p)/(T·m)`.
pub fn kl_surrogate(
    tape: &mut Tape,
    log_q: Var,
    log_p: Var,
    beta: f64,
    rows: usize,
    observed: usize,
) -> Result<Var> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", format!("must be > 0, got {beta}")));
    }
    let d = tape.sub(log_q, log_p)?;
    Ok(tape.scale(d, beta / (rows * observed) as f64))
}

/// Records the whole objective for observations `y` (already standardized)
/// and the frozen noise `eps`.
pub fn total_loss(
    tape: &mut Tape,
    model: &PdgmmVae,
    y: &Matrix,
    eps: &Matrix,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let (rows, observed) = y.shape();
    let vars = model.bind(tape);
    let y_var = tape.constant(y.clone());
    let eps_var = tape.constant(eps.clone());

    let mu = model.encoder.forward_tape(tape, &vars.encoder, y_var)?;
    let z = reparameterize_tape(tape, mu, vars.log_var, eps_var)?;
    let y_hat = model.decoder.forward_tape(tape, &vars.decoder, z)?;
    let rec = rec_loss(tape, y_hat, y_var, weights.v_y)?;
    let log_q = log_posterior(tape, mu, vars.log_var, z)?;
    let log_p = log_prior(tape, vars.prior, z)?;
    let kl = kl_surrogate(tape, log_q, log_p, weights.beta, rows, observed)?;
    let total = tape.add(rec, kl)?;

    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        rec: tape.value(rec).item(),
        kl_surrogate: tape.value(kl).item(),
        log_q: tape.value(log_q).item(),
        log_p: tape.value(log_p).item(),
    };
    Ok((total, breakdown))
}

/// Loss value only.
pub fn evaluate(
    model: &PdgmmVae,
    y: &Matrix,
    eps: &Matrix,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    Ok(total_loss(&mut tape, model, y, eps, weights)?.1)
}

/// Loss value with every parameter's `grad` populated.
pub fn loss_and_grads(
    model: &mut PdgmmVae,
    y: &Matrix,
    eps: &Matrix,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let (loss, breakdown) = total_loss(&mut tape, model, y, eps, weights)?;
    tape.backward_into(loss, &mut model.params_mut())?;
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    #[test]
    fn rec_loss_cases() {
        let mut tape = Tape::new();
        let y = tape.constant(Matrix::from_rows(&[[1.0, 2.0]]));
        let r = rec_loss(&mut tape, y, y, 0.5).unwrap();
        assert_eq!(tape.value(r).item(), 0.0);

        let mut tape = Tape::new();
        let yh = tape.constant(Matrix::scalar(3.0));
        let y = tape.constant(Matrix::scalar(1.0));
        let r = rec_loss(&mut tape, yh, y, 1.0).unwrap();
        assert_eq!(tape.value(r).item(), 2.0);

        assert!(rec_loss(&mut tape, yh, y, 0.0).is_err());
        let wide = tape.constant(Matrix::zeros(1, 2));
        assert!(matches!(
            rec_loss(&mut tape, wide, y, 1.0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn rec_loss_matches_double_loop() {
        let a = Matrix::from_fn(7, 3, |r, c| ((r * 3 + c) as f64 * 0.61).sin());
        let b = Matrix::from_fn(7, 3, |r, c| ((r + 5 * c) as f64 * 0.23).cos());
        let mut expected = 0.0;
        for r in 0..7 {
            for c in 0..3 {
                expected += (a.get(r, c) - b.get(r, c)).powi(2);
            }
        }
        expected /= 2.0 * 0.01 * 21.0;
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a), tape.constant(b));
        let r = rec_loss(&mut tape, av, bv, 0.01).unwrap();
        assert!((tape.value(r).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_surrogate_cases() {
        let mut tape = Tape::new();
        let q = tape.constant(Matrix::scalar(-3.0));
        let k = kl_surrogate(&mut tape, q, q, 1.0, 4, 2).unwrap();
        assert_eq!(tape.value(k).item(), 0.0);

        let q = tape.constant(Matrix::scalar(8.0));
        let p = tape.constant(Matrix::scalar(0.0));
        let k = kl_surrogate(&mut tape, q, p, 1.0, 4, 2).unwrap();
        assert_eq!(tape.value(k).item(), 1.0);
        assert!(kl_surrogate(&mut tape, q, p, 0.0, 4, 2).is_err());
        assert!(kl_surrogate(&mut tape, q, p, -1.0, 4, 2).is_err());
    }

    fn toy() -> (PdgmmVae, Matrix, Matrix) {
        let model = PdgmmVae::init(2, 2, 2, &Architecture::linear(), 3);
        let y = Matrix::from_rows(&[[0.5, -1.0], [1.2, 0.3], [-0.7, 0.9], [0.1, -0.2]]);
        let eps = Matrix::from_rows(&[[0.3, -0.5], [1.1, 0.2], [-0.4, -1.3], [0.8, 0.6]]);
        (model, y, eps)
    }

    #[test]
    fn total_is_rec_plus_kl() {
        let (model, y, eps) = toy();
        let b = evaluate(
            &model,
            &y,
            &eps,
            LossWeights {
                beta: 0.7,
                v_y: 0.05,
            },
        )
        .unwrap();
        assert!((b.total - (b.rec + b.kl_surrogate)).abs() <= 1e-12);
        assert!(b.is_finite());
    }

    #[test]
    fn tiny_beta_leaves_reconstruction() {
        let (model, y, eps) = toy();
        let b = evaluate(
            &model,
            &y,
            &eps,
            LossWeights {
                beta: 1e-12,
                v_y: 0.05,
            },
        )
        .unwrap();
        assert!((b.total - b.rec).abs() <= 1e-9);
    }

    #[test]
    fn vanishing_noise_reconstructs_from_means() {
        let (mut model, y, eps) = toy();
        model.log_var.value = Matrix::filled(1, 2, -60.0);
        let v_y = 0.05;
        let b = evaluate(&model, &y, &eps, LossWeights { beta: 1.0, v_y }).unwrap();
        let y_hat = model
            .decoder
            .forward(&model.encoder.forward(&y).unwrap())
            .unwrap();
        let mse = y_hat.sub(&y).unwrap().map(|d| d * d).sum() / (2.0 * v_y * 8.0);
        assert!((b.rec - mse).abs() <= 1e-9);
    }

    #[test]
    fn invalid_weights_rejected() {
        let (model, y, eps) = toy();
        assert!(evaluate(
            &model,
            &y,
            &eps,
            LossWeights {
                beta: 0.0,
                v_y: 1.0
            }
        )
        .is_err());
        assert!(evaluate(
            &model,
            &y,
            &eps,
            LossWeights {
                beta: 1.0,
                v_y: -1.0
            }
        )
        .is_err());
    }
}
