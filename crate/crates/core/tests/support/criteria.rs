//! Checks shared by the core integration tests and the acceptance suite.
//! Each returns a verdict plus a one-line detail instead of panicking.

use pdgmm_core::diffnum::{softmax_row, Tape};
use pdgmm_core::evalsep::match_sources;
use pdgmm_core::model::log_posterior;
use pdgmm_core::prior::GmmPriorParams;
use pdgmm_core::trainer::{draw_noise, reparameterize_with};
use pdgmm_core::Matrix;
use pdgmm_oracle::{exhaustive_match, gmm_density_direct, simpson};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

/// Weights, means, variances of a one-dimensional mixture.
pub type Mixture = (Vec<f64>, Vec<f64>, Vec<f64>);

pub fn random_mixture(rng: &mut ChaCha8Rng, k: usize, log_var: (f64, f64)) -> Mixture {
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let weights = softmax_row(&logits);
    let means = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
    let vars = (0..k)
        .map(|_| rng.random_range(log_var.0..log_var.1).exp())
        .collect();
    (weights, means, vars)
}

/// Prior with `n` dims of `k` components each.
pub fn random_prior(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    log_var: (f64, f64),
) -> GmmPriorParams {
    let dims: Vec<_> = (0..n).map(|_| random_mixture(rng, k, log_var)).collect();
    let stack = |f: &dyn Fn(&Mixture) -> Vec<f64>| {
        Matrix::from_rows(&dims.iter().map(f).collect::<Vec<_>>())
    };
    GmmPriorParams::from_constrained(
        &stack(&|d| d.0.clone()),
        &stack(&|d| d.1.clone()),
        &stack(&|d| d.2.clone()),
    )
    .expect("valid mixture")
}

fn single(w: &[f64], m: &[f64], v: &[f64]) -> GmmPriorParams {
    GmmPriorParams::from_constrained(
        &Matrix::row_vector(w),
        &Matrix::row_vector(m),
        &Matrix::row_vector(v),
    )
    .expect("valid mixture")
}

/// Log-space mixture density vs the direct sum on `pairs` pairs with
/// representable density, plus finiteness far in the tails.
pub fn density_oracle(pairs: usize, extreme: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    while compared < pairs {
        let k = rng.random_range(1..=5);
        let (w, m, v) = random_mixture(&mut rng, k, (-4.0, 2.0));
        let z = rng.random_range(-12.0..12.0);
        let direct = gmm_density_direct(&w, &m, &v, z);
        if direct <= 1e-300 {
            continue;
        }
        let logspace = single(&w, &m, &v).log_density_scalar(0, z).exp();
        worst = worst.max((logspace - direct).abs());
        compared += 1;
    }
    let mut finite = 0;
    let mut tried = 0;
    while tried < extreme {
        let k = rng.random_range(1..=5);
        let (w, m, v) = random_mixture(&mut rng, k, (-9.0, -4.0));
        let z = rng.random_range(60.0..1e4) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if gmm_density_direct(&w, &m, &v, z) != 0.0 {
            continue;
        }
        tried += 1;
        if single(&w, &m, &v).log_density_scalar(0, z).is_finite() {
            finite += 1;
        }
    }
    Check {
        passed: worst <= 1e-10 && finite == extreme,
        detail: format!("max abs error {worst:.3e} over {compared} pairs, {finite}/{extreme} underflow pairs finite"),
    }
}

/// Monte-Carlo `E_q[log q - log p]` for random posterior/prior pairs.
pub fn mc_kl(configs: usize, draws: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lowest = f64::INFINITY;
    for _ in 0..configs {
        let n = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let prior = random_prior(&mut rng, n, k, (-2.0, 1.0));
        let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let log_var: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..1.0)).collect();
        let mu = Matrix::from_fn(draws, n, |_, j| mean[j]);
        let eps = draw_noise(&mut rng, draws, n);
        let z = reparameterize_with(&mu, &log_var, &eps).unwrap();

        let mut tape = Tape::new();
        let (mu_v, lv_v, z_v) = (
            tape.constant(mu),
            tape.constant(Matrix::row_vector(&log_var)),
            tape.constant(z.clone()),
        );
        let lq = log_posterior(&mut tape, mu_v, lv_v, z_v).unwrap();
        let log_q = tape.value(lq).item();
        let log_p = prior.log_prior_value(&z).unwrap();
        lowest = lowest.min((log_q - log_p) / draws as f64);
    }
    Check {
        passed: lowest >= -0.01,
        detail: format!("lowest estimate {lowest:.4} over {configs} configs x {draws} draws"),
    }
}

fn correlated_problem(rng: &mut ChaCha8Rng, n: usize, rows: usize) -> (Matrix, Matrix) {
    let z = draw_noise(rng, rows, n);
    let mix = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            rng.random_range(-0.6..0.6)
        }
    });
    let noise = draw_noise(rng, rows, n).scale(0.3);
    (z.clone(), z.matmul(&mix).unwrap().add(&noise).unwrap())
}

/// Permute and flip estimate columns; the sorted |corr| multiset must not
/// move and the assignment must match brute force for n <= 4.
pub fn match_invariance(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut oracle_checked = 0;
    let mut oracle_disagree = 0;
    for trial in 0..trials {
        let n = 2 + trial % 5;
        let (z, est) = correlated_problem(&mut rng, n, 400);
        let base = match_sources(&z, &est).unwrap();
        let mut sorted = base.abs_corrs.clone();
        sorted.sort_by(f64::total_cmp);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let flips: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { -1.0 } else { 1.0 })
            .collect();
        let moved = Matrix::from_fn(est.rows(), n, |r, c| flips[c] * est.get(r, perm[c]));
        let m = match_sources(&z, &moved).unwrap();
        let mut got = m.abs_corrs.clone();
        got.sort_by(f64::total_cmp);
        for (a, b) in sorted.iter().zip(&got) {
            worst = worst.max((a - b).abs());
        }

        if n <= 4 {
            for result in [&base, &m] {
                oracle_checked += 1;
                let (best, objective) = exhaustive_match(&result.correlation).unwrap();
                if best != result.assignment || (objective - result.objective()).abs() > 1e-12 {
                    oracle_disagree += 1;
                }
            }
        }
    }
    Check {
        passed: worst <= 1e-12 && oracle_disagree == 0 && oracle_checked > 0,
        detail: format!(
            "max sorted |corr| shift {worst:.2e} over {trials} trials, oracle disagreements {oracle_disagree}/{oracle_checked}"
        ),
    }
}

/// Simpson integral of each prior dimension's density. The interval
/// is sized to resolve the narrowest component.
pub fn prior_normalization(prior: &GmmPriorParams) -> Check {
    let snap = prior.snapshot();
    let mut worst: f64 = 0.0;
    for (j, d) in snap.dims.iter().enumerate() {
        let sds: Vec<f64> = d.variances.iter().map(|v| v.sqrt()).collect();
        let lo = d
            .means
            .iter()
            .zip(&sds)
            .map(|(m, s)| m - 40.0 * s)
            .fold(f64::INFINITY, f64::min);
        let hi = d
            .means
            .iter()
            .zip(&sds)
            .map(|(m, s)| m + 40.0 * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let narrow = sds.iter().cloned().fold(f64::INFINITY, f64::min);
        let intervals = ((hi - lo) / (narrow / 20.0)).ceil().max(1e5) as usize;
        let mass = simpson(|z| prior.log_density_scalar(j, z).exp(), lo, hi, intervals);
        worst = worst.max((mass - 1.0).abs());
    }
    Check {
        passed: worst <= 1e-6,
        detail: format!(
            "max |integral - 1| = {worst:.3e} over {} dims",
            snap.dims.len()
        ),
    }
}
