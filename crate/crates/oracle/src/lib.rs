//! Deliberately naive reference implementations.
//!
//! Nothing in here shares code with `pdgmm-core`: every routine is written
//! against plain slices and `Vec<f64>` so that a bug in the optimized path
//! cannot silently propagate into the value it is checked against.

use std::f64::consts::PI;
use std::fmt;

/// Central finite-difference settings and the tolerance pair used to judge
/// an analytic gradient against them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSpec {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

impl FiniteDiffSpec {
    pub fn new(step: f64) -> Self {
        assert!(step > 0.0, "finite-difference step must be positive");
        Self {
            step,
            ..Self::default()
        }
    }

    /// Relative error test with an absolute floor for tiny gradients.
    pub fn agrees(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        if analytic.abs().max(numeric.abs()) < 1e-3 {
            return diff <= self.abs_floor
                || diff <= self.rel_tol * analytic.abs().max(numeric.abs());
        }
        diff <= self.rel_tol * analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteEval {
    pub coordinate: usize,
}

impl fmt::Display for NonFiniteEval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "function not finite near coordinate {}", self.coordinate)
    }
}

impl std::error::Error for NonFiniteEval {}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn fd_gradient<F>(mut f: F, x: &[f64], spec: &FiniteDiffSpec) -> Result<Vec<f64>, NonFiniteEval>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + spec.step;
        let plus = f(&probe);
        probe[i] = orig - spec.step;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NonFiniteEval { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * spec.step));
    }
    Ok(grad)
}

/// Row-major triple loop, `a` is `n x k`, `b` is `k x m`.
pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * k);
    assert_eq!(b.len(), k * m);
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * m + j];
            }
            c[i * m + j] = acc;
        }
    }
    c
}

/// Literal weighted sum of Gaussian densities. No log-space tricks.
pub fn gmm_density_direct(weights: &[f64], means: &[f64], variances: &[f64], z: f64) -> f64 {
    assert_eq!(weights.len(), means.len());
    assert_eq!(weights.len(), variances.len());
    let mut total = 0.0;
    for k in 0..weights.len() {
        let v = variances[k];
        let d = z - means[k];
        total += weights[k] / (2.0 * PI * v).sqrt() * (-d * d / (2.0 * v)).exp();
    }
    total
}

/// Softmax by direct exponentiation after shifting by the first element.
pub fn softmax_direct(logits: &[f64]) -> Vec<f64> {
    let shift = logits[0];
    let e: Vec<f64> = logits.iter().map(|&l| (l - shift).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pearson correlation computed with two passes.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TooLarge(pub usize);

impl fmt::Display for TooLarge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "exhaustive matching refused for n = {} (limit 6)",
            self.0
        )
    }
}

impl std::error::Error for TooLarge {}

/// Enumerates every permutation of `0..n` and returns the one maximizing
/// `sum_i |corr[i][perm[i]]|` together with that objective.
pub fn exhaustive_match(corr: &[Vec<f64>]) -> Result<(Vec<usize>, f64), TooLarge> {
    let n = corr.len();
    if n > 6 {
        return Err(TooLarge(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), f64::NEG_INFINITY);
    permute(&mut perm, 0, corr, &mut best);
    Ok(best)
}

fn permute(perm: &mut Vec<usize>, at: usize, corr: &[Vec<f64>], best: &mut (Vec<usize>, f64)) {
    if at == perm.len() {
        let score: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| corr[i][j].abs())
            .sum();
        if score > best.1 {
            *best = (perm.clone(), score);
        }
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, corr, best);
        perm.swap(at, i);
    }
}

/// Composite Simpson rule on `[a, b]` with `intervals` (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}
