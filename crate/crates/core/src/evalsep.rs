//! Source-recovery metrics that respect the sign and permutation
//! indeterminacy of ICA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prior::GmmPriorParams;

/// Column-wise standardization with the `T - 1` divisor.
pub fn zscore(x: &Matrix) -> Result<Matrix> {
    let (rows, cols) = x.shape();
    let mut out = x.clone();
    for c in 0..cols {
        let col = x.column(c);
        let (mean, std) = mean_std(&col);
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::DegenerateColumn { column: c });
        }
        for r in 0..rows {
            out.set(r, c, (col[r] - mean) / std);
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation (`T - 1`), two-pass.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `corr[i][j]` = Pearson correlation of `a` column `i` with `b` column `j`.
pub fn correlation_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "correlation",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let za = zscore(a)?;
    let zb = zscore(b)?;
    let denom = (a.rows() - 1) as f64;
    Ok(za.t_matmul(&zb)?.scale(1.0 / denom))
}

/// Minimum-cost perfect assignment on a square cost matrix.
///
/// Shortest augmenting path with dual potentials, `O(n³)`. Returns
/// `assignment[row] = column`.
pub fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "assignment needs a square cost matrix");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `assignment[j]` is the estimated column paired with true source `j`.
    pub assignment: Vec<usize>,
    pub signs: Vec<i8>,
    pub abs_corrs: Vec<f64>,
    /// `correlation[i][j]` between true column `i` and estimated column `j`.
    pub correlation: Vec<Vec<f64>>,
}

impl MatchResult {
    pub fn mean_abs_corr(&self) -> f64 {
        self.abs_corrs.iter().sum::<f64>() / self.abs_corrs.len() as f64
    }

    pub fn min_abs_corr(&self) -> f64 {
        self.abs_corrs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn objective(&self) -> f64 {
        self.abs_corrs.iter().sum()
    }
}

/// Pairs estimated sources with true ones maximizing `Σ|corr|`.
pub fn match_sources(z_true: &Matrix, z_est: &Matrix) -> Result<MatchResult> {
    if z_true.shape() != z_est.shape() {
        return Err(Error::Shape {
            op: "match_sources",
            left: z_true.shape(),
            right: z_est.shape(),
        });
    }
    if z_true.rows() < 3 {
        return Err(Error::invalid(
            "samples",
            "need at least 3 rows to correlate",
        ));
    }
    let corr = correlation_matrix(z_true, z_est)?;
    let assignment = hungarian(&corr.map(|c| -c.abs()));
    let n = corr.rows();
    let signs = (0..n)
        .map(|j| {
            if corr.get(j, assignment[j]) < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect();
    let abs_corrs = (0..n).map(|j| corr.get(j, assignment[j]).abs()).collect();
    Ok(MatchResult {
        assignment,
        signs,
        abs_corrs,
        correlation: (0..n).map(|r| corr.row(r).to_vec()).collect(),
    })
}

/// Histogram on shared bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, width: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
            counts[b] += 1;
        }
        Self {
            lo,
            width,
            counts,
            total: values.len(),
        }
    }

    pub fn density_at(&self, x: f64) -> f64 {
        let pos = (x - self.lo) / self.width;
        if pos < 0.0 || pos >= self.counts.len() as f64 {
            return 0.0;
        }
        self.counts[pos as usize] as f64 / (self.total as f64 * self.width)
    }

    fn mass(&self, b: usize) -> f64 {
        self.counts[b] as f64 / self.total as f64
    }
}

/// Freedman–Diaconis bin width (falls back to Scott's rule when the IQR is 0).
pub fn freedman_diaconis_width(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let n = s.len() as f64;
    let w = 2.0 * iqr * n.powf(-1.0 / 3.0);
    if w > 0.0 {
        w
    } else {
        let (_, sd) = mean_std(&s);
        (3.49 * sd * n.powf(-1.0 / 3.0)).max(1e-12)
    }
}

pub fn total_variation(a: &Histogram, b: &Histogram) -> f64 {
    assert_eq!(a.counts.len(), b.counts.len());
    0.5 * (0..a.counts.len())
        .map(|i| (a.mass(i) - b.mass(i)).abs())
        .sum::<f64>()
}

const GRID_POINTS: usize = 401;
const MAX_BINS: usize = 2000;

/// Density comparison for one matched source pair on the z-scored scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub grid: Vec<f64>,
    pub learned_density: Vec<f64>,
    pub true_hist: Vec<f64>,
    pub est_hist: Vec<f64>,
    pub tv_distance: f64,
    pub bins: usize,
}

impl MarginalReport {
    pub fn to_csv(&self) -> String {
        let header = ["grid", "learned_density", "true_hist", "est_hist"].map(String::from);
        let rows: Vec<Vec<f64>> = (0..self.grid.len())
            .map(|i| {
                vec![
                    self.grid[i],
                    self.learned_density[i],
                    self.true_hist[i],
                    self.est_hist[i],
                ]
            })
            .collect();
        crate::csvio::to_csv_string(&header, &rows)
    }
}

/// Which learned prior dimension belongs to an estimated column, and how
/// the column is oriented relative to its true source.
#[derive(Debug, Clone, Copy)]
pub struct MarginalPairing {
    pub prior_dim: usize,
    pub posterior_var: f64,
    pub sign: f64,
}

/// Compares true source, estimated source and learned prior.
///
/// Both samples are z-scored (the estimate also sign-aligned). The prior,
/// which lives on the raw latent scale, is mapped through the same affine
/// standardization using the mean and standard deviation of posterior
/// samples (`var(μ) + σ²`).
pub fn marginal_report(
    prior: &GmmPriorParams,
    pairing: MarginalPairing,
    true_col: &[f64],
    est_col: &[f64],
) -> Result<MarginalReport> {
    if true_col.len() != est_col.len() {
        return Err(Error::Shape {
            op: "marginal_report",
            left: (true_col.len(), 1),
            right: (est_col.len(), 1),
        });
    }
    let standardize = |v: &[f64], column: usize| -> Result<(Vec<f64>, f64, f64)> {
        let (m, s) = mean_std(v);
        if !(s > 0.0) {
            return Err(Error::DegenerateColumn { column });
        }
        Ok((v.iter().map(|x| (x - m) / s).collect(), m, s))
    };
    let (t, _, _) = standardize(true_col, 0)?;
    let (e, est_mean, est_sd) = standardize(est_col, 1)?;
    let e: Vec<f64> = e.into_iter().map(|x| pairing.sign * x).collect();

    let tmin = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let tmax = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tmin.min(e.iter().cloned().fold(f64::INFINITY, f64::min));
    let hi = tmax.max(e.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let mut width = freedman_diaconis_width(&t);
    let mut bins = ((hi - lo) / width).ceil().max(1.0) as usize;
    if bins > MAX_BINS {
        bins = MAX_BINS;
        width = (hi - lo) / bins as f64;
    }
    // keep the maximum inside the last bin
    let width = width * (1.0 + 1e-12);
    let th = Histogram::new(&t, lo, width, bins);
    let eh = Histogram::new(&e, lo, width, bins);

    let sample_sd = (est_sd * est_sd + pairing.posterior_var).sqrt();
    let (g0, g1) = (tmin - 1.0, tmax + 1.0);
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| g0 + (g1 - g0) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let learned_density = grid
        .iter()
        .map(|&u| {
            let z = est_mean + pairing.sign * sample_sd * u;
            sample_sd * prior.log_density_scalar(pairing.prior_dim, z).exp()
        })
        .collect();
    Ok(MarginalReport {
        true_hist: grid.iter().map(|&x| th.density_at(x)).collect(),
        est_hist: grid.iter().map(|&x| eh.density_at(x)).collect(),
        grid,
        learned_density,
        tv_distance: total_variation(&th, &eh),
        bins,
    })
}
