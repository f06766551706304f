//! Synthetic blind-source-separation problems.
//!
//! Sources are i.i.d. draws from 1-D Gaussian mixtures; observations are
//! either a linear mixture `Y = Z·Aᵀ` or the two-layer `tanh(A₂·tanh(A₁·z))`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// One source's marginal: a 1-D Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub components: Vec<Component>,
}

impl SourceSpec {
    pub fn new(triples: &[(f64, f64, f64)]) -> Self {
        Self {
            components: triples
                .iter()
                .map(|&(weight, mean, std)| Component { weight, mean, std })
                .collect(),
        }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid(
                format!("sources[{index}].components"),
                "empty",
            ));
        }
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::invalid(
                    format!("sources[{index}].components[{k}].weight"),
                    format!("must be nonnegative, got {}", c.weight),
                ));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(Error::invalid(
                    format!("sources[{index}].components[{k}].std"),
                    format!("must be positive, got {}", c.std),
                ));
            }
            if !c.mean.is_finite() {
                return Err(Error::invalid(
                    format!("sources[{index}].components[{k}].mean"),
                    "not finite",
                ));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                format!("sources[{index}].components.weight"),
                format!("weights sum to {total}, expected 1"),
            ));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    /// `Σπ(σ²+μ²) − (Σπμ)²`
    pub fn variance(&self) -> f64 {
        let second: f64 = self
            .components
            .iter()
            .map(|c| c.weight * (c.std * c.std + c.mean * c.mean))
            .sum();
        second - self.mean().powi(2)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let d = (x - c.mean) / c.std;
                c.weight * (-0.5 * d * d).exp() / (c.std * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let c = self.components[chosen];
        let e: f64 = rng.sample(StandardNormal);
        c.mean + c.std * e
    }
}

/// Bimodal, heavy-tailed and asymmetric marginals.
pub fn default_sources() -> Vec<SourceSpec> {
    vec![
        SourceSpec::new(&[(0.5, -2.0, 0.6), (0.5, 2.0, 0.6)]),
        SourceSpec::new(&[(0.8, 0.0, 0.5), (0.2, 0.0, 2.5)]),
        SourceSpec::new(&[(0.7, -1.0, 0.5), (0.3, 2.0, 0.8)]),
    ]
}

/// `T x n` matrix, column `j` i.i.d. from `specs[j]`.
pub fn sample_sources(specs: &[SourceSpec], samples: usize, seed: u64) -> Result<Matrix> {
    if specs.is_empty() {
        return Err(Error::invalid("sources", "at least one source required"));
    }
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate(i)?;
    }
    let n = specs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(samples * n);
    for _ in 0..samples {
        for s in specs {
            data.push(s.draw(&mut rng));
        }
    }
    Matrix::from_vec(samples, n, data)
}

/// `Y = Z·Aᵀ` for `A` of shape `m x n`.
pub fn mix_linear(z: &Matrix, a: &Matrix) -> Result<Matrix> {
    if z.cols() != a.cols() {
        return Err(Error::Shape {
            op: "mix_linear",
            left: z.shape(),
            right: a.shape(),
        });
    }
    z.matmul_t(a)
}

/// Row-wise `x = tanh(A₂·tanh(A₁·z))`.
pub fn mix_tanh2(z: &Matrix, a1: &Matrix, a2: &Matrix) -> Result<Matrix> {
    if z.cols() != a1.cols() || a2.cols() != a1.rows() {
        return Err(Error::Shape {
            op: "mix_tanh2",
            left: a1.shape(),
            right: a2.shape(),
        });
    }
    let h = mix_linear(z, a1)?.map(f64::tanh);
    Ok(mix_linear(&h, a2)?.map(f64::tanh))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingKind {
    Linear,
    Tanh2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub kind: MixingKind,
    pub a1: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<Matrix>,
    pub seed: u64,
}

/// Largest condition number accepted for a random linear mixing matrix.
pub const MAX_LINEAR_CONDITION: f64 = 20.0;

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

impl MixingSpec {
    /// Uniform `[-1, 1]` entries, redrawn until `cond(A) ≤ 20`.
    pub fn random_linear(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m < n {
            return Err(Error::invalid(
                "observed",
                format!("need m >= n, got m={m}, n={n}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let a = uniform_matrix(&mut rng, m, n);
            if a.condition_number() <= MAX_LINEAR_CONDITION {
                return Ok(Self {
                    kind: MixingKind::Linear,
                    a1: a,
                    a2: None,
                    seed,
                });
            }
        }
        Err(Error::invalid("mixing", "no well-conditioned matrix found"))
    }

    /// `A₁` (`h x n`) with full column rank and rows rescaled so each
    /// pre-activation `A₁·z` has unit standard deviation under `specs`;
    /// `A₂` (`m x h`) uniform in `[-1, 1]`.
    pub fn random_tanh2(specs: &[SourceSpec], hidden: usize, m: usize, seed: u64) -> Result<Self> {
        let n = specs.len();
        if hidden < n {
            return Err(Error::invalid(
                "hidden",
                format!("need h >= n, got h={hidden}, n={n}"),
            ));
        }
        let var: Vec<f64> = specs.iter().map(SourceSpec::variance).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let mut a1 = uniform_matrix(&mut rng, hidden, n);
            let a2 = uniform_matrix(&mut rng, m, hidden);
            if a1.rank(1e-8) < n {
                continue;
            }
            for r in 0..hidden {
                let sd = (0..n)
                    .map(|c| a1.get(r, c).powi(2) * var[c])
                    .sum::<f64>()
                    .sqrt();
                for c in 0..n {
                    a1.set(r, c, a1.get(r, c) / sd);
                }
            }
            // small-signal map A₂·A₁ must itself be usable for recovery
            if a2.matmul(&a1)?.condition_number() > MAX_LINEAR_CONDITION {
                continue;
            }
            return Ok(Self {
                kind: MixingKind::Tanh2,
                a1,
                a2: Some(a2),
                seed,
            });
        }
        Err(Error::invalid("mixing", "no usable tanh2 mixing found"))
    }

    pub fn observed_dim(&self) -> usize {
        match &self.a2 {
            Some(a2) => a2.rows(),
            None => self.a1.rows(),
        }
    }

    pub fn apply(&self, z: &Matrix) -> Result<Matrix> {
        match (self.kind, &self.a2) {
            (MixingKind::Linear, _) => mix_linear(z, &self.a1),
            (MixingKind::Tanh2, Some(a2)) => mix_tanh2(z, &self.a1, a2),
            (MixingKind::Tanh2, None) => Err(Error::invalid("mixing.a2", "required for tanh2")),
        }
    }
}

/// Generation settings for one synthetic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: MixingKind,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_sources")]
    pub sources: Vec<SourceSpec>,
    #[serde(default = "default_observed")]
    pub observed: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    5000
}
fn default_observed() -> usize {
    3
}
fn default_hidden() -> usize {
    8
}

impl DataConfig {
    pub fn linear() -> Self {
        Self {
            kind: MixingKind::Linear,
            samples: default_samples(),
            sources: default_sources(),
            observed: default_observed(),
            hidden: default_hidden(),
            seed: 0,
        }
    }

    pub fn tanh2() -> Self {
        Self {
            kind: MixingKind::Tanh2,
            ..Self::linear()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("data.samples", "must be at least 1"));
        }
        if self.sources.is_empty() {
            return Err(Error::invalid(
                "data.sources",
                "at least one source required",
            ));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.validate(i)?;
        }
        if self.observed < self.sources.len() {
            return Err(Error::invalid(
                "data.observed",
                "must be at least the number of sources",
            ));
        }
        if self.kind == MixingKind::Tanh2 && self.hidden < self.sources.len() {
            return Err(Error::invalid(
                "data.hidden",
                "must be at least the number of sources",
            ));
        }
        Ok(())
    }
}

/// Independent sub-seed for one purpose within a run (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SOURCE_STREAM: u64 = 1;
const MIXING_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Matrix,
    pub z_true: Matrix,
    pub sources: Vec<SourceSpec>,
    pub mixing: MixingSpec,
    pub seed: u64,
}

/// JSON sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub samples: usize,
    pub sources: Vec<SourceSpec>,
    pub mixing: MixingSpec,
}

pub const Y_FILE: &str = "Y.csv";
pub const Z_FILE: &str = "Z_true.csv";
pub const SPEC_FILE: &str = "spec.json";

impl Dataset {
    pub fn generate(cfg: &DataConfig) -> Result<Self> {
        cfg.validate()?;
        let z = sample_sources(
            &cfg.sources,
            cfg.samples,
            derive_seed(cfg.seed, SOURCE_STREAM),
        )?;
        let mix_seed = derive_seed(cfg.seed, MIXING_STREAM);
        let mixing = match cfg.kind {
            MixingKind::Linear => {
                MixingSpec::random_linear(cfg.sources.len(), cfg.observed, mix_seed)?
            }
            MixingKind::Tanh2 => {
                MixingSpec::random_tanh2(&cfg.sources, cfg.hidden, cfg.observed, mix_seed)?
            }
        };
        let y = mixing.apply(&z)?;
        Ok(Self {
            y,
            z_true: z,
            sources: cfg.sources.clone(),
            mixing,
            seed: cfg.seed,
        })
    }

    pub fn samples(&self) -> usize {
        self.y.rows()
    }

    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            samples: self.samples(),
            sources: self.sources.clone(),
            mixing: self.mixing.clone(),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        csvio::write_matrix(&dir.join(Y_FILE), "y", &self.y)?;
        csvio::write_matrix(&dir.join(Z_FILE), "z", &self.z_true)?;
        let json = serde_json::to_string_pretty(&self.spec())?;
        let path = dir.join(SPEC_FILE);
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let y = csvio::read_matrix(&dir.join(Y_FILE))?;
        let z_true = csvio::read_matrix(&dir.join(Z_FILE))?;
        let path = dir.join(SPEC_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let spec: DatasetSpec = serde_json::from_str(&text)?;
        if y.rows() != z_true.rows() {
            return Err(Error::Shape {
                op: "dataset rows",
                left: y.shape(),
                right: z_true.shape(),
            });
        }
        Ok(Self {
            y,
            z_true,
            sources: spec.sources,
            mixing: spec.mixing,
            seed: spec.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_stats(m: &Matrix, c: usize) -> (f64, f64) {
        let col = m.column(c);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn standard_normal_source() {
        let z = sample_sources(&[SourceSpec::new(&[(1.0, 0.0, 1.0)])], 100_000, 3).unwrap();
        let (mean, var) = column_stats(&z, 0);
        assert!(mean.abs() < 0.02);
        assert!((var.sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn bimodal_source_moments() {
        let spec = SourceSpec::new(&[(0.5, -2.0, 0.5), (0.5, 2.0, 0.5)]);
        assert!((spec.variance() - 4.25).abs() < 1e-12);
        let z = sample_sources(&[spec], 100_000, 11).unwrap();
        let (mean, var) = column_stats(&z, 0);
        assert!(mean.abs() < 0.03);
        assert!((var - 4.25).abs() < 0.1);
    }

    #[test]
    fn same_seed_same_bits() {
        let a = sample_sources(&default_sources(), 500, 42).unwrap();
        let b = sample_sources(&default_sources(), 500, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_spec_names_field() {
        let bad = SourceSpec::new(&[(0.5, 0.0, 1.0), (0.5, 0.0, -1.0)]);
        let err = sample_sources(&[bad], 10, 0).unwrap_err().to_string();
        assert!(err.contains("sources[0].components[1].std"), "{err}");
        let bad = SourceSpec::new(&[(0.5, 0.0, 1.0), (0.6, 0.0, 1.0)]);
        let err = sample_sources(&[bad], 10, 0).unwrap_err().to_string();
        assert!(err.contains("weight"), "{err}");
    }

    #[test]
    fn linear_mixing_cases() {
        let z = Matrix::from_rows(&[[3.0, 1.0]]);
        assert_eq!(mix_linear(&z, &Matrix::identity(2)).unwrap(), z);
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0]]);
        assert_eq!(
            mix_linear(&z, &a).unwrap(),
            Matrix::from_rows(&[[4.0, 2.0]])
        );
        assert!(mix_linear(&z, &Matrix::identity(3)).is_err());
    }

    #[test]
    fn tanh2_zero_and_range() {
        let a1 = Matrix::from_fn(4, 2, |r, c| (r + c) as f64 - 1.5);
        let a2 = Matrix::from_fn(3, 4, |r, c| (r as f64) - (c as f64) * 0.5);
        let y = mix_tanh2(&Matrix::zeros(5, 2), &a1, &a2).unwrap();
        assert_eq!(y, Matrix::zeros(5, 3));
        let z = Matrix::from_fn(50, 2, |r, c| (r as f64 - 25.0) * (c as f64 + 1.0));
        let y = mix_tanh2(&z, &a1, &a2).unwrap();
        assert!(y.as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn tanh2_small_signal_is_linear() {
        let a1 = Matrix::from_fn(8, 3, |r, c| ((r * 3 + c) as f64 * 0.71).sin()).scale(1e-6);
        let a2 = Matrix::from_fn(3, 8, |r, c| ((r * 8 + c) as f64 * 0.37).cos()).scale(1e-6);
        let z = Matrix::from_fn(20, 3, |r, c| ((r + 7 * c) as f64 * 0.13).sin() * 2.0);
        let y = mix_tanh2(&z, &a1, &a2).unwrap();
        let lin = mix_linear(&z, &a2.matmul(&a1).unwrap()).unwrap();
        for (a, b) in y.as_slice().iter().zip(lin.as_slice()) {
            assert!(((a - b) / b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn random_linear_is_well_conditioned() {
        for seed in 0..5 {
            let m = MixingSpec::random_linear(3, 3, seed).unwrap();
            assert!(m.a1.condition_number() <= MAX_LINEAR_CONDITION);
        }
    }

    #[test]
    fn tanh2_preactivations_have_unit_scale() {
        let specs = default_sources();
        let mix = MixingSpec::random_tanh2(&specs, 8, 3, 5).unwrap();
        assert_eq!(mix.a1.rank(1e-8), 3);
        let z = sample_sources(&specs, 50_000, 1).unwrap();
        let pre = mix_linear(&z, &mix.a1).unwrap();
        for c in 0..8 {
            let (_, var) = column_stats(&pre, c);
            assert!((var.sqrt() - 1.0).abs() < 0.05, "row {c}: {}", var.sqrt());
        }
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DataConfig::tanh2();
        cfg.samples = 50;
        let d = Dataset::generate(&cfg).unwrap();
        d.write_dir(dir.path()).unwrap();
        let back = Dataset::read_dir(dir.path()).unwrap();
        assert_eq!(back, d);
    }
}
