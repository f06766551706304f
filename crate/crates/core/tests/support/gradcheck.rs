//! Finite-difference checks of every differentiable op and the assembled
//! objective. Shared by the core gradient tests and the acceptance suite.

use pdgmm_core::diffnum::{Tape, Var};
use pdgmm_core::model::{log_posterior, Architecture, PdgmmVae};
use pdgmm_core::objective::{kl_surrogate, loss_and_grads, rec_loss, total_loss, LossWeights};
use pdgmm_core::prior::{log_prior, PriorVars};
use pdgmm_core::trainer::reparameterize_tape;
use pdgmm_core::{Matrix, Result};
use pdgmm_oracle::{fd_gradient, FiniteDiffSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 20;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

#[derive(Debug)]
pub struct OpReport {
    pub name: String,
    pub instances: usize,
    pub failures: Vec<String>,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.instances as u64 >= INSTANCES
    }
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Reduces a non-scalar output to a scalar with fixed random weights so that
/// every output entry reaches the gradient.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    if (r, c) == (1, 1) {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(random(&mut rng, r, c, -1.5, 1.5));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn eval(inputs: &[Matrix], build: &Build, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = contract(&mut tape, out, seed).unwrap();
    tape.value(loss).item()
}

fn compare(
    name: &str,
    seed: u64,
    analytic: &[f64],
    numeric: &[f64],
    spec: &FiniteDiffSpec,
    failures: &mut Vec<String>,
) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if !spec.agrees(*a, *n) {
            failures.push(format!(
                "{name} instance {seed} coordinate {i}: analytic {a} numeric {n}"
            ));
        }
    }
}

fn check(name: &str, inputs: Vec<Matrix>, build: &Build, seed: u64, failures: &mut Vec<String>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = contract(&mut tape, out, seed).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.of(v).into_vec()).collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let shapes: Vec<(usize, usize)> = inputs.iter().map(|m| m.shape()).collect();
    let unflatten = |x: &[f64]| {
        let mut at = 0;
        shapes
            .iter()
            .map(|&(r, c)| {
                let m = Matrix::from_vec(r, c, x[at..at + r * c].to_vec()).unwrap();
                at += r * c;
                m
            })
            .collect::<Vec<_>>()
    };
    let spec = FiniteDiffSpec::default();
    match fd_gradient(|x| eval(&unflatten(x), build, seed), &flat, &spec) {
        Ok(numeric) => compare(name, seed, &analytic, &numeric, &spec, failures),
        Err(e) => failures.push(format!("{name} instance {seed}: {e}")),
    }
}

fn op(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Matrix>, build: &Build) -> OpReport {
    let mut failures = Vec::new();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(name, make(&mut rng), build, seed, &mut failures);
    }
    OpReport {
        name: name.to_string(),
        instances: INSTANCES as usize,
        failures,
    }
}

pub fn elementwise_binary() -> Vec<OpReport> {
    let pair =
        |rng: &mut ChaCha8Rng| vec![random(rng, 3, 4, -2.0, 2.0), random(rng, 3, 4, -2.0, 2.0)];
    vec![
        op("add", pair, &|t, v| t.add(v[0], v[1])),
        op("sub", pair, &|t, v| t.sub(v[0], v[1])),
        op("mul", pair, &|t, v| t.mul(v[0], v[1])),
    ]
}

pub fn row_broadcast() -> Vec<OpReport> {
    let make =
        |rng: &mut ChaCha8Rng| vec![random(rng, 5, 3, -2.0, 2.0), random(rng, 1, 3, -2.0, 2.0)];
    vec![
        op("add_row", make, &|t, v| t.add_row(v[0], v[1])),
        op("mul_row", make, &|t, v| t.mul_row(v[0], v[1])),
    ]
}

pub fn matmul() -> Vec<OpReport> {
    let make =
        |rng: &mut ChaCha8Rng| vec![random(rng, 4, 3, -2.0, 2.0), random(rng, 3, 5, -2.0, 2.0)];
    vec![op("matmul", make, &|t, v| t.matmul(v[0], v[1]))]
}

pub fn unary() -> Vec<OpReport> {
    let one = |rng: &mut ChaCha8Rng| vec![random(rng, 3, 3, -2.0, 2.0)];
    vec![
        op("scale", one, &|t, v| Ok(t.scale(v[0], -1.7))),
        op("offset", one, &|t, v| Ok(t.offset(v[0], 0.4))),
        op("tanh", one, &|t, v| Ok(t.tanh(v[0]))),
        op("exp", one, &|t, v| Ok(t.exp(v[0]))),
        op("square", one, &|t, v| Ok(t.square(v[0]))),
        op("sum", one, &|t, v| Ok(t.sum(v[0]))),
    ]
}

pub fn reparameterization() -> Vec<OpReport> {
    let make = |rng: &mut ChaCha8Rng| {
        vec![
            random(rng, 6, 2, -2.0, 2.0),
            random(rng, 1, 2, -2.0, 1.0),
            random(rng, 6, 2, -2.0, 2.0),
        ]
    };
    vec![op("reparameterize", make, &|t, v| {
        reparameterize_tape(t, v[0], v[1], v[2])
    })]
}

pub fn posterior_density() -> Vec<OpReport> {
    let make = |rng: &mut ChaCha8Rng| {
        vec![
            random(rng, 5, 3, -2.0, 2.0),
            random(rng, 1, 3, -1.5, 1.0),
            random(rng, 5, 3, -2.0, 2.0),
        ]
    };
    vec![op("log_posterior", make, &|t, v| {
        log_posterior(t, v[0], v[1], v[2])
    })]
}

pub fn prior_density() -> Vec<OpReport> {
    let make = |rng: &mut ChaCha8Rng| {
        vec![
            random(rng, 5, 2, -2.0, 2.0),
            random(rng, 2, 3, -2.0, 2.0),
            random(rng, 2, 3, -2.0, 2.0),
            random(rng, 2, 3, -1.0, 1.0),
        ]
    };
    vec![op("log_prior", make, &|t, v| {
        let vars = PriorVars {
            alpha: v[1],
            mu: v[2],
            eta: v[3],
        };
        log_prior(t, vars, v[0])
    })]
}

pub fn loss_terms() -> Vec<OpReport> {
    let pair =
        |rng: &mut ChaCha8Rng| vec![random(rng, 4, 3, -2.0, 2.0), random(rng, 4, 3, -2.0, 2.0)];
    let scalars =
        |rng: &mut ChaCha8Rng| vec![random(rng, 1, 1, -2.0, 2.0), random(rng, 1, 1, -2.0, 2.0)];
    vec![
        op("rec_loss", pair, &|t, v| rec_loss(t, v[0], v[1], 0.3)),
        op("kl_surrogate", scalars, &|t, v| {
            kl_surrogate(t, v[0], v[1], 0.8, 4, 3)
        }),
    ]
}

fn toy_problem(seed: u64, arch: &Architecture) -> (PdgmmVae, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PdgmmVae::init(2, 2, 2, arch, seed);
    let flat: Vec<f64> = (0..model.param_count())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    model.set_flat_params(&flat);
    let y = random(&mut rng, 4, 2, -2.0, 2.0);
    let eps = random(&mut rng, 4, 2, -2.0, 2.0);
    (model, y, eps)
}

/// Whole loss against every model parameter, linear and nonlinear nets.
pub fn objective() -> Vec<OpReport> {
    let w = LossWeights {
        beta: 0.9,
        v_y: 0.2,
    };
    let spec = FiniteDiffSpec::default();
    let mut reports = Vec::new();
    for (label, arch) in [
        ("objective_linear", Architecture::linear()),
        ("objective_nonlinear", Architecture::nonlinear()),
    ] {
        let mut failures = Vec::new();
        for seed in 0..INSTANCES {
            let (mut model, y, eps) = toy_problem(seed, &arch);
            loss_and_grads(&mut model, &y, &eps, w).unwrap();
            let analytic = model.flat_grads();
            let base = model.flat_params();
            let mut probe = model.clone();
            let numeric = fd_gradient(
                |x| {
                    probe.set_flat_params(x);
                    let mut tape = Tape::new();
                    total_loss(&mut tape, &probe, &y, &eps, w).unwrap().1.total
                },
                &base,
                &spec,
            );
            match numeric {
                Ok(n) => compare(label, seed, &analytic, &n, &spec, &mut failures),
                Err(e) => failures.push(format!("{label} instance {seed}: {e}")),
            }
        }
        reports.push(OpReport {
            name: label.to_string(),
            instances: INSTANCES as usize,
            failures,
        });
    }
    reports
}

pub fn full_suite() -> Vec<OpReport> {
    [
        elementwise_binary(),
        row_broadcast(),
        matmul(),
        unary(),
        reparameterization(),
        posterior_density(),
        prior_density(),
        loss_terms(),
        objective(),
    ]
    .into_iter()
    .flatten()
    .collect()
}
