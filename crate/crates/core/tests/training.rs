use pdgmm_core::checkpoint;
use pdgmm_core::model::InputScaling;
use pdgmm_core::synthgen::{default_sources, sample_sources, DataConfig, Dataset};
use pdgmm_core::trainer::{converged, fit, windowed_mean, Convergence, TrainConfig, Trainer};
use pdgmm_core::{Error, Matrix};

fn no_early_stop(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        convergence: Convergence {
            stop_early: false,
            ..Convergence::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn identity_problem_reconstructs() {
    let z = sample_sources(&default_sources(), 1000, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        beta: 1e-4,
        v_y: 0.1,
        eval_every: 100,
        ..no_early_stop(2000)
    };
    let (_, rec) = fit(&cfg, &z, None).unwrap();
    let last = rec.entries.last().unwrap();
    assert_eq!(last.epoch, 1999);
    assert!(last.loss.rec <= 1e-3, "rec {}", last.loss.rec);
}

#[test]
fn loss_trends_down_on_default_linear_config() {
    let ds = Dataset::generate(&DataConfig::linear()).unwrap();
    let (_, rec) = fit(&no_early_stop(501), &ds.y, Some(&ds.z_true)).unwrap();
    let early = windowed_mean(&rec.losses, 10, 50);
    let late = windowed_mean(&rec.losses, 500, 50);
    assert!(late < early, "{late} vs {early}");
}

#[test]
fn runs_are_bit_identical() {
    let ds = Dataset::generate(&DataConfig::linear()).unwrap();
    let cfg = TrainConfig {
        batch_size: Some(500),
        input_scaling: InputScaling::Whiten,
        ..no_early_stop(30)
    };
    let a = fit(&cfg, &ds.y, Some(&ds.z_true)).unwrap();
    let b = fit(&cfg, &ds.y, Some(&ds.z_true)).unwrap();
    assert_eq!(a.1.to_csv(), b.1.to_csv());
    assert_eq!(a.0.flat_params(), b.0.flat_params());
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let ds = Dataset::generate(&DataConfig::tanh2()).unwrap();
    let cfg = TrainConfig {
        architecture: pdgmm_core::model::Architecture::nonlinear(),
        ..no_early_stop(15)
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| fit(&cfg, &ds.y, Some(&ds.z_true)).unwrap())
    };
    let (m1, r1) = run(1);
    let (m4, r4) = run(4);
    assert_eq!(r1.to_csv(), r4.to_csv());
    assert_eq!(m1.flat_params(), m4.flat_params());
}

/// Relative change between the means of the last two windows, computed
/// from scratch.
fn plateau_oracle(losses: &[f64], window: usize, tol: f64) -> Option<usize> {
    (2 * window..=losses.len()).find(|&len| {
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let a = mean(&losses[len - 2 * window..len - window]);
        let b = mean(&losses[len - window..len]);
        ((b - a) / a).abs() < tol
    })
}

#[test]
fn convergence_flips_at_first_qualifying_window() {
    let mut losses: Vec<f64> = (0..300).map(|i| 1.0 + 5.0 * 0.97f64.powi(i)).collect();
    losses.extend(std::iter::repeat_n(1.0, 400));
    let (window, tol) = (20, 1e-5);
    let want = plateau_oracle(&losses, window, tol).expect("plateau reached");
    let got = (1..=losses.len())
        .find(|&len| converged(&losses[..len], window, tol))
        .unwrap();
    assert_eq!(got, want);

    let geometric: Vec<f64> = (0..400).map(|i| 0.5f64.powi(i)).collect();
    assert!(!converged(&geometric, 20, 1e-6));
    assert!(converged(&[3.0; 40], 20, 1e-6));
}

#[test]
fn early_stop_records_convergence_epoch() {
    let ds = Dataset::generate(&DataConfig {
        samples: 300,
        ..DataConfig::linear()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 20000,
        learning_rate: 1e-2,
        convergence: Convergence {
            window: 20,
            tol: 1e-3,
            stop_early: true,
        },
        ..TrainConfig::default()
    };
    let (_, rec) = fit(&cfg, &ds.y, None).unwrap();
    let at = rec.converged_at.expect("converges");
    assert_eq!(rec.losses.len(), at + 1);
    assert!(converged(&rec.losses, 20, 1e-3));
    assert!(!converged(&rec.losses[..at], 20, 1e-3));
}

#[test]
fn trained_checkpoint_round_trips() {
    let ds = Dataset::generate(&DataConfig::linear()).unwrap();
    let cfg = TrainConfig {
        input_scaling: InputScaling::Whiten,
        ..no_early_stop(20)
    };
    let (model, _) = fit(&cfg, &ds.y, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::write(dir.path(), &model).unwrap();
    let back = checkpoint::read(dir.path()).unwrap();
    assert_eq!(
        back.posterior_means(&ds.y).unwrap(),
        model.posterior_means(&ds.y).unwrap()
    );
    assert_eq!(back.prior.snapshot(), model.prior.snapshot());
}

#[test]
fn overflowing_loss_aborts_with_last_good_checkpoint() {
    let y = Matrix::from_fn(50, 3, |r, c| 1e160 * ((r * 3 + c) as f64).sin());
    let cfg = TrainConfig {
        input_scaling: InputScaling::None,
        ..no_early_stop(5)
    };
    let dir = tempfile::tempdir().unwrap();
    let last_good = dir.path().join("last_good");
    let err = Trainer::new(cfg)
        .abort_checkpoint(&last_good)
        .fit(&y, None)
        .unwrap_err();
    assert!(err.is_numerical(), "{err}");
    match err {
        Error::NonFiniteLoss {
            last_good: Some(p), ..
        } => {
            assert_eq!(p, last_good);
            checkpoint::read(&p).unwrap();
        }
        other => panic!("unexpected {other}"),
    }
}
