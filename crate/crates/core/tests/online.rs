mod common;

use common::Spy;
use lstd_core::losses::LossWeights;
use lstd_core::model::{LstdModel, Mode, ModelConfig};
use lstd_core::online::{run, LstdForecaster, OnlineMlp, ProtocolOptions};
use lstd_core::optim::AdamConfig;
use ndarray::Array2;

fn options(update_steps: usize) -> ProtocolOptions {
    ProtocolOptions {
        lookback: 4,
        horizon: 7,
        update_steps,
        normalize: false,
    }
}

#[test]
fn predictions_only_see_pre_reveal_state() {
    // Step index as the value makes every visible row identifiable.
    let stream = Array2::from_shape_fn((40, 1), |(t, _)| t as f64);
    let mut spy = Spy::new(3);
    run(stream.view(), &mut spy, options(2), 20, None).unwrap();
    for r in 0..20 {
        // Round r predicts after exactly r rounds of (2) updates.
        assert_eq!(spy.seen_updates[r], 2 * r);
        // Lookback ends at step cursor + L - 1; the horizon is not visible.
        assert_eq!(spy.last_visible[r], (r + 3) as f64);
        // Updates of round r use the window ending at cursor + H - 1.
        assert_eq!(spy.revealed[2 * r], (r + 6) as f64);
    }
}

fn small_lstd() -> LstdForecaster<f64> {
    let mut c = ModelConfig::new(4, 7, 1, 1, 2);
    c.long_width = 4;
    c.short_width = 4;
    c.transition_width = 4;
    c.predictor_width = 4;
    c.prior_hidden = vec![4];
    c.mode = Mode::Feature;
    LstdForecaster::new(LstdModel::new(c).unwrap(), LossWeights::default(), AdamConfig::default(), 3).unwrap()
}

fn wave(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, 2), |(t, j)| ((t as f64) * 0.3 + j as f64).sin())
}

#[test]
fn zero_update_steps_leave_parameters_bit_identical() {
    let mut f = small_lstd();
    let before = f.model.params.clone();
    run(wave(30).view(), &mut f, options(0), 15, None).unwrap();
    assert!(f.model.params.bit_equal(&before));

    let mut mlp = OnlineMlp::<f64>::new(4, 7, 5, AdamConfig::default(), 1);
    let before = mlp.params().clone();
    run(wave(30).view(), &mut mlp, options(0), 15, None).unwrap();
    assert!(mlp.params().bit_equal(&before));
}

#[test]
fn updates_do_change_parameters() {
    let mut f = small_lstd();
    let before = f.model.params.clone();
    run(wave(30).view(), &mut f, options(1), 5, None).unwrap();
    assert!(!f.model.params.bit_equal(&before));
}

#[test]
fn equal_seeds_give_identical_reports() {
    let a = run(wave(40).view(), &mut small_lstd(), options(1), 20, None).unwrap().0;
    let b = run(wave(40).view(), &mut small_lstd(), options(1), 20, None).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn normalised_run_uses_only_revealed_rows() {
    // A huge value after the first window must not affect round 0's error.
    let mut stream = wave(30);
    let mut a = lstd_core::online::Persistence { steps: 3 };
    let opts = ProtocolOptions { normalize: true, ..options(0) };
    let first = run(stream.view(), &mut a, opts, 1, None).unwrap().0;
    stream[[20, 0]] = 1e6;
    let second = run(stream.view(), &mut a, opts, 1, None).unwrap().0;
    assert_eq!(first.round_mse, second.round_mse);
}
