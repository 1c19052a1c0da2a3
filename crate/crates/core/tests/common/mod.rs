#![allow(dead_code)]

use lstd_core::autodiff::Graph;
use lstd_core::losses::{LossBreakdown, LossTerms, LossWeights};
use lstd_core::model::{LstdModel, Mode, ModelConfig, Noise};
use lstd_core::online::Forecaster;
use lstd_core::Result;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TERMS: [&str; 7] = ["L_R", "L_P", "L_K_s", "L_K_d", "L_m", "L_s", "total"];

/// Two-dimensional toy model with every parameter moved off its initial value.
pub fn toy_model(mode: Mode, seed: u64) -> LstdModel<f64> {
    let mut c = ModelConfig::new(4, 7, 2, 2, 2);
    c.long_width = 3;
    c.short_width = 3;
    c.transition_width = 3;
    c.predictor_width = 3;
    c.decoder_hidden = vec![3];
    c.prior_hidden = vec![3];
    c.mode = mode;
    c.seed = seed;
    let mut m = LstdModel::new(c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for id in m.params.ids().collect::<Vec<_>>() {
        for v in m.params.get_mut(id).iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

pub fn toy_window(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn term_values(m: &LstdModel<f64>, window: &Array2<f64>, noise: &Noise<f64>, w: &LossWeights) -> [f64; 7] {
    let g = Graph::new();
    let p = m.params.bind_frozen(&g);
    let (_, t) = m.loss_terms(&g, &p, window.view(), Some(noise), w).unwrap();
    let (total, _) = t.total(&g, w).unwrap();
    let vars = term_vars(&t, total);
    vars.map(|v| g.scalar(v))
}

fn term_vars(t: &LossTerms, total: lstd_core::Var) -> [lstd_core::Var; 7] {
    [
        t.recon,
        t.pred,
        t.kl_long.unwrap(),
        t.kl_short.unwrap(),
        t.smooth.unwrap(),
        t.interrupt.unwrap(),
        total,
    ]
}

/// Largest relative error between reverse-mode and central-difference
/// gradients, per loss term, over every parameter entry.
pub fn gradient_errors(m: &LstdModel<f64>, step: f64) -> [f64; 7] {
    let w = LossWeights::default();
    let window = toy_window(m.config.horizon, m.config.obs_dim, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Noise::sample(&m.config, &mut rng);

    let analytic: Vec<Vec<Array2<f64>>> = {
        let g = Graph::new();
        let p = m.params.bind(&g);
        let (_, t) = m.loss_terms(&g, &p, window.view(), Some(&noise), &w).unwrap();
        let (total, _) = t.total(&g, &w).unwrap();
        term_vars(&t, total)
            .iter()
            .map(|&v| g.grad_values(v, p.vars()))
            .collect()
    };

    let mut worst = [0.0f64; 7];
    let mut probe = m.clone();
    for (pi, id) in m.params.ids().enumerate() {
        for e in 0..m.params.get(id).len() {
            let orig = *m.params.get(id).iter().nth(e).unwrap();
            let set = |p: &mut LstdModel<f64>, v: f64| *p.params.get_mut(id).iter_mut().nth(e).unwrap() = v;
            set(&mut probe, orig + step);
            let up = term_values(&probe, &window, &noise, &w);
            set(&mut probe, orig - step);
            let down = term_values(&probe, &window, &noise, &w);
            set(&mut probe, orig);
            for k in 0..7 {
                let numeric = (up[k] - down[k]) / (2.0 * step);
                let a = *analytic[k][pi].iter().nth(e).unwrap();
                let scale = a.abs().max(numeric.abs());
                let err = if scale > 1e-5 { (a - numeric).abs() / scale } else { 0.0 };
                worst[k] = worst[k].max(err);
            }
        }
    }
    worst
}

/// Records, for each prediction, how many updates it had seen and the last
/// stream value visible to it.
pub struct Spy {
    pub steps: usize,
    pub updates: usize,
    pub seen_updates: Vec<usize>,
    pub last_visible: Vec<f64>,
    pub revealed: Vec<f64>,
}

impl Spy {
    pub fn new(steps: usize) -> Self {
        Spy {
            steps,
            updates: 0,
            seen_updates: vec![],
            last_visible: vec![],
            revealed: vec![],
        }
    }
}

impl Forecaster<f64> for Spy {
    fn name(&self) -> &str {
        "spy"
    }

    fn predict(&mut self, lookback: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.seen_updates.push(self.updates);
        self.last_visible.push(lookback[[lookback.nrows() - 1, 0]]);
        Ok(Array2::zeros((self.steps, lookback.ncols())))
    }

    fn update(&mut self, window: ArrayView2<f64>) -> Result<Option<LossBreakdown>> {
        self.updates += 1;
        self.revealed.push(window[[window.nrows() - 1, 0]]);
        Ok(None)
    }
}

