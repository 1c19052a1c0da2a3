//! Predict, reveal, update, slide.
//!
//! Each round forecasts the next `H - L` steps from the current lookback
//! window, scores the forecast against the truth, and only then lets the
//! forecaster learn from the fully revealed window.

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{LstdError, Result};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::model::{LstdModel, Noise};
use crate::nn::{Init, Mlp, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

/// Anything that can forecast a horizon and learn from revealed windows.
pub trait Forecaster<T: Scalar> {
    fn name(&self) -> &str;

    /// `(H - L) x D` forecast from an `L x D` lookback window.
    fn predict(&mut self, lookback: ArrayView2<T>) -> Result<Array2<T>>;

    /// One learning step on a revealed `H x D` window.
    fn update(&mut self, window: ArrayView2<T>) -> Result<Option<LossBreakdown>>;
}

/// Repeats the last observed vector across the horizon.
pub fn persistence_baseline<T: Scalar>(lookback: ArrayView2<T>, steps: usize) -> Array2<T> {
    let last = lookback.row(lookback.nrows() - 1);
    let mut out = Array2::zeros((steps, lookback.ncols()));
    out.rows_mut().into_iter().for_each(|mut r| r.assign(&last));
    out
}

#[derive(Clone, Debug)]
pub struct Persistence {
    pub steps: usize,
}

impl<T: Scalar> Forecaster<T> for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn predict(&mut self, lookback: ArrayView2<T>) -> Result<Array2<T>> {
        if lookback.nrows() == 0 {
            return Err(LstdError::Shape("empty lookback window".into()));
        }
        Ok(persistence_baseline(lookback, self.steps))
    }

    fn update(&mut self, _window: ArrayView2<T>) -> Result<Option<LossBreakdown>> {
        Ok(None)
    }
}

/// Channel-independent MLP mapping each variable's lookback to its horizon.
pub struct OnlineMlp<T> {
    lookback: usize,
    params: ParamStore<T>,
    net: Mlp,
    adam: Adam<T>,
}

impl<T: Scalar> OnlineMlp<T> {
    pub fn new(lookback: usize, horizon: usize, hidden: usize, adam: AdamConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Mlp::new(
            &mut params,
            "mlp",
            &[lookback, hidden, horizon - lookback],
            0.2,
            Init::FanIn,
            &mut rng,
        );
        let adam = Adam::new(adam, &params);
        OnlineMlp {
            lookback,
            params,
            net,
            adam,
        }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }
}

impl<T: Scalar> Forecaster<T> for OnlineMlp<T> {
    fn name(&self) -> &str {
        "online-mlp"
    }

    fn predict(&mut self, lookback: ArrayView2<T>) -> Result<Array2<T>> {
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let x = g.constant(lookback.t().to_owned());
        let y = self.net.apply(&g, &p, x);
        Ok(g.value(y).t().to_owned())
    }

    fn update(&mut self, window: ArrayView2<T>) -> Result<Option<LossBreakdown>> {
        let (grads, loss) = {
            let g = Graph::new();
            let p = self.params.bind(&g);
            let x = g.constant(window.slice(s![..self.lookback, ..]).t().to_owned());
            let target = g.constant(window.slice(s![self.lookback.., ..]).t().to_owned());
            let y = self.net.apply(&g, &p, x);
            let loss = losses::mse(&g, y, target)?;
            (g.grad_values(loss, p.vars()), g.scalar(loss).as_f64())
        };
        if !loss.is_finite() {
            return Err(LstdError::NonFiniteLoss("L_P"));
        }
        self.adam.step(&mut self.params, &grads);
        Ok(Some(LossBreakdown {
            pred: loss,
            total: loss,
            ..Default::default()
        }))
    }
}

/// The full model trained with the weighted objective.
pub struct LstdForecaster<T> {
    pub model: LstdModel<T>,
    pub weights: LossWeights,
    adam: Adam<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> LstdForecaster<T> {
    pub fn new(model: LstdModel<T>, weights: LossWeights, adam: AdamConfig, seed: u64) -> Result<Self> {
        weights.validate()?;
        let adam = Adam::new(adam, &model.params);
        Ok(LstdForecaster {
            model,
            weights,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl<T: Scalar> Forecaster<T> for LstdForecaster<T> {
    fn name(&self) -> &str {
        "lstd"
    }

    fn predict(&mut self, lookback: ArrayView2<T>) -> Result<Array2<T>> {
        self.model.predict(lookback)
    }

    fn update(&mut self, window: ArrayView2<T>) -> Result<Option<LossBreakdown>> {
        let noise = Noise::sample(&self.model.config, &mut self.rng);
        let b = self
            .model
            .train_step(&mut self.adam, window, Some(&noise), &self.weights)?;
        Ok(Some(b))
    }
}

/// Per-column running mean and variance of the rows revealed so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: usize,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        RunningNormalizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn observe<T: Scalar>(&mut self, row: ndarray::ArrayView1<T>) {
        self.count += 1;
        let n = self.count as f64;
        for (j, &x) in row.iter().enumerate() {
            let x = x.as_f64();
            let d = x - self.mean[j];
            self.mean[j] += d / n;
            self.m2[j] += d * (x - self.mean[j]);
        }
    }

    /// Population standard deviation; columns without spread use 1.
    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&m2| {
                let sd = if self.count > 0 { (m2 / self.count as f64).sqrt() } else { 0.0 };
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect()
    }

    pub fn apply<T: Scalar>(&self, x: ArrayView2<T>) -> Array2<T> {
        let mean = Array1::from_iter(self.mean.iter().map(|&m| T::of(m)));
        let std = Array1::from_iter(self.std().into_iter().map(T::of));
        (&x - &mean.insert_axis(Axis(0))) / &std.insert_axis(Axis(0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub lookback: usize,
    pub horizon: usize,
    pub update_steps: usize,
    /// Standardise with running statistics of the revealed prefix.
    pub normalize: bool,
}

/// One line of the JSON-lines trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mse: f64,
    pub mae: f64,
    pub loss_breakdown: Option<LossBreakdown>,
    pub wall_ms: f64,
}

pub struct OnlineProtocolState {
    pub cursor: usize,
    pub options: ProtocolOptions,
    pub sq_sum: f64,
    pub abs_sum: f64,
    pub count: usize,
    pub rounds: usize,
    pub history: Vec<RoundRecord>,
    pub normalizer: RunningNormalizer,
}

impl OnlineProtocolState {
    pub fn new(options: ProtocolOptions, dim: usize) -> Result<Self> {
        if options.lookback < 1 || options.horizon <= options.lookback {
            return Err(LstdError::Config(format!(
                "need 1 <= lookback < horizon, got {} and {}",
                options.lookback, options.horizon
            )));
        }
        Ok(OnlineProtocolState {
            cursor: 0,
            options,
            sq_sum: 0.0,
            abs_sum: 0.0,
            count: 0,
            rounds: 0,
            history: Vec::new(),
            normalizer: RunningNormalizer::new(dim),
        })
    }

    /// Rounds a stream of `len` steps supports.
    pub fn feasible_rounds(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.options.horizon)
    }

    /// Plays one round. `Ok(None)` once the stream cannot fill another window.
    pub fn round<T: Scalar, F: Forecaster<T> + ?Sized>(
        &mut self,
        forecaster: &mut F,
        stream: ArrayView2<T>,
    ) -> Result<Option<(Array2<T>, &RoundRecord)>> {
        let ProtocolOptions {
            lookback: l,
            horizon: h,
            ..
        } = self.options;
        if self.cursor + h > stream.nrows() {
            return Ok(None);
        }
        let start = Instant::now();
        while self.normalizer.count < self.cursor + l {
            self.normalizer.observe(stream.row(self.normalizer.count));
        }
        let raw = stream.slice(s![self.cursor..self.cursor + h, ..]);
        let window = if self.options.normalize {
            self.normalizer.apply(raw)
        } else {
            raw.to_owned()
        };

        let pred = forecaster.predict(window.slice(s![..l, ..]))?;
        let truth = window.slice(s![l.., ..]);
        if pred.dim() != truth.dim() {
            return Err(LstdError::Shape(format!(
                "forecast {:?} vs truth {:?}",
                pred.dim(),
                truth.dim()
            )));
        }
        let (mut sq, mut ab) = (0.0, 0.0);
        for (p, t) in pred.iter().zip(truth.iter()) {
            let d = p.as_f64() - t.as_f64();
            sq += d * d;
            ab += d.abs();
        }
        let n = pred.len();
        self.sq_sum += sq;
        self.abs_sum += ab;
        self.count += n;

        let mut breakdown = None;
        for _ in 0..self.options.update_steps {
            breakdown = forecaster.update(window.view())?;
        }
        self.history.push(RoundRecord {
            round: self.rounds,
            mse: sq / n as f64,
            mae: ab / n as f64,
            loss_breakdown: breakdown,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        self.rounds += 1;
        self.cursor += 1;
        Ok(Some((pred, self.history.last().expect("just pushed"))))
    }

    pub fn report(&self, forecaster: &str, config: serde_json::Value) -> MetricsReport {
        let (mse, mae) = if self.count == 0 {
            (None, None)
        } else {
            (
                Some(self.sq_sum / self.count as f64),
                Some(self.abs_sum / self.count as f64),
            )
        };
        MetricsReport {
            forecaster: forecaster.to_string(),
            rounds: self.rounds,
            mse,
            mae,
            round_mse: self.history.iter().map(|r| r.mse).collect(),
            round_mae: self.history.iter().map(|r| r.mae).collect(),
            config,
        }
    }
}

/// Final summary. `mse`/`mae` are null when no round was played.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub forecaster: String,
    pub rounds: usize,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub round_mse: Vec<f64>,
    pub round_mae: Vec<f64>,
    pub config: serde_json::Value,
}

/// Plays `rounds` rounds, writing one JSON line per round to `trace` if given.
pub fn run<T: Scalar, F: Forecaster<T> + ?Sized>(
    stream: ArrayView2<T>,
    forecaster: &mut F,
    options: ProtocolOptions,
    rounds: usize,
    mut trace: Option<&mut dyn Write>,
) -> Result<(MetricsReport, OnlineProtocolState)> {
    let mut state = OnlineProtocolState::new(options, stream.ncols())?;
    let feasible = state.feasible_rounds(stream.nrows());
    if rounds > feasible {
        return Err(LstdError::Config(format!(
            "{rounds} rounds requested, stream supports {feasible}"
        )));
    }
    for _ in 0..rounds {
        let Some((_, record)) = state.round(forecaster, stream)? else {
            break;
        };
        if let Some(w) = trace.as_mut() {
            let line = serde_json::to_string(record).map_err(|e| LstdError::Checkpoint(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| LstdError::io("<trace>", e))?;
        }
    }
    let config = serde_json::to_value(options).unwrap_or_default();
    Ok((state.report(forecaster.name(), config), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn opts(l: usize, h: usize, steps: usize) -> ProtocolOptions {
        ProtocolOptions {
            lookback: l,
            horizon: h,
            update_steps: steps,
            normalize: false,
        }
    }

    #[test]
    fn persistence_repeats_last_row() {
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        let p = persistence_baseline(w.view(), 3);
        assert_eq!(p, array![[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]]);
    }

    #[test]
    fn persistence_on_constant_series_is_exact() {
        let stream = Array2::from_elem((30, 2), 1.7);
        let mut f = Persistence { steps: 3 };
        let (report, _) = run(stream.view(), &mut f, opts(5, 8, 1), 20, None).unwrap();
        assert!(report.round_mse.iter().all(|&e| e == 0.0));
        assert_eq!(report.mse, Some(0.0));
    }

    #[test]
    fn ramp_matches_closed_form() {
        let slope = 0.25;
        let stream = Array2::from_shape_fn((40, 1), |(t, _)| slope * t as f64);
        let (l, h) = (6, 10);
        let mut f = Persistence { steps: h - l };
        let (report, _) = run(stream.view(), &mut f, opts(l, h, 0), 25, None).unwrap();
        let k = (h - l) as f64;
        let expected = (1..=h - l).map(|i| (i * i) as f64).sum::<f64>() * slope * slope / k;
        for e in report.round_mse {
            assert!((e - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rounds_gives_null_metrics() {
        let stream = Array2::<f64>::zeros((10, 1));
        let mut f = Persistence { steps: 2 };
        let (report, _) = run(stream.view(), &mut f, opts(2, 4, 1), 0, None).unwrap();
        assert_eq!(report.mse, None);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["mse"].is_null());
    }

    #[test]
    fn too_many_rounds_rejected() {
        let stream = Array2::<f64>::zeros((10, 1));
        let mut f = Persistence { steps: 2 };
        assert!(run(stream.view(), &mut f, opts(2, 4, 1), 8, None).is_err());
        assert!(run(stream.view(), &mut f, opts(2, 4, 1), 7, None).is_ok());
    }

    #[test]
    fn round_signals_exhaustion() {
        let stream = Array2::<f64>::zeros((5, 1));
        let mut state = OnlineProtocolState::new(opts(2, 4, 0), 1).unwrap();
        let mut f = Persistence { steps: 2 };
        assert!(state.round(&mut f, stream.view()).unwrap().is_some());
        assert!(state.round(&mut f, stream.view()).unwrap().is_some());
        assert!(state.round(&mut f, stream.view()).unwrap().is_none());
        assert_eq!(state.cursor, 2);
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]];
        let mut n = RunningNormalizer::new(2);
        for r in x.rows() {
            n.observe(r);
        }
        assert!((n.mean[0] - 7.0 / 3.0).abs() < 1e-12);
        let var = [1.0, 2.0, 4.0].iter().map(|v: &f64| (v - 7.0 / 3.0).powi(2)).sum::<f64>() / 3.0;
        assert!((n.std()[0] - var.sqrt()).abs() < 1e-12);
        assert_eq!(n.std()[1], 1.0);
    }

    #[test]
    fn trace_has_one_line_per_round() {
        let stream = Array2::from_shape_fn((20, 2), |(t, j)| (t + j) as f64);
        let mut f = Persistence { steps: 2 };
        let mut buf = Vec::new();
        run(stream.view(), &mut f, opts(3, 5, 1), 7, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        for (i, l) in lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            assert_eq!(v["round"], i);
            for k in ["mse", "mae", "loss_breakdown", "wall_ms"] {
                assert!(v.get(k).is_some(), "missing {k}");
            }
        }
    }
}
