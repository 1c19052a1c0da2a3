//! Synthetic series with long-term latents, short-term latents that are
//! occasionally reset by interventions, and an invertible nonlinear mixing.
//!
//! Ground truth (both latent blocks and the intervention mask) is kept next to
//! the observations so that learned representations can be scored against it.

mod export;
mod mixing;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LstdError, Result};

pub use export::{export_dataset, import_dataset, DATA_FILE, GROUND_TRUTH_FILE, CONFIG_FILE};
pub use mixing::{make_mixing, MixingFunction};

pub(crate) const STREAM_MIXING: u64 = 1;
pub(crate) const STREAM_TRANSITION: u64 = 2;
pub(crate) const STREAM_INTERVENTION: u64 = 3;
pub(crate) const STREAM_NOISE: u64 = 4;

const CROSS_PARENT_WEIGHT: f64 = 0.5;
/// Transitions whose linearisation exceeds this spectral radius are shrunk.
const MAX_RADIUS: f64 = 0.99;

/// Minimum distance between two interventions.
pub const MIN_INTERVENTION_GAP: usize = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    pub n_s: usize,
    pub n_d: usize,
    pub obs_dim: usize,
    /// Per-step intervention probability before gap thinning.
    pub theta: f64,
    pub lag: usize,
    /// Series length `T`.
    pub length: usize,
    pub seed: u64,
    pub noise_scale_s: f64,
    pub noise_scale_d: f64,
    /// `adjacency_s[i][j]`: long-term dim `j` at `t - lag` is a parent of dim `i` at `t`.
    pub adjacency_s: Vec<Vec<bool>>,
    pub adjacency_d: Vec<Vec<bool>>,
    pub mixing_layers: usize,
    pub mixing_slope: f64,
    /// Self-persistence of each long-term dim: the diagonal of the transition
    /// linearised at the origin (capped so the spectral radius stays below 0.99).
    pub gain_s: f64,
    pub gain_d: f64,
    /// Hidden width of the random tanh transition networks.
    pub transition_hidden: usize,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            n_s: 2,
            n_d: 2,
            obs_dim: 4,
            theta: 0.05,
            lag: 1,
            length: 20_000,
            seed: 0,
            noise_scale_s: 0.5,
            noise_scale_d: 1.0,
            adjacency_s: full_adjacency(2),
            adjacency_d: full_adjacency(2),
            mixing_layers: 2,
            mixing_slope: 0.4,
            gain_s: 0.95,
            gain_d: 0.6,
            transition_hidden: 8,
        }
    }
}

pub fn full_adjacency(n: usize) -> Vec<Vec<bool>> {
    vec![vec![true; n]; n]
}

impl GenerativeConfig {
    /// Default config resized to the given block sizes (full adjacency, square mixing).
    pub fn with_dims(n_s: usize, n_d: usize) -> Self {
        GenerativeConfig {
            n_s,
            n_d,
            obs_dim: n_s + n_d,
            adjacency_s: full_adjacency(n_s),
            adjacency_d: full_adjacency(n_d),
            ..Default::default()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.n_s + self.n_d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LstdError::Config(m));
        if self.n_s < 1 || self.n_d < 1 {
            return bad("n_s and n_d must be at least 1".into());
        }
        if self.obs_dim < self.latent_dim() {
            return Err(LstdError::Shape(format!(
                "obs_dim {} < n_s + n_d = {}",
                self.obs_dim,
                self.latent_dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1]", self.theta));
        }
        if self.lag < 1 {
            return bad("lag must be at least 1".into());
        }
        if !(self.noise_scale_s >= 0.0 && self.noise_scale_d >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if self.transition_hidden < 1 {
            return bad("transition_hidden must be at least 1".into());
        }
        for (name, adj, n) in [
            ("adjacency_s", &self.adjacency_s, self.n_s),
            ("adjacency_d", &self.adjacency_d, self.n_d),
        ] {
            if adj.len() != n || adj.iter().any(|r| r.len() != n) {
                return Err(LstdError::Shape(format!("{name} must be {n}x{n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// `T x obs_dim`.
    pub x: Array2<f64>,
    /// `T x n_s`.
    pub z_s: Array2<f64>,
    /// `T x n_d`.
    pub z_d: Array2<f64>,
    /// Intervention indicator per step.
    pub mask: Vec<bool>,
    pub config: GenerativeConfig,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// The scaled noise draws that drove a generated series.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord {
    pub eps_s: Array2<f64>,
    pub eps_d: Array2<f64>,
}

/// Bernoulli(`theta`) interventions thinned to at least [`MIN_INTERVENTION_GAP`]
/// steps apart; the first step is never intervened.
///
/// Thinning keeps the earliest draw and drops any later draw that lands
/// within the gap of a kept one.
pub fn sample_interventions(theta: f64, length: usize, seed: u64) -> Vec<bool> {
    assert!((0.0..=1.0).contains(&theta), "theta outside [0, 1]");
    let mut rng = stream_rng(seed, STREAM_INTERVENTION);
    let mut mask = vec![false; length];
    let mut last: Option<usize> = None;
    for (t, m) in mask.iter_mut().enumerate().skip(1) {
        let draw = rng.random::<f64>() < theta;
        let clear = last.is_none_or(|l| t - l >= MIN_INTERVENTION_GAP);
        if draw && clear {
            *m = true;
            last = Some(t);
        }
    }
    mask
}

/// One latent block's transition: per-dimension random two-layer tanh networks
/// over masked parents, plus additive Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTransition {
    /// `[i]`: `hidden x n` input weights of dimension `i` (already masked).
    pub input: Vec<Array2<f64>>,
    /// `[i]`: `hidden` output weights of dimension `i`.
    pub output: Vec<Array1<f64>>,
    pub noise_scale: f64,
    /// Scale applied to pure noise when the block is intervened.
    pub reset_scale: f64,
}

impl BlockTransition {
    fn random<R: Rng + ?Sized>(
        adjacency: &[Vec<bool>],
        hidden: usize,
        gain: f64,
        noise_scale: f64,
        rng: &mut R,
    ) -> Self {
        let n = adjacency.len();
        let mut input = Vec::with_capacity(n);
        let mut output = Vec::with_capacity(n);
        for (i, row) in adjacency.iter().enumerate() {
            let parents = row.iter().filter(|&&p| p).count().max(1) as f64;
            let v = Array1::from_shape_fn(hidden, |_| {
                rng.sample::<f64, _>(StandardNormal) / (hidden as f64).sqrt()
            });
            // Self-weights share the sign of the output weights, so each dimension
            // is positively persistent; cross-parent weights are weaker and random.
            let u = Array2::from_shape_fn((hidden, n), |(k, j)| {
                let w: f64 = rng.sample(StandardNormal);
                if !row[j] {
                    0.0
                } else if j == i {
                    w.abs() * v[k].signum()
                } else {
                    CROSS_PARENT_WEIGHT * w / parents.sqrt()
                }
            });
            input.push(u);
            output.push(v);
        }
        let mut block = BlockTransition {
            input,
            output,
            noise_scale,
            reset_scale: 1.0 / (1.0 - gain.min(0.999).powi(2)).sqrt(),
        };
        let lin = block.linearisation();
        for (i, v) in block.output.iter_mut().enumerate() {
            let own = lin[[i, i]];
            if own > 1e-12 {
                *v *= gain / own;
            }
        }
        let radius = spectral_radius(&block.linearisation());
        if radius > MAX_RADIUS {
            let k = MAX_RADIUS / radius;
            block.output.iter_mut().for_each(|v| *v *= k);
        }
        block
    }

    /// Jacobian of the noiseless map at the origin.
    pub fn linearisation(&self) -> Array2<f64> {
        let n = self.input.len();
        let mut jac = Array2::zeros((n, n));
        for i in 0..n {
            jac.row_mut(i).assign(&self.output[i].dot(&self.input[i]));
        }
        jac
    }

    /// Noiseless transition `f(z_prev)`.
    pub fn mean(&self, prev: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.input.len(), |i| {
            self.input[i].dot(&prev).mapv(f64::tanh).dot(&self.output[i])
        })
    }

    /// Next state given already-scaled noise.
    pub fn step(&self, prev: ArrayView1<f64>, noise: ArrayView1<f64>, intervened: bool) -> Array1<f64> {
        if intervened {
            noise.mapv(|e| self.reset_scale * e)
        } else {
            self.mean(prev) + noise
        }
    }
}

fn spectral_radius(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    dm.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Both blocks' transitions and the mixing, all fixed by the config's seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeProcess {
    pub long_term: BlockTransition,
    pub short_term: BlockTransition,
    pub mixing: MixingFunction,
}

impl GenerativeProcess {
    pub fn new(config: &GenerativeConfig) -> Result<Self> {
        config.validate()?;
        let mixing = make_mixing(config, config.seed)?;
        let mut rng = stream_rng(config.seed, STREAM_TRANSITION);
        let long_term = BlockTransition::random(
            &config.adjacency_s,
            config.transition_hidden,
            config.gain_s,
            config.noise_scale_s,
            &mut rng,
        );
        let short_term = BlockTransition::random(
            &config.adjacency_d,
            config.transition_hidden,
            config.gain_d,
            config.noise_scale_d,
            &mut rng,
        );
        Ok(GenerativeProcess {
            long_term,
            short_term,
            mixing,
        })
    }
}

pub fn generate_series(config: &GenerativeConfig) -> Result<SyntheticDataset> {
    generate_series_traced(config).map(|(ds, _)| ds)
}

/// Like [`generate_series`], also returning the noise that drove each kept step.
pub fn generate_series_traced(config: &GenerativeConfig) -> Result<(SyntheticDataset, NoiseRecord)> {
    let process = GenerativeProcess::new(config)?;
    let (n_s, n_d, lag) = (config.n_s, config.n_d, config.lag);
    let burn_in = 10 * lag;
    let total = config.length + burn_in;
    let mask = sample_interventions(config.theta, config.length, config.seed);

    let mut rng = stream_rng(config.seed, STREAM_NOISE);
    let mut zs = Array2::<f64>::zeros((total, n_s));
    let mut zd = Array2::<f64>::zeros((total, n_d));
    let mut eps_s = Array2::<f64>::zeros((total, n_s));
    let mut eps_d = Array2::<f64>::zeros((total, n_d));

    for t in 0..total {
        for i in 0..n_s {
            eps_s[[t, i]] = config.noise_scale_s * rng.sample::<f64, _>(StandardNormal);
        }
        for j in 0..n_d {
            eps_d[[t, j]] = config.noise_scale_d * rng.sample::<f64, _>(StandardNormal);
        }
        if t < lag {
            // initial states: unit Gaussian, independent of the noise scale
            for i in 0..n_s {
                zs[[t, i]] = rng.sample(StandardNormal);
            }
            for j in 0..n_d {
                zd[[t, j]] = rng.sample(StandardNormal);
            }
            continue;
        }
        let intervened = t >= burn_in && mask[t - burn_in];
        let next_s = process.long_term.step(zs.row(t - lag), eps_s.row(t), false);
        let next_d = process.short_term.step(zd.row(t - lag), eps_d.row(t), intervened);
        if next_s.iter().chain(next_d.iter()).any(|v| !v.is_finite()) {
            return Err(LstdError::Generation {
                step: t.saturating_sub(burn_in),
            });
        }
        zs.row_mut(t).assign(&next_s);
        zd.row_mut(t).assign(&next_d);
    }

    let zs = zs.slice(s![burn_in.., ..]).to_owned();
    let zd = zd.slice(s![burn_in.., ..]).to_owned();
    let z = ndarray::concatenate![ndarray::Axis(1), zs, zd];
    let x = process.mixing.apply_rows(&z);
    if x.iter().any(|v| !v.is_finite()) {
        let step = x
            .rows()
            .into_iter()
            .position(|r| r.iter().any(|v| !v.is_finite()))
            .unwrap_or(0);
        return Err(LstdError::Generation { step });
    }
    let noise = NoiseRecord {
        eps_s: eps_s.slice(s![burn_in.., ..]).to_owned(),
        eps_d: eps_d.slice(s![burn_in.., ..]).to_owned(),
    };
    Ok((
        SyntheticDataset {
            x,
            z_s: zs,
            z_d: zd,
            mask,
            config: config.clone(),
        },
        noise,
    ))
}

/// Lag-`k` Pearson autocorrelation of a series.
pub fn autocorrelation(series: ArrayView1<f64>, k: usize) -> f64 {
    let n = series.len();
    assert!(n > k + 1);
    let a = series.slice(s![..n - k]);
    let b = series.slice(s![k..]);
    pearson(a, b)
}

pub(crate) fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
