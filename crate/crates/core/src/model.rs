//! The forecasting network: two posterior encoders, latent transition
//! modules, a historical decoder and a future predictor, plus the learned
//! temporal priors over both latent blocks.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{LstdError, Result};
use crate::losses::{self, LossBreakdown, LossTerms, LossWeights};
use crate::nn::{Bound, Conv1d, Dense, Init, Mlp, ParamStore};
use crate::optim::Adam;
use crate::priors::{kl_estimate_graph, PriorNetworkBank};
use crate::scalar::Scalar;

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Axis along which the encoders mix information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Encoders mix across time steps of the window.
    #[default]
    Time,
    /// Each step is encoded from its own observation vector only.
    Feature,
}

impl std::str::FromStr for Mode {
    type Err = LstdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Mode::Time),
            "feature" => Ok(Mode::Feature),
            other => Err(LstdError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub n_s: usize,
    pub n_d: usize,
    pub obs_dim: usize,
    pub long_width: usize,
    pub short_width: usize,
    pub transition_width: usize,
    pub decoder_hidden: Vec<usize>,
    pub predictor_width: usize,
    pub prior_hidden: Vec<usize>,
    pub slope: f64,
    pub mode: Mode,
    /// Score predicted future latents under the prior as well as the encoded ones.
    pub prior_over_horizon: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(lookback: usize, horizon: usize, n_s: usize, n_d: usize, obs_dim: usize) -> Self {
        ModelConfig {
            lookback,
            horizon,
            n_s,
            n_d,
            obs_dim,
            long_width: 640,
            short_width: 512,
            transition_width: 512,
            decoder_hidden: Vec::new(),
            predictor_width: 512,
            prior_hidden: vec![128, 128, 128],
            slope: 0.2,
            mode: Mode::Time,
            prior_over_horizon: false,
            seed: 0,
        }
    }

    /// Number of forecast steps, `H - L`.
    pub fn forecast_len(&self) -> usize {
        self.horizon - self.lookback
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback < 1 || self.horizon <= self.lookback {
            return Err(LstdError::Config(format!(
                "need 1 <= lookback < horizon, got {} and {}",
                self.lookback, self.horizon
            )));
        }
        let widths = [
            ("n_s", self.n_s),
            ("n_d", self.n_d),
            ("obs_dim", self.obs_dim),
            ("long_width", self.long_width),
            ("short_width", self.short_width),
            ("transition_width", self.transition_width),
            ("predictor_width", self.predictor_width),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(LstdError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.decoder_hidden.iter().chain(&self.prior_hidden).any(|&w| w == 0) {
            return Err(LstdError::Config("hidden widths must be >= 1".into()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(LstdError::Config(format!("slope must lie in (0, 1), got {}", self.slope)));
        }
        Ok(())
    }
}

/// Diagonal-Gaussian posterior over both latent blocks of the lookback window.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior<T> {
    pub mean_s: Array2<T>,
    pub logvar_s: Array2<T>,
    pub mean_d: Array2<T>,
    pub logvar_d: Array2<T>,
    pub samples_s: Array2<T>,
    pub samples_d: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBundle<T> {
    pub z_s_future: Array2<T>,
    pub z_d_future: Array2<T>,
    pub x_recon: Array2<T>,
    pub x_pred: Array2<T>,
}

/// Standard-normal draws for both blocks, `L x n_s` and `L x n_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise<T> {
    pub s: Array2<T>,
    pub d: Array2<T>,
}

impl<T: Scalar> Noise<T> {
    pub fn sample<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut draw = |n| Array2::from_shape_fn((config.lookback, n), |_| T::of(rng.sample(StandardNormal)));
        let s = draw(config.n_s);
        let d = draw(config.n_d);
        Noise { s, d }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Noise {
            s: Array2::zeros((config.lookback, config.n_s)),
            d: Array2::zeros((config.lookback, config.n_d)),
        }
    }
}

/// `mean + exp(logvar / 2) * eta`, with `logvar` clamped to the safe range.
pub fn reparameterize<T: Scalar>(mean: ArrayView2<T>, logvar: ArrayView2<T>, eta: ArrayView2<T>) -> Array2<T> {
    let (lo, hi) = (T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
    let std = logvar.mapv(|v| (v.max(lo).min(hi) * T::of(0.5)).exp());
    &mean + &(&std * &eta)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Encoder {
    first_conv: Option<Conv1d>,
    first_dense: Option<Dense>,
    time_mix: Option<Dense>,
    mean: Dense,
    logvar: Dense,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub mean_s: Var,
    pub logvar_s: Var,
    pub mean_d: Var,
    pub logvar_d: Var,
    pub z_s: Var,
    pub z_d: Var,
    pub z_s_future: Var,
    pub z_d_future: Var,
    pub x_recon: Var,
    pub x_pred: Var,
}

#[derive(Clone, Debug)]
pub struct LstdModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    long_encoder: Encoder,
    short_encoder: Encoder,
    long_transition: Mlp,
    short_transition: Mlp,
    decoder: Mlp,
    predictor: Mlp,
    pub prior_s: PriorNetworkBank<T>,
    pub prior_d: PriorNetworkBank<T>,
}

impl<T: Scalar> LstdModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (l, f) = (c.lookback, c.forecast_len());

        let long_encoder = {
            let (first_conv, first_dense, time_mix) = match c.mode {
                Mode::Time => (
                    Some(Conv1d::new(&mut store, "long.conv", c.obs_dim, c.long_width, &mut rng)),
                    None,
                    Some(Dense::new(&mut store, "long.time", l, l, Init::FanIn, &mut rng)),
                ),
                Mode::Feature => (
                    None,
                    Some(Dense::new(&mut store, "long.dense", c.obs_dim, c.long_width, Init::FanIn, &mut rng)),
                    None,
                ),
            };
            Encoder {
                first_conv,
                first_dense,
                time_mix,
                mean: Dense::new(&mut store, "long.mean", c.long_width, c.n_s, Init::Zeros, &mut rng),
                logvar: Dense::new(&mut store, "long.logvar", c.long_width, c.n_s, Init::Zeros, &mut rng),
            }
        };
        let short_encoder = Encoder {
            first_conv: None,
            first_dense: Some(Dense::new(&mut store, "short.dense", c.obs_dim, c.short_width, Init::FanIn, &mut rng)),
            time_mix: match c.mode {
                Mode::Time => Some(Dense::new(&mut store, "short.time", l, l, Init::FanIn, &mut rng)),
                Mode::Feature => None,
            },
            mean: Dense::new(&mut store, "short.mean", c.short_width, c.n_d, Init::Zeros, &mut rng),
            logvar: Dense::new(&mut store, "short.logvar", c.short_width, c.n_d, Init::Zeros, &mut rng),
        };
        let long_transition = Mlp::new(
            &mut store,
            "transition_s",
            &[l, c.transition_width, f],
            c.slope,
            Init::FanIn,
            &mut rng,
        );
        let short_transition = Mlp::new(&mut store, "transition_d", &[l, f], c.slope, Init::FanIn, &mut rng);
        let latent = c.n_s + c.n_d;
        let mut dec_widths = vec![latent];
        dec_widths.extend_from_slice(&c.decoder_hidden);
        dec_widths.push(c.obs_dim);
        let decoder = Mlp::new(&mut store, "decoder", &dec_widths, c.slope, Init::FanIn, &mut rng);
        let predictor = Mlp::new(
            &mut store,
            "predictor",
            &[latent, c.predictor_width, c.obs_dim],
            c.slope,
            Init::FanIn,
            &mut rng,
        );
        let prior_s = PriorNetworkBank::mlp(&mut store, "prior_s", c.n_s, &c.prior_hidden, c.slope, &mut rng);
        let prior_d = PriorNetworkBank::mlp(&mut store, "prior_d", c.n_d, &c.prior_hidden, c.slope, &mut rng);
        Ok(LstdModel {
            config,
            params: store,
            long_encoder,
            short_encoder,
            long_transition,
            short_transition,
            decoder,
            predictor,
            prior_s,
            prior_d,
        })
    }

    fn check_window(&self, x: (usize, usize), rows: usize) -> Result<()> {
        if x != (rows, self.config.obs_dim) {
            return Err(LstdError::Shape(format!(
                "window is {}x{}, expected {}x{}",
                x.0, x.1, rows, self.config.obs_dim
            )));
        }
        Ok(())
    }

    fn encode_block(&self, g: &Graph<T>, p: &Bound, enc: &Encoder, x: Var) -> (Var, Var) {
        let slope = T::of(self.config.slope);
        let mut h = match (&enc.first_conv, &enc.first_dense) {
            (Some(conv), _) => conv.apply(g, p, x),
            (None, Some(dense)) => dense.apply(g, p, x),
            (None, None) => unreachable!("encoder without input layer"),
        };
        h = g.leaky_relu(h, slope);
        if let Some(mix) = &enc.time_mix {
            let ht = g.transpose(h);
            let mixed = mix.apply(g, p, ht);
            h = g.leaky_relu(g.transpose(mixed), slope);
        }
        let mean = enc.mean.apply(g, p, h);
        let lv = enc.logvar.apply(g, p, h);
        let lv = g.clamp(lv, T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
        (mean, lv)
    }

    /// Posterior parameters of both blocks for a lookback window `L x obs_dim`.
    pub fn encode_graph(&self, g: &Graph<T>, p: &Bound, x: Var) -> Result<(Var, Var, Var, Var)> {
        self.check_window(g.shape(x), self.config.lookback)?;
        let (ms, ls) = self.encode_block(g, p, &self.long_encoder, x);
        let (md, ld) = self.encode_block(g, p, &self.short_encoder, x);
        Ok((ms, ls, md, ld))
    }

    /// Maps a latent block along time with `net` (`L x n -> (H-L) x n`).
    fn along_time(&self, g: &Graph<T>, p: &Bound, net: &Mlp, z: Var) -> Var {
        let zt = g.transpose(z);
        let out = net.apply(g, p, zt);
        g.transpose(out)
    }

    pub fn transition_long_graph(&self, g: &Graph<T>, p: &Bound, z_s: Var) -> Var {
        self.along_time(g, p, &self.long_transition, z_s)
    }

    pub fn transition_short_graph(&self, g: &Graph<T>, p: &Bound, z_d: Var) -> Var {
        self.along_time(g, p, &self.short_transition, z_d)
    }

    pub fn decode_graph(&self, g: &Graph<T>, p: &Bound, z_s: Var, z_d: Var) -> Result<Var> {
        let z = concat_blocks(g, z_s, z_d)?;
        Ok(self.decoder.apply(g, p, z))
    }

    pub fn predict_graph(&self, g: &Graph<T>, p: &Bound, z_s: Var, z_d: Var) -> Result<Var> {
        let z = concat_blocks(g, z_s, z_d)?;
        Ok(self.predictor.apply(g, p, z))
    }

    /// Full pipeline on a lookback window. `noise = None` uses posterior means.
    pub fn forward_graph(&self, g: &Graph<T>, p: &Bound, x: Var, noise: Option<&Noise<T>>) -> Result<ForwardVars> {
        let (mean_s, logvar_s, mean_d, logvar_d) = self.encode_graph(g, p, x)?;
        let sample = |mean: Var, logvar: Var, eta: Option<&Array2<T>>| match eta {
            None => mean,
            Some(eta) => {
                let half = g.scale(logvar, T::of(0.5));
                let std = g.exp(half);
                let scaled = g.mul_const(std, eta.clone());
                g.add(mean, scaled)
            }
        };
        let z_s = sample(mean_s, logvar_s, noise.map(|n| &n.s));
        let z_d = sample(mean_d, logvar_d, noise.map(|n| &n.d));
        let z_s_future = self.transition_long_graph(g, p, z_s);
        let z_d_future = self.transition_short_graph(g, p, z_d);
        let x_recon = self.decode_graph(g, p, z_s, z_d)?;
        let x_pred = self.predict_graph(g, p, z_s_future, z_d_future)?;
        Ok(ForwardVars {
            mean_s,
            logvar_s,
            mean_d,
            logvar_d,
            z_s,
            z_d,
            z_s_future,
            z_d_future,
            x_recon,
            x_pred,
        })
    }

    /// Every loss term for a fully revealed window `H x obs_dim`. Terms whose
    /// weight is zero are not built.
    pub fn loss_terms(
        &self,
        g: &Graph<T>,
        p: &Bound,
        window: ArrayView2<T>,
        noise: Option<&Noise<T>>,
        w: &LossWeights,
    ) -> Result<(ForwardVars, LossTerms)> {
        let c = &self.config;
        self.check_window(window.dim(), c.horizon)?;
        let past = g.constant(window.slice(s![..c.lookback, ..]).to_owned());
        let future = g.constant(window.slice(s![c.lookback.., ..]).to_owned());
        let fv = self.forward_graph(g, p, past, noise)?;
        let recon = losses::mse(g, fv.x_recon, past)?;
        let pred = losses::mse(g, fv.x_pred, future)?;
        let scored = |z: Var, zf: Var| {
            if c.prior_over_horizon {
                g.concat_rows(&[z, zf])
            } else {
                z
            }
        };
        let (kl_long, kl_short) = if w.beta > 0.0 {
            let ks = kl_estimate_graph(
                g,
                p,
                &self.prior_s,
                fv.mean_s,
                fv.logvar_s,
                fv.z_s,
                scored(fv.z_s, fv.z_s_future),
            )?;
            let kd = kl_estimate_graph(
                g,
                p,
                &self.prior_d,
                fv.mean_d,
                fv.logvar_d,
                fv.z_d,
                scored(fv.z_d, fv.z_d_future),
            )?;
            (Some(ks), Some(kd))
        } else {
            (None, None)
        };
        let smooth = if w.alpha > 0.0 {
            let full = g.concat_rows(&[fv.z_s, fv.z_s_future]);
            Some(losses::smooth_constraint(g, full)?)
        } else {
            None
        };
        let interrupt = if w.gamma > 0.0 && c.horizon >= 3 {
            Some(losses::interrupted_dependency_constraint(
                g,
                p,
                &self.prior_d,
                &[fv.z_d, fv.z_d_future],
            )?)
        } else {
            None
        };
        Ok((
            fv,
            LossTerms {
                recon,
                pred,
                kl_long,
                kl_short,
                smooth,
                interrupt,
            },
        ))
    }

    /// One optimiser step on `window`; returns the pre-step breakdown.
    pub fn train_step(
        &mut self,
        adam: &mut Adam<T>,
        window: ArrayView2<T>,
        noise: Option<&Noise<T>>,
        w: &LossWeights,
    ) -> Result<LossBreakdown> {
        let grads = {
            let g = Graph::new();
            let p = self.params.bind(&g);
            let (_, terms) = self.loss_terms(&g, &p, window, noise, w)?;
            let (total, breakdown) = terms.total(&g, w)?;
            let grads = g.grad_values(total, p.vars());
            (grads, breakdown)
        };
        adam.step(&mut self.params, &grads.0);
        Ok(grads.1)
    }

    /// Posterior for a lookback window under fixed draws `noise`.
    pub fn encode(&self, x: ArrayView2<T>, noise: &Noise<T>) -> Result<LatentPosterior<T>> {
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let xv = g.constant(x.to_owned());
        let (ms, ls, md, ld) = self.encode_graph(&g, &p, xv)?;
        let get = |v: Var| (*g.value(v)).clone();
        let (mean_s, logvar_s, mean_d, logvar_d) = (get(ms), get(ls), get(md), get(ld));
        if noise.s.dim() != mean_s.dim() || noise.d.dim() != mean_d.dim() {
            return Err(LstdError::Shape("noise does not match posterior shape".into()));
        }
        let samples_s = reparameterize(mean_s.view(), logvar_s.view(), noise.s.view());
        let samples_d = reparameterize(mean_d.view(), logvar_d.view(), noise.d.view());
        Ok(LatentPosterior {
            mean_s,
            logvar_s,
            mean_d,
            logvar_d,
            samples_s,
            samples_d,
        })
    }

    pub fn forward(&self, x: ArrayView2<T>, noise: Option<&Noise<T>>) -> Result<ForecastBundle<T>> {
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let xv = g.constant(x.to_owned());
        let fv = self.forward_graph(&g, &p, xv, noise)?;
        let get = |v: Var| (*g.value(v)).clone();
        Ok(ForecastBundle {
            z_s_future: get(fv.z_s_future),
            z_d_future: get(fv.z_d_future),
            x_recon: get(fv.x_recon),
            x_pred: get(fv.x_pred),
        })
    }

    /// Point forecast `(H-L) x obs_dim` from posterior means.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward(x, None)?.x_pred)
    }

    /// Posterior means `(L x n_s, L x n_d)`.
    pub fn encode_means(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
        let post = self.encode(x, &Noise::zeros(&self.config))?;
        Ok((post.mean_s, post.mean_d))
    }

    /// `t = 1..H-1` trace of `sum |d eps_H / d z_t|` through the short-term
    /// chain `[encoded lookback, predicted future]`.
    pub fn dependency_trace(&self, x: ArrayView2<T>) -> Result<Vec<T>> {
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let xv = g.constant(x.to_owned());
        let fv = self.forward_graph(&g, &p, xv, None)?;
        losses::dependency_trace(&g, &p, &self.prior_d, &[fv.z_d, fv.z_d_future])
    }

    // ---- checkpoints -----------------------------------------------------

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                (
                    name.to_string(),
                    StoredArray {
                        shape: [v.nrows(), v.ncols()],
                        data: v.iter().map(|x| x.as_f64()).collect(),
                    },
                )
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(LstdError::Checkpoint(format!(
                "unsupported version {}, expected {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        let mut model = Self::new(ckpt.config.clone())?;
        if ckpt.params.len() != model.params.len() {
            return Err(LstdError::Checkpoint(format!(
                "{} arrays stored, model has {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let stored = ckpt
                .params
                .get(&name)
                .ok_or_else(|| LstdError::Checkpoint(format!("missing array {name}")))?;
            let target = model.params.get_mut(id);
            if stored.shape != [target.nrows(), target.ncols()] || stored.data.len() != target.len() {
                return Err(LstdError::Checkpoint(format!("shape mismatch for {name}")));
            }
            for (t, &v) in target.iter_mut().zip(&stored.data) {
                *t = T::of(v);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| LstdError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| LstdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LstdError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| LstdError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

fn concat_blocks<T: Scalar>(g: &Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a).0 != g.shape(b).0 {
        return Err(LstdError::Shape(format!(
            "latent blocks have {} and {} steps",
            g.shape(a).0,
            g.shape(b).0
        )));
    }
    Ok(g.concat_cols(&[a, b]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredArray {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing checkpoint: config plus named arrays. Prior networks live
/// under the `prior_s.` and `prior_d.` prefixes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: BTreeMap<String, StoredArray>,
}
