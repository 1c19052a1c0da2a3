use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stream_rng, GenerativeConfig, STREAM_MIXING};
use crate::error::{LstdError, Result};

/// Invertible nonlinear map from latents to observations.
///
/// Each layer is `h <- leaky(W h)` with `W` having orthonormal columns, so the
/// inverse is `W^T leaky^{-1}(h)` applied in reverse order. With zero layers the
/// map is the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingFunction {
    /// `out x in` matrices; the first one may be tall when `obs_dim > n`.
    pub weights: Vec<Array2<f64>>,
    pub slope: f64,
    pub latent_dim: usize,
    pub obs_dim: usize,
}

/// Builds the mixing for `config` from `seed`.
pub fn make_mixing(config: &GenerativeConfig, seed: u64) -> Result<MixingFunction> {
    let n = config.n_s + config.n_d;
    if config.obs_dim < n {
        return Err(LstdError::Shape(format!(
            "obs_dim {} < latent dim {n}: mixing would not be invertible",
            config.obs_dim
        )));
    }
    if config.mixing_layers == 0 && config.obs_dim != n {
        return Err(LstdError::Config(
            "a zero-layer (identity) mixing needs obs_dim == n_s + n_d".into(),
        ));
    }
    if !(config.mixing_slope > 0.0 && config.mixing_slope < 1.0) {
        return Err(LstdError::Config(format!(
            "mixing slope {} outside (0, 1)",
            config.mixing_slope
        )));
    }
    let mut rng = stream_rng(seed, STREAM_MIXING);
    let weights = (0..config.mixing_layers)
        .map(|l| {
            let cols = if l == 0 { n } else { config.obs_dim };
            orthonormal_columns(config.obs_dim, cols, &mut rng)
        })
        .collect();
    Ok(MixingFunction {
        weights,
        slope: config.mixing_slope,
        latent_dim: n,
        obs_dim: config.obs_dim,
    })
}

/// `rows x cols` (rows >= cols) matrix with orthonormal columns from the QR
/// factorisation of a Gaussian matrix, signs fixed so the factorisation is unique.
fn orthonormal_columns<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let a = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let q = qr.q();
    let r = qr.r();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign
    })
}

impl MixingFunction {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, z: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(z.len(), self.latent_dim);
        let mut h = z.to_owned();
        for w in &self.weights {
            h = w.dot(&h).mapv(|v| if v > 0.0 { v } else { self.slope * v });
        }
        h
    }

    pub fn invert(&self, x: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.obs_dim);
        let mut h = x.to_owned();
        for w in self.weights.iter().rev() {
            h.mapv_inplace(|v| if v > 0.0 { v } else { v / self.slope });
            h = w.t().dot(&h);
        }
        h
    }

    /// Applies the map to every row of `z`.
    pub fn apply_rows(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((z.nrows(), self.obs_dim));
        for (i, row) in z.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.apply(row));
        }
        out
    }

    /// Jacobian at `z`, `obs_dim x n`.
    pub fn jacobian(&self, z: ArrayView1<f64>) -> Array2<f64> {
        let mut jac = Array2::<f64>::eye(self.latent_dim);
        let mut h = z.to_owned();
        for w in &self.weights {
            let pre = w.dot(&h);
            let d = pre.mapv(|v| if v > 0.0 { 1.0 } else { self.slope });
            let mut wj = w.dot(&jac);
            for (i, mut row) in wj.rows_mut().into_iter().enumerate() {
                row *= d[i];
            }
            jac = wj;
            h = pre.mapv(|v| if v > 0.0 { v } else { self.slope * v });
        }
        jac
    }
}
