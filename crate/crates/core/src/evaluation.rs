//! Disentanglement scores against ground-truth latents, and the
//! short-term dependency trace around interventions.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datagen::SyntheticDataset;
use crate::error::{LstdError, Result};
use crate::model::LstdModel;
use crate::online::RunningNormalizer;
use crate::scalar::Scalar;

pub const RIDGE: f64 = 1e-3;
pub const TRAIN_FRACTION: f64 = 0.7;
/// Rows beyond this are subsampled before fitting the kernel regressor.
pub const MAX_ROWS: usize = 2000;
const SPLIT_SEED: u64 = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub r2_within_long: f64,
    pub r2_within_short: f64,
    /// Estimated long block predicting the true short block.
    pub r2_cross_ls: f64,
    /// Estimated short block predicting the true long block.
    pub r2_cross_sl: f64,
    pub mcc_long: f64,
    pub mcc_short: f64,
    pub windows: usize,
}

fn standardize_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let m = col.mean().unwrap_or(0.0);
        let sd = col.std(0.0);
        if sd > 1e-12 {
            col.mapv_inplace(|v| (v - m) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Replaces each column by the standard-normal quantiles of its ranks, so the
/// regressor sees heavy-tailed and light-tailed blocks on the same footing.
/// Constant columns become zero.
fn normal_scores(x: &Array2<f64>) -> Array2<f64> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = x.nrows();
    let mut out = Array2::zeros(x.dim());
    for (c, col) in x.columns().into_iter().enumerate() {
        if col.std(0.0) <= 1e-12 {
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && col[order[j + 1]] == col[order[i]] {
                j += 1;
            }
            let rank = 0.5 * (i + j) as f64 + 0.5;
            let q = unit.inverse_cdf(rank / n as f64);
            for &r in &order[i..=j] {
                out[[r, c]] = q;
            }
            i = j + 1;
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Held-out R² of a radial-basis kernel ridge regression from the normal
/// scores of `z_est` onto each column of `z_true`.
pub fn block_r2(z_est: ArrayView2<f64>, z_true: ArrayView2<f64>) -> Result<Vec<f64>> {
    let (t, k) = z_est.dim();
    if z_true.nrows() != t {
        return Err(LstdError::Shape(format!(
            "{t} estimated rows vs {} true rows",
            z_true.nrows()
        )));
    }
    if t <= 10 * (k + 1) {
        return Err(LstdError::Shape(format!("{t} rows is too few for {k} regressors")));
    }
    let m = z_true.ncols();
    let x = normal_scores(&z_est.to_owned());
    if x.iter().all(|&v| v == 0.0) {
        log::warn!("estimated block has no variance; reporting zero R²");
        return Ok(vec![0.0; m]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SPLIT_SEED);
    let mut idx: Vec<usize> = (0..t).collect();
    idx.shuffle(&mut rng);
    idx.truncate(MAX_ROWS);
    let n_train = ((idx.len() as f64) * TRAIN_FRACTION).round() as usize;
    let (train, test) = idx.split_at(n_train);

    let mut dists = Vec::new();
    for (a, &i) in train.iter().enumerate().take(500) {
        for &j in &train[a + 1..train.len().min(500)] {
            dists.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    let bw = median(dists).max(1e-12);
    let gamma = 1.0 / (2.0 * bw * bw);
    let kernel = |i: usize, j: usize| (-gamma * sq_dist(x.row(i), x.row(j))).exp();

    let n = train.len();
    let mut gram = DMatrix::from_fn(n, n, |a, b| kernel(train[a], train[b]));
    for d in 0..n {
        gram[(d, d)] += RIDGE * n as f64;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| LstdError::Shape("kernel matrix is not positive definite".into()))?;
    let cross = DMatrix::from_fn(test.len(), n, |a, b| kernel(test[a], train[b]));

    let mut out = Vec::with_capacity(m);
    for col in z_true.columns() {
        let mean = train.iter().map(|&i| col[i]).sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, train.iter().map(|&i| col[i] - mean));
        let alpha = chol.solve(&y);
        let pred = &cross * alpha;
        let test_mean = test.iter().map(|&i| col[i]).sum::<f64>() / test.len() as f64;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for (a, &i) in test.iter().enumerate() {
            ss_res += (col[i] - mean - pred[a]).powi(2);
            ss_tot += (col[i] - test_mean).powi(2);
        }
        out.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 });
    }
    Ok(out)
}

/// Absolute Pearson correlation matrix, `k_est x k_true`; zero-variance
/// columns score 0.
pub fn abs_correlation(z_est: ArrayView2<f64>, z_true: ArrayView2<f64>) -> Array2<f64> {
    let a = standardize_columns(&z_est.to_owned());
    let b = standardize_columns(&z_true.to_owned());
    let n = a.nrows() as f64;
    (a.t().dot(&b) / n).mapv(f64::abs)
}

/// Mean absolute correlation under the best one-to-one matching of columns.
pub fn mcc(z_est: ArrayView2<f64>, z_true: ArrayView2<f64>) -> Result<f64> {
    if z_est.dim() != z_true.dim() {
        return Err(LstdError::Shape(format!(
            "estimated {:?} vs true {:?}",
            z_est.dim(),
            z_true.dim()
        )));
    }
    let k = z_est.ncols();
    if k == 0 {
        return Ok(0.0);
    }
    let corr = abs_correlation(z_est, z_true);
    const SCALE: f64 = 1e12;
    let weights = Matrix::from_fn(k, k, |(i, j)| (corr[[i, j]] * SCALE).round() as i64);
    let (_, assignment) = kuhn_munkres(&weights);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| corr[[i, j]]).sum();
    Ok(total / k as f64)
}

/// Something that maps a lookback window to posterior means of both blocks.
pub trait LatentEncoder {
    fn lookback(&self) -> usize;

    /// `(L x n_s, L x n_d)` for an `L x D` window.
    fn encode_means(&self, window: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)>;
}

impl<T: Scalar> LatentEncoder for LstdModel<T> {
    fn lookback(&self) -> usize {
        self.config.lookback
    }

    fn encode_means(&self, window: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (s, d) = LstdModel::encode_means(self, window.mapv(T::of).view())?;
        Ok((s.mapv(|v| v.as_f64()), d.mapv(|v| v.as_f64())))
    }
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Encodes non-overlapping lookback windows, concatenates the posterior
/// means, and scores them against the true latents of the same steps.
pub fn identifiability_report<E: LatentEncoder + ?Sized>(
    encoder: &E,
    dataset: &SyntheticDataset,
    normalizer: Option<&RunningNormalizer>,
    max_windows: usize,
) -> Result<IdentifiabilityReport> {
    let l = encoder.lookback();
    let t = dataset.x.nrows();
    let windows = (t / l).min(max_windows);
    if windows == 0 {
        return Err(LstdError::Shape(format!("series of {t} steps has no window of {l}")));
    }
    let mut est_s = Vec::new();
    let mut est_d = Vec::new();
    for w in 0..windows {
        let raw = dataset.x.slice(s![w * l..(w + 1) * l, ..]);
        let x = match normalizer {
            Some(n) => n.apply(raw),
            None => raw.to_owned(),
        };
        let (a, b) = encoder.encode_means(x.view())?;
        est_s.push(a);
        est_d.push(b);
    }
    let cat = |parts: &[Array2<f64>]| {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    let (es, ed) = (cat(&est_s), cat(&est_d));
    let rows = windows * l;
    let ts = dataset.z_s.slice(s![..rows, ..]);
    let td = dataset.z_d.slice(s![..rows, ..]);
    let mcc_or_zero = |e: &Array2<f64>, tr: ArrayView2<f64>| {
        if e.ncols() == tr.ncols() {
            mcc(e.view(), tr)
        } else {
            Ok(0.0)
        }
    };
    Ok(IdentifiabilityReport {
        r2_within_long: mean_of(&block_r2(es.view(), ts)?),
        r2_within_short: mean_of(&block_r2(ed.view(), td)?),
        r2_cross_ls: mean_of(&block_r2(es.view(), td)?),
        r2_cross_sl: mean_of(&block_r2(ed.view(), ts)?),
        mcc_long: mcc_or_zero(&es, ts)?,
        mcc_short: mcc_or_zero(&ed, td)?,
        windows,
    })
}

/// `t = 1..H-1` trace of the terminal short-term residual's sensitivity to
/// each earlier step, for a window whose first `L` rows are encoded.
pub fn intervention_gradient_trace<T: Scalar>(model: &LstdModel<T>, window: ArrayView2<T>) -> Result<Vec<f64>> {
    let l = model.config.lookback;
    if window.nrows() < l {
        return Err(LstdError::Shape(format!("window of {} rows, lookback {l}", window.nrows())));
    }
    let trace = model.dependency_trace(window.slice(s![..l, ..]))?;
    Ok(trace.into_iter().map(|v| v.as_f64()).collect())
}

/// A window holding exactly one interior intervention, with its trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionWindow {
    pub start: usize,
    /// Offset of the intervened step inside the window.
    pub step: usize,
    pub trace: Vec<f64>,
}

impl InterventionWindow {
    /// Mean trace over the steps before the intervention.
    pub fn pre(&self) -> f64 {
        mean_of(&self.trace[..self.step])
    }

    /// Mean trace from the intervention on.
    pub fn post(&self) -> f64 {
        mean_of(&self.trace[self.step..])
    }
}

/// Median of per-window mean trace before and at/after the intervention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionSummary {
    pub windows: usize,
    pub median_pre: f64,
    pub median_post: f64,
}

impl InterventionSummary {
    pub fn from_windows(windows: &[InterventionWindow]) -> Self {
        InterventionSummary {
            windows: windows.len(),
            median_pre: median(windows.iter().map(InterventionWindow::pre).collect()),
            median_post: median(windows.iter().map(InterventionWindow::post).collect()),
        }
    }
}

/// Non-overlapping windows whose span contains exactly one intervention at
/// an interior step, scanned left to right.
pub fn intervention_windows<T: Scalar>(
    model: &LstdModel<T>,
    x: ArrayView2<T>,
    mask: &[bool],
    max_windows: usize,
) -> Result<Vec<InterventionWindow>> {
    let h = model.config.horizon;
    if mask.len() < x.nrows() {
        return Err(LstdError::Shape(format!("{} mask entries for {} rows", mask.len(), x.nrows())));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + h <= x.nrows() && out.len() < max_windows {
        let hits: Vec<usize> = (0..h).filter(|&k| mask[start + k]).collect();
        // Trace entry k covers step k + 1 (0-based k over 0..H-1).
        if let [k] = hits[..] {
            if k >= 1 && k <= h - 2 {
                let trace = intervention_gradient_trace(model, x.slice(s![start..start + h, ..]))?;
                out.push(InterventionWindow { start, step: k, trace });
                start += h;
                continue;
            }
        }
        start += 1;
    }
    Ok(out)
}

pub fn intervention_summary<T: Scalar>(
    model: &LstdModel<T>,
    x: ArrayView2<T>,
    mask: &[bool],
    max_windows: usize,
) -> Result<InterventionSummary> {
    let windows = intervention_windows(model, x, mask, max_windows)?;
    Ok(InterventionSummary::from_windows(&windows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, k), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn mcc_is_permutation_and_sign_invariant() {
        let z = gaussian(500, 3, 1);
        let mut e = Array2::zeros((500, 3));
        e.column_mut(0).assign(&z.column(2).mapv(|v| -v));
        e.column_mut(1).assign(&z.column(0));
        e.column_mut(2).assign(&z.column(1).mapv(|v| -2.0 * v));
        assert!((mcc(e.view(), z.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mcc_zero_variance_column_scores_zero() {
        let z = gaussian(200, 2, 2);
        let mut e = z.clone();
        e.column_mut(1).fill(3.0);
        let m = mcc(e.view(), z.view()).unwrap();
        assert!((m - 0.5).abs() < 0.1, "{m}");
        assert!(mcc(array![[1.0]].view(), array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn r2_perfect_predictor() {
        let z = gaussian(1500, 2, 3);
        let r2 = block_r2(z.view(), z.view()).unwrap();
        assert!(r2.iter().all(|&v| v > 0.99), "{r2:?}");
    }

    #[test]
    fn r2_degenerate_estimate_is_zero() {
        let z = gaussian(300, 2, 4);
        let e = Array2::from_elem((300, 2), 1.0);
        assert_eq!(block_r2(e.view(), z.view()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn r2_rejects_too_few_rows() {
        let z = gaussian(20, 2, 5);
        assert!(block_r2(z.view(), z.view()).is_err());
    }
}
