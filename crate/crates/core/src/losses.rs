//! Training objectives and their weighted combination.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{LstdError, Result};
use crate::nn::Bound;
use crate::priors::PriorNetworkBank;
use crate::scalar::Scalar;

/// Keeps the norm differentiable at zero while leaving its value within 1e-10.
const NORM_EPS: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Smooth constraint.
    pub alpha: f64,
    /// Both KL terms.
    pub beta: f64,
    /// Interrupted-dependency constraint.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 1.0,
            gamma: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LstdError::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_R")]
    pub recon: f64,
    #[serde(rename = "L_P")]
    pub pred: f64,
    #[serde(rename = "L_K_s")]
    pub kl_long: f64,
    #[serde(rename = "L_K_d")]
    pub kl_short: f64,
    #[serde(rename = "L_m")]
    pub smooth: f64,
    #[serde(rename = "L_s")]
    pub interrupt: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum of the parts; any non-finite part is an error naming it.
    pub fn combine(
        recon: f64,
        pred: f64,
        kl_long: f64,
        kl_short: f64,
        smooth: f64,
        interrupt: f64,
        w: &LossWeights,
    ) -> Result<Self> {
        for (name, v) in [
            ("L_R", recon),
            ("L_P", pred),
            ("L_K_s", kl_long),
            ("L_K_d", kl_short),
            ("L_m", smooth),
            ("L_s", interrupt),
        ] {
            if !v.is_finite() {
                return Err(LstdError::NonFiniteLoss(name));
            }
        }
        let total = recon + pred + w.beta * (kl_long + kl_short) + w.alpha * smooth + w.gamma * interrupt;
        Ok(LossBreakdown {
            recon,
            pred,
            kl_long,
            kl_short,
            smooth,
            interrupt,
            total,
        })
    }
}

/// Graph nodes for every term, all `1 x 1`. Terms switched off by a zero
/// weight may be absent.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub recon: Var,
    pub pred: Var,
    pub kl_long: Option<Var>,
    pub kl_short: Option<Var>,
    pub smooth: Option<Var>,
    pub interrupt: Option<Var>,
}

impl LossTerms {
    /// Weighted total node and the numeric breakdown.
    pub fn total<T: Scalar>(&self, g: &Graph<T>, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
        let val = |v: Option<Var>| v.map(|v| g.scalar(v).as_f64()).unwrap_or(0.0);
        let breakdown = LossBreakdown::combine(
            g.scalar(self.recon).as_f64(),
            g.scalar(self.pred).as_f64(),
            val(self.kl_long),
            val(self.kl_short),
            val(self.smooth),
            val(self.interrupt),
            w,
        )?;
        let mut total = g.add(self.recon, self.pred);
        for (term, weight) in [
            (self.kl_long, w.beta),
            (self.kl_short, w.beta),
            (self.smooth, w.alpha),
            (self.interrupt, w.gamma),
        ] {
            if let Some(t) = term {
                if weight != 0.0 {
                    let s = g.scale(t, T::of(weight));
                    total = g.add(total, s);
                }
            }
        }
        Ok((total, breakdown))
    }
}

/// Mean squared error over every entry.
pub fn mse<T: Scalar>(g: &Graph<T>, estimate: Var, target: Var) -> Result<Var> {
    if g.shape(estimate) != g.shape(target) {
        return Err(LstdError::Shape(format!(
            "estimate {:?} vs target {:?}",
            g.shape(estimate),
            g.shape(target)
        )));
    }
    let d = g.sub(estimate, target);
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn reconstruction_loss<T: Scalar>(x_recon: ArrayView2<T>, x_true: ArrayView2<T>) -> Result<T> {
    let g = Graph::new();
    let a = g.constant(x_recon.to_owned());
    let b = g.constant(x_true.to_owned());
    Ok(g.scalar(mse(&g, a, b)?))
}

/// Same quantity as [`reconstruction_loss`], over the forecast window.
pub fn prediction_loss<T: Scalar>(x_pred: ArrayView2<T>, x_future: ArrayView2<T>) -> Result<T> {
    reconstruction_loss(x_pred, x_future)
}

/// Row-wise softmax of `z z^T / sqrt(n)`.
pub fn association_matrix<T: Scalar>(g: &Graph<T>, z: Var) -> Var {
    let (_, n) = g.shape(z);
    let zt = g.transpose(z);
    let gram = g.matmul(z, zt);
    let logits = g.scale(gram, T::of(1.0 / (n.max(1) as f64).sqrt()));
    g.softmax_rows(logits)
}

pub fn association_values<T: Scalar>(z: ArrayView2<T>) -> Array2<T> {
    let g = Graph::new();
    let v = g.constant(z.to_owned());
    let a = association_matrix(&g, v);
    (*g.value(a)).clone()
}

/// Frobenius distance between the association matrices of the first and
/// second halves of `z_full` (`H x n`). For odd `H` the middle step is dropped
/// so both halves have `H / 2` rows.
pub fn smooth_constraint<T: Scalar>(g: &Graph<T>, z_full: Var) -> Result<Var> {
    let (h, _) = g.shape(z_full);
    if h < 2 {
        return Err(LstdError::Shape(format!("smooth constraint needs >= 2 steps, got {h}")));
    }
    let m = h / 2;
    let head = g.slice_rows(z_full, 0, m);
    let tail = g.slice_rows(z_full, h - m, h);
    let a = association_matrix(g, head);
    let b = association_matrix(g, tail);
    let d = g.sub(a, b);
    let sq = g.square(d);
    let s = g.sum(sq);
    let s = g.add_scalar(s, T::of(NORM_EPS));
    let norm = g.sqrt(s);
    Ok(g.add_scalar(norm, T::of(-NORM_EPS.sqrt())))
}

pub fn smooth_constraint_value<T: Scalar>(z_full: ArrayView2<T>) -> Result<T> {
    let g = Graph::new();
    let v = g.constant(z_full.to_owned());
    let l = smooth_constraint(&g, v)?;
    Ok(g.scalar(l))
}

/// For each output coordinate `i` of the terminal residual
/// `eps_H = r(z_H, z_{H-1})`, the adjoint `d eps_{H,i} / d z_t` for every
/// step of the chain, as an `H x n` node.
///
/// The chain is the row-wise concatenation of `segments`. Adjoints are taken
/// with respect to the segment nodes themselves, so when a later segment is
/// computed from an earlier one the earlier rows carry the total derivative
/// through that computation. The adjoint nodes are differentiable.
pub fn terminal_adjoints<T: Scalar>(
    g: &Graph<T>,
    p: &Bound,
    bank: &PriorNetworkBank<T>,
    segments: &[Var],
) -> Result<Vec<Var>> {
    if segments.is_empty() {
        return Err(LstdError::Shape("empty latent chain".into()));
    }
    let full = g.concat_rows(segments);
    let (h, n) = g.shape(full);
    if h < 2 {
        return Err(LstdError::Shape(format!("latent chain needs >= 2 steps, got {h}")));
    }
    let last = g.slice_rows(full, h - 1, h);
    let prev = g.slice_rows(full, h - 2, h - 1);
    let eps = bank.residuals(g, p, last, prev)?.eps;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let e = g.slice_cols(eps, i, i + 1);
        let grads = g.grad(e, segments);
        let parts: Vec<Var> = segments
            .iter()
            .zip(grads)
            .map(|(&s, gr)| gr.unwrap_or_else(|| g.constant(Array2::zeros(g.shape(s)))))
            .collect();
        out.push(g.concat_rows(&parts));
    }
    Ok(out)
}

fn check_finite<T: Scalar>(g: &Graph<T>, adjoints: &[Var], rows: usize) -> Result<()> {
    for (i, &a) in adjoints.iter().enumerate() {
        let v = g.value(a);
        for r in 0..rows {
            for (j, x) in v.row(r).iter().enumerate() {
                if !x.is_finite() {
                    return Err(LstdError::NonFinitePartial { i, j, tau: r + 2 });
                }
            }
        }
    }
    Ok(())
}

/// Sum of `|d eps_{H,i} / d z_{k,j}|` over all `i`, `j` and `k = 1..H-2`:
/// every step except the one the terminal residual reads directly.
pub fn interrupted_dependency_constraint<T: Scalar>(
    g: &Graph<T>,
    p: &Bound,
    bank: &PriorNetworkBank<T>,
    segments: &[Var],
) -> Result<Var> {
    let h: usize = segments.iter().map(|&s| g.shape(s).0).sum();
    if h < 3 {
        return Err(LstdError::Shape(format!(
            "interrupted dependency needs >= 3 steps, got {h}"
        )));
    }
    let adjoints = terminal_adjoints(g, p, bank, segments)?;
    check_finite(g, &adjoints, h - 2)?;
    let mut total: Option<Var> = None;
    for a in adjoints {
        let early = g.slice_rows(a, 0, h - 2);
        let ab = g.abs(early);
        let s = g.sum(ab);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s),
        });
    }
    Ok(total.expect("bank has at least one dimension"))
}

/// Per-step L1 magnitude `sum_{i,j} |d eps_{H,i} / d z_{t,j}|` for
/// `t = 1..H-1`.
pub fn dependency_trace<T: Scalar>(
    g: &Graph<T>,
    p: &Bound,
    bank: &PriorNetworkBank<T>,
    segments: &[Var],
) -> Result<Vec<T>> {
    let adjoints = terminal_adjoints(g, p, bank, segments)?;
    let (h, _) = g.shape(adjoints[0]);
    check_finite(g, &adjoints, h - 1)?;
    let mut trace = vec![T::zero(); h - 1];
    for a in adjoints {
        let v = g.value(a);
        for (t, slot) in trace.iter_mut().enumerate() {
            *slot = *slot + v.row(t).iter().map(|x| x.abs()).sum::<T>();
        }
    }
    Ok(trace)
}
