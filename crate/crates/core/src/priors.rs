//! Flow-style temporal priors over a latent block.
//!
//! Each dimension `i` owns an inverse-transition map
//! `eps_i = r_i(z_{t,i}, z_{t-1})` that turns the current latent into an
//! independent noise estimate. Because `r_i` sees only its own current
//! coordinate, the Jacobian of `(z_{t-1}, z_t) -> (z_{t-1}, eps_t)` is block
//! lower-triangular and its log-determinant is the sum of the diagonal partials
//! `log |d r_i / d z_{t,i}|`. With a standard-normal noise model this gives the
//! exact transition density `log p(z_t | z_{t-1})`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{leaky_mask, Graph, Var};
use crate::error::{LstdError, Result};
use crate::nn::{Bound, Init, Mlp, ParamStore};
use crate::scalar::Scalar;

/// Diagonal partials below this magnitude are reported as singular.
pub const SINGULAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BankKind<T> {
    /// `r_i(a, b) = a + mlp_i([a, b])`; the output layers start at zero, so a
    /// fresh bank is the identity and every diagonal partial is 1.
    Mlp { nets: Vec<Mlp> },
    /// `r_i(a, b) = own_i * a + sum_j prev[i][j] * b_j`, fixed coefficients.
    Linear { own: Vec<T>, prev: Array2<T> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorNetworkBank<T> {
    pub dim: usize,
    pub kind: BankKind<T>,
}

/// Residuals and diagonal partials for a batch of rows, both `m x n`.
#[derive(Clone, Copy, Debug)]
pub struct ResidualOutput {
    pub eps: Var,
    pub diag: Var,
}

impl<T: Scalar> PriorNetworkBank<T> {
    /// Learned bank with parameters registered under `namespace` in `store`.
    pub fn mlp<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        namespace: &str,
        dim: usize,
        hidden: &[usize],
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![dim + 1];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let nets = (0..dim)
            .map(|i| Mlp::new(store, &format!("{namespace}.r{i}"), &widths, slope, Init::Zeros, rng))
            .collect();
        PriorNetworkBank {
            dim,
            kind: BankKind::Mlp { nets },
        }
    }

    pub fn linear(own: Vec<T>, prev: Array2<T>) -> Self {
        assert_eq!(prev.dim(), (own.len(), own.len()));
        PriorNetworkBank {
            dim: own.len(),
            kind: BankKind::Linear { own, prev },
        }
    }

    /// `r_i(a, b) = a`: no temporal dependence, unit diagonal.
    pub fn identity(dim: usize) -> Self {
        Self::linear(vec![T::one(); dim], Array2::zeros((dim, dim)))
    }

    /// Inverse of a diagonal AR(1) `z_t = c z_{t-1} + eps`: `r_i(a, b) = a - c b_i`.
    pub fn ar1_inverse(dim: usize, c: T) -> Self {
        Self::linear(vec![T::one(); dim], Array2::from_diag_elem(dim, -c))
    }

    fn check(&self, g: &Graph<T>, v: Var, what: &str) -> Result<()> {
        let (_, n) = g.shape(v);
        if n != self.dim {
            return Err(LstdError::Shape(format!(
                "{what} has {n} columns, bank expects {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Evaluates every `r_i` on aligned rows of `z_t` and `z_prev` (`m x n` each).
    pub fn residuals(&self, g: &Graph<T>, p: &Bound, z_t: Var, z_prev: Var) -> Result<ResidualOutput> {
        self.check(g, z_t, "current latents")?;
        self.check(g, z_prev, "previous latents")?;
        if g.shape(z_t) != g.shape(z_prev) {
            return Err(LstdError::Shape(format!(
                "current {:?} and previous {:?} latents differ",
                g.shape(z_t),
                g.shape(z_prev)
            )));
        }
        let (m, n) = g.shape(z_t);
        match &self.kind {
            BankKind::Linear { own, prev } => {
                let own_row = Array2::from_shape_fn((m, n), |(_, i)| own[i]);
                let scaled = g.mul_const(z_t, own_row.clone());
                let pt = g.constant(prev.t().to_owned());
                let lagged = g.matmul(z_prev, pt);
                Ok(ResidualOutput {
                    eps: g.add(scaled, lagged),
                    diag: g.constant(own_row),
                })
            }
            BankKind::Mlp { nets } => {
                let mut eps = Vec::with_capacity(n);
                let mut diag = Vec::with_capacity(n);
                for (i, net) in nets.iter().enumerate() {
                    let a = g.slice_cols(z_t, i, i + 1);
                    let input = g.concat_cols(&[a, z_prev]);
                    let (out, tangent) = mlp_with_tangent(g, p, net, input);
                    eps.push(g.add(a, out));
                    diag.push(g.add_scalar(tangent, T::one()));
                }
                Ok(ResidualOutput {
                    eps: g.concat_cols(&eps),
                    diag: g.concat_cols(&diag),
                })
            }
        }
    }

    /// Residuals along a sequence: row `t - 1` of the result is `eps_t`, `t = 2..T`.
    pub fn sequence_residuals(&self, g: &Graph<T>, p: &Bound, z_seq: Var) -> Result<ResidualOutput> {
        let (len, _) = g.shape(z_seq);
        if len < 2 {
            return Err(LstdError::Shape(format!("need at least 2 steps, got {len}")));
        }
        let cur = g.slice_rows(z_seq, 1, len);
        let prev = g.slice_rows(z_seq, 0, len - 1);
        self.residuals(g, p, cur, prev)
    }

    /// `sum log |diag|` over all rows and dimensions, as a `1 x 1` node.
    pub fn log_abs_det(&self, g: &Graph<T>, diag: Var) -> Result<Var> {
        let vals = g.value(diag);
        for ((row, dim), &d) in vals.indexed_iter() {
            let mag = d.abs().as_f64();
            if mag < SINGULAR_FLOOR || !mag.is_finite() {
                return Err(LstdError::Singular {
                    row,
                    dim,
                    value: mag,
                });
            }
        }
        let a = g.abs(diag);
        let l = g.ln(a);
        Ok(g.sum(l))
    }

    /// `log p(z_1) + sum_{t>=2} [ sum_i log N(eps_{t,i}) + log |det J_t| ]`
    /// with a standard-normal `p(z_1)`.
    pub fn transition_log_prob_graph(&self, g: &Graph<T>, p: &Bound, z_seq: Var) -> Result<Var> {
        self.check(g, z_seq, "latent sequence")?;
        let first = g.slice_rows(z_seq, 0, 1);
        let initial = standard_normal_log_density(g, first);
        let res = self.sequence_residuals(g, p, z_seq)?;
        let noise = standard_normal_log_density(g, res.eps);
        let logdet = self.log_abs_det(g, res.diag)?;
        let s = g.add(initial, noise);
        Ok(g.add(s, logdet))
    }

    // ---- array conveniences --------------------------------------------

    /// `eps_t` for one pair of states.
    pub fn residual_values(
        &self,
        params: &ParamStore<T>,
        z_t: ArrayView1<T>,
        z_prev: ArrayView1<T>,
    ) -> Result<Array1<T>> {
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let a = g.constant(z_t.to_owned().insert_axis(ndarray::Axis(0)));
        let b = g.constant(z_prev.to_owned().insert_axis(ndarray::Axis(0)));
        let res = self.residuals(&g, &p, a, b)?;
        Ok(g.value(res.eps).row(0).to_owned())
    }

    /// `sum_i log |d r_i / d z_{t,i}|` at one pair of states.
    pub fn jacobian_logdet(
        &self,
        params: &ParamStore<T>,
        z_t: ArrayView1<T>,
        z_prev: ArrayView1<T>,
    ) -> Result<T> {
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let a = g.constant(z_t.to_owned().insert_axis(ndarray::Axis(0)));
        let b = g.constant(z_prev.to_owned().insert_axis(ndarray::Axis(0)));
        let res = self.residuals(&g, &p, a, b)?;
        let ld = self.log_abs_det(&g, res.diag)?;
        Ok(g.scalar(ld))
    }

    pub fn transition_log_prob(&self, params: &ParamStore<T>, z_seq: ArrayView2<T>) -> Result<T> {
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let z = g.constant(z_seq.to_owned());
        let lp = self.transition_log_prob_graph(&g, &p, z)?;
        Ok(g.scalar(lp))
    }
}

/// Forward pass of `net` together with the derivative of its output with
/// respect to input column 0, both `m x 1`. The derivative is built from graph
/// ops, so it is differentiable with respect to the weights.
fn mlp_with_tangent<T: Scalar>(g: &Graph<T>, p: &Bound, net: &Mlp, input: Var) -> (Var, Var) {
    let (m, _) = g.shape(input);
    let slope = T::of(net.slope);
    let last = net.layers.len() - 1;
    let mut h = input;
    let mut tangent: Option<Var> = None;
    for (l, layer) in net.layers.iter().enumerate() {
        let pre = layer.apply(g, p, h);
        let t = match tangent {
            None => {
                let w0 = g.slice_rows(p[layer.weight], 0, 1);
                g.broadcast_rows(w0, m)
            }
            Some(t) => g.matmul(t, p[layer.weight]),
        };
        if l == last {
            h = pre;
            tangent = Some(t);
        } else {
            let mask = leaky_mask(&g.value(pre), slope);
            h = g.mul_const(pre, mask.clone());
            tangent = Some(g.mul_const(t, mask));
        }
    }
    (h, tangent.expect("at least one layer"))
}

/// `sum log N(v; 0, 1)` over all entries.
pub fn standard_normal_log_density<T: Scalar>(g: &Graph<T>, v: Var) -> Var {
    let (r, c) = g.shape(v);
    let sq = g.square(v);
    let s = g.sum(sq);
    let s = g.scale(s, T::of(-0.5));
    g.add_scalar(s, T::of(-0.5 * (2.0 * PI).ln() * (r * c) as f64))
}

/// `sum log N(z; mean, exp(logvar))` over all entries.
pub fn gaussian_log_density<T: Scalar>(g: &Graph<T>, z: Var, mean: Var, logvar: Var) -> Var {
    let (r, c) = g.shape(z);
    let diff = g.sub(z, mean);
    let sq = g.square(diff);
    let neg = g.neg(logvar);
    let prec = g.exp(neg);
    let maha = g.mul(sq, prec);
    let inner = g.add(maha, logvar);
    let s = g.sum(inner);
    let s = g.scale(s, T::of(-0.5));
    g.add_scalar(s, T::of(-0.5 * (2.0 * PI).ln() * (r * c) as f64))
}

/// Single-sample estimate of `KL(q || p)` per latent element:
/// `(log q(z_past) - log p(z_scored)) / (L * n)`.
///
/// `z_past` are the posterior samples (`L x n`); `z_scored` is the sequence the
/// prior scores, either `z_past` itself or `z_past` followed by predicted
/// future latents.
pub fn kl_estimate_graph<T: Scalar>(
    g: &Graph<T>,
    p: &Bound,
    bank: &PriorNetworkBank<T>,
    mean: Var,
    logvar: Var,
    z_past: Var,
    z_scored: Var,
) -> Result<Var> {
    let (l, n) = g.shape(z_past);
    let log_q = gaussian_log_density(g, z_past, mean, logvar);
    let log_p = bank.transition_log_prob_graph(g, p, z_scored)?;
    let diff = g.sub(log_q, log_p);
    Ok(g.scale(diff, T::of(1.0 / (l * n) as f64)))
}

/// KL estimate averaged over several standard-normal draws `etas`.
pub fn kl_estimate<T: Scalar>(
    bank: &PriorNetworkBank<T>,
    params: &ParamStore<T>,
    mean: ArrayView2<T>,
    logvar: ArrayView2<T>,
    etas: &[Array2<T>],
) -> Result<T> {
    assert!(!etas.is_empty());
    let mut total = T::zero();
    for eta in etas {
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let m = g.constant(mean.to_owned());
        let lv = g.constant(logvar.to_owned());
        let z = g.constant(crate::model::reparameterize(mean, logvar, eta.view()));
        let kl = kl_estimate_graph(&g, &p, bank, m, lv, z, z)?;
        total = total + g.scalar(kl);
    }
    Ok(total / T::of(etas.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_bank(dim: usize, seed: u64) -> (PriorNetworkBank<f64>, ParamStore<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bank = PriorNetworkBank::mlp(&mut store, "prior", dim, &[16, 16, 16], 0.2, &mut rng);
        // Move off the zero-initialised output layer so the maps are non-trivial.
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.get_mut(id).iter_mut() {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        (bank, store)
    }

    #[test]
    fn identity_bank_returns_current_state() {
        let bank = PriorNetworkBank::<f64>::identity(3);
        let store = ParamStore::new();
        let z = array![0.5, -1.0, 2.0];
        let eps = bank.residual_values(&store, z.view(), array![9.0, 9.0, 9.0].view()).unwrap();
        assert_eq!(eps, z);
        assert_eq!(bank.jacobian_logdet(&store, z.view(), z.view()).unwrap(), 0.0);
    }

    #[test]
    fn ar1_inverse_at_fixed_point_is_zero() {
        let bank = PriorNetworkBank::<f64>::linear(vec![1.0; 2], -Array2::eye(2));
        let z = array![0.7, -0.3];
        let eps = bank.residual_values(&ParamStore::new(), z.view(), z.view()).unwrap();
        assert_eq!(eps, array![0.0, 0.0]);
    }

    #[test]
    fn constant_diagonal_logdet() {
        let bank = PriorNetworkBank::<f64>::linear(vec![2.0; 3], -Array2::eye(3));
        let z = array![0.1, 0.2, 0.3];
        let ld = bank.jacobian_logdet(&ParamStore::new(), z.view(), z.view()).unwrap();
        assert!((ld - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn singular_diagonal_is_an_error() {
        let bank = PriorNetworkBank::<f64>::linear(vec![1.0, 0.0], Array2::zeros((2, 2)));
        let z = array![0.1, 0.2];
        let err = bank.jacobian_logdet(&ParamStore::new(), z.view(), z.view()).unwrap_err();
        assert!(matches!(err, LstdError::Singular { dim: 1, .. }));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let bank = PriorNetworkBank::<f64>::identity(2);
        let r = bank.residual_values(&ParamStore::new(), array![1.0].view(), array![1.0].view());
        assert!(matches!(r, Err(LstdError::Shape(_))));
    }

    #[test]
    fn fresh_mlp_bank_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let bank = PriorNetworkBank::mlp(&mut store, "p", 2, &[8, 8, 8], 0.2, &mut rng);
        let z = array![0.4, -0.9];
        let eps = bank.residual_values(&store, z.view(), array![1.0, 2.0].view()).unwrap();
        assert_eq!(eps, z);
        assert_eq!(bank.jacobian_logdet(&store, z.view(), z.view()).unwrap(), 0.0);
    }

    #[test]
    fn residual_depends_only_on_own_current_coordinate() {
        let (bank, store) = random_bank(3, 4);
        let z = array![0.3, -0.2, 0.8];
        let prev = array![-0.5, 0.1, 0.4];
        let h = 1e-6;
        for j in 0..3 {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let ep = bank.residual_values(&store, zp.view(), prev.view()).unwrap();
            let em = bank.residual_values(&store, zm.view(), prev.view()).unwrap();
            for i in 0..3 {
                let d = (ep[i] - em[i]) / (2.0 * h);
                if i != j {
                    assert!(d.abs() < 1e-8, "d eps_{i} / d z_{j} = {d}");
                }
            }
        }
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let (bank, store) = random_bank(2, 8);
        let prev = array![0.2, -0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let z = array![rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let g = Graph::new();
            let p = store.bind_frozen(&g);
            let a = g.constant(z.clone().insert_axis(ndarray::Axis(0)));
            let b = g.constant(prev.clone().insert_axis(ndarray::Axis(0)));
            let diag = g.value(bank.residuals(&g, &p, a, b).unwrap().diag);
            let h = 1e-6;
            for i in 0..2 {
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (bank.residual_values(&store, zp.view(), prev.view()).unwrap()[i]
                    - bank.residual_values(&store, zm.view(), prev.view()).unwrap()[i])
                    / (2.0 * h);
                assert!((fd - diag[[0, i]]).abs() < 1e-6, "{fd} vs {}", diag[[0, i]]);
            }
        }
    }

    #[test]
    fn kl_of_matched_distributions_is_near_zero() {
        let bank = PriorNetworkBank::<f64>::identity(2);
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean = Array2::zeros((3, 2));
        let logvar = Array2::zeros((3, 2));
        let etas: Vec<Array2<f64>> = (0..10_000)
            .map(|_| Array2::from_shape_fn((3, 2), |_| rng.sample(StandardNormal)))
            .collect();
        // Per-sample log q - log p is exactly 0 here: q and p coincide pointwise.
        let kl = kl_estimate(&bank, &store, mean.view(), logvar.view(), &etas).unwrap();
        assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn kl_against_standard_normal_matches_closed_form() {
        // q = N(mu, 1) per element vs factorised N(0, 1): KL = mu^2 / 2.
        let bank = PriorNetworkBank::<f64>::identity(2);
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = array![[0.8, -0.4], [1.2, 0.0], [-0.6, 0.5]];
        let logvar = Array2::zeros((3, 2));
        let expected = mean.mapv(|m: f64| m * m / 2.0).mean().unwrap();
        let samples: Vec<f64> = (0..10_000)
            .map(|_| {
                let eta = Array2::from_shape_fn((3, 2), |_| rng.sample(StandardNormal));
                kl_estimate(&bank, &store, mean.view(), logvar.view(), &[eta]).unwrap()
            })
            .collect();
        let n = samples.len() as f64;
        let m = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((m - expected).abs() < 3.0 * sd / n.sqrt(), "{m} vs {expected}");
    }

    #[test]
    fn averaging_k_samples_shrinks_variance() {
        let bank = PriorNetworkBank::<f64>::ar1_inverse(2, 0.5);
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mean = array![[0.3, -0.2], [0.1, 0.4], [0.0, 0.2], [-0.3, 0.1]];
        let logvar = Array2::from_elem((4, 2), -0.5);
        let variance = |k: usize, rng: &mut ChaCha8Rng| {
            let draws: Vec<f64> = (0..2000)
                .map(|_| {
                    let etas: Vec<_> = (0..k)
                        .map(|_| Array2::from_shape_fn((4, 2), |_| rng.sample(StandardNormal)))
                        .collect();
                    kl_estimate(&bank, &store, mean.view(), logvar.view(), &etas).unwrap()
                })
                .collect();
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64
        };
        let v1 = variance(1, &mut rng);
        let v8 = variance(8, &mut rng);
        let ratio = v1 / v8;
        // Expect 8; the 2000-draw variance estimates carry roughly 5% error each.
        assert!((6.0..10.5).contains(&ratio), "variance ratio {ratio}");
    }
}
