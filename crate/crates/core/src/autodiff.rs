//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every value is a 2-D array; scalars are `1 x 1`. The backward pass is built
//! out of the same recorded operations as the forward pass, so a gradient is
//! itself a [`Var`] that can be differentiated again. The interrupted-dependency
//! penalty relies on this: it is a function of first derivatives and is trained
//! with gradients of those derivatives.
//!
//! Nodes are appended in creation order, which is already a topological order;
//! a backward sweep simply walks ids downwards.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    /// `a + c` with `c` a constant (scalar or matrix); gradient passes through.
    Shift(Var),
    /// `a * m` with `m` a constant matrix (masks for |.|, leaky slopes).
    MulConst(Var, Arc<Array2<T>>),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Tanh(Var),
    Transpose(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    BroadcastScalar(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    PadRows(Var, usize),
    PadCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

struct Node<T> {
    value: Arc<Array2<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recording of matrix operations.
///
/// Single-threaded by construction (interior mutability through `RefCell`);
/// build one graph per thread when evaluating in parallel.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Shared handle to a node's value.
    pub fn value(&self, v: Var) -> Arc<Array2<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let d = self.nodes.borrow()[v.0].value.dim();
        d
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// Differentiable leaf (parameters, inputs we want gradients for).
    pub fn leaf(&self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Differentiable leaf sharing storage with the caller.
    pub fn leaf_shared(&self, value: Arc<Array2<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&self, x: T) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    // ---- elementwise and linear algebra ----------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&*self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = &*self.value(a) + &*self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = &*self.value(a) - &*self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = &*self.value(a) * &*self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let v = &*self.value(a) / &*self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Div(a, b), ng)
    }

    pub fn neg(&self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a), self.needs(a))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a, c), self.needs(a))
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::Shift(a), self.needs(a))
    }

    /// `a + c` where `c` is treated as a constant.
    pub fn add_const(&self, a: Var, c: &Array2<T>) -> Var {
        let v = &*self.value(a) + c;
        self.push(v, Op::Shift(a), self.needs(a))
    }

    /// `a * m` where `m` is treated as a constant.
    pub fn mul_const(&self, a: Var, m: Array2<T>) -> Var {
        let v = &*self.value(a) * &m;
        self.push(v, Op::MulConst(a, Arc::new(m)), self.needs(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.value(a).mapv(T::exp);
        self.push(v, Op::Exp(a), self.needs(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        let v = self.value(a).mapv(T::ln);
        self.push(v, Op::Log(a), self.needs(a))
    }

    pub fn square(&self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a), self.needs(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let v = self.value(a).mapv(T::sqrt);
        self.push(v, Op::Sqrt(a), self.needs(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.value(a).mapv(T::tanh);
        self.push(v, Op::Tanh(a), self.needs(a))
    }

    /// `|a|`, with subgradient 0 at the origin.
    pub fn abs(&self, a: Var) -> Var {
        let sign = self.value(a).mapv(|x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        self.mul_const(a, sign)
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let mask = leaky_mask(&self.value(a), slope);
        self.mul_const(a, mask)
    }

    /// Clamps values into `[lo, hi]`; gradient is zero where clamped.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        let val = self.value(a);
        let mask = val.mapv(|x| if x < lo || x > hi { T::zero() } else { T::one() });
        let offset = val.mapv(|x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                T::zero()
            }
        });
        let inside = self.mul_const(a, mask);
        self.add_const(inside, &offset)
    }

    // ---- shape ---------------------------------------------------------

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), self.needs(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a), self.needs(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of((r * c) as f64))
    }

    /// Column sums, `m x n -> 1 x n`.
    pub fn sum_rows(&self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(a), self.needs(a))
    }

    /// Row sums, `m x n -> m x 1`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a), self.needs(a))
    }

    pub fn broadcast_scalar(&self, a: Var, shape: (usize, usize)) -> Var {
        let x = self.scalar(a);
        self.push(Array2::from_elem(shape, x), Op::BroadcastScalar(a), self.needs(a))
    }

    /// Repeats a `1 x n` row `m` times.
    pub fn broadcast_rows(&self, a: Var, m: usize) -> Var {
        let val = self.value(a);
        assert_eq!(val.nrows(), 1, "broadcast_rows expects a single row");
        let v = val.broadcast((m, val.ncols())).unwrap().to_owned();
        self.push(v, Op::BroadcastRows(a), self.needs(a))
    }

    /// Repeats an `m x 1` column `n` times.
    pub fn broadcast_cols(&self, a: Var, n: usize) -> Var {
        let val = self.value(a);
        assert_eq!(val.ncols(), 1, "broadcast_cols expects a single column");
        let v = val.broadcast((val.nrows(), n)).unwrap().to_owned();
        self.push(v, Op::BroadcastCols(a), self.needs(a))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start), self.needs(a))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start), self.needs(a))
    }

    /// Places `a` at row `offset` inside a zero matrix with `total` rows.
    pub fn pad_rows(&self, a: Var, offset: usize, total: usize) -> Var {
        let val = self.value(a);
        let mut v = Array2::zeros((total, val.ncols()));
        v.slice_mut(s![offset..offset + val.nrows(), ..]).assign(&*val);
        self.push(v, Op::PadRows(a, offset), self.needs(a))
    }

    /// Places `a` at column `offset` inside a zero matrix with `total` columns.
    pub fn pad_cols(&self, a: Var, offset: usize, total: usize) -> Var {
        let val = self.value(a);
        let mut v = Array2::zeros((val.nrows(), total));
        v.slice_mut(s![.., offset..offset + val.ncols()]).assign(&*val);
        self.push(v, Op::PadCols(a, offset), self.needs(a))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    // ---- composites ----------------------------------------------------

    /// Row-wise softmax.
    pub fn softmax_rows(&self, a: Var) -> Var {
        // Subtracting the row max is exact for softmax, so it can be a constant.
        let val = self.value(a);
        let shift = val.map_axis(Axis(1), |row| {
            row.iter().fold(T::neg_infinity(), |m, &x| m.max(x))
        });
        let (r, c) = val.dim();
        let neg_max = Array2::from_shape_fn((r, c), |(i, _)| -shift[i]);
        let shifted = self.add_const(a, &neg_max);
        let e = self.exp(shifted);
        let z = self.sum_cols(e);
        let zb = self.broadcast_cols(z, c);
        self.div(e, zb)
    }

    /// Adds a `1 x n` bias to every row of `a`.
    pub fn add_row(&self, a: Var, bias: Var) -> Var {
        let (m, _) = self.shape(a);
        let b = self.broadcast_rows(bias, m);
        self.add(a, b)
    }

    // ---- backward ------------------------------------------------------

    /// Gradient of `sum(output)` with respect to each of `wrt`.
    ///
    /// The returned vars are ordinary graph nodes and can be differentiated
    /// again. `None` means `output` does not depend on that input.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Vec<Option<Var>> {
        if wrt.is_empty() {
            return Vec::new();
        }
        let lowest = wrt.iter().map(|v| v.0).min().unwrap();
        // Gradient flags are exact when every target is tracked; otherwise an
        // untracked intermediate is a target and nothing above it can be pruned.
        let exact = wrt.iter().all(|&v| self.needs(v));
        let live = |v: Var| v.0 >= lowest && (!exact || self.needs(v));
        let mut adj: Vec<Option<Var>> = vec![None; output.0 + 1];
        if !live(output) || lowest > output.0 {
            return vec![None; wrt.len()];
        }
        let (r, c) = self.shape(output);
        adj[output.0] = Some(self.constant(Array2::ones((r, c))));

        for id in (lowest..=output.0).rev() {
            let Some(g) = adj[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            let me = Var(id);
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if live(a) {
                        let bt = self.transpose(b);
                        let ga = self.matmul(g, bt);
                        self.accumulate(&mut adj, &live, a, ga);
                    }
                    if live(b) {
                        let at = self.transpose(a);
                        let gb = self.matmul(at, g);
                        self.accumulate(&mut adj, &live, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, &live, a, g);
                    self.accumulate(&mut adj, &live, b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, &live, a, g);
                    if live(b) {
                        let gb = self.neg(g);
                        self.accumulate(&mut adj, &live, b, gb);
                    }
                }
                Op::Mul(a, b) => {
                    if live(a) {
                        let ga = self.mul(g, b);
                        self.accumulate(&mut adj, &live, a, ga);
                    }
                    if live(b) {
                        let gb = self.mul(g, a);
                        self.accumulate(&mut adj, &live, b, gb);
                    }
                }
                Op::Div(a, b) => {
                    if live(a) {
                        let ga = self.div(g, b);
                        self.accumulate(&mut adj, &live, a, ga);
                    }
                    if live(b) {
                        // d(a/b)/db = -(a/b)/b
                        let t = self.mul(g, me);
                        let t = self.div(t, b);
                        let gb = self.neg(t);
                        self.accumulate(&mut adj, &live, b, gb);
                    }
                }
                Op::Neg(a) => {
                    let ga = self.neg(g);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Scale(a, k) => {
                    let ga = self.scale(g, k);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Shift(a) => self.accumulate(&mut adj, &live, a, g),
                Op::MulConst(a, m) => {
                    let ga = self.mul_const(g, (*m).clone());
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, me);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Log(a) => {
                    let ga = self.div(g, a);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Square(a) => {
                    let t = self.mul(g, a);
                    let ga = self.scale(t, T::of(2.0));
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Sqrt(a) => {
                    let d = self.scale(me, T::of(2.0));
                    let ga = self.div(g, d);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Tanh(a) => {
                    let sq = self.square(me);
                    let one_minus = self.neg(sq);
                    let one_minus = self.add_scalar(one_minus, T::one());
                    let ga = self.mul(g, one_minus);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::SumAll(a) => {
                    let shape = self.shape(a);
                    let ga = self.broadcast_scalar(g, shape);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::SumRows(a) => {
                    let (m, _) = self.shape(a);
                    let ga = self.broadcast_rows(g, m);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::SumCols(a) => {
                    let (_, n) = self.shape(a);
                    let ga = self.broadcast_cols(g, n);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::BroadcastScalar(a) => {
                    let ga = self.sum(g);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::BroadcastRows(a) => {
                    let ga = self.sum_rows(g);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::BroadcastCols(a) => {
                    let ga = self.sum_cols(g);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::SliceRows(a, start) => {
                    let (m, _) = self.shape(a);
                    let ga = self.pad_rows(g, start, m);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (_, n) = self.shape(a);
                    let ga = self.pad_cols(g, start, n);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::PadRows(a, offset) => {
                    let (m, _) = self.shape(a);
                    let ga = self.slice_rows(g, offset, offset + m);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::PadCols(a, offset) => {
                    let (_, n) = self.shape(a);
                    let ga = self.slice_cols(g, offset, offset + n);
                    self.accumulate(&mut adj, &live, a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (m, _) = self.shape(p);
                        if live(p) {
                            let gp = self.slice_rows(g, start, start + m);
                            self.accumulate(&mut adj, &live, p, gp);
                        }
                        start += m;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (_, n) = self.shape(p);
                        if live(p) {
                            let gp = self.slice_cols(g, start, start + n);
                            self.accumulate(&mut adj, &live, p, gp);
                        }
                        start += n;
                    }
                }
            }
        }

        wrt.iter().map(|v| adj[v.0]).collect()
    }

    fn accumulate(&self, adj: &mut [Option<Var>], live: &impl Fn(Var) -> bool, target: Var, contribution: Var) {
        if !live(target) {
            return;
        }
        adj[target.0] = Some(match adj[target.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution),
        });
    }

    /// Gradient values, with zeros for inputs the output does not depend on.
    pub fn grad_values(&self, output: Var, wrt: &[Var]) -> Vec<Array2<T>> {
        self.grad(output, wrt)
            .into_iter()
            .zip(wrt)
            .map(|(g, &w)| match g {
                Some(g) => (*self.value(g)).clone(),
                None => Array2::zeros(self.shape(w)),
            })
            .collect()
    }
}

/// Elementwise slope of a leaky rectifier: 1 for positive inputs, `slope` otherwise.
pub fn leaky_mask<T: Scalar>(x: &Array2<T>, slope: T) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { T::one() } else { slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gradient_reaches_untracked_intermediate() {
        let g = Graph::<f64>::new();
        let c = g.constant(array![[2.0]]);
        let mid = g.square(c);
        let out = g.scale(mid, 3.0);
        assert_eq!(g.grad_values(out, &[mid])[0], array![[3.0]]);
    }

    fn fd_check(f: impl Fn(&Graph<f64>, Var) -> Var, x0: Array2<f64>) {
        let g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = f(&g, x);
        let out = g.sum(y);
        let grad = g.grad_values(out, &[x]).remove(0);
        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut xp = x0.clone();
            xp[[r, c]] += h;
            let mut xm = x0.clone();
            xm[[r, c]] -= h;
            let eval = |xv: Array2<f64>| {
                let g = Graph::new();
                let x = g.leaf(xv);
                let y = f(&g, x);
                g.value(y).sum()
            };
            let fd = (eval(xp) - eval(xm)) / (2.0 * h);
            let an = grad[[r, c]];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "entry ({r},{c}): analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn first_order_rules_match_finite_differences() {
        let x0 = array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]];
        let w = array![[0.2, -0.4], [1.5, 0.3], [-0.7, 0.9]];
        fd_check(
            |g, x| {
                let wv = g.constant(w.clone());
                let y = g.matmul(x, wv);
                let y = g.tanh(y);
                g.softmax_rows(y)
            },
            x0.clone(),
        );
        fd_check(
            |g, x| {
                let e = g.exp(x);
                let sq = g.square(x);
                let sq = g.add_scalar(sq, 1.0);
                let l = g.ln(sq);
                let r = g.sqrt(sq);
                let d = g.div(e, r);
                let m = g.mul(d, l);
                let t = g.transpose(m);
                let s = g.sum_rows(t);
                let b = g.broadcast_rows(s, 4);
                g.scale(b, 0.5)
            },
            x0.clone(),
        );
        fd_check(
            |g, x| {
                let a = g.slice_rows(x, 1, 2);
                let b = g.slice_cols(x, 0, 2);
                let c = g.concat_cols(&[b, b]);
                let r = g.sum_cols(c);
                let r = g.broadcast_cols(r, 3);
                let p = g.pad_rows(a, 1, 3);
                let q = g.concat_rows(&[x, a]);
                let l = g.leaky_relu(q, 0.1);
                let ab = g.abs(l);
                let tot = g.sum(ab);
                let tb = g.broadcast_scalar(tot, (3, 3));
                let u = g.add(p, tb);
                let top = g.slice_rows(r, 0, 2);
                let top = g.neg(top);
                let top = g.pad_rows(top, 0, 3);
                g.sub(u, top)
            },
            x0,
        );
    }

    #[test]
    fn second_order_through_grad() {
        // f(x) = sum(x^3); df/dx = 3x^2; sum(df/dx) has gradient 6x.
        let g = Graph::new();
        let x = g.leaf(array![[0.5, -2.0]]);
        let sq = g.square(x);
        let cube = g.mul(sq, x);
        let f = g.sum(cube);
        let dfdx = g.grad(f, &[x])[0].unwrap();
        assert_eq!(*g.value(dfdx), array![[0.75, 12.0]]);
        let s = g.sum(dfdx);
        let d2 = g.grad_values(s, &[x]).remove(0);
        assert_eq!(d2, array![[3.0, -12.0]]);
    }

    #[test]
    fn unrelated_inputs_have_no_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(array![[1.0]]);
        let y = g.leaf(array![[2.0]]);
        let out = g.square(x);
        let grads = g.grad(out, &[x, y]);
        assert!(grads[0].is_some());
        assert!(grads[1].is_none());
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let g = Graph::<f64>::new();
        let x = g.leaf(array![[-30.0, 0.5, 12.0]]);
        let c = g.clamp(x, -20.0, 10.0);
        assert_eq!(*g.value(c), array![[-20.0, 0.5, 10.0]]);
        let gr = g.grad_values(c, &[x]).remove(0);
        assert_eq!(gr, array![[0.0, 1.0, 0.0]]);
    }
}
