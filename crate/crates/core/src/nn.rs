//! Parameter storage and the few layer types the model is assembled from.

use std::ops::Index;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Arc<Array2<T>>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| &**v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &Graph<T>) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| g.leaf_shared(Arc::clone(v)))
                .collect(),
        }
    }

    /// Registers every parameter as a constant of `g` (inference without gradients).
    pub fn bind_frozen(&self, g: &Graph<T>) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| g.constant((**v).clone()))
                .collect(),
        }
    }

    /// Exact equality of every parameter.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits_eq(*y)))
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        // f32 -> f64 is exact, so comparing the widened bits is exact too.
        self.as_f64().to_bits() == other.as_f64().to_bits()
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Weight initialisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn,
    Zeros,
}

pub fn init_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    init: Init,
    rng: &mut R,
) -> Array2<T> {
    match init {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::FanIn => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| T::of(rng.random_range(-bound..bound)))
        }
    }
}

/// Affine map applied to each row: `x W + b`, with `W: in x out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_matrix(input, output, input, init, rng),
        );
        let bias = store.add(format!("{name}.bias"), init_matrix(1, output, input, init, rng));
        Dense {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn apply<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let xw = g.matmul(x, p[self.weight]);
        g.add_row(xw, p[self.bias])
    }
}

/// Stack of dense layers with leaky rectifiers between them (none after the last).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub slope: f64,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`. The final layer uses `last_init`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        slope: f64,
        last_init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::FanIn };
                Dense::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], init, rng)
            })
            .collect();
        Mlp { layers, slope }
    }

    pub fn apply<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, p, h);
            if i != last {
                h = g.leaky_relu(h, T::of(self.slope));
            }
        }
        h
    }
}

/// Same-padded 1-D convolution along rows (time), kernel 3.
///
/// Input `L x c_in`, output `L x c_out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv1d {
    pub inner: Dense,
    pub channels_in: usize,
}

impl Conv1d {
    pub const KERNEL: usize = 3;

    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        rng: &mut R,
    ) -> Self {
        Conv1d {
            inner: Dense::new(
                store,
                name,
                Self::KERNEL * channels_in,
                channels_out,
                Init::FanIn,
                rng,
            ),
            channels_in,
        }
    }

    pub fn apply<T: Scalar>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Var {
        let (len, _) = g.shape(x);
        let cols = if len == 1 {
            let z = g.scale(x, T::zero());
            g.concat_cols(&[z, x, z])
        } else {
            // previous step (zero at t = 0), current, next step (zero at the end)
            let prev = g.slice_rows(x, 0, len - 1);
            let prev = g.pad_rows(prev, 1, len);
            let next = g.slice_rows(x, 1, len);
            let next = g.pad_rows(next, 0, len);
            g.concat_cols(&[prev, x, next])
        };
        self.inner.apply(g, p, cols)
    }
}
