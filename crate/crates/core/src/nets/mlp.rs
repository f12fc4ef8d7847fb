use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out`, applied as `x W + b` on row-major batches.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Dense network with tanh hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Tape handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub w: Vec<Var>,
    pub b: Vec<Var>,
}

impl MlpParams {
    /// Fan-in scaled uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. With `zero_last` the
    /// output layer starts at exactly zero.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], zero_last: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                if zero_last && k == n - 1 {
                    return Layer {
                        w: Array2::zeros((fan_in, fan_out)),
                        b: Array1::zeros(fan_out),
                    };
                }
                let lim = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-lim..lim)),
                    b: Array1::from_shape_fn(fan_out, |_| rng.random_range(-lim..lim)),
                }
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
            activation: Activation::Tanh,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|io| Layer {
                w: Array2::zeros((io[0], io[1])),
                b: Array1::zeros(io[1]),
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
            activation: Activation::Tanh,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Checks that layer shapes chain and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() + 1 != self.sizes.len() {
            return Err(Error::ContractViolation("layer count does not match sizes".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.w.dim() != (self.sizes[k], self.sizes[k + 1]) || l.b.len() != self.sizes[k + 1] {
                return Err(Error::ContractViolation(format!("layer {k} has wrong shape")));
            }
            if !l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()) {
                return Err(Error::ContractViolation(format!("layer {k} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Batched forward pass, one sample per row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dims("MlpParams::forward", self.input_dim(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b.view().insert_axis(Axis(0));
            if k < last {
                h.mapv_inplace(super::tape::tanh);
            }
        }
        Ok(h)
    }

    /// Registers the parameters as trainable leaves.
    pub fn on_tape(&self, tape: &mut Tape) -> MlpVars {
        self.register(tape, true)
    }

    /// Registers the parameters as constants (no gradient).
    pub fn on_tape_frozen(&self, tape: &mut Tape) -> MlpVars {
        self.register(tape, false)
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let mut vars = MlpVars {
            w: Vec::with_capacity(self.layers.len()),
            b: Vec::with_capacity(self.layers.len()),
        };
        for l in &self.layers {
            let w = l.w.clone();
            let b = l.b.clone().insert_axis(Axis(0));
            let (w, b) = if trainable {
                (tape.param(w), tape.param(b))
            } else {
                (tape.constant(w), tape.constant(b))
            };
            vars.w.push(w);
            vars.b.push(b);
        }
        vars
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in layer order, each weight matrix row-major followed by its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn from_flat(sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(sizes);
        if flat.len() != p.num_params() {
            return Err(Error::dims("MlpParams::from_flat", p.num_params(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in &mut p.layers {
            l.w.iter_mut().for_each(|x| *x = it.next().unwrap());
            l.b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(p)
    }

    /// Mutable views of every parameter array, in flat order.
    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.w.as_slice_mut().expect("standard layout"),
                l.b.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn arrays(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.w.as_slice().expect("standard layout"),
                l.b.as_slice().expect("standard layout"),
            ]
        })
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.w.len() - 1;
        let mut h = x;
        for k in 0..self.w.len() {
            let xw = tape.matmul(h, self.w[k]);
            h = tape.add_row(xw, self.b[k]);
            if k < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Collects gradients in the shape of `like`; parameters the loss did not touch get zeros.
    pub fn grads(&self, g: &Gradients, like: &MlpParams) -> MlpParams {
        let mut out = like.zeros_like();
        for (k, l) in out.layers.iter_mut().enumerate() {
            if let Some(gw) = g.wrt(self.w[k]) {
                l.w.assign(gw);
            }
            if let Some(gb) = g.wrt(self.b[k]) {
                l.b.assign(&gb.row(0));
            }
        }
        out
    }
}
