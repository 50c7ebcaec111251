use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand_core::RngCore;

use super::Policy;
use crate::diffkit::{FnDims, Scalar, ScalarModel, VectorModel};
use crate::error::{check_dim, Error, Result};

/// Fully connected network with `tanh` hidden layers and a linear output.
///
/// Parameters are stored outside the network. Per layer the flat vector
/// holds the weight matrix (output-major, row by row) followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
}

/// Output and exact Jacobians of an [`Mlp`] evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEval {
    pub output: DVector<f64>,
    pub d_input: DMatrix<f64>,
    pub d_theta: DMatrix<f64>,
}

fn uniform(rng: &mut impl RngCore, bound: f64) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (2.0 * unit - 1.0) * bound
}

impl Mlp {
    pub fn new(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "network needs at least two positive widths, got {widths:?}"
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    /// `Σ (w_in + 1)·w_out` over layers.
    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Weights and biases drawn uniformly from `±1/√fan_in`.
    pub fn init(&self, rng: &mut impl RngCore) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for w in self.widths.windows(2) {
            let bound = 1.0 / Float::sqrt(w[0] as f64);
            for _ in 0..(w[0] + 1) * w[1] {
                theta.push(uniform(rng, bound));
            }
        }
        theta
    }

    /// Forward pass on any [`Scalar`]. Slices are assumed to have the right
    /// lengths.
    pub fn forward<S: Scalar>(&self, input: &[S], theta: &[S]) -> Vec<S> {
        let layers = self.widths.len() - 1;
        let mut act: Vec<S> = input.to_vec();
        let mut off = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (w_in, w_out) = (w[0], w[1]);
            let bias = off + w_in * w_out;
            let mut next = vec![S::zero(); w_out];
            for (i, o) in next.iter_mut().enumerate() {
                let mut acc = theta[bias + i];
                for (j, a) in act.iter().enumerate() {
                    acc += theta[off + i * w_in + j] * *a;
                }
                *o = if l + 1 < layers { acc.tanh() } else { acc };
            }
            off = bias + w_out;
            act = next;
        }
        act
    }

    /// Output with Jacobians against the input and the parameters.
    pub fn eval(&self, input: &[f64], theta: &[f64]) -> Result<MlpEval> {
        check_dim("network input", self.input_dim(), input.len())?;
        check_dim("network theta", self.num_params(), theta.len())?;
        let layers = self.widths.len() - 1;
        let mut acts: Vec<DVector<f64>> = vec![DVector::from_column_slice(input)];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (w_in, w_out) = (w[0], w[1]);
            let wm = DMatrix::from_row_slice(w_out, w_in, &theta[off..off + w_in * w_out]);
            let b = DVector::from_column_slice(&theta[off + w_in * w_out..off + (w_in + 1) * w_out]);
            let z = wm * &acts[l] + b;
            acts.push(if l + 1 < layers { z.map(Float::tanh) } else { z });
            offsets.push(off);
            off += (w_in + 1) * w_out;
        }

        let out_dim = self.output_dim();
        let mut d_theta = DMatrix::zeros(out_dim, self.num_params());
        // Derivative of the output with respect to the current layer's pre-activation.
        let mut dz = DMatrix::<f64>::identity(out_dim, out_dim);
        for l in (0..layers).rev() {
            let (w_in, w_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let a_prev = &acts[l];
            for i in 0..w_out {
                for j in 0..w_in {
                    d_theta.set_column(off + i * w_in + j, &(dz.column(i) * a_prev[j]));
                }
                d_theta.set_column(off + w_in * w_out + i, &dz.column(i));
            }
            let wm = DMatrix::from_row_slice(w_out, w_in, &theta[off..off + w_in * w_out]);
            let mut da = dz * wm;
            if l > 0 {
                for j in 0..w_in {
                    let s = 1.0 - a_prev[j] * a_prev[j];
                    da.column_mut(j).scale_mut(s);
                }
            }
            dz = da;
        }
        Ok(MlpEval {
            output: acts.pop().expect("at least one layer"),
            d_input: dz,
            d_theta,
        })
    }
}

/// Time-invariant feedback policy `u = net(x)`.
#[derive(Clone, Debug)]
pub struct MlpPolicy {
    net: Mlp,
}

impl MlpPolicy {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl Policy for MlpPolicy {
    fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn control_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn control(&self, _t: f64, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        check_dim("x", self.net.input_dim(), x.len())?;
        check_dim("theta", self.net.num_params(), theta.len())?;
        Ok(DVector::from_vec(self.net.forward(x, theta)))
    }

    fn jacobians(&self, _t: f64, x: &[f64], theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let ev = self.net.eval(x, theta)?;
        Ok((ev.d_input, ev.d_theta))
    }
}

/// Input cost weight of [`NeuralObjective`].
pub const NEURAL_INPUT_WEIGHT: f64 = 1e-4;

/// Stage cost `V_θ(x) + 1e-4‖u‖²` with `V_θ` an `n-…-1` network; with
/// `m = 0` it is the matching terminal cost `V_θ(x)`.
#[derive(Clone, Debug)]
pub struct NeuralObjective {
    net: Mlp,
    m: usize,
}

impl NeuralObjective {
    pub fn new(net: Mlp, m: usize) -> Result<Self> {
        check_dim("objective network output", 1, net.output_dim())?;
        Ok(Self { net, m })
    }

    pub fn terminal(&self) -> Self {
        Self {
            net: self.net.clone(),
            m: 0,
        }
    }
}

impl ScalarModel for NeuralObjective {
    fn shape(&self) -> FnDims {
        FnDims::new(self.net.input_dim(), self.m, self.net.num_params())
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S]) -> S {
        let v = self.net.forward(x, p)[0];
        v + u.iter().fold(S::zero(), |a, ui| a + ui.sq()) * NEURAL_INPUT_WEIGHT
    }
}

/// Dynamics `x_{t+1} = net([x_t; u_t])`.
#[derive(Clone, Debug)]
pub struct NeuralDynamics {
    net: Mlp,
    n: usize,
    m: usize,
}

impl NeuralDynamics {
    /// The standard `(m+n)-(2m+2n)-n` network.
    pub fn standard(n: usize, m: usize) -> Result<Self> {
        Self::new(Mlp::new(&[n + m, 2 * (n + m), n])?, n, m)
    }

    pub fn new(net: Mlp, n: usize, m: usize) -> Result<Self> {
        check_dim("dynamics network input", n + m, net.input_dim())?;
        check_dim("dynamics network output", n, net.output_dim())?;
        Ok(Self { net, n, m })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl VectorModel for NeuralDynamics {
    fn shape(&self) -> FnDims {
        FnDims::new(self.n, self.m, self.net.num_params())
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], p: &[S], out: &mut [S]) {
        let input: Vec<S> = x.iter().chain(u).copied().collect();
        out.copy_from_slice(&self.net.forward(&input, p));
    }
}
