//! Dense multilayer perceptrons over a flat parameter vector.
//!
//! Layer `l` maps width `d[l]` to `d[l + 1]`. Its parameters are stored as a
//! row-major `d[l] x d[l + 1]` weight block followed by `d[l + 1]` biases,
//! so a batch forward is `A_{l+1} = act(A_l W_l + 1 b_l)`. Hidden layers use
//! the architecture's hidden activation; the output layer is affine.
//!
//! Besides the forward pass there are two derivative routines that share a
//! [`ForwardTrace`]: [`backward_into`] (vector-Jacobian product, gradients
//! with respect to the parameters) and [`jvp_with_trace`] (Jacobian-vector
//! product along a parameter direction). Together they give matrix-free
//! Fisher-vector products.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::linalg::{gemm, Matrix};
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    head_split: Option<(usize, usize)>,
}

impl MlpArchitecture {
    pub fn new(
        layer_dims: Vec<usize>,
        hidden_activation: Activation,
        head_split: Option<(usize, usize)>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least an input and an output width, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer widths must be positive, got {layer_dims:?}"
            )));
        }
        if let Some((p, q)) = head_split {
            let out = *layer_dims.last().unwrap();
            if p + q != out {
                return Err(Error::InvalidArchitecture(format!(
                    "head split {p}+{q} does not match output width {out}"
                )));
            }
        }
        Ok(Self {
            layer_dims,
            hidden_activation,
            head_split,
        })
    }

    /// Tanh hidden layers, affine output, no head split.
    pub fn tanh(layer_dims: Vec<usize>) -> Result<Self> {
        Self::new(layer_dims, Activation::Tanh, None)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn head_split(&self) -> Option<(usize, usize)> {
        self.head_split
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    /// `(weights, biases)` ranges of layer `l` inside a parameter vector.
    fn layer_ranges(&self) -> Vec<(core::ops::Range<usize>, core::ops::Range<usize>)> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let wr = offset..offset + w[0] * w[1];
                let br = wr.end..wr.end + w[1];
                offset = br.end;
                (wr, br)
            })
            .collect()
    }
}

/// Flat vector of network parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        crate::linalg::dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.0)
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &ParamVector) -> ParamVector {
        let mut out = self.clone();
        crate::linalg::axpy(alpha, &other.0, &mut out.0);
        out
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * alpha).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Uniform fan-in/fan-out initialization with zero biases.
pub fn init_params<R: Rng + ?Sized>(arch: &MlpArchitecture, rng: &mut R) -> ParamVector {
    init_params_with_tail(arch, 0, 0.0, rng)
}

/// Like [`init_params`] but appends `tail_len` scalars set to `tail_value`.
pub fn init_params_with_tail<R: Rng + ?Sized>(
    arch: &MlpArchitecture,
    tail_len: usize,
    tail_value: f64,
    rng: &mut R,
) -> ParamVector {
    let mut values = Vec::with_capacity(arch.param_count() + tail_len);
    for w in arch.layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
        values.extend((0..fan_in * fan_out).map(|_| dist.sample(rng)));
        values.extend(core::iter::repeat_n(0.0, fan_out));
    }
    values.extend(core::iter::repeat_n(tail_value, tail_len));
    ParamVector(values)
}

/// Per-layer activations of one batch forward pass. `activations[0]` is the
/// input batch and `activations[l + 1]` the (post-activation) output of
/// layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

fn check_params(arch: &MlpArchitecture, params: &[f64]) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::LengthMismatch {
            what: "network parameters",
            expected: arch.param_count(),
            found: params.len(),
        });
    }
    Ok(())
}

fn check_width(layer: usize, expected: usize, m: &Matrix) -> Result<()> {
    if m.cols() != expected {
        return Err(Error::LayerMismatch {
            layer,
            expected,
            found: m.cols(),
        });
    }
    Ok(())
}

pub fn forward_trace(arch: &MlpArchitecture, params: &[f64], inputs: &Matrix) -> Result<ForwardTrace> {
    check_params(arch, params)?;
    check_width(0, arch.input_dim(), inputs)?;
    let batch = inputs.rows();
    let mut activations = Vec::with_capacity(arch.num_layers() + 1);
    activations.push(inputs.clone());
    for (l, (wr, br)) in arch.layer_ranges().into_iter().enumerate() {
        let (din, dout) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let bias = &params[br];
        let mut out = Matrix::zeros(batch, dout);
        for i in 0..batch {
            out.row_mut(i).copy_from_slice(bias);
        }
        gemm(
            batch,
            din,
            dout,
            1.0,
            activations[l].as_slice(),
            false,
            &params[wr],
            false,
            1.0,
            out.as_mut_slice(),
        );
        let act = arch.activation(l);
        if act != Activation::Identity {
            for v in out.as_mut_slice() {
                *v = act.apply(*v);
            }
        }
        activations.push(out);
    }
    Ok(ForwardTrace { activations })
}

pub fn forward(arch: &MlpArchitecture, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    forward_trace(arch, params, inputs).map(ForwardTrace::into_output)
}

fn check_trace(arch: &MlpArchitecture, trace: &ForwardTrace, other: &Matrix, what: &'static str) -> Result<()> {
    if other.rows() != trace.batch_size() {
        return Err(Error::LengthMismatch {
            what,
            expected: trace.batch_size(),
            found: other.rows(),
        });
    }
    check_width(arch.num_layers(), arch.output_dim(), other)
}

/// Adds `∂⟨cotangents, output⟩/∂params` into `grad`.
pub fn backward_into(
    arch: &MlpArchitecture,
    params: &[f64],
    trace: &ForwardTrace,
    cotangents: &Matrix,
    grad: &mut [f64],
) -> Result<()> {
    check_params(arch, params)?;
    check_params(arch, grad)?;
    check_trace(arch, trace, cotangents, "output cotangents")?;
    let batch = trace.batch_size();
    let ranges = arch.layer_ranges();
    // Cotangent with respect to the pre-activation of the current layer.
    let mut delta = cotangents.clone();
    for l in (0..arch.num_layers()).rev() {
        let (din, dout) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let (wr, br) = ranges[l].clone();
        let input = &trace.activations[l];
        gemm(
            din,
            batch,
            dout,
            1.0,
            input.as_slice(),
            true,
            delta.as_slice(),
            false,
            1.0,
            &mut grad[wr.clone()],
        );
        let gb = &mut grad[br];
        for row in delta.row_iter() {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = Matrix::zeros(batch, din);
        gemm(
            batch,
            dout,
            din,
            1.0,
            delta.as_slice(),
            false,
            &params[wr],
            true,
            0.0,
            prev.as_mut_slice(),
        );
        let act = arch.activation(l - 1);
        for (d, &y) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
            *d *= act.derivative_from_output(y);
        }
        delta = prev;
    }
    Ok(())
}

/// Gradient of `⟨cotangents, forward(inputs)⟩` with respect to the parameters.
pub fn grad_params(
    arch: &MlpArchitecture,
    params: &[f64],
    inputs: &Matrix,
    cotangents: &Matrix,
) -> Result<ParamVector> {
    let trace = forward_trace(arch, params, inputs)?;
    let mut grad = ParamVector::zeros(arch.param_count());
    backward_into(arch, params, &trace, cotangents, &mut grad)?;
    Ok(grad)
}

/// Directional derivative of the network output along `tangent`.
pub fn jvp_with_trace(
    arch: &MlpArchitecture,
    params: &[f64],
    trace: &ForwardTrace,
    tangent: &[f64],
) -> Result<Matrix> {
    check_params(arch, params)?;
    if tangent.len() != arch.param_count() {
        return Err(Error::LengthMismatch {
            what: "tangent",
            expected: arch.param_count(),
            found: tangent.len(),
        });
    }
    let batch = trace.batch_size();
    // Tangent of the current layer's input; `None` for the (fixed) batch input.
    let mut d_input: Option<Matrix> = None;
    for (l, (wr, br)) in arch.layer_ranges().into_iter().enumerate() {
        let (din, dout) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let mut dz = Matrix::zeros(batch, dout);
        for i in 0..batch {
            dz.row_mut(i).copy_from_slice(&tangent[br.clone()]);
        }
        gemm(
            batch,
            din,
            dout,
            1.0,
            trace.activations[l].as_slice(),
            false,
            &tangent[wr.clone()],
            false,
            1.0,
            dz.as_mut_slice(),
        );
        if let Some(da) = &d_input {
            gemm(
                batch,
                din,
                dout,
                1.0,
                da.as_slice(),
                false,
                &params[wr],
                false,
                1.0,
                dz.as_mut_slice(),
            );
        }
        let act = arch.activation(l);
        if act != Activation::Identity {
            let out = &trace.activations[l + 1];
            for (d, &y) in dz.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *d *= act.derivative_from_output(y);
            }
        }
        d_input = Some(dz);
    }
    Ok(d_input.expect("at least one layer"))
}

pub fn jvp(arch: &MlpArchitecture, params: &[f64], inputs: &Matrix, tangent: &[f64]) -> Result<Matrix> {
    let trace = forward_trace(arch, params, inputs)?;
    jvp_with_trace(arch, params, &trace, tangent)
}
