//! Feed-forward networks: `[linear -> layer norm -> ELU -> dropout] x depth`
//! followed by a linear head and an output activation.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::matrix::{MatRef, Matrix};
use super::tape::{Gradients, Tape, Var};
use crate::error::{ensure_finite, ensure_len, invalid, Error, Result};
use crate::math;
use crate::rng::{self, Rng};

/// Output activation of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// `ln(1 + e^z)`: strictly positive outputs.
    Softplus,
    /// Row softmax: outputs on the probability simplex.
    Softmax,
    Linear,
}

/// Shape descriptor of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub depth: usize,
    pub output: usize,
    pub head: Head,
    pub layer_norm: bool,
    /// Learnable scalar added to every head pre-activation.
    pub add_const: bool,
}

impl Architecture {
    /// Shapes `(rows, cols)` of every parameter tensor in storage order:
    /// per hidden layer weight, bias and (with layer norm) scale and shift,
    /// then head weight, head bias and the optional constant.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input;
        for _ in 0..self.depth {
            shapes.push((width, self.hidden));
            shapes.push((1, self.hidden));
            if self.layer_norm {
                shapes.push((1, self.hidden));
                shapes.push((1, self.hidden));
            }
            width = self.hidden;
        }
        shapes.push((width, self.output));
        shapes.push((1, self.output));
        if self.add_const {
            shapes.push((1, 1));
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(r, c)| r * c).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || (self.depth > 0 && self.hidden == 0) {
            return Err(invalid("network widths must be positive"));
        }
        Ok(())
    }
}

/// Dropout configuration for a training-mode forward pass.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut Rng,
}

/// All parameters of one network, stored contiguously in
/// [`Architecture::tensor_shapes`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.parameter_count();
        Ok(Self {
            arch,
            values: alloc::vec![0.0; n],
        })
    }

    /// Weights uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases and
    /// shifts zero, layer-norm scales one.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let shapes = p.arch.tensor_shapes();
        let roles = p.roles();
        let mut offset = 0;
        for ((rows, cols), role) in shapes.iter().zip(roles) {
            let slot = &mut p.values[offset..offset + rows * cols];
            match role {
                Role::Weight => {
                    let bound = 1.0 / math::sqrt(*rows as f64);
                    for v in slot {
                        *v = rng::uniform_range(rng, -bound, bound);
                    }
                }
                Role::Scale => slot.fill(1.0),
                Role::Shift => {}
            }
            offset += rows * cols;
        }
        Ok(p)
    }

    fn roles(&self) -> Vec<Role> {
        let mut roles = Vec::new();
        for _ in 0..self.arch.depth {
            roles.push(Role::Weight);
            roles.push(Role::Shift);
            if self.arch.layer_norm {
                roles.push(Role::Scale);
                roles.push(Role::Shift);
            }
        }
        roles.push(Role::Weight);
        roles.push(Role::Shift);
        if self.arch.add_const {
            roles.push(Role::Shift);
        }
        roles
    }

    fn tensors(&self) -> Vec<MatRef<'_>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (rows, cols) in self.arch.tensor_shapes() {
            out.push(MatRef::new(
                rows,
                cols,
                &self.values[offset..offset + rows * cols],
            ));
            offset += rows * cols;
        }
        out
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        ensure_len("network input width", self.arch.input, input.cols)?;
        ensure_finite("network input", &input.data)
    }

    /// Batched forward pass without recording a tape; one input per row.
    pub fn forward_batch(&self, input: &Matrix, mut dropout: Option<Dropout<'_>>) -> Result<Matrix> {
        self.check_input(input)?;
        let t = self.tensors();
        let mut k = 0;
        let mut h = input.clone();
        for _ in 0..self.arch.depth {
            let mut z = kernels::affine((&h).into(), t[k], t[k + 1].data);
            k += 2;
            if self.arch.layer_norm {
                z = kernels::layer_norm(&z, t[k].data, t[k + 1].data).0;
                k += 2;
            }
            kernels::elu(&mut z);
            if let Some(d) = dropout.as_mut() {
                if d.rate > 0.0 {
                    let mask = kernels::dropout_mask(z.len(), d.rate, d.rng);
                    for (v, m) in z.data.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                }
            }
            h = z;
        }
        let mut z = kernels::affine((&h).into(), t[k], t[k + 1].data);
        if self.arch.add_const {
            kernels::add_row(&mut z, t[k + 2].data);
        }
        self.apply_head(&mut z);
        Ok(z)
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64], dropout: Option<Dropout<'_>>) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec());
        ensure_len("network input width", self.arch.input, input.len())?;
        Ok(self.forward_batch(&m, dropout)?.data)
    }

    fn apply_head(&self, z: &mut Matrix) {
        match self.arch.head {
            Head::Softplus => kernels::softplus(z),
            Head::Softmax => kernels::softmax_rows(z),
            Head::Linear => {}
        }
    }

    /// Records every parameter tensor as a differentiable leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| tape.param(Matrix::from_vec(t.rows, t.cols, t.data.to_vec())))
            .collect()
    }

    /// Records the tensors as constants (frozen parameters).
    pub fn constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| tape.constant(Matrix::from_vec(t.rows, t.cols, t.data.to_vec())))
            .collect()
    }

    /// Taped forward pass using previously recorded parameter nodes.
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        leaves: &[Var],
        input: Var,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let mut k = 0;
        let mut h = input;
        for _ in 0..self.arch.depth {
            let mut z = tape.affine(h, leaves[k], leaves[k + 1]);
            k += 2;
            if self.arch.layer_norm {
                z = tape.layer_norm(z, leaves[k], leaves[k + 1]);
                k += 2;
            }
            z = tape.elu(z);
            if let Some(d) = dropout.as_mut() {
                if d.rate > 0.0 {
                    z = tape.dropout(z, d.rate, d.rng);
                }
            }
            h = z;
        }
        let mut z = tape.affine(h, leaves[k], leaves[k + 1]);
        if self.arch.add_const {
            z = tape.add_row(z, leaves[k + 2]);
        }
        Ok(match self.arch.head {
            Head::Softplus => tape.softplus(z),
            Head::Softmax => tape.softmax(z),
            Head::Linear => z,
        })
    }

    /// Flattens the adjoints of `leaves` into storage order; parameters the
    /// output does not depend on get zero.
    pub fn collect_gradient(&self, grads: &Gradients, leaves: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for (leaf, (rows, cols)) in leaves.iter().zip(self.arch.tensor_shapes()) {
            match grads.wrt(*leaf) {
                Some(g) => out.extend_from_slice(&g.data),
                None => out.extend(core::iter::repeat_n(0.0, rows * cols)),
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Role {
    Weight,
    Scale,
    Shift,
}

/// Value and exact reverse-mode gradient of a scalar function of `params`.
///
/// `loss` receives the tape and the parameter leaves (as produced by
/// [`NetworkParams::leaves`]) and returns the `1 x 1` output node.
pub fn gradient<F>(params: &NetworkParams, loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves = params.leaves(&mut tape);
    let out = loss(&mut tape, &leaves)?;
    tape.check_finite()?;
    let value = tape.scalar(out);
    let grads = tape.backward(out);
    let g = params.collect_gradient(&grads, &leaves);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((value, g))
}
