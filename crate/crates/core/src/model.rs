//! Value-function approximator
//! `Phi(y) = w^T NN(y) + 1/2 y^T A^T A y + b^T y + c` with `y = (s, z)`.
//!
//! The body `NN` is either a plain MLP or a ResNet with identity skips after
//! the opening layer. All weights live in one flat parameter vector, in the
//! segment order `w | K_0 | b_0 | ... | K_M | b_M | A | b | c`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::{Purpose, Stream};
use crate::tape::{Func, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Mlp,
    ResNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// `ln cosh(x)`, the antiderivative of `tanh`.
    LogCosh,
    Sin,
}

impl Activation {
    pub fn func(self) -> Func {
        match self {
            Activation::Tanh => Func::Tanh,
            Activation::LogCosh => Func::LogCosh,
            Activation::Sin => Func::Sin,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        self.func().apply(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub kind: NetKind,
    /// Hidden width `m`.
    pub width: usize,
    /// Number of layers after the opening layer.
    pub depth: usize,
    pub activation: Activation,
    /// Rank of `A`; `None` means `min(10, d + 1)`.
    pub quad_rank: Option<usize>,
    pub use_quadratic_head: bool,
}

impl Architecture {
    pub fn new(kind: NetKind, width: usize, depth: usize, activation: Activation) -> Self {
        Self { kind, width, depth, activation, quad_rank: None, use_quadratic_head: true }
    }

    pub fn with_quad_rank(mut self, rank: usize) -> Self {
        self.quad_rank = Some(rank);
        self
    }

    pub fn without_quadratic_head(mut self) -> Self {
        self.use_quadratic_head = false;
        self
    }

    pub fn rank(&self, d: usize) -> usize {
        self.quad_rank.unwrap_or(10.min(d + 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("model width must be at least 1".into()));
        }
        if self.use_quadratic_head && self.quad_rank == Some(0) {
            return Err(Error::Config("quadratic rank must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentRole {
    OutputWeights,
    LayerWeights(usize),
    LayerBias(usize),
    QuadFactor,
    Linear,
    Constant,
}

/// One named block of the flat parameter vector, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub role: SegmentRole,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub fn layout(arch: &Architecture, d: usize) -> Vec<Segment> {
    let m = arch.width;
    let mut shapes = Vec::with_capacity(2 * arch.depth + 6);
    shapes.push((SegmentRole::OutputWeights, 1, m));
    shapes.push((SegmentRole::LayerWeights(0), m, d + 1));
    shapes.push((SegmentRole::LayerBias(0), 1, m));
    for i in 1..=arch.depth {
        shapes.push((SegmentRole::LayerWeights(i), m, m));
        shapes.push((SegmentRole::LayerBias(i), 1, m));
    }
    if arch.use_quadratic_head {
        shapes.push((SegmentRole::QuadFactor, arch.rank(d), d + 1));
        shapes.push((SegmentRole::Linear, 1, d + 1));
        shapes.push((SegmentRole::Constant, 1, 1));
    }
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(role, rows, cols)| {
            let seg = Segment { role, offset, rows, cols };
            offset += rows * cols;
            seg
        })
        .collect()
}

/// Exact number of trainable parameters.
pub fn param_count(arch: &Architecture, d: usize) -> usize {
    let m = arch.width;
    let body = m * (d + 1) + m + arch.depth * (m * m + m);
    let head = if arch.use_quadratic_head { arch.rank(d) * (d + 1) + (d + 1) + 1 } else { 0 };
    m + body + head
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub arch: Architecture,
    pub d: usize,
    pub theta: Vec<f64>,
}

impl ValueModel {
    pub fn from_parts(arch: Architecture, d: usize, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = param_count(&arch, d);
        if theta.len() != expected {
            return Err(Error::Dimension { expected, got: theta.len() });
        }
        Ok(Self { arch, d, theta })
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn layout(&self) -> Vec<Segment> {
        layout(&self.arch, self.d)
    }

    /// `Phi` at a single time-space point `y = (s, z)`.
    pub fn forward(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.d + 1 {
            return Err(Error::Dimension { expected: self.d + 1, got: y.len() });
        }
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, self, false);
        let y = tape.constant(Matrix::row_vector(y));
        let v = bound.value(&mut tape, y);
        Ok(tape.value(v).item())
    }
}

/// Deterministic initialization: weight matrices uniform on
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, everything else zero.
pub fn init_params(arch: &Architecture, d: usize, seed: u64) -> Result<ValueModel> {
    arch.validate()?;
    let mut theta = alloc::vec![0.0; param_count(arch, d)];
    for (index, seg) in layout(arch, d).into_iter().enumerate() {
        if let SegmentRole::LayerWeights(_) = seg.role {
            let bound = math::sqrt(6.0 / (seg.rows + seg.cols) as f64);
            let stream = Stream::new(seed, Purpose::ParamInit, index as u64);
            let block = &mut theta[seg.range()];
            for (row, chunk) in block.chunks_mut(seg.cols).enumerate() {
                stream.fill_uniform(row as u64, 0, chunk);
                for v in chunk.iter_mut() {
                    *v = bound * (2.0 * *v - 1.0);
                }
            }
        }
    }
    ValueModel::from_parts(*arch, d, theta)
}

/// A model whose parameters are nodes on a tape.
pub struct BoundModel {
    arch: Architecture,
    d: usize,
    segments: Vec<Segment>,
    leaves: Vec<Var>,
}

impl BoundModel {
    /// Places every parameter segment on the tape, as differentiable leaves
    /// when `differentiable` is set and as constants otherwise.
    pub fn bind(tape: &mut Tape, model: &ValueModel, differentiable: bool) -> Self {
        let segments = model.layout();
        let leaves = segments
            .iter()
            .map(|seg| {
                let m = Matrix::from_vec(seg.rows, seg.cols, model.theta[seg.range()].to_vec());
                if differentiable {
                    tape.leaf(m)
                } else {
                    tape.constant(m)
                }
            })
            .collect();
        Self { arch: model.arch, d: model.d, segments, leaves }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    fn seg(&self, role: SegmentRole) -> Option<Var> {
        self.segments.iter().position(|s| s.role == role).map(|i| self.leaves[i])
    }

    /// Body output `NN(y)` for an `n x (d+1)` input, as `n x m`.
    pub fn body(&self, tape: &mut Tape, y: Var) -> Var {
        let act = self.arch.activation.func();
        let layer = |tape: &mut Tape, x: Var, i: usize| {
            let k = self.seg(SegmentRole::LayerWeights(i)).unwrap();
            let b = self.seg(SegmentRole::LayerBias(i)).unwrap();
            let pre = tape.matmul_nt(x, k);
            let pre = tape.add_row(pre, b);
            tape.unary(pre, act)
        };
        let mut h = layer(tape, y, 0);
        for i in 1..=self.arch.depth {
            let a = layer(tape, h, i);
            h = match self.arch.kind {
                NetKind::Mlp => a,
                NetKind::ResNet => tape.add(h, a),
            };
        }
        h
    }

    /// `Phi` for every row of `y`, as `n x 1`.
    pub fn value(&self, tape: &mut Tape, y: Var) -> Var {
        let body = self.body(tape, y);
        let w = self.seg(SegmentRole::OutputWeights).unwrap();
        let mut out = tape.matmul_nt(body, w);
        if self.arch.use_quadratic_head {
            let a = self.seg(SegmentRole::QuadFactor).unwrap();
            let b = self.seg(SegmentRole::Linear).unwrap();
            let c = self.seg(SegmentRole::Constant).unwrap();
            let ay = tape.matmul_nt(y, a);
            let sq = tape.square(ay);
            let quad = tape.sum_cols(sq);
            let quad = tape.scale(quad, 0.5);
            let lin = tape.matmul_nt(y, b);
            out = tape.add(out, quad);
            out = tape.add(out, lin);
            out = tape.add_row(out, c);
        }
        out
    }

    /// Flattens per-segment gradients (as returned by [`Tape::gradient`] on
    /// [`Self::leaves`]) into parameter order.
    pub fn flatten(&self, grads: Vec<Matrix>) -> Vec<f64> {
        let total = self.segments.last().map_or(0, |s| s.offset + s.len());
        let mut out = Vec::with_capacity(total);
        for g in grads {
            out.extend_from_slice(g.as_slice());
        }
        out
    }
}
