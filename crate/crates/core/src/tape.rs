//! Matrix-valued reverse-mode tape with graph-building backward sweeps.
//!
//! Every operation appends a node holding its value. A reverse sweep can run
//! in two modes:
//!
//! * [`Tape::gradient`] computes plain adjoint matrices (used for parameter
//!   gradients of a scalar loss).
//! * [`Tape::input_gradient`] records the sweep itself as new nodes, so the
//!   result is differentiable again. This is how input derivatives of the value
//!   model (gradients, Hessian-vector products) end up inside a loss whose
//!   parameter gradient is then taken.
//!
//! Both modes share one set of pullback rules. Each rule is expressed with
//! operations from the same closed set, which is what makes the recorded sweep
//! differentiable.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::math;
use crate::matrix::Matrix;

/// Highest order of input differentiation a program may contain.
pub const MAX_INPUT_ORDER: u8 = 2;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Elementwise scalar functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Tanh,
    LogCosh,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    /// Sign with `sign(0) = 0`; treated as locally constant.
    Sign,
    /// `1/x` with `1/0 := 0`.
    Recip,
}

impl Func {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Tanh => math::tanh(x),
            Func::LogCosh => math::log_cosh(x),
            Func::Sin => math::sin(x),
            Func::Cos => math::cos(x),
            Func::Exp => math::exp(x),
            Func::Ln => math::ln(x),
            Func::Sqrt => math::sqrt(x),
            Func::Abs => x.abs(),
            Func::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Func::Recip => {
                if x == 0.0 {
                    0.0
                } else {
                    1.0 / x
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Leaf,
    Const,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    AddRow,
    SumRows,
    BroadcastRows(usize),
    SumCols,
    BroadcastCols(usize),
    SliceCols { start: usize, len: usize },
    PadCols { start: usize, total: usize },
    Unary(Func),
}

impl Kind {
    fn arity(self) -> usize {
        match self {
            Kind::Leaf | Kind::Const => 0,
            Kind::MatMul { .. } | Kind::Add | Kind::Sub | Kind::Mul | Kind::AddRow => 2,
            _ => 1,
        }
    }
}

fn eval(kind: Kind, a: Option<&Matrix>, b: Option<&Matrix>) -> Matrix {
    let a = a.expect("operation needs an argument");
    match kind {
        Kind::Leaf | Kind::Const => unreachable!("leaves are not evaluated"),
        Kind::MatMul { ta, tb } => Matrix::matmul(a, b.unwrap(), ta, tb),
        Kind::Add => a.zip_map(b.unwrap(), |x, y| x + y),
        Kind::Sub => a.zip_map(b.unwrap(), |x, y| x - y),
        Kind::Mul => a.zip_map(b.unwrap(), |x, y| x * y),
        Kind::Scale(k) => a.map(|x| k * x),
        Kind::AddScalar(k) => a.map(|x| x + k),
        Kind::AddRow => a.add_row(b.unwrap()),
        Kind::SumRows => a.sum_rows(),
        Kind::BroadcastRows(n) => a.broadcast_rows(n),
        Kind::SumCols => a.sum_cols(),
        Kind::BroadcastCols(n) => a.broadcast_cols(n),
        Kind::SliceCols { start, len } => a.slice_cols(start, len),
        Kind::PadCols { start, total } => a.pad_cols(start, total),
        Kind::Unary(f) => a.map(|x| f.apply(x)),
    }
}

struct Node {
    kind: Kind,
    args: [u32; 2],
    value: Rc<Matrix>,
    order: u8,
}

/// A recording context for one differentiable program.
///
/// A tape is owned by a single execution stream; build a fresh one per
/// program (per training iteration, per evaluation).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf (model parameters).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push_raw(Kind::Leaf, [0, 0], Rc::new(value), 0)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(Kind::Const, [0, 0], Rc::new(value), 0)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.idx()].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Input-derivative order carried by `v` (0 for plain values).
    pub fn order(&self, v: Var) -> u8 {
        self.nodes[v.idx()].order
    }

    fn push_raw(&mut self, kind: Kind, args: [u32; 2], value: Rc<Matrix>, order: u8) -> Var {
        let id = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node { kind, args, value, order });
        Var(id)
    }

    fn push(&mut self, kind: Kind, a: Var, b: Option<Var>) -> Var {
        let value = eval(kind, Some(self.value(a)), b.map(|b| self.value(b)));
        let mut order = self.order(a);
        if let Some(b) = b {
            order = order.max(self.order(b));
        }
        self.push_raw(kind, [a.0, b.map_or(0, |b| b.0)], Rc::new(value), order)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Kind::MatMul { ta: false, tb: false }, a, Some(b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.push(Kind::MatMul { ta: false, tb: true }, a, Some(b))
    }

    /// `a^T * b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        self.push(Kind::MatMul { ta: true, tb: false }, a, Some(b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Kind::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Kind::Sub, a, Some(b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Kind::Mul, a, Some(b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.push(Kind::Scale(k), a, None)
    }

    /// Identity node whose input-derivative order restarts at zero. Marks a
    /// new differentiation variable computed from earlier derivatives, such
    /// as a rollout state driven by a gradient.
    pub fn fresh_input(&mut self, a: Var) -> Var {
        let v = self.push(Kind::Scale(1.0), a, None);
        self.nodes[v.idx()].order = 0;
        v
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.push(Kind::AddScalar(k), a, None)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.push(Kind::AddRow, a, Some(row))
    }

    /// Column sums (`r x c -> 1 x c`).
    pub fn sum_rows(&mut self, a: Var) -> Var {
        self.push(Kind::SumRows, a, None)
    }

    /// Row sums (`r x c -> r x 1`).
    pub fn sum_cols(&mut self, a: Var) -> Var {
        self.push(Kind::SumCols, a, None)
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        self.push(Kind::BroadcastRows(rows), a, None)
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        self.push(Kind::BroadcastCols(cols), a, None)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.push(Kind::SliceCols { start, len }, a, None)
    }

    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        self.push(Kind::PadCols { start, total }, a, None)
    }

    pub fn unary(&mut self, a: Var, f: Func) -> Var {
        self.push(Kind::Unary(f), a, None)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let r = self.sum_rows(a);
        self.sum_cols(r)
    }

    /// Mean over rows of an `n x 1` column, as a 1x1 node.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row-wise dot products of two `n x c` matrices (`n x 1`).
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_cols(p)
    }

    /// `|x|^p` for `p` in {1, 2}.
    pub fn abs_pow(&mut self, a: Var, p: u8) -> Var {
        match p {
            1 => self.unary(a, Func::Abs),
            2 => self.square(a),
            _ => panic!("exponent must be 1 or 2"),
        }
    }

    /// Parameter-style gradient of the 1x1 node `output` with respect to each
    /// node in `wrt`. Nothing is recorded on the tape.
    pub fn gradient(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Matrix>, Error> {
        let adj = self.sweep::<ValueEmit>(output, wrt)?;
        Ok(adj
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| match g {
                Some(g) => Rc::try_unwrap(g).unwrap_or_else(|rc| (*rc).clone()),
                None => {
                    let (r, c) = self.shape(*w);
                    Matrix::zeros(r, c)
                }
            })
            .collect())
    }

    /// Derivative of the 1x1 node `output` with respect to the input node
    /// `wrt`, recorded on the tape so it can itself be differentiated.
    ///
    /// The result carries one more order of input differentiation than
    /// `output`; exceeding [`MAX_INPUT_ORDER`] is an error.
    pub fn input_gradient(&mut self, output: Var, wrt: Var) -> Result<Var, Error> {
        let order = self.order(output) + 1;
        if order > MAX_INPUT_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        let adj = self.sweep::<GraphEmit>(output, &[wrt])?;
        let g = match adj.into_iter().next().flatten() {
            Some(g) => g,
            None => {
                let (r, c) = self.shape(wrt);
                self.constant(Matrix::zeros(r, c))
            }
        };
        self.nodes[g.idx()].order = self.nodes[g.idx()].order.max(order);
        Ok(g)
    }

    fn sweep<E: Emit>(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Option<E::H>>, Error> {
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarOutput { rows: r, cols: c });
        }
        let n = output.idx() + 1;
        let mut reach = vec![false; n];
        for w in wrt {
            if w.idx() < n {
                reach[w.idx()] = true;
            }
        }
        for i in 0..n {
            if reach[i] {
                continue;
            }
            let node = &self.nodes[i];
            let ar = node.kind.arity();
            reach[i] = (0..ar).any(|k| reach[node.args[k] as usize]);
        }
        let mut keep = vec![false; n];
        for w in wrt {
            if w.idx() < n {
                keep[w.idx()] = true;
            }
        }
        let mut adj: Vec<Option<E::H>> = vec![None; n];
        if reach[output.idx()] {
            adj[output.idx()] = Some(E::seed(self));
        }
        for i in (0..n).rev() {
            if !reach[i] {
                continue;
            }
            let node = &self.nodes[i];
            if node.kind.arity() == 0 {
                continue;
            }
            let Some(g) = adj[i].clone() else { continue };
            let (kind, args) = (node.kind, node.args);
            let need = [reach[args[0] as usize], kind.arity() == 2 && reach[args[1] as usize]];
            if !need[0] && !need[1] {
                continue;
            }
            let contribs = pullback::<E>(self, i, kind, args, need, &g);
            for (k, contrib) in contribs.into_iter().enumerate() {
                let Some(contrib) = contrib else { continue };
                let j = args[k] as usize;
                adj[j] = Some(match adj[j].take() {
                    None => contrib,
                    Some(prev) => E::accumulate(self, prev, contrib),
                });
            }
            // Interior adjoints are not needed once propagated, unless requested.
            if !keep[i] {
                adj[i] = None;
            }
        }
        Ok(wrt.iter().map(|w| if w.idx() < n { adj[w.idx()].clone() } else { None }).collect())
    }
}

/// How a reverse sweep materializes adjoints.
trait Emit {
    type H: Clone;
    fn seed(tape: &mut Tape) -> Self::H;
    fn node(tape: &Tape, id: usize) -> Self::H;
    fn op(tape: &mut Tape, kind: Kind, a: &Self::H, b: Option<&Self::H>) -> Self::H;
    fn accumulate(tape: &mut Tape, prev: Self::H, contrib: Self::H) -> Self::H {
        Self::op(tape, Kind::Add, &prev, Some(&contrib))
    }
}

/// Adjoints as plain values.
struct ValueEmit;

impl Emit for ValueEmit {
    type H = Rc<Matrix>;

    fn seed(_: &mut Tape) -> Self::H {
        Rc::new(Matrix::scalar(1.0))
    }

    fn node(tape: &Tape, id: usize) -> Self::H {
        tape.nodes[id].value.clone()
    }

    fn op(_: &mut Tape, kind: Kind, a: &Self::H, b: Option<&Self::H>) -> Self::H {
        Rc::new(eval(kind, Some(a), b.map(|b| &**b)))
    }

    fn accumulate(_: &mut Tape, mut prev: Self::H, contrib: Self::H) -> Self::H {
        Rc::make_mut(&mut prev).add_assign(&contrib);
        prev
    }
}

/// Adjoints recorded as tape nodes.
struct GraphEmit;

impl Emit for GraphEmit {
    type H = Var;

    fn seed(tape: &mut Tape) -> Self::H {
        tape.constant(Matrix::scalar(1.0))
    }

    fn node(_: &Tape, id: usize) -> Self::H {
        Var(id as u32)
    }

    fn op(tape: &mut Tape, kind: Kind, a: &Self::H, b: Option<&Self::H>) -> Self::H {
        tape.push(kind, *a, b.copied())
    }
}

fn pullback<E: Emit>(
    tape: &mut Tape,
    id: usize,
    kind: Kind,
    args: [u32; 2],
    need: [bool; 2],
    g: &E::H,
) -> [Option<E::H>; 2] {
    let (xa, xb) = (args[0] as usize, args[1] as usize);
    let mut out: [Option<E::H>; 2] = [None, None];
    let mm = |tape: &mut Tape, a: &E::H, b: &E::H, ta: bool, tb: bool| {
        E::op(tape, Kind::MatMul { ta, tb }, a, Some(b))
    };
    match kind {
        Kind::Leaf | Kind::Const => {}
        Kind::MatMul { ta, tb } => {
            let a = E::node(tape, xa);
            let b = E::node(tape, xb);
            if need[0] {
                out[0] = Some(match (ta, tb) {
                    (false, false) => mm(tape, g, &b, false, true),
                    (false, true) => mm(tape, g, &b, false, false),
                    (true, false) => mm(tape, &b, g, false, true),
                    (true, true) => mm(tape, &b, g, true, true),
                });
            }
            if need[1] {
                out[1] = Some(match (ta, tb) {
                    (false, false) => mm(tape, &a, g, true, false),
                    (false, true) => mm(tape, g, &a, true, false),
                    (true, false) => mm(tape, &a, g, false, false),
                    (true, true) => mm(tape, g, &a, true, true),
                });
            }
        }
        Kind::Add => {
            out = [need[0].then(|| g.clone()), need[1].then(|| g.clone())];
        }
        Kind::Sub => {
            out[0] = need[0].then(|| g.clone());
            if need[1] {
                out[1] = Some(E::op(tape, Kind::Scale(-1.0), g, None));
            }
        }
        Kind::Mul => {
            if need[0] {
                let b = E::node(tape, xb);
                out[0] = Some(E::op(tape, Kind::Mul, g, Some(&b)));
            }
            if need[1] {
                let a = E::node(tape, xa);
                out[1] = Some(E::op(tape, Kind::Mul, g, Some(&a)));
            }
        }
        Kind::Scale(k) => out[0] = Some(E::op(tape, Kind::Scale(k), g, None)),
        Kind::AddScalar(_) => out[0] = Some(g.clone()),
        Kind::AddRow => {
            out[0] = need[0].then(|| g.clone());
            if need[1] {
                out[1] = Some(E::op(tape, Kind::SumRows, g, None));
            }
        }
        Kind::SumRows => {
            let rows = tape.nodes[xa].value.rows();
            out[0] = Some(E::op(tape, Kind::BroadcastRows(rows), g, None));
        }
        Kind::BroadcastRows(_) => out[0] = Some(E::op(tape, Kind::SumRows, g, None)),
        Kind::SumCols => {
            let cols = tape.nodes[xa].value.cols();
            out[0] = Some(E::op(tape, Kind::BroadcastCols(cols), g, None));
        }
        Kind::BroadcastCols(_) => out[0] = Some(E::op(tape, Kind::SumCols, g, None)),
        Kind::SliceCols { start, .. } => {
            let total = tape.nodes[xa].value.cols();
            out[0] = Some(E::op(tape, Kind::PadCols { start, total }, g, None));
        }
        Kind::PadCols { start, .. } => {
            let len = tape.nodes[xa].value.cols();
            out[0] = Some(E::op(tape, Kind::SliceCols { start, len }, g, None));
        }
        Kind::Unary(f) => {
            let x = E::node(tape, xa);
            let deriv = match f {
                Func::Sign => None,
                Func::Tanh => {
                    let y = E::node(tape, id);
                    let y2 = E::op(tape, Kind::Mul, &y, Some(&y));
                    let neg = E::op(tape, Kind::Scale(-1.0), &y2, None);
                    Some(E::op(tape, Kind::AddScalar(1.0), &neg, None))
                }
                Func::LogCosh => Some(E::op(tape, Kind::Unary(Func::Tanh), &x, None)),
                Func::Sin => Some(E::op(tape, Kind::Unary(Func::Cos), &x, None)),
                Func::Cos => {
                    let s = E::op(tape, Kind::Unary(Func::Sin), &x, None);
                    Some(E::op(tape, Kind::Scale(-1.0), &s, None))
                }
                Func::Exp => Some(E::node(tape, id)),
                Func::Ln => Some(E::op(tape, Kind::Unary(Func::Recip), &x, None)),
                Func::Sqrt => {
                    let y = E::node(tape, id);
                    let r = E::op(tape, Kind::Unary(Func::Recip), &y, None);
                    Some(E::op(tape, Kind::Scale(0.5), &r, None))
                }
                Func::Abs => Some(E::op(tape, Kind::Unary(Func::Sign), &x, None)),
                Func::Recip => {
                    let y = E::node(tape, id);
                    let y2 = E::op(tape, Kind::Mul, &y, Some(&y));
                    Some(E::op(tape, Kind::Scale(-1.0), &y2, None))
                }
            };
            if let Some(d) = deriv {
                out[0] = Some(E::op(tape, Kind::Mul, g, Some(&d)));
            }
        }
    }
    out
}
