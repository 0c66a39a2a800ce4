//! Dense 64-bit tensors and a per-call reverse-mode tape.
//!
//! The tape works on 2-D buffers (rows x cols); scalars are 1x1. A training
//! step builds a fresh tape, binds the parameters it will differentiate,
//! records the forward computation, and calls [`Tape::backward`] once. The
//! tape is dropped afterwards, so graph memory never outlives a step.

use crate::error::{Error, Result};

/// A dense tensor of 64-bit reals with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::accumulate_grad",
                &[self.data.len()],
                &[g.len()],
            ));
        }
        match &mut self.grad {
            Some(buf) => {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Removes and returns the gradient buffer, if any.
    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input with no gradient.
    Constant,
    /// Differentiable leaf; the payload is the binding slot.
    Param(usize),
    /// (m x k) * (k x n).
    Matmul(NodeId, NodeId),
    /// (m x n) + (1 x n) broadcast over rows.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    /// Gradient passes through only where the input lies strictly inside.
    Clamp(NodeId, f64, f64),
    /// Elementwise minimum; gradient follows the smaller input (ties: first).
    MinElem(NodeId, NodeId),
    SumAll(NodeId),
    /// (m x n) -> (m x 1).
    SumRows(NodeId),
    /// Row i of the first input scaled by element i of an (m x 1) vector.
    ScaleRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    /// (1 x n) repeated to (m x n).
    Repeat(NodeId, usize),
    /// Asymmetric squared loss |tau - 1[u < 0]| * u^2, elementwise.
    /// The indicator is treated as locally constant in the derivative.
    Expectile(NodeId, f64),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    needs_grad: bool,
}

/// Reverse-mode tape over 2-D buffers.
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            n_params: 0,
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            op,
            rows,
            cols,
            data,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Adds a non-differentiable input.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId> {
        if rows * cols != data.len() {
            return Err(Error::shape("Tape::constant", &[rows, cols], &[data.len()]));
        }
        Ok(self.push(Op::Constant, rows, cols, data, false))
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Constant, 1, 1, vec![v], false)
    }

    /// Binds a parameter tensor as a differentiable leaf. Slots are assigned
    /// in call order; [`Tape::backward`] returns gradients indexed by slot.
    /// Tensors of any rank are accepted and treated as (1 x len) unless they
    /// are matrices.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            _ => (1, t.len()),
        };
        let slot = self.n_params;
        self.n_params += 1;
        self.push(Op::Param(slot), rows, cols, t.data().to_vec(), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("Tape::matmul", &[m, k, k], &[m, k, k2]));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul(a, b), m, n, out, ng))
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != n {
            return Err(Error::shape("Tape::add_row", &[1, n], &[rr, rc]));
        }
        let r = self.value(row).to_vec();
        let mut out = self.value(x).to_vec();
        for chunk in out.chunks_exact_mut(n) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(Op::AddRow(x, row), m, n, out, ng))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, ctx: &str) -> Result<(usize, usize)> {
        let (m, n) = self.dims(a);
        let (m2, n2) = self.dims(b);
        if (m, n) != (m2, n2) {
            return Err(Error::shape(ctx, &[m, n], &[m2, n2]));
        }
        Ok((m, n))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.binary_same_shape(a, b, "Tape::add")?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), m, n, out, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.binary_same_shape(a, b, "Tape::sub")?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), m, n, out, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.binary_same_shape(a, b, "Tape::mul")?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), m, n, out, ng))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.needs(x);
        self.push(Op::Scale(x, c), m, n, out, ng)
    }

    pub fn offset(&mut self, x: NodeId, c: f64) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v + c).collect();
        let ng = self.needs(x);
        self.push(Op::Offset(x), m, n, out, ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let ng = self.needs(x);
        self.push(Op::Relu(x), m, n, out, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        let ng = self.needs(x);
        self.push(Op::Tanh(x), m, n, out, ng)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v.exp()).collect();
        let ng = self.needs(x);
        self.push(Op::Exp(x), m, n, out, ng)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| softplus(*v)).collect();
        let ng = self.needs(x);
        self.push(Op::Softplus(x), m, n, out, ng)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let ng = self.needs(x);
        self.push(Op::Clamp(x, lo, hi), m, n, out, ng)
    }

    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.binary_same_shape(a, b, "Tape::min_elem")?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| if x <= y { *x } else { *y })
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MinElem(a, b), m, n, out, ng))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().sum();
        let ng = self.needs(x);
        self.push(Op::SumAll(x), 1, 1, vec![s], ng)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let s = self.sum_all(x);
        self.scale(s, 1.0 / (m * n) as f64)
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let mut out = vec![0.0; m];
        for (o, chunk) in out.iter_mut().zip(self.value(x).chunks_exact(n)) {
            *o = chunk.iter().sum();
        }
        let ng = self.needs(x);
        self.push(Op::SumRows(x), m, 1, out, ng)
    }

    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        let (wm, wn) = self.dims(w);
        if wm != m || wn != 1 {
            return Err(Error::shape("Tape::scale_rows", &[m, 1], &[wm, wn]));
        }
        let weights = self.value(w).to_vec();
        let mut out = self.value(x).to_vec();
        for (chunk, wi) in out.chunks_exact_mut(n).zip(&weights) {
            for o in chunk {
                *o *= wi;
            }
        }
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Op::ScaleRows(x, w), m, n, out, ng))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n1) = self.dims(a);
        let (m2, n2) = self.dims(b);
        if m != m2 {
            return Err(Error::shape("Tape::concat_cols", &[m, n2], &[m2, n2]));
        }
        let mut out = Vec::with_capacity(m * (n1 + n2));
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                out.extend_from_slice(&av[i * n1..(i + 1) * n1]);
                out.extend_from_slice(&bv[i * n2..(i + 1) * n2]);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), m, n1 + n2, out, ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        if from >= to || to > n {
            return Err(Error::contract(format!(
                "Tape::slice_cols: range {from}..{to} out of 0..{n}"
            )));
        }
        let w = to - from;
        let mut out = Vec::with_capacity(m * w);
        for chunk in self.value(x).chunks_exact(n) {
            out.extend_from_slice(&chunk[from..to]);
        }
        let ng = self.needs(x);
        Ok(self.push(Op::SliceCols(x, from, to), m, w, out, ng))
    }

    pub fn repeat_rows(&mut self, row: NodeId, m: usize) -> Result<NodeId> {
        let (rr, n) = self.dims(row);
        if rr != 1 {
            return Err(Error::shape("Tape::repeat_rows", &[1, n], &[rr, n]));
        }
        let src = self.value(row).to_vec();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&src);
        }
        let ng = self.needs(row);
        Ok(self.push(Op::Repeat(row, m), m, n, out, ng))
    }

    pub fn expectile(&mut self, u: NodeId, tau: f64) -> NodeId {
        let (m, n) = self.dims(u);
        let out: Vec<f64> = self
            .value(u)
            .iter()
            .map(|v| expectile_weight(*v, tau) * v * v)
            .collect();
        let ng = self.needs(u);
        self.push(Op::Expectile(u, tau), m, n, out, ng)
    }

    /// Runs the backward pass from a scalar loss node. Returns one gradient
    /// buffer per bound parameter slot; slots never touched by the forward
    /// computation come back as `None`.
    pub fn backward(&mut self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        let ln = &self.nodes[loss.0];
        if ln.rows * ln.cols != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got {}x{}",
                ln.rows, ln.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Vec<f64>>> = vec![None; self.n_params];

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            // Local helper: accumulate into a node's pending gradient.
            macro_rules! acc {
                ($id:expr, $update:expr) => {{
                    let id: NodeId = $id;
                    if self.nodes[id.0].needs_grad {
                        let len = self.nodes[id.0].data.len();
                        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
                        #[allow(clippy::redundant_closure_call)]
                        ($update)(buf);
                    }
                }};
            }
            match self.nodes[i].op.clone() {
                Op::Constant => {}
                Op::Param(slot) => {
                    out[slot] = Some(g);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.dims(a);
                    let (_, n) = self.dims(b);
                    if self.needs(a) {
                        // dA = dC * B^T
                        let bv = &self.nodes[b.0].data;
                        let mut da = vec![0.0; m * k];
                        for i2 in 0..m {
                            let grow = &g[i2 * n..(i2 + 1) * n];
                            let arow = &mut da[i2 * k..(i2 + 1) * k];
                            for (kk, av) in arow.iter_mut().enumerate() {
                                let brow = &bv[kk * n..(kk + 1) * n];
                                let mut s = 0.0;
                                for (gv, bvv) in grow.iter().zip(brow) {
                                    s += gv * bvv;
                                }
                                *av = s;
                            }
                        }
                        acc!(a, |buf: &mut Vec<f64>| add_assign(buf, &da));
                    }
                    if self.needs(b) {
                        // dB = A^T * dC
                        let av = self.nodes[a.0].data.clone();
                        acc!(b, |buf: &mut Vec<f64>| {
                            for i2 in 0..m {
                                let grow = &g[i2 * n..(i2 + 1) * n];
                                let arow = &av[i2 * k..(i2 + 1) * k];
                                for (kk, aik) in arow.iter().enumerate() {
                                    let brow = &mut buf[kk * n..(kk + 1) * n];
                                    for (bo, gv) in brow.iter_mut().zip(grow) {
                                        *bo += aik * gv;
                                    }
                                }
                            }
                        });
                    }
                }
                Op::AddRow(x, row) => {
                    let (_, n) = self.dims(x);
                    acc!(x, |buf: &mut Vec<f64>| add_assign(buf, &g));
                    acc!(row, |buf: &mut Vec<f64>| {
                        for chunk in g.chunks_exact(n) {
                            for (b, gv) in buf.iter_mut().zip(chunk) {
                                *b += gv;
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc!(a, |buf: &mut Vec<f64>| add_assign(buf, &g));
                    acc!(b, |buf: &mut Vec<f64>| add_assign(buf, &g));
                }
                Op::Sub(a, b) => {
                    acc!(a, |buf: &mut Vec<f64>| add_assign(buf, &g));
                    acc!(b, |buf: &mut Vec<f64>| {
                        for (bo, gv) in buf.iter_mut().zip(&g) {
                            *bo -= gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let bv = self.nodes[b.0].data.clone();
                        acc!(a, |buf: &mut Vec<f64>| {
                            for ((bo, gv), bvv) in buf.iter_mut().zip(&g).zip(&bv) {
                                *bo += gv * bvv;
                            }
                        });
                    }
                    if self.needs(b) {
                        let av = self.nodes[a.0].data.clone();
                        acc!(b, |buf: &mut Vec<f64>| {
                            for ((bo, gv), avv) in buf.iter_mut().zip(&g).zip(&av) {
                                *bo += gv * avv;
                            }
                        });
                    }
                }
                Op::Scale(x, c) => {
                    acc!(x, |buf: &mut Vec<f64>| {
                        for (bo, gv) in buf.iter_mut().zip(&g) {
                            *bo += gv * c;
                        }
                    });
                }
                Op::Offset(x) => {
                    acc!(x, |buf: &mut Vec<f64>| add_assign(buf, &g));
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].data.clone();
                    acc!(x, |buf: &mut Vec<f64>| {
                        for ((bo, gv), xvv) in buf.iter_mut().zip(&g).zip(&xv) {
                            if *xvv > 0.0 {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::Tanh(x) => {
                    let yv = self.nodes[i].data.clone();
                    acc!(x, |buf: &mut Vec<f64>| {
                        for ((bo, gv), yvv) in buf.iter_mut().zip(&g).zip(&yv) {
                            *bo += gv * (1.0 - yvv * yvv);
                        }
                    });
                }
                Op::Exp(x) => {
                    let yv = self.nodes[i].data.clone();
                    acc!(x, |buf: &mut Vec<f64>| {
                        for ((bo, gv), yvv) in buf.iter_mut().zip(&g).zip(&yv) {
                            *bo += gv * yvv;
                        }
                    });
                }
                Op::Softplus(x) => {
                    let xv = self.nodes[x.0].data.clone();
                    acc!(x, |buf: &mut Vec<f64>| {
                        for ((bo, gv), xvv) in buf.iter_mut().zip(&g).zip(&xv) {
                            *bo += gv * sigmoid(*xvv);
                        }
                    });
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = self.nodes[x.0].data.clone();
                    acc!(x, |buf: &mut Vec<f64>| {
                        for ((bo, gv), xvv) in buf.iter_mut().zip(&g).zip(&xv) {
                            if *xvv > lo && *xvv < hi {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::MinElem(a, b) => {
                    let av = self.nodes[a.0].data.clone();
                    let bv = self.nodes[b.0].data.clone();
                    acc!(a, |buf: &mut Vec<f64>| {
                        for (k2, (bo, gv)) in buf.iter_mut().zip(&g).enumerate() {
                            if av[k2] <= bv[k2] {
                                *bo += gv;
                            }
                        }
                    });
                    acc!(b, |buf: &mut Vec<f64>| {
                        for (k2, (bo, gv)) in buf.iter_mut().zip(&g).enumerate() {
                            if av[k2] > bv[k2] {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::SumAll(x) => {
                    let gv = g[0];
                    acc!(x, |buf: &mut Vec<f64>| {
                        for bo in buf.iter_mut() {
                            *bo += gv;
                        }
                    });
                }
                Op::SumRows(x) => {
                    let (_, n) = self.dims(x);
                    acc!(x, |buf: &mut Vec<f64>| {
                        for (chunk, gv) in buf.chunks_exact_mut(n).zip(&g) {
                            for bo in chunk {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::ScaleRows(x, w) => {
                    let (_, n) = self.dims(x);
                    if self.needs(x) {
                        let wv = self.nodes[w.0].data.clone();
                        acc!(x, |buf: &mut Vec<f64>| {
                            for ((chunk, gchunk), wi) in
                                buf.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(&wv)
                            {
                                for (bo, gv) in chunk.iter_mut().zip(gchunk) {
                                    *bo += gv * wi;
                                }
                            }
                        });
                    }
                    if self.needs(w) {
                        let xv = self.nodes[x.0].data.clone();
                        acc!(w, |buf: &mut Vec<f64>| {
                            for ((bo, gchunk), xchunk) in buf
                                .iter_mut()
                                .zip(g.chunks_exact(n))
                                .zip(xv.chunks_exact(n))
                            {
                                let mut s = 0.0;
                                for (gv, xvv) in gchunk.iter().zip(xchunk) {
                                    s += gv * xvv;
                                }
                                *bo += s;
                            }
                        });
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (m, n1) = self.dims(a);
                    let (_, n2) = self.dims(b);
                    let n = n1 + n2;
                    acc!(a, |buf: &mut Vec<f64>| {
                        for i2 in 0..m {
                            let gr = &g[i2 * n..i2 * n + n1];
                            for (bo, gv) in buf[i2 * n1..(i2 + 1) * n1].iter_mut().zip(gr) {
                                *bo += gv;
                            }
                        }
                    });
                    acc!(b, |buf: &mut Vec<f64>| {
                        for i2 in 0..m {
                            let gr = &g[i2 * n + n1..(i2 + 1) * n];
                            for (bo, gv) in buf[i2 * n2..(i2 + 1) * n2].iter_mut().zip(gr) {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::SliceCols(x, from, to) => {
                    let (m, n) = self.dims(x);
                    let w = to - from;
                    acc!(x, |buf: &mut Vec<f64>| {
                        for i2 in 0..m {
                            let gr = &g[i2 * w..(i2 + 1) * w];
                            for (bo, gv) in buf[i2 * n + from..i2 * n + to].iter_mut().zip(gr) {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::Repeat(row, m) => {
                    let (_, n) = self.dims(row);
                    acc!(row, |buf: &mut Vec<f64>| {
                        for i2 in 0..m {
                            for (bo, gv) in buf.iter_mut().zip(&g[i2 * n..(i2 + 1) * n]) {
                                *bo += gv;
                            }
                        }
                    });
                }
                Op::Expectile(u, tau) => {
                    let uv = self.nodes[u.0].data.clone();
                    acc!(u, |buf: &mut Vec<f64>| {
                        for ((bo, gv), uvv) in buf.iter_mut().zip(&g).zip(&uv) {
                            *bo += gv * 2.0 * expectile_weight(*uvv, tau) * uvv;
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn add_assign(buf: &mut [f64], g: &[f64]) {
    for (b, gv) in buf.iter_mut().zip(g) {
        *b += gv;
    }
}

pub(crate) fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0).abs()
    } else {
        tau
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// out += A (m x k) * B (k x n), row-major.
pub fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, aik) in arow.iter().enumerate() {
            if *aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}
