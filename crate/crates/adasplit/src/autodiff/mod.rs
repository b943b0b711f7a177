//! Reverse-mode automatic differentiation on a flat, define-by-run tape.
//!
//! Every tensor is a dense row-major 2-D array of f64 (row vectors are
//! `1 x d`, scalars are `1 x 1`). A [`Tape`] records each primitive as it
//! executes; [`Tape::backward`] traverses the record once in reverse and
//! accumulates gradients into every `requires_grad` node reachable from the
//! loss. Tapes are rebuilt per training step because episode graphs change
//! topology with the sampled actions.
//!
//! The primitive set is deliberately small: matmul (with an optional
//! transposed right operand, gemm-style), add, scalar multiply, elementwise
//! multiply, concat, row gather, softmax, layer norm, sigmoid, tanh, relu,
//! sum/mean reduction, absolute value, negation, and log.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod params;

pub use adam::Adam;
pub use params::{GradStore, ParamStore};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a tensor on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId, trans_b: bool },
    Add { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    Mul { a: TensorId, b: TensorId },
    Concat { parts: Vec<TensorId>, axis: usize },
    Gather { table: TensorId, ids: Vec<usize> },
    Softmax { a: TensorId },
    LayerNorm { a: TensorId },
    Sigmoid { a: TensorId },
    Tanh { a: TensorId },
    Relu { a: TensorId },
    Sum { a: TensorId },
    Mean { a: TensorId },
    Abs { a: TensorId },
    Neg { a: TensorId },
    Log { a: TensorId },
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Execution record of primitive ops; topological order is execution order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(value.len(), rows * cols);
        let id = TensorId(self.nodes.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, rows, cols, grad, requires_grad, op });
        id
    }

    /// Mount a leaf tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize, requires_grad: bool) -> TensorId {
        assert_eq!(
            value.len(),
            rows * cols,
            "leaf value length {} does not match shape {}x{}",
            value.len(),
            rows,
            cols
        );
        self.push(value, rows, cols, requires_grad, Op::Leaf)
    }

    /// Mount a constant (no gradient tracking).
    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> TensorId {
        self.leaf(value, rows, cols, false)
    }

    /// Scalar constant, shape 1x1.
    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(vec![value], 1, 1)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Value of a 1x1 tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        let n = &self.nodes[id.0];
        assert!(n.rows * n.cols == 1, "scalar_value on {}x{} tensor", n.rows, n.cols);
        n.value[0]
    }

    /// Reset every gradient buffer to zero.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            for g in &mut node.grad {
                *g = 0.0;
            }
        }
    }

    // ---- primitives ------------------------------------------------------

    /// Matrix product `a @ b`, or `a @ b^T` when `trans_b` is set.
    pub fn matmul_ext(&mut self, a: TensorId, b: TensorId, trans_b: bool) -> TensorId {
        let (am, ak) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (bk, bn) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(
            ak, bk,
            "matmul shape mismatch: lhs {}x{} rhs {}x{}{}",
            am, ak, br, bc,
            if trans_b { " (transposed)" } else { "" }
        );
        let value = kernels::matmul(
            self.value(a),
            self.value(b),
            am,
            ak,
            bn,
            trans_b,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, am, bn, rg, Op::MatMul { a, b, trans_b })
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.matmul_ext(a, b, false)
    }

    /// `a @ b^T`.
    pub fn matmul_bt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.matmul_ext(a, b, true)
    }

    /// Elementwise addition. The right operand may be a `1 x c` row vector
    /// broadcast over the rows of `a` (bias add).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let broadcast = br == 1 && ar > 1 && bc == ac;
        assert!(
            (ar == br && ac == bc) || broadcast,
            "add shape mismatch: lhs {}x{} rhs {}x{}",
            ar, ac, br, bc
        );
        let bv = self.value(b);
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[if broadcast { i % ac } else { i }])
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, ar, ac, rg, Op::Add { a, b })
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (r, cl) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.requires_grad(a);
        self.push(value, r, cl, rg, Op::Scale { a, c })
    }

    /// Elementwise product. Either operand may be a 1x1 scalar, in which
    /// case it is broadcast over the other.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let a_scalar = ar * ac == 1;
        let b_scalar = br * bc == 1;
        assert!(
            (ar == br && ac == bc) || a_scalar || b_scalar,
            "mul shape mismatch: lhs {}x{} rhs {}x{}",
            ar, ac, br, bc
        );
        let (rows, cols) = if a_scalar { (br, bc) } else { (ar, ac) };
        let av = self.value(a);
        let bv = self.value(b);
        let value: Vec<f64> = (0..rows * cols)
            .map(|i| {
                let x = if a_scalar { av[0] } else { av[i] };
                let y = if b_scalar { bv[0] } else { bv[i] };
                x * y
            })
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, rows, cols, rg, Op::Mul { a, b })
    }

    /// Concatenate along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> TensorId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        assert!(axis < 2, "concat axis must be 0 or 1");
        let (r0, c0) = self.shape(parts[0]);
        let mut rows = r0;
        let mut cols = c0;
        for &p in &parts[1..] {
            let (r, c) = self.shape(p);
            if axis == 0 {
                assert_eq!(c, c0, "concat axis 0 column mismatch: {}x{} vs {}x{}", r, c, r0, c0);
                rows += r;
            } else {
                assert_eq!(r, r0, "concat axis 1 row mismatch: {}x{} vs {}x{}", r, c, r0, c0);
                cols += c;
            }
        }
        let mut value = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                value.extend_from_slice(self.value(p));
            }
        } else {
            for row in 0..rows {
                for &p in parts {
                    let (_, c) = self.shape(p);
                    let v = self.value(p);
                    value.extend_from_slice(&v[row * c..(row + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(value, rows, cols, rg, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Gather rows of `table` by index (embedding lookup). Backward
    /// scatter-adds into the gathered rows; repeated ids accumulate.
    pub fn gather(&mut self, table: TensorId, ids: &[usize]) -> TensorId {
        let (rows, cols) = self.shape(table);
        for &id in ids {
            assert!(id < rows, "gather id {} out of range for {}x{} table", id, rows, cols);
        }
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            value.extend_from_slice(&tv[id * cols..(id + 1) * cols]);
        }
        let rg = self.requires_grad(table);
        let n = ids.len();
        self.push(value, n, cols, rg, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Row-wise softmax (stable, max-subtracted).
    pub fn softmax(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(cols) {
            kernels::softmax_row(row);
        }
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Softmax { a })
    }

    /// Row-wise layer normalization with unit gain and zero bias.
    /// Constant rows map to zero.
    pub fn layer_norm(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(cols) {
            kernels::layer_norm_row(row, LAYER_NORM_EPS);
        }
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::LayerNorm { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| kernels::sigmoid(x)).collect();
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| x.tanh()).collect();
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Tanh { a })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Relu { a })
    }

    /// Sum every element into a 1x1 tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let value = vec![self.value(a).iter().sum()];
        let rg = self.requires_grad(a);
        self.push(value, 1, 1, rg, Op::Sum { a })
    }

    /// Mean of every element, 1x1.
    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a);
        let value = vec![v.iter().sum::<f64>() / v.len() as f64];
        let rg = self.requires_grad(a);
        self.push(value, 1, 1, rg, Op::Mean { a })
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| x.abs()).collect();
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Abs { a })
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self.value(a).iter().map(|&x| -x).collect();
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Neg { a })
    }

    /// Natural log. Rejects non-positive inputs.
    pub fn log(&mut self, a: TensorId) -> TensorId {
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| {
                assert!(x > 0.0, "log of non-positive value {x}");
                x.ln()
            })
            .collect();
        let rg = self.requires_grad(a);
        self.push(value, rows, cols, rg, Op::Log { a })
    }

    // ---- backward --------------------------------------------------------

    /// Accumulate d(loss)/d(node) into every `requires_grad` node reachable
    /// from `loss`. `loss` must be scalar and the tape non-empty.
    pub fn backward(&mut self, loss: TensorId) {
        assert!(!self.nodes.is_empty(), "backward on an empty tape");
        {
            let n = &self.nodes[loss.0];
            assert!(
                n.rows * n.cols == 1,
                "backward requires a scalar loss, got {}x{}",
                n.rows,
                n.cols
            );
        }
        self.nodes[loss.0].grad[0] += 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out_grad = self.nodes[i].grad.clone();
            if out_grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, trans_b } => {
                    let (am, ak) = self.shape(a);
                    let (_, bn) = {
                        let (r, c) = self.shape(b);
                        if trans_b { (c, r) } else { (r, c) }
                    };
                    if self.requires_grad(a) {
                        // dA = G @ B^T (plain) or G @ B (trans_b)
                        let da = kernels::matmul(&out_grad, self.value(b), am, bn, ak, !trans_b);
                        self.add_grad(a, &da);
                    }
                    if self.requires_grad(b) {
                        let db = if trans_b {
                            // C = A B^T => dB = G^T @ A
                            kernels::matmul_at(&out_grad, self.value(a), am, bn, ak)
                        } else {
                            // dB = A^T @ G
                            kernels::matmul_at(self.value(a), &out_grad, am, ak, bn)
                        };
                        self.add_grad(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    let (ar, ac) = self.shape(a);
                    let (br, _) = self.shape(b);
                    if self.requires_grad(a) {
                        self.add_grad(a, &out_grad);
                    }
                    if self.requires_grad(b) {
                        if br == 1 && ar > 1 {
                            let mut db = vec![0.0; ac];
                            for (i, &g) in out_grad.iter().enumerate() {
                                db[i % ac] += g;
                            }
                            self.add_grad(b, &db);
                        } else {
                            self.add_grad(b, &out_grad);
                        }
                    }
                }
                Op::Scale { a, c } => {
                    if self.requires_grad(a) {
                        let da: Vec<f64> = out_grad.iter().map(|&g| g * c).collect();
                        self.add_grad(a, &da);
                    }
                }
                Op::Mul { a, b } => {
                    let (ar, ac) = self.shape(a);
                    let (br, bc) = self.shape(b);
                    let a_scalar = ar * ac == 1;
                    let b_scalar = br * bc == 1;
                    if self.requires_grad(a) {
                        let bv = self.value(b);
                        if a_scalar {
                            let da: f64 = out_grad
                                .iter()
                                .enumerate()
                                .map(|(i, &g)| g * if b_scalar { bv[0] } else { bv[i] })
                                .sum();
                            self.add_grad(a, &[da]);
                        } else {
                            let da: Vec<f64> = out_grad
                                .iter()
                                .enumerate()
                                .map(|(i, &g)| g * if b_scalar { bv[0] } else { bv[i] })
                                .collect();
                            self.add_grad(a, &da);
                        }
                    }
                    if self.requires_grad(b) {
                        let av = self.value(a);
                        if b_scalar {
                            let db: f64 = out_grad
                                .iter()
                                .enumerate()
                                .map(|(i, &g)| g * if a_scalar { av[0] } else { av[i] })
                                .sum();
                            self.add_grad(b, &[db]);
                        } else {
                            let db: Vec<f64> = out_grad
                                .iter()
                                .enumerate()
                                .map(|(i, &g)| g * if a_scalar { av[0] } else { av[i] })
                                .collect();
                            self.add_grad(b, &db);
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let (_, out_cols) = self.shape(TensorId(i));
                    if axis == 0 {
                        let mut offset = 0;
                        for &p in &parts {
                            let (pr, pc) = self.shape(p);
                            let len = pr * pc;
                            if self.requires_grad(p) {
                                let dp = out_grad[offset..offset + len].to_vec();
                                self.add_grad(p, &dp);
                            }
                            offset += len;
                        }
                    } else {
                        let (rows, _) = self.shape(TensorId(i));
                        let mut col_offset = 0;
                        for &p in &parts {
                            let (_, pc) = self.shape(p);
                            if self.requires_grad(p) {
                                let mut dp = vec![0.0; rows * pc];
                                for row in 0..rows {
                                    for c in 0..pc {
                                        dp[row * pc + c] = out_grad[row * out_cols + col_offset + c];
                                    }
                                }
                                self.add_grad(p, &dp);
                            }
                            col_offset += pc;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if self.requires_grad(table) {
                        let (_, cols) = self.shape(table);
                        let tlen = self.nodes[table.0].grad.len();
                        let mut dt = vec![0.0; tlen];
                        for (row, &id) in ids.iter().enumerate() {
                            for c in 0..cols {
                                dt[id * cols + c] += out_grad[row * cols + c];
                            }
                        }
                        self.add_grad(table, &dt);
                    }
                }
                Op::Softmax { a } => {
                    if self.requires_grad(a) {
                        let (rows, cols) = self.shape(a);
                        let y = self.value(TensorId(i));
                        let mut da = vec![0.0; rows * cols];
                        for r in 0..rows {
                            let yr = &y[r * cols..(r + 1) * cols];
                            let gr = &out_grad[r * cols..(r + 1) * cols];
                            let dot: f64 = yr.iter().zip(gr.iter()).map(|(&yi, &gi)| yi * gi).sum();
                            for c in 0..cols {
                                da[r * cols + c] = yr[c] * (gr[c] - dot);
                            }
                        }
                        self.add_grad(a, &da);
                    }
                }
                Op::LayerNorm { a } => {
                    if self.requires_grad(a) {
                        let (rows, cols) = self.shape(a);
                        let x = self.value(a).to_vec();
                        let n = cols as f64;
                        let mut da = vec![0.0; rows * cols];
                        for r in 0..rows {
                            let xr = &x[r * cols..(r + 1) * cols];
                            let gr = &out_grad[r * cols..(r + 1) * cols];
                            let mean = xr.iter().sum::<f64>() / n;
                            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                            let sigma = (var + LAYER_NORM_EPS).sqrt();
                            let xhat: Vec<f64> = xr.iter().map(|&v| (v - mean) / sigma).collect();
                            let g_mean = gr.iter().sum::<f64>() / n;
                            let gx_mean =
                                gr.iter().zip(xhat.iter()).map(|(&g, &h)| g * h).sum::<f64>() / n;
                            for c in 0..cols {
                                da[r * cols + c] = (gr[c] - g_mean - xhat[c] * gx_mean) / sigma;
                            }
                        }
                        self.add_grad(a, &da);
                    }
                }
                Op::Sigmoid { a } => {
                    if self.requires_grad(a) {
                        let y = self.value(TensorId(i));
                        let da: Vec<f64> = out_grad
                            .iter()
                            .zip(y.iter())
                            .map(|(&g, &s)| g * s * (1.0 - s))
                            .collect();
                        self.add_grad(a, &da);
                    }
                }
                Op::Tanh { a } => {
                    if self.requires_grad(a) {
                        let y = self.value(TensorId(i));
                        let da: Vec<f64> = out_grad
                            .iter()
                            .zip(y.iter())
                            .map(|(&g, &t)| g * (1.0 - t * t))
                            .collect();
                        self.add_grad(a, &da);
                    }
                }
                Op::Relu { a } => {
                    if self.requires_grad(a) {
                        let x = self.value(a);
                        let da: Vec<f64> = out_grad
                            .iter()
                            .zip(x.iter())
                            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                            .collect();
                        self.add_grad(a, &da);
                    }
                }
                Op::Sum { a } => {
                    if self.requires_grad(a) {
                        let len = self.nodes[a.0].grad.len();
                        let da = vec![out_grad[0]; len];
                        self.add_grad(a, &da);
                    }
                }
                Op::Mean { a } => {
                    if self.requires_grad(a) {
                        let len = self.nodes[a.0].grad.len();
                        let da = vec![out_grad[0] / len as f64; len];
                        self.add_grad(a, &da);
                    }
                }
                Op::Abs { a } => {
                    if self.requires_grad(a) {
                        let x = self.value(a);
                        let da: Vec<f64> = out_grad
                            .iter()
                            .zip(x.iter())
                            .map(|(&g, &v)| {
                                if v > 0.0 {
                                    g
                                } else if v < 0.0 {
                                    -g
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        self.add_grad(a, &da);
                    }
                }
                Op::Neg { a } => {
                    if self.requires_grad(a) {
                        let da: Vec<f64> = out_grad.iter().map(|&g| -g).collect();
                        self.add_grad(a, &da);
                    }
                }
                Op::Log { a } => {
                    if self.requires_grad(a) {
                        let x = self.value(a);
                        let da: Vec<f64> = out_grad
                            .iter()
                            .zip(x.iter())
                            .map(|(&g, &v)| g / v)
                            .collect();
                        self.add_grad(a, &da);
                    }
                }
            }
        }
    }

    fn add_grad(&mut self, id: TensorId, delta: &[f64]) {
        let g = &mut self.nodes[id.0].grad;
        debug_assert_eq!(g.len(), delta.len());
        for (gi, &d) in g.iter_mut().zip(delta.iter()) {
            *gi += d;
        }
    }
}
