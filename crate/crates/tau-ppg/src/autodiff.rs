//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! Every primitive appends a node holding its output value and the parent
//! ids needed for the backward pass. Calling [`Tape::backward`] on a scalar
//! walks the tape once in reverse and accumulates a gradient for every
//! trainable leaf. A tape is single-use: a second `backward` is an error.
//!
//! The op set is exactly what the peak-detection network needs: 1-D
//! convolution, pooling, linear resampling, matrix products, row softmax,
//! embedding lookup, and the smooth-L1 loss.

use crate::error::{Result, TauError};
use crate::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeVal(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add {
        a: usize,
        b: usize,
    },
    /// Row-broadcast bias: `a[m, e] + v[e]`.
    AddRowVector {
        a: usize,
        v: usize,
    },
    /// Scalar-parameter broadcast: `a + s`.
    AddScalarParam {
        a: usize,
        s: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    Relu {
        a: usize,
    },
    /// `a (M×K) · b (K×N)`.
    MatMul {
        a: usize,
        b: usize,
    },
    /// `a (M×K) · bᵀ` with `b (N×K)`.
    MatMulTransB {
        a: usize,
        b: usize,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    CropCols {
        a: usize,
        start: usize,
    },
    PadCols {
        a: usize,
        left: usize,
    },
    Transpose {
        a: usize,
    },
    SoftmaxRows {
        a: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        dilation: usize,
    },
    MaxPool1d {
        x: usize,
        switches: Vec<usize>,
    },
    /// Length-axis linear resample of a `C×N` map.
    ResizeLinear {
        x: usize,
    },
    /// Row lookup: `out[r] = table[indices[r]]`.
    GatherRows {
        table: usize,
        indices: Vec<usize>,
    },
    /// Mean over consecutive groups of `group` rows.
    GroupedRowMean {
        x: usize,
        group: usize,
    },
    /// Mean smooth-L1 against a (usually constant) target.
    SmoothL1 {
        pred: usize,
        target: usize,
    },
    /// Weighted sum of scalars.
    SumScaled {
        terms: Vec<(usize, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by tape handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: TapeVal) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Operation tape. Build the forward pass, call `backward` once.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Registers a trainable tensor. Its gradient is populated by `backward`.
    pub fn leaf(&mut self, value: Tensor) -> TapeVal {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Registers a fixed tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> TapeVal {
        self.push_unchecked(value, Op::Constant, false)
    }

    pub fn value(&self, v: TapeVal) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: TapeVal) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TapeVal {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        TapeVal(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<TapeVal> {
        value.check_finite(name)?;
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn req(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    // ---- arithmetic -----------------------------------------------------

    pub fn add(&mut self, a: TapeVal, b: TapeVal) -> Result<TapeVal> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TauError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let req = self.req(a.0) || self.req(b.0);
        self.push(out, Op::Add { a: a.0, b: b.0 }, req, "add")
    }

    pub fn add_row_vector(&mut self, a: TapeVal, v: TapeVal) -> Result<TapeVal> {
        let (ta, tv) = (self.value(a), self.value(v));
        if ta.rank() != 2 || tv.len() != ta.cols() {
            return Err(TauError::ShapeMismatch(format!(
                "add_row_vector: {:?} + {:?}",
                ta.shape(),
                tv.shape()
            )));
        }
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        for (i, slot) in data.iter_mut().enumerate() {
            *slot += tv.data()[i % cols];
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.req(a.0) || self.req(v.0);
        self.push(out, Op::AddRowVector { a: a.0, v: v.0 }, req, "add_row_vector")
    }

    pub fn add_scalar_param(&mut self, a: TapeVal, s: TapeVal) -> Result<TapeVal> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(TauError::ShapeMismatch(format!(
                "add_scalar_param: bias shape {:?}",
                ts.shape()
            )));
        }
        let sv = ts.data()[0];
        let out = self.value(a).map(|x| x + sv);
        let req = self.req(a.0) || self.req(s.0);
        self.push(out, Op::AddScalarParam { a: a.0, s: s.0 }, req, "add_scalar_param")
    }

    pub fn scale(&mut self, a: TapeVal, c: f64) -> Result<TapeVal> {
        let out = self.value(a).map(|x| x * c);
        let req = self.req(a.0);
        self.push(out, Op::Scale { a: a.0, c }, req, "scale")
    }

    pub fn relu(&mut self, a: TapeVal) -> Result<TapeVal> {
        let out = self.value(a).map(|x| x.max(0.0));
        let req = self.req(a.0);
        self.push(out, Op::Relu { a: a.0 }, req, "relu")
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: TapeVal, b: TapeVal) -> Result<TapeVal> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(TauError::ShapeMismatch(format!(
                "matmul: {:?} · {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul_kernel(ta, tb, false);
        let req = self.req(a.0) || self.req(b.0);
        self.push(out, Op::MatMul { a: a.0, b: b.0 }, req, "matmul")
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_trans_b(&mut self, a: TapeVal, b: TapeVal) -> Result<TapeVal> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols() {
            return Err(TauError::ShapeMismatch(format!(
                "matmul_trans_b: {:?} · {:?}ᵀ",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul_kernel(ta, tb, true);
        let req = self.req(a.0) || self.req(b.0);
        self.push(out, Op::MatMulTransB { a: a.0, b: b.0 }, req, "matmul_trans_b")
    }

    pub fn transpose(&mut self, a: TapeVal) -> Result<TapeVal> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TauError::ShapeMismatch(format!(
                "transpose: rank {} input",
                ta.rank()
            )));
        }
        let out = transpose_kernel(ta);
        let req = self.req(a.0);
        self.push(out, Op::Transpose { a: a.0 }, req, "transpose")
    }

    pub fn softmax_rows(&mut self, a: TapeVal) -> Result<TapeVal> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TauError::ShapeMismatch("softmax_rows needs rank 2".into()));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = ta.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        let req = self.req(a.0);
        self.push(out, Op::SoftmaxRows { a: a.0 }, req, "softmax_rows")
    }

    // ---- slicing / concatenation ----------------------------------------

    pub fn slice_cols(&mut self, a: TapeVal, start: usize, len: usize) -> Result<TapeVal> {
        let ta = self.value(a);
        if ta.rank() != 2 || start + len > ta.cols() {
            return Err(TauError::ShapeMismatch(format!(
                "slice_cols {}..{} of {:?}",
                start,
                start + len,
                ta.shape()
            )));
        }
        let rows = ta.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        let req = self.req(a.0);
        self.push(out, Op::SliceCols { a: a.0, start }, req, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[TapeVal]) -> Result<TapeVal> {
        if parts.is_empty() {
            return Err(TauError::InvalidArgument("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(TauError::ShapeMismatch("concat_cols row mismatch".into()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let req = parts.iter().any(|p| self.req(p.0));
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(out, Op::ConcatCols { parts: ids }, req, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[TapeVal]) -> Result<TapeVal> {
        if parts.is_empty() {
            return Err(TauError::InvalidArgument("concat_rows of nothing".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(TauError::ShapeMismatch("concat_rows column mismatch".into()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let req = parts.iter().any(|p| self.req(p.0));
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(out, Op::ConcatRows { parts: ids }, req, "concat_rows")
    }

    pub fn crop_cols(&mut self, a: TapeVal, start: usize, len: usize) -> Result<TapeVal> {
        let out = {
            let ta = self.value(a);
            if ta.rank() != 2 || start + len > ta.cols() {
                return Err(TauError::ShapeMismatch(format!(
                    "crop_cols {}+{} of {:?}",
                    start,
                    len,
                    ta.shape()
                )));
            }
            let rows = ta.rows();
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&ta.row(r)[start..start + len]);
            }
            Tensor::new(vec![rows, len], data)?
        };
        let req = self.req(a.0);
        self.push(out, Op::CropCols { a: a.0, start }, req, "crop_cols")
    }

    pub fn pad_cols(&mut self, a: TapeVal, left: usize, right: usize) -> Result<TapeVal> {
        let out = {
            let ta = self.value(a);
            if ta.rank() != 2 {
                return Err(TauError::ShapeMismatch("pad_cols needs rank 2".into()));
            }
            let (rows, cols) = (ta.rows(), ta.cols());
            let ncols = cols + left + right;
            let mut data = vec![0.0; rows * ncols];
            for r in 0..rows {
                data[r * ncols + left..r * ncols + left + cols].copy_from_slice(ta.row(r));
            }
            Tensor::new(vec![rows, ncols], data)?
        };
        let req = self.req(a.0);
        self.push(out, Op::PadCols { a: a.0, left }, req, "pad_cols")
    }

    // ---- neural primitives -----------------------------------------------

    /// Dilated 1-D convolution with "same" zero padding.
    ///
    /// `x` is `C_in×N`, `w` is `C_out×C_in×K` with odd `K`, `b` is `C_out`.
    /// The output length equals the input length.
    pub fn conv1d(
        &mut self,
        x: TapeVal,
        w: TapeVal,
        b: TapeVal,
        dilation: usize,
    ) -> Result<TapeVal> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        check_conv_shapes(tx, tw, tb, dilation)?;
        let out = conv1d_kernel(tx, tw, tb, dilation);
        let req = self.req(x.0) || self.req(w.0) || self.req(b.0);
        self.push(
            out,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
                dilation,
            },
            req,
            "conv1d",
        )
    }

    /// Max pooling with pool size 2; an odd trailing element is dropped.
    pub fn maxpool1d(&mut self, x: TapeVal) -> Result<TapeVal> {
        let (out, switches) = {
            let tx = self.value(x);
            if tx.rank() != 2 || tx.cols() < 2 {
                return Err(TauError::InvalidArgument(format!(
                    "maxpool1d needs C×N with N >= 2, got {:?}",
                    tx.shape()
                )));
            }
            maxpool1d_kernel(tx)
        };
        let req = self.req(x.0);
        self.push(out, Op::MaxPool1d { x: x.0, switches }, req, "maxpool1d")
    }

    /// Linear resample of a `C×N` map to `C×target` columns.
    ///
    /// Output column `j` samples the input at position
    /// `(j+0.5)·N/target − 0.5`, clamped to `[0, N−1]`; with `target = 2N`
    /// this is exactly 2× linear upsampling.
    pub fn resize_linear(&mut self, x: TapeVal, target: usize) -> Result<TapeVal> {
        let out = {
            let tx = self.value(x);
            if tx.rank() != 2 || tx.cols() == 0 || target == 0 {
                return Err(TauError::InvalidArgument(format!(
                    "resize_linear of {:?} to {}",
                    tx.shape(),
                    target
                )));
            }
            resize_linear_kernel(tx, target)
        };
        let req = self.req(x.0);
        self.push(out, Op::ResizeLinear { x: x.0 }, req, "resize_linear")
    }

    pub fn gather_rows(&mut self, table: TapeVal, indices: &[usize]) -> Result<TapeVal> {
        let out = {
            let tt = self.value(table);
            if tt.rank() != 2 {
                return Err(TauError::ShapeMismatch("gather_rows table rank".into()));
            }
            if let Some(&bad) = indices.iter().find(|&&i| i >= tt.rows()) {
                return Err(TauError::InvalidArgument(format!(
                    "gather_rows index {} out of {} rows",
                    bad,
                    tt.rows()
                )));
            }
            let cols = tt.cols();
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                data.extend_from_slice(tt.row(i));
            }
            Tensor::new(vec![indices.len(), cols], data)?
        };
        let req = self.req(table.0);
        self.push(
            out,
            Op::GatherRows {
                table: table.0,
                indices: indices.to_vec(),
            },
            req,
            "gather_rows",
        )
    }

    pub fn grouped_row_mean(&mut self, x: TapeVal, group: usize) -> Result<TapeVal> {
        let out = {
            let tx = self.value(x);
            if tx.rank() != 2 || group == 0 || tx.rows() % group != 0 {
                return Err(TauError::ShapeMismatch(format!(
                    "grouped_row_mean: {:?} by {}",
                    tx.shape(),
                    group
                )));
            }
            let groups = tx.rows() / group;
            let cols = tx.cols();
            let mut data = vec![0.0; groups * cols];
            for g in 0..groups {
                for i in 0..group {
                    let row = tx.row(g * group + i);
                    for (j, v) in row.iter().enumerate() {
                        data[g * cols + j] += v / group as f64;
                    }
                }
            }
            Tensor::new(vec![groups, cols], data)?
        };
        let req = self.req(x.0);
        self.push(
            out,
            Op::GroupedRowMean { x: x.0, group },
            req,
            "grouped_row_mean",
        )
    }

    /// Mean smooth-L1: `0.5·d²` for `|d| < 1`, else `|d| − 0.5`.
    pub fn smooth_l1(&mut self, pred: TapeVal, target: TapeVal) -> Result<TapeVal> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(TauError::ShapeMismatch(format!(
                "smooth_l1: {:?} vs {:?}",
                tp.shape(),
                tt.shape()
            )));
        }
        let loss = smooth_l1_value(tp, tt);
        let req = self.req(pred.0) || self.req(target.0);
        self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 {
                pred: pred.0,
                target: target.0,
            },
            req,
            "smooth_l1",
        )
    }

    /// Weighted sum of scalar tape values.
    pub fn sum_scaled(&mut self, terms: &[(TapeVal, f64)]) -> Result<TapeVal> {
        if terms.is_empty() {
            return Err(TauError::InvalidArgument("sum_scaled of nothing".into()));
        }
        let mut total = 0.0;
        for (v, c) in terms {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(TauError::ShapeMismatch(format!(
                    "sum_scaled term has shape {:?}",
                    t.shape()
                )));
            }
            total += c * t.data()[0];
        }
        let req = terms.iter().any(|(v, _)| self.req(v.0));
        let ids = terms.iter().map(|(v, c)| (v.0, *c)).collect();
        self.push(Tensor::scalar(total), Op::SumScaled { terms: ids }, req, "sum_scaled")
    }

    // ---- backward --------------------------------------------------------

    /// Runs the backward pass from a scalar loss, consuming the tape.
    pub fn backward(&mut self, loss: TapeVal) -> Result<Gradients> {
        if self.consumed {
            return Err(TauError::TapeConsumed);
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TauError::LossNotScalar(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let seed = Tensor::new(loss_shape, vec![1.0]).expect("scalar seed");
        grads[loss.0] = Some(seed);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &gy, &mut grads);
            // Leaves keep their gradient; interior grads are dropped after use.
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(gy);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], nodes: &[Node], pid: usize, g: Tensor| {
            if !nodes[pid].requires_grad {
                return;
            }
            match &mut grads[pid] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::Add { a, b } => {
                acc(grads, &self.nodes, *a, gy.clone());
                acc(grads, &self.nodes, *b, gy.clone());
            }
            Op::AddRowVector { a, v } => {
                acc(grads, &self.nodes, *a, gy.clone());
                let cols = gy.cols();
                let mut gv = vec![0.0; cols];
                for (i, g) in gy.data().iter().enumerate() {
                    gv[i % cols] += g;
                }
                acc(grads, &self.nodes, *v, Tensor::from_vec(gv));
            }
            Op::AddScalarParam { a, s } => {
                acc(grads, &self.nodes, *a, gy.clone());
                acc(grads, &self.nodes, *s, Tensor::scalar(gy.sum()));
            }
            Op::Scale { a, c } => {
                acc(grads, &self.nodes, *a, gy.map(|g| g * c));
            }
            Op::Relu { a } => {
                let x = &self.nodes[*a].value;
                let mut g = gy.clone();
                for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if *xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                acc(grads, &self.nodes, *a, g);
            }
            Op::MatMul { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                // ga = gy · bᵀ ; gb = aᵀ · gy
                acc(grads, &self.nodes, *a, matmul_kernel(gy, tb, true));
                acc(
                    grads,
                    &self.nodes,
                    *b,
                    matmul_kernel(&transpose_kernel(ta), gy, false),
                );
            }
            Op::MatMulTransB { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                // out = a · bᵀ : ga = gy · b ; gb = gyᵀ · a
                acc(grads, &self.nodes, *a, matmul_kernel(gy, tb, false));
                acc(
                    grads,
                    &self.nodes,
                    *b,
                    matmul_kernel(&transpose_kernel(gy), ta, false),
                );
            }
            Op::SliceCols { a, start } | Op::CropCols { a, start } => {
                let src = &self.nodes[*a].value;
                let (rows, cols) = (src.rows(), src.cols());
                let w = gy.cols();
                let mut g = vec![0.0; rows * cols];
                for r in 0..rows {
                    g[r * cols + start..r * cols + start + w].copy_from_slice(gy.row(r));
                }
                acc(
                    grads,
                    &self.nodes,
                    *a,
                    Tensor::new(vec![rows, cols], g).expect("slice grad shape"),
                );
            }
            Op::ConcatCols { parts } => {
                let rows = gy.rows();
                let mut start = 0;
                for pid in parts {
                    let w = self.nodes[*pid].value.cols();
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&gy.row(r)[start..start + w]);
                    }
                    acc(
                        grads,
                        &self.nodes,
                        *pid,
                        Tensor::new(vec![rows, w], data).expect("concat grad shape"),
                    );
                    start += w;
                }
            }
            Op::ConcatRows { parts } => {
                let cols = gy.cols();
                let mut start = 0;
                for pid in parts {
                    let h = self.nodes[*pid].value.rows();
                    let data = gy.data()[start * cols..(start + h) * cols].to_vec();
                    acc(
                        grads,
                        &self.nodes,
                        *pid,
                        Tensor::new(vec![h, cols], data).expect("concat grad shape"),
                    );
                    start += h;
                }
            }
            Op::PadCols { a, left } => {
                let src = &self.nodes[*a].value;
                let (rows, cols) = (src.rows(), src.cols());
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    data.extend_from_slice(&gy.row(r)[*left..*left + cols]);
                }
                acc(
                    grads,
                    &self.nodes,
                    *a,
                    Tensor::new(vec![rows, cols], data).expect("pad grad shape"),
                );
            }
            Op::Transpose { a } => {
                acc(grads, &self.nodes, *a, transpose_kernel(gy));
            }
            Op::SoftmaxRows { a } => {
                let y = &self.nodes[id].value;
                let (r, c) = (y.rows(), y.cols());
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = gy.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..c {
                        g[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(
                    grads,
                    &self.nodes,
                    *a,
                    Tensor::new(vec![r, c], g).expect("softmax grad shape"),
                );
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (tx, tw) = (&self.nodes[*x].value, &self.nodes[*w].value);
                let (gx, gw, gb) = conv1d_backward(tx, tw, gy, *dilation);
                acc(grads, &self.nodes, *x, gx);
                acc(grads, &self.nodes, *w, gw);
                acc(grads, &self.nodes, *b, gb);
            }
            Op::MaxPool1d { x, switches } => {
                let src = &self.nodes[*x].value;
                let mut g = Tensor::zeros(src.shape());
                for (o, &src_idx) in switches.iter().enumerate() {
                    g.data_mut()[src_idx] += gy.data()[o];
                }
                acc(grads, &self.nodes, *x, g);
            }
            Op::ResizeLinear { x } => {
                let src = &self.nodes[*x].value;
                let (rows, n) = (src.rows(), src.cols());
                let m = gy.cols();
                let mut g = vec![0.0; rows * n];
                for j in 0..m {
                    let (i0, i1, f) = resize_taps(n, m, j);
                    for r in 0..rows {
                        g[r * n + i0] += (1.0 - f) * gy.at2(r, j);
                        g[r * n + i1] += f * gy.at2(r, j);
                    }
                }
                acc(
                    grads,
                    &self.nodes,
                    *x,
                    Tensor::new(vec![rows, n], g).expect("resize grad shape"),
                );
            }
            Op::GatherRows { table, indices } => {
                let tt = &self.nodes[*table].value;
                let mut g = Tensor::zeros(tt.shape());
                let cols = tt.cols();
                for (r, &i) in indices.iter().enumerate() {
                    let grow = gy.row(r);
                    let dst = &mut g.data_mut()[i * cols..(i + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(grow) {
                        *d += s;
                    }
                }
                acc(grads, &self.nodes, *table, g);
            }
            Op::GroupedRowMean { x, group } => {
                let src = &self.nodes[*x].value;
                let cols = src.cols();
                let mut g = vec![0.0; src.len()];
                let inv = 1.0 / *group as f64;
                for gi in 0..gy.rows() {
                    let grow = gy.row(gi);
                    for i in 0..*group {
                        let dst = &mut g[(gi * group + i) * cols..(gi * group + i + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(grow) {
                            *d += s * inv;
                        }
                    }
                }
                acc(
                    grads,
                    &self.nodes,
                    *x,
                    Tensor::new(src.shape().to_vec(), g).expect("mean grad shape"),
                );
            }
            Op::SmoothL1 { pred, target } => {
                let (tp, tt) = (&self.nodes[*pred].value, &self.nodes[*target].value);
                let scale = gy.data()[0] / tp.len() as f64;
                let mut gp = Tensor::zeros(tp.shape());
                for ((g, p), t) in gp.data_mut().iter_mut().zip(tp.data()).zip(tt.data()) {
                    *g = scale * (p - t).clamp(-1.0, 1.0);
                }
                if self.nodes[*target].requires_grad {
                    let gt = gp.map(|v| -v);
                    acc(grads, &self.nodes, *target, gt);
                }
                acc(grads, &self.nodes, *pred, gp);
            }
            Op::SumScaled { terms } => {
                let g0 = gy.data()[0];
                for (pid, c) in terms {
                    acc(grads, &self.nodes, *pid, Tensor::scalar(g0 * c));
                }
            }
        }
    }
}

// ---- shared kernels -------------------------------------------------------

fn check_conv_shapes(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Result<()> {
    if x.rank() != 2 || w.rank() != 3 {
        return Err(TauError::ShapeMismatch(format!(
            "conv1d: input {:?}, weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let k = w.shape()[2];
    if k % 2 == 0 {
        return Err(TauError::InvalidArgument(format!(
            "conv1d kernel size {} must be odd",
            k
        )));
    }
    if dilation == 0 {
        return Err(TauError::InvalidArgument("conv1d dilation must be >= 1".into()));
    }
    if w.shape()[1] != x.shape()[0] || b.len() != w.shape()[0] {
        return Err(TauError::ShapeMismatch(format!(
            "conv1d: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Builds the zero-padded copy of `x` used by both conv passes.
fn pad_input(x: &Tensor, pad: usize) -> (Vec<f64>, usize) {
    let (cin, n) = (x.rows(), x.cols());
    let npad = n + 2 * pad;
    let mut xpad = vec![0.0; cin * npad];
    for ci in 0..cin {
        xpad[ci * npad + pad..ci * npad + pad + n].copy_from_slice(x.row(ci));
    }
    (xpad, npad)
}

pub(crate) fn conv1d_kernel(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Tensor {
    let (cin, n) = (x.rows(), x.cols());
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = dilation * (k - 1) / 2;
    let (xpad, npad) = pad_input(x, pad);
    let mut out = vec![0.0; cout * n];
    let wd = w.data();
    for co in 0..cout {
        let orow = &mut out[co * n..(co + 1) * n];
        orow.fill(b.data()[co]);
        for ci in 0..cin {
            let xrow = &xpad[ci * npad..(ci + 1) * npad];
            for kk in 0..k {
                let wv = wd[(co * cin + ci) * k + kk];
                let off = kk * dilation;
                for (t, o) in orow.iter_mut().enumerate() {
                    *o += wv * xrow[t + off];
                }
            }
        }
    }
    Tensor::new(vec![cout, n], out).expect("conv1d output shape")
}

fn conv1d_backward(x: &Tensor, w: &Tensor, gy: &Tensor, dilation: usize) -> (Tensor, Tensor, Tensor) {
    let (cin, n) = (x.rows(), x.cols());
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = dilation * (k - 1) / 2;
    let (xpad, npad) = pad_input(x, pad);
    let mut gxpad = vec![0.0; cin * npad];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; cout];
    let wd = w.data();
    for co in 0..cout {
        let grow = gy.row(co);
        gb[co] += grow.iter().sum::<f64>();
        for ci in 0..cin {
            let xrow = &xpad[ci * npad..(ci + 1) * npad];
            let gxrow = &mut gxpad[ci * npad..(ci + 1) * npad];
            for kk in 0..k {
                let off = kk * dilation;
                let wv = wd[(co * cin + ci) * k + kk];
                let mut acc = 0.0;
                for (t, g) in grow.iter().enumerate() {
                    acc += g * xrow[t + off];
                    gxrow[t + off] += g * wv;
                }
                gw[(co * cin + ci) * k + kk] += acc;
            }
        }
    }
    let mut gx = vec![0.0; cin * n];
    for ci in 0..cin {
        gx[ci * n..(ci + 1) * n].copy_from_slice(&gxpad[ci * npad + pad..ci * npad + pad + n]);
    }
    (
        Tensor::new(vec![cin, n], gx).expect("conv1d gx shape"),
        Tensor::new(w.shape().to_vec(), gw).expect("conv1d gw shape"),
        Tensor::from_vec(gb),
    )
}

fn maxpool1d_kernel(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, n) = (x.rows(), x.cols());
    let m = n / 2;
    let mut out = vec![0.0; c * m];
    let mut switches = vec![0usize; c * m];
    for ci in 0..c {
        let row = x.row(ci);
        for t in 0..m {
            let (a, b) = (row[2 * t], row[2 * t + 1]);
            // Ties keep the earlier element.
            if a >= b {
                out[ci * m + t] = a;
                switches[ci * m + t] = ci * n + 2 * t;
            } else {
                out[ci * m + t] = b;
                switches[ci * m + t] = ci * n + 2 * t + 1;
            }
        }
    }
    (
        Tensor::new(vec![c, m], out).expect("maxpool output shape"),
        switches,
    )
}

/// Source taps and blend weight for linear resampling.
fn resize_taps(n: usize, target: usize, j: usize) -> (usize, usize, f64) {
    let pos = (j as f64 + 0.5) * n as f64 / target as f64 - 0.5;
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let i0 = pos.floor() as usize;
    let i0 = i0.min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, pos - i0 as f64)
}

pub(crate) fn resize_linear_kernel(x: &Tensor, target: usize) -> Tensor {
    let (c, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; c * target];
    for j in 0..target {
        let (i0, i1, f) = resize_taps(n, target, j);
        for r in 0..c {
            out[r * target + j] = (1.0 - f) * x.at2(r, i0) + f * x.at2(r, i1);
        }
    }
    Tensor::new(vec![c, target], out).expect("resize output shape")
}

pub(crate) fn matmul_kernel(a: &Tensor, b: &Tensor, trans_b: bool) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = if trans_b { b.rows() } else { b.cols() };
    let mut out = vec![0.0; m * n];
    if trans_b {
        debug_assert_eq!(b.cols(), k);
        for i in 0..m {
            let arow = a.row(i);
            for j in 0..n {
                let brow = b.row(j);
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
    } else {
        debug_assert_eq!(b.rows(), k);
        for i in 0..m {
            let arow = a.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = b.row(kk);
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul output shape")
}

pub(crate) fn transpose_kernel(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.at2(i, j);
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose shape")
}

pub(crate) fn smooth_l1_value(pred: &Tensor, target: &Tensor) -> f64 {
    let mut total = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = (p - t).abs();
        total += if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
    }
    total / pred.len() as f64
}

// ---- pure convenience wrappers ---------------------------------------------

/// Dilated "same"-padded convolution without a tape.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Result<Tensor> {
    check_conv_shapes(x, w, b, dilation)?;
    let out = conv1d_kernel(x, w, b, dilation);
    out.check_finite("conv1d")?;
    Ok(out)
}

/// Pool-size-2 max pooling without a tape.
pub fn maxpool1d(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.cols() < 2 {
        return Err(TauError::InvalidArgument(format!(
            "maxpool1d needs C×N with N >= 2, got {:?}",
            x.shape()
        )));
    }
    Ok(maxpool1d_kernel(x).0)
}

/// 2× linear upsampling without a tape.
pub fn upsample_linear2x(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.cols() == 0 {
        return Err(TauError::InvalidArgument("upsample of empty input".into()));
    }
    Ok(resize_linear_kernel(x, 2 * x.cols()))
}

/// Mean smooth-L1 loss without a tape.
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(TauError::ShapeMismatch(format!(
            "smooth_l1: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(smooth_l1_value(pred, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let b = t1(&[0.0]);
        let y = conv1d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_hand_example_dilation1() {
        // weight [1, 0, -1], zero padding: out[t] = x[t-1] - x[t+1]
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let b = t1(&[0.0]);
        let y = conv1d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, -2.0, 3.0]);
    }

    #[test]
    fn conv1d_hand_example_dilation2() {
        // pad 2 each side; out[t] = x[t-2] - x[t+2]
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let b = t1(&[0.0]);
        let y = conv1d(&x, &w, &b, 2).unwrap();
        assert_eq!(y.data(), &[-3.0, -4.0, 1.0, 2.0]);
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let b = t1(&[0.0]);
        assert!(matches!(
            conv1d(&x, &w, &b, 1),
            Err(TauError::InvalidArgument(_))
        ));
    }

    #[test]
    fn maxpool_examples() {
        let y = maxpool1d(&Tensor::from_rows(&[vec![1.0, 3.0, 2.0, 5.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        // odd trailing element dropped
        let y = maxpool1d(&Tensor::from_rows(&[vec![1.0, 1.0, 1.0, 1.0, 9.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0]);
        let y = maxpool1d(&Tensor::from_rows(&[vec![-5.0, -7.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[-5.0]);
        assert!(maxpool1d(&Tensor::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn upsample_examples() {
        let y = upsample_linear2x(&Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 1.5, 2.5, 3.0]);
        let y = upsample_linear2x(&Tensor::from_rows(&[vec![7.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0, 7.0]);
        let y = upsample_linear2x(&Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0; 6]);
    }

    #[test]
    fn smooth_l1_examples() {
        let p = t1(&[0.5, 0.5]);
        let z = t1(&[0.0, 0.0]);
        assert!((smooth_l1(&p, &z).unwrap() - 0.125).abs() < 1e-12);
        let p = t1(&[2.0]);
        assert!((smooth_l1(&p, &t1(&[0.0])).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let target = tape.constant(Tensor::zeros(&[2, 2]));
        // sum(w) via smooth_l1 would kink at |d|=1, use matmul with ones instead
        let ones = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let col = tape.matmul(w, ones).unwrap();
        let onesr = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let total = tape.matmul(onesr, col).unwrap();
        let _ = target;
        let grads = tape.backward(total).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn second_backward_fails() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(2.0));
        let y = tape.scale(w, 3.0).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(TauError::TapeConsumed)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(w),
            Err(TauError::LossNotScalar(_))
        ));
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1e308));
        let b = tape.leaf(Tensor::scalar(1e308));
        assert!(matches!(tape.add(a, b), Err(TauError::NonFinite(_))));
    }

    #[test]
    fn smooth_l1_gradient_pieces() {
        // d = 3 -> 1, d = -3 -> -1, d = 0.2 -> 0.2 (single element, mean = identity)
        for (d, expect) in [(3.0, 1.0), (-3.0, -1.0), (0.2, 0.2)] {
            let mut tape = Tape::new();
            let p = tape.leaf(Tensor::scalar(d));
            let t = tape.constant(Tensor::scalar(0.0));
            let loss = tape.smooth_l1(p, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            assert!((grads.get(p).unwrap().data()[0] - expect).abs() < 1e-12);
        }
    }
}
