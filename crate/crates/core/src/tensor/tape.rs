use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Bmm { a: Var, b: Var },
    BmmNt { a: Var, b: Var },
    TransposeLast2 { a: Var },
    Reshape { a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Scale { a: Var, c: f64 },
    Tanh { a: Var },
    Gelu { a: Var },
    Softmax { a: Var },
    LogSoftmax { a: Var, mask: Option<Vec<bool>> },
    LayerNorm {
        a: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanAxis1 { a: Var, mask: Option<Vec<bool>>, counts: Vec<usize> },
    Concat1 { a: Var, b: Var },
    Slice1 { a: Var, start: usize },
    ExpandBatch { a: Var },
    GatherRows { a: Var, idx: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    IndexCols { a: Var, cols: Vec<usize> },
    Pick { a: Var, idx: Vec<usize> },
    L2NormalizeRows { a: Var, eps: f64, norms: Vec<f64> },
    Sum { a: Var },
    Mean { a: Var },
    WeightedSum { a: Var, w: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient; only leaves that require grad carry one.
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Linear record of operations. Every node is appended after its inputs,
/// so the node order is already a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, n: usize) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Leaves with `requires_grad` get a zeroed
    /// gradient buffer; all others never hold gradient state.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it carries gradient state.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches shape"))
    }

    /// Number of nodes holding a gradient buffer.
    pub fn grad_buffers(&self) -> usize {
        self.nodes.iter().filter(|n| n.grad.is_some()).count()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn make(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op produced consistent shape")
    }

    // ---- linear algebra ----------------------------------------------------

    /// `a[.., k] · b[k, n] -> [.., n]`; leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).numel() / k;
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Self::make(shape, out), &[a, b], Op::MatMul { a, b }))
    }

    /// Batched product `a[B, m, k] · b[B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", &sa, &sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_nn(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(Self::make(vec![bs, m, n], out), &[a, b], Op::Bmm { a, b }))
    }

    /// Batched product with the second operand transposed:
    /// `a[B, m, k] · b[B, n, k]ᵀ -> [B, m, n]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(shape_err("bmm_nt", &sa, &sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_nt(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * n * k..(i + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(Self::make(vec![bs, m, n], out), &[a, b], Op::BmmNt { a, b }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(Error::Shape(format!("transpose needs >= 2 axes, got {sa:?}")));
        }
        let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batches = self.value(a).numel() / (m * n);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batches {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[off + j * m + i] = src[off + i * n + j];
                }
            }
        }
        let mut shape = sa;
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        Ok(self.push(Self::make(shape, out), &[a], Op::TransposeLast2 { a }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, &[a], Op::Reshape { a }))
    }

    // ---- elementwise ----------------------------------------------------------

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Self::make(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, &[a, b], Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, &[a, b], Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, &[a, b], Op::Mul { a, b }))
    }

    /// Adds `bias[n]` to every row of `a[.., n]`. The only broadcast supported.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("add_bias", &sa, &sb));
        }
        let n = sb[0];
        let bv = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        Ok(self.push(Self::make(sa, data), &[a, bias], Op::AddBias { a, bias }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let value = Self::make(av.shape().to_vec(), av.data().iter().map(|x| x * c).collect());
        Ok(self.push(value, &[a], Op::Scale { a, c }))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = Self::make(av.shape().to_vec(), av.data().iter().map(|x| x.tanh()).collect());
        Ok(self.push(value, &[a], Op::Tanh { a }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh()))
            .collect();
        let value = Self::make(av.shape().to_vec(), data);
        Ok(self.push(value, &[a], Op::Gelu { a }))
    }

    // ---- normalizations -------------------------------------------------------

    fn check_mask(&self, op: &str, a: Var, mask: Option<&[bool]>) -> Result<()> {
        if let Some(m) = mask {
            if m.len() != self.value(a).numel() {
                return Err(Error::Shape(format!(
                    "{op}: mask has {} entries for shape {:?}",
                    m.len(),
                    self.shape(a)
                )));
            }
        }
        Ok(())
    }

    /// Row-wise softmax over the last axis with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the last axis where `mask[i] == false` entries are
    /// excluded and produce exactly zero. `mask` covers every element of `a`.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.softmax_impl(a, Some(mask))
    }

    fn row_stats(x: &[f64], m: Option<&[bool]>) -> Result<(f64, f64)> {
        let valid = |j: usize| m.is_none_or(|m| m[j]);
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for (j, &v) in x.iter().enumerate() {
            if !valid(j) {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::Numeric(format!("softmax input contains {v}")));
            }
            any = true;
            max = max.max(v);
        }
        if !any {
            return Err(Error::Contract("softmax row has no unmasked entries".into()));
        }
        let mut sum = 0.0;
        for (j, &v) in x.iter().enumerate() {
            if valid(j) {
                sum += (v - max).exp();
            }
        }
        Ok((max, sum))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask("softmax", a, mask)?;
        let av = self.value(a);
        let n = av.last_dim();
        let mut out = vec![0.0; av.numel()];
        for (r, x) in av.data().chunks(n).enumerate() {
            let m = mask.map(|m| &m[r * n..(r + 1) * n]);
            let (max, sum) = Self::row_stats(x, m)?;
            for j in 0..n {
                if m.is_none_or(|m| m[j]) {
                    out[r * n + j] = (x[j] - max).exp() / sum;
                }
            }
        }
        let value = Self::make(av.shape().to_vec(), out);
        Ok(self.push(value, &[a], Op::Softmax { a }))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.log_softmax_impl(a, None)
    }

    /// Log-softmax over the last axis; masked entries are excluded from the
    /// normalizer and produce zero.
    pub fn masked_log_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.log_softmax_impl(a, Some(mask))
    }

    fn log_softmax_impl(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask("log_softmax", a, mask)?;
        let av = self.value(a);
        let n = av.last_dim();
        let mut out = vec![0.0; av.numel()];
        for (r, x) in av.data().chunks(n).enumerate() {
            let m = mask.map(|m| &m[r * n..(r + 1) * n]);
            let (max, sum) = Self::row_stats(x, m)?;
            let lse = max + sum.ln();
            for j in 0..n {
                if m.is_none_or(|m| m[j]) {
                    out[r * n + j] = x[j] - lse;
                }
            }
        }
        let value = Self::make(av.shape().to_vec(), out);
        let mask = mask.map(|m| m.to_vec());
        Ok(self.push(value, &[a], Op::LogSoftmax { a, mask }))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let sa = self.shape(a).to_vec();
        let d = sa[sa.len() - 1];
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: input {sa:?} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let x = self.value(a).data();
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            Self::make(sa, out),
            &[a, gain, bias],
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Scales each row of `a[.., d]` by `1 / max(‖row‖, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("normalize eps must be > 0, got {eps}")));
        }
        let av = self.value(a);
        let d = av.last_dim();
        let mut norms = Vec::with_capacity(av.numel() / d);
        let mut out = Vec::with_capacity(av.numel());
        for row in av.data().chunks(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            norms.push(norm);
            out.extend(row.iter().map(|v| v / denom));
        }
        let value = Self::make(av.shape().to_vec(), out);
        Ok(self.push(value, &[a], Op::L2NormalizeRows { a, eps, norms }))
    }

    // ---- reductions and reshaping along the sequence axis -------------------

    /// Mean over axis 1 of `a[B, L, D] -> [B, D]`.
    pub fn mean_axis1(&mut self, a: Var) -> Result<Var> {
        self.mean_axis1_impl(a, None)
    }

    /// Mean over the positions of axis 1 where `mask[b * L + j]` holds.
    pub fn masked_mean_axis1(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.mean_axis1_impl(a, Some(mask))
    }

    fn mean_axis1_impl(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 {
            return Err(Error::Shape(format!("mean_axis1 needs [B, L, D], got {sa:?}")));
        }
        let (bs, l, d) = (sa[0], sa[1], sa[2]);
        if let Some(m) = mask {
            if m.len() != bs * l {
                return Err(Error::Shape(format!(
                    "mean_axis1: mask of {} entries for {sa:?}",
                    m.len()
                )));
            }
        }
        let counts: Vec<usize> = (0..bs)
            .map(|b| mask.map_or(l, |m| m[b * l..(b + 1) * l].iter().filter(|&&v| v).count()))
            .collect();
        if counts.contains(&0) {
            return Err(Error::Shape("mean_axis1 over an empty axis".into()));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; bs * d];
        for b in 0..bs {
            let o = &mut out[b * d..(b + 1) * d];
            for j in 0..l {
                if mask.is_some_and(|m| !m[b * l + j]) {
                    continue;
                }
                let row = &x[(b * l + j) * d..(b * l + j + 1) * d];
                for (ov, rv) in o.iter_mut().zip(row) {
                    *ov += rv;
                }
            }
            let inv = 1.0 / counts[b] as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let mask = mask.map(|m| m.to_vec());
        Ok(self.push(Self::make(vec![bs, d], out), &[a], Op::MeanAxis1 { a, mask, counts }))
    }

    /// Concatenates `a[B, L1, D]` and `b[B, L2, D]` along axis 1.
    pub fn concat_axis1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(shape_err("concat_axis1", &sa, &sb));
        }
        let (bs, l1, l2, d) = (sa[0], sa[1], sb[1], sa[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bs * (l1 + l2) * d);
        for i in 0..bs {
            out.extend_from_slice(&ad[i * l1 * d..(i + 1) * l1 * d]);
            out.extend_from_slice(&bd[i * l2 * d..(i + 1) * l2 * d]);
        }
        Ok(self.push(Self::make(vec![bs, l1 + l2, d], out), &[a, b], Op::Concat1 { a, b }))
    }

    /// Positions `start..start + len` of axis 1.
    pub fn slice_axis1(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || len == 0 || start + len > sa[1] {
            return Err(Error::Shape(format!(
                "slice_axis1: range {start}..{} out of {sa:?}",
                start + len
            )));
        }
        let (bs, l, d) = (sa[0], sa[1], sa[2]);
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(bs * len * d);
        for i in 0..bs {
            out.extend_from_slice(&ad[(i * l + start) * d..(i * l + start + len) * d]);
        }
        Ok(self.push(Self::make(vec![bs, len, d], out), &[a], Op::Slice1 { a, start }))
    }

    /// Repeats `a` along a new leading axis of size `batch`.
    pub fn expand_batch(&mut self, a: Var, batch: usize) -> Result<Var> {
        if batch == 0 {
            return Err(Error::Shape("expand_batch to an empty batch".into()));
        }
        let av = self.value(a);
        let mut shape = vec![batch];
        shape.extend_from_slice(av.shape());
        let mut out = Vec::with_capacity(batch * av.numel());
        for _ in 0..batch {
            out.extend_from_slice(av.data());
        }
        Ok(self.push(Self::make(shape, out), &[a], Op::ExpandBatch { a }))
    }

    /// Picks row `idx[b]` of every batch entry: `a[B, L, D] -> [B, D]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || idx.len() != sa[0] {
            return Err(Error::Shape(format!(
                "gather_rows: {} indices for {sa:?}",
                idx.len()
            )));
        }
        let (l, d) = (sa[1], sa[2]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= l) {
            return Err(Error::Contract(format!("gather_rows: index {bad} >= {l}")));
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for (b, &i) in idx.iter().enumerate() {
            out.extend_from_slice(&ad[(b * l + i) * d..(b * l + i + 1) * d]);
        }
        let shape = vec![idx.len(), d];
        Ok(self.push(Self::make(shape, out), &[a], Op::GatherRows { a, idx: idx.to_vec() }))
    }

    /// Embedding lookup: rows `ids` of `table[V, D]` as `[ids.len(), D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || ids.is_empty() {
            return Err(Error::Shape(format!(
                "embedding: {} ids into table {st:?}",
                ids.len()
            )));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Vocabulary { id: bad, vocab_size: v });
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let shape = vec![ids.len(), d];
        Ok(self.push(
            Self::make(shape, out),
            &[table],
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Columns `cols` of every row: `a[m, n] -> [m, cols.len()]`.
    pub fn index_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || cols.is_empty() {
            return Err(Error::Shape(format!("index_cols: {} columns of {sa:?}", cols.len())));
        }
        let (m, n) = (sa[0], sa[1]);
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::Contract(format!("index_cols: column {bad} >= {n}")));
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(m * cols.len());
        for r in 0..m {
            out.extend(cols.iter().map(|&c| ad[r * n + c]));
        }
        let shape = vec![m, cols.len()];
        Ok(self.push(Self::make(shape, out), &[a], Op::IndexCols { a, cols: cols.to_vec() }))
    }

    /// One element per row: `a[m, n] -> [m]` with `out[r] = a[r, idx[r]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || idx.len() != sa[0] {
            return Err(Error::Shape(format!("pick: {} indices for {sa:?}", idx.len())));
        }
        let n = sa[1];
        if let Some(&bad) = idx.iter().find(|&&c| c >= n) {
            return Err(Error::Contract(format!("pick: column {bad} >= {n}")));
        }
        let ad = self.value(a).data();
        let out = idx.iter().enumerate().map(|(r, &c)| ad[r * n + c]).collect();
        let shape = vec![idx.len()];
        Ok(self.push(Self::make(shape, out), &[a], Op::Pick { a, idx: idx.to_vec() }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), &[a], Op::Sum { a }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.numel() as f64;
        Ok(self.push(Tensor::scalar(s), &[a], Op::Mean { a }))
    }

    /// `Σ w ⊙ a` with constant weights `w`.
    pub fn weighted_sum(&mut self, a: Var, w: &[f64]) -> Result<Var> {
        let av = self.value(a);
        if w.len() != av.numel() {
            return Err(Error::Shape(format!(
                "weighted_sum: {} weights for shape {:?}",
                w.len(),
                av.shape()
            )));
        }
        let s = av.data().iter().zip(w).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), &[a], Op::WeightedSum { a, w: w.to_vec() }))
    }

    // ---- backward -------------------------------------------------------------

    /// Accumulates `d root / d leaf` into every leaf that requires grad.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.requires_grad(root) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (i, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if let (Op::Leaf, Some(g), Some(buf)) = (&node.op, g, node.grad.as_mut()) {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
        }
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = self.numel(*a) / k;
                if self.rg(*a) {
                    let ga = acc(grads, *a, m * k);
                    gemm_nt(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, k * n);
                    gemm_tn(self.value(*a).data(), g, gb, k, m, n);
                }
            }
            Op::Bmm { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let ga = acc(grads, *a, bs * m * k);
                    for t in 0..bs {
                        gemm_nt(
                            &g[t * m * n..(t + 1) * m * n],
                            &bd[t * k * n..(t + 1) * k * n],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let gb = acc(grads, *b, bs * k * n);
                    for t in 0..bs {
                        gemm_tn(
                            &ad[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut gb[t * k * n..(t + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                }
            }
            Op::BmmNt { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let ga = acc(grads, *a, bs * m * k);
                    for t in 0..bs {
                        gemm_nn(
                            &g[t * m * n..(t + 1) * m * n],
                            &bd[t * n * k..(t + 1) * n * k],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let gb = acc(grads, *b, bs * n * k);
                    for t in 0..bs {
                        gemm_tn(
                            &g[t * m * n..(t + 1) * m * n],
                            &ad[t * m * k..(t + 1) * m * k],
                            &mut gb[t * n * k..(t + 1) * n * k],
                            n,
                            m,
                            k,
                        );
                    }
                }
            }
            Op::TransposeLast2 { a } => {
                let so = node.value.shape();
                // output is [.., n, m]; input [.., m, n]
                let (n, m) = (so[so.len() - 2], so[so.len() - 1]);
                let ga = acc(grads, *a, g.len());
                for t in 0..g.len() / (m * n) {
                    let off = t * m * n;
                    for j in 0..n {
                        for i in 0..m {
                            ga[off + i * n + j] += g[off + j * m + i];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                let ga = acc(grads, *a, g.len());
                add_into(ga, g);
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.rg(*b) {
                    add_into(acc(grads, *b, g.len()), g);
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, g.len());
                    for (x, v) in gb.iter_mut().zip(g) {
                        *x -= v;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let ga = acc(grads, *a, g.len());
                    for ((x, v), w) in ga.iter_mut().zip(g).zip(bd) {
                        *x += v * w;
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let gb = acc(grads, *b, g.len());
                    for ((x, v), w) in gb.iter_mut().zip(g).zip(ad) {
                        *x += v * w;
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if self.rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.rg(*bias) {
                    let n = self.numel(*bias);
                    let gb = acc(grads, *bias, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale { a, c } => {
                let ga = acc(grads, *a, g.len());
                for (x, v) in ga.iter_mut().zip(g) {
                    *x += c * v;
                }
            }
            Op::Tanh { a } => {
                let ga = acc(grads, *a, g.len());
                for ((x, v), y) in ga.iter_mut().zip(g).zip(out) {
                    *x += v * (1.0 - y * y);
                }
            }
            Op::Gelu { a } => {
                let ad = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for ((x, v), &z) in ga.iter_mut().zip(g).zip(ad) {
                    let u = SQRT_2_OVER_PI * (z + GELU_C * z * z * z);
                    let t = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * z * z);
                    *x += v * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du);
                }
            }
            Op::Softmax { a } => {
                let n = node.value.last_dim();
                let ga = acc(grads, *a, g.len());
                for ((y, gy), gx) in out.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[j] += y[j] * (gy[j] - dot);
                    }
                }
            }
            Op::LogSoftmax { a, mask } => {
                let n = node.value.last_dim();
                let ga = acc(grads, *a, g.len());
                for (r, ((y, gy), gx)) in out.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)).enumerate() {
                    let valid = |j: usize| mask.as_ref().is_none_or(|m| m[r * n + j]);
                    let total: f64 = (0..n).filter(|&j| valid(j)).map(|j| gy[j]).sum();
                    for j in 0..n {
                        if valid(j) {
                            gx[j] += gy[j] - y[j].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.numel(*gain);
                if self.rg(*a) {
                    let gv = self.value(*gain).data();
                    let ga = acc(grads, *a, g.len());
                    let mut dxhat = vec![0.0; d];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gy = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gy[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let gx = &mut ga[r * d..(r + 1) * d];
                        for j in 0..d {
                            gx[j] += is * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                if self.rg(*gain) {
                    let gg = acc(grads, *gain, d);
                    for (gy, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gy[j] * xh[j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let gb = acc(grads, *bias, d);
                    for gy in g.chunks(d) {
                        add_into(gb, gy);
                    }
                }
            }
            Op::MeanAxis1 { a, mask, counts } => {
                let sa = self.shape(*a);
                let (bs, l, d) = (sa[0], sa[1], sa[2]);
                let ga = acc(grads, *a, bs * l * d);
                for b in 0..bs {
                    let inv = 1.0 / counts[b] as f64;
                    let gy = &g[b * d..(b + 1) * d];
                    for j in 0..l {
                        if mask.as_ref().is_some_and(|m| !m[b * l + j]) {
                            continue;
                        }
                        let gx = &mut ga[(b * l + j) * d..(b * l + j + 1) * d];
                        for (x, v) in gx.iter_mut().zip(gy) {
                            *x += v * inv;
                        }
                    }
                }
            }
            Op::Concat1 { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, l1, l2, d) = (sa[0], sa[1], sb[1], sa[2]);
                let stride = (l1 + l2) * d;
                if self.rg(*a) {
                    let ga = acc(grads, *a, bs * l1 * d);
                    for t in 0..bs {
                        add_into(&mut ga[t * l1 * d..(t + 1) * l1 * d], &g[t * stride..t * stride + l1 * d]);
                    }
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, bs * l2 * d);
                    for t in 0..bs {
                        add_into(
                            &mut gb[t * l2 * d..(t + 1) * l2 * d],
                            &g[t * stride + l1 * d..(t + 1) * stride],
                        );
                    }
                }
            }
            Op::Slice1 { a, start } => {
                let sa = self.shape(*a);
                let (bs, l, d) = (sa[0], sa[1], sa[2]);
                let len = node.value.shape()[1];
                let ga = acc(grads, *a, bs * l * d);
                for t in 0..bs {
                    add_into(
                        &mut ga[(t * l + start) * d..(t * l + start + len) * d],
                        &g[t * len * d..(t + 1) * len * d],
                    );
                }
            }
            Op::ExpandBatch { a } => {
                let n = self.numel(*a);
                let ga = acc(grads, *a, n);
                for chunk in g.chunks(n) {
                    add_into(ga, chunk);
                }
            }
            Op::GatherRows { a, idx } => {
                let sa = self.shape(*a);
                let (bs, l, d) = (sa[0], sa[1], sa[2]);
                let ga = acc(grads, *a, bs * l * d);
                for (b, &i) in idx.iter().enumerate() {
                    add_into(&mut ga[(b * l + i) * d..(b * l + i + 1) * d], &g[b * d..(b + 1) * d]);
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let gt = acc(grads, *table, self.numel(*table));
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::IndexCols { a, cols } => {
                let n = self.shape(*a)[1];
                let k = cols.len();
                let ga = acc(grads, *a, self.numel(*a));
                for (r, gy) in g.chunks(k).enumerate() {
                    for (&c, v) in cols.iter().zip(gy) {
                        ga[r * n + c] += v;
                    }
                }
            }
            Op::Pick { a, idx } => {
                let n = self.shape(*a)[1];
                let ga = acc(grads, *a, self.numel(*a));
                for (r, (&c, v)) in idx.iter().zip(g).enumerate() {
                    ga[r * n + c] += v;
                }
            }
            Op::L2NormalizeRows { a, eps, norms } => {
                let d = node.value.last_dim();
                let ga = acc(grads, *a, g.len());
                for (r, &norm) in norms.iter().enumerate() {
                    let y = &out[r * d..(r + 1) * d];
                    let gy = &g[r * d..(r + 1) * d];
                    let gx = &mut ga[r * d..(r + 1) * d];
                    if norm > *eps {
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[j] += (gy[j] - y[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..d {
                            gx[j] += gy[j] / eps;
                        }
                    }
                }
            }
            Op::Sum { a } => {
                let n = self.numel(*a);
                let ga = acc(grads, *a, n);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean { a } => {
                let n = self.numel(*a);
                let ga = acc(grads, *a, n);
                let v = g[0] / n as f64;
                ga.iter_mut().for_each(|x| *x += v);
            }
            Op::WeightedSum { a, w } => {
                let ga = acc(grads, *a, w.len());
                for (x, wv) in ga.iter_mut().zip(w) {
                    *x += g[0] * wv;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
