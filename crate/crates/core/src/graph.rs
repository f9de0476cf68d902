//! Reverse-mode autodiff tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! topological order, so backward is a single reverse sweep. Parameters enter
//! as leaves tagged with their store and index; frozen parameters enter as
//! constants and never receive gradients, though gradients still flow through
//! them into upstream nodes that need them.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_acc, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Window offsets recorded by 2×2 max pooling, one per pooled element.
pub type PoolIndices = Arc<[u8]>;

enum Op<F> {
    Leaf,
    Param { tag: u32, id: ParamId },
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom, patches: Option<Vec<F>> },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    InstanceNorm { x: NodeId, rstd: Vec<(F, F)> },
    ScaleShift { x: NodeId, scale: NodeId, shift: NodeId },
    MaxPool2 { x: NodeId, indices: PoolIndices },
    Unpool2 { x: NodeId, indices: PoolIndices },
    Upsample2 { x: NodeId },
    AvgPool2 { x: NodeId },
    GlobalAvgPool { x: NodeId },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: F },
    Tanh { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Reshape { x: NodeId },
    MeanAbsDiff { a: NodeId, b: NodeId },
    MeanSqDiffConst { x: NodeId, target: F },
    WeightedSum { terms: Vec<(NodeId, F)> },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<F> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel_f<F: Float>(n: usize) -> F {
    F::from_usize(n.max(1)).unwrap()
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> F {
        self.nodes[id.0].value.data()[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter. With `trainable = false` the parameter acts as
    /// a constant: no gradient is computed for it.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId, trainable: bool) -> NodeId {
        self.push(store.get(id).clone(), Op::Param { tag: store.tag(), id }, trainable)
    }

    /// Copy of the value with gradient flow cut.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let (n, c_in, h, wd) = self.value(x).dims4()?;
        let (c_out, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c_in {
            return Err(Error::Shape(alloc::format!("conv weight expects {wc} input channels, input has {c_in}")));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw || stride == 0 {
            return Err(Error::Shape(alloc::format!(
                "conv kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).numel() != c_out {
                return Err(Error::Shape("conv bias length mismatch".into()));
            }
        }
        let geom = ConvGeom { n, c_in, h, w: wd, c_out, kh, kw, stride, pad };
        let (out, patches) = kernels::conv2d_forward_keep(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            self.requires_grad(w),
        );
        let t = Tensor::new(&[n, c_out, geom.out_h(), geom.out_w()], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, patches }, rg))
    }

    /// `x [N, in] · wᵀ + b` with `w [out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, win) = self.value(w).dims2()?;
        if fin != win {
            return Err(Error::Shape(alloc::format!("linear expects {win} features, got {fin}")));
        }
        let mut out = vec![F::zero(); n * fout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != fout {
                return Err(Error::Shape("linear bias length mismatch".into()));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv);
            }
        }
        matmul_acc(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut out, F::one());
        let t = Tensor::new(&[n, fout], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Affine-free per-(sample, channel) normalization.
    pub fn instance_norm(&mut self, x: NodeId, eps: F) -> Result<NodeId> {
        self.standardize(x, eps, false)
    }

    fn standardize(&mut self, x: NodeId, eps: F, eps_on_std: bool) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (out, rstd) = kernels::instance_norm_forward(n * c, h * w, self.value(x).data(), eps, eps_on_std);
        let t = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::InstanceNorm { x, rstd }, rg))
    }

    /// `x * scale + shift` with per-(sample, channel) `scale`, `shift` of shape `[N, C]`.
    pub fn scale_shift(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for id in [scale, shift] {
            if self.value(id).shape() != [n, c] {
                return Err(Error::Shape(alloc::format!(
                    "per-channel affine expects [{n}, {c}], got {:?}",
                    self.value(id).shape()
                )));
            }
        }
        let len = h * w;
        let xv = self.value(x).data();
        let sv = self.value(scale).data();
        let bv = self.value(shift).data();
        let mut out = vec![F::zero(); xv.len()];
        for pl in 0..n * c {
            let (s, b) = (sv[pl], bv[pl]);
            for (o, &v) in out[pl * len..][..len].iter_mut().zip(&xv[pl * len..][..len]) {
                *o = v * s + b;
            }
        }
        let t = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(t, Op::ScaleShift { x, scale, shift }, rg))
    }

    /// Adaptive instance normalization: standardize each channel, then
    /// scale by `sigma` and shift by `mu`. Here eps goes on the std, so the
    /// output moments track (mu, |sigma|) closely.
    pub fn adain(&mut self, x: NodeId, mu: NodeId, sigma: NodeId, eps: F) -> Result<NodeId> {
        let normed = self.standardize(x, eps, true)?;
        self.scale_shift(normed, sigma, mu)
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<(NodeId, PoolIndices)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(alloc::format!("2x2 pooling needs even dims, got {h}x{w}")));
        }
        let (out, idx) = kernels::maxpool2_forward(n * c, h, w, self.value(x).data());
        let indices: PoolIndices = idx.into();
        let t = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        let rg = self.rg(&[x]);
        Ok((self.push(t, Op::MaxPool2 { x, indices: indices.clone() }, rg), indices))
    }

    pub fn unpool2(&mut self, x: NodeId, indices: &PoolIndices) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if indices.len() != n * c * h * w {
            return Err(Error::Shape(alloc::format!(
                "pool indices cover {} elements, input has {}",
                indices.len(),
                n * c * h * w
            )));
        }
        let out = kernels::unpool2(n * c, h, w, self.value(x).data(), indices);
        let t = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Unpool2 { x, indices: indices.clone() }, rg))
    }

    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let out = kernels::upsample2(n * c, h, w, self.value(x).data());
        let t = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Upsample2 { x }, rg))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(alloc::format!("2x2 pooling needs even dims, got {h}x{w}")));
        }
        let quarter = F::one() / numel_f::<F>(4);
        let out = kernels::sum_pool2(n * c, h, w, self.value(x).data(), quarter);
        let t = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::AvgPool2 { x }, rg))
    }

    /// Mean over spatial positions: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let len = h * w;
        let inv = F::one() / numel_f::<F>(len);
        let xv = self.value(x).data();
        let out = (0..n * c).map(|pl| xv[pl * len..][..len].iter().fold(F::zero(), |a, &v| a + v) * inv).collect();
        let t = Tensor::new(&[n, c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::GlobalAvgPool { x }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: F) -> NodeId {
        let t = self.value(x).map(|v| if v > F::zero() { v } else { v * slope });
        let rg = self.rg(&[x]);
        self.push(t, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| v.tanh());
        let rg = self.rg(&[x]);
        self.push(t, Op::Tanh { x }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(alloc::format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut t = self.value(a).clone();
        t.add_scaled(self.value(b), F::one());
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Mean absolute difference over all elements (scalar node).
    pub fn mean_abs_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(alloc::format!("L1 distance between {:?} and {:?}", av.shape(), bv.shape())));
        }
        if av.numel() == 0 {
            return Err(Error::Argument("L1 distance of empty tensors".into()));
        }
        let s = av.data().iter().zip(bv.data()).fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs());
        let t = Tensor::scalar(s / numel_f::<F>(av.numel()));
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MeanAbsDiff { a, b }, rg))
    }

    /// Mean of `(x - target)^2` over all elements (scalar node).
    pub fn mean_sq_diff_const(&mut self, x: NodeId, target: F) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::Argument("mean of empty tensor".into()));
        }
        let s = xv.data().iter().fold(F::zero(), |acc, &v| acc + (v - target) * (v - target));
        let t = Tensor::scalar(s / numel_f::<F>(xv.numel()));
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MeanSqDiffConst { x, target }, rg))
    }

    /// `Σ weight_i * term_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, F)]) -> Result<NodeId> {
        let mut s = F::zero();
        for &(id, w) in terms {
            if self.value(id).numel() != 1 {
                return Err(Error::Shape("weighted_sum takes scalar nodes".into()));
            }
            s = s + self.scalar(id) * w;
        }
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { terms: terms.to_vec() }, rg))
    }

    /// Mean softmax cross-entropy of `logits [N, K]` against class labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (n, k) = self.value(logits).dims2()?;
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(alloc::format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Argument(alloc::format!("label {bad} out of {k} classes")));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let loss = labels
            .iter()
            .enumerate()
            .fold(F::zero(), |acc, (i, &l)| acc - probs[i * k + l].max(F::min_positive_value()).ln())
            / numel_f::<F>(n);
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let g = match &node.op {
                Op::Leaf | Op::Param { .. } => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], id: NodeId, g: Tensor<F>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_scaled(&g, F::one()),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_data(&self, grads: &mut [Option<Tensor<F>>], id: NodeId, data: Vec<F>) -> Result<()> {
        let t = Tensor::new(self.value(id).shape(), data)?;
        self.acc(grads, id, t);
        Ok(())
    }

    fn backprop_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Conv2d { x, w, b, geom, patches } => {
                let cg = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    patches.as_deref(),
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                if let Some(dx) = cg.dx {
                    self.acc_data(grads, *x, dx)?;
                }
                if let Some(dw) = cg.dw {
                    self.acc_data(grads, *w, dw)?;
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.acc_data(grads, *b, db)?;
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = self.value(*x).dims2()?;
                let fout = self.value(*w).dims2()?.0;
                if self.requires_grad(*x) {
                    let mut dx = vec![F::zero(); n * fin];
                    matmul_acc(n, fout, fin, gd, false, self.value(*w).data(), false, &mut dx, F::zero());
                    self.acc_data(grads, *x, dx)?;
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![F::zero(); fout * fin];
                    matmul_acc(fout, n, fin, gd, true, self.value(*x).data(), false, &mut dw, F::zero());
                    self.acc_data(grads, *w, dw)?;
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![F::zero(); fout];
                        for row in gd.chunks(fout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        self.acc_data(grads, *b, db)?;
                    }
                }
            }
            Op::InstanceNorm { x, rstd } => {
                let (n, c, h, w) = node.value.dims4()?;
                let dx = kernels::instance_norm_backward(n * c, h * w, node.value.data(), rstd, gd);
                self.acc_data(grads, *x, dx)?;
            }
            Op::ScaleShift { x, scale, shift } => {
                let (n, c, h, w) = node.value.dims4()?;
                let len = h * w;
                let xv = self.value(*x).data();
                let sv = self.value(*scale).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![F::zero(); gd.len()];
                    for pl in 0..n * c {
                        for (d, &gv) in dx[pl * len..][..len].iter_mut().zip(&gd[pl * len..][..len]) {
                            *d = gv * sv[pl];
                        }
                    }
                    self.acc_data(grads, *x, dx)?;
                }
                if self.requires_grad(*scale) {
                    let ds = (0..n * c)
                        .map(|pl| {
                            gd[pl * len..][..len]
                                .iter()
                                .zip(&xv[pl * len..][..len])
                                .fold(F::zero(), |a, (&gv, &v)| a + gv * v)
                        })
                        .collect();
                    self.acc_data(grads, *scale, ds)?;
                }
                if self.requires_grad(*shift) {
                    let db = (0..n * c).map(|pl| gd[pl * len..][..len].iter().fold(F::zero(), |a, &v| a + v)).collect();
                    self.acc_data(grads, *shift, db)?;
                }
            }
            Op::MaxPool2 { x, indices } => {
                let (n, c, ho, wo) = node.value.dims4()?;
                let dx = kernels::unpool2(n * c, ho, wo, gd, indices);
                self.acc_data(grads, *x, dx)?;
            }
            Op::Unpool2 { x, indices } => {
                let (n, c, ho, wo) = self.value(*x).dims4()?;
                let dx = kernels::gather2(n * c, ho, wo, gd, indices);
                self.acc_data(grads, *x, dx)?;
            }
            Op::Upsample2 { x } => {
                let (n, c, h, w) = node.value.dims4()?;
                let dx = kernels::sum_pool2(n * c, h, w, gd, F::one());
                self.acc_data(grads, *x, dx)?;
            }
            Op::AvgPool2 { x } => {
                let (n, c, ho, wo) = node.value.dims4()?;
                let quarter = F::one() / numel_f::<F>(4);
                let dx = kernels::upsample2(n * c, ho, wo, gd).into_iter().map(|v| v * quarter).collect();
                self.acc_data(grads, *x, dx)?;
            }
            Op::GlobalAvgPool { x } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let len = h * w;
                let inv = F::one() / numel_f::<F>(len);
                let mut dx = vec![F::zero(); n * c * len];
                for pl in 0..n * c {
                    let v = gd[pl] * inv;
                    dx[pl * len..][..len].iter_mut().for_each(|d| *d = v);
                }
                self.acc_data(grads, *x, dx)?;
            }
            Op::Relu { x } => {
                let dx = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| if y > F::zero() { gv } else { F::zero() })
                    .collect();
                self.acc_data(grads, *x, dx)?;
            }
            Op::LeakyRelu { x, slope } => {
                let dx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &v)| if v > F::zero() { gv } else { gv * *slope })
                    .collect();
                self.acc_data(grads, *x, dx)?;
            }
            Op::Tanh { x } => {
                let dx = gd.iter().zip(node.value.data()).map(|(&gv, &y)| gv * (F::one() - y * y)).collect();
                self.acc_data(grads, *x, dx)?;
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Reshape { x } => {
                self.acc_data(grads, *x, gd.to_vec())?;
            }
            Op::MeanAbsDiff { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let scale = gd[0] / numel_f::<F>(av.len());
                let sign: Vec<F> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > F::zero() {
                            scale
                        } else if d < F::zero() {
                            -scale
                        } else {
                            F::zero()
                        }
                    })
                    .collect();
                if self.requires_grad(*b) {
                    self.acc_data(grads, *b, sign.iter().map(|&s| -s).collect())?;
                }
                if self.requires_grad(*a) {
                    self.acc_data(grads, *a, sign)?;
                }
            }
            Op::MeanSqDiffConst { x, target } => {
                let xv = self.value(*x).data();
                let two = F::one() + F::one();
                let scale = two * gd[0] / numel_f::<F>(xv.len());
                let dx = xv.iter().map(|&v| (v - *target) * scale).collect();
                self.acc_data(grads, *x, dx)?;
            }
            Op::WeightedSum { terms } => {
                for &(id, w) in terms {
                    self.acc(grads, id, Tensor::scalar(gd[0] * w));
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.value(*logits).dims2()?.1;
                let scale = gd[0] / numel_f::<F>(labels.len());
                let mut dx: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dx[i * k + l] = dx[i * k + l] - scale;
                }
                self.acc_data(grads, *logits, dx)?;
            }
        }
        Ok(())
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<F: Float>(logits: &[F], k: usize) -> Vec<F> {
    let mut out = vec![F::zero(); logits.len()];
    for (row, dst) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
        let mut z = F::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            z = z + *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / z);
    }
    out
}

/// Result of a backward sweep.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient at a leaf created by [`Graph::variable`] or a trainable parameter.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Sum gradients of every node bound from `store`, indexed by parameter.
    pub fn for_store(&self, graph: &Graph<F>, store: &ParamStore<F>) -> Vec<Option<Tensor<F>>> {
        let mut out: Vec<Option<Tensor<F>>> = (0..store.len()).map(|_| None).collect();
        for (i, node) in graph.nodes.iter().enumerate() {
            if let Op::Param { tag, id } = node.op {
                if tag != store.tag() {
                    continue;
                }
                if let Some(g) = &self.grads[i] {
                    match &mut out[id.0] {
                        Some(e) => e.add_scaled(g, F::one()),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        out
    }
}
