//! A small reverse-mode autodiff tape.
//!
//! Nodes are appended in construction order, so reverse insertion order is a
//! valid reverse topological order for backprop. Every model in the crate
//! builds one graph per sample; batch gradients are per-sample gradients
//! summed in fixed order outside the graph, which keeps training
//! reproducible regardless of worker count.
//!
//! Only one convolution primitive exists: 3-D (transposed) convolution with
//! per-axis stride and zero padding. 1-D and 2-D cases pass singleton
//! spatial axes.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// k * x + c, elementwise; only the slope matters for gradients.
    Affine(NodeId, f64),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Sqrt(NodeId),
    /// w [m,n] * x [n] + b [m]
    Linear { w: NodeId, x: NodeId, b: NodeId },
    Conv3d { x: NodeId, k: NodeId, b: NodeId, stride: [usize; 3], pad: [usize; 3] },
    Conv3dT { x: NodeId, k: NodeId, b: NodeId, stride: [usize; 3], pad: [usize; 3] },
    /// Concatenate along axis 0 (channels).
    ConcatChannels(NodeId, NodeId),
    /// T inputs of [C,H,W] into [C,T,H,W].
    StackSlices(Vec<NodeId>),
    /// [C, spatial..] -> [C]
    GlobalAvgPool(NodeId),
    /// x [C, spatial..] scaled per channel by s [C].
    ChannelScale { x: NodeId, s: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    /// Select one index along the last axis: [.., L] -> [..].
    IndexLastAxis(NodeId, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// A constant leaf; backprop stops here.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "sub shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "div shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x / y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::Div(a, b), ng)
    }

    /// k * x + c elementwise.
    pub fn affine(&mut self, x: NodeId, k: f64, c: f64) -> NodeId {
        let t = self.value(x);
        let data = t.data.iter().map(|v| k * v + c).collect();
        let t = Tensor::new(t.shape.clone(), data);
        let ng = self.needs(x);
        self.push(t, Op::Affine(x, k), ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data.iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(t.shape.clone(), data);
        let ng = self.needs(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| if v > 0.0 { v } else { alpha * v }).collect();
        let t = Tensor::new(t.shape.clone(), data);
        let ng = self.needs(x);
        self.push(t, Op::LeakyRelu(x, alpha), ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data.iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(t.shape.clone(), data);
        let ng = self.needs(x);
        self.push(t, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let t = Tensor::new(t.shape.clone(), data);
        let ng = self.needs(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data.iter().map(|v| v.sqrt()).collect();
        let t = Tensor::new(t.shape.clone(), data);
        let ng = self.needs(x);
        self.push(t, Op::Sqrt(x), ng)
    }

    pub fn linear(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let (tw, tx, tb) = (self.value(w), self.value(x), self.value(b));
        assert_eq!(tw.shape.len(), 2, "linear weight must be 2-D");
        let (m, n) = (tw.shape[0], tw.shape[1]);
        assert_eq!(tx.numel(), n, "linear input mismatch");
        assert_eq!(tb.numel(), m, "linear bias mismatch");
        let mut out = tb.data.clone();
        for i in 0..m {
            let row = &tw.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(&tx.data) {
                acc += wv * xv;
            }
            out[i] += acc;
        }
        let t = Tensor::new(vec![m], out);
        let ng = self.needs(w) || self.needs(x) || self.needs(b);
        self.push(t, Op::Linear { w, x, b }, ng)
    }

    /// x [Ci,D,H,W], kernel [Co,Ci,KD,KH,KW], bias [Co].
    pub fn conv3d(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: [usize; 3], pad: [usize; 3]) -> NodeId {
        let (tx, tk, tb) = (self.value(x), self.value(k), self.value(b));
        assert_eq!(tx.shape.len(), 4, "conv3d input must be [C,D,H,W]");
        assert_eq!(tk.shape.len(), 5, "conv3d kernel must be [Co,Ci,KD,KH,KW]");
        let (ci, d, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (co, kci, kd, kh, kw) = (tk.shape[0], tk.shape[1], tk.shape[2], tk.shape[3], tk.shape[4]);
        assert_eq!(ci, kci, "conv3d channel mismatch");
        assert_eq!(tb.numel(), co, "conv3d bias mismatch");
        let out_dim = |input: usize, kernel: usize, s: usize, p: usize| {
            let span = input + 2 * p;
            assert!(span >= kernel && (span - kernel) % s == 0, "conv3d does not tile: in={input} k={kernel} s={s} p={p}");
            (span - kernel) / s + 1
        };
        let od = out_dim(d, kd, stride[0], pad[0]);
        let oh = out_dim(h, kh, stride[1], pad[1]);
        let ow = out_dim(w, kw, stride[2], pad[2]);

        let mut out = vec![0.0; co * od * oh * ow];
        for c_out in 0..co {
            let bias = tb.data[c_out];
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias;
                        for c_in in 0..ci {
                            for zk in 0..kd {
                                let iz = (z * stride[0] + zk) as i64 - pad[0] as i64;
                                if iz < 0 || iz >= d as i64 {
                                    continue;
                                }
                                for yk in 0..kh {
                                    let iy = (y * stride[1] + yk) as i64 - pad[1] as i64;
                                    if iy < 0 || iy >= h as i64 {
                                        continue;
                                    }
                                    for xk in 0..kw {
                                        let ix = (xx * stride[2] + xk) as i64 - pad[2] as i64;
                                        if ix < 0 || ix >= w as i64 {
                                            continue;
                                        }
                                        let xi = ((c_in * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                        let ki = (((c_out * ci + c_in) * kd + zk) * kh + yk) * kw + xk;
                                        acc += tx.data[xi] * tk.data[ki];
                                    }
                                }
                            }
                        }
                        out[((c_out * od + z) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        let t = Tensor::new(vec![co, od, oh, ow], out);
        let ng = self.needs(x) || self.needs(k) || self.needs(b);
        self.push(t, Op::Conv3d { x, k, b, stride, pad }, ng)
    }

    /// x [Ci,D,H,W], kernel [Ci,Co,KD,KH,KW], bias [Co];
    /// output dim = (in-1)*stride - 2*pad + kernel.
    pub fn conv3d_t(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: [usize; 3], pad: [usize; 3]) -> NodeId {
        let (tx, tk, tb) = (self.value(x), self.value(k), self.value(b));
        assert_eq!(tx.shape.len(), 4, "conv3d_t input must be [C,D,H,W]");
        assert_eq!(tk.shape.len(), 5, "conv3d_t kernel must be [Ci,Co,KD,KH,KW]");
        let (ci, d, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (kci, co, kd, kh, kw) = (tk.shape[0], tk.shape[1], tk.shape[2], tk.shape[3], tk.shape[4]);
        assert_eq!(ci, kci, "conv3d_t channel mismatch");
        assert_eq!(tb.numel(), co, "conv3d_t bias mismatch");
        let out_dim = |input: usize, kernel: usize, s: usize, p: usize| {
            let full = (input - 1) * s + kernel;
            assert!(full >= 2 * p, "conv3d_t padding too large");
            full - 2 * p
        };
        let od = out_dim(d, kd, stride[0], pad[0]);
        let oh = out_dim(h, kh, stride[1], pad[1]);
        let ow = out_dim(w, kw, stride[2], pad[2]);

        let mut out = vec![0.0; co * od * oh * ow];
        for (c_out, &bias) in tb.data.iter().enumerate() {
            let base = c_out * od * oh * ow;
            for v in &mut out[base..base + od * oh * ow] {
                *v = bias;
            }
        }
        for c_in in 0..ci {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let xv = tx.data[((c_in * d + z) * h + y) * w + xx];
                        if xv == 0.0 {
                            continue;
                        }
                        for c_out in 0..co {
                            for zk in 0..kd {
                                let oz = (z * stride[0] + zk) as i64 - pad[0] as i64;
                                if oz < 0 || oz >= od as i64 {
                                    continue;
                                }
                                for yk in 0..kh {
                                    let oy = (y * stride[1] + yk) as i64 - pad[1] as i64;
                                    if oy < 0 || oy >= oh as i64 {
                                        continue;
                                    }
                                    for xk in 0..kw {
                                        let ox = (xx * stride[2] + xk) as i64 - pad[2] as i64;
                                        if ox < 0 || ox >= ow as i64 {
                                            continue;
                                        }
                                        let ki = (((c_in * co + c_out) * kd + zk) * kh + yk) * kw + xk;
                                        let oi = ((c_out * od + oz as usize) * oh + oy as usize) * ow + ox as usize;
                                        out[oi] += xv * tk.data[ki];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![co, od, oh, ow], out);
        let ng = self.needs(x) || self.needs(k) || self.needs(b);
        self.push(t, Op::Conv3dT { x, k, b, stride, pad }, ng)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape[1..], tb.shape[1..], "concat trailing shape mismatch");
        let mut shape = ta.shape.clone();
        shape[0] += tb.shape[0];
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let t = Tensor::new(shape, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, Op::ConcatChannels(a, b), ng)
    }

    /// Stacks T slices of [C,H,W] into [C,T,H,W].
    pub fn stack_slices(&mut self, slices: &[NodeId]) -> NodeId {
        assert!(!slices.is_empty(), "stack_slices needs at least one slice");
        let first = self.value(slices[0]).shape.clone();
        assert_eq!(first.len(), 3, "stack_slices expects [C,H,W] inputs");
        let (c, h, w) = (first[0], first[1], first[2]);
        let t_len = slices.len();
        let mut data = vec![0.0; c * t_len * h * w];
        for (t_idx, &s) in slices.iter().enumerate() {
            let ts = self.value(s);
            assert_eq!(ts.shape, first, "stack_slices shape mismatch");
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data[((ch * t_len + t_idx) * h + y) * w + x] = ts.data[(ch * h + y) * w + x];
                    }
                }
            }
        }
        let ng = slices.iter().any(|&s| self.needs(s));
        let t = Tensor::new(vec![c, t_len, h, w], data);
        self.push(t, Op::StackSlices(slices.to_vec()), ng)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let c = tx.shape[0];
        let spatial = tx.numel() / c;
        let mut out = vec![0.0; c];
        for (ch, o) in out.iter_mut().enumerate() {
            *o = tx.data[ch * spatial..(ch + 1) * spatial].iter().sum::<f64>() / spatial as f64;
        }
        let ng = self.needs(x);
        let t = Tensor::new(vec![c], out);
        self.push(t, Op::GlobalAvgPool(x), ng)
    }

    pub fn channel_scale(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (tx, ts) = (self.value(x), self.value(s));
        let c = tx.shape[0];
        assert_eq!(ts.numel(), c, "channel_scale gate mismatch");
        let spatial = tx.numel() / c;
        let mut data = tx.data.clone();
        for ch in 0..c {
            let g = ts.data[ch];
            for v in &mut data[ch * spatial..(ch + 1) * spatial] {
                *v *= g;
            }
        }
        let ng = self.needs(x) || self.needs(s);
        let t = Tensor::new(tx.shape.clone(), data);
        self.push(t, Op::ChannelScale { x, s }, ng)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data.iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(v), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let v = t.data.iter().sum::<f64>() / t.numel() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(v), Op::Mean(x), ng)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let t = self.value(x);
        assert_eq!(t.numel(), shape.iter().product::<usize>(), "reshape numel mismatch");
        let t = Tensor::new(shape, t.data.clone());
        let ng = self.needs(x);
        self.push(t, Op::Reshape(x), ng)
    }

    /// Selects index `idx` along the last axis.
    pub fn index_last_axis(&mut self, x: NodeId, idx: usize) -> NodeId {
        let t = self.value(x);
        let l = *t.shape.last().expect("index_last_axis on scalar");
        assert!(idx < l, "index {idx} out of {l}");
        let out_shape: Vec<usize> = t.shape[..t.shape.len() - 1].to_vec();
        let n: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for j in 0..n {
            data.push(t.data[j * l + idx]);
        }
        let ng = self.needs(x);
        self.push(Tensor::new(out_shape, data), Op::IndexLastAxis(x, idx), ng)
    }

    /// Reverse-mode gradients of scalar `root` with respect to every node
    /// that needs one. Entries are `None` for nodes outside the
    /// differentiation set.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(root).numel(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(grad);
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    // trainable leaf: keep the accumulated gradient
                    grads[idx] = Some(grad);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &grad.data, 1.0);
                    self.accumulate(&mut grads, *b, &grad.data, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, &grad.data, 1.0);
                    self.accumulate(&mut grads, *b, &grad.data, -1.0);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let vb = &self.nodes[b.0].value.data;
                        let g: Vec<f64> = grad.data.iter().zip(vb).map(|(g, v)| g * v).collect();
                        self.accumulate(&mut grads, *a, &g, 1.0);
                    }
                    if self.needs(*b) {
                        let va = &self.nodes[a.0].value.data;
                        let g: Vec<f64> = grad.data.iter().zip(va).map(|(g, v)| g * v).collect();
                        self.accumulate(&mut grads, *b, &g, 1.0);
                    }
                }
                Op::Div(a, b) => {
                    let vb = &self.nodes[b.0].value.data;
                    if self.needs(*a) {
                        let g: Vec<f64> = grad.data.iter().zip(vb).map(|(g, v)| g / v).collect();
                        self.accumulate(&mut grads, *a, &g, 1.0);
                    }
                    if self.needs(*b) {
                        let va = &self.nodes[a.0].value.data;
                        let g: Vec<f64> = grad
                            .data
                            .iter()
                            .zip(va.iter().zip(vb))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect();
                        self.accumulate(&mut grads, *b, &g, 1.0);
                    }
                }
                Op::Affine(a, k) => {
                    self.accumulate(&mut grads, *a, &grad.data, *k);
                }
                Op::Relu(a) => {
                    let g: Vec<f64> = grad
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::LeakyRelu(a, alpha) => {
                    let g: Vec<f64> = grad
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| if *y > 0.0 { *g } else { g * alpha })
                        .collect();
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::Tanh(a) => {
                    let g: Vec<f64> = grad
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::Sigmoid(a) => {
                    let g: Vec<f64> = grad
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::Sqrt(a) => {
                    let g: Vec<f64> = grad
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| g * 0.5 / y)
                        .collect();
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::Linear { w, x, b } => {
                    let tw = &self.nodes[w.0].value;
                    let tx = &self.nodes[x.0].value;
                    let (m, n) = (tw.shape[0], tw.shape[1]);
                    if self.needs(*w) {
                        let mut gw = vec![0.0; m * n];
                        for i in 0..m {
                            let gi = grad.data[i];
                            for j in 0..n {
                                gw[i * n + j] = gi * tx.data[j];
                            }
                        }
                        self.accumulate(&mut grads, *w, &gw, 1.0);
                    }
                    if self.needs(*x) {
                        let mut gx = vec![0.0; n];
                        for i in 0..m {
                            let gi = grad.data[i];
                            for j in 0..n {
                                gx[j] += gi * tw.data[i * n + j];
                            }
                        }
                        self.accumulate(&mut grads, *x, &gx, 1.0);
                    }
                    if self.needs(*b) {
                        self.accumulate(&mut grads, *b, &grad.data, 1.0);
                    }
                }
                Op::Conv3d { x, k, b, stride, pad } => {
                    self.conv3d_backward(&mut grads, &grad, *x, *k, *b, *stride, *pad);
                }
                Op::Conv3dT { x, k, b, stride, pad } => {
                    self.conv3d_t_backward(&mut grads, &grad, *x, *k, *b, *stride, *pad);
                }
                Op::ConcatChannels(a, b) => {
                    let na = self.nodes[a.0].value.numel();
                    self.accumulate(&mut grads, *a, &grad.data[..na], 1.0);
                    self.accumulate(&mut grads, *b, &grad.data[na..], 1.0);
                }
                Op::StackSlices(slices) => {
                    let out_shape = &node.value.shape;
                    let (c, t_len, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
                    for (t_idx, s) in slices.iter().enumerate() {
                        if !self.needs(*s) {
                            continue;
                        }
                        let mut g = vec![0.0; c * h * w];
                        for ch in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    g[(ch * h + y) * w + x] =
                                        grad.data[((ch * t_len + t_idx) * h + y) * w + x];
                                }
                            }
                        }
                        self.accumulate(&mut grads, *s, &g, 1.0);
                    }
                }
                Op::GlobalAvgPool(a) => {
                    let ta = &self.nodes[a.0].value;
                    let c = ta.shape[0];
                    let spatial = ta.numel() / c;
                    let mut g = vec![0.0; ta.numel()];
                    for ch in 0..c {
                        let gv = grad.data[ch] / spatial as f64;
                        for v in &mut g[ch * spatial..(ch + 1) * spatial] {
                            *v = gv;
                        }
                    }
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::ChannelScale { x, s } => {
                    let tx = &self.nodes[x.0].value;
                    let ts = &self.nodes[s.0].value;
                    let c = tx.shape[0];
                    let spatial = tx.numel() / c;
                    if self.needs(*x) {
                        let mut g = grad.data.clone();
                        for ch in 0..c {
                            let gate = ts.data[ch];
                            for v in &mut g[ch * spatial..(ch + 1) * spatial] {
                                *v *= gate;
                            }
                        }
                        self.accumulate(&mut grads, *x, &g, 1.0);
                    }
                    if self.needs(*s) {
                        let mut g = vec![0.0; c];
                        for (ch, gv) in g.iter_mut().enumerate() {
                            *gv = grad.data[ch * spatial..(ch + 1) * spatial]
                                .iter()
                                .zip(&tx.data[ch * spatial..(ch + 1) * spatial])
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                        self.accumulate(&mut grads, *s, &g, 1.0);
                    }
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.numel();
                    let g = vec![grad.data[0]; n];
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.numel();
                    let g = vec![grad.data[0] / n as f64; n];
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
                Op::Reshape(a) => {
                    self.accumulate(&mut grads, *a, &grad.data, 1.0);
                }
                Op::IndexLastAxis(a, idx) => {
                    let ta = &self.nodes[a.0].value;
                    let l = *ta.shape.last().unwrap();
                    let mut g = vec![0.0; ta.numel()];
                    for (j, gv) in grad.data.iter().enumerate() {
                        g[j * l + idx] = *gv;
                    }
                    self.accumulate(&mut grads, *a, &g, 1.0);
                }
            }
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, add: &[f64], scale: f64) {
        if !self.needs(target) {
            return;
        }
        let entry = grads[target.0].get_or_insert_with(|| Tensor::zeros(self.value(target).shape.clone()));
        for (g, a) in entry.data.iter_mut().zip(add) {
            *g += scale * a;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv3d_backward(
        &self,
        grads: &mut [Option<Tensor>],
        grad: &Tensor,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) {
        let tx = &self.nodes[x.0].value;
        let tk = &self.nodes[k.0].value;
        let (ci, d, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (co, _, kd, kh, kw) = (tk.shape[0], tk.shape[1], tk.shape[2], tk.shape[3], tk.shape[4]);
        let (od, oh, ow) = (grad.shape[1], grad.shape[2], grad.shape[3]);
        let needs_x = self.needs(x);
        let needs_k = self.needs(k);
        let mut gx = if needs_x { vec![0.0; tx.numel()] } else { Vec::new() };
        let mut gk = if needs_k { vec![0.0; tk.numel()] } else { Vec::new() };

        for c_out in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let go = grad.data[((c_out * od + z) * oh + y) * ow + xx];
                        if go == 0.0 {
                            continue;
                        }
                        for c_in in 0..ci {
                            for zk in 0..kd {
                                let iz = (z * stride[0] + zk) as i64 - pad[0] as i64;
                                if iz < 0 || iz >= d as i64 {
                                    continue;
                                }
                                for yk in 0..kh {
                                    let iy = (y * stride[1] + yk) as i64 - pad[1] as i64;
                                    if iy < 0 || iy >= h as i64 {
                                        continue;
                                    }
                                    for xk in 0..kw {
                                        let ix = (xx * stride[2] + xk) as i64 - pad[2] as i64;
                                        if ix < 0 || ix >= w as i64 {
                                            continue;
                                        }
                                        let xi = ((c_in * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                        let ki = (((c_out * ci + c_in) * kd + zk) * kh + yk) * kw + xk;
                                        if needs_x {
                                            gx[xi] += go * tk.data[ki];
                                        }
                                        if needs_k {
                                            gk[ki] += go * tx.data[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if needs_x {
            self.accumulate(grads, x, &gx, 1.0);
        }
        if needs_k {
            self.accumulate(grads, k, &gk, 1.0);
        }
        if self.needs(b) {
            let mut gb = vec![0.0; co];
            for (c_out, gbv) in gb.iter_mut().enumerate() {
                *gbv = grad.data[c_out * od * oh * ow..(c_out + 1) * od * oh * ow].iter().sum();
            }
            self.accumulate(grads, b, &gb, 1.0);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv3d_t_backward(
        &self,
        grads: &mut [Option<Tensor>],
        grad: &Tensor,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) {
        let tx = &self.nodes[x.0].value;
        let tk = &self.nodes[k.0].value;
        let (ci, d, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (_, co, kd, kh, kw) = (tk.shape[0], tk.shape[1], tk.shape[2], tk.shape[3], tk.shape[4]);
        let (od, oh, ow) = (grad.shape[1], grad.shape[2], grad.shape[3]);
        let needs_x = self.needs(x);
        let needs_k = self.needs(k);
        let mut gx = if needs_x { vec![0.0; tx.numel()] } else { Vec::new() };
        let mut gk = if needs_k { vec![0.0; tk.numel()] } else { Vec::new() };

        for c_in in 0..ci {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let xi = ((c_in * d + z) * h + y) * w + xx;
                        let xv = tx.data[xi];
                        let mut gxi = 0.0;
                        for c_out in 0..co {
                            for zk in 0..kd {
                                let oz = (z * stride[0] + zk) as i64 - pad[0] as i64;
                                if oz < 0 || oz >= od as i64 {
                                    continue;
                                }
                                for yk in 0..kh {
                                    let oy = (y * stride[1] + yk) as i64 - pad[1] as i64;
                                    if oy < 0 || oy >= oh as i64 {
                                        continue;
                                    }
                                    for xk in 0..kw {
                                        let ox = (xx * stride[2] + xk) as i64 - pad[2] as i64;
                                        if ox < 0 || ox >= ow as i64 {
                                            continue;
                                        }
                                        let ki = (((c_in * co + c_out) * kd + zk) * kh + yk) * kw + xk;
                                        let oi = ((c_out * od + oz as usize) * oh + oy as usize) * ow + ox as usize;
                                        let go = grad.data[oi];
                                        if needs_x {
                                            gxi += go * tk.data[ki];
                                        }
                                        if needs_k {
                                            gk[ki] += go * xv;
                                        }
                                    }
                                }
                            }
                        }
                        if needs_x {
                            gx[xi] = gxi;
                        }
                    }
                }
            }
        }
        if needs_x {
            self.accumulate(grads, x, &gx, 1.0);
        }
        if needs_k {
            self.accumulate(grads, k, &gk, 1.0);
        }
        if self.needs(b) {
            let mut gb = vec![0.0; co];
            for (c_out, gbv) in gb.iter_mut().enumerate() {
                *gbv = grad.data[c_out * od * oh * ow..(c_out + 1) * od * oh * ow].iter().sum();
            }
            self.accumulate(grads, b, &gb, 1.0);
        }
    }
}
