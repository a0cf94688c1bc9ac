//! A small reverse-mode autodiff tape over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order; [`Graph::backward`] walks them in
//! reverse. Values of every node are retained until the graph is dropped.

mod conv;

use crate::math;
use crate::tensor::Tensor;
use conv::{col2im, gemm, im2col, ConvGeom};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Separable linear resampling weights: each output row (column) is a
/// weighted sum of input rows (columns).
#[derive(Clone, Debug)]
pub struct Resample {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub in_h: usize,
    pub in_w: usize,
}

impl Resample {
    /// Bilinear upsampling from a coarse grid whose cells cover `factor`
    /// pixels. Edge samples clamp to the border cells, so every output is a
    /// convex combination of inputs.
    pub fn bilinear(in_h: usize, in_w: usize, out_h: usize, out_w: usize, factor: usize) -> Self {
        fn axis(n_in: usize, n_out: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
            (0..n_out)
                .map(|i| {
                    let pos = (i as f64 + 0.5) / factor as f64 - 0.5;
                    let pos = pos.clamp(0.0, (n_in - 1) as f64);
                    let i0 = pos.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    let t = pos - i0 as f64;
                    if i1 == i0 || t == 0.0 {
                        vec![(i0, 1.0)]
                    } else {
                        vec![(i0, 1.0 - t), (i1, t)]
                    }
                })
                .collect()
        }
        Resample {
            rows: axis(in_h, out_h, factor),
            cols: axis(in_w, out_w, factor),
            in_h,
            in_w,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.dims();
        assert_eq!(
            (h, w),
            (self.in_h, self.in_w),
            "resample input size mismatch"
        );
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let src = x.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut dst[p * oh * ow..(p + 1) * oh * ow];
            for (oy, rw) in self.rows.iter().enumerate() {
                for (ox, cw) in self.cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(iy, wy) in rw {
                        for &(ix, wx) in cw {
                            acc += wy * wx * s[iy * w + ix];
                        }
                    }
                    d[oy * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn adjoint(&self, g: &Tensor) -> Tensor {
        let [n, c, oh, ow] = g.dims();
        let (h, w) = (self.in_h, self.in_w);
        let mut out = Tensor::zeros([n, c, h, w]);
        let src = g.data();
        let dst = out.data_mut();
        for p in 0..n * c {
            let s = &src[p * oh * ow..(p + 1) * oh * ow];
            let d = &mut dst[p * h * w..(p + 1) * h * w];
            for (oy, rw) in self.rows.iter().enumerate() {
                for (ox, cw) in self.cols.iter().enumerate() {
                    let v = s[oy * ow + ox];
                    for &(iy, wy) in rw {
                        for &(ix, wx) in cw {
                            d[iy * w + ix] += wy * wx * v;
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Index of the source pixel for padded coordinate `i` under symmetric
/// reflection without edge repetition.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

enum Op {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MulBcastC(Var, Var),
    BcastChannels(Var),
    MeanChannels(Var),
    Square(Var),
    Exp(Var),
    Silu(Var),
    Softplus(Var),
    RoundSte(Var),
    Upsample2(Var),
    AvgPool(Var, usize),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    GaussBits(Var, Var),
    Sum(Var),
    PadReflect(Var, Pad),
    Crop(Var),
    Resample(Var, Box<Resample>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    track_params: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of every parameter used in the graph, keyed by parameter index.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(p, node)| self.grads[node].as_ref().map(|g| (p, g)))
    }
}

impl Graph {
    /// A graph that records parameter gradients when `track_params` is set.
    pub fn new(track_params: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            track_params,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter `idx`; repeated requests share a node.
    pub fn param(&mut self, idx: usize, value: &Tensor) -> Var {
        if idx >= self.param_vars.len() {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(value.clone(), Op::Param, self.track_params);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, ci, h, wd] = xv.dims();
        let [co, wci, k, k2] = wv.dims();
        assert_eq!(ci, wci, "conv input channels");
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(self.value(b).dims(), [1, co, 1, 1], "conv bias shape");
        let g = ConvGeom::new(ci, h, wd, k, stride, pad);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let mut out = Tensor::zeros([n, co, g.ho, g.wo]);
        let mut col = vec![0.0; rows * cols];
        let bias = self.value(b).data().to_vec();
        {
            let od = out.data_mut();
            for bi in 0..n {
                let img = &xv.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                im2col(img, &g, &mut col);
                let dst = &mut od[bi * co * cols..(bi + 1) * co * cols];
                for (c, chunk) in dst.chunks_mut(cols).enumerate() {
                    chunk.fill(bias[c]);
                }
                gemm(co, rows, cols, wv.data(), false, &col, false, dst, 1.0);
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        )
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let v = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::Offset(a), ng)
    }

    /// `a[N,C,H,W] * b[N,1,H,W]` with `b` broadcast over channels.
    pub fn mul_bcast_c(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let [n, c, h, w] = av.dims();
        assert_eq!(bv.dims(), [n, 1, h, w], "mul_bcast_c shape");
        let plane = h * w;
        let mut out = av.clone();
        for bi in 0..n {
            let bs = &bv.data()[bi * plane..(bi + 1) * plane];
            for ch in 0..c {
                let o = &mut out.data_mut()[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
                for (x, y) in o.iter_mut().zip(bs) {
                    *x *= y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MulBcastC(a, b), ng)
    }

    /// Broadcast `[1, C, 1, 1]` to `[n, C, h, w]`.
    pub fn bcast_channels(&mut self, p: Var, n: usize, h: usize, w: usize) -> Var {
        let pv = self.value(p);
        let [one, c, ph, pw] = pv.dims();
        assert_eq!((one, ph, pw), (1, 1, 1), "bcast_channels expects [1,C,1,1]");
        let mut out = Tensor::zeros([n, c, h, w]);
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * h * w;
                out.data_mut()[base..base + h * w].fill(pv.data()[ch]);
            }
        }
        let ng = self.ng(p);
        self.push(out, Op::BcastChannels(p), ng)
    }

    pub fn mean_channels(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let [n, c, h, w] = av.dims();
        let plane = h * w;
        let mut out = Tensor::zeros([n, 1, h, w]);
        for bi in 0..n {
            let o = &mut out.data_mut()[bi * plane..(bi + 1) * plane];
            for ch in 0..c {
                let s = &av.data()[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
                for (x, y) in o.iter_mut().zip(s) {
                    *x += y;
                }
            }
            for x in o.iter_mut() {
                *x /= c as f64;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MeanChannels(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * math::sigmoid(x), Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    /// Rounding with an identity backward pass.
    pub fn round_ste(&mut self, a: Var) -> Var {
        self.unary(a, f64::round, Op::RoundSte(a))
    }

    pub fn upsample2(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let [n, c, h, w] = av.dims();
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for p in 0..n * c {
            let s = &av.data()[p * h * w..(p + 1) * h * w];
            let d = &mut out.data_mut()[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for x in 0..2 * w {
                    d[y * 2 * w + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Upsample2(a), ng)
    }

    pub fn avg_pool(&mut self, a: Var, f: usize) -> Var {
        let av = self.value(a);
        let [n, c, h, w] = av.dims();
        assert!(
            h % f == 0 && w % f == 0,
            "avg_pool: {h}x{w} not divisible by {f}"
        );
        let (oh, ow) = (h / f, w / f);
        let inv = 1.0 / (f * f) as f64;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let s = &av.data()[p * h * w..(p + 1) * h * w];
            let d = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    d[(y / f) * ow + x / f] += s[y * w + x] * inv;
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::AvgPool(a, f), ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let [n, _, h, w] = self.value(parts[0]).dims();
        let total_c: usize = parts.iter().map(|&p| self.value(p).c()).sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for bi in 0..n {
            for &p in parts {
                let pv = self.value(p);
                let [pn, pc, ph, pw] = pv.dims();
                assert_eq!((pn, ph, pw), (n, h, w), "concat shape mismatch");
                out.extend_from_slice(&pv.data()[bi * pc * plane..(bi + 1) * pc * plane]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::from_vec([n, total_c, h, w], out),
            Op::Concat(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).channels(start, len);
        let ng = self.ng(x);
        self.push(v, Op::Slice { x, start }, ng)
    }

    /// Per-element bits `-log2 P(bin at s)` under a zero-mean Gaussian with
    /// scale `st`; the probability is floored at 2^-16.
    pub fn gauss_bits(&mut self, s: Var, st: Var) -> Var {
        let v = self
            .value(s)
            .zip_map(self.value(st), |s, st| math::bits_of(math::bin_prob(s, st)));
        let ng = self.ng(s) || self.ng(st);
        self.push(v, Op::GaussBits(s, st), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn pad_reflect(&mut self, a: Var, pad: Pad) -> Var {
        let av = self.value(a);
        let [n, c, h, w] = av.dims();
        let (oh, ow) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let s = &av.data()[p * h * w..(p + 1) * h * w];
            let d = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                let sy = reflect_index(y as isize - pad.top as isize, h);
                for x in 0..ow {
                    let sx = reflect_index(x as isize - pad.left as isize, w);
                    d[y * ow + x] = s[sy * w + sx];
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::PadReflect(a, pad), ng)
    }

    /// Top-left `h × w` crop.
    pub fn crop(&mut self, a: Var, h: usize, w: usize) -> Var {
        let av = self.value(a);
        let [n, c, ih, iw] = av.dims();
        assert!(h <= ih && w <= iw, "crop larger than input");
        let mut out = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..h {
                let s = &av.data()[p * ih * iw + y * iw..p * ih * iw + y * iw + w];
                out.data_mut()[p * h * w + y * w..p * h * w + (y + 1) * w].copy_from_slice(s);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Crop(a), ng)
    }

    pub fn resample(&mut self, a: Var, r: Resample) -> Var {
        let v = r.apply(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::Resample(a, Box::new(r)), ng)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(p, v)| v.map(|v| (p, v.0)))
            .collect();
        Grads { grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = self.value(x);
                let wv = self.value(w);
                let [n, ci, h, wd] = xv.dims();
                let [co, _, k, _] = wv.dims();
                let geom = ConvGeom::new(ci, h, wd, k, stride, pad);
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let mut col = vec![0.0; rows * cols];
                let mut dw = Tensor::zeros(wv.dims());
                let mut dx = Tensor::zeros(xv.dims());
                let mut dcol = vec![0.0; rows * cols];
                for bi in 0..n {
                    let gout = &g.data()[bi * co * cols..(bi + 1) * co * cols];
                    if self.ng(w) {
                        let img = &xv.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                        im2col(img, &geom, &mut col);
                        gemm(co, cols, rows, gout, false, &col, true, dw.data_mut(), 1.0);
                    }
                    if self.ng(x) {
                        gemm(rows, co, cols, wv.data(), true, gout, false, &mut dcol, 0.0);
                        let dimg = &mut dx.data_mut()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                        col2im(&dcol, &geom, dimg);
                    }
                }
                if self.ng(b) {
                    let mut db = Tensor::zeros([1, co, 1, 1]);
                    for bi in 0..n {
                        for c in 0..co {
                            let s: f64 = g.data()[(bi * co + c) * cols..(bi * co + c + 1) * cols]
                                .iter()
                                .sum();
                            db.data_mut()[c] += s;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
                if self.ng(w) {
                    self.accumulate(grads, w, dw);
                }
                if self.ng(x) {
                    self.accumulate(grads, x, dx);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                if self.ng(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |g, y| g * y));
                }
                if self.ng(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |g, x| g * x));
                }
            }
            &Op::Div(a, b) => {
                let bv = self.value(b);
                if self.ng(a) {
                    self.accumulate(grads, a, g.zip_map(bv, |g, y| g / y));
                }
                if self.ng(b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = node.value.zip_map(bv, |q, y| -q / y);
                    self.accumulate(grads, b, g.zip_map(&q, |g, d| g * d));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|v| v * s)),
            &Op::Offset(a) => self.accumulate(grads, a, g.clone()),
            &Op::MulBcastC(a, b) => {
                let av = self.value(a);
                let bv = self.value(b);
                let [n, c, h, w] = av.dims();
                let plane = h * w;
                if self.ng(a) {
                    let mut da = g.clone();
                    for bi in 0..n {
                        let bs = &bv.data()[bi * plane..(bi + 1) * plane];
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            for (x, y) in da.data_mut()[base..base + plane].iter_mut().zip(bs) {
                                *x *= y;
                            }
                        }
                    }
                    self.accumulate(grads, a, da);
                }
                if self.ng(b) {
                    let mut db = Tensor::zeros(bv.dims());
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            let d = &mut db.data_mut()[bi * plane..(bi + 1) * plane];
                            for i in 0..plane {
                                d[i] += g.data()[base + i] * av.data()[base + i];
                            }
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::BcastChannels(p) => {
                let [n, c, h, w] = g.dims();
                let mut dp = Tensor::zeros([1, c, 1, 1]);
                for bi in 0..n {
                    for ch in 0..c {
                        let base = (bi * c + ch) * h * w;
                        dp.data_mut()[ch] += g.data()[base..base + h * w].iter().sum::<f64>();
                    }
                }
                self.accumulate(grads, p, dp);
            }
            &Op::MeanChannels(a) => {
                let [n, c, h, w] = self.value(a).dims();
                let plane = h * w;
                let mut da = Tensor::zeros([n, c, h, w]);
                let inv = 1.0 / c as f64;
                for bi in 0..n {
                    let gs = &g.data()[bi * plane..(bi + 1) * plane];
                    for ch in 0..c {
                        let base = (bi * c + ch) * plane;
                        for (d, &gv) in da.data_mut()[base..base + plane].iter_mut().zip(gs) {
                            *d = gv * inv;
                        }
                    }
                }
                self.accumulate(grads, a, da);
            }
            &Op::Square(a) => {
                let d = g.zip_map(self.value(a), |g, x| 2.0 * g * x);
                self.accumulate(grads, a, d);
            }
            &Op::Exp(a) => {
                let d = g.zip_map(&node.value, |g, y| g * y);
                self.accumulate(grads, a, d);
            }
            &Op::Silu(a) => {
                let d = g.zip_map(self.value(a), |g, x| {
                    let s = math::sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, a, d);
            }
            &Op::Softplus(a) => {
                let d = g.zip_map(self.value(a), |g, x| g * math::sigmoid(x));
                self.accumulate(grads, a, d);
            }
            &Op::RoundSte(a) => self.accumulate(grads, a, g.clone()),
            &Op::Upsample2(a) => {
                let [n, c, h, w] = self.value(a).dims();
                let mut da = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    let s = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let d = &mut da.data_mut()[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            d[(y / 2) * w + x / 2] += s[y * 2 * w + x];
                        }
                    }
                }
                self.accumulate(grads, a, da);
            }
            &Op::AvgPool(a, f) => {
                let [n, c, h, w] = self.value(a).dims();
                let (oh, ow) = (h / f, w / f);
                let inv = 1.0 / (f * f) as f64;
                let mut da = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    let s = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut da.data_mut()[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for x in 0..w {
                            d[y * w + x] = s[(y / f) * ow + x / f] * inv;
                        }
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).c();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.channels(offset, c));
                    }
                    offset += c;
                }
            }
            &Op::Slice { x, start } => {
                let xv = self.value(x);
                let [n, c, h, w] = xv.dims();
                let len = g.c();
                let plane = h * w;
                let mut dx = Tensor::zeros([n, c, h, w]);
                for bi in 0..n {
                    let src = &g.data()[bi * len * plane..(bi + 1) * len * plane];
                    let base = (bi * c + start) * plane;
                    dx.data_mut()[base..base + len * plane].copy_from_slice(src);
                }
                self.accumulate(grads, x, dx);
            }
            &Op::GaussBits(s, st) => {
                let sv = self.value(s);
                let stv = self.value(st);
                let mut ds = Tensor::zeros(sv.dims());
                let mut dst = Tensor::zeros(sv.dims());
                let scale = -math::inv_ln2();
                for i in 0..sv.len() {
                    let (p, dps, dpst) = math::bin_prob_grad(sv.data()[i], stv.data()[i]);
                    // Below the floor the gradient still pushes probability up.
                    let dbits_dp = scale / p.max(math::PROB_FLOOR);
                    ds.data_mut()[i] = g.data()[i] * dbits_dp * dps;
                    dst.data_mut()[i] = g.data()[i] * dbits_dp * dpst;
                }
                self.accumulate(grads, s, ds);
                self.accumulate(grads, st, dst);
            }
            &Op::Sum(a) => {
                let gv = g.data()[0];
                let d = Tensor::full(self.value(a).dims(), gv);
                self.accumulate(grads, a, d);
            }
            &Op::PadReflect(a, pad) => {
                let [n, c, h, w] = self.value(a).dims();
                let [_, _, oh, ow] = g.dims();
                let mut da = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    let s = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut da.data_mut()[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        let sy = reflect_index(y as isize - pad.top as isize, h);
                        for x in 0..ow {
                            let sx = reflect_index(x as isize - pad.left as isize, w);
                            d[sy * w + sx] += s[y * ow + x];
                        }
                    }
                }
                self.accumulate(grads, a, da);
            }
            &Op::Crop(a) => {
                let [n, c, ih, iw] = self.value(a).dims();
                let [_, _, h, w] = g.dims();
                let mut da = Tensor::zeros([n, c, ih, iw]);
                for p in 0..n * c {
                    for y in 0..h {
                        let src = &g.data()[p * h * w + y * w..p * h * w + (y + 1) * w];
                        let base = p * ih * iw + y * iw;
                        da.data_mut()[base..base + w].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::Resample(a, r) => {
                let d = r.adjoint(g);
                self.accumulate(grads, *a, d);
            }
        }
    }
}
