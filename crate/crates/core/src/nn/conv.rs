//! Convolution, pooling and channel ops on [B, C, H, W] tensors.
//!
//! conv2d runs as im2col + one dgemm over the whole batch; the column matrix
//! is rebuilt in the backward pass instead of being kept alive.

use std::rc::Rc;

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use super::tape::{accumulate, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn unit(padding: usize) -> Self {
        ConvSpec {
            stride: 1,
            padding,
            dilation: 1,
        }
    }

    fn out_side(&self, input: usize, k: usize) -> usize {
        (input + 2 * self.padding - self.dilation * (k - 1) - 1) / self.stride + 1
    }
}

fn im2col(x: &ArrayD<f64>, kh: usize, kw: usize, spec: &ConvSpec) -> (Array2<f64>, usize, usize) {
    let (b, c, h, w) = dims4(x);
    let oh = spec.out_side(h, kh);
    let ow = spec.out_side(w, kw);
    let mut col = Array2::<f64>::zeros((c * kh * kw, b * oh * ow));
    let xs = x.as_slice().expect("standard layout");
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * spec.stride + ki * spec.dilation) as isize
                            - spec.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * spec.stride + kj * spec.dilation) as isize
                                - spec.padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            col[(row, (bi * oh + oi) * ow + oj)] =
                                xs[base + ii as usize * w + jj as usize];
                        }
                    }
                }
            }
        }
    }
    (col, oh, ow)
}

fn col2im(
    dcol: &Array2<f64>,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: &ConvSpec,
) -> ArrayD<f64> {
    let oh = spec.out_side(h, kh);
    let ow = spec.out_side(w, kw);
    let mut dx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
    let ds = dx.as_slice_mut().expect("standard layout");
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * spec.stride + ki * spec.dilation) as isize
                            - spec.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * spec.stride + kj * spec.dilation) as isize
                                - spec.padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            ds[base + ii as usize * w + jj as usize] +=
                                dcol[(row, (bi * oh + oi) * ow + oj)];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn dims4(x: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    debug_assert_eq!(s.len(), 4);
    (s[0], s[1], s[2], s[3])
}

impl Tape {
    /// Full convolution: x [B,C,H,W] ⋆ w [F,C,kh,kw] (+ optional bias [F]).
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let dx = self.view(x);
        let dw = self.view(w);
        let (b, c, _h, _wd) = dims4(&dx);
        let ws = dw.shape();
        let (f, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        debug_assert_eq!(c, wc, "channel mismatch");
        let (col, oh, ow) = im2col(&dx, kh, kw, &spec);
        let w2 = dw
            .view()
            .into_shape_with_order((f, c * kh * kw))
            .unwrap()
            .to_owned();
        let y2 = w2.dot(&col); // [F, B*OH*OW]
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, f, oh, ow]));
        {
            let os = out.as_slice_mut().unwrap();
            for fi in 0..f {
                for bi in 0..b {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            os[((bi * f + fi) * oh + oi) * ow + oj] =
                                y2[(fi, (bi * oh + oi) * ow + oj)];
                        }
                    }
                }
            }
        }
        let dx_rc = Rc::new(dx);
        let dw_rc = Rc::new(dw);
        let (xid, wid) = (x.id(), w.id());
        let conv = self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let (b, c, h, iw) = dims4(&dx_rc);
                let f = dw_rc.shape()[0];
                let (kh, kw) = (dw_rc.shape()[2], dw_rc.shape()[3]);
                let oh = spec.out_side(h, kh);
                let ow = spec.out_side(iw, kw);
                // Permute grad to [F, B*OH*OW].
                let mut g2 = Array2::<f64>::zeros((f, b * oh * ow));
                let gs = g.as_slice().unwrap();
                for fi in 0..f {
                    for bi in 0..b {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                g2[(fi, (bi * oh + oi) * ow + oj)] =
                                    gs[((bi * f + fi) * oh + oi) * ow + oj];
                            }
                        }
                    }
                }
                let (col, _, _) = im2col(&dx_rc, kh, kw, &spec);
                let dw2 = g2.dot(&col.t()); // [F, C*kh*kw]
                let dwg = dw2
                    .into_shape_with_order(IxDyn(&[f, c, kh, kw]))
                    .unwrap();
                let w2 = dw_rc
                    .view()
                    .into_shape_with_order((f, c * kh * kw))
                    .unwrap()
                    .to_owned();
                let dcol = w2.t().dot(&g2); // [C*kh*kw, B*OH*OW]
                let dxg = col2im(&dcol, b, c, h, iw, kh, kw, &spec);
                accumulate(grads, wid, dwg);
                accumulate(grads, xid, dxg);
            })),
        );
        match bias {
            Some(bv) => self.add_channel_bias(conv, bv),
            None => conv,
        }
    }

    /// Depthwise k×k convolution: x [B,C,H,W] with per-channel kernels
    /// w [C,kh,kw].
    pub fn depthwise_conv2d(&self, x: Var, w: Var, spec: ConvSpec) -> Var {
        let dx = self.view(x);
        let dw = self.view(w);
        let (b, c, h, wd) = dims4(&dx);
        let ws = dw.shape();
        debug_assert_eq!(ws[0], c);
        let (kh, kw) = (ws[1], ws[2]);
        let oh = spec.out_side(h, kh);
        let ow = spec.out_side(wd, kw);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
        {
            let xs = dx.as_slice().unwrap();
            let kws = dw.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let xbase = (bi * c + ci) * h * wd;
                    let kbase = ci * kh * kw;
                    let obase = (bi * c + ci) * oh * ow;
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let mut acc_v = 0.0;
                            for ki in 0..kh {
                                let ii = (oi * spec.stride + ki * spec.dilation) as isize
                                    - spec.padding as isize;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                for kj in 0..kw {
                                    let jj = (oj * spec.stride + kj * spec.dilation) as isize
                                        - spec.padding as isize;
                                    if jj < 0 || jj >= wd as isize {
                                        continue;
                                    }
                                    acc_v += xs[xbase + ii as usize * wd + jj as usize]
                                        * kws[kbase + ki * kw + kj];
                                }
                            }
                            os[obase + oi * ow + oj] = acc_v;
                        }
                    }
                }
            }
        }
        let dx_rc = Rc::new(dx);
        let dw_rc = Rc::new(dw);
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let (b, c, h, wd) = dims4(&dx_rc);
                let (kh, kw) = (dw_rc.shape()[1], dw_rc.shape()[2]);
                let oh = spec.out_side(h, kh);
                let ow = spec.out_side(wd, kw);
                let xs = dx_rc.as_slice().unwrap();
                let kws = dw_rc.as_slice().unwrap();
                let gs = g.as_slice().unwrap();
                let mut dxg = ArrayD::<f64>::zeros(dx_rc.raw_dim());
                let mut dwg = ArrayD::<f64>::zeros(dw_rc.raw_dim());
                {
                    let dxs = dxg.as_slice_mut().unwrap();
                    let dws = dwg.as_slice_mut().unwrap();
                    for bi in 0..b {
                        for ci in 0..c {
                            let xbase = (bi * c + ci) * h * wd;
                            let kbase = ci * kh * kw;
                            let obase = (bi * c + ci) * oh * ow;
                            for oi in 0..oh {
                                for oj in 0..ow {
                                    let gv = gs[obase + oi * ow + oj];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ki in 0..kh {
                                        let ii = (oi * spec.stride + ki * spec.dilation) as isize
                                            - spec.padding as isize;
                                        if ii < 0 || ii >= h as isize {
                                            continue;
                                        }
                                        for kj in 0..kw {
                                            let jj = (oj * spec.stride + kj * spec.dilation)
                                                as isize
                                                - spec.padding as isize;
                                            if jj < 0 || jj >= wd as isize {
                                                continue;
                                            }
                                            let xi = xbase + ii as usize * wd + jj as usize;
                                            dxs[xi] += gv * kws[kbase + ki * kw + kj];
                                            dws[kbase + ki * kw + kj] += gv * xs[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(grads, x.id(), dxg);
                accumulate(grads, w.id(), dwg);
            })),
        )
    }

    /// Add a per-channel bias [C] to x [B,C,H,W].
    pub fn add_channel_bias(&self, x: Var, bias: Var) -> Var {
        let dx = self.view(x);
        let db = self.view(bias);
        let (b, c, h, w) = dims4(&dx);
        debug_assert_eq!(db.len(), c);
        let mut out = (*dx).clone();
        {
            let os = out.as_slice_mut().unwrap();
            let bs = db.as_slice().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * h * w;
                    for i in 0..h * w {
                        os[base + i] += bs[ci];
                    }
                }
            }
        }
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                accumulate(grads, x.id(), g.clone());
                let (b, c, h, w) = dims4(g);
                let gs = g.as_slice().unwrap();
                let mut gb = ArrayD::<f64>::zeros(IxDyn(&[c]));
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * h * w;
                        let mut s = 0.0;
                        for i in 0..h * w {
                            s += gs[base + i];
                        }
                        gb[[ci]] += s;
                    }
                }
                accumulate(grads, bias.id(), gb);
            })),
        )
    }

    /// 3×3-style max pool; padded cells never win.
    pub fn maxpool2d(&self, x: Var, k: usize, spec: ConvSpec) -> Var {
        let dx = self.view(x);
        let (b, c, h, w) = dims4(&dx);
        let oh = spec.out_side(h, k);
        let ow = spec.out_side(w, k);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
        let mut argmax = vec![0u32; b * c * oh * ow];
        {
            let xs = dx.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let xbase = (bi * c + ci) * h * w;
                    let obase = (bi * c + ci) * oh * ow;
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0u32;
                            for ki in 0..k {
                                let ii = (oi * spec.stride + ki) as isize - spec.padding as isize;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                for kj in 0..k {
                                    let jj =
                                        (oj * spec.stride + kj) as isize - spec.padding as isize;
                                    if jj < 0 || jj >= w as isize {
                                        continue;
                                    }
                                    let v = xs[xbase + ii as usize * w + jj as usize];
                                    if v > best {
                                        best = v;
                                        best_idx = (ii as usize * w + jj as usize) as u32;
                                    }
                                }
                            }
                            os[obase + oi * ow + oj] = best;
                            argmax[obase + oi * ow + oj] = best_idx;
                        }
                    }
                }
            }
        }
        let dim = dx.raw_dim();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let mut dxg = ArrayD::<f64>::zeros(dim.clone());
                let gs = g.as_slice().unwrap();
                let dxs = dxg.as_slice_mut().unwrap();
                let (gb, gc, goh, gow) = dims4(g);
                let hw = dim[2] * dim[3];
                for bi in 0..gb {
                    for ci in 0..gc {
                        let obase = (bi * gc + ci) * goh * gow;
                        let xbase = (bi * gc + ci) * hw;
                        for i in 0..goh * gow {
                            dxs[xbase + argmax[obase + i] as usize] += gs[obase + i];
                        }
                    }
                }
                accumulate(grads, x.id(), dxg);
            })),
        )
    }

    /// Average pool counting only in-bounds cells.
    pub fn avgpool2d(&self, x: Var, k: usize, spec: ConvSpec) -> Var {
        let dx = self.view(x);
        let (b, c, h, w) = dims4(&dx);
        let oh = spec.out_side(h, k);
        let ow = spec.out_side(w, k);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
        {
            let xs = dx.as_slice().unwrap();
            let os = out.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let xbase = (bi * c + ci) * h * w;
                    let obase = (bi * c + ci) * oh * ow;
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let mut s = 0.0;
                            let mut n = 0usize;
                            for ki in 0..k {
                                let ii = (oi * spec.stride + ki) as isize - spec.padding as isize;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                for kj in 0..k {
                                    let jj =
                                        (oj * spec.stride + kj) as isize - spec.padding as isize;
                                    if jj < 0 || jj >= w as isize {
                                        continue;
                                    }
                                    s += xs[xbase + ii as usize * w + jj as usize];
                                    n += 1;
                                }
                            }
                            os[obase + oi * ow + oj] = s / n as f64;
                        }
                    }
                }
            }
        }
        let dim = dx.raw_dim();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let (gb, gc, goh, gow) = dims4(g);
                let h = dim[2];
                let w = dim[3];
                let mut dxg = ArrayD::<f64>::zeros(dim.clone());
                let gs = g.as_slice().unwrap();
                let dxs = dxg.as_slice_mut().unwrap();
                for bi in 0..gb {
                    for ci in 0..gc {
                        let xbase = (bi * gc + ci) * h * w;
                        let obase = (bi * gc + ci) * goh * gow;
                        for oi in 0..goh {
                            for oj in 0..gow {
                                // Recount in-bounds cells for this window.
                                let mut cells = Vec::with_capacity(k * k);
                                for ki in 0..k {
                                    let ii =
                                        (oi * spec.stride + ki) as isize - spec.padding as isize;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for kj in 0..k {
                                        let jj = (oj * spec.stride + kj) as isize
                                            - spec.padding as isize;
                                        if jj < 0 || jj >= w as isize {
                                            continue;
                                        }
                                        cells.push(ii as usize * w + jj as usize);
                                    }
                                }
                                let share = gs[obase + oi * gow + oj] / cells.len() as f64;
                                for idx in cells {
                                    dxs[xbase + idx] += share;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, x.id(), dxg);
            })),
        )
    }

    /// Global average pool [B,C,H,W] → [B,C].
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let dx = self.view(x);
        let (b, c, h, w) = dims4(&dx);
        let n = (h * w) as f64;
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c]));
        for bi in 0..b {
            for ci in 0..c {
                let mut s = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        s += dx[[bi, ci, i, j]];
                    }
                }
                out[[bi, ci]] = s / n;
            }
        }
        let dim = dx.raw_dim();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let mut dxg = ArrayD::<f64>::zeros(dim.clone());
                let (b, c, h, w) = (dim[0], dim[1], dim[2], dim[3]);
                for bi in 0..b {
                    for ci in 0..c {
                        let share = g[[bi, ci]] / (h * w) as f64;
                        for i in 0..h {
                            for j in 0..w {
                                dxg[[bi, ci, i, j]] = share;
                            }
                        }
                    }
                }
                accumulate(grads, x.id(), dxg);
            })),
        )
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let datas: Vec<_> = parts.iter().map(|p| self.view(*p)).collect();
        let views: Vec<_> = datas.iter().map(|d| d.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("compatible shapes");
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let channels: Vec<usize> = datas.iter().map(|d| d.shape()[1]).collect();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let mut start = 0usize;
                for (&id, &ch) in ids.iter().zip(channels.iter()) {
                    let part = g
                        .slice_axis(Axis(1), ndarray::Slice::from(start..start + ch))
                        .to_owned();
                    accumulate(grads, id, part);
                    start += ch;
                }
            })),
        )
    }

    /// Spatial 2× subsampling x[:, :, ::2, ::2].
    pub fn subsample2(&self, x: Var) -> Var {
        let dx = self.view(x);
        let (b, c, h, w) = dims4(&dx);
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        out[[bi, ci, i, j]] = dx[[bi, ci, 2 * i, 2 * j]];
                    }
                }
            }
        }
        let dim = dx.raw_dim();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let mut dxg = ArrayD::<f64>::zeros(dim.clone());
                let (b, c, oh, ow) = dims4(g);
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                dxg[[bi, ci, 2 * i, 2 * j]] = g[[bi, ci, i, j]];
                            }
                        }
                    }
                }
                accumulate(grads, x.id(), dxg);
            })),
        )
    }

    /// Concatenate along the batch axis.
    pub fn concat_batch(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let datas: Vec<_> = parts.iter().map(|p| self.view(*p)).collect();
        let views: Vec<_> = datas.iter().map(|d| d.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("compatible shapes");
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let rows: Vec<usize> = datas.iter().map(|d| d.shape()[0]).collect();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let mut start = 0usize;
                for (&id, &r) in ids.iter().zip(rows.iter()) {
                    let part = g
                        .slice_axis(Axis(0), ndarray::Slice::from(start..start + r))
                        .to_owned();
                    accumulate(grads, id, part);
                    start += r;
                }
            })),
        )
    }

    /// Rows [start, start+len) along the batch axis.
    pub fn slice_batch(&self, x: Var, start: usize, len: usize) -> Var {
        let dx = self.view(x);
        let out = dx
            .slice_axis(Axis(0), ndarray::Slice::from(start..start + len))
            .to_owned();
        let dim = dx.raw_dim();
        let xid = x.id();
        self.push_node(
            out,
            Some(Box::new(move |g, grads| {
                let mut dxg = ArrayD::<f64>::zeros(dim.clone());
                dxg.slice_axis_mut(Axis(0), ndarray::Slice::from(start..start + len))
                    .assign(g);
                accumulate(grads, xid, dxg);
            })),
        )
    }

    /// All-zero tensor shaped like a [B,C,H,W] input with `c_out` channels
    /// and a spatial side scaled by `1/stride`.
    pub fn zeros_like_map(&self, x: Var, c_out: usize, stride: usize) -> Var {
        let dx = self.view(x);
        let (b, _, h, w) = dims4(&dx);
        let out = ArrayD::<f64>::zeros(IxDyn(&[
            b,
            c_out,
            if stride == 1 { h } else { h.div_ceil(2) },
            if stride == 1 { w } else { w.div_ceil(2) },
        ]));
        self.push_node(out, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    fn finite_diff(x: &ArrayD<f64>, mut f: impl FnMut(&ArrayD<f64>) -> f64) -> ArrayD<f64> {
        let eps = 1e-6;
        let mut g = ArrayD::zeros(x.raw_dim());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let orig = xp.as_slice_mut().unwrap()[i];
            xp.as_slice_mut().unwrap()[i] = orig + eps;
            let fp = f(&xp);
            xp.as_slice_mut().unwrap()[i] = orig - eps;
            let fm = f(&xp);
            xp.as_slice_mut().unwrap()[i] = orig;
            g.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    fn check_grad_xw(
        xshape: &[usize],
        wshape: &[usize],
        apply: impl Fn(&Tape, Var, Var) -> Var + Copy,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_arr(xshape, &mut rng);
        let w = rand_arr(wshape, &mut rng);
        let run = |xv: &ArrayD<f64>, wv: &ArrayD<f64>| -> f64 {
            let t = Tape::new();
            let a = t.leaf(xv.clone());
            let b = t.leaf(wv.clone());
            let y = apply(&t, a, b);
            // Deterministic non-uniform functional.
            let len = t.data(y).len();
            let lin = ArrayD::from_shape_vec(
                t.data(y).raw_dim(),
                (0..len).map(|i| ((i % 7) as f64 - 3.0) * 0.25).collect(),
            )
            .unwrap();
            t.value(t.dot_const(y, &lin))
        };
        let t = Tape::new();
        let a = t.leaf(x.clone());
        let b = t.leaf(w.clone());
        let y = apply(&t, a, b);
        let len = t.data(y).len();
        let lin = ArrayD::from_shape_vec(
            t.data(y).raw_dim(),
            (0..len).map(|i| ((i % 7) as f64 - 3.0) * 0.25).collect(),
        )
        .unwrap();
        let loss = t.dot_const(y, &lin);
        let g = t.backward(loss);
        let gx_num = finite_diff(&x, |xp| run(xp, &w));
        let gw_num = finite_diff(&w, |wp| run(&x, wp));
        for (an, nu) in g.wrt(a).unwrap().iter().zip(gx_num.iter()) {
            assert_abs_diff_eq!(an, nu, epsilon = 2e-6);
        }
        for (an, nu) in g.wrt(b).unwrap().iter().zip(gw_num.iter()) {
            assert_abs_diff_eq!(an, nu, epsilon = 2e-6);
        }
    }

    #[test]
    fn conv2d_grad_matches_fd() {
        check_grad_xw(&[2, 3, 6, 6], &[4, 3, 3, 3], |t, x, w| {
            t.conv2d(x, w, None, ConvSpec::unit(1))
        }, 1);
    }

    #[test]
    fn conv2d_stride2_grad_matches_fd() {
        check_grad_xw(&[2, 2, 7, 7], &[3, 2, 3, 3], |t, x, w| {
            t.conv2d(
                x,
                w,
                None,
                ConvSpec {
                    stride: 2,
                    padding: 1,
                    dilation: 1,
                },
            )
        }, 2);
    }

    #[test]
    fn conv2d_dilated_grad_matches_fd() {
        check_grad_xw(&[1, 2, 8, 8], &[2, 2, 3, 3], |t, x, w| {
            t.conv2d(
                x,
                w,
                None,
                ConvSpec {
                    stride: 1,
                    padding: 2,
                    dilation: 2,
                },
            )
        }, 3);
    }

    #[test]
    fn depthwise_grad_matches_fd() {
        check_grad_xw(&[2, 3, 6, 6], &[3, 3, 3], |t, x, w| {
            t.depthwise_conv2d(x, w, ConvSpec::unit(1))
        }, 4);
    }

    #[test]
    fn pools_grad_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_arr(&[2, 2, 6, 6], &mut rng);
        for (name, f) in [
            ("max", 0usize),
            ("avg", 1usize),
        ] {
            let apply = move |t: &Tape, xv: Var| -> Var {
                if f == 0 {
                    t.maxpool2d(xv, 3, ConvSpec::unit(1))
                } else {
                    t.avgpool2d(xv, 3, ConvSpec::unit(1))
                }
            };
            let run = |xp: &ArrayD<f64>| -> f64 {
                let t = Tape::new();
                let xv = t.leaf(xp.clone());
                let y = apply(&t, xv);
                t.value(t.sum_all(y))
            };
            let t = Tape::new();
            let xv = t.leaf(x.clone());
            let y = apply(&t, xv);
            let loss = t.sum_all(y);
            let g = t.backward(loss);
            let num = finite_diff(&x, run);
            for (a, n) in g.wrt(xv).unwrap().iter().zip(num.iter()) {
                assert_abs_diff_eq!(a, n, epsilon = 2e-6);
            }
            let _ = name;
        }
    }

    #[test]
    fn gap_concat_subsample_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_arr(&[2, 3, 4, 4], &mut rng);
        let run = |xp: &ArrayD<f64>| -> f64 {
            let t = Tape::new();
            let xv = t.leaf(xp.clone());
            let a = t.subsample2(xv);
            let b = t.subsample2(xv);
            let cat = t.concat_channels(&[a, b]);
            let gap = t.global_avg_pool(cat);
            let len = t.data(gap).len();
            let lin = ArrayD::from_shape_vec(
                t.data(gap).raw_dim(),
                (0..len).map(|i| (i as f64 * 0.3) - 1.0).collect(),
            )
            .unwrap();
            t.value(t.dot_const(gap, &lin))
        };
        let t = Tape::new();
        let xv = t.leaf(x.clone());
        let a = t.subsample2(xv);
        let b = t.subsample2(xv);
        let cat = t.concat_channels(&[a, b]);
        let gap = t.global_avg_pool(cat);
        let len = t.data(gap).len();
        let lin = ArrayD::from_shape_vec(
            t.data(gap).raw_dim(),
            (0..len).map(|i| (i as f64 * 0.3) - 1.0).collect(),
        )
        .unwrap();
        let loss = t.dot_const(gap, &lin);
        let g = t.backward(loss);
        let num = finite_diff(&x, run);
        for (a, n) in g.wrt(xv).unwrap().iter().zip(num.iter()) {
            assert_abs_diff_eq!(a, n, epsilon = 2e-6);
        }
    }

    #[test]
    fn channel_bias_grad() {
        check_grad_xw(&[2, 3, 4, 4], &[3], |t, x, b| t.add_channel_bias(x, b), 7);
    }
}
