//! Differentiable operations recorded on a [`Tape`].
//!
//! Activations use the layout `[G, n, c]`: `G` groups (batch element times
//! token), `n` mesh points, `c` channels. Every op except the token ops acts on
//! each group independently, which is what makes weight sharing across
//! variables permutation-equivariant at the bit level.

use std::rc::Rc;

use num_complex::Complex64;

use crate::diff::{Grads, Tape, Tensor, Var};
use crate::error::{CodanoError, Result};
use crate::field::fft::fft_nd;
use crate::field::ModeBand;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Compressed sparse rows of a query→source neighbour list with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Csr {
    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }
}

/// Sum after sorting, so the result does not depend on term order.
pub(crate) fn sorted_sum(terms: &mut [f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        2 => terms[0] + terms[1],
        _ => {
            terms.sort_unstable_by(f64::total_cmp);
            terms.iter().sum()
        }
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

/// Tanh-approximated GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    gelu_parts(x).0
}

fn split_groups(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(CodanoError::shape(format!(
            "{op} expects a [groups, points, channels] tensor, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

impl Tape {
    fn record<F>(&self, value: Tensor, op: &'static str, inputs: &[Var], back: F) -> Result<Var>
    where
        F: Fn(&[f64], &mut Grads) + 'static,
    {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(CodanoError::numeric(
                op,
                format!("non-finite forward value at flat index {i}"),
            ));
        }
        Ok(self.push(value, op, inputs, back))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(CodanoError::shape(format!("{op}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(sa)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        self.record(Tensor::new(shape, data)?, "add", &[a, b], move |g, gr| {
            gr.add(a, g);
            gr.add(b, g);
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        self.record(Tensor::new(shape, data)?, "sub", &[a, b], move |g, gr| {
            gr.add(a, g);
            if gr.wants(b) {
                gr.add_owned(b, g.iter().map(|x| -x).collect());
            }
        })
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        self.record(Tensor::new(shape, data)?, "mul", &[a, b], move |g, gr| {
            if gr.wants(a) {
                gr.add_owned(a, g.iter().zip(vb.data()).map(|(g, y)| g * y).collect());
            }
            if gr.wants(b) {
                gr.add_owned(b, g.iter().zip(va.data()).map(|(g, x)| g * x).collect());
            }
        })
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| s * x).collect();
        self.record(Tensor::new(va.shape().to_vec(), data)?, "scale", &[a], move |g, gr| {
            gr.add_owned(a, g.iter().map(|x| s * x).collect());
        })
    }

    /// `x · w + b` over the last axis; `w` is `[c_in, c_out]`, `b` is `[c_out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let ws = vw.shape();
        let cin = vx.last_dim();
        if ws.len() != 2 || ws[0] != cin || vx.shape().is_empty() {
            return Err(CodanoError::shape(format!(
                "linear: input {:?} does not match weight {ws:?}",
                vx.shape()
            )));
        }
        let cout = ws[1];
        let vb = match b {
            Some(b) => {
                let vb = self.value(b);
                if vb.shape() != [cout] {
                    return Err(CodanoError::shape(format!(
                        "linear: bias {:?} for {cout} outputs",
                        vb.shape()
                    )));
                }
                Some(vb)
            }
            None => None,
        };
        let rows = vx.len() / cin.max(1);
        let mut out = vec![0.0; rows * cout];
        let wd = vw.data();
        for (xr, or) in vx.data().chunks(cin).zip(out.chunks_mut(cout)) {
            if let Some(vb) = &vb {
                or.copy_from_slice(vb.data());
            }
            for (i, &xi) in xr.iter().enumerate() {
                for (o, w) in or.iter_mut().zip(&wd[i * cout..(i + 1) * cout]) {
                    *o += xi * w;
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.record(Tensor::new(shape, out)?, "linear", &inputs, move |g, gr| {
            let xd = vx.data();
            let wd = vw.data();
            if gr.wants(x) {
                let mut gx = vec![0.0; xd.len()];
                for (gxr, gor) in gx.chunks_mut(cin).zip(g.chunks(cout)) {
                    for (i, gxi) in gxr.iter_mut().enumerate() {
                        *gxi = gor.iter().zip(&wd[i * cout..(i + 1) * cout]).map(|(a, b)| a * b).sum();
                    }
                }
                gr.add_owned(x, gx);
            }
            if gr.wants(w) {
                let mut gw = vec![0.0; wd.len()];
                for (xr, gor) in xd.chunks(cin).zip(g.chunks(cout)) {
                    for (i, &xi) in xr.iter().enumerate() {
                        for (gwv, go) in gw[i * cout..(i + 1) * cout].iter_mut().zip(gor) {
                            *gwv += xi * go;
                        }
                    }
                }
                gr.add_owned(w, gw);
            }
            if let Some(b) = b {
                if gr.wants(b) {
                    let mut gb = vec![0.0; cout];
                    for gor in g.chunks(cout) {
                        for (a, v) in gb.iter_mut().zip(gor) {
                            *a += v;
                        }
                    }
                    gr.add_owned(b, gb);
                }
            }
        })
    }

    /// Add a per-channel bias `b` (`[c]`) along the last axis.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let c = vx.last_dim();
        if vb.shape() != [c] {
            return Err(CodanoError::shape(format!(
                "add_bias: bias {:?} for {c} channels",
                vb.shape()
            )));
        }
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(e, v)| v + vb.data()[e % c])
            .collect();
        self.record(
            Tensor::new(vx.shape().to_vec(), data)?,
            "add_bias",
            &[x, b],
            move |g, gr| {
                gr.add(x, g);
                if gr.wants(b) {
                    let mut gb = vec![0.0; c];
                    for (e, v) in g.iter().enumerate() {
                        gb[e % c] += v;
                    }
                    gr.add_owned(b, gb);
                }
            },
        )
    }

    pub fn gelu(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| gelu_parts(v).0).collect();
        self.record(Tensor::new(vx.shape().to_vec(), data)?, "gelu", &[x], move |g, gr| {
            let gx = g.iter().zip(vx.data()).map(|(g, &v)| g * gelu_parts(v).1).collect();
            gr.add_owned(x, gx);
        })
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CodanoError::shape("concat_last of nothing"));
        }
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let lead = &vals[0].shape()[..vals[0].shape().len().saturating_sub(1)];
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = vals.iter().map(|v| v.last_dim()).collect();
        for v in &vals {
            if &v.shape()[..v.shape().len().saturating_sub(1)] != lead {
                return Err(CodanoError::shape(format!(
                    "concat_last: leading shapes {lead:?} and {:?} differ",
                    v.shape()
                )));
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in vals.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let parts = parts.to_vec();
        let ps = parts.clone();
        self.record(Tensor::new(shape, out)?, "concat_last", &parts, move |g, gr| {
            let mut off = 0;
            for (&p, &w) in ps.iter().zip(&widths) {
                if gr.wants(p) {
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    gr.add_owned(p, gp);
                }
                off += w;
            }
        })
    }

    /// Channels `start..start+len` of the last axis.
    pub fn slice_last(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.last_dim();
        if start + len > c || len == 0 {
            return Err(CodanoError::shape(format!(
                "slice_last: {start}..{} of {c} channels",
                start + len
            )));
        }
        let rows = vx.len() / c;
        let mut out = Vec::with_capacity(rows * len);
        for r in vx.data().chunks(c) {
            out.extend_from_slice(&r[start..start + len]);
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.record(Tensor::new(shape, out)?, "slice_last", &[x], move |g, gr| {
            if let Some(s) = gr.slot(x) {
                for (r, gr_) in s.chunks_mut(c).zip(g.chunks(len)) {
                    for (a, b) in r[start..start + len].iter_mut().zip(gr_) {
                        *a += b;
                    }
                }
            }
        })
    }

    /// Assemble a tensor from groups (first-axis slices) of several inputs.
    ///
    /// Output group `i` is group `pattern[i].1` of input `pattern[i].0`; groups
    /// may repeat, which broadcasts them.
    pub fn stack_groups(&self, inputs: &[Var], pattern: &[(usize, usize)]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = inputs.iter().map(|&v| self.value(v)).collect();
        let Some(first) = vals.first() else {
            return Err(CodanoError::shape("stack_groups of nothing"));
        };
        let inner = &first.shape()[1..];
        for v in &vals {
            if v.shape().is_empty() || &v.shape()[1..] != inner {
                return Err(CodanoError::shape(format!(
                    "stack_groups: group shapes {inner:?} and {:?} differ",
                    v.shape()
                )));
            }
        }
        let gsz: usize = inner.iter().product();
        let mut out = Vec::with_capacity(pattern.len() * gsz);
        for &(i, gi) in pattern {
            let v = vals
                .get(i)
                .ok_or_else(|| CodanoError::shape("stack_groups: bad input"))?;
            if gi >= v.shape()[0] {
                return Err(CodanoError::shape(format!("stack_groups: group {gi} out of range")));
            }
            out.extend_from_slice(&v.data()[gi * gsz..(gi + 1) * gsz]);
        }
        let mut shape = vec![pattern.len()];
        shape.extend_from_slice(inner);
        let ins = inputs.to_vec();
        let pat = pattern.to_vec();
        self.record(Tensor::new(shape, out)?, "stack_groups", inputs, move |g, gr| {
            for (o, &(i, gi)) in pat.iter().enumerate() {
                if let Some(s) = gr.slot(ins[i]) {
                    for (a, b) in s[gi * gsz..(gi + 1) * gsz].iter_mut().zip(&g[o * gsz..(o + 1) * gsz]) {
                        *a += b;
                    }
                }
            }
        })
    }

    /// Spectral convolution `y = Re(F⁻¹(R · F(x)|band))` per group.
    ///
    /// `x` is `[G, n, c_in]` on a grid of `shape`; `w_re`, `w_im` are
    /// `[slots, c_in, c_out]` over the band of `modes`.
    pub fn spectral_conv(&self, x: Var, w_re: Var, w_im: Var, shape: &[usize], modes: &[usize]) -> Result<Var> {
        let band = Rc::new(ModeBand::new(shape, modes)?);
        let vx = self.value(x);
        let (gcount, n, cin) = split_groups(vx.shape(), "spectral_conv")?;
        let (vr, vi) = (self.value(w_re), self.value(w_im));
        let s = band.slots;
        if n != shape.iter().product::<usize>()
            || vr.shape().len() != 3
            || vr.shape()[..2] != [s, cin]
            || vr.shape() != vi.shape()
        {
            return Err(CodanoError::shape(format!(
                "spectral_conv: input {:?}, weights {:?}/{:?}, band of {s} slots on {shape:?}",
                vx.shape(),
                vr.shape(),
                vi.shape()
            )));
        }
        let cout = vr.shape()[2];
        let shape = shape.to_vec();
        let nf = n as f64;
        let weight = |s_: usize, i: usize, o: usize| {
            let k = (s_ * cin + i) * cout + o;
            Complex64::new(vr.data()[k], vi.data()[k])
        };
        let mut xb = vec![ZERO; gcount * s * cin];
        let mut buf = vec![ZERO; n];
        let xd = vx.data();
        for g in 0..gcount {
            for i in 0..cin {
                for (p, z) in buf.iter_mut().enumerate() {
                    *z = Complex64::new(xd[(g * n + p) * cin + i], 0.0);
                }
                fft_nd(&mut buf, &shape, false);
                for &(sl, flat) in &band.entries {
                    xb[(g * s + sl) * cin + i] = buf[flat];
                }
            }
        }
        let mut out = vec![0.0; gcount * n * cout];
        let mut yb = vec![ZERO; s * cout];
        for g in 0..gcount {
            yb.iter_mut().for_each(|z| *z = ZERO);
            for sl in 0..s {
                for i in 0..cin {
                    let xv = xb[(g * s + sl) * cin + i];
                    for o in 0..cout {
                        yb[sl * cout + o] += weight(sl, i, o) * xv;
                    }
                }
            }
            for o in 0..cout {
                buf.iter_mut().for_each(|z| *z = ZERO);
                for &(sl, flat) in &band.entries {
                    buf[flat] = yb[sl * cout + o];
                }
                fft_nd(&mut buf, &shape, true);
                for (p, z) in buf.iter().enumerate() {
                    out[(g * n + p) * cout + o] = z.re / nf;
                }
            }
        }
        let xb = Rc::new(xb);
        let out = Tensor::new(vec![gcount, n, cout], out)?;
        self.record(out, "spectral_conv", &[x, w_re, w_im], move |gd, gr| {
            let weight = |s_: usize, i: usize, o: usize| {
                let k = (s_ * cin + i) * cout + o;
                Complex64::new(vr.data()[k], vi.data()[k])
            };
            let want_w = gr.wants(w_re) || gr.wants(w_im);
            let want_x = gr.wants(x);
            let mut gwr = vec![0.0; if want_w { s * cin * cout } else { 0 }];
            let mut gwi = gwr.clone();
            let mut gx = vec![0.0; if want_x { gcount * n * cin } else { 0 }];
            let mut buf = vec![ZERO; n];
            let mut gy = vec![ZERO; s * cout];
            for g in 0..gcount {
                for o in 0..cout {
                    for (p, z) in buf.iter_mut().enumerate() {
                        *z = Complex64::new(gd[(g * n + p) * cout + o], 0.0);
                    }
                    fft_nd(&mut buf, &shape, false);
                    for &(sl, flat) in &band.entries {
                        gy[sl * cout + o] = buf[flat] / nf;
                    }
                }
                if want_w {
                    for sl in 0..s {
                        for i in 0..cin {
                            let xc = xb[(g * s + sl) * cin + i].conj();
                            for o in 0..cout {
                                let z = gy[sl * cout + o] * xc;
                                let k = (sl * cin + i) * cout + o;
                                gwr[k] += z.re;
                                gwi[k] += z.im;
                            }
                        }
                    }
                }
                if want_x {
                    for i in 0..cin {
                        buf.iter_mut().for_each(|z| *z = ZERO);
                        for &(sl, flat) in &band.entries {
                            let mut acc = ZERO;
                            for o in 0..cout {
                                acc += weight(sl, i, o).conj() * gy[sl * cout + o];
                            }
                            buf[flat] = acc;
                        }
                        fft_nd(&mut buf, &shape, true);
                        for (p, z) in buf.iter().enumerate() {
                            gx[(g * n + p) * cin + i] = z.re;
                        }
                    }
                }
            }
            if want_w {
                gr.add_owned(w_re, gwr);
                gr.add_owned(w_im, gwi);
            }
            if want_x {
                gr.add_owned(x, gx);
            }
        })
    }

    /// Unnormalized DFT of each group and channel: `[G, n, c] -> [G, n, c, 2]` (re, im).
    pub fn fft_real(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (gcount, n, c) = split_groups(vx.shape(), "fft_real")?;
        if n != shape.iter().product::<usize>() {
            return Err(CodanoError::shape("fft_real: grid shape does not match points"));
        }
        let shape = shape.to_vec();
        let mut out = vec![0.0; gcount * n * c * 2];
        let mut buf = vec![ZERO; n];
        for g in 0..gcount {
            for ch in 0..c {
                for (p, z) in buf.iter_mut().enumerate() {
                    *z = Complex64::new(vx.data()[(g * n + p) * c + ch], 0.0);
                }
                fft_nd(&mut buf, &shape, false);
                for (p, z) in buf.iter().enumerate() {
                    let k = ((g * n + p) * c + ch) * 2;
                    out[k] = z.re;
                    out[k + 1] = z.im;
                }
            }
        }
        let t = Tensor::new(vec![gcount, n, c, 2], out)?;
        self.record(t, "fft_real", &[x], move |gd, gr| {
            let mut gx = vec![0.0; gcount * n * c];
            let mut buf = vec![ZERO; n];
            for g in 0..gcount {
                for ch in 0..c {
                    for (p, z) in buf.iter_mut().enumerate() {
                        let k = ((g * n + p) * c + ch) * 2;
                        *z = Complex64::new(gd[k], gd[k + 1]);
                    }
                    fft_nd(&mut buf, &shape, true);
                    for (p, z) in buf.iter().enumerate() {
                        gx[(g * n + p) * c + ch] = z.re;
                    }
                }
            }
            gr.add_owned(x, gx);
        })
    }

    /// Attention logits `L[b, j, m] = scale · Σ_p w_p ⟨q_{bj}(p), k_{bm}(p)⟩`.
    ///
    /// `q`, `k` are `[B·T, n, d]`, group-major in the batch; the result is `[B, T, T]`.
    pub fn token_logits(&self, q: Var, k: Var, weights: Rc<Vec<f64>>, tokens: usize, scale: f64) -> Result<Var> {
        let shape = self.same_shape(q, k, "token_logits")?;
        let (gcount, n, d) = split_groups(&shape, "token_logits")?;
        if tokens == 0 || gcount % tokens != 0 || weights.len() != n {
            return Err(CodanoError::shape(format!(
                "token_logits: {gcount} groups, {tokens} tokens, {} weights for {n} points",
                weights.len()
            )));
        }
        let b = gcount / tokens;
        let (vq, vk) = (self.value(q), self.value(k));
        let gsz = n * d;
        let mut out = vec![0.0; b * tokens * tokens];
        for bi in 0..b {
            for j in 0..tokens {
                let qj = &vq.data()[(bi * tokens + j) * gsz..][..gsz];
                for m in 0..tokens {
                    let km = &vk.data()[(bi * tokens + m) * gsz..][..gsz];
                    let mut acc = 0.0;
                    for (p, w) in weights.iter().enumerate() {
                        let dot: f64 = qj[p * d..(p + 1) * d]
                            .iter()
                            .zip(&km[p * d..(p + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum();
                        acc += w * dot;
                    }
                    out[(bi * tokens + j) * tokens + m] = scale * acc;
                }
            }
        }
        let t = Tensor::new(vec![b, tokens, tokens], out)?;
        self.record(t, "token_logits", &[q, k], move |gd, gr| {
            let (wq, wk) = (gr.wants(q), gr.wants(k));
            let mut gq = vec![0.0; if wq { gcount * gsz } else { 0 }];
            let mut gk = vec![0.0; if wk { gcount * gsz } else { 0 }];
            for bi in 0..b {
                for j in 0..tokens {
                    let jo = (bi * tokens + j) * gsz;
                    for m in 0..tokens {
                        let mo = (bi * tokens + m) * gsz;
                        let coef = scale * gd[(bi * tokens + j) * tokens + m];
                        if coef == 0.0 {
                            continue;
                        }
                        for (p, w) in weights.iter().enumerate() {
                            let cw = coef * w;
                            for c in 0..d {
                                let e = p * d + c;
                                if wq {
                                    gq[jo + e] += cw * vk.data()[mo + e];
                                }
                                if wk {
                                    gk[mo + e] += cw * vq.data()[jo + e];
                                }
                            }
                        }
                    }
                }
            }
            if wq {
                gr.add_owned(q, gq);
            }
            if wk {
                gr.add_owned(k, gk);
            }
        })
    }

    /// Softmax over the last axis; row normalizers are summed order-independently.
    pub fn softmax_last(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let t = vx.last_dim();
        let mut out = vec![0.0; vx.len()];
        let mut terms = vec![0.0; t];
        for (xr, or) in vx.data().chunks(t).zip(out.chunks_mut(t)) {
            let mx = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (o, &v) in or.iter_mut().zip(xr) {
                *o = (v - mx).exp();
            }
            terms.copy_from_slice(or);
            let z = sorted_sum(&mut terms);
            or.iter_mut().for_each(|o| *o /= z);
        }
        let y = Rc::new(out.clone());
        let t_ = Tensor::new(vx.shape().to_vec(), out)?;
        self.record(t_, "softmax_last", &[x], move |gd, gr| {
            let mut gx = vec![0.0; y.len()];
            for ((yr, gr_), gxr) in y.chunks(t).zip(gd.chunks(t)).zip(gx.chunks_mut(t)) {
                let dot: f64 = yr.iter().zip(gr_).map(|(a, b)| a * b).sum();
                for ((o, &yv), &gv) in gxr.iter_mut().zip(yr).zip(gr_) {
                    *o = yv * (gv - dot);
                }
            }
            gr.add_owned(x, gx);
        })
    }

    /// `o_{bj} = Σ_m a[b, j, m] · v_{bm}` with order-independent summation.
    pub fn token_mix(&self, a: Var, v: Var) -> Result<Var> {
        let (va, vv) = (self.value(a), self.value(v));
        let (gcount, n, c) = split_groups(vv.shape(), "token_mix")?;
        let sa = va.shape();
        if sa.len() != 3 || sa[1] != sa[2] || sa[0] * sa[1] != gcount {
            return Err(CodanoError::shape(format!(
                "token_mix: weights {sa:?} for values {:?}",
                vv.shape()
            )));
        }
        let (b, tokens) = (sa[0], sa[1]);
        let gsz = n * c;
        let mut out = vec![0.0; gcount * gsz];
        let mut terms = vec![0.0; tokens];
        for bi in 0..b {
            for j in 0..tokens {
                let row = &va.data()[(bi * tokens + j) * tokens..][..tokens];
                let o = &mut out[(bi * tokens + j) * gsz..][..gsz];
                for (e, oe) in o.iter_mut().enumerate() {
                    for (m, t) in terms.iter_mut().enumerate() {
                        *t = row[m] * vv.data()[(bi * tokens + m) * gsz + e];
                    }
                    *oe = sorted_sum(&mut terms);
                }
            }
        }
        let t = Tensor::new(vv.shape().to_vec(), out)?;
        self.record(t, "token_mix", &[a, v], move |gd, gr| {
            if gr.wants(a) {
                let mut ga = vec![0.0; va.len()];
                for bi in 0..b {
                    for j in 0..tokens {
                        let gj = &gd[(bi * tokens + j) * gsz..][..gsz];
                        for m in 0..tokens {
                            let vm = &vv.data()[(bi * tokens + m) * gsz..][..gsz];
                            ga[(bi * tokens + j) * tokens + m] = gj.iter().zip(vm).map(|(x, y)| x * y).sum();
                        }
                    }
                }
                gr.add_owned(a, ga);
            }
            if gr.wants(v) {
                let mut gv = vec![0.0; vv.len()];
                for bi in 0..b {
                    for j in 0..tokens {
                        let gj = &gd[(bi * tokens + j) * gsz..][..gsz];
                        for m in 0..tokens {
                            let w = va.data()[(bi * tokens + j) * tokens + m];
                            let gm = &mut gv[(bi * tokens + m) * gsz..][..gsz];
                            for (x, y) in gm.iter_mut().zip(gj) {
                                *x += w * y;
                            }
                        }
                    }
                }
                gr.add_owned(v, gv);
            }
        })
    }

    /// Per-group, per-channel standardization under probability weights `wn`.
    ///
    /// `out = gain · (x − μ) / sqrt(σ² + ε²) + bias`, where `wn` sums to one.
    pub fn instance_norm(&self, x: Var, gain: Var, bias: Var, wn: Rc<Vec<f64>>, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let (gcount, n, c) = split_groups(vx.shape(), "instance_norm")?;
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.shape() != [c] || vb.shape() != [c] || wn.len() != n {
            return Err(CodanoError::shape(format!(
                "instance_norm: input {:?}, gain {:?}, bias {:?}, {} weights",
                vx.shape(),
                vg.shape(),
                vb.shape(),
                wn.len()
            )));
        }
        let xd = vx.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_s = vec![0.0; gcount * c];
        for g in 0..gcount {
            let base = g * n * c;
            for ch in 0..c {
                let mu: f64 = (0..n).map(|p| wn[p] * xd[base + p * c + ch]).sum();
                let var: f64 = (0..n)
                    .map(|p| {
                        let d = xd[base + p * c + ch] - mu;
                        wn[p] * d * d
                    })
                    .sum();
                let is = 1.0 / (var + eps * eps).sqrt();
                inv_s[g * c + ch] = is;
                for p in 0..n {
                    xhat[base + p * c + ch] = (xd[base + p * c + ch] - mu) * is;
                }
            }
        }
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(e, &h)| vg.data()[e % c] * h + vb.data()[e % c])
            .collect();
        let xhat = Rc::new(xhat);
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        self.record(t, "instance_norm", &[x, gain, bias], move |gd, gr| {
            if gr.wants(gain) {
                let mut gg = vec![0.0; c];
                for (e, (gv, h)) in gd.iter().zip(xhat.iter()).enumerate() {
                    gg[e % c] += gv * h;
                }
                gr.add_owned(gain, gg);
            }
            if gr.wants(bias) {
                let mut gb = vec![0.0; c];
                for (e, gv) in gd.iter().enumerate() {
                    gb[e % c] += gv;
                }
                gr.add_owned(bias, gb);
            }
            if gr.wants(x) {
                let mut gx = vec![0.0; gd.len()];
                for g in 0..gcount {
                    let base = g * n * c;
                    for ch in 0..c {
                        let gam = vg.data()[ch];
                        let (mut sa, mut sb) = (0.0, 0.0);
                        for p in 0..n {
                            let e = base + p * c + ch;
                            let gg = gd[e] * gam;
                            sa += gg;
                            sb += gg * xhat[e];
                        }
                        let is = inv_s[g * c + ch];
                        for p in 0..n {
                            let e = base + p * c + ch;
                            gx[e] = (gd[e] * gam - wn[p] * (sa + xhat[e] * sb)) * is;
                        }
                    }
                }
                gr.add_owned(x, gx);
            }
        })
    }

    /// Kernel-weighted neighbour sum.
    ///
    /// `out[g, q, o] = Σ_{e ∈ row q} w_e Σ_i K_e[o, i] · f[g, col_e, i]`, with
    /// `kvals` holding one flattened `d_out × d_in` matrix per neighbour pair.
    pub fn gather_contract(&self, kvals: Var, f: Var, csr: Rc<Csr>, dout: usize) -> Result<Var> {
        let (vk, vf) = (self.value(kvals), self.value(f));
        let (gcount, ns, din) = split_groups(vf.shape(), "gather_contract")?;
        let kd = dout * din;
        if vk.shape() != [csr.nnz(), kd] || csr.cols.iter().any(|&j| j >= ns) {
            return Err(CodanoError::shape(format!(
                "gather_contract: kernel values {:?} for {} pairs of {dout}x{din}, source has {ns} points",
                vk.shape(),
                csr.nnz()
            )));
        }
        let nq = csr.rows();
        let mut out = vec![0.0; gcount * nq * dout];
        for g in 0..gcount {
            for q in 0..nq {
                let o = &mut out[(g * nq + q) * dout..][..dout];
                for e in csr.row(q) {
                    let w = csr.weights[e];
                    let fr = &vf.data()[(g * ns + csr.cols[e]) * din..][..din];
                    let km = &vk.data()[e * kd..][..kd];
                    for (oi, krow) in o.iter_mut().zip(km.chunks(din)) {
                        let s: f64 = krow.iter().zip(fr).map(|(a, b)| a * b).sum();
                        *oi += w * s;
                    }
                }
            }
        }
        let t = Tensor::new(vec![gcount, nq, dout], out)?;
        self.record(t, "gather_contract", &[kvals, f], move |gd, gr| {
            let (wk, wf) = (gr.wants(kvals), gr.wants(f));
            let mut gk = vec![0.0; if wk { vk.len() } else { 0 }];
            let mut gf = vec![0.0; if wf { vf.len() } else { 0 }];
            for g in 0..gcount {
                for q in 0..nq {
                    let go = &gd[(g * nq + q) * dout..][..dout];
                    for e in csr.row(q) {
                        let w = csr.weights[e];
                        let col = csr.cols[e];
                        let fr = &vf.data()[(g * ns + col) * din..][..din];
                        if wk {
                            let gkm = &mut gk[e * kd..][..kd];
                            for (grow, &gov) in gkm.chunks_mut(din).zip(go) {
                                let a = w * gov;
                                for (x, fv) in grow.iter_mut().zip(fr) {
                                    *x += a * fv;
                                }
                            }
                        }
                        if wf {
                            let km = &vk.data()[e * kd..][..kd];
                            let gfr = &mut gf[(g * ns + col) * din..][..din];
                            for (krow, &gov) in km.chunks(din).zip(go) {
                                let a = w * gov;
                                for (x, kv) in gfr.iter_mut().zip(krow) {
                                    *x += a * kv;
                                }
                            }
                        }
                    }
                }
            }
            if wk {
                gr.add_owned(kvals, gk);
            }
            if wf {
                gr.add_owned(f, gf);
            }
        })
    }

    /// Mean over samples of the relative quadrature L² error.
    ///
    /// `pred` is `[G, n, c]` with `G` a multiple of `samples`; each sample owns
    /// a contiguous run of groups. Samples whose target has zero norm fall back
    /// to the absolute error.
    pub fn rel_l2_loss(&self, pred: Var, target: Rc<Tensor>, weights: Rc<Vec<f64>>, samples: usize) -> Result<Var> {
        let vp = self.value(pred);
        let (gcount, n, c) = split_groups(vp.shape(), "rel_l2_loss")?;
        if target.shape() != vp.shape() || weights.len() != n || samples == 0 || gcount % samples != 0 {
            return Err(CodanoError::shape(format!(
                "rel_l2_loss: prediction {:?}, target {:?}, {} weights, {samples} samples",
                vp.shape(),
                target.shape(),
                weights.len()
            )));
        }
        let per = vp.len() / samples;
        let w_of = move |e: usize| (e / c) % n;
        let mut stats = Vec::with_capacity(samples);
        let mut loss = 0.0;
        for s in 0..samples {
            let (mut num, mut den) = (0.0, 0.0);
            for e in s * per..(s + 1) * per {
                let w = weights[w_of(e)];
                let d = vp.data()[e] - target.data()[e];
                num += w * d * d;
                den += w * target.data()[e] * target.data()[e];
            }
            let (num, den) = (num.sqrt(), den.sqrt());
            let r = if den > 0.0 { num / den } else { num };
            stats.push((num, if den > 0.0 { den } else { 1.0 }));
            loss += r;
        }
        loss /= samples as f64;
        self.record(Tensor::scalar(loss), "rel_l2_loss", &[pred], move |gd, gr| {
            let mut gp = vec![0.0; vp.len()];
            for (s, &(num, den)) in stats.iter().enumerate() {
                if num == 0.0 {
                    continue;
                }
                let coef = gd[0] / (samples as f64 * num * den);
                for e in s * per..(s + 1) * per {
                    gp[e] = coef * weights[w_of(e)] * (vp.data()[e] - target.data()[e]);
                }
            }
            gr.add_owned(pred, gp);
        })
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.len();
        let s = vx.data().iter().sum();
        self.record(Tensor::scalar(s), "sum", &[x], move |g, gr| {
            gr.add_owned(x, vec![g[0]; n]);
        })
    }

    pub fn sum_squares(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.data().iter().map(|v| v * v).sum();
        self.record(Tensor::scalar(s), "sum_squares", &[x], move |g, gr| {
            gr.add_owned(x, vx.data().iter().map(|v| 2.0 * g[0] * v).collect());
        })
    }

    /// `Σ_g Σ_p w_p ⟨a_g(p), b_g(p)⟩` for `[G, n, c]` inputs.
    pub fn weighted_inner(&self, a: Var, b: Var, weights: Rc<Vec<f64>>) -> Result<Var> {
        let shape = self.same_shape(a, b, "weighted_inner")?;
        let (_, n, c) = split_groups(&shape, "weighted_inner")?;
        if weights.len() != n {
            return Err(CodanoError::shape("weighted_inner: weight count"));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .enumerate()
            .map(|(e, (x, y))| weights[(e / c) % n] * x * y)
            .sum();
        self.record(Tensor::scalar(s), "weighted_inner", &[a, b], move |g, gr| {
            let w = |e: usize| g[0] * weights[(e / c) % n];
            if gr.wants(a) {
                gr.add_owned(a, vb.data().iter().enumerate().map(|(e, y)| w(e) * y).collect());
            }
            if gr.wants(b) {
                gr.add_owned(b, va.data().iter().enumerate().map(|(e, x)| w(e) * x).collect());
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diff::{grad_check, GradCheckOptions, ParamStore};

    fn store(specs: &[(&str, Vec<usize>)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape) in specs {
            s.insert_normal(*name, shape.clone(), 0.7, &mut rng).unwrap();
        }
        s
    }

    /// Contract the output with a fixed pseudo-random tensor so every entry matters.
    fn project(t: &Tape, y: Var) -> Result<Var> {
        let shape = t.shape(y);
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 101) as f64 / 50.0) - 1.0).collect();
        let c = t.constant(Tensor::new(shape, w)?);
        let p = t.mul(y, c)?;
        t.sum(p)
    }

    fn check(specs: &[(&str, Vec<usize>)], f: impl Fn(&Tape, &ParamStore) -> Result<Var>) {
        let s = store(specs, 11);
        let r = grad_check(|t, s| project(t, f(t, s)?), &s, 1e-5, &GradCheckOptions::default()).unwrap();
        assert!(r.pass, "{:#?}", r.groups);
    }

    #[test]
    fn elementwise_ops() {
        check(&[("a", vec![2, 3]), ("b", vec![2, 3])], |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let x = t.add(a, b)?;
            let y = t.mul(x, a)?;
            let z = t.sub(y, b)?;
            let z = t.gelu(z)?;
            t.scale(z, -1.5)
        });
    }

    #[test]
    fn linear_concat_slice() {
        check(
            &[
                ("x", vec![2, 5, 3]),
                ("w", vec![3, 4]),
                ("b", vec![4]),
                ("e", vec![2, 5, 2]),
            ],
            |t, s| {
                let x = t.param(s, "x")?;
                let y = t.linear(x, t.param(s, "w")?, Some(t.param(s, "b")?))?;
                let y = t.add_bias(y, t.param(s, "b")?)?;
                let c = t.concat_last(&[y, t.param(s, "e")?, x])?;
                t.slice_last(c, 2, 5)
            },
        );
    }

    #[test]
    fn stack_groups_broadcasts_and_permutes() {
        check(&[("a", vec![2, 3, 2]), ("b", vec![1, 3, 2])], |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            t.stack_groups(&[a, b], &[(1, 0), (0, 1), (1, 0), (0, 0)])
        });
    }

    #[test]
    fn spectral_conv_matches_finite_differences() {
        let slots = ModeBand::slot_count(&[2, 3]);
        check(
            &[
                ("x", vec![2, 48, 2]),
                ("wr", vec![slots, 2, 3]),
                ("wi", vec![slots, 2, 3]),
            ],
            |t, s| {
                let x = t.param(s, "x")?;
                t.spectral_conv(x, t.param(s, "wr")?, t.param(s, "wi")?, &[6, 8], &[2, 3])
            },
        );
    }

    #[test]
    fn fft_real_matches_finite_differences() {
        check(&[("x", vec![1, 12, 2])], |t, s| t.fft_real(t.param(s, "x")?, &[3, 4]));
    }

    #[test]
    fn fft_gradient_is_inverse_transform_of_the_weights() {
        // d/dx Σ_k Re(a_k · X_k) = Re(Σ_k a_k e^{+ikx}), the unnormalized inverse of a.
        let n = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, n, 1], (0..n).map(|i| (i as f64).cos()).collect()).unwrap());
        let xf = tape.fft_real(x, &[n]).unwrap();
        let mut wa = vec![0.0; 2 * n];
        for k in 0..n {
            wa[2 * k] = a[k];
        }
        let c = tape.constant(Tensor::new(vec![1, n, 1, 2], wa).unwrap());
        let l = tape.mul(xf, c).unwrap();
        let l = tape.sum(l).unwrap();
        let g = tape.backward(l).unwrap();
        let mut buf: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut buf, &[n], true);
        for (gi, z) in g.get(x).unwrap().iter().zip(&buf) {
            assert!((gi - z.re).abs() < 1e-12);
        }
    }

    #[test]
    fn token_ops_match_finite_differences() {
        let w: Rc<Vec<f64>> = Rc::new((0..5).map(|i| 0.1 + 0.05 * i as f64).collect());
        check(
            &[("q", vec![6, 5, 2]), ("k", vec![6, 5, 2]), ("v", vec![6, 5, 3])],
            move |t, s| {
                let l = t.token_logits(t.param(s, "q")?, t.param(s, "k")?, w.clone(), 3, 0.8)?;
                let a = t.softmax_last(l)?;
                t.token_mix(a, t.param(s, "v")?)
            },
        );
    }

    #[test]
    fn instance_norm_matches_finite_differences() {
        let w = Rc::new(vec![0.1, 0.2, 0.3, 0.15, 0.25]);
        check(&[("x", vec![2, 5, 3]), ("g", vec![3]), ("b", vec![3])], move |t, s| {
            t.instance_norm(t.param(s, "x")?, t.param(s, "g")?, t.param(s, "b")?, w.clone(), 1e-5)
        });
    }

    #[test]
    fn gather_contract_matches_finite_differences() {
        let csr = Rc::new(Csr {
            offsets: vec![0, 2, 2, 5],
            cols: vec![0, 3, 1, 2, 3],
            weights: vec![0.5, 0.25, 1.0, 0.3, 0.7],
        });
        check(&[("k", vec![5, 6]), ("f", vec![2, 4, 3])], move |t, s| {
            t.gather_contract(t.param(s, "k")?, t.param(s, "f")?, csr.clone(), 2)
        });
    }

    #[test]
    fn losses_match_finite_differences() {
        let w = Rc::new(vec![0.2, 0.3, 0.5]);
        let s = store(&[("p", vec![4, 3, 2]), ("q", vec![4, 3, 2])], 2);
        let target = Rc::new(Tensor::new(vec![4, 3, 2], (0..24).map(|i| (i as f64).sin()).collect()).unwrap());
        let r = grad_check(
            |t, s| {
                let p = t.param(s, "p")?;
                let a = t.rel_l2_loss(p, target.clone(), w.clone(), 2)?;
                let b = t.weighted_inner(p, t.param(s, "q")?, w.clone())?;
                let c = t.sum_squares(p)?;
                let ab = t.add(a, b)?;
                t.add(ab, c)
            },
            &s,
            1e-5,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.pass, "{:#?}", r.groups);
    }

    #[test]
    fn quadratic_and_constant_losses() {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let tape = Tape::new();
        let p = tape.param(&s, "p").unwrap();
        let l = tape.sum_squares(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &[2.0, -4.0, 1.0]);

        let tape = Tape::new();
        let p = tape.param(&s, "p").unwrap();
        let z = tape.scale(p, 0.0).unwrap();
        let l = tape.sum(z).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn filtered_field_energy_matches_finite_differences() {
        let shape = [8, 8];
        let m = crate::field::Mesh::periodic_box(shape.to_vec()).unwrap();
        let w = Rc::new(m.weights().to_vec());
        let slots = ModeBand::slot_count(&[3, 3]);
        let s = store(
            &[
                ("x", vec![1, 64, 1]),
                ("wr", vec![slots, 1, 1]),
                ("wi", vec![slots, 1, 1]),
            ],
            9,
        );
        let r = grad_check(
            |t, s| {
                let y = t.spectral_conv(t.param(s, "x")?, t.param(s, "wr")?, t.param(s, "wi")?, &shape, &[3, 3])?;
                t.weighted_inner(y, y, w.clone())
            },
            &s,
            1e-5,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.pass, "{:#?}", r.groups);
    }

    #[test]
    fn non_scalar_loss_is_a_shape_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(tape.backward(x), Err(CodanoError::Shape(_))));
    }

    #[test]
    fn non_finite_forward_names_the_op() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![1e300]).unwrap());
        let e = tape.mul(x, x).unwrap_err();
        assert!(matches!(e, CodanoError::Numeric { ref op, .. } if op == "mul"));
    }

    #[test]
    fn non_finite_backward_names_the_op() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1], vec![1e-300]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1], vec![1e300]).unwrap());
        let y = tape.mul(a, b).unwrap();
        let y = tape.scale(y, 1e10).unwrap();
        let l = tape.sum(y).unwrap();
        let e = tape.backward(l).unwrap_err();
        assert!(matches!(e, CodanoError::Numeric { ref op, .. } if op == "mul"), "{e:?}");
    }

    #[test]
    fn softmax_rows_are_probability_vectors() {
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, -3.0, 40.0, 0.0, 0.0, 0.0]).unwrap());
        let y = tape.value(tape.softmax_last(x).unwrap());
        for r in y.data().chunks(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(y.data()[3..].iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn sorted_sum_ignores_order() {
        let mut a = [0.1, 1e16, -1e16, 0.3];
        let mut b = [-1e16, 0.3, 0.1, 1e16];
        assert_eq!(sorted_sum(&mut a).to_bits(), sorted_sum(&mut b).to_bits());
    }
}
