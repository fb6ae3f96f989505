//! Minimal reverse-mode differentiation tape.
//!
//! Every differentiable operation in the model is expressed through this
//! engine: a forward call appends a node holding the computed value plus a
//! closure that maps the node's output gradient to its parents' gradients.
//! Nodes are created in topological order, so the backward sweep is a single
//! reverse pass over the node list.
//!
//! Shape conformance inside the tape is a programming invariant and is
//! enforced with assertions; fallible validation belongs to the module-level
//! operations that feed the tape.

use crate::ops;
use crate::tensor::{Real, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T: Real> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Recording of one forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed at `v` during the forward pass.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, parents: Vec<usize>, backward: BackwardFn<T>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward: Some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts an input node (parameter or constant). Gradients accumulate
    /// here but do not propagate further.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        assert_eq!(ta.shape(), tb.shape(), "add: shape mismatch");
        let out = ta.add(&tb);
        self.push(out, vec![a.0, b.0], Box::new(|g| vec![g.clone(), g.clone()]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        assert_eq!(ta.shape(), tb.shape(), "mul: shape mismatch");
        let out = Tensor::from_parts(
            ta.shape(),
            ta.data()
                .iter()
                .zip(tb.data().iter())
                .map(|(&x, &y)| x * y)
                .collect(),
        );
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| {
                let da = Tensor::from_parts(
                    ta.shape(),
                    g.data()
                        .iter()
                        .zip(tb.data().iter())
                        .map(|(&gv, &y)| gv * y)
                        .collect(),
                );
                let db = Tensor::from_parts(
                    ta.shape(),
                    g.data()
                        .iter()
                        .zip(ta.data().iter())
                        .map(|(&gv, &x)| gv * x)
                        .collect(),
                );
                vec![da, db]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, vec![a.0], Box::new(move |g| vec![g.map(|v| v * c)]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a).clone();
        let out = ta.map(|v| v.max(T::zero()));
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                vec![Tensor::from_parts(
                    ta.shape(),
                    g.data()
                        .iter()
                        .zip(ta.data().iter())
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    // ----- linear algebra -----

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        assert_eq!(ta.shape().len(), 2, "matmul: lhs must be rank 2");
        assert_eq!(tb.shape().len(), 2, "matmul: rhs must be rank 2");
        let (m, k) = (ta.dim(0), ta.dim(1));
        let (k2, n) = (tb.dim(0), tb.dim(1));
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let out = Tensor::from_parts(&[m, n], ops::matmul(ta.data(), tb.data(), m, k, n));
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| {
                // dA = G B^T ; dB = A^T G
                let bt = ops::transpose(tb.data(), k, n);
                let da = ops::matmul(g.data(), &bt, m, n, k);
                let at = ops::transpose(ta.data(), m, k);
                let db = ops::matmul(&at, g.data(), k, m, n);
                vec![
                    Tensor::from_parts(&[m, k], da),
                    Tensor::from_parts(&[k, n], db),
                ]
            }),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a).clone();
        assert_eq!(ta.shape().len(), 2, "transpose: rank 2 only");
        let (m, n) = (ta.dim(0), ta.dim(1));
        let out = Tensor::from_parts(&[n, m], ops::transpose(ta.data(), m, n));
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| vec![Tensor::from_parts(&[m, n], ops::transpose(g.data(), n, m))]),
        )
    }

    // ----- row-structured ops over [n, d] matrices -----

    /// Adds a `[d]` vector to every row of `[n, d]`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Var {
        let (tx, tv) = (self.value(x).clone(), self.value(v).clone());
        let (n, d) = (tx.dim(0), tx.dim(1));
        assert_eq!(tv.len(), d, "add_row: vector length mismatch");
        let mut out = tx.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] += tv.data()[c];
            }
        }
        let out = Tensor::from_parts(tx.shape(), out);
        self.push(
            out,
            vec![x.0, v.0],
            Box::new(move |g| {
                let mut dv = vec![T::zero(); d];
                for r in 0..n {
                    for c in 0..d {
                        dv[c] += g.data()[r * d + c];
                    }
                }
                vec![g.clone(), Tensor::from_parts(&[d], dv)]
            }),
        )
    }

    /// Repeats a `[1, d]` row `n` times into `[n, d]`.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Var {
        let tv = self.value(v).clone();
        assert_eq!(tv.dim(0), 1, "broadcast_rows: input must be a single row");
        let d = tv.dim(1);
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(tv.data());
        }
        let out = Tensor::from_parts(&[n, d], out);
        self.push(
            out,
            vec![v.0],
            Box::new(move |g| {
                let mut dv = vec![T::zero(); d];
                for r in 0..n {
                    for c in 0..d {
                        dv[c] += g.data()[r * d + c];
                    }
                }
                vec![Tensor::from_parts(&[1, d], dv)]
            }),
        )
    }

    /// Multiplies every row of `[n, d]` elementwise with a `[1, d]` row.
    pub fn mul_rows(&mut self, x: Var, v: Var) -> Var {
        let (tx, tv) = (self.value(x).clone(), self.value(v).clone());
        let (n, d) = (tx.dim(0), tx.dim(1));
        assert_eq!(tv.shape(), &[1, d], "mul_rows: row shape mismatch");
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            for c in 0..d {
                out.push(tx.data()[r * d + c] * tv.data()[c]);
            }
        }
        let out = Tensor::from_parts(&[n, d], out);
        self.push(
            out,
            vec![x.0, v.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); n * d];
                let mut dv = vec![T::zero(); d];
                for r in 0..n {
                    for c in 0..d {
                        let gv = g.data()[r * d + c];
                        dx[r * d + c] = gv * tv.data()[c];
                        dv[c] += gv * tx.data()[r * d + c];
                    }
                }
                vec![
                    Tensor::from_parts(&[n, d], dx),
                    Tensor::from_parts(&[1, d], dv),
                ]
            }),
        )
    }

    /// Stacks `a` above `b`; both `[_, d]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let d = ta.dim(1);
        assert_eq!(tb.dim(1), d, "concat_rows: width mismatch");
        let (na, nb) = (ta.dim(0), tb.dim(0));
        let mut out = Vec::with_capacity((na + nb) * d);
        out.extend_from_slice(ta.data());
        out.extend_from_slice(tb.data());
        let out = Tensor::from_parts(&[na + nb, d], out);
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| {
                let ga = Tensor::from_parts(&[na, d], g.data()[..na * d].to_vec());
                let gb = Tensor::from_parts(&[nb, d], g.data()[na * d..].to_vec());
                vec![ga, gb]
            }),
        )
    }

    /// Gathers rows of `[n, d]` by index.
    pub fn select_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let tx = self.value(x).clone();
        let (n, d) = (tx.dim(0), tx.dim(1));
        assert!(idx.iter().all(|&i| i < n), "select_rows: index out of range");
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            out.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_parts(&[idx.len(), d], out);
        self.push(
            out,
            vec![x.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); n * d];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        dx[i * d + c] += g.data()[r * d + c];
                    }
                }
                vec![Tensor::from_parts(&[n, d], dx)]
            }),
        )
    }

    /// Columns `lo..hi` of `[n, d]`.
    pub fn slice_cols(&mut self, x: Var, lo: usize, hi: usize) -> Var {
        let tx = self.value(x).clone();
        let (n, d) = (tx.dim(0), tx.dim(1));
        assert!(lo < hi && hi <= d, "slice_cols: bad range");
        let w = hi - lo;
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&tx.data()[r * d + lo..r * d + hi]);
        }
        let out = Tensor::from_parts(&[n, w], out);
        self.push(
            out,
            vec![x.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); n * d];
                for r in 0..n {
                    dx[r * d + lo..r * d + hi].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                vec![Tensor::from_parts(&[n, d], dx)]
            }),
        )
    }

    /// Concatenates along columns; both `[n, _]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let n = ta.dim(0);
        assert_eq!(tb.dim(0), n, "concat_cols: row count mismatch");
        let (da, db) = (ta.dim(1), tb.dim(1));
        let mut out = Vec::with_capacity(n * (da + db));
        for r in 0..n {
            out.extend_from_slice(&ta.data()[r * da..(r + 1) * da]);
            out.extend_from_slice(&tb.data()[r * db..(r + 1) * db]);
        }
        let out = Tensor::from_parts(&[n, da + db], out);
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| {
                let w = da + db;
                let mut ga = vec![T::zero(); n * da];
                let mut gb = vec![T::zero(); n * db];
                for r in 0..n {
                    ga[r * da..(r + 1) * da].copy_from_slice(&g.data()[r * w..r * w + da]);
                    gb[r * db..(r + 1) * db].copy_from_slice(&g.data()[r * w + da..(r + 1) * w]);
                }
                vec![
                    Tensor::from_parts(&[n, da], ga),
                    Tensor::from_parts(&[n, db], gb),
                ]
            }),
        )
    }

    // ----- normalization and attention -----

    /// Row-wise layer normalization of `[n, d]` with `[d]` affine parameters.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let tx = self.value(x).clone();
        let tg = self.value(gamma).clone();
        let tb = self.value(beta).clone();
        let (n, d) = (tx.dim(0), tx.dim(1));
        assert_eq!(tg.len(), d, "layer_norm_rows: gamma length mismatch");
        assert_eq!(tb.len(), d, "layer_norm_rows: beta length mismatch");
        let eps = T::from_f64(ops::LAYER_NORM_EPS);
        let dn = T::from_f64(d as f64);

        let mut out = vec![T::zero(); n * d];
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        for r in 0..n {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().cloned().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = (var + eps).sqrt().recip();
            inv_std[r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                xhat[r * d + c] = xh;
                out[r * d + c] = tg.data()[c] * xh + tb.data()[c];
            }
        }
        let out = Tensor::from_parts(&[n, d], out);
        self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); n * d];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for r in 0..n {
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for c in 0..d {
                        dgamma[c] += grow[c] * xh[c];
                        dbeta[c] += grow[c];
                        let dxh = grow[c] * tg.data()[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                    }
                    let m1 = sum_dxh / dn;
                    let m2 = sum_dxh_xh / dn;
                    for c in 0..d {
                        let dxh = grow[c] * tg.data()[c];
                        dx[r * d + c] = inv_std[r] * (dxh - m1 - xh[c] * m2);
                    }
                }
                vec![
                    Tensor::from_parts(&[n, d], dx),
                    Tensor::from_parts(&[d], dgamma),
                    Tensor::from_parts(&[d], dbeta),
                ]
            }),
        )
    }

    /// Row-wise softmax of `[n, d]`.
    pub fn softmax_rows(&mut self, s: Var) -> Var {
        let ts = self.value(s).clone();
        let (n, d) = (ts.dim(0), ts.dim(1));
        let mut alpha = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &ts.data()[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for c in 0..d {
                let e = (row[c] - m).exp();
                alpha[r * d + c] = e;
                sum += e;
            }
            for c in 0..d {
                alpha[r * d + c] /= sum;
            }
        }
        let out = Tensor::from_parts(&[n, d], alpha.clone());
        self.push(
            out,
            vec![s.0],
            Box::new(move |g| {
                let mut ds = vec![T::zero(); n * d];
                for r in 0..n {
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let arow = &alpha[r * d..(r + 1) * d];
                    let dot: T = grow.iter().zip(arow.iter()).map(|(&gv, &av)| gv * av).sum();
                    for c in 0..d {
                        ds[r * d + c] = arow[c] * (grow[c] - dot);
                    }
                }
                vec![Tensor::from_parts(&[n, d], ds)]
            }),
        )
    }

    /// Row-wise temperature softmax restricted to `mask != 0` entries.
    ///
    /// Scores are divided by `tau = exp(log_tau)` before the softmax; rows of
    /// the output are zero outside the mask and sum to 1 inside it. Every row
    /// of the mask must contain at least one nonzero entry.
    pub fn masked_softmax_rows(&mut self, s: Var, log_tau: Var, mask: &Tensor<T>) -> Var {
        let ts = self.value(s).clone();
        let lt = self.value(log_tau).item();
        let (n, d) = (ts.dim(0), ts.dim(1));
        assert_eq!(mask.shape(), &[n, d], "masked_softmax_rows: mask shape");
        let inv_tau = (-lt).exp();

        let mut scaled = vec![T::zero(); n * d];
        let mut alpha = vec![T::zero(); n * d];
        for r in 0..n {
            let mut m = T::neg_infinity();
            for c in 0..d {
                if mask.data()[r * d + c] != T::zero() {
                    let u = ts.data()[r * d + c] * inv_tau;
                    scaled[r * d + c] = u;
                    m = m.max(u);
                }
            }
            assert!(m.is_finite(), "masked_softmax_rows: empty mask row {r}");
            let mut sum = T::zero();
            for c in 0..d {
                if mask.data()[r * d + c] != T::zero() {
                    let e = (scaled[r * d + c] - m).exp();
                    alpha[r * d + c] = e;
                    sum += e;
                }
            }
            for c in 0..d {
                alpha[r * d + c] /= sum;
            }
        }
        let out = Tensor::from_parts(&[n, d], alpha.clone());
        let mask = mask.clone();
        self.push(
            out,
            vec![s.0, log_tau.0],
            Box::new(move |g| {
                let mut ds = vec![T::zero(); n * d];
                let mut dlt = T::zero();
                for r in 0..n {
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let arow = &alpha[r * d..(r + 1) * d];
                    let dot: T = grow.iter().zip(arow.iter()).map(|(&gv, &av)| gv * av).sum();
                    for c in 0..d {
                        if mask.data()[r * d + c] != T::zero() {
                            let du = arow[c] * (grow[c] - dot);
                            ds[r * d + c] = du * inv_tau;
                            // u = s * exp(-log_tau) so du/dlog_tau = -u
                            dlt -= du * scaled[r * d + c];
                        }
                    }
                }
                vec![Tensor::from_parts(&[n, d], ds), Tensor::scalar(dlt)]
            }),
        )
    }

    // ----- convolutional ops over [B, C, H, W] -----

    /// 2-D convolution with bias. `x: [B, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`,
    /// `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let tx = self.value(x).clone();
        let tw = self.value(w).clone();
        let tb = self.value(b).clone();
        let (bs, cin, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        let (cout, cin2, kh, kw) = (tw.dim(0), tw.dim(1), tw.dim(2), tw.dim(3));
        assert_eq!(cin, cin2, "conv2d: channel mismatch");
        assert_eq!(tb.len(), cout, "conv2d: bias length mismatch");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel too large");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let mut out = vec![T::zero(); bs * cout * ho * wo];
        for bi in 0..bs {
            for co in 0..cout {
                let obase = (bi * cout + co) * ho * wo;
                out[obase..obase + ho * wo].fill(tb.data()[co]);
                for ci in 0..cin {
                    let xbase = (bi * cin + ci) * h * wd;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = tw.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + iy as usize * wd;
                                let orow = obase + oy * wo;
                                for ox in 0..wo {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    out[orow + ox] += wv * tx.data()[xrow + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_parts(&[bs, cout, ho, wo], out);
        self.push(
            out,
            vec![x.0, w.0, b.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); bs * cin * h * wd];
                let mut dw = vec![T::zero(); cout * cin * kh * kw];
                let mut db = vec![T::zero(); cout];
                for bi in 0..bs {
                    for co in 0..cout {
                        let obase = (bi * cout + co) * ho * wo;
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = g.data()[obase + oy * wo + ox];
                                if gv == T::zero() {
                                    continue;
                                }
                                db[co] += gv;
                                for ci in 0..cin {
                                    let xbase = (bi * cin + ci) * h * wd;
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            let xi = xbase + iy as usize * wd + ix as usize;
                                            let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                            dw[wi] += gv * tx.data()[xi];
                                            dx[xi] += gv * tw.data()[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_parts(&[bs, cin, h, wd], dx),
                    Tensor::from_parts(&[cout, cin, kh, kw], dw),
                    Tensor::from_parts(&[cout], db),
                ]
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let tx = self.value(x).clone();
        let (bs, c, h, w) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); bs * c * h2 * w2];
        for p in 0..bs * c {
            let ibase = p * h * w;
            let obase = p * h2 * w2;
            for i in 0..h {
                for j in 0..w {
                    let v = tx.data()[ibase + i * w + j];
                    let o = obase + 2 * i * w2 + 2 * j;
                    out[o] = v;
                    out[o + 1] = v;
                    out[o + w2] = v;
                    out[o + w2 + 1] = v;
                }
            }
        }
        let out = Tensor::from_parts(&[bs, c, h2, w2], out);
        self.push(
            out,
            vec![x.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); bs * c * h * w];
                for p in 0..bs * c {
                    let ibase = p * h * w;
                    let obase = p * h2 * w2;
                    for i in 0..h {
                        for j in 0..w {
                            let o = obase + 2 * i * w2 + 2 * j;
                            dx[ibase + i * w + j] =
                                g.data()[o] + g.data()[o + 1] + g.data()[o + w2] + g.data()[o + w2 + 1];
                        }
                    }
                }
                vec![Tensor::from_parts(&[bs, c, h, w], dx)]
            }),
        )
    }

    /// Average pooling with a square window and matching stride:
    /// `[B, C, H, W] -> [B, C, H/g, W/g]`.
    pub fn avg_pool(&mut self, x: Var, g: usize) -> Var {
        let tx = self.value(x).clone();
        let (bs, c, h, w) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        assert!(g > 0 && h % g == 0 && w % g == 0, "avg_pool: window must tile the input");
        let (ho, wo) = (h / g, w / g);
        let area = T::from_f64((g * g) as f64);
        let mut out = vec![T::zero(); bs * c * ho * wo];
        for p in 0..bs * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut sum = T::zero();
                    for dy in 0..g {
                        for dx in 0..g {
                            sum += tx.data()[p * h * w + (oy * g + dy) * w + ox * g + dx];
                        }
                    }
                    out[p * ho * wo + oy * wo + ox] = sum / area;
                }
            }
        }
        let out = Tensor::from_parts(&[bs, c, ho, wo], out);
        self.push(
            out,
            vec![x.0],
            Box::new(move |gr| {
                let mut dx = vec![T::zero(); bs * c * h * w];
                for p in 0..bs * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = gr.data()[p * ho * wo + oy * wo + ox] / area;
                            for dy in 0..g {
                                for dx2 in 0..g {
                                    dx[p * h * w + (oy * g + dy) * w + ox * g + dx2] = gv;
                                }
                            }
                        }
                    }
                }
                vec![Tensor::from_parts(&[bs, c, h, w], dx)]
            }),
        )
    }

    /// Mean over the spatial dims: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let tx = self.value(x).clone();
        let (bs, c, h, w) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        let area = T::from_f64((h * w) as f64);
        let mut out = vec![T::zero(); bs * c];
        for p in 0..bs * c {
            out[p] = tx.data()[p * h * w..(p + 1) * h * w].iter().cloned().sum::<T>() / area;
        }
        let out = Tensor::from_parts(&[bs, c], out);
        self.push(
            out,
            vec![x.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); bs * c * h * w];
                for p in 0..bs * c {
                    let gv = g.data()[p] / area;
                    dx[p * h * w..(p + 1) * h * w].fill(gv);
                }
                vec![Tensor::from_parts(&[bs, c, h, w], dx)]
            }),
        )
    }

    /// Concatenates along the channel dim; `[B, C1, H, W]` + `[B, C2, H, W]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let (bs, c1, h, w) = (ta.dim(0), ta.dim(1), ta.dim(2), ta.dim(3));
        let c2 = tb.dim(1);
        assert_eq!(tb.dim(0), bs, "concat_channels: batch mismatch");
        assert_eq!((tb.dim(2), tb.dim(3)), (h, w), "concat_channels: spatial mismatch");
        let plane = h * w;
        let mut out = Vec::with_capacity(bs * (c1 + c2) * plane);
        for bi in 0..bs {
            out.extend_from_slice(&ta.data()[bi * c1 * plane..(bi + 1) * c1 * plane]);
            out.extend_from_slice(&tb.data()[bi * c2 * plane..(bi + 1) * c2 * plane]);
        }
        let out = Tensor::from_parts(&[bs, c1 + c2, h, w], out);
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| {
                let mut ga = vec![T::zero(); bs * c1 * plane];
                let mut gb = vec![T::zero(); bs * c2 * plane];
                let stride = (c1 + c2) * plane;
                for bi in 0..bs {
                    ga[bi * c1 * plane..(bi + 1) * c1 * plane]
                        .copy_from_slice(&g.data()[bi * stride..bi * stride + c1 * plane]);
                    gb[bi * c2 * plane..(bi + 1) * c2 * plane]
                        .copy_from_slice(&g.data()[bi * stride + c1 * plane..(bi + 1) * stride]);
                }
                vec![
                    Tensor::from_parts(&[bs, c1, h, w], ga),
                    Tensor::from_parts(&[bs, c2, h, w], gb),
                ]
            }),
        )
    }

    /// Flattens a `[1, C, h, w]` map to `[h*w, C]` token rows in row-major
    /// spatial order.
    pub fn tokens_from_map(&mut self, x: Var) -> Var {
        let tx = self.value(x).clone();
        assert_eq!(tx.dim(0), 1, "tokens_from_map: batch must be 1");
        let (c, h, w) = (tx.dim(1), tx.dim(2), tx.dim(3));
        let mut out = vec![T::zero(); h * w * c];
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[(i * w + j) * c + ci] = tx.data()[ci * h * w + i * w + j];
                }
            }
        }
        let out = Tensor::from_parts(&[h * w, c], out);
        self.push(
            out,
            vec![x.0],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            dx[ci * h * w + i * w + j] = g.data()[(i * w + j) * c + ci];
                        }
                    }
                }
                vec![Tensor::from_parts(&[1, c, h, w], dx)]
            }),
        )
    }

    /// Inverse of [`Tape::tokens_from_map`]: `[h*w, C] -> [1, C, h, w]`.
    pub fn map_from_tokens(&mut self, z: Var, h: usize, w: usize) -> Var {
        let tz = self.value(z).clone();
        assert_eq!(tz.dim(0), h * w, "map_from_tokens: token count mismatch");
        let c = tz.dim(1);
        let mut out = vec![T::zero(); c * h * w];
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[ci * h * w + i * w + j] = tz.data()[(i * w + j) * c + ci];
                }
            }
        }
        let out = Tensor::from_parts(&[1, c, h, w], out);
        self.push(
            out,
            vec![z.0],
            Box::new(move |g| {
                let mut dz = vec![T::zero(); h * w * c];
                for ci in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            dz[(i * w + j) * c + ci] = g.data()[ci * h * w + i * w + j];
                        }
                    }
                }
                vec![Tensor::from_parts(&[h * w, c], dz)]
            }),
        )
    }

    /// Mean pixel-wise cross-entropy of `logits: [B, k, H, W]` against class
    /// indices (`B*H*W` values, row-major over batch then rows).
    ///
    /// Callers must have validated `targets < k`.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[u8]) -> Var {
        let tl = self.value(logits).clone();
        let (bs, k, h, w) = (tl.dim(0), tl.dim(1), tl.dim(2), tl.dim(3));
        let plane = h * w;
        assert_eq!(targets.len(), bs * plane, "cross_entropy_mean: target count");
        debug_assert!(targets.iter().all(|&t| (t as usize) < k));
        let npix = T::from_f64((bs * plane) as f64);

        let mut total = T::zero();
        // per-pixel log-sum-exp, reused by the backward pass
        let mut lse = vec![T::zero(); bs * plane];
        for bi in 0..bs {
            for p in 0..plane {
                let mut m = T::neg_infinity();
                for c in 0..k {
                    m = m.max(tl.data()[(bi * k + c) * plane + p]);
                }
                let mut sum = T::zero();
                for c in 0..k {
                    sum += (tl.data()[(bi * k + c) * plane + p] - m).exp();
                }
                let l = m + sum.ln();
                lse[bi * plane + p] = l;
                let t = targets[bi * plane + p] as usize;
                total += l - tl.data()[(bi * k + t) * plane + p];
            }
        }
        let out = Tensor::scalar(total / npix);
        let targets = targets.to_vec();
        self.push(
            out,
            vec![logits.0],
            Box::new(move |g| {
                let gv = g.item() / npix;
                let mut dl = vec![T::zero(); bs * k * plane];
                for bi in 0..bs {
                    for p in 0..plane {
                        let t = targets[bi * plane + p] as usize;
                        let l = lse[bi * plane + p];
                        for c in 0..k {
                            let sm = (tl.data()[(bi * k + c) * plane + p] - l).exp();
                            let ind = if c == t { T::one() } else { T::zero() };
                            dl[(bi * k + c) * plane + p] = (sm - ind) * gv;
                        }
                    }
                }
                vec![Tensor::from_parts(&[bs, k, plane / w, w], dl)]
            }),
        )
    }

    /// Mean of scalar nodes.
    pub fn mean_of(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "mean_of: no inputs");
        let n = T::from_f64(vars.len() as f64);
        let total: T = vars.iter().map(|&v| self.value(v).item()).sum();
        let out = Tensor::scalar(total / n);
        let count = vars.len();
        self.push(
            out,
            vars.iter().map(|v| v.0).collect(),
            Box::new(move |g| vec![Tensor::scalar(g.item() / n); count]),
        )
    }

    // ----- backward -----

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every node that influences it.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_parts(self.value(root).shape(), vec![T::one()]));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = &self.nodes[id];
            if let Some(back) = &node.backward {
                let parent_grads = back(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    grads[p] = Some(match grads[p].take() {
                        Some(acc) => acc.add(&pg),
                        None => pg,
                    });
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient at `v`, if `v` influenced the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient at `v`, or zeros of the given shape when `v` played no role.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}
