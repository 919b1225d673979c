use std::sync::Arc;

use super::{Graph, Var};
use crate::tensor::{gemm, Tensor};

/// Per-channel batch statistics produced by [`Var::normalize`].
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Split `[N, C, rest..]` into `(N, C, prod(rest))`.
fn channel_dims(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "expected at least 2 dims, got {shape:?}");
    (shape[0], shape[1], shape[2..].iter().product())
}

impl<'g> Var<'g> {
    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'g> {
        let x = self.value();
        let y = Arc::new(x.map(f));
        let y_out = (*y).clone();
        self.graph.push(
            y_out,
            &[self],
            Box::new(move |g, _| {
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *d *= df(xi, yi);
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'g> {
        self.unary(stable_softplus, |x, _| sigmoid(x))
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn sqr(self) -> Var<'g> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn scale(self, k: f64) -> Var<'g> {
        let y = self.value().map(|x| k * x);
        self.graph
            .push(y, &[self], Box::new(move |g, _| vec![Some(g.map(|v| k * v))]))
    }

    pub fn add_scalar(self, k: f64) -> Var<'g> {
        let y = self.value().map(|x| x + k);
        self.graph.push(y, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let y = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.push(
            y,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let y = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.push(
            y,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let a = self.value();
        let b = other.value();
        let y = a.zip_map(&b, |x, z| x * z);
        self.graph.push(
            y,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&b, |gv, bv| gv * bv)),
                    need[1].then(|| g.zip_map(&a, |gv, av| gv * av)),
                ]
            }),
        )
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::scalar(x.sum()),
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape);
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| vec![Some(g.clone().reshape(&old))]),
        )
    }

    /// `x[n, c, ..] + b[c]`.
    pub fn add_channel(self, bias: Var<'g>) -> Var<'g> {
        let x = self.value();
        let b = bias.value();
        let (n, c, s) = channel_dims(x.shape());
        assert_eq!(b.len(), c, "channel bias length");
        let mut y = (*x).clone();
        for (i, chunk) in y.data_mut().chunks_mut(s).enumerate() {
            let bv = b.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let bshape = b.shape().to_vec();
        self.graph.push(
            y,
            &[self, bias],
            Box::new(move |g, need| {
                let db = need[1].then(|| {
                    let mut db = vec![0.0; c];
                    for (i, chunk) in g.data().chunks(s).enumerate() {
                        db[i % c] += chunk.iter().sum::<f64>();
                    }
                    debug_assert_eq!(g.len(), n * c * s);
                    Tensor::new(bshape.clone(), db)
                });
                vec![need[0].then(|| g.clone()), db]
            }),
        )
    }

    /// `x[n, c, ..] * w[c]`.
    pub fn mul_channel(self, weight: Var<'g>) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let (_, c, s) = channel_dims(x.shape());
        assert_eq!(w.len(), c, "channel weight length");
        let mut y = (*x).clone();
        for (i, chunk) in y.data_mut().chunks_mut(s).enumerate() {
            let wv = w.data()[i % c];
            chunk.iter_mut().for_each(|v| *v *= wv);
        }
        let wshape = w.shape().to_vec();
        self.graph.push(
            y,
            &[self, weight],
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut dx = g.clone();
                    for (i, chunk) in dx.data_mut().chunks_mut(s).enumerate() {
                        let wv = w.data()[i % c];
                        chunk.iter_mut().for_each(|v| *v *= wv);
                    }
                    dx
                });
                let dw = need[1].then(|| {
                    let mut dw = vec![0.0; c];
                    for (i, (gc, xc)) in g.data().chunks(s).zip(x.data().chunks(s)).enumerate() {
                        dw[i % c] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                    }
                    Tensor::new(wshape.clone(), dw)
                });
                vec![dx, dw]
            }),
        )
    }

    /// Mean over all trailing axes: `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(self) -> Var<'g> {
        let x = self.value();
        let (n, c, s) = channel_dims(x.shape());
        let data: Vec<f64> = x.data().chunks(s).map(|ch| ch.iter().sum::<f64>() / s as f64).collect();
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::new(vec![n, c], data),
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (chunk, &gv) in dx.data_mut().chunks_mut(s).zip(g.data()) {
                    chunk.iter_mut().for_each(|v| *v = gv / s as f64);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Concatenate `[N, C1, ..]` and `[N, C2, ..]` along the channel axis.
    pub fn concat_channels(self, other: Var<'g>) -> Var<'g> {
        let a = self.value();
        let b = other.value();
        let (n, ca, s) = channel_dims(a.shape());
        let (nb, cb, sb) = channel_dims(b.shape());
        assert!(n == nb && s == sb, "concat_channels shape mismatch {:?} vs {:?}", a.shape(), b.shape());
        let (ra, rb) = (ca * s, cb * s);
        let mut data = Vec::with_capacity(n * (ra + rb));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * ra..(i + 1) * ra]);
            data.extend_from_slice(&b.data()[i * rb..(i + 1) * rb]);
        }
        let mut shape = a.shape().to_vec();
        shape[1] = ca + cb;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.graph.push(
            Tensor::new(shape, data),
            &[self, other],
            Box::new(move |g, _| {
                let mut da = Vec::with_capacity(n * ra);
                let mut db = Vec::with_capacity(n * rb);
                for row in g.data().chunks(ra + rb) {
                    da.extend_from_slice(&row[..ra]);
                    db.extend_from_slice(&row[ra..]);
                }
                vec![Some(Tensor::new(sa.clone(), da)), Some(Tensor::new(sb.clone(), db))]
            }),
        )
    }

    /// Gather leading-axis rows; repeated indices accumulate in the backward pass.
    pub fn select_rows(self, idx: &[usize]) -> Var<'g> {
        let x = self.value();
        let y = x.select_rows(idx);
        let idx = idx.to_vec();
        let shape = x.shape().to_vec();
        let r = x.row_len();
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (k, &i) in idx.iter().enumerate() {
                    let src = &g.data()[k * r..(k + 1) * r];
                    for (d, s) in dx.data_mut()[i * r..(i + 1) * r].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Gather flat elements into a 1-D vector.
    pub fn take(self, idx: &[usize]) -> Var<'g> {
        let x = self.value();
        let y = Tensor::new(vec![idx.len()], idx.iter().map(|&i| x.data()[i]).collect());
        let idx = idx.to_vec();
        let shape = x.shape().to_vec();
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (&i, &gv) in idx.iter().zip(g.data()) {
                    dx.data_mut()[i] += gv;
                }
                vec![Some(dx)]
            }),
        )
    }

    /// `a[M, K] @ b[N, K]^T -> [M, N]`.
    pub fn matmul_nt(self, other: Var<'g>) -> Var<'g> {
        let a = self.value();
        let b = other.value();
        assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul_nt expects matrices");
        let (m, k) = (a.dim(0), a.dim(1));
        let (n, kb) = (b.dim(0), b.dim(1));
        assert_eq!(k, kb, "matmul_nt inner dims");
        let mut y = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.data(), (k as isize, 1), b.data(), (1, k as isize), 0.0, &mut y);
        self.graph.push(
            Tensor::new(vec![m, n], y),
            &[self, other],
            Box::new(move |g, need| {
                let da = need[0].then(|| {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g.data(), (n as isize, 1), b.data(), (k as isize, 1), 0.0, &mut da);
                    Tensor::new(vec![m, k], da)
                });
                let db = need[1].then(|| {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, 1.0, g.data(), (1, n as isize), a.data(), (k as isize, 1), 0.0, &mut db);
                    Tensor::new(vec![n, k], db)
                });
                vec![da, db]
            }),
        )
    }

    /// Fully connected layer: `x[N, in] @ w[out, in]^T + b[out]`.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Var<'g> {
        self.matmul_nt(weight).add_channel(bias)
    }

    /// Scale each row of `[N, F]` to unit Euclidean norm. Callers must reject zero rows.
    pub fn l2_normalize_rows(self) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.shape().len(), 2, "l2_normalize_rows expects a matrix");
        let f = x.dim(1);
        let norms: Vec<f64> = x.data().chunks(f).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut y = (*x).clone();
        for (row, &nrm) in y.data_mut().chunks_mut(f).zip(&norms) {
            row.iter_mut().for_each(|v| *v /= nrm);
        }
        let y_saved = Arc::new(y.clone());
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = g.clone();
                for ((drow, yrow), &nrm) in dx.data_mut().chunks_mut(f).zip(y_saved.data().chunks(f)).zip(&norms) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (d, &yv) in drow.iter_mut().zip(yrow) {
                        *d = (*d - yv * dot) / nrm;
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Zero-mean, unit-variance normalization of a tensor viewed as `[A, C, B]`,
    /// with statistics per `C` over `A x B` (biased variance).
    pub fn normalize(self, groups: (usize, usize, usize), eps: f64) -> (Var<'g>, NormStats) {
        let x = self.value();
        let (a, c, b) = groups;
        assert_eq!(a * c * b, x.len(), "normalize grouping");
        let count = (a * b) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, chunk) in x.data().chunks(b).enumerate() {
            mean[i % c] += chunk.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (i, chunk) in x.data().chunks(b).enumerate() {
            let m = mean[i % c];
            var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut y = (*x).clone();
        for (i, chunk) in y.data_mut().chunks_mut(b).enumerate() {
            let (m, s) = (mean[i % c], inv_std[i % c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
        let y_saved = Arc::new(y.clone());
        let out = self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut g_mean = vec![0.0; c];
                let mut gy_mean = vec![0.0; c];
                for (i, (gc, yc)) in g.data().chunks(b).zip(y_saved.data().chunks(b)).enumerate() {
                    g_mean[i % c] += gc.iter().sum::<f64>();
                    gy_mean[i % c] += gc.iter().zip(yc).map(|(p, q)| p * q).sum::<f64>();
                }
                g_mean.iter_mut().for_each(|v| *v /= count);
                gy_mean.iter_mut().for_each(|v| *v /= count);
                let mut dx = g.clone();
                for (i, (dc, yc)) in dx.data_mut().chunks_mut(b).zip(y_saved.data().chunks(b)).enumerate() {
                    let k = i % c;
                    for (d, &yv) in dc.iter_mut().zip(yc) {
                        *d = inv_std[k] * (*d - g_mean[k] - yv * gy_mean[k]);
                    }
                }
                vec![Some(dx)]
            }),
        );
        (out, NormStats { mean, var })
    }

    /// Mean softmax cross-entropy of `[N, C]` logits against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'g> {
        let z = self.value();
        assert_eq!(z.shape().len(), 2, "cross_entropy expects [N, C] logits");
        let (n, c) = (z.dim(0), z.dim(1));
        assert_eq!(labels.len(), n, "one label per row");
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, row) in z.data().chunks(c).enumerate() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let se: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + se.ln();
            total += lse - row[labels[i]];
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let labels = labels.to_vec();
        self.graph.push(
            Tensor::scalar(total / n as f64),
            &[self],
            Box::new(move |g, _| {
                let k = g.item() / n as f64;
                let mut dz = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    dz[i * c + l] -= 1.0;
                }
                dz.iter_mut().for_each(|v| *v *= k);
                vec![Some(Tensor::new(vec![n, c], dz))]
            }),
        )
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample2x(self) -> Var<'g> {
        let x = self.value();
        let s = x.shape();
        assert_eq!(s.len(), 4, "upsample2x expects NCHW");
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (h2, w2) = (2 * h, 2 * w);
        let mut y = vec![0.0; nc * h2 * w2];
        for p in 0..nc {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let in_shape = s.to_vec();
        let out_shape = vec![s[0], s[1], h2, w2];
        self.graph.push(
            Tensor::new(out_shape, y),
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&in_shape);
                for p in 0..nc {
                    let src = &g.data()[p * h2 * w2..(p + 1) * h2 * w2];
                    let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dst[(i / 2) * w + j / 2] += src[i * w2 + j];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}

/// Concatenate vars along the leading axis.
pub fn concat_rows<'g>(graph: &'g Graph, parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty());
    let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
    let y = Tensor::concat_rows(&refs);
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    graph.push(
        y,
        parts,
        Box::new(move |g, need| {
            let mut offset = 0;
            shapes
                .iter()
                .zip(need)
                .map(|(s, &nd)| {
                    let len: usize = s.iter().product();
                    let part = nd.then(|| Tensor::new(s.clone(), g.data()[offset..offset + len].to_vec()));
                    offset += len;
                    part
                })
                .collect()
        }),
    )
}

impl Graph {
    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Var<'g> {
        concat_rows(self, parts)
    }
}
