//! 2-D convolution by per-image im2col + GEMM.


use super::Var;
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, pad: usize) -> Self {
        ConvSpec { stride, pad }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    /// A 1x1 stride-1 unpadded conv needs no patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[ox0, ox1)` whose tap `kj` lands inside the image.
    #[inline]
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let off = kj as isize - self.pad as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = ((self.w as isize - 1 - off).div_euclid(s) + 1).clamp(0, self.ow as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    #[inline]
    fn source_row(&self, ki: usize, oy: usize) -> Option<usize> {
        let y = (oy * self.stride + ki) as isize - self.pad as isize;
        (y >= 0 && (y as usize) < self.h).then_some(y as usize)
    }
}

/// Patch matrix `[C * kh * kw, oh * ow]` of one image; every entry is written.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let (plane, hw) = (g.plane(), g.in_plane());
    for c in 0..g.c {
        let src = &x[c * hw..(c + 1) * hw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let (lo, hi) = g.valid_cols(kj);
                let x0 = (lo * g.stride + kj) as isize - g.pad as isize;
                for oy in 0..g.oh {
                    let dst = &mut cols[r * plane + oy * g.ow..r * plane + (oy + 1) * g.ow];
                    let Some(y) = g.source_row(ki, oy) else {
                        dst.fill(0.0);
                        continue;
                    };
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    if lo < hi {
                        let row = &src[y * g.w..(y + 1) * g.w];
                        let x0 = x0 as usize;
                        if g.stride == 1 {
                            dst[lo..hi].copy_from_slice(&row[x0..x0 + hi - lo]);
                        } else {
                            for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = row[x0 + k * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one image gradient.
fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let (plane, hw) = (g.plane(), g.in_plane());
    for c in 0..g.c {
        let dst = &mut dx[c * hw..(c + 1) * hw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let (lo, hi) = g.valid_cols(kj);
                if lo >= hi {
                    continue;
                }
                let x0 = ((lo * g.stride + kj) as isize - g.pad as isize) as usize;
                for oy in 0..g.oh {
                    let Some(y) = g.source_row(ki, oy) else { continue };
                    let src = &cols[r * plane + oy * g.ow + lo..r * plane + oy * g.ow + hi];
                    let row = &mut dst[y * g.w..(y + 1) * g.w];
                    if g.stride == 1 {
                        for (d, s) in row[x0..x0 + hi - lo].iter_mut().zip(src) {
                            *d += s;
                        }
                    } else {
                        for (k, s) in src.iter().enumerate() {
                            row[x0 + k * g.stride] += s;
                        }
                    }
                }
            }
        }
    }
}

impl<'g> Var<'g> {
    /// `x[N, C, H, W]` convolved with `weight[O, C, kh, kw]` plus `bias[O]`.
    pub fn conv2d(self, weight: Var<'g>, bias: Var<'g>, spec: ConvSpec) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let b = bias.value();
        let (xs, ws) = (x.shape(), w.shape());
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be OCkk, got {ws:?}");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
        assert_eq!(b.len(), ws[0], "conv2d bias length");
        let (h, wd) = (xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        assert!(h + 2 * spec.pad >= kh && wd + 2 * spec.pad >= kw, "kernel larger than padded input");
        let geo = Geometry {
            n: xs[0],
            c: xs[1],
            h,
            w: wd,
            kh,
            kw,
            oh: (h + 2 * spec.pad - kh) / spec.stride + 1,
            ow: (wd + 2 * spec.pad - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.pad,
        };
        let o = ws[0];
        let (rows, plane, hw) = (geo.rows(), geo.plane(), geo.in_plane());
        let mut y = vec![0.0; geo.n * o * plane];
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; rows * plane] };
        for n in 0..geo.n {
            let xn = &x.data()[n * geo.c * hw..(n + 1) * geo.c * hw];
            let yn = &mut y[n * o * plane..(n + 1) * o * plane];
            for (oc, chunk) in yn.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[oc]);
            }
            let patches: &[f64] = if geo.is_pointwise() {
                xn
            } else {
                im2col(xn, &geo, &mut cols);
                &cols
            };
            gemm(o, rows, plane, 1.0, w.data(), (rows as isize, 1), patches, (plane as isize, 1), 1.0, yn);
        }
        let out_shape = vec![geo.n, o, geo.oh, geo.ow];
        let w_shape = ws.to_vec();
        let x_shape = xs.to_vec();
        self.graph.push(
            Tensor::new(out_shape, y),
            &[self, weight, bias],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut dx = need[0].then(|| vec![0.0; geo.n * geo.c * hw]);
                let mut dw = need[1].then(|| vec![0.0; o * rows]);
                let mut cols = vec![0.0; rows * plane];
                for n in 0..geo.n {
                    let gn = &gd[n * o * plane..(n + 1) * o * plane];
                    if let Some(dw) = dw.as_mut() {
                        let xn = &x.data()[n * geo.c * hw..(n + 1) * geo.c * hw];
                        let patches: &[f64] = if geo.is_pointwise() {
                            xn
                        } else {
                            im2col(xn, &geo, &mut cols);
                            &cols
                        };
                        gemm(o, plane, rows, 1.0, gn, (plane as isize, 1), patches, (1, plane as isize), 1.0, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxn = &mut dx[n * geo.c * hw..(n + 1) * geo.c * hw];
                        if geo.is_pointwise() {
                            gemm(rows, o, plane, 1.0, w.data(), (1, rows as isize), gn, (plane as isize, 1), 1.0, dxn);
                        } else {
                            gemm(rows, o, plane, 1.0, w.data(), (1, rows as isize), gn, (plane as isize, 1), 0.0, &mut cols);
                            col2im(&cols, &geo, dxn);
                        }
                    }
                }
                let db = need[2].then(|| {
                    let mut db = vec![0.0; o];
                    for (k, chunk) in gd.chunks(plane).enumerate() {
                        db[k % o] += chunk.iter().sum::<f64>();
                    }
                    Tensor::new(vec![o], db)
                });
                vec![
                    dx.map(|d| Tensor::new(x_shape.clone(), d)),
                    dw.map(|d| Tensor::new(w_shape.clone(), d)),
                    db,
                ]
            }),
        )
    }
}
