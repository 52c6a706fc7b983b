//! Raw numeric kernels over NCHW buffers. No graph bookkeeping lives here.

/// Geometry of a 2-D convolution with square stride and symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < kernel || self.stride == 0 {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Output positions `o` in `[lo, hi)` whose tap `k` lands inside `[0, input)`.
#[inline]
fn valid_range(input: usize, output: usize, k: usize, g: ConvGeom) -> (usize, usize) {
    let (s, p) = (g.stride as isize, g.pad as isize);
    let k = k as isize;
    // need 0 <= o*s + k - p < input
    let lo = if p - k > 0 { (p - k + s - 1) / s } else { 0 };
    let hi_excl = (input as isize + p - k + s - 1) / s;
    let hi = hi_excl.clamp(0, output as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

pub struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

/// `out[n,co] = sum_ci x[n,ci] (*) w[co,ci]`
pub fn conv2d(x: &[f64], w: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.co * d.ho * d.wo];
    let (s, p) = (g.stride, g.pad);
    for n in 0..d.n {
        for co in 0..d.co {
            let o = &mut out[(n * d.co + co) * d.ho * d.wo..][..d.ho * d.wo];
            for ci in 0..d.ci {
                let xp = &x[(n * d.ci + ci) * d.h * d.w..][..d.h * d.w];
                let wp = &w[(co * d.ci + ci) * d.kh * d.kw..][..d.kh * d.kw];
                for kh in 0..d.kh {
                    let (oh0, oh1) = valid_range(d.h, d.ho, kh, g);
                    for kw in 0..d.kw {
                        let wv = wp[kh * d.kw + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow0, ow1) = valid_range(d.w, d.wo, kw, g);
                        if ow0 >= ow1 {
                            continue;
                        }
                        for oh in oh0..oh1 {
                            let ih = oh * s + kh - p;
                            let orow = &mut o[oh * d.wo..][ow0..ow1];
                            let xrow = &xp[ih * d.w..(ih + 1) * d.w];
                            if s == 1 {
                                let xs = &xrow[ow0 + kw - p..ow1 + kw - p];
                                for (ov, &xv) in orow.iter_mut().zip(xs) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * xrow[(ow0 + j) * s + kw - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv2d`] with respect to its input: scatters `gout` back
/// through the kernel into an `[n, ci, h, w]` buffer.
pub fn conv2d_input_grad(gout: &[f64], w: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let mut gx = vec![0.0; d.n * d.ci * d.h * d.w];
    let (s, p) = (g.stride, g.pad);
    for n in 0..d.n {
        for co in 0..d.co {
            let gp = &gout[(n * d.co + co) * d.ho * d.wo..][..d.ho * d.wo];
            for ci in 0..d.ci {
                let xp = &mut gx[(n * d.ci + ci) * d.h * d.w..][..d.h * d.w];
                let wp = &w[(co * d.ci + ci) * d.kh * d.kw..][..d.kh * d.kw];
                for kh in 0..d.kh {
                    let (oh0, oh1) = valid_range(d.h, d.ho, kh, g);
                    for kw in 0..d.kw {
                        let wv = wp[kh * d.kw + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow0, ow1) = valid_range(d.w, d.wo, kw, g);
                        if ow0 >= ow1 {
                            continue;
                        }
                        for oh in oh0..oh1 {
                            let ih = oh * s + kh - p;
                            let grow = &gp[oh * d.wo..][ow0..ow1];
                            let xrow = &mut xp[ih * d.w..(ih + 1) * d.w];
                            if s == 1 {
                                let xs = &mut xrow[ow0 + kw - p..ow1 + kw - p];
                                for (xv, &gv) in xs.iter_mut().zip(grow) {
                                    *xv += wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    xrow[(ow0 + j) * s + kw - p] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Adjoint of [`conv2d`] with respect to its kernel: correlates the input with
/// `gout` into a `[co, ci, kh, kw]` buffer.
pub fn conv2d_weight_grad(x: &[f64], gout: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let mut gw = vec![0.0; d.co * d.ci * d.kh * d.kw];
    let (s, p) = (g.stride, g.pad);
    for n in 0..d.n {
        for co in 0..d.co {
            let gp = &gout[(n * d.co + co) * d.ho * d.wo..][..d.ho * d.wo];
            for ci in 0..d.ci {
                let xp = &x[(n * d.ci + ci) * d.h * d.w..][..d.h * d.w];
                let wp = &mut gw[(co * d.ci + ci) * d.kh * d.kw..][..d.kh * d.kw];
                for kh in 0..d.kh {
                    let (oh0, oh1) = valid_range(d.h, d.ho, kh, g);
                    for kw in 0..d.kw {
                        let (ow0, ow1) = valid_range(d.w, d.wo, kw, g);
                        if ow0 >= ow1 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oh in oh0..oh1 {
                            let ih = oh * s + kh - p;
                            let grow = &gp[oh * d.wo..][ow0..ow1];
                            let xrow = &xp[ih * d.w..(ih + 1) * d.w];
                            if s == 1 {
                                let xs = &xrow[ow0 + kw - p..ow1 + kw - p];
                                acc += xs.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    acc += gv * xrow[(ow0 + j) * s + kw - p];
                                }
                            }
                        }
                        wp[kh * d.kw + kw] += acc;
                    }
                }
            }
        }
    }
    gw
}

/// Nearest-neighbour upsampling of every plane by an integer factor.
pub fn upsample_nearest(x: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for oy in 0..ho {
            let srow = &src[(oy / f) * w..][..w];
            let drow = &mut dst[oy * wo..][..wo];
            for (ox, d) in drow.iter_mut().enumerate() {
                *d = srow[ox / f];
            }
        }
    }
    out
}

/// Sums non-overlapping `f x f` blocks; the adjoint of [`upsample_nearest`].
pub fn sum_pool(x: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (ho, wo) = (h / f, w / f);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for iy in 0..ho * f {
            let srow = &src[iy * w..][..wo * f];
            let drow = &mut dst[(iy / f) * wo..][..wo];
            for (ix, &v) in srow.iter().enumerate() {
                drow[ix / f] += v;
            }
        }
    }
    out
}
