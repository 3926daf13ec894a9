//! Forward and adjoint kernels for the spatial operations (HWC layout).

use super::gemm::{gemm_acc, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (input, kernel) else {
            return Err(Error::shape(format!(
                "conv2d expects HxWxCin input and kxkxCinxCout kernel, got {input:?} and {kernel:?}"
            )));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernel must be square with odd size, got {kh}x{kw}")));
        }
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {cin} channels, kernel expects {kcin}"
            )));
        }
        if h < kh || w < kh {
            return Err(Error::shape(format!("conv2d input {h}x{w} smaller than kernel {kh}x{kh}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let out_h = (h + 2 * padding - kh) / stride + 1;
        let out_w = (w + 2 * padding - kh) / stride + 1;
        Ok(ConvGeometry { h, w, cin, k: kh, cout, stride, padding, out_h, out_w })
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Input pixel for output `(oy, ox)` and tap `(ky, kx)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T]) -> Vec<T> {
    let kk = g.patch_len();
    let mut col = vec![T::zero(); g.pixels() * kk];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut col[(oy * g.out_w + ox) * kk..][..kk];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                        let src = &input[(iy * g.w + ix) * g.cin..][..g.cin];
                        row[(ky * g.k + kx) * g.cin..][..g.cin].copy_from_slice(src);
                    }
                }
            }
        }
    }
    col
}

fn col2im_acc<T: Scalar>(g: &ConvGeometry, col: &[T], out: &mut [T]) {
    let kk = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &col[(oy * g.out_w + ox) * kk..][..kk];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                        let dst = &mut out[(iy * g.w + ix) * g.cin..][..g.cin];
                        let src = &row[(ky * g.k + kx) * g.cin..][..g.cin];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, ConvGeometry)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let mut out = vec![T::zero(); g.pixels() * g.cout];
    if g.is_pointwise() {
        gemm_acc(g.pixels(), g.cout, g.cin, MatRef::row_major(input.data(), g.cin), kernel.data(), &mut out);
    } else {
        let col = im2col(&g, input.data());
        gemm_acc(g.pixels(), g.cout, g.patch_len(), MatRef::row_major(&col, g.patch_len()), kernel.data(), &mut out);
    }
    Ok((Tensor::new([g.out_h, g.out_w, g.cout], out)?, g))
}

/// Adjoints of conv2d with respect to the input and/or kernel.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let kk = g.patch_len();
    let col_storage;
    let col: &[T] = if g.is_pointwise() {
        input.data()
    } else if want_kernel {
        col_storage = im2col(g, input.data());
        &col_storage
    } else {
        &[]
    };

    let grad_kernel = want_kernel.then(|| {
        let mut dk = vec![T::zero(); kk * g.cout];
        gemm_acc(kk, g.cout, g.pixels(), MatRef::transposed(col, kk), grad_out, &mut dk);
        dk
    });

    let grad_input = want_input.then(|| {
        // kernel^T as a row-major cout x kk matrix
        let kd = kernel.data();
        let mut kt = vec![T::zero(); g.cout * kk];
        for r in 0..kk {
            for c in 0..g.cout {
                kt[c * kk + r] = kd[r * g.cout + c];
            }
        }
        if g.is_pointwise() {
            let mut di = vec![T::zero(); g.pixels() * kk];
            gemm_acc(g.pixels(), kk, g.cout, MatRef::row_major(grad_out, g.cout), &kt, &mut di);
            di
        } else {
            let mut dcol = vec![T::zero(); g.pixels() * kk];
            gemm_acc(g.pixels(), kk, g.cout, MatRef::row_major(grad_out, g.cout), &kt, &mut dcol);
            let mut di = vec![T::zero(); g.h * g.w * g.cin];
            col2im_acc(g, &dcol, &mut di);
            di
        }
    });

    (grad_input, grad_kernel)
}

/// 2x2 stride-2 max pooling; returns the flat input offset of each window's
/// first maximum in row-major window order.
pub(crate) fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::shape(format!("max_pool2 expects HxWxC, got {:?}", input.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max_pool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let off = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[off] > x[best] {
                        best = off;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new([oh, ow, c], out)?, argmax))
}

/// Affine map in pixel coordinates, `[a, b, tx, c, d, ty]`:
/// `x' = a x + b y + tx`, `y' = c x + d y + ty`, with pixel `(row, col)`
/// centred at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub m: [f64; 6],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] };

    pub fn new(m: [f64; 6]) -> Self {
        Affine2 { m }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2 { m: [1.0, 0.0, tx, 0.0, 1.0, ty] }
    }

    /// Rotation by `deg` (clockwise on screen, y pointing down) about `(cx, cy)`.
    pub fn rotation_about(deg: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Affine2::translation(cx, cy)
            .then_after(Affine2 { m: [c, -s, 0.0, s, c, 0.0] })
            .then_after(Affine2::translation(-cx, -cy))
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn then_after(self, inner: Affine2) -> Affine2 {
        let [a, b, c, d, e, f] = self.m;
        let [p, q, r, s, t, u] = inner.m;
        Affine2 {
            m: [a * p + b * s, a * q + b * t, a * r + b * u + c, d * p + e * s, d * q + e * t, d * r + e * u + f],
        }
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.m;
        (a * x + b * y + c, d * x + e * y + f)
    }

    pub fn inverse(&self) -> Result<Affine2> {
        let det = self.det();
        if !(det.abs() > 1e-9) {
            return Err(Error::SingularTransform { det });
        }
        let [a, b, tx, c, d, ty] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Affine2 { m: [ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)] })
    }
}

#[derive(Clone, Copy)]
struct Tap<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

fn tap<T: Scalar>(inv: &[T; 6], row: usize, col: usize) -> Tap<T> {
    let half = T::lit(0.5);
    let xo = T::lit(col as f64) + half;
    let yo = T::lit(row as f64) + half;
    let sx = inv[0] * xo + inv[1] * yo + inv[2] - half;
    let sy = inv[3] * xo + inv[4] * yo + inv[5] - half;
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    Tap {
        x0: fx0.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy0.to_isize().unwrap_or(isize::MIN / 2),
        fx: sx - fx0,
        fy: sy - fy0,
    }
}

#[inline]
fn in_bounds(y: isize, x: isize, h: usize, w: usize) -> Option<usize> {
    (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
}

fn inverse_params<T: Scalar>(transform: &[T]) -> Result<([T; 6], [T; 4])> {
    let fwd = Affine2::new(std::array::from_fn(|i| transform[i].to_f64_lossy()));
    // validate with the f64 path, then invert in T
    fwd.inverse()?;
    let [a, b, tx, c, d, ty] = [transform[0], transform[1], transform[2], transform[3], transform[4], transform[5]];
    let det = a * d - b * c;
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    Ok(([ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)], [ia, ib, ic, id]))
}

/// Samples `input` at the inverse-mapped centre of every output pixel.
/// Neighbours outside the input contribute zero.
pub(crate) fn warp_forward<T: Scalar>(input: &Tensor<T>, transform: &[T]) -> Result<Tensor<T>> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::shape(format!("bilinear_warp expects HxWxC, got {:?}", input.shape())));
    };
    if transform.len() != 6 {
        return Err(Error::shape(format!("transform must have 6 entries, got {}", transform.len())));
    }
    let (inv, _) = inverse_params(transform)?;
    let x = input.data();
    let mut out = vec![T::zero(); h * w * c];
    let one = T::one();
    for row in 0..h {
        for col in 0..w {
            let t = tap(&inv, row, col);
            let dst = &mut out[(row * w + col) * c..][..c];
            let corners = [
                (0, 0, (one - t.fy) * (one - t.fx)),
                (0, 1, (one - t.fy) * t.fx),
                (1, 0, t.fy * (one - t.fx)),
                (1, 1, t.fy * t.fx),
            ];
            for (dy, dx, wgt) in corners {
                // zero-weight corners are skipped so integer-aligned maps copy exactly
                if (dx == 1 && t.fx == T::zero()) || (dy == 1 && t.fy == T::zero()) {
                    continue;
                }
                if let Some(p) = in_bounds(t.y0 + dy, t.x0 + dx, h, w) {
                    let src = &x[p * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wgt * s;
                    }
                }
            }
        }
    }
    Tensor::new([h, w, c], out)
}

/// Adjoints of bilinear_warp with respect to input values and the six
/// forward transform parameters.
pub(crate) fn warp_backward<T: Scalar>(
    input: &Tensor<T>,
    transform: &[T],
    grad_out: &[T],
    want_input: bool,
    want_transform: bool,
) -> Result<(Option<Vec<T>>, Option<Vec<T>>)> {
    let &[h, w, c] = input.shape() else { unreachable!("validated in forward") };
    let (inv, lin) = inverse_params(transform)?;
    let x = input.data();
    let one = T::one();
    let mut din = want_input.then(|| vec![T::zero(); h * w * c]);
    // gradient w.r.t. inverse parameters [ia, ib, u0, ic, id, u1]
    let mut ginv = [T::zero(); 6];
    let half = T::lit(0.5);
    for row in 0..h {
        for col in 0..w {
            let t = tap(&inv, row, col);
            let g = &grad_out[(row * w + col) * c..][..c];
            let p00 = in_bounds(t.y0, t.x0, h, w);
            let p01 = in_bounds(t.y0, t.x0 + 1, h, w);
            let p10 = in_bounds(t.y0 + 1, t.x0, h, w);
            let p11 = in_bounds(t.y0 + 1, t.x0 + 1, h, w);
            if let Some(din) = din.as_mut() {
                let corners = [
                    (p00, (one - t.fy) * (one - t.fx)),
                    (p01, (one - t.fy) * t.fx),
                    (p10, t.fy * (one - t.fx)),
                    (p11, t.fy * t.fx),
                ];
                for (p, wgt) in corners {
                    if let Some(p) = p {
                        for (d, &gv) in din[p * c..][..c].iter_mut().zip(g) {
                            *d += wgt * gv;
                        }
                    }
                }
            }
            if want_transform {
                let val = |p: Option<usize>, ch: usize| p.map_or(T::zero(), |p| x[p * c + ch]);
                let (mut gsx, mut gsy) = (T::zero(), T::zero());
                for (ch, &gv) in g.iter().enumerate() {
                    let (v00, v01, v10, v11) = (val(p00, ch), val(p01, ch), val(p10, ch), val(p11, ch));
                    gsx += gv * ((one - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                    gsy += gv * ((one - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                }
                let xo = T::lit(col as f64) + half;
                let yo = T::lit(row as f64) + half;
                ginv[0] += gsx * xo;
                ginv[1] += gsx * yo;
                ginv[2] += gsx;
                ginv[3] += gsy * xo;
                ginv[4] += gsy * yo;
                ginv[5] += gsy;
            }
        }
    }
    let dtransform = want_transform.then(|| {
        // u = -B t with B = A^-1:  dL/dt = -B^T g_u,  dL/dA = -B^T (G_B - g_u t^T) B^T
        let [b00, b01, b10, b11] = lin;
        let (tx, ty) = (transform[2], transform[5]);
        let (gu0, gu1) = (ginv[2], ginv[5]);
        let gb = [ginv[0] - gu0 * tx, ginv[1] - gu0 * ty, ginv[3] - gu1 * tx, ginv[4] - gu1 * ty];
        // M = B^T * gb
        let m = [
            b00 * gb[0] + b10 * gb[2],
            b00 * gb[1] + b10 * gb[3],
            b01 * gb[0] + b11 * gb[2],
            b01 * gb[1] + b11 * gb[3],
        ];
        // dA = -(M * B^T)
        let da = [
            -(m[0] * b00 + m[1] * b01),
            -(m[0] * b10 + m[1] * b11),
            -(m[2] * b00 + m[3] * b01),
            -(m[2] * b10 + m[3] * b11),
        ];
        let dt = [-(b00 * gu0 + b10 * gu1), -(b01 * gu0 + b11 * gu1)];
        vec![da[0], da[1], dt[0], da[2], da[3], dt[1]]
    });
    Ok((din, dtransform))
}
