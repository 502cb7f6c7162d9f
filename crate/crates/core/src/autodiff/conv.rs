use super::matmul::{gemm_nn, gemm_nt, gemm_tn};
use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.c / self.groups
    }
    fn cout_g(&self) -> usize {
        self.o / self.groups
    }
    /// Output columns `ow` whose input column `ow*stride + k - pad` is in bounds.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let k = k as isize;
        let lo = ((p - k) + s - 1).div_euclid(s).max(0);
        let hi = ((extent as isize - 1 + p - k).div_euclid(s) + 1).min(out as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

fn geometry(x: &[usize], w: &[usize], stride: usize, pad: usize, groups: usize) -> Result<Geometry> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::shape("conv2d", format!("expected rank-4 input and weight, got {x:?}, {w:?}")));
    }
    if stride == 0 || groups == 0 {
        return Err(Error::InvalidArgument("conv2d stride and groups must be positive".into()));
    }
    let (b, c, h, wd) = (x[0], x[1], x[2], x[3]);
    let (o, ci, kh, kw) = (w[0], w[1], w[2], w[3]);
    if c % groups != 0 || o % groups != 0 {
        return Err(Error::shape("conv2d", format!("channels {c}/{o} not divisible by groups {groups}")));
    }
    if ci != c / groups {
        return Err(Error::shape("conv2d", format!("weight expects {ci} input channels per group, input has {}", c / groups)));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, wd + 2 * pad)));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    Ok(Geometry { b, c, h, w: wd, o, kh, kw, stride, pad, groups, ho, wo })
}

impl Geometry {
    /// Rows of the unfolded input for one group: `cin_g * kh * kw`.
    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds group `grp` of one image (`xb` is `[C, H, W]`) into
/// `col[(ic·kh + ki)·kw + kj, oh·wo + ow]`, zero outside the input.
fn im2col<T: Real>(g: &Geometry, xb: &[T], grp: usize, col: &mut [T]) {
    let po = g.plane_out();
    col.fill(T::zero());
    for icg in 0..g.cin_g() {
        let xc = &xb[(grp * g.cin_g() + icg) * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            let (oh0, oh1) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.kw {
                let (ow0, ow1) = g.valid_range(kj, g.w, g.wo);
                let row = &mut col[((icg * g.kh + ki) * g.kw + kj) * po..][..po];
                for oh in oh0..oh1 {
                    let xrow = &xc[(oh * g.stride + ki - g.pad) * g.w..][..g.w];
                    let crow = &mut row[oh * g.wo..(oh + 1) * g.wo];
                    if g.stride == 1 {
                        let iw0 = ow0 + kj - g.pad;
                        crow[ow0..ow1].copy_from_slice(&xrow[iw0..iw0 + (ow1 - ow0)]);
                    } else {
                        for ow in ow0..ow1 {
                            crow[ow] = xrow[ow * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dxb`.
fn col2im<T: Real>(g: &Geometry, col: &[T], grp: usize, dxb: &mut [T]) {
    let po = g.plane_out();
    for icg in 0..g.cin_g() {
        let dc = &mut dxb[(grp * g.cin_g() + icg) * g.h * g.w..][..g.h * g.w];
        for ki in 0..g.kh {
            let (oh0, oh1) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.kw {
                let (ow0, ow1) = g.valid_range(kj, g.w, g.wo);
                let row = &col[((icg * g.kh + ki) * g.kw + kj) * po..][..po];
                for oh in oh0..oh1 {
                    let drow = &mut dc[(oh * g.stride + ki - g.pad) * g.w..][..g.w];
                    let crow = &row[oh * g.wo..(oh + 1) * g.wo];
                    if g.stride == 1 {
                        let iw0 = ow0 + kj - g.pad;
                        for (d, &c) in drow[iw0..iw0 + (ow1 - ow0)].iter_mut().zip(&crow[ow0..ow1]) {
                            *d += c;
                        }
                    } else {
                        for ow in ow0..ow1 {
                            drow[ow * g.stride + kj - g.pad] += crow[ow];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(g: &Geometry, x: &[T], w: &[T]) -> Vec<T> {
    let (po, kr, cout_g) = (g.plane_out(), g.col_rows(), g.cout_g());
    let mut out = vec![T::zero(); g.b * g.o * po];
    let mut col = vec![T::zero(); kr * po];
    for b in 0..g.b {
        let xb = &x[b * g.c * g.h * g.w..][..g.c * g.h * g.w];
        for grp in 0..g.groups {
            im2col(g, xb, grp, &mut col);
            let wg = &w[grp * cout_g * kr..][..cout_g * kr];
            let og = &mut out[(b * g.o + grp * cout_g) * po..][..cout_g * po];
            gemm_nn(cout_g, kr, po, wg, &col, og);
        }
    }
    out
}

fn conv_backward<T: Real>(g: &Geometry, x: &[T], w: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let (po, kr, cout_g) = (g.plane_out(), g.col_rows(), g.cout_g());
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut col = vec![T::zero(); kr * po];
    let mut dcol = vec![T::zero(); kr * po];
    let plane_in = g.c * g.h * g.w;
    for b in 0..g.b {
        let xb = &x[b * plane_in..][..plane_in];
        for grp in 0..g.groups {
            let dyg = &dy[(b * g.o + grp * cout_g) * po..][..cout_g * po];
            im2col(g, xb, grp, &mut col);
            gemm_nt(cout_g, po, kr, dyg, &col, &mut dw[grp * cout_g * kr..][..cout_g * kr]);
            dcol.fill(T::zero());
            gemm_tn(kr, cout_g, po, &w[grp * cout_g * kr..][..cout_g * kr], dyg, &mut dcol);
            col2im(g, &dcol, grp, &mut dx[b * plane_in..][..plane_in]);
        }
    }
    (dx, dw)
}

impl<'t, T: Real> Var<'t, T> {
    /// 2-D cross-correlation with zero padding. `x` is `[B, C, H, W]`, the
    /// weight `[O, C/groups, kh, kw]`; `groups == C` gives the depthwise case.
    pub fn conv2d(self, weight: Var<'t, T>, stride: usize, padding: usize, groups: usize) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let g = geometry(x.shape(), w.shape(), stride, padding, groups)?;
        let out = Tensor::new(vec![g.b, g.o, g.ho, g.wo], conv_forward(&g, x.data(), w.data()))?;
        self.tape.push("conv2d", out, &[self, weight], move || {
            Box::new(move |dy: &Tensor<T>| {
                let (dx, dw) = conv_backward(&g, x.data(), w.data(), dy.data());
                vec![
                    Some(Tensor::new(x.shape().to_vec(), dx).unwrap()),
                    Some(Tensor::new(w.shape().to_vec(), dw).unwrap()),
                ]
            })
        })
    }

    /// Transposed convolution with a 2x2 kernel and stride 2: `x` is
    /// `[B, Ci, H, W]`, weight `[Ci, Co, 2, 2]`, output `[B, Co, 2H, 2W]`.
    pub fn conv_transpose2x2(self, weight: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != 2 || ws[3] != 2 {
            return Err(Error::shape("conv_transpose2x2", format!("input {xs:?} with weight {ws:?}")));
        }
        let (b, ci, h, wd, co) = (xs[0], xs[1], xs[2], xs[3], ws[1]);
        let (h2, w2) = (2 * h, 2 * wd);
        let mut out = vec![T::zero(); b * co * h2 * w2];
        for bi in 0..b {
            for c in 0..ci {
                let xb = &x.data()[(bi * ci + c) * h * wd..][..h * wd];
                for o in 0..co {
                    let k = &w.data()[(c * co + o) * 4..][..4];
                    let ob = &mut out[(bi * co + o) * h2 * w2..][..h2 * w2];
                    for i in 0..h {
                        for j in 0..wd {
                            let v = xb[i * wd + j];
                            ob[2 * i * w2 + 2 * j] += v * k[0];
                            ob[2 * i * w2 + 2 * j + 1] += v * k[1];
                            ob[(2 * i + 1) * w2 + 2 * j] += v * k[2];
                            ob[(2 * i + 1) * w2 + 2 * j + 1] += v * k[3];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, co, h2, w2], out)?;
        self.tape.push("conv_transpose2x2", out, &[self, weight], move || {
            Box::new(move |dy: &Tensor<T>| {
                let mut dx = vec![T::zero(); x.len()];
                let mut dw = vec![T::zero(); w.len()];
                for bi in 0..b {
                    for c in 0..ci {
                        let xoff = (bi * ci + c) * h * wd;
                        for o in 0..co {
                            let k = &w.data()[(c * co + o) * 4..][..4];
                            let gb = &dy.data()[(bi * co + o) * h2 * w2..][..h2 * w2];
                            let mut acc = [T::zero(); 4];
                            for i in 0..h {
                                for j in 0..wd {
                                    let g = [
                                        gb[2 * i * w2 + 2 * j],
                                        gb[2 * i * w2 + 2 * j + 1],
                                        gb[(2 * i + 1) * w2 + 2 * j],
                                        gb[(2 * i + 1) * w2 + 2 * j + 1],
                                    ];
                                    let v = x.data()[xoff + i * wd + j];
                                    let mut s = T::zero();
                                    for q in 0..4 {
                                        s += g[q] * k[q];
                                        acc[q] += g[q] * v;
                                    }
                                    dx[xoff + i * wd + j] += s;
                                }
                            }
                            for q in 0..4 {
                                dw[(c * co + o) * 4 + q] += acc[q];
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::new(x.shape().to_vec(), dx).unwrap()),
                    Some(Tensor::new(w.shape().to_vec(), dw).unwrap()),
                ]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn unit_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let x = tape.constant(Tensor::from_f64([1, 1, 3, 4], &data).unwrap());
        let w = tape.constant(Tensor::ones([1, 1, 1, 1]));
        let y = x.conv2d(w, 1, 0, 1).unwrap();
        assert_eq!(y.value().data(), data.as_slice());
    }

    #[test]
    fn ones_kernel_on_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let y = x.conv2d(w, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.value().item(), 9.0);
    }

    #[test]
    fn output_extent_formula() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([2, 4, 9, 8]));
        let w = tape.constant(Tensor::ones([6, 2, 3, 3]));
        let y = x.conv2d(w, 2, 1, 2).unwrap();
        assert_eq!(y.shape(), vec![2, 6, (9 + 2 - 3) / 2 + 1, (8 + 2 - 3) / 2 + 1]);
    }

    #[test]
    fn errors() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 3, 4, 4]));
        let w = tape.constant(Tensor::ones([4, 1, 3, 3]));
        assert!(x.conv2d(w, 1, 1, 2).is_err());
        let big = tape.constant(Tensor::ones([1, 3, 7, 7]));
        assert!(x.conv2d(big, 1, 1, 1).is_err());
    }

    #[test]
    fn padded_borders_match_naive() {
        // naive reference with explicit bounds checks
        let (c, h, w) = (2usize, 5usize, 4usize);
        let xs: Vec<f64> = (0..c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let ws: Vec<f64> = (0..3 * c * 9).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, c, h, w], &xs).unwrap());
        let wt = tape.constant(Tensor::from_f64([3, c, 3, 3], &ws).unwrap());
        for stride in [1, 2] {
            let y = x.conv2d(wt, stride, 1, 1).unwrap().value();
            let (ho, wo) = ((h + 2 - 3) / stride + 1, (w + 2 - 3) / stride + 1);
            for o in 0..3 {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for a in 0..3 {
                                for b in 0..3 {
                                    let (r, q) = ((i * stride + a) as isize - 1, (j * stride + b) as isize - 1);
                                    if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                        s += ws[((o * c + ci) * 3 + a) * 3 + b] * xs[(ci * h + r as usize) * w + q as usize];
                                    }
                                }
                            }
                        }
                        assert_eq!(y.get(&[0, o, i, j]), s);
                    }
                }
            }
        }
    }
}
