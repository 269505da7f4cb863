//! 2-D and axial convolutions (cross-correlation, no kernel flip).
//!
//! Each image is lowered to a column matrix and multiplied by the weight
//! matrix. Images are processed independently; the weight gradient is summed
//! over images serially in batch order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{matmul, Element, Tensor};

/// Images per parallel group when reducing the weight gradient. Fixed so the
/// summation order never depends on the worker count.
const GRAD_GROUP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(d_in: usize, d_out: usize, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Self {
        ConvSpec {
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: pad.0,
            pad_w: pad.1,
            d_in,
            d_out,
            bias: false,
        }
    }

    /// `k×k` with "same" padding.
    pub fn square(d_in: usize, d_out: usize, k: usize, stride: usize) -> Self {
        Self::new(d_in, d_out, (k, k), (stride, stride), (k / 2, k / 2))
    }

    pub fn pointwise(d_in: usize, d_out: usize, stride: usize) -> Self {
        Self::new(d_in, d_out, (1, 1), (stride, stride), (0, 0))
    }

    /// `k×1` along height, stride `(s, 1)`.
    pub fn axial_h(d_in: usize, d_out: usize, k: usize, stride: usize) -> Self {
        Self::new(d_in, d_out, (k, 1), (stride, 1), (k / 2, 0))
    }

    /// `1×k` along width, stride `(1, s)`.
    pub fn axial_w(d_in: usize, d_out: usize, k: usize, stride: usize) -> Self {
        Self::new(d_in, d_out, (1, k), (1, stride), (0, k / 2))
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidSpec("kernel extents must be at least 1".into()));
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::InvalidSpec("strides must be at least 1".into()));
        }
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::InvalidSpec("channel counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.d_out, self.d_in, self.kernel_h, self.kernel_w]
    }

    pub fn fan_in(&self) -> usize {
        self.d_in * self.kernel_h * self.kernel_w
    }

    pub fn param_count(&self) -> usize {
        self.d_out * self.fan_in() + if self.bias { self.d_out } else { 0 }
    }

    pub fn is_axial_h(&self) -> bool {
        self.kernel_w == 1 && self.stride_w == 1 && self.pad_w == 0
    }

    pub fn is_axial_w(&self) -> bool {
        self.kernel_h == 1 && self.stride_h == 1 && self.pad_h == 0
    }

    /// Output spatial extents: `floor((in + 2·pad − kernel) / stride) + 1`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.pad_h;
        let pw = w + 2 * self.pad_w;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::InvalidGeometry(format!(
                "{h}×{w} input with padding ({}, {}) is smaller than the {}×{} kernel",
                self.pad_h, self.pad_w, self.kernel_h, self.kernel_w
            )));
        }
        Ok(((ph - self.kernel_h) / self.stride_h + 1, (pw - self.kernel_w) / self.stride_w + 1))
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel_h == 1
            && self.kernel_w == 1
            && self.stride_h == 1
            && self.stride_w == 1
            && self.pad_h == 0
            && self.pad_w == 0
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn check_inputs<T: Element>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let (n, c, h, wi) = x.dims4()?;
    if c != spec.d_in {
        return Err(Error::shape_mismatch(&[n, spec.d_in, h, wi], x.shape()));
    }
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape_mismatch(&spec.weight_shape(), w.shape()));
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() != [spec.d_out] => return Err(Error::shape_mismatch(&[spec.d_out], b.shape())),
        (true, None) => return Err(Error::InvalidArgument("convolution spec requires a bias tensor".into())),
        (false, Some(_)) => return Err(Error::InvalidArgument("bias given for a bias-free convolution".into())),
        _ => {}
    }
    let (ho, wo) = spec.output_hw(h, wi)?;
    Ok(Geometry { n, h, w: wi, ho, wo })
}

fn im2col<T: Element>(img: &[T], spec: &ConvSpec, g: &Geometry, cols: &mut [T]) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let area = g.ho * g.wo;
    for c in 0..spec.d_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((c * kh + i) * kw + j) * area..][..area];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride_h + i) as isize - spec.pad_h as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride_w + j) as isize - spec.pad_w as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], spec: &ConvSpec, g: &Geometry, img: &mut [T]) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let area = g.ho * g.wo;
    for c in 0..spec.d_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((c * kh + i) * kw + j) * area..][..area];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride_h + i) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * spec.stride_w + j) as isize - spec.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution of `x: [N, d_in, H, W]` with `w: [d_out, d_in, kh, kw]`.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let g = check_inputs(x, w, bias, spec)?;
    let in_len = spec.d_in * g.h * g.w;
    let area = g.ho * g.wo;
    let out_len = spec.d_out * area;
    let ckk = spec.fan_in();
    let mut out = vec![T::zero(); g.n * out_len];
    let xd = x.data();
    let wd = w.data();
    parallel::for_each_chunk(&mut out, out_len, |i, dst| {
        let img = &xd[i * in_len..(i + 1) * in_len];
        if spec.is_plain_pointwise() {
            matmul(spec.d_out, ckk, area, wd, false, img, false, dst, false);
        } else {
            let mut cols = vec![T::zero(); ckk * area];
            im2col(img, spec, &g, &mut cols);
            matmul(spec.d_out, ckk, area, wd, false, &cols, false, dst, false);
        }
        if let Some(b) = bias {
            for (o, plane) in dst.chunks_mut(area).enumerate() {
                let bo = b.data()[o];
                plane.iter_mut().for_each(|v| *v += bo);
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.n, spec.d_out, g.ho, g.wo], out))
}

/// Convolution along height only; the kernel must be `k×1`.
pub fn conv1d_h<T: Element>(x: &Tensor<T>, w: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if !spec.is_axial_h() {
        return Err(Error::InvalidSpec(format!(
            "height-axis convolution needs kernel_w = 1, stride_w = 1, pad_w = 0 (got {spec:?})"
        )));
    }
    conv2d(x, w, None, spec)
}

/// Convolution along width only; the kernel must be `1×k`.
pub fn conv1d_w<T: Element>(x: &Tensor<T>, w: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if !spec.is_axial_w() {
        return Err(Error::InvalidSpec(format!(
            "width-axis convolution needs kernel_h = 1, stride_h = 1, pad_h = 0 (got {spec:?})"
        )));
    }
    conv2d(x, w, None, spec)
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, spec: &ConvSpec, dy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let bias_stub;
    let bias = if spec.bias {
        bias_stub = Tensor::zeros(&[spec.d_out])?;
        Some(&bias_stub)
    } else {
        None
    };
    let g = check_inputs(x, w, bias, spec)?;
    let expected = [g.n, spec.d_out, g.ho, g.wo];
    if dy.shape() != expected {
        return Err(Error::shape_mismatch(&expected, dy.shape()));
    }
    let in_len = spec.d_in * g.h * g.w;
    let area = g.ho * g.wo;
    let out_len = spec.d_out * area;
    let ckk = spec.fan_in();
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());

    let mut dx = vec![T::zero(); g.n * in_len];
    let mut dw = vec![T::zero(); wd.len()];
    let mut start = 0;
    while start < g.n {
        let count = GRAD_GROUP.min(g.n - start);
        let parts = parallel::map_indexed(count, |k| {
            let i = start + k;
            let img = &xd[i * in_len..(i + 1) * in_len];
            let gy = &dyd[i * out_len..(i + 1) * out_len];
            let mut dimg = vec![T::zero(); in_len];
            let mut dw_part = vec![T::zero(); wd.len()];
            if spec.is_plain_pointwise() {
                matmul(ckk, spec.d_out, area, wd, true, gy, false, &mut dimg, false);
                matmul(spec.d_out, area, ckk, gy, false, img, true, &mut dw_part, false);
            } else {
                let mut cols = vec![T::zero(); ckk * area];
                im2col(img, spec, &g, &mut cols);
                matmul(spec.d_out, area, ckk, gy, false, &cols, true, &mut dw_part, false);
                matmul(ckk, spec.d_out, area, wd, true, gy, false, &mut cols, false);
                col2im(&cols, spec, &g, &mut dimg);
            }
            (dimg, dw_part)
        });
        for (k, (dimg, dw_part)) in parts.into_iter().enumerate() {
            let i = start + k;
            dx[i * in_len..(i + 1) * in_len].copy_from_slice(&dimg);
            for (a, b) in dw.iter_mut().zip(dw_part) {
                *a += b;
            }
        }
        start += count;
    }

    let db = if spec.bias {
        let mut db = vec![T::zero(); spec.d_out];
        for i in 0..g.n {
            for (o, plane) in dyd[i * out_len..(i + 1) * out_len].chunks(area).enumerate() {
                db[o] += plane.iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        Some(Tensor::from_parts(vec![spec.d_out], db))
    } else {
        None
    };
    Ok(ConvGrads {
        dx: Tensor::from_parts(x.shape().to_vec(), dx),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let mut t = Tensor::zeros(shape).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        t
    }

    /// Direct nested-loop cross-correlation.
    fn conv_loops(x: &Tensor<f64>, w: &Tensor<f64>, s: &ConvSpec) -> Tensor<f64> {
        let (n, _, h, wi) = x.dims4().unwrap();
        let (ho, wo) = s.output_hw(h, wi).unwrap();
        let mut out = Tensor::zeros(&[n, s.d_out, ho, wo]).unwrap();
        for b in 0..n {
            for o in 0..s.d_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..s.d_in {
                            for i in 0..s.kernel_h {
                                for j in 0..s.kernel_w {
                                    let iy = (oy * s.stride_h + i) as isize - s.pad_h as isize;
                                    let ix = (ox * s.stride_w + j) as isize - s.pad_w as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wi {
                                        acc += w.at(&[o, c, i, j]) * x.at(&[b, c, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, o, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_counts_taps() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, &ConvSpec::square(1, 1, 3, 1)).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn zero_kernel_annihilates() {
        let mut rng = Rng::new(1);
        let x = random(&mut rng, &[2, 3, 5, 5]);
        let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, &ConvSpec::square(3, 4, 3, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = Rng::new(2);
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        for spec in [
            ConvSpec::square(2, 3, 3, 1),
            ConvSpec::square(2, 3, 3, 2),
            ConvSpec::new(2, 3, (3, 3), (2, 1), (0, 2)),
        ] {
            let y = conv2d(&x, &w, None, &spec).unwrap();
            assert!(y.max_abs_diff(&conv_loops(&x, &w, &spec)).unwrap() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn height_axis_counts_taps_per_row() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(&[1, 1, 3, 1]).unwrap();
        let y = conv1d_h(&x, &w, &ConvSpec::axial_h(1, 1, 3, 1)).unwrap();
        assert_eq!(y.data(), &[2., 2., 2., 3., 3., 3., 2., 2., 2.]);
    }

    #[test]
    fn width_axis_counts_taps_per_column() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(&[1, 1, 1, 3]).unwrap();
        let y = conv1d_w(&x, &w, &ConvSpec::axial_w(1, 1, 3, 1)).unwrap();
        assert_eq!(y.data(), &[2., 3., 2., 2., 3., 2., 2., 3., 2.]);
    }

    #[test]
    fn axial_impulse_stays_on_its_axis() {
        let mut rng = Rng::new(3);
        let mut x = Tensor::<f64>::zeros(&[1, 1, 7, 7]).unwrap();
        x.set(&[0, 0, 3, 2], 1.0);
        let wh = random(&mut rng, &[1, 1, 5, 1]);
        let yh = conv1d_h(&x, &wh, &ConvSpec::axial_h(1, 1, 5, 1)).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                if c != 2 {
                    assert_eq!(yh.at(&[0, 0, r, c]), 0.0);
                }
            }
        }
        let ww = random(&mut rng, &[1, 1, 1, 5]);
        let yw = conv1d_w(&x, &ww, &ConvSpec::axial_w(1, 1, 5, 1)).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                if r != 3 {
                    assert_eq!(yw.at(&[0, 0, r, c]), 0.0);
                }
            }
        }
    }

    #[test]
    fn axial_specs_are_enforced() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        assert!(matches!(conv1d_h(&x, &w, &ConvSpec::square(1, 1, 3, 1)), Err(Error::InvalidSpec(_))));
        assert!(matches!(conv1d_w(&x, &w, &ConvSpec::square(1, 1, 3, 1)), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn geometry_errors() {
        let x = Tensor::<f32>::ones(&[1, 2, 3, 3]).unwrap();
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::square(1, 1, 3, 1)),
            Err(Error::ShapeMismatch { .. })
        ));
        let x = Tensor::<f32>::ones(&[1, 1, 2, 2]).unwrap();
        let w = Tensor::<f32>::ones(&[1, 1, 5, 5]).unwrap();
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::new(1, 1, (5, 5), (1, 1), (0, 0))),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap();
        let w = Tensor::<f32>::ones(&[2, 1, 1, 1]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.5, -1.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), &ConvSpec::pointwise(1, 2, 1).with_bias()).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5, 1.5, 1.5, -1.0, -1.0, -1.0, -1.0]);
    }
}
