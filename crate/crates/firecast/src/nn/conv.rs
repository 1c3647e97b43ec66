//! 2D convolution via im2col and matrix multiplication.

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Convolution layer over (channels, height, width) maps.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// (out_channels, in_channels, k, k)
    pub weight: Array4<F>,
    pub bias: Option<Array1<F>>,
    pub stride: usize,
    pub padding: usize,
}

/// Forward cache: the unfolded input patches and the input extent.
pub struct ConvCache<F> {
    cols: Array2<F>,
    in_dim: (usize, usize, usize),
}

/// Parameter gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    pub weight: Array4<F>,
    pub bias: Option<Array1<F>>,
}

fn out_extent(h: usize, w: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    assert!(h + 2 * padding >= k && w + 2 * padding >= k, "kernel larger than padded input");
    ((h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1)
}

/// Output columns whose input column `ox * stride + kj - padding` lands in
/// bounds, as a half-open range.
fn valid_span(extent: usize, out: usize, stride: usize, kj: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kj).div_ceil(stride);
    let hi = if extent + padding > kj {
        out.min((extent + padding - kj - 1) / stride + 1)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<F: NdFloat>(
    x: &Array3<F>,
    k: usize,
    stride: usize,
    padding: usize,
) -> (Array2<F>, usize, usize) {
    let (c, h, w) = x.dim();
    let (oh, ow) = out_extent(h, w, k, stride, padding);
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    let xs = x.as_slice().expect("contiguous input");
    for ci in 0..c {
        for ki in 0..k {
            let (oy_lo, oy_hi) = valid_span(h, oh, stride, ki, padding);
            for kj in 0..k {
                let (ox_lo, ox_hi) = valid_span(w, ow, stride, kj, padding);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = (ci * k + ki) * k + kj;
                let mut row_view = cols.row_mut(row);
                let dst = row_view.as_slice_mut().expect("contiguous columns");
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ki - padding;
                    let base = (ci * h + iy) * w;
                    if stride == 1 {
                        let ix = ox_lo + kj - padding;
                        let len = ox_hi - ox_lo;
                        dst[oy * ow + ox_lo..oy * ow + ox_lo + len]
                            .copy_from_slice(&xs[base + ix..base + ix + len]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kj - padding;
                            dst[oy * ow + ox] = xs[base + ix];
                        }
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

fn col2im<F: NdFloat>(
    dcols: &Array2<F>,
    in_dim: (usize, usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
) -> Array3<F> {
    let (c, h, w) = in_dim;
    let (oh, ow) = out_extent(h, w, k, stride, padding);
    let mut dx = Array3::zeros(in_dim);
    let dxs = dx.as_slice_mut().expect("contiguous gradient");
    for ci in 0..c {
        for ki in 0..k {
            let (oy_lo, oy_hi) = valid_span(h, oh, stride, ki, padding);
            for kj in 0..k {
                let (ox_lo, ox_hi) = valid_span(w, ow, stride, kj, padding);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = dcols.row((ci * k + ki) * k + kj);
                let src = row.to_slice().expect("contiguous columns");
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ki - padding;
                    let base = (ci * h + iy) * w;
                    if stride == 1 {
                        let ix = ox_lo + kj - padding;
                        let len = ox_hi - ox_lo;
                        for (d, s) in dxs[base + ix..base + ix + len]
                            .iter_mut()
                            .zip(&src[oy * ow + ox_lo..oy * ow + ox_lo + len])
                        {
                            *d = *d + *s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kj - padding;
                            dxs[base + ix] = dxs[base + ix] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

impl<F: NdFloat> Conv2d<F> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, bias: bool) -> Self {
        Self {
            weight: Array4::zeros((c_out, c_in, k, k)),
            bias: bias.then(|| Array1::zeros(c_out)),
            stride,
            padding,
        }
    }

    /// He-normal weight init, zero bias.
    pub fn init<R: Rng>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(c_in, c_out, k, stride, padding, bias);
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        for v in layer.weight.iter_mut() {
            *v = F::from(dist.sample(rng)).unwrap();
        }
        layer
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().3
    }

    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, ConvCache<F>) {
        let (c_out, c_in, k, _) = self.weight.dim();
        assert_eq!(x.dim().0, c_in, "conv input channels");
        let (cols, oh, ow) = im2col(x, k, self.stride, self.padding);
        let w_mat = self.weight.view().into_shape_with_order((c_out, c_in * k * k)).unwrap();
        let mut out_mat = w_mat.dot(&cols);
        if let Some(b) = &self.bias {
            for (mut row, bv) in out_mat.rows_mut().into_iter().zip(b.iter()) {
                row.mapv_inplace(|v| v + *bv);
            }
        }
        let out = out_mat.into_shape_with_order((c_out, oh, ow)).unwrap();
        (out, ConvCache { cols, in_dim: x.dim() })
    }

    pub fn backward(&self, dout: &Array3<F>, cache: &ConvCache<F>) -> (Array3<F>, ConvGrads<F>) {
        let (c_out, c_in, k, _) = self.weight.dim();
        let (oc, oh, ow) = dout.dim();
        assert_eq!(oc, c_out, "conv output channels");
        let dout_mat = dout.view().into_shape_with_order((c_out, oh * ow)).unwrap();
        let dw_mat = dout_mat.dot(&cache.cols.t());
        let dweight = dw_mat.into_shape_with_order((c_out, c_in, k, k)).unwrap();
        let dbias = self.bias.as_ref().map(|_| dout_mat.sum_axis(ndarray::Axis(1)));
        let w_mat = self.weight.view().into_shape_with_order((c_out, c_in * k * k)).unwrap();
        let dcols = w_mat.t().dot(&dout_mat);
        let dx = col2im(&dcols, cache.in_dim, k, self.stride, self.padding);
        (dx, ConvGrads { weight: dweight, bias: dbias })
    }

    pub fn zeros_grads(&self) -> ConvGrads<F> {
        ConvGrads {
            weight: Array4::zeros(self.weight.dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.dim())),
        }
    }

    /// Add a gradient into this instance (used when a zeroed clone of the
    /// model accumulates per-sample gradients).
    pub fn add_grads(&mut self, g: &ConvGrads<F>) {
        self.weight.scaled_add(F::one(), &g.weight);
        if let (Some(a), Some(b)) = (&mut self.bias, &g.bias) {
            a.scaled_add(F::one(), b);
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        out.push((format!("{prefix}.weight"), self.weight.view().into_dyn()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.view().into_dyn()));
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.weight"), self.weight.view_mut().into_dyn()));
        if let Some(b) = &mut self.bias {
            out.push((format!("{prefix}.bias"), b.view_mut().into_dyn()));
        }
    }
}

impl<F: NdFloat> ConvGrads<F> {
    pub fn accumulate(&mut self, other: &ConvGrads<F>) {
        self.weight.scaled_add(F::one(), &other.weight);
        if let (Some(a), Some(b)) = (&mut self.bias, &other.bias) {
            a.scaled_add(F::one(), b);
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.weight"), self.weight.view_mut().into_dyn()));
        if let Some(b) = &mut self.bias {
            out.push((format!("{prefix}.bias"), b.view_mut().into_dyn()));
        }
    }
}
