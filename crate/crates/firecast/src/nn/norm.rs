//! Group and layer normalization with affine parameters.

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis, NdFloat};

const EPS: f64 = 1e-5;

/// Group normalization over (channels, height, width) maps: each group of
/// channels is standardized over its channels and all spatial positions,
/// then scaled and shifted per channel.
#[derive(Debug, Clone)]
pub struct GroupNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub groups: usize,
}

pub struct GroupNormCache<F> {
    xhat: Array3<F>,
    inv_std: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct GroupNormGrads<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: NdFloat> GroupNorm<F> {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(groups >= 1 && channels % groups == 0, "groups must divide channels");
        Self { gamma: Array1::ones(channels), beta: Array1::zeros(channels), groups }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, GroupNormCache<F>) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "group norm channels");
        let per = c / self.groups;
        let m = F::from(per * h * w).unwrap();
        let eps = F::from(EPS).unwrap();
        let mut xhat = Array3::zeros((c, h, w));
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let span = g * per..(g + 1) * per;
            let block = x.slice(ndarray::s![span.clone(), .., ..]);
            let mean = block.sum() / m;
            let mut var = F::zero();
            for &v in block.iter() {
                var = var + (v - mean) * (v - mean);
            }
            var = var / m;
            let istd = F::one() / (var + eps).sqrt();
            inv_std.push(istd);
            let mut dst = xhat.slice_mut(ndarray::s![span, .., ..]);
            dst.assign(&block);
            dst.mapv_inplace(|v| (v - mean) * istd);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let gam = self.gamma[ci];
            let bet = self.beta[ci];
            y.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v * gam + bet);
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        dout: &Array3<F>,
        cache: &GroupNormCache<F>,
    ) -> (Array3<F>, GroupNormGrads<F>) {
        let (c, h, w) = dout.dim();
        let per = c / self.groups;
        let m = F::from(per * h * w).unwrap();
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for ci in 0..c {
            let d = dout.index_axis(Axis(0), ci);
            let xh = cache.xhat.index_axis(Axis(0), ci);
            dbeta[ci] = d.sum();
            dgamma[ci] = d.iter().zip(xh.iter()).map(|(a, b)| *a * *b).fold(F::zero(), |s, v| s + v);
        }
        // dxhat = dout * gamma; per group:
        // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        let mut dx = Array3::zeros((c, h, w));
        for g in 0..self.groups {
            let span = g * per..(g + 1) * per;
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for ci in span.clone() {
                let gam = self.gamma[ci];
                let d = dout.index_axis(Axis(0), ci);
                let xh = cache.xhat.index_axis(Axis(0), ci);
                for (&dv, &xv) in d.iter().zip(xh.iter()) {
                    let dxhat = dv * gam;
                    sum_d = sum_d + dxhat;
                    sum_dx = sum_dx + dxhat * xv;
                }
            }
            let scale = cache.inv_std[g] / m;
            for ci in span {
                let gam = self.gamma[ci];
                let d = dout.index_axis(Axis(0), ci);
                let xh = cache.xhat.index_axis(Axis(0), ci);
                let mut out = dx.index_axis_mut(Axis(0), ci);
                for ((&dv, &xv), o) in d.iter().zip(xh.iter()).zip(out.iter_mut()) {
                    let dxhat = dv * gam;
                    *o = scale * (m * dxhat - sum_d - xv * sum_dx);
                }
            }
        }
        (dx, GroupNormGrads { gamma: dgamma, beta: dbeta })
    }

    pub fn zeros_grads(&self) -> GroupNormGrads<F> {
        GroupNormGrads { gamma: Array1::zeros(self.channels()), beta: Array1::zeros(self.channels()) }
    }

    /// Add a gradient into this instance (used when a zeroed clone of the
    /// model accumulates per-sample gradients).
    pub fn add_grads(&mut self, g: &GroupNormGrads<F>) {
        self.gamma.scaled_add(F::one(), &g.gamma);
        self.beta.scaled_add(F::one(), &g.beta);
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view().into_dyn()));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view_mut().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view_mut().into_dyn()));
    }
}

impl<F: NdFloat> GroupNormGrads<F> {
    pub fn accumulate(&mut self, other: &GroupNormGrads<F>) {
        self.gamma.scaled_add(F::one(), &other.gamma);
        self.beta.scaled_add(F::one(), &other.beta);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view_mut().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view_mut().into_dyn()));
    }
}

/// Layer normalization over the last axis of (tokens, features) matrices.
#[derive(Debug, Clone)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: NdFloat> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let (n, d) = x.dim();
        assert_eq!(d, self.gamma.len(), "layer norm width");
        let md = F::from(d).unwrap();
        let eps = F::from(EPS).unwrap();
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (row, mut dst) in x.rows().into_iter().zip(xhat.rows_mut()) {
            let mean = row.sum() / md;
            let mut var = F::zero();
            for &v in row.iter() {
                var = var + (v - mean) * (v - mean);
            }
            var = var / md;
            let istd = F::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for (&v, o) in row.iter().zip(dst.iter_mut()) {
                *o = (v - mean) * istd;
            }
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            for (o, (&g, &b)) in row.iter_mut().zip(self.gamma.iter().zip(self.beta.iter())) {
                *o = *o * g + b;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        dout: &Array2<F>,
        cache: &LayerNormCache<F>,
    ) -> (Array2<F>, LayerNormGrads<F>) {
        let (n, d) = dout.dim();
        let md = F::from(d).unwrap();
        let mut dgamma = Array1::zeros(d);
        let mut dbeta = Array1::zeros(d);
        for i in 0..n {
            for j in 0..d {
                dgamma[j] = dgamma[j] + dout[[i, j]] * cache.xhat[[i, j]];
                dbeta[j] = dbeta[j] + dout[[i, j]];
            }
        }
        let mut dx = Array2::zeros((n, d));
        for i in 0..n {
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for j in 0..d {
                let dxhat = dout[[i, j]] * self.gamma[j];
                sum_d = sum_d + dxhat;
                sum_dx = sum_dx + dxhat * cache.xhat[[i, j]];
            }
            let scale = cache.inv_std[i] / md;
            for j in 0..d {
                let dxhat = dout[[i, j]] * self.gamma[j];
                dx[[i, j]] = scale * (md * dxhat - sum_d - cache.xhat[[i, j]] * sum_dx);
            }
        }
        (dx, LayerNormGrads { gamma: dgamma, beta: dbeta })
    }

    pub fn zeros_grads(&self) -> LayerNormGrads<F> {
        LayerNormGrads { gamma: Array1::zeros(self.gamma.len()), beta: Array1::zeros(self.beta.len()) }
    }

    /// Add a gradient into this instance (used when a zeroed clone of the
    /// model accumulates per-sample gradients).
    pub fn add_grads(&mut self, g: &LayerNormGrads<F>) {
        self.gamma.scaled_add(F::one(), &g.gamma);
        self.beta.scaled_add(F::one(), &g.beta);
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view().into_dyn()));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view_mut().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view_mut().into_dyn()));
    }
}

impl<F: NdFloat> LayerNormGrads<F> {
    pub fn accumulate(&mut self, other: &LayerNormGrads<F>) {
        self.gamma.scaled_add(F::one(), &other.gamma);
        self.beta.scaled_add(F::one(), &other.beta);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.view_mut().into_dyn()));
        out.push((format!("{prefix}.beta"), self.beta.view_mut().into_dyn()));
    }
}
