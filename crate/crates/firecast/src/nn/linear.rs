//! Dense layer over (tokens, features) matrices.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Linear<F> {
    /// (out_features, in_features)
    pub weight: Array2<F>,
    pub bias: Option<Array1<F>>,
}

pub struct LinearCache<F> {
    x: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<F> {
    pub weight: Array2<F>,
    pub bias: Option<Array1<F>>,
}

impl<F: NdFloat> Linear<F> {
    pub fn zeros(d_in: usize, d_out: usize, bias: bool) -> Self {
        Self { weight: Array2::zeros((d_out, d_in)), bias: bias.then(|| Array1::zeros(d_out)) }
    }

    /// He-normal weight init, zero bias.
    pub fn init<R: Rng>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let mut layer = Self::zeros(d_in, d_out, bias);
        let dist = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("valid std");
        for v in layer.weight.iter_mut() {
            *v = F::from(dist.sample(rng)).unwrap();
        }
        layer
    }

    /// x: (tokens, in_features) -> (tokens, out_features)
    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LinearCache<F>) {
        assert_eq!(x.dim().1, self.weight.dim().1, "linear input width");
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            for mut row in y.rows_mut() {
                row.scaled_add(F::one(), b);
            }
        }
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&self, dout: &Array2<F>, cache: &LinearCache<F>) -> (Array2<F>, LinearGrads<F>) {
        let dweight = dout.t().dot(&cache.x);
        let dbias = self.bias.as_ref().map(|_| dout.sum_axis(Axis(0)));
        let dx = dout.dot(&self.weight);
        (dx, LinearGrads { weight: dweight, bias: dbias })
    }

    pub fn zeros_grads(&self) -> LinearGrads<F> {
        LinearGrads {
            weight: Array2::zeros(self.weight.dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.dim())),
        }
    }

    /// Add a gradient into this instance (used when a zeroed clone of the
    /// model accumulates per-sample gradients).
    pub fn add_grads(&mut self, g: &LinearGrads<F>) {
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

impl<F: NdFloat> LinearGrads<F> {
    pub fn accumulate(&mut self, other: &LinearGrads<F>) {
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
