//! Stateless tensor ops: ReLU, nearest-neighbor upsampling, softmax.

use ndarray::{Array, Array3, Axis, Dimension, NdFloat};

pub fn relu<F: NdFloat, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v.max(F::zero()))
}

/// Gradient through ReLU: passes where the forward input was positive.
pub fn relu_backward<F: NdFloat, D: Dimension>(dout: &Array<F, D>, x: &Array<F, D>) -> Array<F, D> {
    let mut dx = dout.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Nearest-neighbor upsampling of (channels, h, w) by an integer factor.
pub fn upsample_nearest<F: NdFloat>(x: &Array3<F>, factor: usize) -> Array3<F> {
    assert!(factor >= 1);
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h * factor, w * factor));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = x[[ci, i, j]];
                for di in 0..factor {
                    for dj in 0..factor {
                        y[[ci, i * factor + di, j * factor + dj]] = v;
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of nearest-neighbor upsampling: sum over each factor x factor block.
pub fn upsample_nearest_backward<F: NdFloat>(dout: &Array3<F>, factor: usize) -> Array3<F> {
    let (c, hf, wf) = dout.dim();
    assert!(hf % factor == 0 && wf % factor == 0, "upsampled extent must divide");
    let (h, w) = (hf / factor, wf / factor);
    let mut dx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..hf {
            for j in 0..wf {
                dx[[ci, i / factor, j / factor]] =
                    dx[[ci, i / factor, j / factor]] + dout[[ci, i, j]];
            }
        }
    }
    dx
}

/// Softmax along `axis`, numerically stabilized by the per-lane maximum.
pub fn softmax_axis<F: NdFloat, D: Dimension>(x: &Array<F, D>, axis: usize) -> Array<F, D> {
    let mut y = x.clone();
    for mut lane in y.lanes_mut(Axis(axis)) {
        let max = lane.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in lane.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in lane.iter_mut() {
            *v = *v / sum;
        }
    }
    y
}

/// Gradient through softmax given its output `y`:
/// `dx = y * (dout - sum(dout * y))` per lane.
pub fn softmax_backward<F: NdFloat, D: Dimension>(
    dout: &Array<F, D>,
    y: &Array<F, D>,
    axis: usize,
) -> Array<F, D> {
    let mut dx = dout.clone();
    ndarray::Zip::from(dx.lanes_mut(Axis(axis)))
        .and(y.lanes(Axis(axis)))
        .for_each(|mut dlane, ylane| {
            let mut dot = F::zero();
            for (d, &yv) in dlane.iter().zip(ylane.iter()) {
                dot = dot + *d * yv;
            }
            for (d, &yv) in dlane.iter_mut().zip(ylane.iter()) {
                *d = yv * (*d - dot);
            }
        });
    dx
}
