//! Lightweight temporal attention over per-day feature pyramids.
//!
//! Attention weights are computed once at the deepest scale from learned
//! per-head queries against keys projected from the deepest features plus a
//! sinusoidal encoding of each day's time coordinate. The per-head weights
//! are then upsampled and applied to the raw per-day features at every scale
//! as a weighted temporal sum, so the fused output keeps the encoder's
//! pyramid shape.

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{
    softmax_axis, softmax_backward, upsample_nearest, upsample_nearest_backward, Linear,
    LinearCache,
};

use super::encoder::ScalePyramid;
use super::positional_encoding;

#[derive(Debug, Clone)]
pub struct LtaeFusion<F> {
    /// One key projection per head, `d_k x d_k`, no bias.
    keys: Vec<Linear<F>>,
    /// Learned queries, one row per head.
    query: Array2<F>,
}

pub struct LtaeCache<F> {
    /// Softmax attention over days, `(heads, t, h8, w8)`.
    pub mask: Array4<F>,
    /// Per-day positional embeddings, `(t, deepest_width)`.
    pub pe: Array2<F>,
    key_caches: Vec<Vec<LinearCache<F>>>,
    key_outs: Vec<Vec<Array2<F>>>,
}

impl<F: NdFloat> LtaeFusion<F> {
    pub fn init<R: Rng>(deepest_width: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads >= 1 && deepest_width % heads == 0, "heads must divide the deepest width");
        let d_k = deepest_width / heads;
        let normal = Normal::new(0.0, (1.0 / d_k as f64).sqrt()).unwrap();
        let mut query = Array2::zeros((heads, d_k));
        for v in query.iter_mut() {
            *v = F::from(normal.sample(rng)).unwrap();
        }
        Self { keys: (0..heads).map(|_| Linear::init(d_k, d_k, false, rng)).collect(), query }
    }

    pub fn heads(&self) -> usize {
        self.query.dim().0
    }

    /// Fuses per-day pyramids into one pyramid. `t_bars` is the per-day time
    /// coordinate fed to the positional encoding, oldest day first.
    pub fn fuse(&self, day_feats: &[ScalePyramid<F>], t_bars: &[F]) -> (ScalePyramid<F>, LtaeCache<F>) {
        let t = day_feats.len();
        assert!(t >= 1 && t_bars.len() == t, "one time coordinate per day");
        let (c4, h8, w8) = day_feats[0][3].dim();
        let heads = self.heads();
        let d_k = self.query.dim().1;
        assert_eq!(c4, heads * d_k, "deepest width must match heads * d_k");
        let tokens_n = h8 * w8;
        let scale = F::from(1.0 / (d_k as f64).sqrt()).unwrap();

        let mut logits = Array4::zeros((heads, t, h8, w8));
        let mut key_caches: Vec<Vec<LinearCache<F>>> = (0..heads).map(|_| Vec::new()).collect();
        let mut key_outs: Vec<Vec<Array2<F>>> = (0..heads).map(|_| Vec::new()).collect();
        let mut pe_rows = Array2::zeros((t, c4));
        for day in 0..t {
            let z = &day_feats[day][3];
            let pe: Array1<F> = positional_encoding(t_bars[day], c4)
                .expect("deepest width must be even for the positional encoding");
            pe_rows.row_mut(day).assign(&pe);
            for g in 0..heads {
                let mut tok = Array2::zeros((tokens_n, d_k));
                for j in 0..d_k {
                    let c = g * d_k + j;
                    for y in 0..h8 {
                        for x in 0..w8 {
                            tok[[y * w8 + x, j]] = z[[c, y, x]] + pe[c];
                        }
                    }
                }
                let (k, kcache) = self.keys[g].forward(&tok);
                for y in 0..h8 {
                    for x in 0..w8 {
                        let mut dot = F::zero();
                        for j in 0..d_k {
                            dot = dot + self.query[[g, j]] * k[[y * w8 + x, j]];
                        }
                        logits[[g, day, y, x]] = dot * scale;
                    }
                }
                key_caches[g].push(kcache);
                key_outs[g].push(k);
            }
        }
        let mask = softmax_axis(&logits, 1);

        let fused = core::array::from_fn(|s| {
            let (c_s, h_s, w_s) = day_feats[0][s].dim();
            let group = c_s / heads;
            let factor = h_s / h8;
            let up = upsampled_mask(&mask, factor);
            let mut out = Array3::zeros((c_s, h_s, w_s));
            for ci in 0..c_s {
                let g = ci / group;
                for day in 0..t {
                    let plane = g * t + day;
                    for y in 0..h_s {
                        for x in 0..w_s {
                            out[[ci, y, x]] =
                                out[[ci, y, x]] + up[[plane, y, x]] * day_feats[day][s][[ci, y, x]];
                        }
                    }
                }
            }
            out
        });
        (fused, LtaeCache { mask, pe: pe_rows, key_caches, key_outs })
    }

    /// Backward from per-scale fused gradients; returns per-day pyramid
    /// gradients and accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        dfused: &ScalePyramid<F>,
        day_feats: &[ScalePyramid<F>],
        cache: &LtaeCache<F>,
        grads: &mut Self,
    ) -> Vec<ScalePyramid<F>> {
        let t = day_feats.len();
        let (heads, _, h8, w8) = cache.mask.dim();
        let d_k = self.query.dim().1;
        let scale = F::from(1.0 / (d_k as f64).sqrt()).unwrap();
        let mut ddays: Vec<ScalePyramid<F>> = (0..t)
            .map(|day| core::array::from_fn(|s| Array3::zeros(day_feats[day][s].dim())))
            .collect();
        let mut dmask: Array4<F> = Array4::zeros(cache.mask.dim());

        for s in 0..4 {
            let (c_s, h_s, w_s) = day_feats[0][s].dim();
            let group = c_s / heads;
            let factor = h_s / h8;
            let up = upsampled_mask(&cache.mask, factor);
            let mut dup = Array3::zeros((heads * t, h_s, w_s));
            for ci in 0..c_s {
                let g = ci / group;
                for day in 0..t {
                    let plane = g * t + day;
                    for y in 0..h_s {
                        for x in 0..w_s {
                            let d = dfused[s][[ci, y, x]];
                            ddays[day][s][[ci, y, x]] =
                                ddays[day][s][[ci, y, x]] + up[[plane, y, x]] * d;
                            dup[[plane, y, x]] =
                                dup[[plane, y, x]] + d * day_feats[day][s][[ci, y, x]];
                        }
                    }
                }
            }
            let down = upsample_nearest_backward(&dup, factor);
            for g in 0..heads {
                for day in 0..t {
                    for y in 0..h8 {
                        for x in 0..w8 {
                            dmask[[g, day, y, x]] =
                                dmask[[g, day, y, x]] + down[[g * t + day, y, x]];
                        }
                    }
                }
            }
        }

        let dlogits = softmax_backward(&dmask, &cache.mask, 1);
        for g in 0..heads {
            for day in 0..t {
                let k = &cache.key_outs[g][day];
                let mut dk = Array2::zeros(k.dim());
                for y in 0..h8 {
                    for x in 0..w8 {
                        let dl = dlogits[[g, day, y, x]] * scale;
                        for j in 0..d_k {
                            grads.query[[g, j]] =
                                grads.query[[g, j]] + dl * k[[y * w8 + x, j]];
                            dk[[y * w8 + x, j]] = dl * self.query[[g, j]];
                        }
                    }
                }
                let (dtok, g_key) = self.keys[g].backward(&dk, &cache.key_caches[g][day]);
                grads.keys[g].add_grads(&g_key);
                for j in 0..d_k {
                    let c = g * d_k + j;
                    for y in 0..h8 {
                        for x in 0..w8 {
                            ddays[day][3][[c, y, x]] =
                                ddays[day][3][[c, y, x]] + dtok[[y * w8 + x, j]];
                        }
                    }
                }
            }
        }
        ddays
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        out.push((format!("{prefix}.query"), self.query.view().into_dyn()));
        for (g, k) in self.keys.iter().enumerate() {
            k.named(&format!("{prefix}.key{g}"), out);
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        out.push((format!("{prefix}.query"), self.query.view_mut().into_dyn()));
        for (g, k) in self.keys.iter_mut().enumerate() {
            k.named_mut(&format!("{prefix}.key{g}"), out);
        }
    }
}

/// Flattens `(heads, t, h8, w8)` to planes and upsamples each by `factor`.
fn upsampled_mask<F: NdFloat>(mask: &Array4<F>, factor: usize) -> Array3<F> {
    let (heads, t, h8, w8) = mask.dim();
    let flat = Array3::from_shape_fn((heads * t, h8, w8), |(p, y, x)| mask[[p / t, p % t, y, x]]);
    if factor == 1 { flat } else { upsample_nearest(&flat, factor) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_pyramid(widths: &[usize; 4], base: usize, rng: &mut impl Rng) -> ScalePyramid<f64> {
        core::array::from_fn(|s| {
            let d = base >> s;
            Array3::from_shape_fn((widths[s], d, d), |_| rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn single_day_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ltae = LtaeFusion::<f64>::init(4, 2, &mut rng);
        let feats = vec![random_pyramid(&[2, 2, 4, 4], 16, &mut rng)];
        let (fused, cache) = ltae.fuse(&feats, &[1.0]);
        for s in 0..4 {
            assert_eq!(fused[s], feats[0][s], "scale {s} must pass through unchanged");
        }
        assert!(cache.mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn identical_days_get_uniform_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let ltae = LtaeFusion::<f64>::init(4, 2, &mut rng);
        let day = random_pyramid(&[2, 2, 4, 4], 16, &mut rng);
        let feats = vec![day.clone(), day.clone(), day.clone(), day.clone()];
        let (fused, cache) = ltae.fuse(&feats, &[7.0, 7.0, 7.0, 7.0]);
        assert!(cache.mask.iter().all(|&m| m == 0.25));
        for s in 0..4 {
            for (a, b) in fused[s].iter().zip(day[s].iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_sum_to_one_over_days() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let ltae = LtaeFusion::<f64>::init(8, 4, &mut rng);
        let feats: Vec<_> = (0..3).map(|_| random_pyramid(&[4, 4, 8, 8], 16, &mut rng)).collect();
        let (_, cache) = ltae.fuse(&feats, &[10.0, 11.0, 12.0]);
        let (heads, _, h8, w8) = cache.mask.dim();
        for g in 0..heads {
            for y in 0..h8 {
                for x in 0..w8 {
                    let s: f64 = (0..3).map(|d| cache.mask[[g, d, y, x]]).sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let ltae = LtaeFusion::<f64>::init(4, 2, &mut rng);
        let feats: Vec<_> = (0..2).map(|_| random_pyramid(&[2, 2, 4, 4], 16, &mut rng)).collect();
        let t_bars = [1.0, 2.0];
        let dout: ScalePyramid<f64> = core::array::from_fn(|s| {
            Array3::from_shape_fn(feats[0][s].dim(), |_| rng.random_range(-1.0..1.0))
        });
        let probe = |ltae: &LtaeFusion<f64>, feats: &[ScalePyramid<f64>]| -> f64 {
            let (fused, _) = ltae.fuse(feats, &t_bars);
            (0..4).map(|s| (&fused[s] * &dout[s]).sum()).sum()
        };
        let (_, cache) = ltae.fuse(&feats, &t_bars);
        let mut grads = ltae.clone();
        {
            let mut views = Vec::new();
            grads.named_mut("g", &mut views);
            for (_, v) in views.iter_mut() {
                v.fill(0.0);
            }
        }
        let ddays = ltae.backward(&dout, &feats, &cache, &mut grads);
        let h = 1e-6;

        // parameters
        let n_tensors = {
            let mut v = Vec::new();
            grads.named_mut("g", &mut v);
            v.len()
        };
        for ti in 0..n_tensors {
            let (name, idx, an) = {
                let mut v = Vec::new();
                grads.named_mut("g", &mut v);
                let flat: Vec<f64> = v[ti].1.iter().copied().collect();
                (v[ti].0.clone(), flat.len() / 2, flat[flat.len() / 2])
            };
            let mut probe_model = ltae.clone();
            let orig = {
                let mut v = Vec::new();
                probe_model.named_mut("g", &mut v);
                *v[ti].1.iter().nth(idx).unwrap()
            };
            let set = |m: &mut LtaeFusion<f64>, val: f64| {
                let mut v = Vec::new();
                m.named_mut("g", &mut v);
                *v[ti].1.iter_mut().nth(idx).unwrap() = val;
            };
            set(&mut probe_model, orig + h);
            let plus = probe(&probe_model, &feats);
            set(&mut probe_model, orig - h);
            let minus = probe(&probe_model, &feats);
            let fd = (plus - minus) / (2.0 * h);
            let rel = (fd - an).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "{name}[{idx}]: fd {fd} vs analytic {an}");
        }

        // inputs at each scale and day
        for day in 0..2 {
            for s in 0..4 {
                let idx = feats[day][s].len() / 3;
                let mut f = feats.clone();
                let orig = *f[day][s].iter().nth(idx).unwrap();
                *f[day][s].iter_mut().nth(idx).unwrap() = orig + h;
                let plus = probe(&ltae, &f);
                *f[day][s].iter_mut().nth(idx).unwrap() = orig - h;
                let minus = probe(&ltae, &f);
                let fd = (plus - minus) / (2.0 * h);
                let an = *ddays[day][s].iter().nth(idx).unwrap();
                let rel = (fd - an).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "day {day} scale {s}: fd {fd} vs analytic {an}");
            }
        }
    }
}
