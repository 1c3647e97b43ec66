//! Decoder: upsample the deepest features back to input resolution with
//! skip concatenation at each scale, ending in a single-channel logit map.

use ndarray::{concatenate, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis, NdFloat};
use rand::Rng;

use crate::nn::{
    relu, relu_backward, upsample_nearest, upsample_nearest_backward, Conv2d, ConvCache,
    GroupNorm, GroupNormCache,
};

use super::encoder::{norm_groups, ScalePyramid};

#[derive(Debug, Clone)]
struct UpBlock<F> {
    conv: Conv2d<F>,
    norm: GroupNorm<F>,
}

struct UpBlockCache<F> {
    c_conv: ConvCache<F>,
    norm_cache: GroupNormCache<F>,
    norm_out: Array3<F>,
    up_channels: usize,
}

impl<F: NdFloat> UpBlock<F> {
    fn init<R: Rng>(c_up: usize, c_skip: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::init(c_up + c_skip, c_out, 3, 1, 1, false, rng),
            norm: GroupNorm::new(c_out, norm_groups(c_out)),
        }
    }

    fn forward(&self, below: &Array3<F>, skip: &Array3<F>) -> (Array3<F>, UpBlockCache<F>) {
        let up = upsample_nearest(below, 2);
        let cat = concatenate![Axis(0), up.view(), skip.view()];
        let (c, c_conv) = self.conv.forward(&cat);
        let (n, norm_cache) = self.norm.forward(&c);
        let out = relu(&n);
        (out, UpBlockCache { c_conv, norm_cache, norm_out: n, up_channels: up.dim().0 })
    }

    /// Returns (gradient for the features below, gradient for the skip).
    fn backward(
        &self,
        dout: &Array3<F>,
        cache: &UpBlockCache<F>,
        grads: &mut Self,
    ) -> (Array3<F>, Array3<F>) {
        let dn = relu_backward(dout, &cache.norm_out);
        let (dc, g_norm) = self.norm.backward(&dn, &cache.norm_cache);
        grads.norm.add_grads(&g_norm);
        let (dcat, g_conv) = self.conv.backward(&dc, &cache.c_conv);
        grads.conv.add_grads(&g_conv);
        let dup = dcat.slice(ndarray::s![..cache.up_channels, .., ..]).to_owned();
        let dskip = dcat.slice(ndarray::s![cache.up_channels.., .., ..]).to_owned();
        (upsample_nearest_backward(&dup, 2), dskip)
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.conv.named(&format!("{prefix}.conv"), out);
        self.norm.named(&format!("{prefix}.norm"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.conv.named_mut(&format!("{prefix}.conv"), out);
        self.norm.named_mut(&format!("{prefix}.norm"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<F> {
    blocks: Vec<UpBlock<F>>,
    head: Conv2d<F>,
}

pub struct DecoderCache<F> {
    block_caches: Vec<UpBlockCache<F>>,
    c_head: ConvCache<F>,
}

impl<F: NdFloat> Decoder<F> {
    /// `encoder_widths` are the channel counts at strides 1..8, `widths` the
    /// decoder channel counts from coarsest merge to finest.
    pub fn init<R: Rng>(encoder_widths: &[usize; 4], widths: &[usize; 3], rng: &mut R) -> Self {
        Self {
            blocks: vec![
                UpBlock::init(encoder_widths[3], encoder_widths[2], widths[0], rng),
                UpBlock::init(widths[0], encoder_widths[1], widths[1], rng),
                UpBlock::init(widths[1], encoder_widths[0], widths[2], rng),
            ],
            head: Conv2d::init(widths[2], 1, 1, 1, 0, true, rng),
        }
    }

    pub fn forward(&self, feats: &ScalePyramid<F>) -> (Array2<F>, DecoderCache<F>) {
        let (u3, c3) = self.blocks[0].forward(&feats[3], &feats[2]);
        let (u2, c2) = self.blocks[1].forward(&u3, &feats[1]);
        let (u1, c1) = self.blocks[2].forward(&u2, &feats[0]);
        let (logit_map, c_head) = self.head.forward(&u1);
        let logits = logit_map.index_axis(Axis(0), 0).to_owned();
        (logits, DecoderCache { block_caches: vec![c3, c2, c1], c_head })
    }

    /// Backward from the logit gradient; returns gradients for all four
    /// encoder scales.
    pub fn backward(
        &self,
        dlogits: &Array2<F>,
        cache: &DecoderCache<F>,
        grads: &mut Self,
    ) -> ScalePyramid<F> {
        let dmap = dlogits.view().insert_axis(Axis(0)).to_owned();
        let (du1, g_head) = self.head.backward(&dmap, &cache.c_head);
        grads.head.add_grads(&g_head);
        let (du2, ds1) = self.blocks[2].backward(&du1, &cache.block_caches[2], &mut grads.blocks[2]);
        let (du3, ds2) = self.blocks[1].backward(&du2, &cache.block_caches[1], &mut grads.blocks[1]);
        let (ds4, ds3) = self.blocks[0].backward(&du3, &cache.block_caches[0], &mut grads.blocks[0]);
        [ds1, ds2, ds3, ds4]
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&format!("{prefix}.up{i}"), out);
        }
        self.head.named(&format!("{prefix}.head"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.named_mut(&format!("{prefix}.up{i}"), out);
        }
        self.head.named_mut(&format!("{prefix}.head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pyramid(base: usize, widths: &[usize; 4], seed: u64) -> ScalePyramid<f64> {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        [
            Array3::from_shape_fn((widths[0], base, base), |_| rng.random_range(-1.0..1.0)),
            Array3::from_shape_fn((widths[1], base / 2, base / 2), |_| rng.random_range(-1.0..1.0)),
            Array3::from_shape_fn((widths[2], base / 4, base / 4), |_| rng.random_range(-1.0..1.0)),
            Array3::from_shape_fn((widths[3], base / 8, base / 8), |_| rng.random_range(-1.0..1.0)),
        ]
    }

    #[test]
    fn logits_match_input_extent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dec = Decoder::<f64>::init(&[8, 16, 32, 64], &[32, 16, 8], &mut rng);
        let feats = pyramid(64, &[8, 16, 32, 64], 7);
        let (logits, _) = dec.forward(&feats);
        assert_eq!(logits.dim(), (64, 64));
    }

    #[test]
    fn zero_parameters_give_constant_logits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut dec = Decoder::<f64>::init(&[4, 4, 8, 8], &[8, 4, 4], &mut rng);
        let mut views = Vec::new();
        dec.named_mut("dec", &mut views);
        for (_, v) in views.iter_mut() {
            v.fill(0.0);
        }
        let feats = pyramid(16, &[4, 4, 8, 8], 11);
        let (logits, _) = dec.forward(&feats);
        let first = logits[[0, 0]];
        assert!(logits.iter().all(|&v| v == first));
    }

    #[test]
    fn skip_gradients_match_central_differences() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let dec = Decoder::<f64>::init(&[2, 2, 4, 4], &[4, 2, 2], &mut rng);
        let feats = pyramid(16, &[2, 2, 4, 4], 8);
        let dout = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = dec.forward(&feats);
        let mut grads = dec.clone();
        {
            let mut views = Vec::new();
            grads.named_mut("dec", &mut views);
            for (_, v) in views.iter_mut() {
                v.fill(0.0);
            }
        }
        let dskips = dec.backward(&dout, &cache, &mut grads);
        let h = 1e-6;
        for scale in 0..4 {
            let mut f = feats.clone();
            let idx = f[scale].len() / 3;
            let orig = *f[scale].iter().nth(idx).unwrap();
            *f[scale].iter_mut().nth(idx).unwrap() = orig + h;
            let (lp, _) = dec.forward(&f);
            *f[scale].iter_mut().nth(idx).unwrap() = orig - h;
            let (lm, _) = dec.forward(&f);
            let fd = ((&lp - &lm) * &dout).sum() / (2.0 * h);
            let an = *dskips[scale].iter().nth(idx).unwrap();
            let rel = (fd - an).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "scale {scale}: fd {fd} vs analytic {an}");
        }
    }
}
