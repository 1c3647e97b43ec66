//! Multi-scale encoders: residual convolutions and windowed self-attention.
//!
//! Both families map (C, H, W) to four feature maps at strides 1, 2, 4, 8
//! with the configured widths, so the decoder and the temporal fusion are
//! family-agnostic.

use ndarray::{Array2, Array3, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::Rng;

use crate::nn::{
    relu, relu_backward, softmax_axis, softmax_backward, Conv2d, ConvCache, GroupNorm,
    GroupNormCache, LayerNorm, LayerNormCache, Linear, LinearCache,
};

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Group count for group normalization: 8 when the width allows, otherwise
/// the largest divisor of 8 that divides the width.
pub(crate) fn norm_groups(channels: usize) -> usize {
    gcd(8, channels)
}

/// Four feature maps at strides 1, 2, 4, 8.
pub type ScalePyramid<F> = [Array3<F>; 4];

// ---------------------------------------------------------------------------
// residual-conv family

#[derive(Debug, Clone)]
struct ResidualStage<F> {
    main1: Conv2d<F>,
    n1: GroupNorm<F>,
    main2: Conv2d<F>,
    n2: GroupNorm<F>,
    skip: Conv2d<F>,
    ns: GroupNorm<F>,
}

struct ResidualStageCache<F> {
    c_main1: ConvCache<F>,
    n1_cache: GroupNormCache<F>,
    n1_out: Array3<F>,
    c_main2: ConvCache<F>,
    n2_cache: GroupNormCache<F>,
    c_skip: ConvCache<F>,
    ns_cache: GroupNormCache<F>,
    sum: Array3<F>,
}

impl<F: NdFloat> ResidualStage<F> {
    fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            main1: Conv2d::init(c_in, c_out, 3, 2, 1, false, rng),
            n1: GroupNorm::new(c_out, norm_groups(c_out)),
            main2: Conv2d::init(c_out, c_out, 3, 1, 1, false, rng),
            n2: GroupNorm::new(c_out, norm_groups(c_out)),
            skip: Conv2d::init(c_in, c_out, 1, 2, 0, false, rng),
            ns: GroupNorm::new(c_out, norm_groups(c_out)),
        }
    }

    fn forward(&self, x: &Array3<F>) -> (Array3<F>, ResidualStageCache<F>) {
        let (m1, c_main1) = self.main1.forward(x);
        let (n1_out, n1_cache) = self.n1.forward(&m1);
        let r1 = relu(&n1_out);
        let (m2, c_main2) = self.main2.forward(&r1);
        let (n2_out, n2_cache) = self.n2.forward(&m2);
        let (sk, c_skip) = self.skip.forward(x);
        let (ns_out, ns_cache) = self.ns.forward(&sk);
        let sum = &n2_out + &ns_out;
        let out = relu(&sum);
        (out, ResidualStageCache { c_main1, n1_cache, n1_out, c_main2, n2_cache, c_skip, ns_cache, sum })
    }

    fn backward(&self, dout: &Array3<F>, cache: &ResidualStageCache<F>, grads: &mut Self) -> Array3<F> {
        let dsum = relu_backward(dout, &cache.sum);
        let (dm2, g_n2) = self.n2.backward(&dsum, &cache.n2_cache);
        grads.n2.add_grads(&g_n2);
        let (dr1, g_main2) = self.main2.backward(&dm2, &cache.c_main2);
        grads.main2.add_grads(&g_main2);
        let dn1_out = relu_backward(&dr1, &cache.n1_out);
        let (dm1, g_n1) = self.n1.backward(&dn1_out, &cache.n1_cache);
        grads.n1.add_grads(&g_n1);
        let (dx_main, g_main1) = self.main1.backward(&dm1, &cache.c_main1);
        grads.main1.add_grads(&g_main1);
        let (dsk, g_ns) = self.ns.backward(&dsum, &cache.ns_cache);
        grads.ns.add_grads(&g_ns);
        let (dx_skip, g_skip) = self.skip.backward(&dsk, &cache.c_skip);
        grads.skip.add_grads(&g_skip);
        dx_main + dx_skip
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.main1.named(&format!("{prefix}.main1"), out);
        self.n1.named(&format!("{prefix}.n1"), out);
        self.main2.named(&format!("{prefix}.main2"), out);
        self.n2.named(&format!("{prefix}.n2"), out);
        self.skip.named(&format!("{prefix}.skip"), out);
        self.ns.named(&format!("{prefix}.ns"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.main1.named_mut(&format!("{prefix}.main1"), out);
        self.n1.named_mut(&format!("{prefix}.n1"), out);
        self.main2.named_mut(&format!("{prefix}.main2"), out);
        self.n2.named_mut(&format!("{prefix}.n2"), out);
        self.skip.named_mut(&format!("{prefix}.skip"), out);
        self.ns.named_mut(&format!("{prefix}.ns"), out);
    }
}

#[derive(Debug, Clone)]
pub struct ResidualEncoder<F> {
    stem: Conv2d<F>,
    stem_norm: GroupNorm<F>,
    stages: Vec<ResidualStage<F>>,
}

pub struct ResidualEncoderCache<F> {
    c_stem: ConvCache<F>,
    stem_norm_cache: GroupNormCache<F>,
    stem_norm_out: Array3<F>,
    stage_caches: Vec<ResidualStageCache<F>>,
}

impl<F: NdFloat> ResidualEncoder<F> {
    pub fn init<R: Rng>(in_channels: usize, widths: &[usize; 4], rng: &mut R) -> Self {
        Self {
            stem: Conv2d::init(in_channels, widths[0], 3, 1, 1, false, rng),
            stem_norm: GroupNorm::new(widths[0], norm_groups(widths[0])),
            stages: (0..3).map(|i| ResidualStage::init(widths[i], widths[i + 1], rng)).collect(),
        }
    }

    pub fn forward(&self, x: &Array3<F>) -> (ScalePyramid<F>, ResidualEncoderCache<F>) {
        let (s, c_stem) = self.stem.forward(x);
        let (sn, stem_norm_cache) = self.stem_norm.forward(&s);
        let f1 = relu(&sn);
        let mut stage_caches = Vec::with_capacity(3);
        let (f2, c) = self.stages[0].forward(&f1);
        stage_caches.push(c);
        let (f3, c) = self.stages[1].forward(&f2);
        stage_caches.push(c);
        let (f4, c) = self.stages[2].forward(&f3);
        stage_caches.push(c);
        ([f1, f2, f3, f4], ResidualEncoderCache { c_stem, stem_norm_cache, stem_norm_out: sn, stage_caches })
    }

    /// Backward from gradients at all four scales; returns the input gradient.
    pub fn backward(
        &self,
        douts: &ScalePyramid<F>,
        cache: &ResidualEncoderCache<F>,
        grads: &mut Self,
    ) -> Array3<F> {
        let g3 = self.stages[2].backward(&douts[3], &cache.stage_caches[2], &mut grads.stages[2]);
        let g3 = g3 + &douts[2];
        let g2 = self.stages[1].backward(&g3, &cache.stage_caches[1], &mut grads.stages[1]);
        let g2 = g2 + &douts[1];
        let g1 = self.stages[0].backward(&g2, &cache.stage_caches[0], &mut grads.stages[0]);
        let g1 = g1 + &douts[0];
        let dsn = relu_backward(&g1, &cache.stem_norm_out);
        let (ds, g_norm) = self.stem_norm.backward(&dsn, &cache.stem_norm_cache);
        grads.stem_norm.add_grads(&g_norm);
        let (dx, g_stem) = self.stem.backward(&ds, &cache.c_stem);
        grads.stem.add_grads(&g_stem);
        dx
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.stem.named(&format!("{prefix}.stem"), out);
        self.stem_norm.named(&format!("{prefix}.stem_norm"), out);
        for (i, st) in self.stages.iter().enumerate() {
            st.named(&format!("{prefix}.stage{i}"), out);
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.stem.named_mut(&format!("{prefix}.stem"), out);
        self.stem_norm.named_mut(&format!("{prefix}.stem_norm"), out);
        for (i, st) in self.stages.iter_mut().enumerate() {
            st.named_mut(&format!("{prefix}.stage{i}"), out);
        }
    }
}

// ---------------------------------------------------------------------------
// windowed-attention family

/// One pre-norm transformer block with self-attention inside non-overlapping
/// square windows followed by a two-layer MLP.
#[derive(Debug, Clone)]
struct WindowAttnBlock<F> {
    ln1: LayerNorm<F>,
    qkv: Linear<F>,
    proj: Linear<F>,
    ln2: LayerNorm<F>,
    mlp1: Linear<F>,
    mlp2: Linear<F>,
}

struct WindowAttnCache<F> {
    extent: (usize, usize, usize),
    win: usize,
    ln1_cache: LayerNormCache<F>,
    qkv_cache: LinearCache<F>,
    qkv_out: Array2<F>,
    attn: Vec<Array2<F>>,
    proj_cache: LinearCache<F>,
    ln2_cache: LayerNormCache<F>,
    mlp1_cache: LinearCache<F>,
    mlp1_out: Array2<F>,
    mlp2_cache: LinearCache<F>,
}

/// Window partition: (C, H, W) -> (H*W, C) tokens ordered window-major,
/// row-major inside a window. Exact inverse of [`tokens_to_map`].
fn map_to_tokens<F: NdFloat>(x: &Array3<F>, win: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let mut tokens = Array2::zeros((h * w, c));
    let mut row = 0;
    for wy in 0..h / win {
        for wx in 0..w / win {
            for iy in 0..win {
                for ix in 0..win {
                    for ci in 0..c {
                        tokens[[row, ci]] = x[[ci, wy * win + iy, wx * win + ix]];
                    }
                    row += 1;
                }
            }
        }
    }
    tokens
}

fn tokens_to_map<F: NdFloat>(tokens: &Array2<F>, extent: (usize, usize, usize), win: usize) -> Array3<F> {
    let (c, h, w) = extent;
    let mut x = Array3::zeros(extent);
    let mut row = 0;
    for wy in 0..h / win {
        for wx in 0..w / win {
            for iy in 0..win {
                for ix in 0..win {
                    for ci in 0..c {
                        x[[ci, wy * win + iy, wx * win + ix]] = tokens[[row, ci]];
                    }
                    row += 1;
                }
            }
        }
    }
    x
}

impl<F: NdFloat> WindowAttnBlock<F> {
    fn init<R: Rng>(c: usize, rng: &mut R) -> Self {
        Self {
            ln1: LayerNorm::new(c),
            qkv: Linear::init(c, 3 * c, true, rng),
            proj: Linear::init(c, c, true, rng),
            ln2: LayerNorm::new(c),
            mlp1: Linear::init(c, 2 * c, true, rng),
            mlp2: Linear::init(2 * c, c, true, rng),
        }
    }

    fn forward(&self, x: &Array3<F>) -> (Array3<F>, WindowAttnCache<F>) {
        let (c, h, w) = x.dim();
        let win = gcd(8, gcd(h, w));
        let m = win * win;
        let tokens = map_to_tokens(x, win);
        let (a, ln1_cache) = self.ln1.forward(&tokens);
        let (qkv_out, qkv_cache) = self.qkv.forward(&a);
        let scale = F::one() / F::from((c as f64).sqrt()).unwrap();
        let n_windows = (h / win) * (w / win);
        let mut attn = Vec::with_capacity(n_windows);
        let mut attn_out = Array2::zeros((h * w, c));
        for wi in 0..n_windows {
            let rows = wi * m..(wi + 1) * m;
            let q = qkv_out.slice(ndarray::s![rows.clone(), 0..c]);
            let k = qkv_out.slice(ndarray::s![rows.clone(), c..2 * c]);
            let v = qkv_out.slice(ndarray::s![rows.clone(), 2 * c..3 * c]);
            let mut scores = q.dot(&k.t());
            scores.mapv_inplace(|s| s * scale);
            let p = softmax_axis(&scores, 1);
            let o = p.dot(&v);
            attn_out.slice_mut(ndarray::s![rows, ..]).assign(&o);
            attn.push(p);
        }
        let (proj_out, proj_cache) = self.proj.forward(&attn_out);
        let y1 = &tokens + &proj_out;
        let (b, ln2_cache) = self.ln2.forward(&y1);
        let (mlp1_out, mlp1_cache) = self.mlp1.forward(&b);
        let r = relu(&mlp1_out);
        let (mlp2_out, mlp2_cache) = self.mlp2.forward(&r);
        let y = &y1 + &mlp2_out;
        let out = tokens_to_map(&y, x.dim(), win);
        (
            out,
            WindowAttnCache {
                extent: x.dim(),
                win,
                ln1_cache,
                qkv_cache,
                qkv_out,
                attn,
                proj_cache,
                ln2_cache,
                mlp1_cache,
                mlp1_out,
                mlp2_cache,
            },
        )
    }

    fn backward(&self, dout: &Array3<F>, cache: &WindowAttnCache<F>, grads: &mut Self) -> Array3<F> {
        let (c, h, w) = cache.extent;
        let win = cache.win;
        let m = win * win;
        let dy = map_to_tokens(dout, win);
        // y = y1 + mlp2(relu(mlp1(ln2(y1))))
        let (dr, g_mlp2) = self.mlp2.backward(&dy, &cache.mlp2_cache);
        grads.mlp2.add_grads(&g_mlp2);
        let dmlp1_out = relu_backward(&dr, &cache.mlp1_out);
        let (db, g_mlp1) = self.mlp1.backward(&dmlp1_out, &cache.mlp1_cache);
        grads.mlp1.add_grads(&g_mlp1);
        let (dy1_from_ln2, g_ln2) = self.ln2.backward(&db, &cache.ln2_cache);
        grads.ln2.add_grads(&g_ln2);
        let dy1 = &dy + &dy1_from_ln2;
        // y1 = tokens + proj(attn_out)
        let (dattn_out, g_proj) = self.proj.backward(&dy1, &cache.proj_cache);
        grads.proj.add_grads(&g_proj);
        let scale = F::one() / F::from((c as f64).sqrt()).unwrap();
        let n_windows = (h / win) * (w / win);
        let mut dqkv = Array2::zeros((h * w, 3 * c));
        for wi in 0..n_windows {
            let rows = wi * m..(wi + 1) * m;
            let q = cache.qkv_out.slice(ndarray::s![rows.clone(), 0..c]).to_owned();
            let k = cache.qkv_out.slice(ndarray::s![rows.clone(), c..2 * c]).to_owned();
            let v = cache.qkv_out.slice(ndarray::s![rows.clone(), 2 * c..3 * c]).to_owned();
            let p = &cache.attn[wi];
            let do_w = dattn_out.slice(ndarray::s![rows.clone(), ..]).to_owned();
            let dp = do_w.dot(&v.t());
            let dv = p.t().dot(&do_w);
            let ds = softmax_backward(&dp, p, 1);
            let mut dq = ds.dot(&k);
            dq.mapv_inplace(|x| x * scale);
            let mut dk = ds.t().dot(&q);
            dk.mapv_inplace(|x| x * scale);
            dqkv.slice_mut(ndarray::s![rows.clone(), 0..c]).assign(&dq);
            dqkv.slice_mut(ndarray::s![rows.clone(), c..2 * c]).assign(&dk);
            dqkv.slice_mut(ndarray::s![rows, 2 * c..3 * c]).assign(&dv);
        }
        let (da, g_qkv) = self.qkv.backward(&dqkv, &cache.qkv_cache);
        grads.qkv.add_grads(&g_qkv);
        let (dtokens_from_ln1, g_ln1) = self.ln1.backward(&da, &cache.ln1_cache);
        grads.ln1.add_grads(&g_ln1);
        let dtokens = &dy1 + &dtokens_from_ln1;
        tokens_to_map(&dtokens, cache.extent, win)
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.ln1.named(&format!("{prefix}.ln1"), out);
        self.qkv.named(&format!("{prefix}.qkv"), out);
        self.proj.named(&format!("{prefix}.proj"), out);
        self.ln2.named(&format!("{prefix}.ln2"), out);
        self.mlp1.named(&format!("{prefix}.mlp1"), out);
        self.mlp2.named(&format!("{prefix}.mlp2"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.ln1.named_mut(&format!("{prefix}.ln1"), out);
        self.qkv.named_mut(&format!("{prefix}.qkv"), out);
        self.proj.named_mut(&format!("{prefix}.proj"), out);
        self.ln2.named_mut(&format!("{prefix}.ln2"), out);
        self.mlp1.named_mut(&format!("{prefix}.mlp1"), out);
        self.mlp2.named_mut(&format!("{prefix}.mlp2"), out);
    }
}

#[derive(Debug, Clone)]
pub struct WindowedEncoder<F> {
    stem: Conv2d<F>,
    stem_norm: GroupNorm<F>,
    downs: Vec<(Conv2d<F>, GroupNorm<F>)>,
    blocks: Vec<WindowAttnBlock<F>>,
}

pub struct WindowedEncoderCache<F> {
    c_stem: ConvCache<F>,
    stem_norm_cache: GroupNormCache<F>,
    stem_norm_out: Array3<F>,
    down_caches: Vec<(ConvCache<F>, GroupNormCache<F>, Array3<F>)>,
    block_caches: Vec<WindowAttnCache<F>>,
}

impl<F: NdFloat> WindowedEncoder<F> {
    pub fn init<R: Rng>(in_channels: usize, widths: &[usize; 4], rng: &mut R) -> Self {
        Self {
            stem: Conv2d::init(in_channels, widths[0], 3, 1, 1, false, rng),
            stem_norm: GroupNorm::new(widths[0], norm_groups(widths[0])),
            downs: (0..3)
                .map(|i| {
                    (
                        Conv2d::init(widths[i], widths[i + 1], 3, 2, 1, false, rng),
                        GroupNorm::new(widths[i + 1], norm_groups(widths[i + 1])),
                    )
                })
                .collect(),
            blocks: (0..3).map(|i| WindowAttnBlock::init(widths[i + 1], rng)).collect(),
        }
    }

    pub fn forward(&self, x: &Array3<F>) -> (ScalePyramid<F>, WindowedEncoderCache<F>) {
        let (s, c_stem) = self.stem.forward(x);
        let (sn, stem_norm_cache) = self.stem_norm.forward(&s);
        let f1 = relu(&sn);
        let mut down_caches = Vec::with_capacity(3);
        let mut block_caches = Vec::with_capacity(3);
        let mut feats: Vec<Array3<F>> = vec![f1];
        for i in 0..3 {
            let (d, c_conv) = self.downs[i].0.forward(feats.last().unwrap());
            let (dn, c_norm) = self.downs[i].1.forward(&d);
            let r = relu(&dn);
            down_caches.push((c_conv, c_norm, dn));
            let (b, c_block) = self.blocks[i].forward(&r);
            block_caches.push(c_block);
            feats.push(b);
        }
        let f4 = feats.pop().unwrap();
        let f3 = feats.pop().unwrap();
        let f2 = feats.pop().unwrap();
        let f1 = feats.pop().unwrap();
        ([f1, f2, f3, f4], WindowedEncoderCache { c_stem, stem_norm_cache, stem_norm_out: sn, down_caches, block_caches })
    }

    pub fn backward(
        &self,
        douts: &ScalePyramid<F>,
        cache: &WindowedEncoderCache<F>,
        grads: &mut Self,
    ) -> Array3<F> {
        let mut g = douts[3].clone();
        for i in (0..3).rev() {
            let db = self.blocks[i].backward(&g, &cache.block_caches[i], &mut grads.blocks[i]);
            let (c_conv, c_norm, dn) = &cache.down_caches[i];
            let ddn = relu_backward(&db, dn);
            let (dd, g_norm) = self.downs[i].1.backward(&ddn, c_norm);
            grads.downs[i].1.add_grads(&g_norm);
            let (dprev, g_conv) = self.downs[i].0.backward(&dd, c_conv);
            grads.downs[i].0.add_grads(&g_conv);
            g = dprev;
            if i > 0 {
                g = g + &douts[i];
            }
        }
        let g1 = g + &douts[0];
        let dsn = relu_backward(&g1, &cache.stem_norm_out);
        let (ds, g_norm) = self.stem_norm.backward(&dsn, &cache.stem_norm_cache);
        grads.stem_norm.add_grads(&g_norm);
        let (dx, g_stem) = self.stem.backward(&ds, &cache.c_stem);
        grads.stem.add_grads(&g_stem);
        dx
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        self.stem.named(&format!("{prefix}.stem"), out);
        self.stem_norm.named(&format!("{prefix}.stem_norm"), out);
        for i in 0..3 {
            self.downs[i].0.named(&format!("{prefix}.down{i}.conv"), out);
            self.downs[i].1.named(&format!("{prefix}.down{i}.norm"), out);
            self.blocks[i].named(&format!("{prefix}.block{i}"), out);
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        self.stem.named_mut(&format!("{prefix}.stem"), out);
        self.stem_norm.named_mut(&format!("{prefix}.stem_norm"), out);
        for (i, (conv, norm)) in self.downs.iter_mut().enumerate() {
            conv.named_mut(&format!("{prefix}.down{i}.conv"), out);
            norm.named_mut(&format!("{prefix}.down{i}.norm"), out);
        }
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.named_mut(&format!("{prefix}.block{i}"), out);
        }
    }
}

/// Encoder dispatch over the two families.
#[derive(Debug, Clone)]
pub enum Encoder<F> {
    Residual(ResidualEncoder<F>),
    Windowed(WindowedEncoder<F>),
}

pub enum EncoderCache<F> {
    Residual(ResidualEncoderCache<F>),
    Windowed(WindowedEncoderCache<F>),
}

impl<F: NdFloat> Encoder<F> {
    pub fn forward(&self, x: &Array3<F>) -> (ScalePyramid<F>, EncoderCache<F>) {
        match self {
            Encoder::Residual(e) => {
                let (f, c) = e.forward(x);
                (f, EncoderCache::Residual(c))
            }
            Encoder::Windowed(e) => {
                let (f, c) = e.forward(x);
                (f, EncoderCache::Windowed(c))
            }
        }
    }

    pub fn backward(&self, douts: &ScalePyramid<F>, cache: &EncoderCache<F>, grads: &mut Self) -> Array3<F> {
        match (self, cache, grads) {
            (Encoder::Residual(e), EncoderCache::Residual(c), Encoder::Residual(g)) => {
                e.backward(douts, c, g)
            }
            (Encoder::Windowed(e), EncoderCache::Windowed(c), Encoder::Windowed(g)) => {
                e.backward(douts, c, g)
            }
            _ => panic!("encoder cache/grads family mismatch"),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
        match self {
            Encoder::Residual(e) => e.named(prefix, out),
            Encoder::Windowed(e) => e.named(prefix, out),
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
        match self {
            Encoder::Residual(e) => e.named_mut(prefix, out),
            Encoder::Windowed(e) => e.named_mut(prefix, out),
        }
    }
}
