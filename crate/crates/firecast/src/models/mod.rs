//! Segmentation models for next-day fire spread.
//!
//! A model is an encoder (residual-conv or windowed-attention family)
//! producing a four-scale feature pyramid, an optional temporal attention
//! block that collapses a multi-day window into one pyramid, and a U-Net
//! style decoder emitting one logit per pixel. Three fusion modes share the
//! machinery: `none` (single day), `data` (days stacked along channels
//! before the encoder), and `feature` (per-day encoding plus attention).

mod checkpoint;
mod decoder;
mod encoder;
mod ltae;

pub use checkpoint::{
    load_checkpoint, load_into, save_checkpoint, save_partial, LoadReport,
    CHECKPOINT_FORMAT_VERSION,
};
pub use decoder::{Decoder, DecoderCache};
pub use encoder::{Encoder, EncoderCache, ResidualEncoder, ScalePyramid, WindowedEncoder};
pub use ltae::{LtaeCache, LtaeFusion};

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis, NdFloat};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::data::WindowSample;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("encoder needs exactly 4 widths, got {0}")]
    EncoderWidthCount(usize),
    #[error("decoder needs exactly 3 widths, got {0}")]
    DecoderWidthCount(usize),
    #[error("widths must be positive")]
    ZeroWidth,
    #[error("in_channels must be positive")]
    ZeroChannels,
    #[error("t_window must be positive")]
    ZeroWindow,
    #[error("fusion `none` handles a single day, got t_window {0}")]
    SingleDayFusion(usize),
    #[error("attention_heads must be positive")]
    ZeroHeads,
    #[error("attention_heads {heads} must divide encoder width {width}")]
    HeadsIndivisible { heads: usize, width: usize },
    #[error("positional encoding dimension must be even, got {0}")]
    OddPositionalDim(usize),
    #[error("input window has {got} days, model expects {expected}")]
    WindowMismatch { expected: usize, got: usize },
    #[error("input has {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("spatial extent {h}x{w} must be divisible by 8")]
    IndivisibleExtent { h: usize, w: usize },
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: PathBuf, source: std::io::Error },
    #[error("bad checkpoint {path}: {detail}")]
    CheckpointFormat { path: PathBuf, detail: String },
    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    ResidualConv,
    WindowedAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    None,
    Data,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    /// Time coordinate is the day of year, so the model can key on season.
    AbsoluteDayOfYear,
    /// Time coordinate is the position within the window (1 = oldest day),
    /// independent of the calendar.
    RelativeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_family: EncoderFamily,
    pub encoder_widths: Vec<usize>,
    pub fusion: Fusion,
    pub t_window: usize,
    pub in_channels: usize,
    pub pe_mode: PeMode,
    pub attention_heads: usize,
    pub decoder_widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.encoder_widths.len() != 4 {
            return Err(ModelError::EncoderWidthCount(self.encoder_widths.len()));
        }
        if self.decoder_widths.len() != 3 {
            return Err(ModelError::DecoderWidthCount(self.decoder_widths.len()));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(ModelError::ZeroWidth);
        }
        if self.in_channels == 0 {
            return Err(ModelError::ZeroChannels);
        }
        if self.t_window == 0 {
            return Err(ModelError::ZeroWindow);
        }
        if self.fusion == Fusion::None && self.t_window != 1 {
            return Err(ModelError::SingleDayFusion(self.t_window));
        }
        if self.fusion == Fusion::Feature {
            if self.attention_heads == 0 {
                return Err(ModelError::ZeroHeads);
            }
            // the attention mask is applied per head to channel groups at
            // every scale, so each width must split evenly
            for &w in &self.encoder_widths {
                if w % self.attention_heads != 0 {
                    return Err(ModelError::HeadsIndivisible { heads: self.attention_heads, width: w });
                }
            }
            if self.encoder_widths[3] % 2 != 0 {
                return Err(ModelError::OddPositionalDim(self.encoder_widths[3]));
            }
        }
        Ok(())
    }

    /// Channels seen by the encoder: day-stacked for data fusion.
    pub fn encoder_in_channels(&self) -> usize {
        match self.fusion {
            Fusion::Data => self.in_channels * self.t_window,
            _ => self.in_channels,
        }
    }

    fn encoder_widths4(&self) -> [usize; 4] {
        [self.encoder_widths[0], self.encoder_widths[1], self.encoder_widths[2], self.encoder_widths[3]]
    }

    fn decoder_widths3(&self) -> [usize; 3] {
        [self.decoder_widths[0], self.decoder_widths[1], self.decoder_widths[2]]
    }
}

/// Sinusoidal positional encoding of a scalar time coordinate:
/// `pe[2k] = sin(t / 10000^(2k/d))`, `pe[2k+1] = cos(t / 10000^(2k/d))`.
pub fn positional_encoding<F: NdFloat>(t_bar: F, d: usize) -> Result<Array1<F>, ModelError> {
    if d % 2 != 0 {
        return Err(ModelError::OddPositionalDim(d));
    }
    let t = t_bar.to_f64().unwrap();
    let mut pe = Array1::zeros(d);
    for k in 0..d / 2 {
        let arg = t / 10000f64.powf(2.0 * k as f64 / d as f64);
        pe[2 * k] = F::from(arg.sin()).unwrap();
        pe[2 * k + 1] = F::from(arg.cos()).unwrap();
    }
    Ok(pe)
}

/// Stacks a `(T, C, H, W)` window along channels: day `j`, channel `k`
/// lands at index `j*C + k`, oldest day first.
pub fn pack_data_fusion<F: NdFloat>(days: &Array4<F>) -> Array3<F> {
    let (t, c, h, w) = days.dim();
    Array3::from_shape_fn((t * c, h, w), |(p, y, x)| days[[p / c, p % c, y, x]])
}

/// Model input: a chronological day stack plus each day's day-of-year.
#[derive(Debug, Clone)]
pub struct ModelInput<F> {
    pub days: Array4<F>,
    pub day_of_year: Vec<u32>,
}

impl<F: NdFloat> ModelInput<F> {
    pub fn from_sample(sample: &WindowSample) -> Self {
        Self {
            days: sample.inputs.mapv(|v| F::from(v).unwrap()),
            day_of_year: sample.day_of_year.clone(),
        }
    }
}

enum FusionTrace<F> {
    Single { enc_cache: EncoderCache<F> },
    Feature {
        day_pyramids: Vec<ScalePyramid<F>>,
        enc_caches: Vec<EncoderCache<F>>,
        ltae_cache: LtaeCache<F>,
    },
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardTrace<F> {
    fusion: FusionTrace<F>,
    dec_cache: DecoderCache<F>,
}

impl<F> ForwardTrace<F> {
    /// Attention weights over days (`(heads, T, H/8, W/8)`), present only
    /// for feature fusion.
    pub fn attention_mask(&self) -> Option<&Array4<F>> {
        match &self.fusion {
            FusionTrace::Feature { ltae_cache, .. } => Some(&ltae_cache.mask),
            FusionTrace::Single { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FireModel<F> {
    pub config: ModelConfig,
    encoder: Encoder<F>,
    ltae: Option<LtaeFusion<F>>,
    decoder: Decoder<F>,
}

impl<F: NdFloat> FireModel<F> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let ew = config.encoder_widths4();
        let enc_in = config.encoder_in_channels();
        let encoder = match config.encoder_family {
            EncoderFamily::ResidualConv => Encoder::Residual(ResidualEncoder::init(enc_in, &ew, rng)),
            EncoderFamily::WindowedAttention => {
                Encoder::Windowed(WindowedEncoder::init(enc_in, &ew, rng))
            }
        };
        let ltae = match config.fusion {
            Fusion::Feature => Some(LtaeFusion::init(ew[3], config.attention_heads, rng)),
            _ => None,
        };
        let decoder = Decoder::init(&ew, &config.decoder_widths3(), rng);
        Ok(Self { config, encoder, ltae, decoder })
    }

    /// Deterministic construction from a seed.
    pub fn from_seed(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = crate::util::stream_rng(seed, &["model_init"]);
        Self::new(config, &mut rng)
    }

    fn check_input(&self, input: &ModelInput<F>) -> Result<(), ModelError> {
        let (t, c, h, w) = input.days.dim();
        if t != self.config.t_window {
            return Err(ModelError::WindowMismatch { expected: self.config.t_window, got: t });
        }
        if c != self.config.in_channels {
            return Err(ModelError::ChannelMismatch { expected: self.config.in_channels, got: c });
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(ModelError::IndivisibleExtent { h, w });
        }
        Ok(())
    }

    fn t_bars(&self, day_of_year: &[u32]) -> Vec<F> {
        match self.config.pe_mode {
            PeMode::RelativeWindow => {
                (1..=day_of_year.len()).map(|i| F::from(i).unwrap()).collect()
            }
            PeMode::AbsoluteDayOfYear => {
                day_of_year.iter().map(|&d| F::from(d).unwrap()).collect()
            }
        }
    }

    /// Multi-scale features fed to the decoder, with the trace needed to
    /// run attribution or the backward pass.
    fn features(&self, input: &ModelInput<F>) -> Result<(ScalePyramid<F>, FusionTrace<F>), ModelError> {
        self.check_input(input)?;
        match self.config.fusion {
            Fusion::None => {
                let x = input.days.index_axis(Axis(0), 0).to_owned();
                let (pyr, enc_cache) = self.encoder.forward(&x);
                Ok((pyr, FusionTrace::Single { enc_cache }))
            }
            Fusion::Data => {
                let x = pack_data_fusion(&input.days);
                let (pyr, enc_cache) = self.encoder.forward(&x);
                Ok((pyr, FusionTrace::Single { enc_cache }))
            }
            Fusion::Feature => {
                let t = self.config.t_window;
                let mut day_pyramids = Vec::with_capacity(t);
                let mut enc_caches = Vec::with_capacity(t);
                for day in 0..t {
                    let x = input.days.index_axis(Axis(0), day).to_owned();
                    let (pyr, cache) = self.encoder.forward(&x);
                    day_pyramids.push(pyr);
                    enc_caches.push(cache);
                }
                let t_bars = self.t_bars(&input.day_of_year);
                let ltae = self.ltae.as_ref().expect("feature fusion carries an attention block");
                let (fused, ltae_cache) = ltae.fuse(&day_pyramids, &t_bars);
                Ok((fused, FusionTrace::Feature { day_pyramids, enc_caches, ltae_cache }))
            }
        }
    }

    pub fn forward(&self, input: &ModelInput<F>) -> Result<(Array2<F>, ForwardTrace<F>), ModelError> {
        let (pyr, fusion) = self.features(input)?;
        let (logits, dec_cache) = self.decoder.forward(&pyr);
        Ok((logits, ForwardTrace { fusion, dec_cache }))
    }

    /// Accumulates parameter gradients into `grads` (a [`Self::zeros_like`]
    /// mirror), given the gradient of a scalar loss w.r.t. the logits.
    pub fn backward(&self, dlogits: &Array2<F>, trace: &ForwardTrace<F>, grads: &mut Self) {
        let dskips = self.decoder.backward(dlogits, &trace.dec_cache, &mut grads.decoder);
        match &trace.fusion {
            FusionTrace::Single { enc_cache } => {
                self.encoder.backward(&dskips, enc_cache, &mut grads.encoder);
            }
            FusionTrace::Feature { day_pyramids, enc_caches, ltae_cache } => {
                let ltae = self.ltae.as_ref().unwrap();
                let g_ltae = grads.ltae.as_mut().unwrap();
                let ddays = ltae.backward(&dskips, day_pyramids, ltae_cache, g_ltae);
                for (dd, cache) in ddays.iter().zip(enc_caches) {
                    self.encoder.backward(dd, cache, &mut grads.encoder);
                }
            }
        }
    }

    /// Sigmoid probabilities per pixel.
    pub fn predict_proba(&self, input: &ModelInput<F>) -> Result<Array2<F>, ModelError> {
        let (logits, _) = self.forward(input)?;
        Ok(logits.mapv(sigmoid))
    }

    /// Binary map at a probability threshold.
    pub fn predict(&self, input: &ModelInput<F>, threshold: F) -> Result<Array2<bool>, ModelError> {
        Ok(self.predict_proba(input)?.mapv(|p| p >= threshold))
    }

    /// Global-average-pooled deepest features (length `D_4`).
    pub fn embed(&self, input: &ModelInput<F>) -> Result<Array1<F>, ModelError> {
        let (pyr, _) = self.features(input)?;
        let deepest = &pyr[3];
        let (c, h, w) = deepest.dim();
        let denom = F::from(h * w).unwrap();
        Ok(Array1::from_iter(
            (0..c).map(|ci| deepest.index_axis(Axis(0), ci).sum() / denom),
        ))
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        self.encoder.named("encoder", &mut out);
        if let Some(l) = &self.ltae {
            l.named("ltae", &mut out);
        }
        self.decoder.named("decoder", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        self.encoder.named_mut("encoder", &mut out);
        if let Some(l) = &mut self.ltae {
            l.named_mut("ltae", &mut out);
        }
        self.decoder.named_mut("decoder", &mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, v)| v.len()).sum()
    }

    /// A same-shaped model with every parameter zeroed, used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut m = self.clone();
        for (_, v) in m.named_params_mut().iter_mut() {
            v.fill(F::zero());
        }
        m
    }
}

fn sigmoid<F: NdFloat>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
