//! CSV export of pooled encoder embeddings.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::WindowSample;
use crate::models::{FireModel, ModelInput};

use super::AnalysisError;

/// Writes one embedding row per sample to `path` and returns the row count.
///
/// The embedding is the spatial mean of the deepest fused encoder level, so
/// its width equals the last entry of the model's encoder widths. Columns
/// are `event_id,date,year,f_0..f_{D-1}`.
pub fn embedding_export(
    model: &FireModel<f32>,
    samples: &[WindowSample],
    path: &Path,
) -> Result<usize, AnalysisError> {
    let dim = model.config.encoder_widths[3];
    let mut text = String::from("event_id,date,year");
    for i in 0..dim {
        write!(text, ",f_{i}").unwrap();
    }
    text.push('\n');
    for sample in samples {
        let emb = model.embed(&ModelInput::from_sample(sample))?;
        write!(text, "{},{},{}", sample.event_id, sample.target_date, sample.year).unwrap();
        for v in emb.iter() {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    std::fs::write(path, &text).map_err(|source| AnalysisError::Io {
        action: "write embeddings",
        path: path.to_path_buf(),
        source,
    })?;
    Ok(samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{window_samples, FeatureSet};
    use crate::models::{EncoderFamily, Fusion, ModelConfig, PeMode};
    use crate::synth::{generate_event, ShiftSpec, SynthConfig, SynthYearSpec};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder_family: EncoderFamily::ResidualConv,
            encoder_widths: vec![2, 2, 4, 4],
            fusion: Fusion::None,
            t_window: 1,
            in_channels: 7,
            pe_mode: PeMode::RelativeWindow,
            attention_heads: 1,
            decoder_widths: vec![4, 2, 2],
            checkpoint_path: None,
        }
    }

    fn samples_for(spec: SynthYearSpec, events: usize, seed: u64) -> Vec<WindowSample> {
        let config = SynthConfig {
            seed,
            years: vec![spec],
            events_per_year: events,
            height: 16,
            width: 16,
            max_days: 4,
            burn_days: 2,
            schema: SynthConfig::default_schema(),
        };
        let features = FeatureSet::all(&config.schema);
        let mut out = Vec::new();
        for event in 0..events {
            let cube = generate_event(&config, &config.years[0], event);
            out.extend(window_samples(&cube, 1, &features).unwrap());
        }
        out
    }

    #[test]
    fn export_writes_one_row_per_sample() {
        let samples = samples_for(SynthYearSpec::plain(2018, 2.0), 2, 11);
        let model = FireModel::<f32>::from_seed(tiny_config(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let rows = embedding_export(&model, &samples, &path).unwrap();
        assert_eq!(rows, samples.len());
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), samples.len() + 1);
        assert_eq!(lines[0], "event_id,date,year,f_0,f_1,f_2,f_3");
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 3 + 4);
        }
    }

    #[test]
    fn identical_samples_produce_identical_rows() {
        let samples = samples_for(SynthYearSpec::plain(2018, 2.0), 1, 3);
        let doubled: Vec<WindowSample> = vec![samples[0].clone(), samples[0].clone()];
        let model = FireModel::<f32>::from_seed(tiny_config(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        embedding_export(&model, &doubled, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], lines[2]);
    }

    #[test]
    fn shifted_years_separate_in_embedding_space() {
        // a strong mean shift on two input channels should move the pooled
        // embeddings even under a randomly initialised encoder
        let mut shifted = SynthYearSpec::plain(2019, 2.0);
        shifted
            .covariate_shift
            .insert("vegetation".to_string(), ShiftSpec { mean: 4.0, scale: 1.0 });
        shifted
            .covariate_shift
            .insert("moisture".to_string(), ShiftSpec { mean: -4.0, scale: 1.0 });
        let plain = samples_for(SynthYearSpec::plain(2018, 2.0), 3, 11);
        let moved = samples_for(shifted, 3, 11);
        let model = FireModel::<f32>::from_seed(tiny_config(), 5).unwrap();

        let centroid = |samples: &[WindowSample]| {
            let mut acc = vec![0f64; 4];
            for s in samples {
                let e = model.embed(&ModelInput::from_sample(s)).unwrap();
                for (a, v) in acc.iter_mut().zip(e.iter()) {
                    *a += *v as f64 / samples.len() as f64;
                }
            }
            acc
        };
        let ca = centroid(&plain);
        let cb = centroid(&moved);
        let between: f64 =
            ca.iter().zip(&cb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();

        let spread = |samples: &[WindowSample], c: &[f64]| {
            let mut total = 0.0;
            for s in samples {
                let e = model.embed(&ModelInput::from_sample(s)).unwrap();
                total += e
                    .iter()
                    .zip(c)
                    .map(|(v, m)| (*v as f64 - m) * (*v as f64 - m))
                    .sum::<f64>()
                    .sqrt();
            }
            total / samples.len() as f64
        };
        let within = 0.5 * (spread(&plain, &ca) + spread(&moved, &cb));
        assert!(
            between > within,
            "between-year distance {between} should exceed within-year spread {within}"
        );
    }
}
