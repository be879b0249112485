//! Quality and diversity metrics for generated motion.

pub mod encoder;
pub mod windows;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionTensor;

pub use encoder::{
    encode_windows, frechet_distance, frechet_from_embeddings, inter_diversity, intra_diversity, sifid, EncoderSpec,
    FeatureEncoder,
};
pub use windows::{calibrate_epsilon, coverage, diversity_profile, nn_diversity, rotation_angle_features};

/// How the six metrics are folded into one harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmonicMode {
    /// SiFID and intra-diversity enter as reciprocals.
    #[default]
    ReciprocalLowerIsBetter,
    /// All six values enter as-is.
    AllHigherIsBetter,
}

impl HarmonicMode {
    pub fn tag(self) -> &'static str {
        match self {
            HarmonicMode::ReciprocalLowerIsBetter => "reciprocal_lower_is_better",
            HarmonicMode::AllHigherIsBetter => "all_higher_is_better",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub window_length: usize,
    pub local_window: usize,
    /// Fixed coverage threshold; `None` calibrates it from the input.
    pub epsilon: Option<f64>,
    pub epsilon_percentile: f64,
    pub encoder: EncoderSpec,
    pub harmonic_mode: HarmonicMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            window_length: 30,
            local_window: 15,
            epsilon: None,
            epsilon_percentile: 5.0,
            encoder: EncoderSpec::default(),
            harmonic_mode: HarmonicMode::default(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 || self.local_window < 2 {
            return Err(Error::Argument("metric windows must span at least 2 frames".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Argument(format!("coverage threshold must be positive, got {e}")));
            }
        }
        if !(0.0..=100.0).contains(&self.epsilon_percentile) {
            return Err(Error::Argument("epsilon percentile must lie in [0, 100]".into()));
        }
        Ok(())
    }

    pub fn resolve_epsilon(&self, input: &MotionTensor) -> Result<f64> {
        match self.epsilon {
            Some(e) => Ok(e),
            None => calibrate_epsilon(input, self.window_length, self.epsilon_percentile),
        }
    }
}

/// The six metric values in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub coverage: f64,
    pub global_div: f64,
    pub local_div: f64,
    pub sifid: f64,
    pub inter_div: f64,
    pub intra_div: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coverage: f64,
    pub global_div: f64,
    pub local_div: f64,
    pub sifid: f64,
    pub inter_div: f64,
    pub intra_div: f64,
    pub harmonic_mean: Option<f64>,
    pub harmonic_mode: String,
    /// Metrics that made the harmonic mean undefined.
    pub flagged: Vec<String>,
    pub samples: usize,
    pub epsilon: Option<f64>,
    pub encoder_hash: Option<String>,
    pub config: MetricsConfig,
}

pub const CSV_HEADER: &str = "coverage,global_div,local_div,sifid,inter_div,intra_div,harmonic_mean,harmonic_mode,samples";

impl MetricsReport {
    pub fn values(&self) -> MetricValues {
        MetricValues {
            coverage: self.coverage,
            global_div: self.global_div,
            local_div: self.local_div,
            sifid: self.sifid,
            inter_div: self.inter_div,
            intra_div: self.intra_div,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_row(&self) -> String {
        let hm = self.harmonic_mean.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.coverage,
            self.global_div,
            self.local_div,
            self.sifid,
            self.inter_div,
            self.intra_div,
            hm,
            self.harmonic_mode,
            self.samples
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Harmonic mean of the six metrics under `mode`. Non-positive terms are
/// flagged and leave the mean undefined.
pub fn harmonic_mean(v: &MetricValues, mode: HarmonicMode) -> (Option<f64>, Vec<String>) {
    let terms = [
        ("coverage", v.coverage, false),
        ("global_div", v.global_div, false),
        ("local_div", v.local_div, false),
        ("sifid", v.sifid, true),
        ("inter_div", v.inter_div, false),
        ("intra_div", v.intra_div, true),
    ];
    let mut flagged = Vec::new();
    let mut denom = 0.0;
    for (name, value, lower_is_better) in terms {
        if !(value > 0.0) || !value.is_finite() {
            flagged.push(name.to_string());
            continue;
        }
        let t = if lower_is_better && mode == HarmonicMode::ReciprocalLowerIsBetter {
            1.0 / value
        } else {
            value
        };
        denom += 1.0 / t;
    }
    if flagged.is_empty() {
        (Some(terms.len() as f64 / denom), flagged)
    } else {
        (None, flagged)
    }
}

pub fn harmonic_report(v: MetricValues, cfg: &MetricsConfig, samples: usize) -> MetricsReport {
    let (hm, flagged) = harmonic_mean(&v, cfg.harmonic_mode);
    MetricsReport {
        coverage: v.coverage,
        global_div: v.global_div,
        local_div: v.local_div,
        sifid: v.sifid,
        inter_div: v.inter_div,
        intra_div: v.intra_div,
        harmonic_mean: hm,
        harmonic_mode: cfg.harmonic_mode.tag().to_string(),
        flagged,
        samples,
        epsilon: cfg.epsilon,
        encoder_hash: None,
        config: cfg.clone(),
    }
}

/// All six metrics of `generated` against `input`. Inter-diversity is 0 for
/// a single sample.
pub fn evaluate(input: &MotionTensor, generated: &[MotionTensor], cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if generated.is_empty() {
        return Err(Error::Argument("evaluation needs at least one generated sequence".into()));
    }
    for g in generated {
        if g.features.ncols() != input.features.ncols() {
            return Err(Error::Argument("generated motion has a different feature width than the input".into()));
        }
    }
    let eps = cfg.resolve_epsilon(input)?;
    let enc = FeatureEncoder::for_motion(cfg.encoder.clone(), input)?;
    let w = cfg.window_length;
    let v = MetricValues {
        coverage: coverage(input, generated, w, eps)?,
        global_div: nn_diversity(input, generated, w)?,
        local_div: nn_diversity(input, generated, cfg.local_window)?,
        sifid: sifid(input, generated, &enc, w)?,
        inter_div: if generated.len() >= 2 { inter_diversity(generated, &enc, w)? } else { 0.0 },
        intra_div: intra_diversity(generated, &enc, w)?,
    };
    let mut report = harmonic_report(v, cfg, generated.len());
    report.epsilon = Some(eps);
    report.encoder_hash = Some(enc.architecture_hash());
    Ok(report)
}
