//! Run configuration: a TOML file with one table per stage. Every key is
//! optional and defaults to the reference hyper-parameters; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SyntheticConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::pipeline::PipelineConfig;
use crate::training::TrainConfig;

/// Environment variable that replaces `seed` when set.
pub const SEED_ENV: &str = "MITOSCOPE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation, sample shuffling and synthesis.
    pub seed: u64,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub postprocess: PostprocessSection,
    pub evaluation: EvaluationSection,
    pub synth: SynthSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub frame_size: usize,
    pub hidden: usize,
    pub classes: usize,
    pub encoder_len: usize,
    pub target_len: usize,
    pub grid: usize,
    pub lstm_kernel: usize,
    pub cnn1_kernel: usize,
    pub cnn2_kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub window: usize,
    pub window_step: usize,
    pub downsample: usize,
    pub temporal_step: usize,
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSection {
    pub dt: usize,
    pub radius: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub spatial_threshold: f64,
    pub histogram_max: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub size: usize,
    pub frames: usize,
    pub blobs: usize,
    pub max_blobs: usize,
    pub radius: f64,
    pub drift: f64,
    pub division_prob: f64,
    pub refractory: usize,
    pub background: f64,
    pub peak: f64,
    pub brightness_delta: f64,
    pub noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            data: DataSection::default(),
            postprocess: PostprocessSection::default(),
            evaluation: EvaluationSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self::from(NetworkConfig::default())
    }
}

impl From<NetworkConfig> for NetworkSection {
    fn from(n: NetworkConfig) -> Self {
        Self {
            frame_size: n.frame_size,
            hidden: n.hidden,
            classes: n.classes,
            encoder_len: n.encoder_len,
            target_len: n.target_len,
            grid: n.grid,
            lstm_kernel: n.lstm_kernel,
            cnn1_kernel: n.cnn1_kernel,
            cnn2_kernel: n.cnn2_kernel,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            decay: t.decay,
            epsilon: t.epsilon,
            epochs: t.epochs,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm.unwrap_or(0.0),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let w = WindowSpec::default();
        let p = PipelineConfig::default();
        Self {
            window: w.size,
            window_step: w.step,
            downsample: w.factor,
            temporal_step: p.temporal_step,
            augment: p.augment,
        }
    }
}

impl Default for PostprocessSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { dt: p.dt, radius: p.radius, threshold: p.threshold }
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { spatial_threshold: crate::evaluation::SPATIAL_THRESHOLD, histogram_max: 5 }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        Self::from(&SyntheticConfig::default())
    }
}

impl From<&SyntheticConfig> for SynthSection {
    fn from(s: &SyntheticConfig) -> Self {
        Self {
            size: s.size,
            frames: s.frames,
            blobs: s.blobs,
            max_blobs: s.max_blobs,
            radius: s.radius,
            drift: s.drift,
            division_prob: s.division_prob,
            refractory: s.refractory,
            background: s.background,
            peak: s.peak,
            brightness_delta: s.brightness_delta,
            noise: s.noise,
        }
    }
}

impl RunConfig {
    /// Parse TOML text; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Replace the seed with `MITOSCOPE_SEED` if that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed =
                v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Canonical TOML rendering; parsing it returns an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        self.train().validate()?;
        self.window().validate()?;
        self.synthetic().validate()?;
        if self.data.temporal_step == 0 {
            return Err(Error::Config("data.temporal_step must be >= 1".into()));
        }
        if !(self.postprocess.radius >= 0.0) {
            return Err(Error::Config("postprocess.radius must be >= 0".into()));
        }
        if !(self.evaluation.spatial_threshold >= 0.0) || self.evaluation.histogram_max < 0 {
            return Err(Error::Config("evaluation thresholds must be >= 0".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            frame_size: n.frame_size,
            hidden: n.hidden,
            classes: n.classes,
            encoder_len: n.encoder_len,
            target_len: n.target_len,
            grid: n.grid,
            lstm_kernel: n.lstm_kernel,
            cnn1_kernel: n.cnn1_kernel,
            cnn2_kernel: n.cnn2_kernel,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            decay: t.decay,
            epsilon: t.epsilon,
            epochs: t.epochs,
            seed: self.seed,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
            batch_size: t.batch_size,
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec { size: self.data.window, step: self.data.window_step, factor: self.data.downsample }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window: self.window(),
            temporal_step: self.data.temporal_step,
            augment: self.data.augment,
            dt: self.postprocess.dt,
            radius: self.postprocess.radius,
            threshold: self.postprocess.threshold,
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let s = &self.synth;
        SyntheticConfig {
            size: s.size,
            frames: s.frames,
            blobs: s.blobs,
            max_blobs: s.max_blobs,
            radius: s.radius,
            drift: s.drift,
            division_prob: s.division_prob,
            refractory: s.refractory,
            background: s.background,
            peak: s.peak,
            brightness_delta: s.brightness_delta,
            noise: s.noise,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::parse("", "empty").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.network(), NetworkConfig::default());
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.window(), WindowSpec { size: 256, step: 128, factor: 4 });
        assert!(c.data.augment);
    }

    #[test]
    fn shipped_default_file_is_the_default() {
        let c = RunConfig::parse(include_str!("../../../config/default.toml"), "default.toml").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::parse("[network]\nhiden = 8\n", "t").unwrap_err().to_string();
        assert!(e.contains("hiden"), "{e}");
        assert!(RunConfig::parse("colour = 1\n", "t").is_err());
        assert!(RunConfig::parse("[extras]\n", "t").is_err());
    }

    #[test]
    fn canonical_echo_round_trips() {
        let text =
            "seed = 7\n[network]\nhidden = 8\nclasses = 4\n[training]\nclip_norm = 5.0\n[data]\naugment = false\n";
        let c = RunConfig::parse(text, "t").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train().clip_norm, Some(5.0));
        assert_eq!(c.synthetic().seed, 7);
        let echo = c.to_toml();
        let back = RunConfig::parse(&echo, "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), echo);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[network]\nlstm_kernel = 4\n", "t").is_err());
        assert!(RunConfig::parse("[training]\ndecay = 1.5\n", "t").is_err());
        assert!(RunConfig::parse("[data]\nwindow = 250\n", "t").is_err());
        assert!(RunConfig::parse("[network]\nhidden = -1\n", "t").is_err());
    }
}
