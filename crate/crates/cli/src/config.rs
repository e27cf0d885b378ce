//! The single pipeline configuration file (TOML) with full defaulting.

use std::path::{Path, PathBuf};

use cardioseg::domain::Linkage;
use cardioseg::metrics::Connectivity;
use cardioseg::segment::{AsppConfig, AugmentationConfig, EncoderConfig, PlaneTag, ScoreMode, TrainSchedule, Variant};
use cardioseg::style::TransferConfig;
use cardioseg::volume::{IntensityMap, VolumeFormat};
use cardioseg::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Run directory; every stage writes into a subdirectory of it.
    pub output: PathBuf,
    /// Thread-pool size; 0 uses every core.
    pub workers: usize,
    pub data: DataConfig,
    pub phantom: PhantomConfig,
    pub analysis: AnalysisConfig,
    pub transfer: TransferSettings,
    pub segmentation: SegmentationConfig,
    pub ensemble: EnsembleConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 2019,
            output: PathBuf::from("runs/default"),
            workers: 0,
            data: DataConfig::default(),
            phantom: PhantomConfig::default(),
            analysis: AnalysisConfig::default(),
            transfer: TransferSettings::default(),
            segmentation: SegmentationConfig::default(),
            ensemble: EnsembleConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generate the two-domain phantom dataset with the `phantom` command.
    #[default]
    Phantom,
    /// Read the volumes listed in `train` and `test`.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Volume paths; labels are read from the `.label` sidecar next to each.
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    /// Rescale each volume to [0, 1] on ingest.
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Phantom,
            train: Vec::new(),
            test: Vec::new(),
            normalize: false,
        }
    }
}

/// Intensity rendering for one phantom domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub noise_sigma: f64,
    pub tissue_means: [f64; 3],
    pub intensity_map: IntensityMap,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.03,
            tissue_means: [0.2, 0.5, 0.9],
            intensity_map: IntensityMap::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub train_count: usize,
    pub test_count: usize,
    pub shell_fraction: f64,
    /// Training domain.
    pub domain_a: RenderConfig,
    /// Test domain.
    pub domain_b: RenderConfig,
    pub format: VolumeFormat,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [32, 32, 32],
            spacing: [1.0; 3],
            train_count: 10,
            test_count: 10,
            shell_fraction: 0.09,
            domain_a: RenderConfig::default(),
            domain_b: RenderConfig {
                noise_sigma: 0.07,
                intensity_map: IntensityMap {
                    gamma: 2.2,
                    gain: 1.1,
                    offset: 0.1,
                },
                ..RenderConfig::default()
            },
            format: VolumeFormat::Nifti,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub linkage: Linkage,
    pub clusters: usize,
    /// Voxels drawn per volume for the intensity distributions.
    pub subsample: usize,
    /// Bins of the label-conditioned diagnostic histograms.
    pub histogram_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            linkage: Linkage::Average,
            clusters: 2,
            subsample: 100_000,
            histogram_bins: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Each test slice picks its own library slice.
    #[default]
    Slice,
    /// Each test volume first picks one library sample, then slices within it.
    Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSettings {
    pub target: TargetMode,
    /// Only consider library slices cut along the same plane.
    pub same_plane: bool,
    pub optimizer: TransferConfig,
}

impl Default for TransferSettings {
    fn default() -> Self {
        Self {
            target: TargetMode::Slice,
            same_plane: true,
            optimizer: TransferConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub encoder: EncoderConfig,
    pub aspp: AsppConfig,
    pub schedule: TrainSchedule,
    pub augmentation: AugmentationConfig,
    pub scales: Vec<f64>,
    pub score_mode: ScoreMode,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            aspp: AsppConfig::default(),
            schedule: TrainSchedule::default(),
            augmentation: AugmentationConfig::default(),
            scales: vec![0.5, 0.75, 1.0, 1.25, 1.5, 2.0],
            score_mode: ScoreMode::Logits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieRef {
    pub plane: PlaneTag,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Maps consulted in order when the vote is tied; background after that.
    pub tie_break: Vec<TieRef>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            tie_break: cardioseg::postprocess::DEFAULT_TIE_ORDER
                .iter()
                .map(|&(plane, variant)| TieRef { plane, variant })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub connectivity: Connectivity,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of everything that can change results; the run directory and
    /// the worker count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.workers = 0;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serialises")))
    }

    pub fn validate(&self) -> Result<()> {
        let seg = &self.segmentation;
        seg.encoder.validate()?;
        seg.aspp.validate()?;
        seg.schedule.validate()?;
        seg.augmentation.validate()?;
        self.transfer.optimizer.validate()?;
        if seg.scales.is_empty() || seg.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!("segmentation.scales must be nonempty and positive, got {:?}", seg.scales)));
        }
        if self.analysis.clusters < 2 {
            return Err(Error::Config("analysis.clusters must be at least 2".into()));
        }
        if self.analysis.subsample == 0 || self.analysis.histogram_bins == 0 {
            return Err(Error::Config("analysis.subsample and analysis.histogram_bins must be positive".into()));
        }
        let ties = &self.ensemble.tie_break;
        if ties.iter().enumerate().any(|(i, t)| ties[..i].contains(t)) {
            return Err(Error::Config("ensemble.tie_break lists a map twice".into()));
        }
        match self.data.source {
            DataSource::Phantom => {
                let p = &self.phantom;
                if p.train_count == 0 || p.test_count == 0 {
                    return Err(Error::Config("phantom.train_count and phantom.test_count must be positive".into()));
                }
                if p.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::Config(format!("phantom.spacing must be positive, got {:?}", p.spacing)));
                }
            }
            DataSource::Files => {
                if self.data.train.is_empty() || self.data.test.is_empty() {
                    return Err(Error::Config("data.train and data.test must list at least one volume each".into()));
                }
                for p in self.data.train.iter().chain(&self.data.test) {
                    if VolumeFormat::infer(p).is_none() {
                        return Err(Error::Config(format!(
                            "{}: unrecognised volume extension (expected .nii, .nii.gz or .hdr)",
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(PipelineConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn published_hyperparameters_are_the_defaults() {
        let c = PipelineConfig::default();
        let seg = &c.segmentation;
        assert_eq!(seg.aspp.rates, [6, 12, 18]);
        assert_eq!(seg.augmentation.crop, [480, 480]);
        assert_eq!(seg.augmentation.scale_range, [0.5, 2.0]);
        assert_eq!(seg.scales, vec![0.5, 0.75, 1.0, 1.25, 1.5, 2.0]);
        assert_eq!((seg.schedule.joint_epochs, seg.schedule.finetune_epochs), (20, 20));
        assert_eq!((seg.schedule.joint_lr, seg.schedule.finetune_lr), (0.01, 0.002));
        assert_eq!(c.transfer.optimizer.epochs, 50);
        assert_eq!((c.transfer.optimizer.content_weight, c.transfer.optimizer.style_weight), (1.0, 1e6));
    }

    #[test]
    fn hash_ignores_run_directory_but_not_settings() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { output: "elsewhere".into(), workers: 3, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig { seed: a.seed + 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sed = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[segmentation]\nscale = [1.0]"), Err(Error::Config(_))));
        let c = PipelineConfig::from_toml("[segmentation]\nscales = []").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = PipelineConfig::from_toml("[data]\nsource = \"files\"").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn desk_config_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
        let c = PipelineConfig::load(&path).unwrap();
        c.validate().unwrap();
    }
}
