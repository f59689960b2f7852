//! Run configuration as TOML. Unknown keys are rejected; every key has a
//! default, and relative paths resolve against the config file's directory.
//!
//! ```toml
//! seed = 7
//!
//! [inputs]
//! target = "target.bin"               # particles (positions [+ mass volume])
//! target_features = "target_features.bin"
//! reference_features = "reference_features.bin"
//! bones = "bones.toml"
//!
//! [output]
//! out_dir = "frames"
//!
//! [sim]
//! substeps = 24
//! youngs = 1e4
//!
//! [optimizer]
//! iters = 200
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::export::FrameFormat;
use crate::mpm::FaceCondition;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Forces single-threaded stages.
    pub deterministic: bool,
    pub inputs: InputPaths,
    pub output: OutputOptions,
    pub sim: SimOptions,
    pub optimizer: OptimizerOptions,
    pub matching: MatchingOptions,
    pub ablation: AblationOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            deterministic: false,
            inputs: InputPaths::default(),
            output: OutputOptions::default(),
            sim: SimOptions::default(),
            optimizer: OptimizerOptions::default(),
            matching: MatchingOptions::default(),
            ablation: AblationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub target: Option<PathBuf>,
    pub target_features: Option<PathBuf>,
    pub reference_features: Option<PathBuf>,
    pub bones: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputOptions {
    pub out_dir: PathBuf,
    pub format: FrameFormat,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions { out_dir: PathBuf::from("frames"), format: FrameFormat::Bin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub substeps: usize,
    /// Cells along the longest grid axis; unset sizes cells from the
    /// particle spacing instead.
    pub resolution: Option<usize>,
    /// Cell size as a multiple of the mean particle spacing.
    pub cell_spacing_ratio: f64,
    /// Grid padding around the motion envelope, as a fraction of its size.
    pub dilation: f64,
    pub youngs: f64,
    pub poisson: f64,
    /// Used when the target file carries no mass/volume.
    pub density: f64,
    pub gravity: [f64; 3],
    /// Face order −x, +x, −y, +y, −z, +z.
    pub boundary: [FaceCondition; 6],
    pub boundary_margin: usize,
    /// Control-point lattice resolution for velocity sharing (unset = off).
    pub control_resolution: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        use FaceCondition::{Open, Sticky};
        SimOptions {
            substeps: 24,
            resolution: None,
            cell_spacing_ratio: 2.0,
            dilation: 0.2,
            youngs: 1e4,
            poisson: 0.3,
            density: 1000.0,
            gravity: [0.0; 3],
            boundary: [Open, Open, Sticky, Open, Open, Open],
            boundary_margin: 3,
            control_resolution: Some(41),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    pub iters: usize,
    pub lr: f64,
    pub tv_weight: f64,
    /// Number of phases to run (unset = every frame pair).
    pub phases: Option<usize>,
    pub field_resolution: usize,
    pub field_channels: usize,
    pub field_hidden: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            iters: 200,
            lr: 1e-2,
            tv_weight: 1e-3,
            phases: None,
            field_resolution: 32,
            field_channels: 16,
            field_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMode {
    /// Whole-object bounding-box diagonal.
    #[default]
    Object,
    /// Each part's own bounding-box diagonal.
    PerPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingOptions {
    pub outlier_k: f64,
    /// Leading feature columns forming the semantic block (unset = all).
    pub diff_dims: Option<usize>,
    pub coverage: CoverageMode,
}

impl Default for MatchingOptions {
    fn default() -> Self {
        MatchingOptions { outlier_k: crate::correspondence::DEFAULT_OUTLIER_K, diff_dims: None, coverage: CoverageMode::Object }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationOptions {
    /// Manual velocity scales compared against the optimized run.
    pub alphas: Vec<f64>,
    /// Phase the comparison runs on.
    pub phase: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions { alphas: vec![0.5, 1.0, 2.0, 4.0], phase: 0 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if let Some(base) = origin.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.inputs.target,
            &mut self.inputs.target_features,
            &mut self.inputs.reference_features,
            &mut self.inputs.bones,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        let o = &self.optimizer;
        let checks = [
            (s.substeps >= 1, "sim.substeps must be ≥ 1"),
            (s.resolution.is_none_or(|r| r >= 4), "sim.resolution must be ≥ 4"),
            (s.cell_spacing_ratio > 0.0, "sim.cell_spacing_ratio must be positive"),
            (s.dilation >= 0.0, "sim.dilation must be non-negative"),
            (s.density > 0.0, "sim.density must be positive"),
            (s.gravity.iter().all(|g| g.is_finite()), "sim.gravity must be finite"),
            (o.lr > 0.0 && o.lr.is_finite(), "optimizer.lr must be positive"),
            (o.tv_weight >= 0.0, "optimizer.tv_weight must be non-negative"),
            (o.field_resolution >= 2 && o.field_channels >= 1 && o.field_hidden >= 1, "optimizer field sizes are too small"),
            (self.matching.outlier_k > 0.0, "matching.outlier_k must be positive"),
            (self.ablation.alphas.iter().all(|a| a.is_finite()), "ablation.alphas must be finite"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        crate::mpm::lame_parameters(s.youngs, s.poisson)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", Path::new("run.toml")).unwrap().optimizer, OptimizerOptions::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml("[sim]\nyoungs = 1e4\nstiffness = 3\n", Path::new("run.toml")).unwrap_err().to_string();
        assert!(e.contains("stiffness"), "{e}");
    }

    #[test]
    fn relative_paths_follow_config() {
        let c = RunConfig::from_toml("[inputs]\nbones = \"b.toml\"\n[output]\nout_dir = \"/abs\"\n", Path::new("/data/run.toml")).unwrap();
        assert_eq!(c.inputs.bones, Some(PathBuf::from("/data/b.toml")));
        assert_eq!(c.output.out_dir, PathBuf::from("/abs"));
    }

    #[test]
    fn round_trip_and_validation() {
        let mut c = RunConfig::default();
        c.sim.boundary[0] = FaceCondition::Slip;
        c.matching.coverage = CoverageMode::PerPart;
        let back = RunConfig::from_toml(&c.to_toml().unwrap(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
        c.sim.poisson = 0.5;
        assert!(c.validate().is_err());
    }
}
