//! Run configurations. Every command resolves its flags and optional TOML
//! file into one of these; the resolved value is echoed into the run
//! manifest and is all `rerun` needs.
//!
//! TOML files use the same keys as the JSON manifest's `config` object.
//! Unknown keys are rejected and `schema_version`, when present, must be 1.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnlab::{Activation, OptimizerKind, ScalingConfig};
use crate::quadlab::QConstruction;
use crate::slq::ProbeDistribution;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_v1() -> u32 {
    SCHEMA_VERSION
}

fn check_schema(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"
        )))
    }
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Step size: `"auto"` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "EtaRepr", into = "EtaRepr")]
pub enum EtaSetting {
    #[default]
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EtaRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<EtaRepr> for EtaSetting {
    type Error = String;

    fn try_from(r: EtaRepr) -> std::result::Result<Self, String> {
        match r {
            EtaRepr::Name(s) => s.parse(),
            EtaRepr::Value(x) => Ok(EtaSetting::Value(x)),
        }
    }
}

impl From<EtaSetting> for EtaRepr {
    fn from(e: EtaSetting) -> Self {
        match e {
            EtaSetting::Auto => EtaRepr::Name("auto".into()),
            EtaSetting::Value(x) => EtaRepr::Value(x),
        }
    }
}

impl std::str::FromStr for EtaSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(EtaSetting::Auto);
        }
        s.parse::<f64>()
            .map(EtaSetting::Value)
            .map_err(|_| format!("expected \"auto\" or a number, got {s:?}"))
    }
}

/// Where a symmetric operator comes from: a dense CSV matrix or a synthetic
/// spec (`linspace:LO:HI:N` for a diagonal, `case:K` or `case:K:MULT` for a
/// quadratic-lab Hessian, with each Case 3/4 eigenvalue repeated MULT times).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSource {
    pub matrix: Option<PathBuf>,
    pub synthetic: Option<String>,
    /// 1-based inclusive block ranges as JSON; overrides a synthetic
    /// operator's own partition.
    pub partition: Option<PathBuf>,
}

impl OperatorSource {
    pub fn is_set(&self) -> bool {
        self.matrix.is_some() || self.synthetic.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlqRun {
    pub schema_version: u32,
    pub source: OperatorSource,
    /// Restrict to this 1-based block of the partition.
    pub block: Option<usize>,
    pub m: usize,
    pub num_probes: usize,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub probe: ProbeDistribution,
    pub reorth: bool,
    pub grid_points: Option<usize>,
    pub name: String,
}

impl Default for SlqRun {
    fn default() -> Self {
        Self {
            schema_version: schema_v1(),
            source: OperatorSource::default(),
            block: None,
            m: 100,
            num_probes: 10,
            sigma: None,
            seed: 0,
            probe: ProbeDistribution::Gaussian,
            reorth: true,
            grid_points: None,
            name: "density".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapRun {
    pub schema_version: u32,
    /// Directory of density JSON files (as written by `slq`).
    pub densities: Option<PathBuf>,
    pub source: OperatorSource,
    /// Sample this fraction of blocks with the simplified estimator.
    pub simplified: Option<f64>,
    /// Defaults: 100 (10 when simplified).
    pub m: Option<usize>,
    /// Defaults: 10 (1 when simplified).
    pub num_probes: Option<usize>,
    pub seed: u64,
    pub probe: ProbeDistribution,
    pub normalize_10th: bool,
    pub name: String,
}

impl Default for HeatmapRun {
    fn default() -> Self {
        Self {
            schema_version: schema_v1(),
            densities: None,
            source: OperatorSource::default(),
            simplified: None,
            m: None,
            num_probes: None,
            seed: 0,
            probe: ProbeDistribution::Gaussian,
            normalize_10th: false,
            name: "heatmap".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadOptimizer {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verify {
    Prop1,
    Thm1,
    Prop2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadRun {
    pub schema_version: u32,
    /// `1`-`4`, `d1` (two-coordinate GD lower-bound instance) or `scalar`
    /// (½w²). Ignored when `spectra` is given.
    pub case: String,
    /// One eigenvalue-list file per block.
    pub spectra: Vec<PathBuf>,
    pub optimizer: QuadOptimizer,
    pub beta2: f64,
    pub eta: EtaSetting,
    pub steps: usize,
    pub seed: u64,
    pub q: QConstruction,
    /// Condition number of the `d1` instance.
    pub kappa: f64,
    pub verify: Option<Verify>,
    pub name: String,
}

impl Default for QuadRun {
    fn default() -> Self {
        Self {
            schema_version: schema_v1(),
            case: "3".into(),
            spectra: Vec::new(),
            optimizer: QuadOptimizer::Gd,
            beta2: 1.0,
            eta: EtaSetting::Auto,
            steps: 1000,
            seed: 0,
            q: QConstruction::Orthogonal,
            kappa: 5000.0,
            verify: None,
            name: "trajectory".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterData {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for ClusterData {
    fn default() -> Self {
        Self {
            n_per_class: 50,
            n_classes: 2,
            dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockdiagRun {
    pub schema_version: u32,
    pub data: ClusterData,
    pub width: usize,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
    pub name: String,
}

impl Default for BlockdiagRun {
    fn default() -> Self {
        Self {
            schema_version: schema_v1(),
            data: ClusterData::default(),
            width: 8,
            activation: Activation::Tanh,
            optimizer: OptimizerKind::AdamW,
            lr: 1e-4,
            steps: 1000,
            record_every: 100,
            seed: 0,
            name: "blockdiag".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitData {
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SplitData {
    fn default() -> Self {
        Self {
            n_train_per_class: 100,
            n_test_per_class: 50,
            n_classes: 10,
            dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingRun {
    pub schema_version: u32,
    /// Synthetic clusters unless `idx` is given.
    pub data: SplitData,
    pub idx: Option<IdxFiles>,
    pub experiment: ScalingConfig,
    pub name: String,
}

impl Default for ScalingRun {
    fn default() -> Self {
        Self {
            schema_version: schema_v1(),
            data: SplitData::default(),
            idx: None,
            experiment: ScalingConfig::default(),
            name: "scaling".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    /// One hidden layer, logistic loss, one block per neuron plus the head.
    Binary,
    /// Softmax MLP, one block per weight and bias tensor.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlqNetRun {
    pub schema_version: u32,
    pub model: NetKind,
    /// Hidden widths (one entry for `binary`).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub scale: f64,
    pub data: ClusterData,
    /// 0 evaluates the fresh network.
    pub train_steps: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub m: usize,
    pub num_probes: usize,
    pub seed: u64,
    pub name: String,
}

impl Default for SlqNetRun {
    fn default() -> Self {
        Self {
            schema_version: schema_v1(),
            model: NetKind::Binary,
            hidden: vec![8],
            activation: Activation::Tanh,
            scale: 1.0,
            data: ClusterData::default(),
            train_steps: 0,
            optimizer: OptimizerKind::AdamW,
            lr: 1e-4,
            m: 100,
            num_probes: 10,
            seed: 0,
            name: "slq-net".into(),
        }
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum RunSpec {
    Slq(SlqRun),
    Heatmap(HeatmapRun),
    Quad(QuadRun),
    MlpBlockdiag(BlockdiagRun),
    MlpScaling(ScalingRun),
    MlpSlqNet(SlqNetRun),
}

impl RunSpec {
    pub fn schema_version(&self) -> u32 {
        match self {
            RunSpec::Slq(c) => c.schema_version,
            RunSpec::Heatmap(c) => c.schema_version,
            RunSpec::Quad(c) => c.schema_version,
            RunSpec::MlpBlockdiag(c) => c.schema_version,
            RunSpec::MlpScaling(c) => c.schema_version,
            RunSpec::MlpSlqNet(c) => c.schema_version,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            RunSpec::Slq(c) => &c.name,
            RunSpec::Heatmap(c) => &c.name,
            RunSpec::Quad(c) => &c.name,
            RunSpec::MlpBlockdiag(c) => &c.name,
            RunSpec::MlpScaling(c) => &c.name,
            RunSpec::MlpSlqNet(c) => &c.name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version())?;
        let name = self.name();
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::invalid(format!(
                "output name {name:?} must be a plain file stem"
            )));
        }
        Ok(())
    }
}

/// Written next to the outputs of every run as `<name>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub run: RunSpec,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
}
