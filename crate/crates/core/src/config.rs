//! The run configuration shared by `run` and `sweep`.
//!
//! Every field has a default, unknown keys are rejected, and the resolved
//! value (defaults filled in) is what gets written as `resolved-config.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base_measure::{BaseMeasure, MeasureKind};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::io::{read_labels, PointTable};
use crate::metrics::DEFAULT_ECE_BINS;
use crate::rng::SeededRng;
use crate::sdot::SolverConfig;
use crate::singularity::AdjacencyMode;
use crate::synthesis::{OtisParams, Slab, DEFAULT_GUARD, REJECTION_CAP};
use crate::toy::{Dataset, ToyConfig};
use crate::trainer::{LabeledSet, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseConfig {
    pub kind: MeasureKind,
    /// Bounding-box expansion, as a fraction of each axis extent.
    pub box_margin: f64,
    pub stddev: f64,
    /// Explicit box corners; both or neither. Overrides the bounding box.
    pub box_lo: Option<Vec<f64>>,
    pub box_hi: Option<Vec<f64>>,
    /// Gaussian mean; the origin when unset.
    pub mean: Option<Vec<f64>>,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            kind: MeasureKind::Uniform,
            box_margin: 0.10,
            stddev: 1.0,
            box_lo: None,
            box_hi: None,
            mean: None,
        }
    }
}

impl BaseConfig {
    pub fn build(&self, cloud: &PointCloud) -> Result<BaseMeasure> {
        match self.kind {
            MeasureKind::Uniform => match (&self.box_lo, &self.box_hi) {
                (Some(lo), Some(hi)) => BaseMeasure::uniform_box(lo.clone(), hi.clone()),
                (None, None) => BaseMeasure::bounding_box(cloud.points_flat(), cloud.dim(), self.box_margin),
                _ => Err(Error::Config("base.box_lo and base.box_hi must be given together".into())),
            },
            MeasureKind::Gaussian => {
                let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; cloud.dim()]);
                BaseMeasure::gaussian(mean, self.stddev)
            }
        }
    }
}

/// Either a generated toy dataset or five files: training points and labels,
/// held-out points and labels, and OOD points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub toy: Option<ToyConfig>,
    pub train: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub ood: Option<PathBuf>,
}

pub fn read_labeled(points: &Path, labels: &Path) -> Result<LabeledSet> {
    let table = PointTable::read(points)?;
    let labels = read_labels(labels)?;
    LabeledSet::new(table.rows().map(<[f64]>::to_vec).collect(), labels)
}

impl DataConfig {
    fn files(&self) -> Option<[&PathBuf; 5]> {
        Some([
            self.train.as_ref()?,
            self.train_labels.as_ref()?,
            self.test.as_ref()?,
            self.test_labels.as_ref()?,
            self.ood.as_ref()?,
        ])
    }

    fn any_file(&self) -> bool {
        self.train.is_some()
            || self.train_labels.is_some()
            || self.test.is_some()
            || self.test_labels.is_some()
            || self.ood.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.toy, self.any_file()) {
            (Some(t), false) => t.validate(),
            (None, true) if self.files().is_some() => Ok(()),
            (None, true) => Err(Error::Config(
                "data needs all of train, train_labels, test, test_labels and ood".into(),
            )),
            (Some(_), true) => Err(Error::Config("data.toy cannot be combined with data files".into())),
            (None, false) => Err(Error::Config("data needs either a toy block or input files".into())),
        }
    }

    pub fn load(&self, rng: &SeededRng) -> Result<Dataset> {
        self.validate()?;
        if let Some(toy) = &self.toy {
            return toy.generate(rng);
        }
        let [train, train_labels, test, test_labels, ood] = self.files().expect("validated");
        let data = Dataset {
            train: read_labeled(train, train_labels)?,
            test: read_labeled(test, test_labels)?,
            ood: PointTable::read(ood)?.rows().map(<[f64]>::to_vec).collect(),
        };
        if data.train.is_empty() || data.test.is_empty() || data.ood.is_empty() {
            return Err(Error::TrainingData("train, test and OOD sets must be non-empty".into()));
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub per_boundary: usize,
    pub slab: Slab,
    pub guard: f64,
    pub max_tries: usize,
}

impl SynthesisConfig {
    pub fn params(&self) -> OtisParams {
        OtisParams {
            per_boundary: self.per_boundary,
            slab: self.slab,
            guard: self.guard,
            max_tries: self.max_tries,
        }
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            per_boundary: 32,
            slab: Slab::Auto,
            guard: DEFAULT_GUARD,
            max_tries: REJECTION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ece_bins: usize,
    pub hist_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ece_bins: DEFAULT_ECE_BINS,
            hist_bins: DEFAULT_ECE_BINS,
        }
    }
}

/// Proxy-sample strategies compared by the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    /// Top-ρ boundaries by score.
    TopK,
    /// The same number of boundaries drawn at random.
    RanB,
    LatentInterp,
    InputInterp,
    /// No proxy samples: plain cross-entropy.
    Baseline,
}

impl SweepMode {
    pub const ALL: [SweepMode; 5] = [
        SweepMode::TopK,
        SweepMode::RanB,
        SweepMode::LatentInterp,
        SweepMode::InputInterp,
        SweepMode::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::TopK => "TopK",
            SweepMode::RanB => "RanB",
            SweepMode::LatentInterp => "LatentInterp",
            SweepMode::InputInterp => "InputInterp",
            SweepMode::Baseline => "Baseline",
        }
    }
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown sweep mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rhos: Vec<f64>,
    pub modes: Vec<SweepMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rhos: vec![0.05, 0.10, 0.25, 0.5, 1.0],
            modes: SweepMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Fail instead of continuing when the solver does not converge.
    pub strict: bool,
    pub data: DataConfig,
    /// Cap on the number of training points used as transport targets,
    /// chosen at random; 0 uses all of them.
    pub max_targets: usize,
    /// `identity`, `affine:<json>` or `external:<dir>`.
    pub codec: String,
    pub base: BaseConfig,
    pub solver: SolverConfig,
    pub adjacency: AdjacencyMode,
    pub rho: f64,
    pub synthesis: SynthesisConfig,
    pub trainer: TrainConfig,
    pub evaluation: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("otsing-out"),
            threads: 0,
            strict: false,
            data: DataConfig {
                toy: Some(ToyConfig::default()),
                ..DataConfig::default()
            },
            max_targets: 0,
            codec: "identity".into(),
            base: BaseConfig::default(),
            solver: SolverConfig::default(),
            adjacency: AdjacencyMode::AllPairs,
            rho: 0.10,
            synthesis: SynthesisConfig::default(),
            trainer: TrainConfig::default(),
            evaluation: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")))
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; I/O failures are I/O errors, bad
    /// content is a configuration error.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.solver.validate()?;
        self.trainer.validate()?;
        check_rho(self.rho)?;
        self.sweep.rhos.iter().try_for_each(|&r| check_rho(r))?;
        if self.synthesis.per_boundary == 0 || self.synthesis.max_tries == 0 {
            return Err(Error::Config("synthesis.per_boundary and synthesis.max_tries must be >= 1".into()));
        }
        if !(self.synthesis.guard > 0.0 && self.synthesis.guard.is_finite()) {
            return Err(Error::Config(format!("synthesis.guard must be > 0, got {}", self.synthesis.guard)));
        }
        if let Slab::Fixed(d) = self.synthesis.slab {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("slab width must be > 0, got {d}")));
            }
        }
        if self.evaluation.ece_bins == 0 || self.evaluation.hist_bins == 0 {
            return Err(Error::Config("evaluation bin counts must be >= 1".into()));
        }
        let b = &self.base;
        if !(b.box_margin >= 0.0 && b.box_margin.is_finite()) || !(b.stddev > 0.0 && b.stddev.is_finite()) {
            return Err(Error::Config("base.box_margin must be >= 0 and base.stddev > 0".into()));
        }
        if b.box_lo.is_some() != b.box_hi.is_some() {
            return Err(Error::Config("base.box_lo and base.box_hi must be given together".into()));
        }
        if self.max_targets == 1 {
            return Err(Error::Config("max_targets must be 0 (all) or >= 2".into()));
        }
        Ok(())
    }

    /// Pretty JSON with every default spelled out.
    pub fn resolved_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
