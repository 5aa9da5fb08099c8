//! Declarative experiment configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::dynsys::{ObservationFn, SystemKind};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::readout::{Optimizer, TrainConfig};
use crate::reservoir::{self, ReservoirSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Reconstruct,
    VdpSweep,
    Forecast,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::VdpSweep => "vdp_sweep",
            ExperimentKind::Forecast => "forecast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReservoirSpec {
    UniformNormalized { dim: usize },
    HaarScaled { dim: usize, scale: f64 },
    TakensShift { q: usize },
    Custom { a: Vec<Vec<f64>>, c: Vec<f64> },
}

impl ReservoirSpec {
    pub fn dim(&self) -> usize {
        match self {
            ReservoirSpec::UniformNormalized { dim } | ReservoirSpec::HaarScaled { dim, .. } => *dim,
            ReservoirSpec::TakensShift { q } => 2 * q + 1,
            ReservoirSpec::Custom { c, .. } => c.len(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<ReservoirSystem> {
        Ok(match self {
            ReservoirSpec::UniformNormalized { dim } => reservoir::build_uniform(*dim, seed)?,
            ReservoirSpec::HaarScaled { dim, scale } => reservoir::build_haar(*dim, *scale, seed)?,
            ReservoirSpec::TakensShift { q } => reservoir::build_takens(*q)?,
            ReservoirSpec::Custom { a, c } => {
                let a = DenseMatrix::from_rows(a).map_err(|e| ExperimentError::Invalid(format!("custom A: {e}")))?;
                ReservoirSystem::custom(a, DenseVector::new(c.clone()), seed)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    Coordinate(usize),
    Linear(Vec<f64>),
}

impl Default for ObservationSpec {
    fn default() -> Self {
        ObservationSpec::Coordinate(0)
    }
}

impl ObservationSpec {
    pub fn to_fn(&self) -> ObservationFn {
        match self {
            ObservationSpec::Coordinate(i) => ObservationFn::Coordinate(*i),
            ObservationSpec::Linear(w) => ObservationFn::Linear(w.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeSpec {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_degree() -> usize {
    2
}

fn default_lambda() -> f64 {
    1e-8
}

impl Default for RidgeSpec {
    fn default() -> Self {
        RidgeSpec {
            degree: default_degree(),
            lambda: default_lambda(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub hidden_layers: Vec<usize>,
    pub train: TrainConfig,
}

impl MlpSpec {
    /// Three hidden layers of 20 units, short staged schedule.
    pub fn desk() -> Self {
        MlpSpec {
            hidden_layers: vec![20; 3],
            train: TrainConfig {
                optimizer: Optimizer::adam(vec![5e-3, 1e-3, 3e-4]),
                epochs_per_stage: 300,
                batch_size: None,
                patience: 50,
                seed: 0,
            },
        }
    }

    /// Ten hidden layers of 20 units, eight stages of 7000 epochs.
    pub fn paper() -> Self {
        MlpSpec {
            hidden_layers: vec![20; 10],
            train: TrainConfig::paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSpec {
    #[serde(default)]
    pub ridge: Option<RidgeSpec>,
    #[serde(default)]
    pub mlp: Option<MlpSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "d_immersion_samples")]
    pub immersion_samples: usize,
    #[serde(default = "d_injectivity_samples")]
    pub injectivity_samples: usize,
    #[serde(default = "d_fd_eps")]
    pub fd_eps: f64,
    #[serde(default = "d_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "d_truncation_tol")]
    pub truncation_tol: f64,
    #[serde(default = "d_near_tol")]
    pub near_tol: f64,
    #[serde(default = "d_far_factor")]
    pub far_factor: f64,
    #[serde(default = "d_esp_steps")]
    pub esp_steps: usize,
}

fn d_immersion_samples() -> usize {
    50
}
fn d_injectivity_samples() -> usize {
    2000
}
fn d_fd_eps() -> f64 {
    1e-6
}
fn d_rank_tol() -> f64 {
    1e-8
}
fn d_truncation_tol() -> f64 {
    1e-10
}
fn d_near_tol() -> f64 {
    1e-3
}
fn d_far_factor() -> f64 {
    0.05
}
fn d_esp_steps() -> usize {
    1000
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            immersion_samples: d_immersion_samples(),
            injectivity_samples: d_injectivity_samples(),
            fd_eps: d_fd_eps(),
            rank_tol: d_rank_tol(),
            truncation_tol: d_truncation_tol(),
            near_tol: d_near_tol(),
            far_factor: d_far_factor(),
            esp_steps: d_esp_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_dir(),
            prefix: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub system: SystemKind,
    pub initial_condition: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub total_time: f64,
    pub washout_time: f64,
    pub reservoir: ReservoirSpec,
    pub seed: u64,
    #[serde(default)]
    pub observation: ObservationSpec,
    #[serde(default)]
    pub noise_variance: f64,
    #[serde(default)]
    pub readout: Option<ReadoutSpec>,
    #[serde(default)]
    pub mu_grid: Vec<f64>,
    #[serde(default = "default_components")]
    pub pca_components: usize,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_dt() -> f64 {
    0.01
}

fn default_components() -> usize {
    3
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    /// Rössler from (2, 1, 5), 120 time units with 60 of washout, N = 7.
    pub fn rossler() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Reconstruct,
            system: SystemKind::Rossler,
            initial_condition: vec![2.0, 1.0, 5.0],
            dt: 0.01,
            total_time: 120.0,
            washout_time: 60.0,
            reservoir: ReservoirSpec::UniformNormalized { dim: 7 },
            seed: 0,
            observation: ObservationSpec::Coordinate(0),
            noise_variance: 0.0,
            readout: None,
            mu_grid: Vec::new(),
            pca_components: 3,
            diagnostics: DiagnosticsSpec::default(),
            output: OutputSpec {
                dir: default_dir(),
                prefix: "rossler_".into(),
            },
        }
    }

    /// Lorenz from (0, 1, 1.05), 40 time units with 20 of washout, N = 7.
    pub fn lorenz() -> Self {
        ExperimentConfig {
            system: SystemKind::Lorenz,
            initial_condition: vec![0.0, 1.0, 1.05],
            total_time: 40.0,
            washout_time: 20.0,
            output: OutputSpec {
                dir: default_dir(),
                prefix: "lorenz_".into(),
            },
            ..Self::rossler()
        }
    }

    /// Van der Pol from (-4, 5) for μ = 0.5..2.5, 40 time units, the last
    /// 10 kept, N = 5, two components.
    pub fn vdp_sweep() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::VdpSweep,
            system: SystemKind::VanDerPol { mu: 1.0 },
            initial_condition: vec![-4.0, 5.0],
            total_time: 40.0,
            washout_time: 30.0,
            reservoir: ReservoirSpec::UniformNormalized { dim: 5 },
            mu_grid: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            pca_components: 2,
            output: OutputSpec {
                dir: default_dir(),
                prefix: "vdp_".into(),
            },
            ..Self::rossler()
        }
    }

    /// Noisy Lorenz one-step forecast at desk scale: 1100 time units with
    /// 100 of washout, N = 20 Haar reservoir at 0.9, degree-2 ridge.
    pub fn forecast() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Forecast,
            system: SystemKind::Lorenz,
            initial_condition: vec![0.0, 1.0, 1.05],
            total_time: 1100.0,
            washout_time: 100.0,
            reservoir: ReservoirSpec::HaarScaled { dim: 20, scale: 0.9 },
            noise_variance: 0.25,
            readout: Some(ReadoutSpec {
                ridge: Some(RidgeSpec::default()),
                mlp: None,
            }),
            output: OutputSpec {
                dir: default_dir(),
                prefix: "forecast_".into(),
            },
            ..Self::rossler()
        }
    }

    /// Applies a scale preset. `Desk` leaves the configuration unchanged.
    /// `Paper` lengthens the forecast run to 11000 time units with 1000 of
    /// washout and adds the 10x20 network with the eight-stage schedule.
    /// Other experiments already run at their published scale.
    pub fn apply_preset(&mut self, preset: Preset) {
        if preset == Preset::Paper && self.experiment == ExperimentKind::Forecast {
            self.total_time = 11000.0;
            self.washout_time = 1000.0;
            let readout = self.readout.get_or_insert(ReadoutSpec { ridge: None, mlp: None });
            readout.mlp = Some(MlpSpec::paper());
        }
    }

    pub fn total_steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }

    pub fn washout_steps(&self) -> usize {
        (self.washout_time / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.washout_time >= 0.0) || !self.total_time.is_finite() {
            return bad("times must be finite and washout non-negative".into());
        }
        if !(self.washout_time < self.total_time) || self.total_steps() <= self.washout_steps() {
            return bad(format!(
                "washout {} leaves no samples in total time {}",
                self.washout_time, self.total_time
            ));
        }
        if self.initial_condition.len() != self.system.dim() {
            return bad(format!(
                "initial condition has {} coordinates, {} needs {}",
                self.initial_condition.len(),
                self.system.name(),
                self.system.dim()
            ));
        }
        if self.initial_condition.iter().any(|v| !v.is_finite()) {
            return bad("initial condition must be finite".into());
        }
        self.observation
            .to_fn()
            .validate(self.system.dim())
            .map_err(|e| ExperimentError::Config(format!("observation: {e}")))?;
        let n = self.reservoir.dim();
        if n == 0 {
            return bad("reservoir dimension must be positive".into());
        }
        if let ReservoirSpec::Custom { a, c } = &self.reservoir {
            if a.len() != c.len() || a.iter().any(|r| r.len() != c.len()) {
                return bad("custom A must be square and match C".into());
            }
        }
        if self.pca_components == 0 || self.pca_components > n {
            return bad(format!("pca_components must be in 1..={n}"));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return bad("noise_variance must be non-negative".into());
        }
        if self.noise_variance > 0.0 && self.experiment != ExperimentKind::Forecast {
            return bad("noise_variance applies to forecast runs only".into());
        }
        match self.experiment {
            ExperimentKind::VdpSweep => {
                if !matches!(self.system, SystemKind::VanDerPol { .. }) {
                    return bad("vdp_sweep needs the vanderpol system".into());
                }
                if self.mu_grid.is_empty() || self.mu_grid.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
                    return bad("mu_grid must be a non-empty list of non-negative values".into());
                }
            }
            ExperimentKind::Forecast => {
                let Some(r) = &self.readout else {
                    return bad("forecast needs a readout".into());
                };
                if r.ridge.is_none() && r.mlp.is_none() {
                    return bad("readout must configure ridge, mlp or both".into());
                }
                if let Some(rs) = &r.ridge {
                    if rs.degree == 0 || !(rs.lambda >= 0.0) {
                        return bad("ridge needs degree >= 1 and lambda >= 0".into());
                    }
                }
                if let Some(m) = &r.mlp {
                    m.train.validate().map_err(|e| ExperimentError::Config(format!("mlp: {e}")))?;
                    if m.hidden_layers.contains(&0) {
                        return bad("hidden layer widths must be positive".into());
                    }
                }
                if !matches!(self.observation, ObservationSpec::Coordinate(_)) {
                    return bad("forecast observes a single coordinate".into());
                }
            }
            ExperimentKind::Reconstruct => {}
        }
        if self.experiment != ExperimentKind::VdpSweep && !self.mu_grid.is_empty() {
            return bad("mu_grid applies to vdp_sweep only".into());
        }
        if self.experiment != ExperimentKind::Forecast && self.readout.is_some() {
            return bad("readout applies to forecast runs only".into());
        }
        let d = &self.diagnostics;
        if d.immersion_samples == 0 || d.injectivity_samples < 2 || !(d.fd_eps > 0.0) || !(d.rank_tol > 0.0) {
            return bad("diagnostics sample counts and tolerances must be positive".into());
        }
        Ok(())
    }
}
