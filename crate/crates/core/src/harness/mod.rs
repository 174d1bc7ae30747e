//! Experiment configuration, shared helpers and the CSV contract.
//!
//! Every CSV starts with a `# config_digest=<sha256>,seed=<u64>` line, then
//! the header row, then data rows.

mod gap;
mod latency;
mod solve;
mod sweeps;
mod trace;
mod validate;

pub use gap::{gap_pct, run_gap_study, utility_gap, GapConfig, GapRecord, GapSkips, GapStudy, GapSummary};
pub use latency::{run_latency_bench, LatencyConfig, LatencyRow, LatencyTable};
pub use solve::{run_solve, SolveConfig, SolveResult};
pub use sweeps::{run_sumrate_sweeps, Ordering, SweepAxis, SweepConfig, SweepInstance, SweepPoint, SweepResult};
pub use trace::{run_mobility_trace, MobilityConfig, MobilityTrace, TraceSample};
pub use validate::{run_validation, ValidationCheck, ValidationReport};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    exact_joint_enumeration, EnumeratorParams, InterferenceModel, Network, PhyModel, Scenario, SolverParams,
    SystemAllocation,
};
use crate::association::AssociationMap;
use crate::dataset::{digest_json, DatasetConfig};
use crate::lab::Lab;
use crate::mobility::TrafficModel;
use crate::neural::{cnn_allocate, NeuralModel, TrainingConfig};
use crate::optics::{BeamModel, NoiseModel, ReceiverModel};
use crate::rng::seeded;
use crate::topology::{PartitionScheme, Point, Room, Topology};
use crate::{Error, Result};

/// Environment variable that overrides `paths.out_dir`.
pub const OUT_DIR_ENV: &str = "OWC_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub room: Room,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub ap_power_w: f64,
    pub p_safe_w: f64,
    /// Beam radius at the receiver plane.
    pub spot_radius_m: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self { room: Room::default(), grid_rows: 4, grid_cols: 4, ap_power_w: 0.05, p_safe_w: 0.05, spot_radius_m: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsSection {
    pub wavelength_m: f64,
    pub lens_index: f64,
    pub receiver: ReceiverModel,
    pub noise: NoiseModel,
    pub interference: InterferenceModel,
    pub interference_sweeps: usize,
    pub zf_min_gain_ratio: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        let phy = PhyModel::default();
        Self {
            wavelength_m: BeamModel::VCSEL.wavelength_m,
            lens_index: BeamModel::VCSEL.lens_index,
            receiver: phy.rx,
            noise: phy.noise,
            interference: phy.interference,
            interference_sweeps: phy.sweeps,
            zf_min_gain_ratio: phy.zf_min_gain_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationSection {
    /// Fixed threshold; absent means each partition's covering threshold.
    pub d_th_m: Option<f64>,
    pub d_th_margin_m: f64,
}

impl Default for AssociationSection {
    fn default() -> Self {
        Self { d_th_m: None, d_th_margin_m: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub fc_model: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: "data/dataset.owcd".into(),
            model: "data/cnn.owcm".into(),
            fc_model: "data/fc_dnn.owcm".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed of the experiment subcommands (sweeps, traces, gap study, solve).
    pub seed: u64,
    pub topology: TopologySection,
    pub optics: OpticsSection,
    pub association: AssociationSection,
    pub allocator: SolverParams,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    pub gap: GapConfig,
    pub sweeps: SweepConfig,
    pub mobility: MobilityConfig,
    pub latency: LatencyConfig,
    pub solve: SolveConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            topology: TopologySection::default(),
            optics: OpticsSection::default(),
            association: AssociationSection::default(),
            allocator: SolverParams::default(),
            dataset: DatasetConfig::default(),
            training: TrainingConfig::default(),
            gap: GapConfig::default(),
            sweeps: SweepConfig::default(),
            mobility: MobilityConfig::default(),
            latency: LatencyConfig::default(),
            solve: SolveConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.room.validate()?;
        self.allocator.validate()?;
        self.dataset.validate()?;
        self.training.validate()?;
        self.sweeps.validate()?;
        self.mobility.validate()?;
        if self.gap.scenarios == 0 {
            return Err(Error::Config("gap.scenarios must be positive".into()));
        }
        if self.latency.samples == 0 || self.latency.enumerator_samples == 0 {
            return Err(Error::Config("latency sample counts must be positive".into()));
        }
        if !(self.topology.spot_radius_m > 0.0) {
            return Err(Error::Config("spot_radius_m must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, printed in every CSV. File
    /// locations are left out so relocated runs share a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        digest_json(&c)
    }

    pub fn lab(&self) -> Result<Lab> {
        let t = &self.topology;
        let base = Topology::new(t.room, t.grid_rows, t.grid_cols, t.ap_power_w, t.p_safe_w, PartitionScheme::MAP4)?;
        let o = &self.optics;
        let phy = PhyModel {
            beam: BeamModel::with_spot_radius(t.spot_radius_m, t.room.link_height_m(), o.wavelength_m, o.lens_index),
            rx: o.receiver,
            noise: o.noise,
            interference: o.interference,
            sweeps: o.interference_sweeps,
            zf_min_gain_ratio: o.zf_min_gain_ratio,
        };
        Ok(Lab {
            base,
            phy,
            solver: self.allocator,
            d_th_m: self.association.d_th_m,
            d_th_margin_m: self.association.d_th_margin_m,
        })
    }

    /// `paths.out_dir`, unless the environment overrides it.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.paths.out_dir.clone(),
        }
    }
}

/// CSV text with the digest/seed preamble and a header row.
pub fn csv_document(digest: &str, seed: u64, header: &str, rows: &[String]) -> String {
    let mut s = format!("# config_digest={digest},seed={seed}\n{header}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

/// How a scenario's powers are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Cnn,
    Uniform,
    /// Heuristic association plus dual gradient.
    Oracle,
    /// Exhaustive association search.
    Exact,
}

impl MethodKind {
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Cnn => "cnn",
            MethodKind::Uniform => "uniform",
            MethodKind::Oracle => "oracle",
            MethodKind::Exact => "exact",
        }
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(MethodKind::Cnn),
            "uniform" => Ok(MethodKind::Uniform),
            "oracle" => Ok(MethodKind::Oracle),
            "exact" => Ok(MethodKind::Exact),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// A method bound to whatever it needs to run.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Cnn(&'a NeuralModel),
    Uniform,
    Oracle,
    Exact,
}

impl Method<'_> {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Cnn(_) => MethodKind::Cnn,
            Method::Uniform => MethodKind::Uniform,
            Method::Oracle => MethodKind::Oracle,
            Method::Exact => MethodKind::Exact,
        }
    }

    /// Association and powers for `net`. Only `Exact` picks its own
    /// association; the rest use the heuristic.
    pub fn run(&self, lab: &Lab, net: &Network) -> Result<(AssociationMap, SystemAllocation)> {
        let params = lab.association(&net.topology);
        if let Method::Exact = self {
            let s = exact_joint_enumeration(net, &EnumeratorParams::new(params.d_th_m))?;
            return Ok((s.association, s.allocation));
        }
        let assoc = net.associate(&params);
        let alloc = match self {
            Method::Cnn(model) => cnn_allocate(model, net, &assoc)?.0,
            Method::Uniform => net.allocate_uniform(&assoc),
            _ => net.allocate_dual_gradient(&assoc, &lab.solver),
        };
        Ok((assoc, alloc))
    }
}

/// All users active, uniform positions, demands from the traffic bounds.
pub fn fixed_scenario(room: &Room, traffic: &TrafficModel, users: usize, snr_db: f64, seed: u64) -> Scenario {
    let mut rng = seeded(seed);
    let mut sc = Scenario { users: vec![], active: vec![true; users], p_min_w: vec![], p_max_w: vec![], snr_db };
    for _ in 0..users {
        sc.users.push(Point::new(rng.random::<f64>() * room.width_m, rng.random::<f64>() * room.depth_m));
        let (lo, hi) = traffic.draw_demand(&mut rng);
        sc.p_min_w.push(lo);
        sc.p_max_w.push(hi);
    }
    sc
}

/// Nearest-rank percentile of an unsorted sample (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
