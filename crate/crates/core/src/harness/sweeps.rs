use serde::{Deserialize, Serialize};

use super::{csv_document, fixed_scenario, mean_std, ExperimentConfig, Method, MethodKind};
use crate::lab::Lab;
use crate::neural::NeuralModel;
use crate::rng::derive_seed;
use crate::topology::PartitionScheme;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// User counts of the user sweep, run at `fixed_snr_db`.
    pub users: Vec<usize>,
    /// SNR grid of the SNR sweep, run at `fixed_users`.
    pub snr_db: Vec<f64>,
    pub fixed_users: usize,
    pub fixed_snr_db: f64,
    pub seeds: usize,
    pub schemes: Vec<PartitionScheme>,
    /// Relative slack under which two sum rates count as tied.
    pub tie_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            users: (6..=12).collect(),
            snr_db: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            fixed_users: 8,
            fixed_snr_db: 20.0,
            seeds: 30,
            schemes: vec![PartitionScheme::MAP4, PartitionScheme::Traditional],
            tie_tolerance: 1e-6,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() || self.snr_db.is_empty() || self.schemes.is_empty() {
            return Err(Error::Config("sweep grids and schemes must be non-empty".into()));
        }
        if self.seeds == 0 || self.fixed_users == 0 || self.users.contains(&0) {
            return Err(Error::Config("sweeps need at least one seed and one user".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Users,
    SnrDb,
}

impl SweepAxis {
    fn label(self) -> &'static str {
        match self {
            SweepAxis::Users => "users",
            SweepAxis::SnrDb => "snr_db",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepInstance {
    pub axis: SweepAxis,
    pub x: f64,
    pub users: usize,
    pub snr_db: f64,
    pub seed_index: usize,
    pub scenario_seed: u64,
    pub scheme: PartitionScheme,
    pub method: MethodKind,
    pub sum_rate_bps: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub x: f64,
    pub scheme: PartitionScheme,
    pub method: MethodKind,
    pub seeds: usize,
    pub mean_sum_rate_bps: f64,
    pub std_sum_rate_bps: f64,
}

/// Paired per-instance comparison counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl Ordering {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }

    /// Fraction of instances where the first method is at least as good.
    pub fn at_least_fraction(&self) -> f64 {
        (self.wins + self.ties) as f64 / self.total().max(1) as f64
    }

    fn add(&mut self, a: f64, b: f64, tol: f64) {
        let slack = tol * a.abs().max(b.abs());
        if a > b + slack {
            self.wins += 1;
        } else if a >= b - slack {
            self.ties += 1;
        } else {
            self.losses += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub digest: String,
    pub seed: u64,
    pub instances: Vec<SweepInstance>,
    pub points: Vec<SweepPoint>,
    /// CNN against uniform over every (instance, scheme), on log utility.
    pub cnn_vs_uniform: Ordering,
    /// MAP-4 against traditional under the oracle at the fixed user count
    /// and SNR, on log utility.
    pub map_vs_traditional: Ordering,
    /// The same pairs compared on plain sum rate.
    pub cnn_vs_uniform_sum_rate: Ordering,
    pub map_vs_traditional_sum_rate: Ordering,
}

/// Scenario seed for a configuration; equal `(users, snr, k)` give the same
/// scenario in both sweeps and for every scheme.
fn scenario_seed(seed: u64, users: usize, snr_db: f64, k: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, users as u64), snr_db.to_bits()), k as u64)
}

/// User-count and SNR sweeps for every configured scheme under the CNN,
/// uniform and oracle allocators.
pub fn run_sumrate_sweeps(cfg: &ExperimentConfig, lab: &Lab, model: &NeuralModel) -> Result<SweepResult> {
    let sw = &cfg.sweeps;
    let mut grid: Vec<(SweepAxis, f64, usize, f64)> = Vec::new();
    grid.extend(sw.users.iter().map(|&u| (SweepAxis::Users, u as f64, u, sw.fixed_snr_db)));
    grid.extend(sw.snr_db.iter().map(|&s| (SweepAxis::SnrDb, s, sw.fixed_users, s)));
    let methods = [Method::Cnn(model), Method::Uniform, Method::Oracle];
    let topos = sw.schemes.iter().map(|&s| lab.topology(s)).collect::<Result<Vec<_>>>()?;

    let mut instances = Vec::new();
    for &(axis, x, users, snr_db) in &grid {
        for k in 0..sw.seeds {
            let seed = scenario_seed(cfg.seed, users, snr_db, k);
            let scenario = fixed_scenario(&lab.base.room, &cfg.dataset.traffic, users, snr_db, seed);
            for topo in &topos {
                let net = lab.network(topo, &scenario);
                for m in &methods {
                    let (assoc, alloc) = m.run(lab, &net)?;
                    let r = net.evaluate(&assoc, &alloc);
                    instances.push(SweepInstance {
                        axis,
                        x,
                        users,
                        snr_db,
                        seed_index: k,
                        scenario_seed: seed,
                        scheme: topo.partition.scheme,
                        method: m.kind(),
                        sum_rate_bps: r.sum_rate_bps,
                        utility: r.utility,
                    });
                }
            }
        }
    }

    let mut points = Vec::new();
    for &(axis, x, _, _) in &grid {
        for &scheme in &sw.schemes {
            for m in &methods {
                let v: Vec<f64> = instances
                    .iter()
                    .filter(|i| i.axis == axis && i.x == x && i.scheme == scheme && i.method == m.kind())
                    .map(|i| i.sum_rate_bps)
                    .collect();
                let (mean, std) = mean_std(&v);
                points.push(SweepPoint {
                    axis,
                    x,
                    scheme,
                    method: m.kind(),
                    seeds: v.len(),
                    mean_sum_rate_bps: mean,
                    std_sum_rate_bps: std,
                });
            }
        }
    }

    let find = |axis, x, k, scheme, method| {
        instances
            .iter()
            .find(|i: &&SweepInstance| i.axis == axis && i.x == x && i.seed_index == k && i.scheme == scheme && i.method == method)
    };
    let (mut cnn_vs_uniform, mut cnn_vs_uniform_sum_rate) = (Ordering::default(), Ordering::default());
    for i in instances.iter().filter(|i| i.method == MethodKind::Cnn) {
        let u = find(i.axis, i.x, i.seed_index, i.scheme, MethodKind::Uniform).expect("paired instance");
        cnn_vs_uniform.add(i.utility, u.utility, sw.tie_tolerance);
        cnn_vs_uniform_sum_rate.add(i.sum_rate_bps, u.sum_rate_bps, sw.tie_tolerance);
    }
    let (mut map_vs_traditional, mut map_vs_traditional_sum_rate) = (Ordering::default(), Ordering::default());
    if sw.users.contains(&sw.fixed_users) {
        let x = sw.fixed_users as f64;
        for k in 0..sw.seeds {
            let map = find(SweepAxis::Users, x, k, PartitionScheme::MAP4, MethodKind::Oracle);
            let trad = find(SweepAxis::Users, x, k, PartitionScheme::Traditional, MethodKind::Oracle);
            if let (Some(a), Some(b)) = (map, trad) {
                map_vs_traditional.add(a.utility, b.utility, sw.tie_tolerance);
                map_vs_traditional_sum_rate.add(a.sum_rate_bps, b.sum_rate_bps, sw.tie_tolerance);
            }
        }
    }
    Ok(SweepResult {
        digest: cfg.digest(),
        seed: cfg.seed,
        instances,
        points,
        cnn_vs_uniform,
        map_vs_traditional,
        cnn_vs_uniform_sum_rate,
        map_vs_traditional_sum_rate,
    })
}

impl SweepResult {
    /// Mean and standard deviation per (axis, x, partition, method).
    pub fn points_csv(&self, axis: SweepAxis) -> String {
        let rows: Vec<String> = self
            .points
            .iter()
            .filter(|p| p.axis == axis)
            .map(|p| {
                format!(
                    "{},{},{},{},{},{}",
                    p.x,
                    p.scheme.label(),
                    p.method.label(),
                    p.seeds,
                    p.mean_sum_rate_bps,
                    p.std_sum_rate_bps
                )
            })
            .collect();
        let header = format!("{},partition,method,seeds,mean_sum_rate_bps,std_sum_rate_bps", axis.label());
        csv_document(&self.digest, self.seed, &header, &rows)
    }

    pub fn instances_csv(&self) -> String {
        let rows: Vec<String> = self
            .instances
            .iter()
            .map(|i| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    i.axis.label(),
                    i.x,
                    i.users,
                    i.snr_db,
                    i.seed_index,
                    i.scenario_seed,
                    i.scheme.label(),
                    i.method.label(),
                    i.sum_rate_bps,
                    i.utility
                )
            })
            .collect();
        csv_document(
            &self.digest,
            self.seed,
            "sweep,x,users,snr_db,seed_index,scenario_seed,partition,method,sum_rate_bps,utility",
            &rows,
        )
    }

    pub fn ordering_csv(&self) -> String {
        let row = |name: &str, metric: &str, o: &Ordering| {
            format!("{name},{metric},{},{},{},{},{}", o.wins, o.ties, o.losses, o.total(), o.at_least_fraction())
        };
        let rows = vec![
            row("cnn_vs_uniform", "utility", &self.cnn_vs_uniform),
            row("map4_vs_traditional_oracle", "utility", &self.map_vs_traditional),
            row("cnn_vs_uniform", "sum_rate", &self.cnn_vs_uniform_sum_rate),
            row("map4_vs_traditional_oracle", "sum_rate", &self.map_vs_traditional_sum_rate),
        ];
        csv_document(&self.digest, self.seed, "comparison,metric,wins,ties,losses,total,at_least_fraction", &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_paper_cnn, CanvasLayout, Normalization};

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.sweeps.users = vec![6, 8];
        cfg.sweeps.snr_db = vec![10.0, 20.0];
        cfg.sweeps.seeds = 3;
        cfg
    }

    fn model() -> NeuralModel {
        let layout = CanvasLayout::default();
        let mut m = build_paper_cnn(layout.shape(), layout.u_max, 0.2, 1).unwrap();
        m.normalization = Some(Normalization::fixed_for_tests());
        m
    }

    #[test]
    fn grid_matches_config_exactly() {
        let cfg = small_cfg();
        let lab = cfg.lab().unwrap();
        let r = run_sumrate_sweeps(&cfg, &lab, &model()).unwrap();
        let xs: Vec<f64> = r.points.iter().filter(|p| p.axis == SweepAxis::Users).map(|p| p.x).collect();
        assert_eq!(xs, vec![6.0, 6.0, 6.0, 6.0, 6.0, 6.0, 8.0, 8.0, 8.0, 8.0, 8.0, 8.0]);
        assert!(r.points.iter().all(|p| p.seeds == 3));
        // 4 grid points x 3 seeds x 2 schemes x 3 methods
        assert_eq!(r.instances.len(), 72);
        assert_eq!(r.cnn_vs_uniform.total(), 24);
        assert_eq!(r.map_vs_traditional.total(), 3);
        assert_eq!(r.cnn_vs_uniform_sum_rate.total(), 24);
        assert_eq!(r.ordering_csv().lines().count(), 2 + 4);
        let csv = r.points_csv(SweepAxis::SnrDb);
        assert_eq!(csv.lines().nth(1).unwrap(), "snr_db,partition,method,seeds,mean_sum_rate_bps,std_sum_rate_bps");
        assert_eq!(csv.lines().count(), 2 + 12);
    }

    #[test]
    fn shared_configurations_share_scenarios() {
        let cfg = small_cfg();
        let lab = cfg.lab().unwrap();
        let r = run_sumrate_sweeps(&cfg, &lab, &model()).unwrap();
        // (users 8, 20 dB) appears in both sweeps
        let a: Vec<f64> = r.instances.iter().filter(|i| i.axis == SweepAxis::Users && i.x == 8.0).map(|i| i.sum_rate_bps).collect();
        let b: Vec<f64> = r.instances.iter().filter(|i| i.axis == SweepAxis::SnrDb && i.x == 20.0).map(|i| i.sum_rate_bps).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn ordering_counts_ties() {
        let mut o = Ordering::default();
        o.add(1.0, 1.0, 1e-6);
        o.add(2.0, 1.0, 1e-6);
        o.add(1.0, 2.0, 1e-6);
        o.add(1.0, 1.0 + 1e-9, 1e-6);
        assert_eq!((o.wins, o.ties, o.losses), (1, 2, 1));
        assert_eq!(o.at_least_fraction(), 0.75);
    }
}
