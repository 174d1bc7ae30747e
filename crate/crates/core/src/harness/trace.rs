use serde::{Deserialize, Serialize};

use super::{csv_document, fixed_scenario, ExperimentConfig, Method};
use crate::allocator::{Network, PowerAllocation};
use crate::lab::Lab;
use crate::mobility::MobilityState;
use crate::rng::{derive_seed, seeded};
use crate::topology::{PartitionScheme, Point};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub users: usize,
    /// User ids that never move.
    pub stationary: Vec<usize>,
    pub duration_s: f64,
    pub dt_s: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub snr_db: f64,
    pub scheme: PartitionScheme,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            users: 8,
            stationary: vec![0, 3],
            duration_s: 30.0,
            dt_s: 0.5,
            speed_min_mps: 0.5,
            speed_max_mps: 2.0,
            snr_db: 20.0,
            scheme: PartitionScheme::MAP4,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.stationary.iter().any(|&u| u >= self.users) {
            return Err(Error::Config("mobility needs users and valid stationary ids".into()));
        }
        if !(self.dt_s > 0.0 && self.duration_s >= 0.0) {
            return Err(Error::Config("mobility needs dt_s > 0 and duration_s >= 0".into()));
        }
        if !(0.0 <= self.speed_min_mps && self.speed_min_mps <= self.speed_max_mps) {
            return Err(Error::Config("speed range must be ordered and non-negative".into()));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        (self.duration_s / self.dt_s + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_s: f64,
    pub user: usize,
    pub position: Point,
    pub cell: Option<usize>,
    pub rate_bps: f64,
    /// The cell's allocation was carried over from the previous epoch.
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    pub digest: String,
    pub seed: u64,
    pub stationary: Vec<usize>,
    pub samples: Vec<TraceSample>,
}

struct Epoch {
    positions: Vec<Point>,
    cell_users: Vec<Vec<usize>>,
    power_w: Vec<f64>,
}

/// Random-waypoint trace with re-association and re-allocation every epoch.
/// A cell whose members and their positions are unchanged keeps its previous
/// powers. Noise is calibrated once at `t = 0`.
pub fn run_mobility_trace(cfg: &ExperimentConfig, lab: &Lab, method: Method<'_>) -> Result<MobilityTrace> {
    let mc = &cfg.mobility;
    let room = lab.base.room;
    let topo = lab.topology(mc.scheme)?;
    let mut rng = seeded(derive_seed(cfg.seed, 0x6d6f_6231));
    let mut state = MobilityState::random(&room, mc.users, &mc.stationary, (mc.speed_min_mps, mc.speed_max_mps), &mut rng);
    let mut scenario = fixed_scenario(&room, &cfg.dataset.traffic, mc.users, mc.snr_db, derive_seed(cfg.seed, 0x6d6f_6232));
    scenario.users = state.positions();
    let noise_scale = Network::new(&topo, &lab.phy, &scenario).noise_scale;

    let mut samples = Vec::new();
    let mut prev: Option<Epoch> = None;
    for k in 0..mc.epochs() {
        if k > 0 {
            state.step(mc.dt_s, &mut rng, &room);
        }
        let t_s = k as f64 * mc.dt_s;
        scenario.users = state.positions();
        let net = Network::with_noise_scale(&topo, &lab.phy, &scenario, noise_scale);
        let (assoc, fresh) = method.run(lab, &net)?;
        let unchanged = |c: usize| {
            prev.as_ref().is_some_and(|p| {
                p.cell_users[c] == assoc.cell_users[c]
                    && assoc.cell_users[c].iter().all(|&u| p.positions[u] == scenario.users[u])
            })
        };
        let held: Vec<bool> = (0..net.cells()).map(unchanged).collect();
        let alloc = net.allocate_with(&assoc, |c, users, problem| {
            let source = if held[c] { &prev.as_ref().expect("held implies a previous epoch").power_w } else { &fresh.power_w };
            PowerAllocation::from_powers(problem, users.iter().map(|&u| source[u]).collect(), 0, true)
        });
        let rates = net.evaluate(&assoc, &alloc);
        for u in 0..mc.users {
            let cell = assoc.assignment[u];
            samples.push(TraceSample {
                t_s,
                user: u,
                position: scenario.users[u],
                cell,
                rate_bps: rates.per_user_bps[u],
                held: cell.is_some_and(|c| held[c]),
            });
        }
        prev = Some(Epoch { positions: scenario.users.clone(), cell_users: assoc.cell_users.clone(), power_w: alloc.power_w });
    }
    Ok(MobilityTrace { digest: cfg.digest(), seed: cfg.seed, stationary: mc.stationary.clone(), samples })
}

impl MobilityTrace {
    pub fn to_csv(&self) -> String {
        let rows: Vec<String> = self
            .samples
            .iter()
            .map(|s| {
                let cell = s.cell.map_or(String::new(), |c| c.to_string());
                format!(
                    "{},{},{},{},{},{},{},{}",
                    s.t_s,
                    s.user,
                    s.position.x,
                    s.position.y,
                    u8::from(self.stationary.contains(&s.user)),
                    cell,
                    s.rate_bps,
                    u8::from(s.held)
                )
            })
            .collect();
        csv_document(&self.digest, self.seed, "t_s,user_id,x_m,y_m,stationary,cell,rate_bps,held", &rows)
    }

    pub fn user_rates(&self, user: usize) -> Vec<f64> {
        self.samples.iter().filter(|s| s.user == user).map(|s| s.rate_bps).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(users: usize, stationary: Vec<usize>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.mobility.users = users;
        cfg.mobility.stationary = stationary;
        cfg.mobility.duration_s = 10.0;
        cfg
    }

    #[test]
    fn all_stationary_rates_are_constant() {
        let c = cfg(5, (0..5).collect());
        let lab = c.lab().unwrap();
        let tr = run_mobility_trace(&c, &lab, Method::Oracle).unwrap();
        assert_eq!(tr.samples.len(), 5 * c.mobility.epochs());
        for u in 0..5 {
            let r = tr.user_rates(u);
            assert!(r.iter().all(|&x| x == r[0]), "user {u}: {r:?}");
        }
    }

    #[test]
    fn stationary_users_keep_rate_while_cell_unchanged() {
        let mut c = cfg(8, vec![0, 3]);
        c.mobility.scheme = PartitionScheme::Traditional;
        let lab = c.lab().unwrap();
        let tr = run_mobility_trace(&c, &lab, Method::Uniform).unwrap();
        let epochs = c.mobility.epochs();
        let mut checked = 0;
        for &u in &[0usize, 3] {
            let s: Vec<&TraceSample> = tr.samples.iter().filter(|x| x.user == u).collect();
            assert_eq!(s.len(), epochs);
            for k in 1..epochs {
                if s[k].held {
                    assert_eq!(s[k].rate_bps, s[k - 1].rate_bps, "user {u} at epoch {k}");
                    checked += 1;
                }
            }
        }
        // mobile users do move
        let m: Vec<&TraceSample> = tr.samples.iter().filter(|x| x.user == 1).collect();
        assert_ne!(m[0].position, m[epochs - 1].position);
        assert!(checked > 0, "no held epochs to check");
    }

    #[test]
    fn trace_is_reproducible_per_seed() {
        let c = cfg(6, vec![0]);
        let lab = c.lab().unwrap();
        let a = run_mobility_trace(&c, &lab, Method::Oracle).unwrap().to_csv();
        let b = run_mobility_trace(&c, &lab, Method::Oracle).unwrap().to_csv();
        assert_eq!(a, b);
        let mut c2 = c.clone();
        c2.seed += 1;
        assert_ne!(run_mobility_trace(&c2, &lab, Method::Oracle).unwrap().to_csv(), a);
    }
}
