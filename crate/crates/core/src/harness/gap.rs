use serde::{Deserialize, Serialize};

use super::{csv_document, median, percentile, ExperimentConfig, MethodKind};
use crate::allocator::{exact_joint_enumeration, EnumeratorParams, SystemRates};
use crate::dataset::held_out_scenarios;
use crate::lab::Lab;
use crate::neural::{cnn_allocate, NeuralModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    pub scenarios: usize,
    pub enumerator_cap: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { scenarios: 1000, enumerator_cap: 1_000_000 }
    }
}

/// `100 (oracle - method) / oracle`.
pub fn gap_pct(oracle: f64, method: f64) -> f64 {
    100.0 * (oracle - method) / oracle
}

/// Relative shortfall of the log objective.
pub fn utility_gap(oracle: f64, method: f64) -> f64 {
    (oracle - method) / oracle.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub index: usize,
    pub scenario_seed: u64,
    pub scheme: String,
    pub active_users: usize,
    pub snr_db: f64,
    pub branches: u64,
    pub method: MethodKind,
    pub sum_rate_bps: f64,
    pub oracle_sum_rate_bps: f64,
    pub gap_pct: f64,
    pub utility_gap_rel: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSkips {
    pub enumeration_cap: usize,
    pub no_association: usize,
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub method: MethodKind,
    pub count: usize,
    pub median_pct: f64,
    pub p95_pct: f64,
    pub max_pct: f64,
    pub mean_pct: f64,
    pub min_utility_gap_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub digest: String,
    pub seed: u64,
    pub records: Vec<GapRecord>,
    pub skips: GapSkips,
    pub summaries: Vec<GapSummary>,
}

const METHODS: [MethodKind; 3] = [MethodKind::Cnn, MethodKind::Oracle, MethodKind::Exact];

/// CNN and heuristic dual gradient against the exact enumerator on held-out
/// scenarios. Scenarios the labelling oracle would drop, or whose branch
/// count exceeds the cap, are skipped and tallied.
pub fn run_gap_study(cfg: &ExperimentConfig, lab: &Lab, model: &NeuralModel) -> Result<GapStudy> {
    let held = held_out_scenarios(&cfg.dataset, lab, cfg.gap.scenarios, cfg.seed);
    let mut records = Vec::new();
    let mut skips = GapSkips::default();
    for (index, h) in held.iter().enumerate() {
        let topo = lab.topology(h.scheme)?;
        let net = lab.network(&topo, &h.scenario);
        let (assoc, alloc, heuristic) = lab.oracle(&net);
        if assoc.assigned_count() == 0 {
            skips.no_association += 1;
            continue;
        }
        if alloc.admission_infeasible() {
            skips.infeasible += 1;
            continue;
        }
        let params = EnumeratorParams { d_th_m: lab.d_th(&topo), cap: cfg.gap.enumerator_cap, ..EnumeratorParams::new(0.0) };
        let exact = match exact_joint_enumeration(&net, &params) {
            Ok(s) => s,
            Err(Error::EnumerationCap { .. }) => {
                skips.enumeration_cap += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (cnn_alloc, _) = cnn_allocate(model, &net, &assoc)?;
        let cnn = net.evaluate(&assoc, &cnn_alloc);
        let oracle = &exact.rates;
        let rows: [(MethodKind, &SystemRates); 3] =
            [(MethodKind::Cnn, &cnn), (MethodKind::Oracle, &heuristic), (MethodKind::Exact, oracle)];
        for (method, r) in rows {
            records.push(GapRecord {
                index,
                scenario_seed: h.seed,
                scheme: h.scheme.label(),
                active_users: h.scenario.active_count(),
                snr_db: h.scenario.snr_db,
                branches: exact.branches,
                method,
                sum_rate_bps: r.sum_rate_bps,
                oracle_sum_rate_bps: oracle.sum_rate_bps,
                gap_pct: gap_pct(oracle.sum_rate_bps, r.sum_rate_bps),
                utility_gap_rel: utility_gap(oracle.utility, r.utility),
            });
        }
    }
    let summaries = METHODS.iter().map(|&m| summarize(m, &records)).collect();
    Ok(GapStudy { digest: cfg.digest(), seed: cfg.seed, records, skips, summaries })
}

fn summarize(method: MethodKind, records: &[GapRecord]) -> GapSummary {
    let rows: Vec<&GapRecord> = records.iter().filter(|r| r.method == method).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap_pct).collect();
    GapSummary {
        method,
        count: rows.len(),
        median_pct: median(&gaps),
        p95_pct: percentile(&gaps, 0.95),
        max_pct: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_pct: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
        min_utility_gap_rel: rows.iter().map(|r| r.utility_gap_rel).fold(f64::INFINITY, f64::min),
    }
}

impl GapStudy {
    pub fn summary(&self, method: MethodKind) -> &GapSummary {
        self.summaries.iter().find(|s| s.method == method).expect("every method is summarized")
    }

    pub fn records_csv(&self) -> String {
        let rows: Vec<String> = self
            .records
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.index,
                    r.scenario_seed,
                    r.scheme,
                    r.active_users,
                    r.snr_db,
                    r.branches,
                    r.method.label(),
                    r.sum_rate_bps,
                    r.oracle_sum_rate_bps,
                    r.gap_pct,
                    r.utility_gap_rel
                )
            })
            .collect();
        csv_document(
            &self.digest,
            self.seed,
            "index,scenario_seed,scheme,active_users,snr_db,branches,method,sum_rate_bps,oracle_sum_rate_bps,gap_pct,utility_gap_rel",
            &rows,
        )
    }

    pub fn summary_csv(&self) -> String {
        let s = &self.skips;
        let rows: Vec<String> = self
            .summaries
            .iter()
            .map(|g| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    g.method.label(),
                    g.count,
                    s.enumeration_cap,
                    s.no_association,
                    s.infeasible,
                    g.median_pct,
                    g.p95_pct,
                    g.max_pct,
                    g.mean_pct,
                    g.min_utility_gap_rel
                )
            })
            .collect();
        csv_document(
            &self.digest,
            self.seed,
            "method,count,skipped_cap,skipped_no_association,skipped_infeasible,median_pct,p95_pct,max_pct,mean_pct,min_utility_gap_rel",
            &rows,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_paper_cnn, CanvasLayout, Normalization};

    fn untrained_model() -> NeuralModel {
        let layout = CanvasLayout::default();
        let mut m = build_paper_cnn(layout.shape(), layout.u_max, 0.2, 1).unwrap();
        m.normalization = Some(Normalization::fixed_for_tests());
        m
    }

    #[test]
    fn self_comparison_is_zero() {
        assert_eq!(gap_pct(3.5e9, 3.5e9), 0.0);
        assert_eq!(utility_gap(120.0, 120.0), 0.0);
        assert!((gap_pct(100.0, 98.1) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn study_schema_and_dominance() {
        let mut cfg = ExperimentConfig::default();
        cfg.gap.scenarios = 25;
        let lab = cfg.lab().unwrap();
        let study = run_gap_study(&cfg, &lab, &untrained_model()).unwrap();
        let s = study.skips;
        let done = study.records.len() / 3;
        assert_eq!(done + s.enumeration_cap + s.no_association + s.infeasible, 25);
        for r in &study.records {
            // the enumerator dominates in its own objective
            assert!(r.utility_gap_rel >= -1e-6, "{r:?}");
            if r.method == MethodKind::Exact {
                assert_eq!(r.gap_pct, 0.0);
                assert_eq!(r.utility_gap_rel, 0.0);
            }
        }
        let ex = study.summary(MethodKind::Exact);
        assert_eq!((ex.median_pct, ex.p95_pct, ex.max_pct), (0.0, 0.0, 0.0));
        let summary = study.summary_csv();
        let mut lines = summary.lines();
        assert!(lines.next().unwrap().starts_with("# config_digest="));
        assert!(lines.next().unwrap().contains("median_pct,p95_pct,max_pct"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn cap_refusals_are_tallied() {
        let mut cfg = ExperimentConfig::default();
        cfg.gap.scenarios = 10;
        cfg.gap.enumerator_cap = 1;
        let lab = cfg.lab().unwrap();
        let study = run_gap_study(&cfg, &lab, &untrained_model()).unwrap();
        assert!(study.skips.enumeration_cap > 0);
        assert!(study.records.iter().all(|r| r.branches <= 1));
    }
}
