//! Labelled training data: sampled scenarios, oracle powers, persistence.
//!
//! File: container magic `OWCDSET1`; the JSON manifest carries the schema,
//! split, normalization constants, drop tally and per-sample digests; each
//! record is `u_max*9` normalized slot features, `u_max` normalized labels,
//! `u_max` mask entries, `u_max` label powers in watts, then oracle utility,
//! oracle sum rate and converged flag. Sample seeds live in the manifest.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::Scenario;
use crate::container;
use crate::lab::Lab;
use crate::mobility::TrafficModel;
use crate::neural::{
    encode_label, normalized_slots, raw_features, tile_canvas, CanvasLayout, Normalization, RawFeatures, SampleSet,
    FEATURE_CHANNELS,
};
use crate::rng::{derive_seed, seeded};
use crate::topology::{PartitionScheme, Point};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"OWCDSET1";
pub const SCHEMA_VERSION: u32 = 2;
const META_FIELDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub samples: usize,
    pub users_min: usize,
    pub users_max: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Probability a sample uses the MAP-4 partition (else traditional).
    pub map_fraction: f64,
    pub train_fraction: f64,
    pub traffic: TrafficModel,
    pub layout: CanvasLayout,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            samples: 10_000,
            users_min: 6,
            users_max: 12,
            snr_db_min: 10.0,
            snr_db_max: 30.0,
            map_fraction: 0.5,
            train_fraction: 0.9,
            traffic: TrafficModel::default(),
            layout: CanvasLayout::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.traffic.validate()?;
        self.layout.validate()?;
        if self.users_min == 0 || self.users_min > self.users_max || self.users_max > self.layout.u_max {
            return Err(Error::Config(format!(
                "user range {}..={} must be non-empty and within u_max {}",
                self.users_min, self.users_max, self.layout.u_max
            )));
        }
        if !(self.snr_db_min <= self.snr_db_max) {
            return Err(Error::Config("snr_db_min > snr_db_max".into()));
        }
        if !(0.0..=1.0).contains(&self.map_fraction) || !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Config("map_fraction in [0, 1] and train_fraction in (0, 1) required".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

pub(crate) fn digest_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledScenario {
    pub seed: u64,
    pub scheme: PartitionScheme,
    pub scenario: Scenario,
}

impl SampledScenario {
    /// Digest at micrometre / nanowatt / millidecibel resolution.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scheme.label().as_bytes());
        h.update(((self.scenario.snr_db * 1e3).round() as i64).to_le_bytes());
        for u in 0..self.scenario.len() {
            let p = self.scenario.users[u];
            for v in [p.x * 1e6, p.y * 1e6, self.scenario.p_min_w[u] * 1e9, self.scenario.p_max_w[u] * 1e9] {
                h.update((v.round() as i64).to_le_bytes());
            }
            h.update([self.scenario.active[u] as u8]);
        }
        hex(&h.finalize()[..8])
    }
}

/// Uniform positions, user count, SNR and partition; demands from the
/// traffic model's bounds; each user active with the model's long-run
/// activity, at least one active.
pub fn sample_scenario(config: &DatasetConfig, lab: &Lab, seed: u64) -> SampledScenario {
    let mut rng = seeded(seed);
    let room = &lab.base.room;
    let n = rng.random_range(config.users_min..=config.users_max);
    let snr_db = config.snr_db_min + (config.snr_db_max - config.snr_db_min) * rng.random::<f64>();
    let scheme = if rng.random::<f64>() < config.map_fraction { PartitionScheme::MAP4 } else { PartitionScheme::Traditional };
    let activity = config.traffic.activity();
    let mut sc = Scenario { users: vec![], active: vec![], p_min_w: vec![], p_max_w: vec![], snr_db };
    for _ in 0..n {
        sc.users.push(Point::new(rng.random::<f64>() * room.width_m, rng.random::<f64>() * room.depth_m));
        let (lo, hi) = config.traffic.draw_demand(&mut rng);
        sc.p_min_w.push(lo);
        sc.p_max_w.push(hi);
        sc.active.push(rng.random::<f64>() < activity);
    }
    if !sc.active.iter().any(|&a| a) {
        let u = rng.random_range(0..n);
        sc.active[u] = true;
    }
    SampledScenario { seed, scheme, scenario: sc }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    NoAssociation,
    NotConverged,
    Infeasible,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropTally {
    pub no_association: usize,
    pub not_converged: usize,
    pub infeasible: usize,
}

impl DropTally {
    pub fn total(&self) -> usize {
        self.no_association + self.not_converged + self.infeasible
    }

    fn add(&mut self, r: DropReason) {
        match r {
            DropReason::NoAssociation => self.no_association += 1,
            DropReason::NotConverged => self.not_converged += 1,
            DropReason::Infeasible => self.infeasible += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub digest: String,
    /// Oracle log utility.
    pub objective: f64,
    pub sum_rate_bps: f64,
    pub converged: bool,
}

/// One labelled scenario before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledScenario {
    pub raw: RawFeatures,
    /// Oracle power of every scenario user, watts.
    pub power_w: Vec<f64>,
    pub meta: SampleMeta,
}

/// Association, per-cell dual gradient, and bookkeeping; scenarios whose
/// oracle fails are dropped with a reason.
pub fn label_scenario(sampled: &SampledScenario, lab: &Lab, layout: &CanvasLayout) -> Result<std::result::Result<LabelledScenario, DropReason>> {
    let topo = lab.topology(sampled.scheme)?;
    let net = lab.network(&topo, &sampled.scenario);
    let (assoc, alloc, rates) = lab.oracle(&net);
    if assoc.assigned_count() == 0 {
        return Ok(Err(DropReason::NoAssociation));
    }
    if alloc.admission_infeasible() {
        return Ok(Err(DropReason::Infeasible));
    }
    let converged = alloc.cells.iter().flatten().all(|a| a.converged);
    if !converged {
        return Ok(Err(DropReason::NotConverged));
    }
    let raw = raw_features(&net, &assoc, layout)?;
    let meta = SampleMeta {
        seed: sampled.seed,
        digest: sampled.digest(),
        objective: rates.utility,
        sum_rate_bps: rates.sum_rate_bps,
        converged,
    };
    Ok(Ok(LabelledScenario { raw, power_w: alloc.power_w, meta }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `u_max x 9` normalized slot features.
    pub features: Vec<f64>,
    /// Normalized oracle powers per slot.
    pub label: Vec<f64>,
    pub mask: Vec<f64>,
    pub label_w: Vec<f64>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub config: DatasetConfig,
    pub config_digest: String,
    pub seed: u64,
    pub samples: usize,
    pub attempts: usize,
    pub dropped: DropTally,
    pub digest_collisions: usize,
    pub normalization: Normalization,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub record_len: usize,
    pub record_fields: Vec<String>,
    pub seeds: Vec<u64>,
    pub digests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<TrainingSample>,
}

fn record_len(layout: &CanvasLayout) -> usize {
    layout.u_max * (FEATURE_CHANNELS + 3) + META_FIELDS
}

/// Label scenarios until `config.samples` are kept, split 90/10 by a seeded
/// shuffle, and normalize with constants from the training split only.
pub fn generate_dataset(config: &DatasetConfig, lab: &Lab) -> Result<Dataset> {
    config.validate()?;
    if config.samples < 10 {
        return Err(Error::Config(format!("dataset needs at least 10 samples, got {}", config.samples)));
    }
    let mut kept = Vec::with_capacity(config.samples);
    let mut dropped = DropTally::default();
    let mut attempts = 0usize;
    while kept.len() < config.samples {
        if attempts >= 10 * config.samples {
            return Err(Error::Config(format!("only {} of {} samples kept after {attempts} draws", kept.len(), config.samples)));
        }
        let sampled = sample_scenario(config, lab, derive_seed(config.seed, attempts as u64));
        attempts += 1;
        match label_scenario(&sampled, lab, &config.layout)? {
            Ok(s) => kept.push(s),
            Err(reason) => dropped.add(reason),
        }
    }

    let n = kept.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(config.seed, u64::MAX)));
    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut validation: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();

    let norm = fit_normalization(&kept, &train, config.layout);
    let samples = kept.iter().map(|s| normalize_sample(s, &norm)).collect::<Vec<_>>();
    let digests: Vec<String> = kept.iter().map(|s| s.meta.digest.clone()).collect();
    let mut sorted = digests.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        config_digest: config.digest(),
        seed: config.seed,
        samples: n,
        attempts,
        dropped,
        digest_collisions: n - sorted.len(),
        normalization: norm,
        train,
        validation,
        record_len: record_len(&config.layout),
        record_fields: vec![
            format!("features[{}x{}]", config.layout.u_max, FEATURE_CHANNELS),
            format!("label[{}]", config.layout.u_max),
            format!("mask[{}]", config.layout.u_max),
            format!("label_w[{}]", config.layout.u_max),
            "objective".into(),
            "sum_rate_bps".into(),
            "converged".into(),
        ],
        seeds: kept.iter().map(|s| s.meta.seed).collect(),
        digests,
    };
    Ok(Dataset { manifest, samples })
}

pub(crate) fn fit_normalization(kept: &[LabelledScenario], train: &[usize], layout: CanvasLayout) -> Normalization {
    let labels = train.iter().flat_map(|&i| {
        let s = &kept[i];
        s.raw
            .users
            .iter()
            .enumerate()
            .filter(|(slot, _)| s.raw.present(*slot))
            .map(|(slot, &u)| s.power_w[u] - s.raw.reference_w[slot])
    });
    Normalization::fit(layout, train.iter().map(|&i| &kept[i].raw), labels)
}

fn normalize_sample(s: &LabelledScenario, norm: &Normalization) -> TrainingSample {
    let (label, mask) = encode_label(&s.raw, &s.power_w, norm);
    let mut label_w = vec![0.0; norm.layout.u_max];
    for (slot, &u) in s.raw.users.iter().enumerate() {
        if s.raw.present(slot) {
            label_w[slot] = s.power_w[u];
        }
    }
    TrainingSample { features: normalized_slots(&s.raw, norm), label, mask, label_w, meta: s.meta.clone() }
}

impl Dataset {
    pub fn layout(&self) -> CanvasLayout {
        self.manifest.normalization.layout
    }

    fn sample_set(&self, idx: &[usize]) -> SampleSet {
        let layout = self.layout();
        let mut set = SampleSet::new(layout.shape().len(), layout.u_max);
        for &i in idx {
            let s = &self.samples[i];
            set.push(&tile_canvas(&s.features, &layout).data, &s.label, &s.mask);
        }
        set
    }

    /// Canvas tensors of the training and validation splits.
    pub fn split_sets(&self) -> (SampleSet, SampleSet) {
        (self.sample_set(&self.manifest.train), self.sample_set(&self.manifest.validation))
    }

    /// Keep the first `n` samples of each split in proportion, for the
    /// dataset-size comparison. Normalization is left unchanged.
    pub fn subset(&self, n: usize) -> Dataset {
        let total = self.samples.len().max(1);
        let n_train = (self.manifest.train.len() * n).div_ceil(total).min(self.manifest.train.len());
        let n_val = n.saturating_sub(n_train).min(self.manifest.validation.len());
        let mut manifest = self.manifest.clone();
        manifest.train.truncate(n_train);
        manifest.validation.truncate(n_val);
        Dataset { manifest, samples: self.samples.clone() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let mut payload = Vec::with_capacity(self.samples.len() * self.manifest.record_len);
        for s in &self.samples {
            payload.extend_from_slice(&s.features);
            payload.extend_from_slice(&s.label);
            payload.extend_from_slice(&s.mask);
            payload.extend_from_slice(&s.label_w);
            payload.extend_from_slice(&[
                s.meta.objective,
                s.meta.sum_rate_bps,
                if s.meta.converged { 1.0 } else { 0.0 },
            ]);
        }
        Ok(container::encode(MAGIC, SCHEMA_VERSION, &json, &payload))
    }
}

/// Generate and write atomically; nothing is left behind on failure.
pub fn build_dataset(config: &DatasetConfig, lab: &Lab, path: &Path) -> Result<Dataset> {
    let ds = generate_dataset(config, lab)?;
    container::write_atomic(path, &ds.to_bytes()?)?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = container::read_bytes(path)?;
    let d = container::decode(path, &bytes, MAGIC, SCHEMA_VERSION)?;
    let schema = |detail: String| Error::Schema { path: path.to_path_buf(), detail };
    let manifest: DatasetManifest = serde_json::from_str(&d.manifest).map_err(|e| schema(format!("manifest: {e}")))?;
    let layout = manifest.normalization.layout;
    let len = record_len(&layout);
    if manifest.record_len != len
        || d.payload.len() != len * manifest.samples
        || manifest.digests.len() != manifest.samples
        || manifest.seeds.len() != manifest.samples
    {
        return Err(schema("record count or width does not match the manifest".into()));
    }
    let u = layout.u_max;
    let f = u * FEATURE_CHANNELS;
    let samples = d
        .payload
        .chunks_exact(len)
        .zip(manifest.digests.iter().zip(&manifest.seeds))
        .map(|(r, (digest, &seed))| TrainingSample {
            features: r[..f].to_vec(),
            label: r[f..f + u].to_vec(),
            mask: r[f + u..f + 2 * u].to_vec(),
            label_w: r[f + 2 * u..f + 3 * u].to_vec(),
            meta: SampleMeta {
                seed,
                digest: digest.clone(),
                objective: r[f + 3 * u],
                sum_rate_bps: r[f + 3 * u + 1],
                converged: r[f + 3 * u + 2] != 0.0,
            },
        })
        .collect();
    Ok(Dataset { manifest, samples })
}

/// Held-out scenarios drawn from seeds disjoint from `generate_dataset`'s.
pub fn held_out_scenarios(config: &DatasetConfig, lab: &Lab, count: usize, stream: u64) -> Vec<SampledScenario> {
    let base = derive_seed(config.seed ^ 0x5eed_0f_7e57, stream);
    (0..count).map(|i| sample_scenario(config, lab, derive_seed(base, i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::is_feasible;

    fn small(n: usize, seed: u64) -> DatasetConfig {
        DatasetConfig { samples: n, seed, ..DatasetConfig::default() }
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let cfg = DatasetConfig::default();
        let lab = Lab::default();
        assert_eq!(sample_scenario(&cfg, &lab, 5).digest(), sample_scenario(&cfg, &lab, 5).digest());
        assert_ne!(sample_scenario(&cfg, &lab, 5).digest(), sample_scenario(&cfg, &lab, 6).digest());
        for s in 0..10_000 {
            let sc = sample_scenario(&cfg, &lab, s);
            let n = sc.scenario.len();
            assert!((6..=12).contains(&n));
            assert!((10.0..=30.0).contains(&sc.scenario.snr_db));
            assert!(sc.scenario.users.iter().all(|p| lab.base.room.contains(*p)));
            assert!(sc.scenario.active.iter().any(|&a| a));
            assert!((0..n).all(|u| 0.01 <= sc.scenario.p_min_w[u] && sc.scenario.p_min_w[u] <= sc.scenario.p_max_w[u]
                && sc.scenario.p_max_w[u] <= 0.05));
        }
    }

    #[test]
    fn single_user_label() {
        let lab = Lab::default();
        let sc = SampledScenario {
            seed: 0,
            scheme: PartitionScheme::Traditional,
            scenario: Scenario {
                users: vec![Point::new(1.0, 1.0)],
                active: vec![true],
                p_min_w: vec![0.02],
                p_max_w: vec![0.045],
                snr_db: 20.0,
            },
        };
        let l = label_scenario(&sc, &lab, &CanvasLayout::default()).unwrap().unwrap();
        // traditional cell budget is 50 mW
        assert!((l.power_w[0] - 0.045).abs() < 1e-12);
        // the equal share clipped to p_max is already optimal: zero offset
        assert!((l.raw.reference_w[0] - 0.045).abs() < 1e-12);
        let norm = Normalization::fit(CanvasLayout::default(), [&l.raw], [-0.01, 0.01]);
        let s = normalize_sample(&l, &norm);
        assert!((s.label[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.label_w[0], l.power_w[0]);
        assert_eq!(&s.mask[..2], &[1.0, 0.0]);
    }

    #[test]
    fn builds_splits_and_round_trips() {
        let lab = Lab::default();
        let cfg = small(60, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = build_dataset(&cfg, &lab, &path).unwrap();
        let m = &ds.manifest;
        assert_eq!(m.samples, 60);
        assert_eq!((m.train.len(), m.validation.len()), (54, 6));
        assert_eq!(m.attempts, m.samples + m.dropped.total());
        let mut all: Vec<usize> = m.train.iter().chain(&m.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());

        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let again = generate_dataset(&cfg, &lab).unwrap();
        assert_eq!(again.to_bytes().unwrap(), std::fs::read(&path).unwrap());

        for s in &ds.samples {
            assert!(s.features.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn normalization_ignores_validation() {
        let lab = Lab::default();
        let cfg = small(40, 9);
        let ds = generate_dataset(&cfg, &lab).unwrap();
        let kept: Vec<LabelledScenario> = (0..ds.manifest.attempts)
            .filter_map(|i| label_scenario(&sample_scenario(&cfg, &lab, derive_seed(cfg.seed, i as u64)), &lab, &cfg.layout).unwrap().ok())
            .collect();
        assert_eq!(kept.len(), 40);
        let refit = fit_normalization(&kept, &ds.manifest.train, cfg.layout);
        assert_eq!(refit, ds.manifest.normalization);
        // an extreme validation sample must not move the constants
        let mut planted = kept.clone();
        let v = ds.manifest.validation[0];
        let slot = (0..planted[v].raw.rows.len()).find(|&k| planted[v].raw.present(k)).unwrap();
        planted[v].raw.rows[slot][7] = 1e3;
        assert_eq!(fit_normalization(&planted, &ds.manifest.train, cfg.layout), ds.manifest.normalization);
        let all: Vec<usize> = (0..40).collect();
        assert_eq!(fit_normalization(&planted, &all, cfg.layout).feature_hi[7], 1e3);
    }

    #[test]
    fn stored_labels_are_feasible() {
        let lab = Lab::default();
        let cfg = small(30, 4);
        for i in 0..30u64 {
            let sc = sample_scenario(&cfg, &lab, derive_seed(cfg.seed, i));
            let topo = lab.topology(sc.scheme).unwrap();
            let net = lab.network(&topo, &sc.scenario);
            let Ok(l) = label_scenario(&sc, &lab, &cfg.layout).unwrap() else { continue };
            let assoc = net.associate(&lab.association(&topo));
            for (c, users) in assoc.cell_users.iter().enumerate() {
                if users.is_empty() {
                    continue;
                }
                let (p, _) = net.cell_problem(c, users, &net.budgets());
                let powers: Vec<f64> = users.iter().map(|&u| l.power_w[u]).collect();
                assert!(is_feasible(&powers, &p, 1e-12));
            }
        }
    }

    #[test]
    fn rejects_corrupt_file() {
        let lab = Lab::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        build_dataset(&small(10, 1), &lab, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Schema { .. })));
        assert!(matches!(load_dataset(&dir.path().join("none.bin")), Err(Error::MissingFile(_))));
        assert!(generate_dataset(&small(5, 1), &lab).is_err());
    }
}
