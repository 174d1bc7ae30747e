//! Scenario features on a per-user tiled canvas.
//!
//! Each active user (in ascending id order) owns one `tile x tile` block of
//! the canvas; every pixel of the block carries that user's features and its
//! serving cell's aggregates. Absent slots are all zero.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{NeuralModel, Shape, Tensor};
use crate::allocator::{project_allocation, Network, SystemAllocation};
use crate::association::AssociationMap;
use crate::{Error, Result};

pub const FEATURE_CHANNELS: usize = 13;

pub const FEATURE_NAMES: [&str; FEATURE_CHANNELS] = [
    "present",
    "p_min_w",
    "p_max_w",
    "cell_budget_w",
    "cell_users",
    "cell_p_min_w",
    "cell_p_max_w",
    "centroid_distance_m",
    "ln_sinr_coeff",
    "reference_w",
    "cell_slack_w",
    "ln_coeff_vs_cell_mean",
    "cell_ln_coeff_spread",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanvasLayout {
    pub u_max: usize,
    pub tile: usize,
    pub tiles_per_row: usize,
}

impl Default for CanvasLayout {
    fn default() -> Self {
        Self { u_max: 16, tile: 5, tiles_per_row: 4 }
    }
}

impl CanvasLayout {
    pub fn side(&self) -> usize {
        self.tile * self.tiles_per_row
    }

    pub fn shape(&self) -> Shape {
        Shape::Grid { h: self.side(), w: self.side(), c: FEATURE_CHANNELS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.u_max == 0 || self.u_max > self.tiles_per_row * self.tiles_per_row {
            return Err(Error::Config(format!("canvas of {0}x{0} tiles cannot hold {1} users", self.tiles_per_row, self.u_max)));
        }
        Ok(())
    }
}

/// Unnormalized features, one row per active user slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    /// User id of each slot.
    pub users: Vec<usize>,
    pub rows: Vec<[f64; FEATURE_CHANNELS]>,
    /// Equal-share powers projected onto each cell's committed budget; labels
    /// are offsets from these. Zero for absent slots.
    pub reference_w: Vec<f64>,
}

impl RawFeatures {
    pub fn present(&self, slot: usize) -> bool {
        self.rows[slot][0] > 0.0
    }
}

/// Features of every active user under `assoc`. Unassigned users keep an
/// all-zero row.
pub fn raw_features(net: &Network, assoc: &AssociationMap, layout: &CanvasLayout) -> Result<RawFeatures> {
    let users: Vec<usize> = (0..net.scenario.len()).filter(|&u| net.scenario.active[u]).collect();
    if users.len() > layout.u_max {
        return Err(Error::TooManyUsers { active: users.len(), max: layout.u_max });
    }
    let mut by_user = vec![[0.0; FEATURE_CHANNELS]; net.scenario.len()];
    let mut reference = vec![0.0; net.scenario.len()];
    let budgets = net.budgets();
    for (c, members) in assoc.cell_users.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let (problem, _) = net.cell_problem(c, members, &budgets);
        let sum_min: f64 = problem.p_min_w.iter().sum();
        let sum_max: f64 = problem.p_max_w.iter().sum();
        let centroid = net.topology.cells()[c].centroid;
        let share = project_allocation(&problem, &vec![problem.budget_w / members.len() as f64; members.len()]);
        let slack = problem.committed_w() - sum_min;
        let ln_c: Vec<f64> = problem.coeff.iter().map(|c| c.max(1e-300).ln()).collect();
        let mean_ln_c = ln_c.iter().sum::<f64>() / ln_c.len() as f64;
        let spread = ln_c.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - ln_c.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        for (i, &u) in members.iter().enumerate() {
            reference[u] = share.power_w[i];
            by_user[u] = [
                1.0,
                problem.p_min_w[i],
                problem.p_max_w[i],
                problem.budget_w,
                members.len() as f64,
                sum_min,
                sum_max,
                net.scenario.users[u].distance(centroid),
                ln_c[i],
                share.power_w[i],
                slack.max(0.0),
                ln_c[i] - mean_ln_c,
                spread,
            ];
        }
    }
    Ok(RawFeatures {
        rows: users.iter().map(|&u| by_user[u]).collect(),
        reference_w: users.iter().map(|&u| reference[u]).collect(),
        users,
    })
}

/// Constants fixed when the training split is built. Features are min-max
/// scaled; labels are affine with mean -/+ one standard deviation at 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub layout: CanvasLayout,
    pub feature_lo: Vec<f64>,
    pub feature_hi: Vec<f64>,
    /// Label offsets from the reference power mapped to 0 and 1, watts.
    pub label_lo_w: f64,
    pub label_hi_w: f64,
}

fn span(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

impl Normalization {
    /// Feature ranges over the present slots of `features`, label moments
    /// over `labels_w` (offsets of present users from their reference
    /// power). Presence and user count use fixed ranges.
    pub fn fit<'a>(
        layout: CanvasLayout,
        features: impl IntoIterator<Item = &'a RawFeatures>,
        labels_w: impl IntoIterator<Item = f64>,
    ) -> Self {
        let mut lo = vec![f64::INFINITY; FEATURE_CHANNELS];
        let mut hi = vec![f64::NEG_INFINITY; FEATURE_CHANNELS];
        for f in features {
            for row in f.rows.iter().filter(|r| r[0] > 0.0) {
                for ch in 0..FEATURE_CHANNELS {
                    lo[ch] = lo[ch].min(row[ch]);
                    hi[ch] = hi[ch].max(row[ch]);
                }
            }
        }
        for ch in 0..FEATURE_CHANNELS {
            if !lo[ch].is_finite() {
                (lo[ch], hi[ch]) = (0.0, 1.0);
            }
        }
        (lo[0], hi[0]) = (0.0, 1.0);
        (lo[4], hi[4]) = (0.0, layout.u_max as f64);
        let labels: Vec<f64> = labels_w.into_iter().collect();
        let (mut llo, mut lhi) = (0.0, 1.0);
        if !labels.is_empty() {
            let n = labels.len() as f64;
            let mean = labels.iter().sum::<f64>() / n;
            let sd = (labels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                (llo, lhi) = (mean - sd, mean + sd);
            } else {
                (llo, lhi) = (mean - 0.5, mean + 0.5);
            }
        }
        Self { layout, feature_lo: lo, feature_hi: hi, label_lo_w: llo, label_hi_w: lhi }
    }

    pub fn feature(&self, ch: usize, v: f64) -> f64 {
        ((v - self.feature_lo[ch]) / span(self.feature_lo[ch], self.feature_hi[ch])).clamp(0.0, 1.0)
    }

    pub fn label(&self, p_w: f64) -> f64 {
        (p_w - self.label_lo_w) / span(self.label_lo_w, self.label_hi_w)
    }

    pub fn power_w(&self, normalized: f64) -> f64 {
        self.label_lo_w + normalized * span(self.label_lo_w, self.label_hi_w)
    }

    #[cfg(test)]
    pub(crate) fn fixed_for_tests() -> Self {
        Self {
            layout: CanvasLayout::default(),
            feature_lo: vec![0.0, 0.01, 0.01, 0.05, 0.0, 0.01, 0.01, 0.0, 10.0, 0.01, 0.0, -5.0, 0.0],
            feature_hi: vec![1.0, 0.05, 0.05, 0.2, 16.0, 0.4, 0.4, 2.0, 40.0, 0.05, 0.2, 5.0, 10.0],
            label_lo_w: -0.02,
            label_hi_w: 0.02,
        }
    }
}

/// Normalized slot rows, `u_max x FEATURE_CHANNELS`, zero for absent slots.
pub fn normalized_slots(raw: &RawFeatures, norm: &Normalization) -> Vec<f64> {
    let mut slots = vec![0.0; norm.layout.u_max * FEATURE_CHANNELS];
    for (slot, row) in raw.rows.iter().enumerate() {
        if row[0] > 0.0 {
            for ch in 0..FEATURE_CHANNELS {
                slots[slot * FEATURE_CHANNELS + ch] = norm.feature(ch, row[ch]);
            }
        }
    }
    slots
}

/// Tile normalized slot rows onto the canvas.
pub fn tile_canvas(slots: &[f64], layout: &CanvasLayout) -> Tensor {
    let side = layout.side();
    let mut data = vec![0.0; side * side * FEATURE_CHANNELS];
    for (slot, px) in slots.chunks_exact(FEATURE_CHANNELS).enumerate().take(layout.u_max) {
        let (ty, tx) = (slot / layout.tiles_per_row, slot % layout.tiles_per_row);
        for i in 0..layout.tile {
            for j in 0..layout.tile {
                let at = ((ty * layout.tile + i) * side + tx * layout.tile + j) * FEATURE_CHANNELS;
                data[at..at + FEATURE_CHANNELS].copy_from_slice(px);
            }
        }
    }
    Tensor { shape: layout.shape(), data }
}

/// Canvas tensor with every feature in `[0, 1]`.
pub fn encode_input(raw: &RawFeatures, norm: &Normalization) -> Tensor {
    tile_canvas(&normalized_slots(raw, norm), &norm.layout)
}

/// Normalized label vector and loss mask for slot-ordered powers.
pub fn encode_label(raw: &RawFeatures, power_w: &[f64], norm: &Normalization) -> (Vec<f64>, Vec<f64>) {
    let mut target = vec![0.0; norm.layout.u_max];
    let mut mask = vec![0.0; norm.layout.u_max];
    for (slot, &u) in raw.users.iter().enumerate() {
        if raw.present(slot) {
            target[slot] = norm.label(power_w[u] - raw.reference_w[slot]);
            mask[slot] = 1.0;
        }
    }
    (target, mask)
}

/// Denormalize, add the equal-share reference, zero absent users, then
/// project each cell onto its bounds and budget.
pub fn decode_output(
    out: &[f64],
    raw: &RawFeatures,
    net: &Network,
    assoc: &AssociationMap,
    norm: &Normalization,
) -> SystemAllocation {
    let mut power = vec![0.0; net.scenario.len()];
    for (slot, &u) in raw.users.iter().enumerate() {
        if raw.present(slot) {
            power[u] = raw.reference_w[slot] + norm.power_w(out[slot]);
        }
    }
    net.allocate_with(assoc, |_, users, problem| {
        let y: Vec<f64> = users.iter().map(|&u| power[u]).collect();
        project_allocation(problem, &y)
    })
}

/// Encode, infer and decode; also returns the inference time alone.
pub fn cnn_allocate(model: &NeuralModel, net: &Network, assoc: &AssociationMap) -> Result<(SystemAllocation, Duration)> {
    let norm = model.normalization.as_ref().ok_or_else(|| Error::Model("model carries no normalization constants".into()))?;
    if model.output_len() != norm.layout.u_max {
        return Err(Error::Model(format!("model emits {} powers, layout expects {}", model.output_len(), norm.layout.u_max)));
    }
    let raw = raw_features(net, assoc, &norm.layout)?;
    let (out, dt) = model.infer(&encode_input(&raw, norm))?;
    Ok((decode_output(&out, &raw, net, assoc, norm), dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::{is_feasible, PhyModel, Scenario, SolverParams};
    use crate::association::AssociationParams;
    use crate::rng::seeded;
    use crate::topology::{PartitionScheme, Point, Topology};
    use rand::Rng as _;

    fn network(n: usize, seed: u64, scheme: PartitionScheme) -> Network {
        let mut rng = seeded(seed);
        let sc = Scenario {
            users: (0..n).map(|_| Point::new(rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0)).collect(),
            active: (0..n).map(|u| u != 1).collect(),
            p_min_w: vec![0.02; n],
            p_max_w: vec![0.045; n],
            snr_db: 20.0,
        };
        Network::new(&Topology::reference(scheme), &PhyModel::default(), &sc)
    }

    fn assoc(net: &Network) -> AssociationMap {
        net.associate(&AssociationParams { d_th_m: net.topology.covering_threshold(0.05) })
    }

    #[test]
    fn tiles_and_empty_slots() {
        let net = network(6, 1, PartitionScheme::MAP4);
        let a = assoc(&net);
        let raw = raw_features(&net, &a, &CanvasLayout::default()).unwrap();
        assert_eq!(raw.users, vec![0, 2, 3, 4, 5]);
        let norm = Normalization::fixed_for_tests();
        let t = encode_input(&raw, &norm);
        assert_eq!(t.shape, Shape::Grid { h: 20, w: 20, c: FEATURE_CHANNELS });
        assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
        // slot 5 onwards is empty: tile row 1, column 1
        let at = ((5 * 20) + 5) * FEATURE_CHANNELS;
        assert!(t.data[at..at + FEATURE_CHANNELS].iter().all(|v| *v == 0.0));
        // slot 1 is present and uniform over its tile
        let p = |i: usize, j: usize| &t.data[(i * 20 + j) * FEATURE_CHANNELS..][..FEATURE_CHANNELS];
        assert_eq!(p(0, 5)[0], 1.0);
        assert_eq!(p(0, 5), p(4, 9));
    }

    #[test]
    fn oracle_label_is_a_fixed_point() {
        for seed in 0..10 {
            let net = network(10, seed, PartitionScheme::Traditional);
            let a = assoc(&net);
            let alloc = net.allocate_dual_gradient(&a, &SolverParams::default());
            let raw = raw_features(&net, &a, &CanvasLayout::default()).unwrap();
            let norm = Normalization::fixed_for_tests();
            let (label, _) = encode_label(&raw, &alloc.power_w, &norm);
            let back = decode_output(&label, &raw, &net, &a, &norm);
            for (x, y) in back.power_w.iter().zip(&alloc.power_w) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }

    /// Bisection on the shift of a clamped vector, independent of the kink search.
    fn bisect_projection(y: &[f64], lo: &[f64], hi: &[f64], total: f64) -> Vec<f64> {
        let at = |t: f64| -> Vec<f64> { y.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| (v - t).clamp(*l, *h)).collect() };
        let (mut a, mut b) = (-10.0, 10.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if at(m).iter().sum::<f64>() > total {
                a = m;
            } else {
                b = m;
            }
        }
        at(0.5 * (a + b))
    }

    #[test]
    fn over_budget_outputs_are_projected() {
        let net = network(12, 4, PartitionScheme::MAP4);
        let a = assoc(&net);
        let raw = raw_features(&net, &a, &CanvasLayout::default()).unwrap();
        let norm = Normalization::fixed_for_tests();
        let mut rng = seeded(9);
        for _ in 0..50 {
            let out: Vec<f64> = (0..16).map(|_| rng.random_range(-0.5..1.5)).collect();
            let alloc = decode_output(&out, &raw, &net, &a, &norm);
            for (c, users) in a.cell_users.iter().enumerate() {
                if users.is_empty() {
                    continue;
                }
                let (problem, _) = net.cell_problem(c, users, &net.budgets());
                let p: Vec<f64> = users.iter().map(|&u| alloc.power_w[u]).collect();
                assert!(is_feasible(&p, &problem, 1e-12));
                let y: Vec<f64> = users
                    .iter()
                    .map(|&u| {
                        let slot = raw.users.iter().position(|&v| v == u).unwrap();
                        raw.reference_w[slot] + norm.power_w(out[slot])
                    })
                    .collect();
                let total = problem.budget_w.min(problem.p_max_w.iter().sum());
                let reference = bisect_projection(&y, &problem.p_min_w, &problem.p_max_w, total);
                for (x, r) in p.iter().zip(&reference) {
                    assert!((x - r).abs() < 1e-12, "{x} vs {r}");
                }
            }
        }
        // inactive user gets nothing
        let alloc = decode_output(&[1.0; 16], &raw, &net, &a, &norm);
        assert_eq!(alloc.power_w[1], 0.0);
    }

    #[test]
    fn zero_offset_decodes_to_equal_share() {
        let net = network(10, 5, PartitionScheme::MAP4);
        let a = assoc(&net);
        let raw = raw_features(&net, &a, &CanvasLayout::default()).unwrap();
        let norm = Normalization::fixed_for_tests();
        let alloc = decode_output(&[norm.label(0.0); 16], &raw, &net, &a, &norm);
        for (slot, &u) in raw.users.iter().enumerate() {
            assert!((alloc.power_w[u] - raw.reference_w[slot]).abs() < 1e-15);
        }
        let uniform = net.evaluate(&a, &net.allocate_uniform(&a)).utility;
        assert!(net.evaluate(&a, &alloc).utility >= uniform - 1e-12);
    }

    #[test]
    fn too_many_users() {
        let net = network(18, 2, PartitionScheme::MAP4);
        let a = assoc(&net);
        assert!(matches!(raw_features(&net, &a, &CanvasLayout::default()), Err(Error::TooManyUsers { active: 17, max: 16 })));
    }

    #[test]
    fn fit_uses_fixed_ranges_for_counts() {
        let net = network(8, 3, PartitionScheme::MAP4);
        let a = assoc(&net);
        let raw = raw_features(&net, &a, &CanvasLayout::default()).unwrap();
        let n = Normalization::fit(CanvasLayout::default(), [&raw], [0.01, 0.02, 0.03]);
        assert_eq!((n.feature_lo[0], n.feature_hi[0]), (0.0, 1.0));
        assert_eq!((n.feature_lo[4], n.feature_hi[4]), (0.0, 16.0));
        // mean 0.02, population sd 0.01 sqrt(2/3)
        let sd = 0.01 * (2.0f64 / 3.0).sqrt();
        assert!((n.label_lo_w - (0.02 - sd)).abs() < 1e-15);
        assert!((n.label_hi_w - (0.02 + sd)).abs() < 1e-15);
        assert!((n.label(0.02) - 0.5).abs() < 1e-12);
        assert!((n.power_w(n.label(0.03)) - 0.03).abs() < 1e-15);
        let flat = Normalization::fit(CanvasLayout::default(), [&raw], [0.0, 0.0]);
        assert_eq!((flat.label_lo_w, flat.label_hi_w), (-0.5, 0.5));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn inputs_bounded_and_any_output_decodes_feasibly(
                seed in any::<u64>(),
                n in 1usize..=16,
                trad in any::<bool>(),
                out in proptest::collection::vec(-2.0f64..3.0, 16),
            ) {
                let scheme = if trad { PartitionScheme::Traditional } else { PartitionScheme::MAP4 };
                let net = network(n, seed, scheme);
                let a = assoc(&net);
                let raw = raw_features(&net, &a, &CanvasLayout::default()).unwrap();
                let norm = Normalization::fixed_for_tests();
                prop_assert!(encode_input(&raw, &norm).data.iter().all(|v| (0.0..=1.0).contains(v)));
                let alloc = decode_output(&out, &raw, &net, &a, &norm);
                for (c, users) in a.cell_users.iter().enumerate() {
                    if users.is_empty() {
                        continue;
                    }
                    let (problem, _) = net.cell_problem(c, users, &net.budgets());
                    let p: Vec<f64> = users.iter().map(|&u| alloc.power_w[u]).collect();
                    prop_assert!(!problem.admission_feasible() || is_feasible(&p, &problem, 1e-12));
                }
            }
        }
    }
}

