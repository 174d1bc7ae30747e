//! Room geometry, the ceiling AP grid and its partition into optical cells.
//!
//! Coordinates are metres with the origin at the south-west floor corner.
//! APs sit on the ceiling (`z = height_m`), receivers on the communication
//! plane (`z = rx_plane_height_m`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default eye-safety cap per AP, watts.
pub const DEFAULT_P_SAFE_W: f64 = 0.050;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Room {
    pub width_m: f64,
    pub depth_m: f64,
    pub height_m: f64,
    pub rx_plane_height_m: f64,
}

impl Default for Room {
    fn default() -> Self {
        Self { width_m: 5.0, depth_m: 5.0, height_m: 3.0, rx_plane_height_m: 0.0 }
    }
}

impl Room {
    pub fn new(width_m: f64, depth_m: f64, height_m: f64, rx_plane_height_m: f64) -> Result<Self> {
        let room = Self { width_m, depth_m, height_m, rx_plane_height_m };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.width_m, self.depth_m, self.height_m];
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Config(format!("room dimensions must be positive, got {dims:?}")));
        }
        if !(self.rx_plane_height_m >= 0.0 && self.rx_plane_height_m < self.height_m) {
            return Err(Error::Config(format!(
                "receiver plane height {} must lie in [0, {})",
                self.rx_plane_height_m, self.height_m
            )));
        }
        Ok(())
    }

    /// Vertical AP-to-receiver-plane distance.
    pub fn link_height_m(&self) -> f64 {
        self.height_m - self.rx_plane_height_m
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width_m).contains(&p.x) && (0.0..=self.depth_m).contains(&p.y)
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width_m), p.y.clamp(0.0, self.depth_m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub position: Point,
    /// Aggregate array power `P^a`.
    pub tx_power_w: f64,
    /// VCSELs in the array (n x n).
    pub beams: usize,
}

/// Place `rows x cols` APs at the centres of a uniform ceiling grid, row-major.
pub fn build_ap_grid(
    room: &Room,
    rows: usize,
    cols: usize,
    ap_power_w: f64,
    p_safe_w: f64,
) -> Result<Vec<AccessPoint>> {
    room.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!("AP grid must be at least 1x1, got {rows}x{cols}")));
    }
    if !(ap_power_w.is_finite() && ap_power_w > 0.0) {
        return Err(Error::Config(format!("AP power must be positive, got {ap_power_w}")));
    }
    if ap_power_w > p_safe_w {
        return Err(Error::Config(format!(
            "AP power {ap_power_w} W exceeds the eye-safety cap {p_safe_w} W"
        )));
    }
    let dx = room.width_m / cols as f64;
    let dy = room.depth_m / rows as f64;
    let mut aps = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            aps.push(AccessPoint {
                id: row * cols + col,
                row,
                col,
                position: Point::new((col as f64 + 0.5) * dx, (row as f64 + 0.5) * dy),
                tx_power_w: ap_power_w,
                beams: 1,
            });
        }
    }
    Ok(aps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionScheme {
    Traditional,
    Map { group_rows: usize, group_cols: usize },
}

impl PartitionScheme {
    pub const MAP4: PartitionScheme = PartitionScheme::Map { group_rows: 2, group_cols: 2 };

    pub fn group_dims(self) -> (usize, usize) {
        match self {
            PartitionScheme::Traditional => (1, 1),
            PartitionScheme::Map { group_rows, group_cols } => (group_rows, group_cols),
        }
    }

    pub fn label(self) -> String {
        match self {
            PartitionScheme::Traditional => "traditional".to_string(),
            PartitionScheme::Map { group_rows, group_cols } => {
                format!("map{}", group_rows * group_cols)
            }
        }
    }
}

impl std::str::FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traditional" => Ok(PartitionScheme::Traditional),
            "map4" | "map" => Ok(PartitionScheme::MAP4),
            "map2" => Ok(PartitionScheme::Map { group_rows: 1, group_cols: 2 }),
            other => Err(Error::Config(format!("unknown partition scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub ap_ids: Vec<usize>,
    pub centroid: Point,
    pub budget_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    pub scheme: PartitionScheme,
    pub cells: Vec<Cell>,
    /// Owning cell of each AP.
    pub ap_cell: Vec<usize>,
}

impl CellPartition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Midpoint of two AP positions, the centroid of a two-AP cell.
pub fn two_ap_centroid(a: Point, b: Point) -> Point {
    Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
}

fn mean_position(points: impl Iterator<Item = Point>) -> Point {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    Point::new(sx / n as f64, sy / n as f64)
}

/// Group the AP grid into cells.
///
/// `aps` must come from [`build_ap_grid`] (row-major, with row/col set).
pub fn form_cells(aps: &[AccessPoint], scheme: PartitionScheme) -> Result<CellPartition> {
    if aps.is_empty() {
        return Err(Error::Config("no access points".into()));
    }
    let rows = aps.iter().map(|a| a.row).max().unwrap_or(0) + 1;
    let cols = aps.iter().map(|a| a.col).max().unwrap_or(0) + 1;
    if rows * cols != aps.len() {
        return Err(Error::Config("access points do not form a full grid".into()));
    }
    let (gr, gc) = scheme.group_dims();
    if gr == 0 || gc == 0 || rows % gr != 0 || cols % gc != 0 {
        return Err(Error::Config(format!(
            "{rows}x{cols} AP grid is not divisible into {gr}x{gc} groups"
        )));
    }
    let block_cols = cols / gc;
    let mut cells: Vec<Cell> = Vec::with_capacity((rows / gr) * block_cols);
    for br in 0..rows / gr {
        for bc in 0..block_cols {
            let ap_ids: Vec<usize> = (0..gr)
                .flat_map(|r| (0..gc).map(move |c| (br * gr + r) * cols + bc * gc + c))
                .collect();
            let centroid = mean_position(ap_ids.iter().map(|&a| aps[a].position));
            let budget_w = ap_ids.iter().map(|&a| aps[a].tx_power_w).sum();
            cells.push(Cell { id: cells.len(), ap_ids, centroid, budget_w });
        }
    }
    let mut ap_cell = vec![usize::MAX; aps.len()];
    for cell in &cells {
        for &a in &cell.ap_ids {
            ap_cell[a] = cell.id;
        }
    }
    Ok(CellPartition { scheme, cells, ap_cell })
}

/// Room, AP grid and cell partition, immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub room: Room,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub aps: Vec<AccessPoint>,
    pub partition: CellPartition,
}

impl Topology {
    pub fn new(
        room: Room,
        grid_rows: usize,
        grid_cols: usize,
        ap_power_w: f64,
        p_safe_w: f64,
        scheme: PartitionScheme,
    ) -> Result<Self> {
        let aps = build_ap_grid(&room, grid_rows, grid_cols, ap_power_w, p_safe_w)?;
        let partition = form_cells(&aps, scheme)?;
        Ok(Self { room, grid_rows, grid_cols, aps, partition })
    }

    /// The 5 m x 5 m x 3 m room with a 4 x 4 grid of 50 mW APs.
    pub fn reference(scheme: PartitionScheme) -> Self {
        Self::new(Room::default(), 4, 4, DEFAULT_P_SAFE_W, DEFAULT_P_SAFE_W, scheme)
            .expect("reference topology is valid")
    }

    pub fn with_scheme(&self, scheme: PartitionScheme) -> Result<Self> {
        let partition = form_cells(&self.aps, scheme)?;
        Ok(Self { partition, ..self.clone() })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.partition.cells
    }

    pub fn ap_pitch(&self) -> (f64, f64) {
        (self.room.width_m / self.grid_cols as f64, self.room.depth_m / self.grid_rows as f64)
    }

    /// Association threshold covering the whole floor: half the diagonal of a
    /// cell's footprint plus `margin_m`.
    pub fn covering_threshold(&self, margin_m: f64) -> f64 {
        let (px, py) = self.ap_pitch();
        let (gr, gc) = self.partition.scheme.group_dims();
        (gc as f64 * px).hypot(gr as f64 * py) / 2.0 + margin_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn grid_centres_4x4() {
        let aps = build_ap_grid(&Room::default(), 4, 4, 0.05, 0.05).unwrap();
        assert_eq!(aps.len(), 16);
        let expected = [0.625, 1.875, 3.125, 4.375];
        for ap in &aps {
            assert!(expected.iter().any(|&e| close(ap.position.x, e)));
            assert!(expected.iter().any(|&e| close(ap.position.y, e)));
            assert!(close(ap.tx_power_w, 0.05));
        }
        // row-major
        assert!(close(aps[1].position.x, 1.875) && close(aps[1].position.y, 0.625));
        assert!(close(aps[4].position.x, 0.625) && close(aps[4].position.y, 1.875));
    }

    #[test]
    fn single_ap_at_centre() {
        let aps = build_ap_grid(&Room::default(), 1, 1, 0.05, 0.05).unwrap();
        assert_eq!(aps[0].position, Point::new(2.5, 2.5));
    }

    #[test]
    fn rejects_unsafe_power_and_bad_rooms() {
        assert!(build_ap_grid(&Room::default(), 4, 4, 0.06, 0.05).is_err());
        assert!(build_ap_grid(&Room::default(), 0, 4, 0.05, 0.05).is_err());
        assert!(Room::new(-1.0, 5.0, 3.0, 0.0).is_err());
        assert!(Room::new(5.0, 5.0, 3.0, 3.0).is_err());
    }

    #[test]
    fn map4_cells() {
        let topo = Topology::reference(PartitionScheme::MAP4);
        assert_eq!(topo.cells().len(), 4);
        let c0 = &topo.cells()[0];
        assert_eq!(c0.ap_ids, vec![0, 1, 4, 5]);
        assert!(close(c0.centroid.x, 1.25) && close(c0.centroid.y, 1.25));
        assert!(close(c0.budget_w, 0.2));
    }

    #[test]
    fn traditional_cells() {
        let topo = Topology::reference(PartitionScheme::Traditional);
        assert_eq!(topo.cells().len(), 16);
        for (cell, ap) in topo.cells().iter().zip(&topo.aps) {
            assert_eq!(cell.ap_ids, vec![ap.id]);
            assert_eq!(cell.centroid, ap.position);
            assert!(close(cell.budget_w, 0.05));
        }
    }

    #[test]
    fn indivisible_grid_rejected() {
        let aps = build_ap_grid(&Room::default(), 3, 4, 0.05, 0.05).unwrap();
        assert!(form_cells(&aps, PartitionScheme::MAP4).is_err());
    }

    #[test]
    fn midpoints() {
        assert_eq!(
            two_ap_centroid(Point::new(0.625, 0.625), Point::new(1.875, 0.625)),
            Point::new(1.25, 0.625)
        );
        let p = Point::new(1.3, 4.2);
        assert_eq!(two_ap_centroid(p, p), p);
        assert_eq!(two_ap_centroid(Point::new(0.0, 0.0), Point::new(5.0, 5.0)), Point::new(2.5, 2.5));
    }

    #[test]
    fn covering_threshold_reaches_cell_corners() {
        let map = Topology::reference(PartitionScheme::MAP4);
        let d = map.covering_threshold(0.0);
        assert!(close(d, Point::new(0.0, 0.0).distance(Point::new(1.25, 1.25))));
        let trad = Topology::reference(PartitionScheme::Traditional);
        assert!(close(trad.covering_threshold(0.0), 0.625 * 2f64.sqrt()));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_is_exact_cover(gr in 1usize..4, gc in 1usize..4, br in 1usize..4, bc in 1usize..4, p in 0.001f64..0.05) {
                let aps = build_ap_grid(&Room::default(), gr * br, gc * bc, p, 0.05).unwrap();
                let part = form_cells(&aps, PartitionScheme::Map { group_rows: gr, group_cols: gc }).unwrap();
                let mut seen = vec![0usize; aps.len()];
                for cell in &part.cells {
                    prop_assert!(!cell.ap_ids.is_empty());
                    let budget: f64 = cell.ap_ids.iter().map(|&a| aps[a].tx_power_w).sum();
                    prop_assert_eq!(budget, cell.budget_w);
                    let n = cell.ap_ids.len() as f64;
                    let mx = cell.ap_ids.iter().map(|&a| aps[a].position.x).sum::<f64>() / n;
                    let my = cell.ap_ids.iter().map(|&a| aps[a].position.y).sum::<f64>() / n;
                    prop_assert!((mx - cell.centroid.x).abs() < 1e-12 && (my - cell.centroid.y).abs() < 1e-12);
                    for &a in &cell.ap_ids {
                        seen[a] += 1;
                        prop_assert_eq!(part.ap_cell[a], cell.id);
                    }
                }
                prop_assert!(seen.iter().all(|&s| s == 1));
                prop_assert!(aps.iter().all(|a| a.tx_power_w <= 0.05));
            }
        }
    }
}
