//! Distance-threshold user-to-cell association.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::topology::{CellPartition, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationParams {
    pub d_th_m: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationMap {
    /// Serving cell per user, `None` for inactive or uncovered users.
    pub assignment: Vec<Option<usize>>,
    /// `U_c`, ascending user ids.
    pub cell_users: Vec<Vec<usize>>,
    /// Active users with no cell inside the threshold.
    pub unassigned: Vec<usize>,
}

impl AssociationMap {
    /// Build from a per-user assignment vector.
    pub fn from_assignment(assignment: Vec<Option<usize>>, cells: usize, active: &[bool]) -> Self {
        let mut cell_users = vec![Vec::new(); cells];
        let mut unassigned = Vec::new();
        for (u, a) in assignment.iter().enumerate() {
            match a {
                Some(c) => cell_users[*c].push(u),
                None if active.get(u).copied().unwrap_or(true) => unassigned.push(u),
                None => {}
            }
        }
        Self { assignment, cell_users, unassigned }
    }

    pub fn assigned_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    pub fn all_unassigned(&self) -> bool {
        self.assigned_count() == 0
    }
}

/// Cells whose centroid is within `d_th`, nearest first, ties by cell id.
pub fn candidate_cells(user: Point, partition: &CellPartition, params: &AssociationParams) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = partition
        .cells
        .iter()
        .map(|c| (c.id, user.distance(c.centroid)))
        .filter(|&(_, d)| d <= params.d_th_m)
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

pub fn associate_users(users: &[Point], partition: &CellPartition, params: &AssociationParams) -> AssociationMap {
    associate_active(users, &vec![true; users.len()], partition, params)
}

/// Associate the active users; inactive users stay out of every cell.
pub fn associate_active(
    users: &[Point],
    active: &[bool],
    partition: &CellPartition,
    params: &AssociationParams,
) -> AssociationMap {
    let mut assignment: Vec<Option<usize>> = vec![None; users.len()];
    // Step 1: nearest candidate cell, ties to the lower id.
    for (u, &p) in users.iter().enumerate() {
        if !active[u] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for c in &partition.cells {
            let d = p.distance(c.centroid);
            if d <= params.d_th_m && best.is_none_or(|(bd, bid)| d < bd || (d == bd && c.id < bid)) {
                best = Some((d, c.id));
            }
        }
        assignment[u] = best.map(|b| b.1);
    }
    // Step 2: sweep leftovers into any cell whose centroid is within reach.
    for (u, &p) in users.iter().enumerate() {
        if !active[u] || assignment[u].is_some() {
            continue;
        }
        assignment[u] = partition
            .cells
            .iter()
            .filter(|c| c.centroid.distance(p) <= params.d_th_m)
            .min_by(|a, b| a.centroid.distance(p).total_cmp(&b.centroid.distance(p)).then(a.id.cmp(&b.id)))
            .map(|c| c.id);
    }
    AssociationMap::from_assignment(assignment, partition.len(), active)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// User listed in more than one cell.
    Duplicate { user: usize, cells: Vec<usize> },
    /// Assignment vector disagrees with the per-cell sets.
    Mismatch { user: usize },
}

/// One-hot and disjointness checks; empty on success.
pub fn validate_association(map: &AssociationMap) -> Vec<Violation> {
    let n = map.assignment.len();
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, users) in map.cell_users.iter().enumerate() {
        for &u in users {
            if u < n {
                owners[u].push(c);
            }
        }
    }
    let mut out = Vec::new();
    for (u, cells) in owners.into_iter().enumerate() {
        if cells.len() > 1 {
            out.push(Violation::Duplicate { user: u, cells });
        } else if cells.first().copied() != map.assignment[u] {
            out.push(Violation::Mismatch { user: u });
        }
    }
    out
}

/// Rows `(t_s, user_id, cell_id | UNASSIGNED, distance_m)`; inactive users are skipped.
pub fn write_association_csv<W: Write>(
    out: &mut W,
    t_s: f64,
    users: &[Point],
    map: &AssociationMap,
    partition: &CellPartition,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "t_s,user_id,cell_id,distance_m")?;
    }
    for (u, a) in map.assignment.iter().enumerate() {
        match a {
            Some(c) => writeln!(out, "{t_s},{u},{c},{}", users[u].distance(partition.cells[*c].centroid))?,
            None if map.unassigned.contains(&u) => {
                let d = partition.cells.iter().map(|c| users[u].distance(c.centroid)).fold(f64::INFINITY, f64::min);
                writeln!(out, "{t_s},{u},UNASSIGNED,{d}")?
            }
            None => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::topology::{PartitionScheme, Topology};
    use rand::Rng as _;

    fn map4() -> Topology {
        Topology::reference(PartitionScheme::MAP4)
    }

    #[test]
    fn user_at_centroid_comes_first() {
        let topo = map4();
        let c = candidate_cells(Point::new(3.75, 1.25), &topo.partition, &AssociationParams { d_th_m: 3.0 });
        assert_eq!(c[0], (1, 0.0));
    }

    #[test]
    fn tight_threshold_gives_nothing() {
        let topo = map4();
        let c = candidate_cells(Point::new(0.1, 0.1), &topo.partition, &AssociationParams { d_th_m: 0.5 });
        assert!(c.is_empty());
    }

    #[test]
    fn hand_distances() {
        let topo = Topology::reference(PartitionScheme::Map { group_rows: 1, group_cols: 2 });
        // cells 0, 2 and 4 sit at (1.25, 0.625), (1.25, 1.875) and (1.25, 3.125)
        let c = candidate_cells(Point::new(0.0, 0.0), &topo.partition, &AssociationParams { d_th_m: 5.0 });
        assert_eq!(c[0].0, 0);
        assert!((c[0].1 - 1.3975).abs() < 1e-4);
        assert_eq!(c[1].0, 2);
        assert!((c[1].1 - 2.2535).abs() < 1e-4);
        assert_eq!(c[2].0, 4);
        assert!((c[2].1 - 3.3657).abs() < 1e-4);
    }

    #[test]
    fn single_user_single_cell() {
        let aps = crate::topology::build_ap_grid(&crate::topology::Room::default(), 1, 1, 0.05, 0.05).unwrap();
        let part = crate::topology::form_cells(&aps, PartitionScheme::Traditional).unwrap();
        let m = associate_users(&[Point::new(2.0, 2.0)], &part, &AssociationParams { d_th_m: 3.0 });
        assert_eq!(m.assignment, vec![Some(0)]);
        assert!(m.unassigned.is_empty());
    }

    #[test]
    fn equidistant_user_goes_to_lower_id() {
        let topo = map4();
        let m = associate_users(&[Point::new(2.5, 1.25)], &topo.partition, &AssociationParams { d_th_m: 3.0 });
        assert_eq!(m.assignment, vec![Some(0)]);
        let m = associate_users(&[Point::new(2.5, 2.5)], &topo.partition, &AssociationParams { d_th_m: 3.0 });
        assert_eq!(m.assignment, vec![Some(0)]);
    }

    #[test]
    fn uncovered_users_reported() {
        let topo = map4();
        let m = associate_users(&[Point::new(0.0, 0.0), Point::new(1.25, 1.25)], &topo.partition, &AssociationParams { d_th_m: 1.0 });
        assert_eq!(m.unassigned, vec![0]);
        assert_eq!(m.assignment[1], Some(0));
        let none = associate_users(&[Point::new(0.0, 0.0)], &topo.partition, &AssociationParams { d_th_m: 0.1 });
        assert!(none.all_unassigned());
    }

    fn brute_force(users: &[Point], part: &CellPartition, d_th: f64) -> Vec<Option<usize>> {
        users
            .iter()
            .map(|&p| {
                let mut best: Option<(usize, f64)> = None;
                for c in &part.cells {
                    let d = ((p.x - c.centroid.x).powi(2) + (p.y - c.centroid.y).powi(2)).sqrt();
                    if d > d_th {
                        continue;
                    }
                    best = match best {
                        Some((_, bd)) if bd <= d => best,
                        _ => Some((c.id, d)),
                    };
                }
                best.map(|b| b.0)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_oracle() {
        let topo = map4();
        let params = AssociationParams { d_th_m: 3.0 };
        let mut rng = seeded(2024);
        for _ in 0..1000 {
            let users: Vec<Point> = (0..8).map(|_| Point::new(rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0)).collect();
            let m = associate_users(&users, &topo.partition, &params);
            assert_eq!(m.assignment, brute_force(&users, &topo.partition, 3.0));
            assert!(validate_association(&m).is_empty());
        }
    }

    #[test]
    fn duplicate_is_one_violation() {
        let mut m = AssociationMap::from_assignment(vec![Some(0), Some(1)], 2, &[true, true]);
        assert!(validate_association(&m).is_empty());
        m.cell_users[1].push(0);
        assert_eq!(validate_association(&m), vec![Violation::Duplicate { user: 0, cells: vec![0, 1] }]);
    }

    #[test]
    fn fault_injection_counts() {
        let topo = map4();
        let params = AssociationParams { d_th_m: 1.9 };
        let mut rng = seeded(99);
        for _ in 0..200 {
            let users: Vec<Point> = (0..10).map(|_| Point::new(rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0)).collect();
            let mut m = associate_users(&users, &topo.partition, &params);
            let faults = rng.random_range(0..=5usize);
            let mut victims: Vec<usize> = (0..10).filter(|&u| m.assignment[u].is_some()).collect();
            victims.truncate(faults);
            for &u in &victims {
                let own = m.assignment[u].unwrap();
                m.cell_users[(own + 1) % 4].push(u);
            }
            assert_eq!(validate_association(&m).len(), victims.len());
        }
    }

    #[test]
    fn csv_rows() {
        let topo = map4();
        let users = [Point::new(1.25, 1.25), Point::new(0.0, 0.0)];
        let m = associate_users(&users, &topo.partition, &AssociationParams { d_th_m: 1.0 });
        let mut buf = Vec::new();
        write_association_csv(&mut buf, 0.5, &users, &m, &topo.partition, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0.5,0,0,0");
        assert!(lines[2].starts_with("0.5,1,UNASSIGNED,"));
    }

    mod props {
        use super::super::*;
        use crate::topology::{PartitionScheme, Topology};
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn assigned_users_within_threshold_and_nearest(
                pts in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..20),
                d_th in 0.3f64..4.0,
                trad in any::<bool>(),
            ) {
                let scheme = if trad { PartitionScheme::Traditional } else { PartitionScheme::MAP4 };
                let topo = Topology::reference(scheme);
                let users: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
                let params = AssociationParams { d_th_m: d_th };
                let m = associate_users(&users, &topo.partition, &params);
                prop_assert!(validate_association(&m).is_empty());
                for (u, a) in m.assignment.iter().enumerate() {
                    match a {
                        Some(c) => {
                            let d = users[u].distance(topo.cells()[*c].centroid);
                            prop_assert!(d <= d_th);
                            for other in topo.cells() {
                                prop_assert!(users[u].distance(other.centroid) >= d);
                            }
                        }
                        None => prop_assert!(m.unassigned.contains(&u)),
                    }
                }
                prop_assert_eq!(associate_users(&users, &topo.partition, &params), m);
            }
        }
    }
}
