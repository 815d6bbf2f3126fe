//! Directed neighbor pairs within a cutoff.
//!
//! Pairs are reported in canonical order: by receiving atom, then by
//! distance, then by neighbor index. The order depends only on geometry,
//! so a brute-force and a cell-list search agree exactly, and relabelling
//! atoms does not change the order in which an atom's neighbors are
//! visited.

use std::collections::HashMap;

/// `pairs[k] = (i, j)` means atom `j` is a neighbor of receiving atom `i`;
/// `unit_vectors[k]` points from `i` to `j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborList {
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
    pub unit_vectors: Vec<[f64; 3]>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn from_candidates(positions: &[[f64; 3]], cutoff: f64, candidates: Vec<(usize, usize)>) -> Self {
        let mut found: Vec<(usize, f64, usize, [f64; 3])> = candidates
            .into_iter()
            .filter_map(|(i, j)| {
                let (d, u) = separation(positions[i], positions[j]);
                (d <= cutoff).then_some((i, d, j, u))
            })
            .collect();
        found.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        NeighborList {
            pairs: found.iter().map(|&(i, _, j, _)| (i, j)).collect(),
            distances: found.iter().map(|f| f.1).collect(),
            unit_vectors: found.iter().map(|f| f.3).collect(),
        }
    }
}

fn separation(a: [f64; 3], b: [f64; 3]) -> (f64, [f64; 3]) {
    let r = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    (d, [r[0] / d, r[1] / d, r[2] / d])
}

/// O(N²) reference search.
pub fn brute_force(positions: &[[f64; 3]], cutoff: f64) -> NeighborList {
    let n = positions.len();
    let candidates = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    NeighborList::from_candidates(positions, cutoff, candidates)
}

/// Linear-time search over cubic cells of edge `cutoff`.
pub fn cell_list(positions: &[[f64; 3]], cutoff: f64) -> NeighborList {
    let cell_of = |p: &[f64; 3]| -> [i64; 3] { p.map(|v| (v / cutoff).floor() as i64) };
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }
    let mut candidates = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let c = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(members) = cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        candidates.extend(members.iter().filter(|&&j| j != i).map(|&j| (i, j)));
                    }
                }
            }
        }
    }
    NeighborList::from_candidates(positions, cutoff, candidates)
}

pub fn build_neighbor_list(system: &super::AtomicSystem, cutoff: f64) -> NeighborList {
    cell_list(&system.positions, cutoff)
}
