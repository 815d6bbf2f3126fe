use rand::Rng;

use super::system::AtomicSystem;

/// Atoms drawn uniformly in a cube sized for `density` (atoms/Å³), with
/// every pair at least `min_distance` apart.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, elements: &[u8], density: f64, min_distance: f64) -> AtomicSystem {
    let side = (n as f64 / density).cbrt();
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n);
    while positions.len() < n {
        let p = [
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
        ];
        if positions.iter().all(|q| super::system::distance(*q, p) >= min_distance) {
            positions.push(p);
        }
    }
    let zs = (0..n).map(|_| elements[rng.random_range(0..elements.len())]).collect();
    AtomicSystem::new(zs, positions)
}
