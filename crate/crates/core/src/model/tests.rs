use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::data::random::random_system;
use crate::data::AtomicSystem;
use crate::tensor::{decompose, frobenius_norm_sq, random_orthogonal};

fn config(mode: AttributeMode) -> ModelConfig {
    ModelConfig {
        num_channels: 6,
        num_rbf: 8,
        num_layers: 2,
        attribute_mode: mode,
        elements: vec![1, 6, 8],
        ..ModelConfig::default()
    }
}

fn model(mode: AttributeMode, seed: u64) -> Model {
    let mut m = Model::new(config(mode), seed).unwrap();
    m.params.reference_energies = [(1, -13.6), (6, -1030.0), (8, -2040.0)].into_iter().collect();
    m.params.energy_scale = 0.5;
    m
}

fn molecule(seed: u64, n: usize) -> AtomicSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_system(&mut rng, n, &[1, 6, 8], 0.08, 1.0)
}

#[test]
fn cutoff_examples() {
    assert_eq!(cosine_cutoff(0.0, 0.0, 5.0), 1.0);
    assert_eq!(cosine_cutoff(5.0, 0.0, 5.0), 0.0);
    assert!((cosine_cutoff(2.5, 0.0, 5.0) - 0.5).abs() < 1e-16);
    assert_eq!(cosine_cutoff(0.5, 1.0, 5.0), 1.0);
    assert!((cosine_cutoff(1.0 + 1e-12, 1.0, 5.0) - 1.0).abs() < 1e-12);
}

#[test]
fn radial_weights_examples() {
    let mut m = model(AttributeMode::None, 3);
    let a = radial_weights(1.0, &m.params, &m.config, "layer0");
    assert_eq!(a, radial_weights(1.0, &m.params, &m.config, "layer0"));
    for r in [0.3, 1.0, 2.2, 4.9] {
        let b = radial_weights(r + 1e-6, &m.params, &m.config, "layer0");
        let a = radial_weights(r, &m.params, &m.config, "layer0");
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() <= 1e-4);
        }
    }
    for (name, t) in m.params.tensors.iter_mut() {
        if name.contains(".rbf_") {
            t.data_mut().fill(0.0);
        }
    }
    let z = radial_weights(2.0, &m.params, &m.config, "layer1");
    assert!(z.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn isolated_atom() {
    let m = model(AttributeMode::TotalCharge, 1);
    let atom = AtomicSystem::new(vec![8], vec![[0.3, -1.0, 2.0]]).with_charge(1.0);
    for stage in m.features(&atom).unwrap() {
        for x in &stage[0] {
            let d = decompose(x).unwrap();
            assert_eq!(frobenius_norm_sq(&d.vector_part), 0.0);
            assert!(frobenius_norm_sq(&d.traceless_part) < 1e-30);
        }
    }
    let p = m.predict_one(&atom).unwrap();
    assert_eq!(p.forces, vec![[0.0; 3]]);
}

#[test]
fn zero_head_gives_reference_energy() {
    let mut m = model(AttributeMode::None, 2);
    m.params.zero_head();
    let s = molecule(4, 7);
    let expected: f64 = s.atomic_numbers.iter().map(|z| m.params.reference_energies[z]).sum();
    assert_eq!(m.energy(&s).unwrap(), expected);
    let h = AtomicSystem::new(vec![1], vec![[0.0; 3]]);
    assert_eq!(m.energy(&h).unwrap(), -13.6);
}

#[test]
fn attribute_scale_closed_forms() {
    // (1 + 0.1·1) is exactly 1.1
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![1, 1, 9], (1..=9).map(f64::from).collect()).unwrap());
    let psi = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let lam = g.constant(Tensor::new(vec![1], vec![0.1]).unwrap());
    let lp = g.mul(psi, lam).unwrap();
    let f = g.add_scalar(lp, 1.0).unwrap();
    let out = g.mul(p, f).unwrap();
    let expected: Vec<f64> = (1..=9).map(|v| v as f64 * 1.1).collect();
    assert_eq!(g.value(out).data(), expected.as_slice());

    // Y = Id: YM + MY = 2M
    let m = g.constant(Tensor::new(vec![1, 1, 9], vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7, 1.5, 2.5, -3.0]).unwrap());
    let y = g.constant(Tensor::new(vec![1, 1, 9], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let ym = g.matmul3(y, m).unwrap();
    let my = g.matmul3(m, y).unwrap();
    let s = g.add(ym, my).unwrap();
    let twice: Vec<f64> = g.value(m).data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.value(s).data(), twice.as_slice());
}

/// The vector seed skew(r̂) is a pseudotensor, so under improper `r` the
/// antisymmetric part flips sign, which is the same as transposing.
fn transform_feature(x: &crate::tensor::Mat3, r: &crate::tensor::Mat3) -> crate::tensor::Mat3 {
    if r.determinant() > 0.0 {
        x.conjugate(r)
    } else {
        x.transpose().conjugate(r)
    }
}

#[test]
fn reflections_transpose_the_features() {
    let m = model(AttributeMode::None, 5);
    let s = molecule(6, 7);
    let inversion = crate::tensor::Mat3::IDENTITY.scale(-1.0);
    let a = m.features(&s).unwrap();
    let b = m.features(&s.rotated(&inversion)).unwrap();
    let (mut literal, mut transposed) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
        literal = literal.max(x.conjugate(&inversion).max_abs_diff(y));
        transposed = transposed.max(x.transpose().max_abs_diff(y));
    }
    assert!(literal > 1e-3);
    assert!(transposed <= 1e-12);
}

#[test]
fn features_energy_and_forces_are_o3_equivariant() {
    let m = model(AttributeMode::TotalCharge, 5);
    let s = molecule(6, 9).with_charge(-1.0);
    let feats = m.features(&s).unwrap();
    let p = m.predict_one(&s).unwrap();
    for trial in 0..10 {
        let r = random_orthogonal(trial, true);
        let rs = s.rotated(&r);
        let rf = m.features(&rs).unwrap();
        for (stage, rstage) in feats.iter().zip(&rf) {
            for (atom, ratom) in stage.iter().zip(rstage) {
                for (x, rx) in atom.iter().zip(ratom) {
                    assert!(transform_feature(x, &r).max_abs_diff(rx) <= 1e-10);
                }
            }
        }
        let rp = m.predict_one(&rs).unwrap();
        assert!((rp.energy - p.energy).abs() <= 1e-9 * p.energy.abs());
        let scale = p.forces.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for (f, rf) in p.forces.iter().zip(&rp.forces) {
            let expected = r.apply(*f);
            assert!((0..3).all(|k| (expected[k] - rf[k]).abs() <= 1e-9 * scale));
        }
    }
}

#[test]
fn sabotaged_skew_seed_breaks_equivariance() {
    let mut m = model(AttributeMode::None, 5);
    m.sabotage = Some(Sabotage::FlipSkewZ);
    let s = molecule(6, 6);
    let r = random_orthogonal(1, false);
    let a = m.features(&s).unwrap();
    let b = m.features(&s.rotated(&r)).unwrap();
    let worst = a[0]
        .iter()
        .flatten()
        .zip(b[0].iter().flatten())
        .map(|(x, y)| x.conjugate(&r).max_abs_diff(y))
        .fold(0.0, f64::max);
    assert!(worst > 1e-6, "{worst}");
}

#[test]
fn dyadic_translation_is_bitwise() {
    let m = model(AttributeMode::None, 7);
    let mut s = molecule(8, 8);
    for p in &mut s.positions {
        for v in p.iter_mut() {
            *v = (*v * 1024.0).round() / 1024.0;
        }
    }
    let a = m.predict_one(&s).unwrap();
    let b = m.predict_one(&s.translated([4.0, -2.0, 0.5])).unwrap();
    assert_eq!(a, b);
    let c = m.predict_one(&s.translated([0.1234, 0.777, -3.3])).unwrap();
    assert!((c.energy - a.energy).abs() <= 1e-12 * a.energy.abs());
}

#[test]
fn zero_attribute_reproduces_baseline_bitwise() {
    let base = model(AttributeMode::None, 9);
    for mode in [AttributeMode::TotalCharge, AttributeMode::Spin, AttributeMode::PerAtomCharge] {
        let mut ext = base.clone();
        ext.config.attribute_mode = mode;
        for k in 0..5 {
            let mut s = molecule(100 + k, 6);
            s.per_atom_charges = Some(vec![0.0; 6]);
            assert_eq!(base.predict_one(&s).unwrap(), ext.predict_one(&s).unwrap());
        }
    }
}

#[test]
fn opposite_charges_are_distinguished() {
    let m = model(AttributeMode::TotalCharge, 11);
    for k in 0..5 {
        let s = molecule(200 + k, 5);
        let plus = m.energy(&s.clone().with_charge(1.0)).unwrap();
        let minus = m.energy(&s.with_charge(-1.0)).unwrap();
        assert!((plus - minus).abs() > 1e-12);
    }
}

#[test]
fn per_atom_mode_requires_charges() {
    let m = model(AttributeMode::PerAtomCharge, 1);
    assert!(m.energy(&molecule(1, 3)).is_err());
}

#[test]
fn permutation_permutes_features_bitwise() {
    let m = model(AttributeMode::None, 12);
    let s = molecule(13, 7);
    let order = [4, 0, 6, 2, 1, 5, 3];
    let a = m.features(&s).unwrap();
    let b = m.features(&s.permuted(&order)).unwrap();
    for (sa, sb) in a.iter().zip(&b) {
        for (k, &i) in order.iter().enumerate() {
            assert_eq!(sb[k], sa[i]);
        }
    }
    let pa = m.predict_one(&s).unwrap();
    let pb = m.predict_one(&s.permuted(&order)).unwrap();
    assert!((pa.energy - pb.energy).abs() <= 1e-12 * pa.energy.abs());
    for (k, &i) in order.iter().enumerate() {
        assert!((0..3).all(|c| (pb.forces[k][c] - pa.forces[i][c]).abs() <= 1e-12));
    }
}

#[test]
fn far_copies_are_independent() {
    let m = model(AttributeMode::None, 14);
    let s = molecule(15, 5);
    let single = m.predict_one(&s).unwrap();
    let far = s.translated([64.0, 0.0, 0.0]);
    let both = AtomicSystem::new(
        s.atomic_numbers.iter().chain(&far.atomic_numbers).copied().collect(),
        s.positions.iter().chain(&far.positions).copied().collect(),
    );
    let pair = m.predict_one(&both).unwrap();
    assert!((pair.energy - 2.0 * single.energy).abs() <= 1e-12 * single.energy.abs());

    // moving a distant lone atom leaves the others untouched
    let mut with_lone = s.clone();
    with_lone.atomic_numbers.push(1);
    with_lone.positions.push([40.0, 40.0, 40.0]);
    let a = m.predict_one(&with_lone).unwrap();
    with_lone.positions[5] = [-30.0, 45.0, 10.0];
    let b = m.predict_one(&with_lone).unwrap();
    assert_eq!(a.forces[..5], b.forces[..5]);
    assert_eq!(a.forces[..5], single.forces[..]);
    assert_eq!(a.forces[5], [0.0; 3]);
}

fn fd_forces(m: &Model, s: &AtomicSystem, h: f64) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; s.len()];
    for i in 0..s.len() {
        for k in 0..3 {
            let mut p = s.clone();
            p.positions[i][k] += h;
            let mut q = s.clone();
            q.positions[i][k] -= h;
            out[i][k] = -(m.energy(&p).unwrap() - m.energy(&q).unwrap()) / (2.0 * h);
        }
    }
    out
}

#[test]
fn forces_match_central_differences() {
    let m = model(AttributeMode::TotalCharge, 16);
    let s = molecule(17, 5).with_charge(1.0);
    let p = m.predict_one(&s).unwrap();
    let fd = fd_forces(&m, &s, 1e-4);
    for (a, n) in p.forces.iter().flatten().zip(fd.iter().flatten()) {
        assert!((a - n).abs() <= f64::max(1e-6, 1e-5 * n.abs()), "{a} vs {n}");
    }
    let net: [f64; 3] = std::array::from_fn(|k| p.forces.iter().map(|f| f[k]).sum());
    assert!(net.iter().all(|v| v.abs() <= 1e-10));
}

#[test]
fn unknown_element_is_rejected() {
    let m = model(AttributeMode::None, 1);
    let s = AtomicSystem::new(vec![1, 47], vec![[0.0; 3], [2.0, 0.0, 0.0]]);
    assert!(matches!(m.energy(&s), Err(crate::Error::UnknownElement(47))));
}

#[test]
fn serde_roundtrip_is_exact() {
    let m = model(AttributeMode::Spin, 18);
    let text = serde_json::to_string(&m).unwrap();
    let back: Model = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    back.validate().unwrap();
}

#[test]
fn batched_prediction_matches_single() {
    let m = model(AttributeMode::TotalCharge, 19);
    let a = molecule(20, 4).with_charge(1.0);
    let b = molecule(21, 6);
    let both = m.predict(&[&a, &b]).unwrap();
    let pa = m.predict_one(&a).unwrap();
    let pb = m.predict_one(&b).unwrap();
    assert_eq!(both[0].energy, pa.energy);
    assert_eq!(both[1].energy, pb.energy);
    assert_eq!(both[0].forces, pa.forces);
    assert_eq!(both[1].forces, pb.forces);
}
