//! Graph construction for the energy model.
//!
//! Features are `[atoms, channels, 9]` arrays of row-major 3×3 matrices.
//!
//! Embedding: every directed edge `i ← j` contributes
//! `φ(r)·Z_ij ⊙ (f_I(r)·Id + f_A(r)·skew(r̂) + f_S(r)·(r̂r̂ᵀ − Id/3))`, where
//! `Z_ij` mixes the element embeddings of both ends and `f_X` are linear
//! maps of the radial basis. Each atom also gets its own embedding times
//! `Id`, so isolated atoms carry a pure scalar feature. The summed tensor
//! is split into parts, each part channel-mixed, and each mixed part gated
//! by `silu` of a linear map of the per-channel squared norms.
//!
//! Interaction layer:
//! ```text
//! X′  = X / (‖X‖ + 1)
//! Y_P = W_P · P(X′)                       P ∈ {I, A, S}, W mixes channels
//! M_i = Σ_j φ(r_ij) Σ_P f_P(r_ij) ⊙ Y_P(j)
//! Y′  = (1 + λψ_i)(Y_i M_i + M_i Y_i)
//! ΔX′ = Σ_P V_P · P(Y′ / (‖Y′‖ + 1))
//! X   ← X′ + ΔX′ + (1 + λ̃ψ_i) ΔX′ΔX′
//! ```
//! With `attribute_mode = none`, or ψ = 0 on every atom of the batch, the two
//! scalings are not recorded at all.
//!
//! Head: `e_i = s·(silu(Σ_P ‖P(X_i)‖²·W1_P + b1)·w2 + b2)` with a fixed
//! scale `s`, summed per system and offset by the reference energies.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use super::config::{AttributeMode, ModelConfig};
use super::params::{ModelParams, PARTS};
use crate::autodiff::{Graph, Part, Tensor, Var};
use crate::data::neighbors::cell_list;
use crate::data::AtomicSystem;
use crate::error::{Error, Result};
use crate::tensor::Mat3;

/// Keeps the norm differentiable at an exactly zero channel.
const NORM_EPS: f64 = 1e-24;

const ID9: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// Deliberate defects for demonstrating that the equivariance suite
/// catches a broken model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sabotage {
    /// Negates the z-component of r̂ inside the skew-symmetric seed.
    FlipSkewZ,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    #[serde(skip)]
    pub sabotage: Option<Sabotage>,
}

/// Systems concatenated into one disconnected graph.
#[derive(Clone, Debug)]
pub struct Batch {
    pub species: Arc<[usize]>,
    pub positions: Vec<[f64; 3]>,
    /// System index of every atom.
    pub segment: Arc<[usize]>,
    pub num_systems: usize,
    /// ψ of every atom; empty when the model ignores attributes.
    pub psi: Vec<f64>,
    /// Receiving atom of every edge.
    pub dst: Arc<[usize]>,
    /// Sending atom of every edge.
    pub src: Arc<[usize]>,
    /// Edges closer than the lower cutoff, where φ = 1.
    pub below_lower: Vec<bool>,
    /// Σ reference energies per system, eV.
    pub reference: Vec<f64>,
}

/// Handles into a recorded forward pass.
pub struct Forward {
    pub positions: Var,
    /// `[systems, 1]`, eV.
    pub energy: Var,
    /// Features after the embedding and after each layer.
    pub features: Vec<Var>,
    /// Parameter leaves by name.
    pub params: BTreeMap<String, Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub energy: f64,
    pub forces: Vec<[f64; 3]>,
}

/// φ(r) on `[lower, upper]`; 1 below `lower`, 0 at and beyond `upper`.
pub fn cosine_cutoff(r: f64, lower: f64, upper: f64) -> f64 {
    if r < lower {
        1.0
    } else if r >= upper {
        0.0
    } else {
        0.5 * ((PI * (r - lower) / (upper - lower)).cos() + 1.0)
    }
}

/// Exponential-normal radial basis on `[lower, upper]`:
/// `exp(−β(exp(−α(r − lower)) − μ_k)²)` with `α = 5/(upper − lower)`,
/// centres `μ_k` evenly spaced in `exp(−α(upper − lower))..1` and a common
/// width `β = (2(1 − exp(−α(upper − lower)))/K)⁻²`.
#[derive(Clone, Debug)]
pub struct RadialBasis {
    pub alpha: f64,
    pub beta: f64,
    pub centers: Vec<f64>,
    pub lower: f64,
}

impl RadialBasis {
    pub fn new(config: &ModelConfig) -> Self {
        let span = config.cutoff_upper - config.cutoff_lower;
        let alpha = 5.0 / span;
        let start = (-alpha * span).exp();
        let k = config.num_rbf;
        let centers = (0..k)
            .map(|i| if k == 1 { start } else { start + (1.0 - start) * i as f64 / (k - 1) as f64 })
            .collect();
        let width = 2.0 * (1.0 - start) / k as f64;
        RadialBasis {
            alpha,
            beta: width.powi(-2),
            centers,
            lower: config.cutoff_lower,
        }
    }

    pub fn eval(&self, r: f64) -> Vec<f64> {
        let t = (-self.alpha * (r - self.lower)).exp();
        self.centers.iter().map(|m| (-self.beta * (t - m).powi(2)).exp()).collect()
    }
}

/// `(f_I, f_A, f_S)` of one layer at distance `r`, without the cutoff.
pub fn radial_weights(r: f64, params: &ModelParams, config: &ModelConfig, prefix: &str) -> [Vec<f64>; 3] {
    let rbf = RadialBasis::new(config).eval(r);
    let c = config.num_channels;
    PARTS.map(|p| {
        let w = params.get(&format!("{prefix}.rbf_{p}")).data();
        (0..c).map(|ch| rbf.iter().enumerate().map(|(k, b)| b * w[k * c + ch]).sum()).collect()
    })
}

struct Builder<'a> {
    g: &'a mut Graph,
    vars: BTreeMap<String, Var>,
}

impl Builder<'_> {
    fn p(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.g.constant(Tensor::new(shape.to_vec(), data)?))
    }

    /// Per-channel squared Frobenius norm, `[n, c, 9] → [n, c, 1]`.
    fn frob_sq(&mut self, x: Var) -> Result<Var> {
        let s = self.g.shape(x).to_vec();
        let sq = self.g.mul(x, x)?;
        self.g.sum_to(sq, &[s[0], s[1], 1])
    }

    /// `x / (‖x‖ + 1)` per channel.
    fn normalize(&mut self, x: Var) -> Result<Var> {
        let n2 = self.frob_sq(x)?;
        let n2 = self.g.add_scalar(n2, NORM_EPS)?;
        let n = self.g.sqrt(n2)?;
        let d = self.g.add_scalar(n, 1.0)?;
        let inv = self.g.recip(d)?;
        self.g.mul(x, inv)
    }

    /// `Σ_P W_P · P(x)`.
    fn mix_parts(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let mut acc = None;
        for (p, part) in PARTS.iter().zip([Part::Scalar, Part::Vector, Part::Traceless]) {
            let piece = self.g.irrep(x, part)?;
            let w = self.p(&format!("{prefix}_{p}"));
            let mixed = self.g.mix(w, piece)?;
            acc = Some(match acc {
                None => mixed,
                Some(a) => self.g.add(a, mixed)?,
            });
        }
        Ok(acc.expect("three parts"))
    }

    /// Multiplies `x` by `1 + λψ` per atom.
    fn attribute_scale(&mut self, x: Var, psi: Var, lambda: &str) -> Result<Var> {
        let l = self.p(lambda);
        let lp = self.g.mul(psi, l)?;
        let f = self.g.add_scalar(lp, 1.0)?;
        self.g.mul(x, f)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Model {
            config,
            params,
            sabotage: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.validate(&self.config)
    }

    fn psi_of(&self, system: &AtomicSystem) -> Result<Vec<f64>> {
        let n = system.len();
        Ok(match self.config.attribute_mode {
            AttributeMode::None => Vec::new(),
            AttributeMode::TotalCharge => vec![system.total_charge; n],
            AttributeMode::Spin => vec![system.spin as f64; n],
            AttributeMode::PerAtomCharge => system
                .per_atom_charges
                .clone()
                .ok_or(Error::MissingLabels("per-atom charges"))?,
        })
    }

    /// Validates the systems and lays them out as one batch.
    pub fn prepare(&self, systems: &[&AtomicSystem]) -> Result<Batch> {
        let mut b = Batch {
            species: Arc::from(Vec::new()),
            positions: Vec::new(),
            segment: Arc::from(Vec::new()),
            num_systems: systems.len(),
            psi: Vec::new(),
            dst: Arc::from(Vec::new()),
            src: Arc::from(Vec::new()),
            below_lower: Vec::new(),
            reference: Vec::with_capacity(systems.len()),
        };
        let (mut species, mut segment, mut dst, mut src) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, s) in systems.iter().enumerate() {
            s.validate()?;
            let offset = b.positions.len();
            let mut reference = 0.0;
            for &z in &s.atomic_numbers {
                species.push(self.config.species_index(z)?);
                reference += self.params.reference_energies.get(&z).ok_or(Error::UnknownElement(z))?;
            }
            b.reference.push(reference);
            b.positions.extend_from_slice(&s.positions);
            segment.extend(std::iter::repeat_n(k, s.len()));
            b.psi.extend(self.psi_of(s)?);
            let nl = cell_list(&s.positions, self.config.cutoff_upper);
            for (&(i, j), &d) in nl.pairs.iter().zip(&nl.distances) {
                dst.push(offset + i);
                src.push(offset + j);
                b.below_lower.push(d < self.config.cutoff_lower);
            }
        }
        b.species = species.into();
        b.segment = segment.into();
        b.dst = dst.into();
        b.src = src.into();
        Ok(b)
    }

    /// Records the forward pass. With `trainable`, parameters become
    /// differentiable leaves (λ only when learnable); positions always are.
    pub fn build(&self, g: &mut Graph, batch: &Batch, trainable: bool) -> Result<Forward> {
        let cfg = &self.config;
        let (n, e, c) = (batch.positions.len(), batch.dst.len(), cfg.num_channels);
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params.tensors {
            let v = if trainable && ModelParams::is_trainable(name, cfg) {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.insert(name.clone(), v);
        }
        let positions = g.param(Tensor::new(vec![n, 3], batch.positions.iter().flatten().copied().collect())?);
        let mut b = Builder { g, vars };
        // with ψ ≡ 0 the scalings are exact identities; leaving them off the
        // tape keeps gradient accumulation order identical to the baseline
        let scaled = cfg.attribute_mode != AttributeMode::None && batch.psi.iter().any(|&p| p != 0.0);
        let psi = if scaled {
            Some(b.constant(&[n, 1, 1], batch.psi.clone())?)
        } else {
            None
        };

        // edge geometry
        let pi = b.g.gather(positions, batch.dst.clone())?;
        let pj = b.g.gather(positions, batch.src.clone())?;
        let r = b.g.sub(pj, pi)?;
        let r2 = b.g.mul(r, r)?;
        let d2 = b.g.sum_to(r2, &[e, 1])?;
        let d = b.g.sqrt(d2)?;
        let inv_d = b.g.recip(d)?;
        let u = b.g.mul(r, inv_d)?;

        // cutoff
        let span = cfg.cutoff_upper - cfg.cutoff_lower;
        let shifted = b.g.add_scalar(d, -cfg.cutoff_lower)?;
        let angle = b.g.scale(shifted, PI / span)?;
        let cos = b.g.cos(angle)?;
        let half = b.g.scale(cos, 0.5)?;
        let mut phi = b.g.add_scalar(half, 0.5)?;
        if batch.below_lower.iter().any(|&x| x) {
            let inside = b.constant(&[e, 1], batch.below_lower.iter().map(|&x| if x { 0.0 } else { 1.0 }).collect())?;
            let below = b.constant(&[e, 1], batch.below_lower.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect())?;
            let masked = b.g.mul(phi, inside)?;
            phi = b.g.add(masked, below)?;
        }

        // radial basis [e, k]
        let basis = RadialBasis::new(cfg);
        let t = b.g.scale(shifted, -basis.alpha)?;
        let t = b.g.exp(t)?;
        let mu = b.constant(&[cfg.num_rbf], basis.centers.clone())?;
        let diff = b.g.sub(t, mu)?;
        let sq = b.g.mul(diff, diff)?;
        let arg = b.g.scale(sq, -basis.beta)?;
        let rbf = b.g.exp(arg)?;

        // edge seeds [e, 1, 9]
        let mut skew_map = [0.0; 27];
        let sign_z = if self.sabotage == Some(Sabotage::FlipSkewZ) { -1.0 } else { 1.0 };
        for (k, col, sign) in [(2, 1, -1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 5, -1.0), (1, 6, -1.0), (0, 7, 1.0)] {
            skew_map[k * 9 + col] = sign * if k == 2 { sign_z } else { 1.0 };
        }
        let skew_map = b.constant(&[3, 9], skew_map.to_vec())?;
        let skew = b.g.matmul(u, skew_map)?;
        let skew = b.g.reshape(skew, &[e, 1, 9])?;
        let (mut rows, mut cols) = ([0.0; 27], [0.0; 27]);
        for a in 0..3 {
            for bb in 0..3 {
                rows[a * 9 + a * 3 + bb] = 1.0;
                cols[bb * 9 + a * 3 + bb] = 1.0;
            }
        }
        let rows = b.constant(&[3, 9], rows.to_vec())?;
        let cols = b.constant(&[3, 9], cols.to_vec())?;
        let ur = b.g.matmul(u, rows)?;
        let uc = b.g.matmul(u, cols)?;
        let outer = b.g.mul(ur, uc)?;
        let third = b.constant(&[9], ID9.map(|v| v / 3.0).to_vec())?;
        let traceless = b.g.sub(outer, third)?;
        let traceless = b.g.reshape(traceless, &[e, 1, 9])?;
        let id = b.constant(&[1, 1, 9], ID9.to_vec())?;

        // embedding
        let emb = b.g.gather(b.p("embedding"), batch.species.clone())?;
        let zi = {
            let w = b.p("embed.pair_i");
            let h = b.g.matmul(emb, w)?;
            b.g.gather(h, batch.dst.clone())?
        };
        let zj = {
            let w = b.p("embed.pair_j");
            let h = b.g.matmul(emb, w)?;
            b.g.gather(h, batch.src.clone())?
        };
        let zij = b.g.add(zi, zj)?;
        let zij = b.g.add(zij, b.p("embed.pair_b"))?;
        let zphi = b.g.mul(zij, phi)?;
        let mut edge = None;
        for (p, seed) in PARTS.iter().zip([id, skew, traceless]) {
            let f = b.g.matmul(rbf, b.p(&format!("embed.rbf_{p}")))?;
            let w = b.g.mul(f, zphi)?;
            let w = b.g.reshape(w, &[e, c, 1])?;
            let term = b.g.mul(w, seed)?;
            edge = Some(match edge {
                None => term,
                Some(acc) => b.g.add(acc, term)?,
            });
        }
        let edge = edge.expect("three parts");
        let summed = b.g.scatter_add(edge, batch.dst.clone(), n)?;
        let own = b.g.reshape(emb, &[n, c, 1])?;
        let own = b.g.mul(own, id)?;
        let x0 = b.g.add(summed, own)?;
        let norms = b.frob_sq(x0)?;
        let norms = b.g.reshape(norms, &[n, c])?;
        let mut x = None;
        for (p, part) in PARTS.iter().zip([Part::Scalar, Part::Vector, Part::Traceless]) {
            let piece = b.g.irrep(x0, part)?;
            let mixed = b.g.mix(b.p(&format!("embed.mix_{p}")), piece)?;
            let gate = b.g.linear(
                norms,
                b.p(&format!("embed.gate_{p}")),
                Some(b.p(&format!("embed.gate_b_{p}"))),
            )?;
            let gate = b.g.silu(gate)?;
            let gate = b.g.reshape(gate, &[n, c, 1])?;
            let gated = b.g.mul(mixed, gate)?;
            x = Some(match x {
                None => gated,
                Some(acc) => b.g.add(acc, gated)?,
            });
        }
        let mut x = x.expect("three parts");
        let mut features = vec![x];

        // interaction layers
        for l in 0..cfg.num_layers {
            let pre = format!("layer{l}");
            let xn = b.normalize(x)?;
            let mut y_parts = Vec::with_capacity(3);
            for (p, part) in PARTS.iter().zip([Part::Scalar, Part::Vector, Part::Traceless]) {
                let piece = b.g.irrep(xn, part)?;
                y_parts.push(b.g.mix(b.p(&format!("{pre}.y_{p}")), piece)?);
            }
            let y01 = b.g.add(y_parts[0], y_parts[1])?;
            let y = b.g.add(y01, y_parts[2])?;
            let mut msg = None;
            for (p, &yp) in PARTS.iter().zip(&y_parts) {
                let f = b.g.matmul(rbf, b.p(&format!("{pre}.rbf_{p}")))?;
                let f = b.g.mul(f, phi)?;
                let f = b.g.reshape(f, &[e, c, 1])?;
                let yj = b.g.gather(yp, batch.src.clone())?;
                let term = b.g.mul(f, yj)?;
                msg = Some(match msg {
                    None => term,
                    Some(acc) => b.g.add(acc, term)?,
                });
            }
            let m = b.g.scatter_add(msg.expect("three parts"), batch.dst.clone(), n)?;
            let ym = b.g.matmul3(y, m)?;
            let my = b.g.matmul3(m, y)?;
            let mut yp = b.g.add(ym, my)?;
            if let Some(psi) = psi {
                yp = b.attribute_scale(yp, psi, &format!("{pre}.lambda"))?;
            }
            let ypn = b.normalize(yp)?;
            let dx = b.mix_parts(ypn, &format!("{pre}.dx"))?;
            let mut dx2 = b.g.matmul3(dx, dx)?;
            if let Some(psi) = psi {
                dx2 = b.attribute_scale(dx2, psi, &format!("{pre}.lambda_tilde"))?;
            }
            let s = b.g.add(xn, dx)?;
            x = b.g.add(s, dx2)?;
            features.push(x);
        }

        // head
        let mut h = None;
        for (p, part) in PARTS.iter().zip([Part::Scalar, Part::Vector, Part::Traceless]) {
            let piece = b.g.irrep(x, part)?;
            let nsq = b.frob_sq(piece)?;
            let nsq = b.g.reshape(nsq, &[n, c])?;
            let t = b.g.matmul(nsq, b.p(&format!("head.w1_{p}")))?;
            h = Some(match h {
                None => t,
                Some(acc) => b.g.add(acc, t)?,
            });
        }
        let h = b.g.add(h.expect("three parts"), b.p("head.b1"))?;
        let h = b.g.silu(h)?;
        let atom_e = b.g.linear(h, b.p("head.w2"), Some(b.p("head.b2")))?;
        let atom_e = b.g.scale(atom_e, self.params.energy_scale)?;
        let sys_e = b.g.scatter_add(atom_e, batch.segment.clone(), batch.num_systems)?;
        let reference = b.constant(&[batch.num_systems, 1], batch.reference.clone())?;
        let energy = b.g.add(sys_e, reference)?;

        Ok(Forward {
            positions,
            energy,
            features,
            params: b.vars,
        })
    }

    /// Energies and forces, one graph for all systems.
    pub fn predict(&self, systems: &[&AtomicSystem]) -> Result<Vec<Prediction>> {
        if systems.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.prepare(systems)?;
        let mut g = Graph::new();
        let fwd = self.build(&mut g, &batch, false)?;
        let total = g.sum_all(fwd.energy)?;
        let grad = g.grad(total, &[fwd.positions])?[0];
        let energies = g.value(fwd.energy).data().to_vec();
        let dedr = g.value(grad).data();
        let mut out: Vec<Prediction> = energies
            .into_iter()
            .map(|energy| Prediction {
                energy,
                forces: Vec::new(),
            })
            .collect();
        for (a, &s) in batch.segment.iter().enumerate() {
            out[s].forces.push([-dedr[3 * a], -dedr[3 * a + 1], -dedr[3 * a + 2]]);
        }
        Ok(out)
    }

    pub fn predict_one(&self, system: &AtomicSystem) -> Result<Prediction> {
        Ok(self.predict(&[system])?.remove(0))
    }

    pub fn energy(&self, system: &AtomicSystem) -> Result<f64> {
        let batch = self.prepare(&[system])?;
        let mut g = Graph::new();
        let fwd = self.build(&mut g, &batch, false)?;
        Ok(g.value(fwd.energy).item())
    }

    /// Features after the embedding and after every layer, as
    /// `[stage][atom][channel]`.
    pub fn features(&self, system: &AtomicSystem) -> Result<Vec<Vec<Vec<Mat3>>>> {
        let batch = self.prepare(&[system])?;
        let mut g = Graph::new();
        let fwd = self.build(&mut g, &batch, false)?;
        let c = self.config.num_channels;
        Ok(fwd
            .features
            .iter()
            .map(|&v| {
                g.value(v)
                    .data()
                    .chunks_exact(9 * c)
                    .map(|atom| atom.chunks_exact(9).map(|m| Mat3(m.try_into().unwrap())).collect())
                    .collect()
            })
            .collect())
    }
}
