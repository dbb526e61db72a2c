//! Fractional Poisson integrals and the Muckenhoupt-type constants built on them.
//!
//! Every map in the catalog preserves volume, so `|Q|^{1/n}` is the side `ℓ(Q)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measure::{Atom, DiscreteMeasure};
use crate::pair::WeightPair;
use crate::quasigeom::{neighbour_ids, CubeId, QuasiCube};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    pub dim: usize,
    pub alpha: f64,
    /// Hölder order of the kernel smoothness estimate; 1 for Riesz kernels.
    #[serde(default = "unit")]
    pub smoothness: f64,
}

fn unit() -> f64 {
    1.0
}

impl FracParams {
    pub fn new(dim: usize, alpha: f64) -> Result<Self> {
        crate::measure::check_dim(dim)?;
        if !(0.0..dim as f64).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, {dim}), got {alpha}")));
        }
        Ok(Self { dim, alpha, smoothness: 1.0 })
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(crate::Error::DimensionMismatch { expected: dim, found: self.dim });
        }
        Ok(())
    }

    /// `n − α`.
    pub fn codim(&self) -> f64 {
        self.dim as f64 - self.alpha
    }

    /// `|Q|^{1−α/n} = ℓ^{n−α}`.
    pub fn scale(&self, side: f64) -> f64 {
        side.powf(self.codim())
    }
}

/// `P^α(Q, μ)` restricted to atoms accepted by `keep`.
pub fn poisson_standard_where(q: &QuasiCube, mu: &DiscreteMeasure, p: &FracParams, keep: impl Fn(&Atom) -> bool) -> f64 {
    poisson_m_weighted_where(q, mu, p, 1.0, keep)
}

pub fn poisson_standard(q: &QuasiCube, mu: &DiscreteMeasure, p: &FracParams) -> f64 {
    poisson_standard_where(q, mu, p, |_| true)
}

/// `∫ ℓ^m / (ℓ + |y − c_J|)^{n+m−α} dμ`.
pub fn poisson_m_weighted_where(
    q: &QuasiCube,
    mu: &DiscreteMeasure,
    p: &FracParams,
    m: f64,
    keep: impl Fn(&Atom) -> bool,
) -> f64 {
    let (c, l) = (q.center(), q.side());
    let exponent = p.dim as f64 + m - p.alpha;
    mu.atoms()
        .iter()
        .filter(|a| keep(a))
        .map(|a| a.mass * l.powf(m) / (l + a.x.dist(&c)).powf(exponent))
        .sum()
}

pub fn poisson_m_weighted(q: &QuasiCube, mu: &DiscreteMeasure, p: &FracParams, m: f64) -> f64 {
    poisson_m_weighted_where(q, mu, p, m, |_| true)
}

fn reproducing_kernel(side: f64, dist: f64, p: &FracParams) -> f64 {
    (side / (side + dist).powi(2)).powf(p.codim())
}

/// `𝒫^α(Q, μ) = ∫ (ℓ/(ℓ + |x − x_Q|)²)^{n−α} dμ`.
pub fn poisson_reproducing_where(
    q: &QuasiCube,
    mu: &DiscreteMeasure,
    p: &FracParams,
    keep: impl Fn(&Atom) -> bool,
) -> f64 {
    let (c, l) = (q.center(), q.side());
    mu.atoms()
        .iter()
        .filter(|a| keep(a))
        .map(|a| a.mass * reproducing_kernel(l, a.x.dist(&c), p))
        .sum()
}

pub fn poisson_reproducing(q: &QuasiCube, mu: &DiscreteMeasure, p: &FracParams) -> f64 {
    poisson_reproducing_where(q, mu, p, |_| true)
}

/// A supremum over a finite family with the cubes attaining it.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Supremum {
    pub value: f64,
    pub witness: Vec<CubeId>,
}

impl Supremum {
    pub fn of(terms: impl IntoIterator<Item = (f64, Vec<CubeId>)>) -> Self {
        terms.into_iter().fold(Self::default(), |best, (v, w)| {
            if v > best.value {
                Self { value: v, witness: w }
            } else {
                best
            }
        })
    }
}

fn largest_common(gm: &crate::quasigeom::GriddedMeasure, flags: &[bool], id: &CubeId) -> f64 {
    let atoms = gm.measure().atoms();
    gm.atoms(id).iter().filter(|&&i| flags[i]).map(|&i| atoms[i].mass).fold(0.0, f64::max)
}

/// `ω(Q, 𝔓)`: omega mass of `Q` minus its heaviest common atom.
pub fn punctured_omega(pair: &WeightPair, id: &CubeId) -> f64 {
    (pair.omega.mass(id) - largest_common(&pair.omega, &pair.omega_common, id)).max(0.0)
}

pub fn punctured_sigma(pair: &WeightPair, id: &CubeId) -> f64 {
    (pair.sigma.mass(id) - largest_common(&pair.sigma, &pair.sigma_common, id)).max(0.0)
}

pub fn offset_a2_term(pair: &WeightPair, q: &CubeId, q_prime: &CubeId) -> f64 {
    let s = pair.params.scale(pair.grid.side_at(q.level));
    pair.sigma.mass(q) / s * pair.omega.mass(q_prime) / s
}

/// Offset constant over neighbour pairs whose level lies in `levels`.
pub fn offset_a2(pair: &WeightPair, levels: std::ops::RangeInclusive<u32>) -> Supremum {
    let cubes: Vec<CubeId> = pair.sigma.nonempty_cubes().filter(|c| levels.contains(&c.level)).copied().collect();
    Supremum::of(cubes.iter().flat_map(|q| {
        neighbour_ids(pair.grid, q)
            .into_iter()
            .filter(|n| pair.omega.is_nonempty(n))
            .map(move |n| (offset_a2_term(pair, q, &n), vec![*q, n]))
            .collect::<Vec<_>>()
    }))
}

/// `𝒫^α(Q, 1_{Q^c}σ)·|Q|_ω/|Q|^{1−α/n}`.
pub fn one_tailed_a2_term(pair: &WeightPair, id: &CubeId) -> f64 {
    let omega_mass = pair.omega.mass(id);
    if omega_mass == 0.0 {
        return 0.0;
    }
    let q = pair.grid.cube(id);
    let (c, l) = (q.center(), q.side());
    let sigma = &pair.sigma;
    let tail: f64 = sigma
        .measure()
        .atoms()
        .iter()
        .enumerate()
        .filter(|(i, _)| sigma.cell_of(*i, id.level) != Some(*id))
        .map(|(_, a)| a.mass * reproducing_kernel(l, a.x.dist(&c), &pair.params))
        .sum();
    tail * omega_mass / pair.params.scale(q.side())
}

pub fn one_tailed_a2(pair: &WeightPair, family: &[CubeId]) -> Supremum {
    Supremum::of(family.iter().map(|id| (one_tailed_a2_term(pair, id), vec![*id])))
}

pub fn punctured_a2_term(pair: &WeightPair, id: &CubeId) -> f64 {
    let s = pair.params.scale(pair.grid.side_at(id.level));
    punctured_omega(pair, id) / s * pair.sigma.mass(id) / s
}

pub fn punctured_a2(pair: &WeightPair, family: &[CubeId]) -> Supremum {
    Supremum::of(family.iter().map(|id| (punctured_a2_term(pair, id), vec![*id])))
}

/// `‖𝖯_Q^ω x/ℓ(Q)‖²/|Q|^{1−α/n} · |Q|_σ/|Q|^{1−α/n}`.
pub fn energy_a2_term(pair: &WeightPair, id: &CubeId) -> f64 {
    let l = pair.grid.side_at(id.level);
    let s = pair.params.scale(l);
    pair.omega_energy.projection(id) / (l * l) / s * pair.sigma.mass(id) / s
}

pub fn energy_a2(pair: &WeightPair, family: &[CubeId]) -> Supremum {
    Supremum::of(family.iter().map(|id| (energy_a2_term(pair, id), vec![*id])))
}

/// Worst `energy_A₂(Q) / (max{n,3} · sup_{Q′⊂Q} A₂^{punct}(Q′))` over the family;
/// `0/0` reads as 0 and a positive term over a zero sup as `∞`.
pub fn energy_a2_lemma_ratio(pair: &WeightPair) -> Supremum {
    let family = pair.family();
    let constant = pair.params.dim.max(3) as f64;
    let mut subtree: BTreeMap<CubeId, f64> = BTreeMap::new();
    // finest levels first, so every child is settled before its parent
    for id in family.iter().rev() {
        let own = punctured_a2_term(pair, id);
        let entry = subtree.entry(*id).or_insert(0.0);
        *entry = entry.max(own);
        let best = *entry;
        if let Some(parent) = id.parent() {
            let up = subtree.entry(parent).or_insert(0.0);
            *up = up.max(best);
        }
    }
    Supremum::of(family.iter().map(|id| {
        let term = energy_a2_term(pair, id);
        let bound = constant * subtree[id];
        let ratio = match (term == 0.0, bound == 0.0) {
            (true, _) => 0.0,
            (false, true) => f64::INFINITY,
            (false, false) => term / bound,
        };
        (ratio, vec![*id])
    }))
}

/// Energy term with the full reproducing Poisson integral of σ in place of `|Q|_σ`.
pub fn plugged_energy_a2_term(pair: &WeightPair, id: &CubeId) -> f64 {
    let proj = pair.omega_energy.projection(id);
    if proj == 0.0 {
        return 0.0;
    }
    let q = pair.grid.cube(id);
    let l = q.side();
    proj / (l * l) / pair.params.scale(l) * poisson_reproducing(&q, pair.sigma_measure(), &pair.params)
}

pub fn plugged_energy_a2(pair: &WeightPair, family: &[CubeId]) -> Supremum {
    Supremum::of(family.iter().map(|id| (plugged_energy_a2_term(pair, id), vec![*id])))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MuckenhouptReport {
    pub offset_a2: Supremum,
    pub one_tailed_a2: Supremum,
    pub one_tailed_a2_dual: Supremum,
    pub punct_a2: Supremum,
    pub punct_a2_dual: Supremum,
    pub energy_a2: Supremum,
    pub energy_a2_dual: Supremum,
    pub plugged_energy_a2: Supremum,
    pub plugged_energy_a2_dual: Supremum,
    pub cube_family: String,
}

pub fn muckenhoupt_report(pair: &WeightPair) -> MuckenhouptReport {
    let family = pair.family();
    let dual = pair.swapped();
    MuckenhouptReport {
        offset_a2: offset_a2(pair, 0..=pair.grid.depth()),
        one_tailed_a2: one_tailed_a2(pair, &family),
        one_tailed_a2_dual: one_tailed_a2(&dual, &family),
        punct_a2: punctured_a2(pair, &family),
        punct_a2_dual: punctured_a2(&dual, &family),
        energy_a2: energy_a2(pair, &family),
        energy_a2_dual: energy_a2(&dual, &family),
        plugged_energy_a2: plugged_energy_a2(pair, &family),
        plugged_energy_a2_dual: plugged_energy_a2(&dual, &family),
        cube_family: pair.family_descriptor(),
    }
}
