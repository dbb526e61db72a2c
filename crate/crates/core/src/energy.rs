//! Energies, second moments about affine planes, and the strong and
//! stopping energy functionals.

use std::collections::{BTreeSet, HashSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::measure::{Atom, DiscreteMeasure, Point};
use crate::pair::WeightPair;
use crate::poisson::Supremum;
use crate::quasigeom::{
    alternate_quasicubes, is_good, maximal_deep_subcubes_where, AltCube, CubeId, DeepParams, GoodnessParams,
    QuasiCube, Region,
};

/// `E(J, μ)²`: variance of position over `J`, normalized by `|J|_μ ℓ(J)²`.
pub fn energy_sq(q: &QuasiCube, mu: &DiscreteMeasure) -> f64 {
    let atoms: Vec<Atom> = mu.atoms().iter().copied().filter(|a| q.contains(&a.x)).collect();
    let mass: f64 = atoms.iter().map(|a| a.mass).sum();
    if atoms.len() < 2 {
        return 0.0;
    }
    variance(&atoms) / (mass * q.side() * q.side())
}

fn mean(atoms: &[Atom]) -> Point {
    let mass: f64 = atoms.iter().map(|a| a.mass).sum();
    let dim = atoms[0].x.dim();
    atoms.iter().fold(Point::origin(dim), |acc, a| acc + a.x * a.mass) * (1.0 / mass)
}

/// `∫ |x − 𝔼x|² dμ`.
fn variance(atoms: &[Atom]) -> f64 {
    let m = mean(atoms);
    atoms.iter().map(|a| a.mass * (a.x - m).norm_sq()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSpectrum {
    pub mass: f64,
    pub side: f64,
    pub center_of_mass: Option<Point>,
    /// Covariance eigenvalues in increasing order.
    pub eigenvalues: Vec<f64>,
    /// `M_k²` for `k = 0, …, n−1`.
    pub moments_sq: Vec<f64>,
}

impl MomentSpectrum {
    pub fn moment(&self, k: usize) -> f64 {
        self.moments_sq[k].sqrt()
    }

    /// `M_k/M₀`, or `None` when `M₀ = 0`.
    pub fn ratio(&self, k: usize) -> Option<f64> {
        (self.moments_sq[0] > 0.0).then(|| (self.moments_sq[k] / self.moments_sq[0]).sqrt())
    }
}

/// Covariance spectrum of `μ` on `J`; the best `k`-plane through the center
/// of mass leaves the `n−k` smallest eigenvalues as residual.
pub fn moment_spectrum(q: &QuasiCube, mu: &DiscreteMeasure) -> MomentSpectrum {
    let atoms: Vec<Atom> = mu.atoms().iter().copied().filter(|a| q.contains(&a.x)).collect();
    spectrum_of(&atoms, mu.dim(), q.side())
}

pub fn spectrum_of(atoms: &[Atom], dim: usize, side: f64) -> MomentSpectrum {
    let mass: f64 = atoms.iter().map(|a| a.mass).sum();
    if atoms.is_empty() {
        return MomentSpectrum {
            mass,
            side,
            center_of_mass: None,
            eigenvalues: vec![0.0; dim],
            moments_sq: vec![0.0; dim],
        };
    }
    let m = mean(atoms);
    let cov = DMatrix::<f64>::from_fn(dim, dim, |r, c| atoms.iter().map(|a| a.mass * (a.x[r] - m[r]) * (a.x[c] - m[c])).sum());
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|v: &f64| v.max(0.0)).collect();
    eigenvalues.sort_by(f64::total_cmp);
    let moments_sq = (0..dim).map(|k| eigenvalues[..dim - k].iter().sum()).collect();
    MomentSpectrum { mass, side, center_of_mass: Some(m), eigenvalues, moments_sq }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dispersion {
    pub holds: bool,
    /// Smallest `M_k/M₀` over cubes with `M₀ > 0`; 1 when there are none.
    pub worst_ratio: f64,
    pub witness: Option<usize>,
}

pub fn is_k_energy_dispersed(mu: &DiscreteMeasure, k: usize, c: f64, family: &[QuasiCube]) -> Dispersion {
    let mut worst = (1.0, None);
    for (i, q) in family.iter().enumerate() {
        if let Some(r) = moment_spectrum(q, mu).ratio(k) {
            if r < worst.0 {
                worst = (r, Some(i));
            }
        }
    }
    Dispersion { holds: worst.0 >= c, worst_ratio: worst.0, witness: worst.1 }
}

/// `(P^α(J, 1_E σ)/ℓ(J))²` where `inside` flags the σ atoms of `E`.
fn poisson_ratio_sq(pair: &WeightPair, j: &CubeId, inside: impl Fn(usize, &Atom) -> bool) -> f64 {
    let q = pair.grid.cube(j);
    let (c, l) = (q.center(), q.side());
    let exponent = pair.params.dim as f64 + 1.0 - pair.params.alpha;
    let p: f64 = pair
        .sigma_measure()
        .atoms()
        .iter()
        .enumerate()
        .filter(|(i, a)| inside(*i, a))
        .map(|(_, a)| a.mass * l / (l + a.x.dist(&c)).powf(exponent))
        .sum();
    (p / l) * (p / l)
}

/// Maximal deep subcubes of `region` that carry ω mass.
fn deep_with_omega(pair: &WeightPair, region: Region, p: DeepParams) -> Vec<CubeId> {
    maximal_deep_subcubes_where(pair.grid, region, p, |c| pair.omega.is_nonempty(c)).cubes
}

fn sigma_in_grid_cube<'p>(pair: &'p WeightPair<'_>, id: CubeId) -> impl Fn(usize, &Atom) -> bool + 'p {
    move |i, _| pair.sigma.cell_of(i, id.level) == Some(id)
}

/// `Σ_{J∈M_deep(piece)} (P^α(J, 1_I σ)/|J|^{1/n})² ‖𝖯_J^ω x‖²` with `I` a grid cube.
fn piece_sum(pair: &WeightPair, outer: CubeId, piece: CubeId, p: DeepParams) -> f64 {
    deep_with_omega(pair, Region::Grid(piece), p)
        .iter()
        .map(|j| poisson_ratio_sq(pair, j, sigma_in_grid_cube(pair, outer)) * pair.omega_energy.projection(j))
        .sum()
}

fn mix(seed: u64, id: &CubeId, k: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [id.level as i64, id.index[0], id.index[1], id.index[2], k as i64] {
        h = (h ^ v as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// A random dyadic partition of `I`: each cube splits with a probability drawn
/// per partition; subtrees without ω mass are not refined since they add nothing.
fn random_partition(pair: &WeightPair, i: CubeId, rng: &mut ChaCha8Rng) -> Vec<CubeId> {
    let split = rng.gen_range(0.2..0.9);
    let mut pieces = Vec::new();
    let mut stack = vec![i];
    while let Some(c) = stack.pop() {
        let kids = pair.grid.children(&c);
        if !kids.is_empty() && pair.omega.is_nonempty(&c) && rng.gen_bool(split) {
            stack.extend(kids);
        } else {
            pieces.push(c);
        }
    }
    pieces.sort();
    pieces
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StrongEnergy {
    /// Largest normalized sum found; a lower bound for the squared constant.
    pub value: f64,
    pub witness: String,
    pub partitions_examined: usize,
    pub alternates_examined: usize,
}

impl StrongEnergy {
    fn offer(&mut self, v: f64, witness: impl FnOnce() -> String) {
        if v > self.value {
            self.value = v;
            self.witness = witness();
        }
    }
}

/// Refined deep collection of an alternate cube at refinement `ℓ`: deep
/// subcubes of `π^ℓ K'` over the constituents `K'`, kept when they sit inside
/// a maximal deep subcube of `K` itself.
pub fn refined_deep_collection(pair: &WeightPair, k: &AltCube, ell: u32, p: DeepParams) -> Vec<CubeId> {
    let containers = deep_with_omega(pair, Region::Alternate(*k), p);
    let mut out = BTreeSet::new();
    for child in k.constituents(pair.grid.dim()).into_iter().filter(|c| pair.grid.in_grid(c)) {
        let Some(up) = child.ancestor(ell) else { continue };
        for j in deep_with_omega(pair, Region::Grid(up), p) {
            if containers.iter().any(|l| j.is_within(l)) {
                out.insert(j);
            }
        }
    }
    out.into_iter().collect()
}

fn alternate_sigma_mass(pair: &WeightPair, k: &AltCube) -> f64 {
    k.constituents(pair.grid.dim()).iter().map(|c| pair.sigma.mass(c)).sum()
}

/// Lower bound for the squared strong energy constant: every σ-charged grid
/// cube is tried with its trivial partition and `budget` random partitions,
/// and every σ-charged alternate cube with refinements `0 ≤ ℓ ≤ τ`.
pub fn strong_energy_constant(pair: &WeightPair, goodness: &GoodnessParams, budget: usize, seed: u64) -> StrongEnergy {
    let deep = goodness.deep();
    let mut best = StrongEnergy::default();
    let cubes: Vec<CubeId> = pair.sigma.nonempty_cubes().filter(|c| pair.omega.is_nonempty(c)).copied().collect();
    for i in &cubes {
        let mass = pair.sigma.mass(i);
        let trivial = piece_sum(pair, *i, *i, deep) / mass;
        best.offer(trivial, || format!("cube {i:?}, trivial partition"));
        best.partitions_examined += 1;
        for k in 0..budget {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i, k as u64));
            let pieces = random_partition(pair, *i, &mut rng);
            let v = pieces.iter().map(|piece| piece_sum(pair, *i, *piece, deep)).sum::<f64>() / mass;
            best.offer(v, || format!("cube {i:?}, random partition {k} into {} pieces", pieces.len()));
            best.partitions_examined += 1;
        }
    }
    for level in 1..=pair.grid.depth() {
        for alt in alternate_quasicubes(pair.grid, level) {
            let mass = alternate_sigma_mass(pair, &alt);
            if mass == 0.0 || alt.constituents(pair.grid.dim()).iter().all(|c| !pair.omega.is_nonempty(c)) {
                continue;
            }
            let members = alt.constituents(pair.grid.dim());
            let inside = |i: usize, _: &Atom| pair.sigma.cell_of(i, level).is_some_and(|c| members.contains(&c));
            for ell in 0..=goodness.tau {
                let v = refined_deep_collection(pair, &alt, ell, deep)
                    .iter()
                    .map(|j| poisson_ratio_sq(pair, j, inside) * pair.omega_energy.projection(j))
                    .sum::<f64>()
                    / mass;
                best.offer(v, || format!("alternate cube {alt:?}, refinement {ell}"));
                best.alternates_examined += 1;
            }
        }
    }
    best
}

/// The good ω-charged grid cubes.
pub fn good_cubes(pair: &WeightPair, goodness: &GoodnessParams) -> HashSet<CubeId> {
    pair.omega.nonempty_cubes().filter(|c| is_good(pair.grid, c, goodness)).copied().collect()
}

/// `Σ_{J∈M_{τ-deep}(I)} (P^α(J, 1_{S∖γJ}σ)/|J|^{1/n})² ‖𝖯_J^{subgood,ω} x‖²`.
pub fn stopping_functional(
    pair: &WeightPair,
    i: &CubeId,
    s: &CubeId,
    goodness: &GoodnessParams,
    good: &HashSet<CubeId>,
) -> f64 {
    deep_with_omega(pair, Region::Grid(*i), goodness.tau_deep())
        .iter()
        .map(|j| {
            let projection = pair.omega_energy.projection_where(j, |c| good.contains(c));
            if projection == 0.0 {
                return 0.0;
            }
            let halo = pair.grid.cube(j).dilate(goodness.gamma);
            let ratio = poisson_ratio_sq(pair, j, |idx, a| pair.sigma.cell_of(idx, s.level) == Some(*s) && !halo.contains(&a.x));
            ratio * projection
        })
        .sum()
}

/// `X_α(𝒞_S)²`: the largest `stopping_functional(I; S)/|I|_σ` over the corona.
pub fn stopping_energy(
    pair: &WeightPair,
    corona: &[CubeId],
    s: &CubeId,
    goodness: &GoodnessParams,
    good: &HashSet<CubeId>,
) -> Supremum {
    Supremum::of(corona.iter().filter(|i| pair.sigma.mass(i) > 0.0).map(|i| {
        (stopping_functional(pair, i, s, goodness, good) / pair.sigma.mass(i), vec![*i])
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyReport {
    pub strong_energy: StrongEnergy,
    pub strong_energy_dual: StrongEnergy,
    /// `(S, X_α(𝒞_S)²)` for each energy stopping cube.
    pub stopping_energy: Vec<(CubeId, f64)>,
    /// Worst `M_k/M₀` over ω-charged grid cubes, for `k = 0, …, n−1`.
    pub dispersion_ratios: Vec<f64>,
}
