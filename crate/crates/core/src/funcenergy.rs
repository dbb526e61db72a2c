//! The upper half-space measure built from a stopping forest, Poisson
//! extensions into it, the forward and backward Poisson testing integrals,
//! and a lower estimate of the functional energy constant.
//!
//! Both measures are atomic, so every integral over `ℝ^{n+1}_+` is a finite sum.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::corona::StoppingForest;
use crate::energy::good_cubes;
use crate::measure::{DiscreteMeasure, Point};
use crate::pair::WeightPair;
use crate::poisson::FracParams;
use crate::quasigeom::{maximal_deep_subcubes_where, AltCube, CubeId, DyadicQuasigrid, GoodnessParams, Region};

/// A point mass `‖𝖯_{F,J} x‖² δ_{(c_J, ℓ(J))}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpperAtom {
    pub stopping: CubeId,
    pub cube: CubeId,
    pub center: Point,
    pub height: f64,
    pub weight: f64,
}

impl UpperAtom {
    /// Mass of the atom under `μ̄ = t⁻² μ`.
    pub fn bar_weight(&self) -> f64 {
        self.weight / (self.height * self.height)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpperMeasure {
    pub dim: usize,
    pub atoms: Vec<UpperAtom>,
}

impl UpperMeasure {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `∫_Î t² dμ̄`: the total `μ` mass of the tent.
    pub fn tent_mass(&self, grid: &DyadicQuasigrid, i: &CubeId) -> f64 {
        self.atoms.iter().filter(|a| in_tent(grid, i, &a.center, a.height)).map(|a| a.weight).sum()
    }

    /// Point list for external plotting.
    pub fn to_json(&self) -> Value {
        let points: Vec<Value> = self
            .atoms
            .iter()
            .map(|a| json!({ "x": a.center, "t": a.height, "weight": a.weight, "stopping": a.stopping, "cube": a.cube }))
            .collect();
        json!({ "dim": self.dim, "points": points })
    }
}

/// `(x, t) ∈ Î = I × (0, ℓ(I)]`.
pub fn in_tent(grid: &DyadicQuasigrid, i: &CubeId, x: &Point, t: f64) -> bool {
    t > 0.0 && t <= grid.side_at(i.level) && grid.cube(i).contains(x)
}

/// `‖𝖯_{F,J} x‖²`, summing `‖Δ_{J′} x‖²` over good `J′ ⊂ J` in the corona of `F`.
pub fn projection_weight(pair: &WeightPair, forest: &StoppingForest, good: &HashSet<CubeId>, f: &CubeId, j: &CubeId) -> f64 {
    pair.omega_energy.projection_where(j, |c| good.contains(c) && forest.corona_of(c) == Some(*f))
}

/// Maximal `r`-deep subcubes of `F` carrying ω mass.
fn deep_cubes(pair: &WeightPair, f: &CubeId, g: &GoodnessParams) -> Vec<CubeId> {
    maximal_deep_subcubes_where(pair.grid, Region::Grid(*f), g.deep(), |c| pair.omega.is_nonempty(c)).cubes
}

pub fn build_upper_measure(pair: &WeightPair, forest: &StoppingForest, g: &GoodnessParams) -> UpperMeasure {
    let good = good_cubes(pair, g);
    let mut atoms = Vec::new();
    for f in forest.cubes() {
        for j in deep_cubes(pair, f, g) {
            let q = pair.grid.cube(&j);
            atoms.push(UpperAtom {
                stopping: *f,
                cube: j,
                center: q.center(),
                height: q.side(),
                weight: projection_weight(pair, forest, &good, f, &j),
            });
        }
    }
    UpperMeasure { dim: pair.grid.dim(), atoms }
}

/// `ℙ^α ν(x, t) = ∫ t/(t² + |x−y|²)^{(n+1−α)/2} dν(y)`.
pub fn poisson_extension(nu: &DiscreteMeasure, x: &Point, t: f64, p: &FracParams) -> f64 {
    let e = (p.dim as f64 + 1.0 - p.alpha) / 2.0;
    nu.atoms().iter().map(|a| a.mass * t / (t * t + a.x.dist(x).powi(2)).powf(e)).sum()
}

/// `ℚ^α(t 1_Î μ̄)(x) = ∫_Î t²/(t² + |x−y|²)^{(n+1−α)/2} dμ̄(y, t)`.
pub fn dual_poisson(upper: &UpperMeasure, grid: &DyadicQuasigrid, i: &CubeId, x: &Point, p: &FracParams) -> f64 {
    let e = (p.dim as f64 + 1.0 - p.alpha) / 2.0;
    upper
        .atoms
        .iter()
        .filter(|a| in_tent(grid, i, &a.center, a.height))
        .map(|a| {
            let t2 = a.height * a.height;
            t2 / (t2 + a.center.dist(x).powi(2)).powf(e) * a.bar_weight()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ForwardTesting {
    pub local: f64,
    pub global: f64,
    pub total: f64,
}

/// `∫ ℙ^α(1_I σ)² dμ̄` split over the tent `Î` and its complement.
pub fn forward_testing(i: &CubeId, sigma: &DiscreteMeasure, upper: &UpperMeasure, grid: &DyadicQuasigrid, p: &FracParams) -> ForwardTesting {
    let local_sigma = sigma.restrict_to(&grid.cube(i));
    let mut out = ForwardTesting::default();
    for a in &upper.atoms {
        let v = poisson_extension(&local_sigma, &a.center, a.height, p).powi(2) * a.bar_weight();
        if a.cube.is_within(i) {
            out.local += v;
        } else {
            out.global += v;
        }
        out.total += v;
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BackwardTesting {
    /// `∫ ℚ^α(t 1_Î μ̄)² dσ`.
    pub value: f64,
    /// `∫_Î t² dμ̄`.
    pub tent_mass: f64,
}

pub fn backward_testing(i: &CubeId, sigma: &DiscreteMeasure, upper: &UpperMeasure, grid: &DyadicQuasigrid, p: &FracParams) -> BackwardTesting {
    let value = sigma.atoms().iter().map(|a| a.mass * dual_poisson(upper, grid, i, &a.x, p).powi(2)).sum();
    BackwardTesting { value, tent_mass: upper.tent_mass(grid, i) }
}

/// `Σ_{F,J⊂region} (P^α(J, 1_region σ)/ℓ(J))² ‖𝖯_{F,J} x‖²` for a grid or alternate cube.
pub fn local_sum(pair: &WeightPair, upper: &UpperMeasure, region: Region) -> f64 {
    let roots: Vec<CubeId> = match region {
        Region::Grid(id) => vec![id],
        Region::Alternate(a) => a.constituents(pair.grid.dim()).into_iter().filter(|c| pair.grid.in_grid(c)).collect(),
    };
    let inside = |c: &CubeId| roots.iter().any(|r| c.is_within(r));
    weighted_sum(pair, upper, |a| inside(&a.cube), |idx| pair.sigma.leaf(idx).is_some_and(|l| inside(&l)))
}

/// `B(I)` for an alternate cube: stopping cubes strictly containing one of
/// its constituents, deep cubes inside it, σ restricted to it.
pub fn refined_sum(pair: &WeightPair, upper: &UpperMeasure, alt: &AltCube) -> f64 {
    let roots: Vec<CubeId> = alt.constituents(pair.grid.dim()).into_iter().filter(|c| pair.grid.in_grid(c)).collect();
    let inside = |c: &CubeId| roots.iter().any(|r| c.is_within(r));
    weighted_sum(
        pair,
        upper,
        |a| inside(&a.cube) && roots.iter().any(|r| r.is_within(&a.stopping) && *r != a.stopping),
        |idx| pair.sigma.leaf(idx).is_some_and(|l| inside(&l)),
    )
}

fn weighted_sum(pair: &WeightPair, upper: &UpperMeasure, keep: impl Fn(&UpperAtom) -> bool, sigma_keep: impl Fn(usize) -> bool) -> f64 {
    let exponent = pair.params.dim as f64 + 1.0 - pair.params.alpha;
    let atoms = pair.sigma_measure().atoms();
    upper
        .atoms
        .iter()
        .filter(|a| keep(a))
        .map(|a| {
            let l = a.height;
            let p: f64 = atoms
                .iter()
                .enumerate()
                .filter(|(i, _)| sigma_keep(*i))
                .map(|(_, s)| s.mass * l / (l + s.x.dist(&a.center)).powf(exponent))
                .sum();
            (p / l).powi(2) * a.weight
        })
        .sum()
}

/// `#{F ∈ ℱ : J ⊂ I₀ ⊊ F for some J ∈ M_deep(F) with 𝖯_{F,J} ≠ 0}`.
pub fn tau_overlap_count(i0: &CubeId, forest: &StoppingForest, upper: &UpperMeasure) -> usize {
    forest
        .cubes()
        .filter(|f| i0.is_within(f) && *f != i0)
        .filter(|f| upper.atoms.iter().any(|a| a.stopping == **f && a.weight > 0.0 && a.cube.is_within(i0)))
        .count()
}

/// Lower estimate of the squared functional energy constant for one forest:
/// the largest eigenvalue of the form
/// `h ↦ Σ_{F,J} (P^α(J, hσ)/ℓ(J))² ‖𝖯_{F,J} x‖²` on `L²(σ)`, by power iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FunctionalEnergy {
    pub value: f64,
    pub iterations: usize,
    /// Maximizing `h` with `‖h‖_{L²(σ)} = 1`, per σ atom.
    pub maximizer: Vec<f64>,
}

pub fn functional_energy(pair: &WeightPair, upper: &UpperMeasure, max_iter: usize, tol: f64) -> FunctionalEnergy {
    let sigma = pair.sigma_measure();
    let (rows, cols) = (upper.atoms.len(), sigma.len());
    if rows == 0 || cols == 0 {
        return FunctionalEnergy { value: 0.0, iterations: 0, maximizer: vec![0.0; cols] };
    }
    let exponent = pair.params.dim as f64 + 1.0 - pair.params.alpha;
    let b = DMatrix::from_fn(rows, cols, |r, c| {
        let (a, s) = (&upper.atoms[r], &sigma.atoms()[c]);
        let l = a.height;
        a.weight.sqrt() / l * s.mass.sqrt() * l / (l + s.x.dist(&a.center)).powf(exponent)
    });
    let gram = b.transpose() * &b;
    let mut v = DVector::from_element(cols, 1.0 / (cols as f64).sqrt());
    let mut value = 0.0;
    let mut iterations = 0;
    for k in 1..=max_iter {
        iterations = k;
        let w = &gram * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            value = 0.0;
            break;
        }
        v = w / norm;
        if (next - value).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            value = next;
            break;
        }
        value = next;
    }
    let value = v.dot(&(&gram * &v)).max(value);
    let maximizer = v.iter().zip(sigma.atoms()).map(|(g, s)| g / s.mass.sqrt()).collect();
    FunctionalEnergy { value, iterations, maximizer }
}
