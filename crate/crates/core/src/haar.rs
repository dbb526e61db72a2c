//! Weighted Haar systems: per-cube orthonormal bases of the mean-zero
//! functions that are constant on each child.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::quasigeom::{CubeId, GriddedMeasure};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HaarBasis {
    pub cube: CubeId,
    /// Children with positive mass, in lexicographic order.
    pub children: Vec<CubeId>,
    pub child_mass: Vec<f64>,
    /// One value per child for every basis function.
    pub functions: Vec<Vec<f64>>,
}

impl HaarBasis {
    pub fn dimension(&self) -> usize {
        self.functions.len()
    }

    fn child_position(&self, gm: &GriddedMeasure, atom: usize) -> Option<usize> {
        let cell = gm.cell_of(atom, self.cube.level + 1)?;
        self.children.binary_search(&cell).ok()
    }

    /// Basis function `a` as per-atom values, zero off the cube.
    pub fn evaluate(&self, gm: &GriddedMeasure, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; gm.measure().len()];
        for &i in gm.atoms(&self.cube) {
            if let Some(c) = self.child_position(gm, i) {
                out[i] = self.functions[a][c];
            }
        }
        out
    }

    /// `⟨f, h_a⟩_μ` for every basis function.
    pub fn coefficients(&self, gm: &GriddedMeasure, f: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.children.len()];
        let atoms = gm.measure().atoms();
        for &i in gm.atoms(&self.cube) {
            if let Some(c) = self.child_position(gm, i) {
                sums[c] += atoms[i].mass * f[i];
            }
        }
        self.functions.iter().map(|h| h.iter().zip(&sums).map(|(v, s)| v * s).sum()).collect()
    }
}

/// Gram–Schmidt on the child indicators minus their mean. A residual is
/// discarded once it falls below `1e-12` of its length before projection.
pub fn build_haar_basis(gm: &GriddedMeasure, id: &CubeId) -> HaarBasis {
    let children = gm.nonempty_children(id);
    let child_mass: Vec<f64> = children.iter().map(|c| gm.mass(c)).collect();
    let total: f64 = child_mass.iter().sum();
    let m = children.len();
    let dot = |u: &[f64], v: &[f64]| -> f64 { (0..m).map(|c| child_mass[c] * u[c] * v[c]).sum() };

    let mut functions: Vec<Vec<f64>> = Vec::new();
    for (c, mass) in child_mass.iter().enumerate() {
        if functions.len() + 1 >= m {
            break;
        }
        let mut w: Vec<f64> = (0..m).map(|k| f64::from(u8::from(k == c)) - mass / total).collect();
        let start = dot(&w, &w).sqrt();
        for h in &functions {
            let proj = dot(&w, h);
            w.iter_mut().zip(h).for_each(|(wk, hk)| *wk -= proj * hk);
        }
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-12 * start {
            functions.push(w.into_iter().map(|v| v / norm).collect());
        }
    }
    HaarBasis { cube: *id, children, child_mass, functions }
}

/// `Δ_Q^μ f` as per-atom values.
pub fn delta_projection(gm: &GriddedMeasure, id: &CubeId, f: &[f64]) -> Vec<f64> {
    let basis = build_haar_basis(gm, id);
    let coeffs = basis.coefficients(gm, f);
    let mut out = vec![0.0; f.len()];
    for (a, c) in coeffs.iter().enumerate() {
        for (o, h) in out.iter_mut().zip(basis.evaluate(gm, a)) {
            *o += c * h;
        }
    }
    out
}

/// `‖Δ_Q^μ f‖²` from child averages: `Σ_c |c|_μ (𝔼_c f − 𝔼_Q f)²`.
pub fn delta_norm_sq(gm: &GriddedMeasure, id: &CubeId, f: &[f64]) -> f64 {
    let Some(mean) = gm.average(id, f) else { return 0.0 };
    gm.nonempty_children(id)
        .iter()
        .map(|c| gm.mass(c) * (gm.average(c, f).expect("nonempty") - mean).powi(2))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    pub values: Vec<f64>,
    pub norm_sq: f64,
}

/// `𝖯_K^μ f = Σ_{J⊂K} Δ_J^μ f` over the grid cubes above the deepest level.
pub fn cube_projection(gm: &GriddedMeasure, k: &CubeId, f: &[f64]) -> Projection {
    let mut values = vec![0.0; f.len()];
    let mut norm_sq = 0.0;
    let cubes: Vec<CubeId> = gm
        .nonempty_cubes()
        .filter(|j| j.level < gm.grid().depth() && j.is_within(k))
        .copied()
        .collect();
    for j in cubes {
        let basis = build_haar_basis(gm, &j);
        for (a, c) in basis.coefficients(gm, f).into_iter().enumerate() {
            norm_sq += c * c;
            for (v, h) in values.iter_mut().zip(basis.evaluate(gm, a)) {
                *v += c * h;
            }
        }
    }
    Projection { values, norm_sq }
}

/// Largest deviation on `Q0` between `Σ_{Q1 ⊂ Q ⊂ Q2} Δ_Q f` and `𝔼_{Q0} f − 𝔼_{Q2} f`.
pub fn telescoping_check(gm: &GriddedMeasure, q0: &CubeId, q1: &CubeId, q2: &CubeId, f: &[f64]) -> Result<f64> {
    if q0.parent() != Some(*q1) || !q1.is_within(q2) {
        return Err(invalid("telescoping needs Q0 a child of Q1 and Q1 inside Q2"));
    }
    let (Some(e0), Some(e2)) = (gm.average(q0, f), gm.average(q2, f)) else {
        return Ok(0.0);
    };
    let mut sum = vec![0.0; f.len()];
    for steps in 0..=(q1.level - q2.level) {
        let q = q1.ancestor(steps).expect("within chain");
        for (s, d) in sum.iter_mut().zip(delta_projection(gm, &q, f)) {
            *s += d;
        }
    }
    Ok(gm.atoms(q0).iter().map(|&i| (sum[i] - (e0 - e2)).abs()).fold(0.0, f64::max))
}

/// Coefficients of `f` against every Haar function of the grid, with the
/// top-cube mean carried separately.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HaarExpansion {
    pub mean: f64,
    pub top_mass: f64,
    pub coefficients: BTreeMap<CubeId, Vec<f64>>,
}

impl HaarExpansion {
    pub fn energy(&self) -> f64 {
        self.mean * self.mean * self.top_mass
            + self.coefficients.values().flatten().map(|c| c * c).sum::<f64>()
    }
}

pub fn expand(gm: &GriddedMeasure, f: &[f64]) -> HaarExpansion {
    let top = CubeId::TOP;
    let coefficients = gm
        .nonempty_cubes()
        .filter(|j| j.level < gm.grid().depth())
        .map(|j| (*j, build_haar_basis(gm, j).coefficients(gm, f)))
        .collect();
    HaarExpansion { mean: gm.average(&top, f).unwrap_or(0.0), top_mass: gm.mass(&top), coefficients }
}

/// `‖Δ_J x‖²` summed over coordinates, and its subtree sums `‖𝖯_J x‖²`.
#[derive(Clone, Debug, Default)]
pub struct CoordinateEnergy {
    pub delta: BTreeMap<CubeId, f64>,
    pub projection: BTreeMap<CubeId, f64>,
}

impl CoordinateEnergy {
    pub fn new(gm: &GriddedMeasure) -> Self {
        let depth = gm.grid().depth();
        let mut delta = BTreeMap::new();
        for id in gm.nonempty_cubes().filter(|j| j.level < depth) {
            let mean = gm.center_of_mass(id).expect("nonempty");
            let d: f64 = gm
                .nonempty_children(id)
                .iter()
                .map(|c| gm.mass(c) * (gm.center_of_mass(c).expect("nonempty") - mean).norm_sq())
                .sum();
            delta.insert(*id, d);
        }
        let mut projection: BTreeMap<CubeId, f64> = BTreeMap::new();
        for (id, d) in delta.iter().rev() {
            let below: f64 = gm.nonempty_children(id).iter().map(|c| projection.get(c).copied().unwrap_or(0.0)).sum();
            projection.insert(*id, d + below);
        }
        Self { delta, projection }
    }

    /// `‖𝖯_J x‖²`, zero for empty cubes and cubes at the grid depth.
    pub fn projection(&self, id: &CubeId) -> f64 {
        self.projection.get(id).copied().unwrap_or(0.0)
    }

    /// Sum of `‖Δ_{J'} x‖²` over `J' ⊂ J` accepted by `keep`.
    pub fn projection_where(&self, id: &CubeId, keep: impl Fn(&CubeId) -> bool) -> f64 {
        self.delta.range(*id..).filter(|(j, _)| j.is_within(id) && keep(j)).map(|(_, d)| d).sum()
    }
}

/// Per-atom values of coordinate `k`.
pub fn coordinate(gm: &GriddedMeasure, k: usize) -> Vec<f64> {
    gm.measure().atoms().iter().map(|a| a.x[k]).collect()
}
