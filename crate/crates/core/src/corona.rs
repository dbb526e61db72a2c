//! Stopping times: Calderón–Zygmund and energy stopping forests, validation
//! of stopping data, iterated coronas and corona projections.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;
use serde_json::{json, Value};

use crate::energy::{good_cubes, stopping_functional};
use crate::error::{Error, Result};
use crate::haar::delta_projection;
use crate::pair::WeightPair;
use crate::poisson::Supremum;
use crate::quasigeom::{CubeId, GoodnessParams, GriddedMeasure};

/// Stopping cubes with their data and the tree they inherit from the grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StoppingForest {
    pub data: BTreeMap<CubeId, f64>,
    pub parent: BTreeMap<CubeId, CubeId>,
    /// Stopping cubes at the grid depth, which the grid cannot refine.
    pub frontier: Vec<CubeId>,
}

impl StoppingForest {
    /// Builds the tree on a set of cubes, each parent being the nearest strict
    /// ancestor in the set.
    pub fn from_data(data: BTreeMap<CubeId, f64>, depth: u32) -> Self {
        let parent = data
            .keys()
            .filter_map(|c| {
                (1..=c.level).find_map(|s| c.ancestor(s).filter(|a| data.contains_key(a))).map(|p| (*c, p))
            })
            .collect();
        let frontier = data.keys().filter(|c| c.level == depth).copied().collect();
        Self { data, parent, frontier }
    }

    pub fn cubes(&self) -> impl Iterator<Item = &CubeId> {
        self.data.keys()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains(&self, id: &CubeId) -> bool {
        self.data.contains_key(id)
    }

    pub fn alpha(&self, id: &CubeId) -> f64 {
        self.data.get(id).copied().unwrap_or(0.0)
    }

    /// `π_ℱ I`: the smallest stopping cube containing `I`.
    pub fn corona_of(&self, id: &CubeId) -> Option<CubeId> {
        (0..=id.level).find_map(|s| id.ancestor(s).filter(|a| self.contains(a)))
    }

    /// `𝒞_F` restricted to cubes charged by `gm`.
    pub fn corona(&self, f: &CubeId, gm: &GriddedMeasure) -> Vec<CubeId> {
        gm.nonempty_cubes().filter(|i| i.is_within(f) && self.corona_of(i) == Some(*f)).copied().collect()
    }

    /// Stopping cubes `F′ ⪯ F`, including `F`.
    pub fn descendants(&self, f: &CubeId) -> impl Iterator<Item = &CubeId> + '_ {
        let f = *f;
        self.data.keys().filter(move |c| c.is_within(&f))
    }

    /// The forest as a JSON tree: cube, data, parent and corona members.
    pub fn to_json(&self, gm: &GriddedMeasure) -> Value {
        let nodes: Vec<Value> = self
            .data
            .iter()
            .map(|(c, a)| json!({ "cube": c, "alpha": a, "parent": self.parent.get(c), "corona": self.corona(c, gm) }))
            .collect();
        json!({ "nodes": nodes, "frontier": self.frontier })
    }
}

fn abs_values(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| v.abs()).collect()
}

/// Calderón–Zygmund stopping times for `|f|`: below each stopping cube `F`
/// the maximal charged `F′` with `𝔼_{F′}|f| > C 𝔼_F|f|` stop. The datum of
/// `F` is the largest average `𝔼_I|f|` over its corona, which lies between
/// `𝔼_F|f|` and `C 𝔼_F|f|`.
pub fn cz_stopping(f: &[f64], sigma: &GriddedMeasure, c: f64) -> Result<StoppingForest> {
    if c.is_nan() || c <= 1.0 {
        return Err(Error::InvalidParameter(format!("stopping ratio must exceed 1, got {c}")));
    }
    if sigma.mass(&CubeId::TOP) == 0.0 {
        return Err(Error::ZeroMass);
    }
    let g = abs_values(f);
    let avg = |id: &CubeId| sigma.average(id, &g).unwrap_or(0.0);
    let mut data = BTreeMap::new();
    let mut queue = vec![CubeId::TOP];
    while let Some(top) = queue.pop() {
        let bar = c * avg(&top);
        let mut largest = avg(&top);
        let mut stack = sigma.nonempty_children(&top);
        while let Some(i) = stack.pop() {
            let a = avg(&i);
            if a > bar {
                queue.push(i);
            } else {
                largest = largest.max(a);
                stack.extend(sigma.nonempty_children(&i));
            }
        }
        data.insert(top, largest);
    }
    Ok(StoppingForest::from_data(data, sigma.grid().depth()))
}

/// Outcome of one stopping-data property with its worst cube.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub holds: bool,
    pub worst: f64,
    pub witness: Option<CubeId>,
}

impl PropertyCheck {
    fn from_worst(worst: f64, witness: Option<CubeId>, bound: f64) -> Self {
        Self { holds: worst <= bound * (1.0 + 1e-12), worst, witness }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StoppingValidation {
    /// Largest `𝔼_I|f| / α(F)` over coronas; at most 1.
    pub corona_bound: PropertyCheck,
    /// Largest `Σ_{F′⪯F}|F′|_σ / |F|_σ`; at most `C₀`.
    pub carleson: PropertyCheck,
    /// `Σ α(F)²|F|_σ / ‖f‖²`; at most `C₀²`.
    pub orthogonality: PropertyCheck,
    /// Largest `α(π F) − α(F)`; at most 0.
    pub monotone: PropertyCheck,
}

impl StoppingValidation {
    pub fn holds(&self) -> bool {
        self.corona_bound.holds && self.carleson.holds && self.orthogonality.holds && self.monotone.holds
    }
}

fn norm_sq(f: &[f64], sigma: &GriddedMeasure) -> f64 {
    let atoms = sigma.measure().atoms();
    sigma.atoms(&CubeId::TOP).iter().map(|&i| atoms[i].mass * f[i] * f[i]).sum()
}

fn worst_of(items: impl Iterator<Item = (f64, CubeId)>) -> (f64, Option<CubeId>) {
    items.fold((0.0, None), |best, (v, c)| if best.1.is_none() || v > best.0 { (v, Some(c)) } else { best })
}

pub fn validate_stopping_data(forest: &StoppingForest, f: &[f64], sigma: &GriddedMeasure, c0: f64) -> StoppingValidation {
    let g = abs_values(f);
    let corona = worst_of(sigma.nonempty_cubes().filter_map(|i| {
        let top = forest.corona_of(i)?;
        let (a, bound) = (sigma.average(i, &g).unwrap_or(0.0), forest.alpha(&top));
        let ratio = match (a == 0.0, bound == 0.0) {
            (true, _) => 0.0,
            (false, true) => f64::INFINITY,
            (false, false) => a / bound,
        };
        Some((ratio, *i))
    }));
    let carleson = worst_of(forest.cubes().filter(|c| sigma.mass(c) > 0.0).map(|c| {
        (forest.descendants(c).map(|d| sigma.mass(d)).sum::<f64>() / sigma.mass(c), *c)
    }));
    let total: f64 = forest.data.iter().map(|(c, a)| a * a * sigma.mass(c)).sum();
    let energy = norm_sq(f, sigma);
    let orth = if total == 0.0 { 0.0 } else { total / energy };
    let monotone = worst_of(forest.parent.iter().map(|(c, p)| (forest.alpha(p) - forest.alpha(c), *c)));
    StoppingValidation {
        corona_bound: PropertyCheck::from_worst(corona.0, corona.1, 1.0),
        carleson: PropertyCheck::from_worst(carleson.0, carleson.1, c0),
        orthogonality: PropertyCheck::from_worst(orth, None, c0 * c0),
        monotone: PropertyCheck { holds: monotone.0 <= 0.0, worst: monotone.0, witness: monotone.1.filter(|_| monotone.0 > 0.0) },
    }
}

/// The constant `C₀` that Calderón–Zygmund stopping with ratio `C` achieves:
/// Carleson packing `C/(C−1)`, and with data at most `C 𝔼_F|f|` the Carleson
/// embedding bound `4C²·C/(C−1)` for the squared sum.
pub fn cz_constant(c: f64) -> f64 {
    let packing = c / (c - 1.0);
    4f64.max(packing).max(2.0 * c * packing.sqrt())
}

/// `‖Σ_F α(F) 1_F‖²_{L²(σ)} / ‖f‖²_{L²(σ)}`, zero when the numerator vanishes.
pub fn quasi_orthogonality_check(forest: &StoppingForest, f: &[f64], sigma: &GriddedMeasure) -> f64 {
    let atoms = sigma.measure().atoms();
    let num: f64 = sigma
        .atoms(&CubeId::TOP)
        .iter()
        .map(|&i| {
            let leaf = sigma.leaf(i).expect("atom in grid");
            let s: f64 = forest.cubes().filter(|c| leaf.is_within(c)).map(|c| forest.alpha(c)).sum();
            atoms[i].mass * s * s
        })
        .sum();
    if num == 0.0 {
        0.0
    } else {
        num / norm_sq(f, sigma)
    }
}

/// Iterated stopping times from `ℱ` and inner forests `𝒦(F)` (each containing `F`).
pub fn iterate_coronas(outer: &StoppingForest, inner: &BTreeMap<CubeId, StoppingForest>, depth: u32) -> Result<StoppingForest> {
    let mut data = BTreeMap::new();
    for (f, alpha_f) in &outer.data {
        let k = inner
            .get(f)
            .ok_or_else(|| Error::InvalidParameter(format!("no inner forest for stopping cube {f:?}")))?;
        if !k.contains(f) {
            return Err(Error::InvalidParameter(format!("inner forest of {f:?} must contain it")));
        }
        for (c, a) in &k.data {
            if c == f {
                data.insert(*c, alpha_f.max(*a));
            } else if outer.corona_of(c) == Some(*f) && *a >= *alpha_f {
                data.insert(*c, *a);
            }
        }
    }
    Ok(StoppingForest::from_data(data, depth))
}

/// Corona projections `𝖯_{𝒞_F} f = Σ_{I∈𝒞_F} Δ_I f` and the top-cube mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoronaDecomposition {
    pub mean: f64,
    pub projections: BTreeMap<CubeId, Vec<f64>>,
}

impl CoronaDecomposition {
    /// Per-atom sum of the mean and every corona projection.
    pub fn reconstruct(&self, sigma: &GriddedMeasure) -> Vec<f64> {
        let mut out = vec![0.0; sigma.measure().len()];
        for &i in sigma.atoms(&CubeId::TOP) {
            out[i] = self.mean + self.projections.values().map(|p| p[i]).sum::<f64>();
        }
        out
    }

    pub fn projection_norms_sq(&self, sigma: &GriddedMeasure) -> BTreeMap<CubeId, f64> {
        self.projections.iter().map(|(c, p)| (*c, norm_sq(p, sigma))).collect()
    }
}

pub fn corona_decomposition(forest: &StoppingForest, f: &[f64], sigma: &GriddedMeasure) -> CoronaDecomposition {
    let depth = sigma.grid().depth();
    let mut projections: BTreeMap<CubeId, Vec<f64>> = forest.cubes().map(|c| (*c, vec![0.0; f.len()])).collect();
    for i in sigma.nonempty_cubes().filter(|i| i.level < depth) {
        let Some(top) = forest.corona_of(i) else { continue };
        let target = projections.get_mut(&top).expect("stopping cube");
        for (t, d) in target.iter_mut().zip(delta_projection(sigma, i, f)) {
            *t += d;
        }
    }
    CoronaDecomposition { mean: sigma.average(&CubeId::TOP, f).unwrap_or(0.0), projections }
}

/// `f` replaced on each deepest cell by its σ-average there: the part of `f`
/// the grid resolves.
pub fn leaf_averaged(f: &[f64], sigma: &GriddedMeasure) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for &i in sigma.atoms(&CubeId::TOP) {
        out[i] = sigma.average(&sigma.leaf(i).expect("atom in grid"), f).expect("charged leaf");
    }
    out
}

/// Constants entering the energy stopping threshold `C_e(𝓔̂² + A₂ + A₂^{punct})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyThreshold {
    pub c_energy: f64,
    pub energy_sq: f64,
    pub a2: f64,
    pub a2_punct: f64,
}

impl EnergyThreshold {
    pub fn level(&self) -> f64 {
        self.c_energy * (self.energy_sq + self.a2 + self.a2_punct)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyStopping {
    /// Stopping cubes; the datum of `S` is `Φ(S; π S)/|S|_σ` (`Φ(S₀; S₀)` for the top).
    pub forest: StoppingForest,
    /// The energy constant after closure, at least the initial one.
    pub energy_sq: f64,
    pub threshold: f64,
    pub rounds: usize,
}

fn stop_once(pair: &WeightPair, g: &GoodnessParams, good: &HashSet<CubeId>, level: f64) -> BTreeMap<CubeId, f64> {
    let top = CubeId::TOP;
    let mut data = BTreeMap::new();
    if pair.sigma.mass(&top) == 0.0 {
        return data;
    }
    data.insert(top, stopping_functional(pair, &top, &top, g, good) / pair.sigma.mass(&top));
    let mut queue = vec![top];
    while let Some(s) = queue.pop() {
        let mut stack = pair.sigma.nonempty_children(&s);
        while let Some(i) = stack.pop() {
            let phi = stopping_functional(pair, &i, &s, g, good);
            let mass = pair.sigma.mass(&i);
            if phi > 0.0 && phi >= level * mass {
                data.insert(i, phi / mass);
                queue.push(i);
            } else {
                stack.extend(pair.sigma.nonempty_children(&i));
            }
        }
    }
    data
}

/// Energy stopping from the top cube. The threshold's energy constant is
/// raised until it dominates `Σ_r Φ(S_r; S)/|S|_σ` over the stopping children
/// `S_r` of every `S`, and `Φ(S; S)/|S|_σ`; then each generation of stopping
/// cubes carries at most `1/C_e` of its parent's mass.
pub fn energy_stopping(pair: &WeightPair, g: &GoodnessParams, threshold: EnergyThreshold) -> EnergyStopping {
    let good = good_cubes(pair, g);
    let mut t = threshold;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let data = stop_once(pair, g, &good, t.level());
        let forest = StoppingForest::from_data(data, pair.grid.depth());
        let mut needed = forest.alpha(&CubeId::TOP);
        for s in forest.cubes() {
            let mass = pair.sigma.mass(s);
            let children: f64 = forest
                .parent
                .iter()
                .filter(|(_, p)| *p == s)
                .map(|(c, _)| forest.alpha(c) * pair.sigma.mass(c))
                .sum();
            let own = stopping_functional(pair, s, s, g, &good);
            needed = needed.max(children / mass).max(own / mass);
        }
        if needed <= t.energy_sq {
            return EnergyStopping { forest, energy_sq: t.energy_sq, threshold: t.level(), rounds };
        }
        t.energy_sq = needed;
    }
}

/// Largest `Σ_{S⊂I} |S|_σ / |I|_σ` over charged grid cubes `I`.
pub fn carleson_check(stops: &BTreeSet<CubeId>, sigma: &GriddedMeasure) -> Supremum {
    Supremum::of(sigma.nonempty_cubes().map(|i| {
        let inside: f64 = stops.iter().filter(|s| s.is_within(i)).map(|s| sigma.mass(s)).sum();
        (inside / sigma.mass(i), vec![*i])
    }))
}

/// `X(𝒞_S)²` for every stopping cube; by construction at most the threshold.
pub fn stopping_bounds(pair: &WeightPair, g: &GoodnessParams, stops: &EnergyStopping) -> Vec<(CubeId, f64)> {
    let good = good_cubes(pair, g);
    stops
        .forest
        .cubes()
        .map(|s| {
            let corona = stops.forest.corona(s, &pair.sigma);
            (*s, crate::energy::stopping_energy(pair, &corona, s, g, &good).value)
        })
        .collect()
}
