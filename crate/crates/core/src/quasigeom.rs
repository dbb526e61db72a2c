//! BiLipschitz images of dyadic cubes.
//!
//! Every geometric predicate is evaluated in preimage coordinates: a point
//! belongs to `ΩQ` exactly when `Ω⁻¹x` belongs to the half-open cube `Q`.
//! Grid cube faces are always computed as `origin + k·side` with the same
//! integer `k`, so a child face and the matching parent face are the same
//! float and children partition their parent exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::{check_dim, DiscreteMeasure, Point, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum BiLipschitzMap {
    Identity,
    /// `(x₁, x') ↦ (x₁, x' + a·sin(b·x₁))` in every trailing coordinate.
    Shear { amplitude: f64, frequency: f64 },
    /// Planar spiral `z ↦ z·exp(iε·ln|z|²)`; it rotates each circle by an
    /// angle depending on the radius and fails sector separation.
    Spiral { epsilon: f64 },
}

impl BiLipschitzMap {
    pub fn check(&self, dim: usize) -> Result<()> {
        check_dim(dim)?;
        match *self {
            Self::Identity => Ok(()),
            Self::Shear { amplitude, frequency } => {
                if amplitude.is_finite() && frequency.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("shear parameters must be finite"))
                }
            }
            Self::Spiral { epsilon } => {
                if dim != 2 {
                    Err(invalid("the spiral map is planar"))
                } else if !epsilon.is_finite() {
                    Err(invalid("spiral epsilon must be finite"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Shear { .. } => "shear",
            Self::Spiral { .. } => "spiral",
        }
    }

    pub fn forward(&self, x: &Point) -> Point {
        match *self {
            Self::Identity => *x,
            Self::Shear { amplitude, frequency } => {
                let lift = amplitude * (frequency * x[0]).sin();
                x.map(|k, c| if k == 0 { c } else { c + lift })
            }
            Self::Spiral { epsilon } => rotate_by_log_radius(x, epsilon),
        }
    }

    pub fn inverse(&self, y: &Point) -> Point {
        match *self {
            Self::Identity => *y,
            Self::Shear { amplitude, frequency } => {
                let lift = amplitude * (frequency * y[0]).sin();
                y.map(|k, c| if k == 0 { c } else { c - lift })
            }
            // the map preserves |z|, so the inverse rotates back by the same angle
            Self::Spiral { epsilon } => rotate_by_log_radius(y, -epsilon),
        }
    }

    /// Upper bound for the Lipschitz constants of the map and its inverse.
    pub fn lip_bound(&self, dim: usize) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::Shear { amplitude, frequency } => {
                // Jacobian [[1, 0], [v, I]] with |v| ≤ s has norm (s + √(s²+4))/2
                let s = (amplitude * frequency).abs() * ((dim.max(1) - 1) as f64).sqrt();
                (s + (s * s + 4.0).sqrt()) / 2.0
            }
            // in the polar frame the Jacobian is [[1, 0], [2ε, 1]]
            Self::Spiral { epsilon } => epsilon.abs() + (1.0 + epsilon * epsilon).sqrt(),
        }
    }
}

fn rotate_by_log_radius(x: &Point, epsilon: f64) -> Point {
    let r2 = x.norm_sq();
    if r2 == 0.0 {
        return *x;
    }
    let (s, c) = (epsilon * r2.ln()).sin_cos();
    Point::raw([c * x[0] - s * x[1], s * x[0] + c * x[1], 0.0], 2)
}

/// Half-open axis-parallel cube `∏[lo_k, hi_k)`; `side` is the nominal side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cube {
    lo: Point,
    hi: Point,
    side: f64,
}

impl Cube {
    pub fn new(center: &[f64], side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid("cube side must be positive"));
        }
        let c = Point::new(center)?;
        Ok(Self { lo: c.map(|_, v| v - side / 2.0), hi: c.map(|_, v| v + side / 2.0), side })
    }

    pub fn from_corner(lo: &[f64], side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid("cube side must be positive"));
        }
        let lo = Point::new(lo)?;
        Ok(Self { lo, hi: lo.map(|_, v| v + side), side })
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn center(&self) -> Point {
        self.lo.map(|k, v| 0.5 * (v + self.hi[k]))
    }

    pub fn contains(&self, y: &Point) -> bool {
        (0..self.dim()).all(|k| self.lo[k] <= y[k] && y[k] < self.hi[k])
    }

    pub fn contains_cube(&self, other: &Cube) -> bool {
        (0..self.dim()).all(|k| self.lo[k] <= other.lo[k] && other.hi[k] <= self.hi[k])
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        (0..self.dim()).all(|k| self.lo[k] < other.hi[k] && other.lo[k] < self.hi[k])
    }

    /// Concentric cube with side multiplied by `factor`.
    pub fn dilate(&self, factor: f64) -> Cube {
        let c = self.center();
        let h = 0.5 * factor * self.side;
        Cube { lo: c.map(|_, v| v - h), hi: c.map(|_, v| v + h), side: factor * self.side }
    }

    /// Euclidean distance between the closures.
    pub fn distance(&self, other: &Cube) -> f64 {
        (0..self.dim())
            .map(|k| {
                let gap = (other.lo[k] - self.hi[k]).max(self.lo[k] - other.hi[k]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Distance from `inner` to the boundary of `self`, assuming containment.
    pub fn boundary_distance(&self, inner: &Cube) -> f64 {
        (0..self.dim())
            .map(|k| (inner.lo[k] - self.lo[k]).min(self.hi[k] - inner.hi[k]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    pub fn distance_to_point(&self, y: &Point) -> f64 {
        (0..self.dim())
            .map(|k| {
                let gap = (self.lo[k] - y[k]).max(y[k] - self.hi[k]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// The image `ΩQ` of a cube; center `Ω(c_Q)` and side `ℓ(Q)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuasiCube {
    pub base: Cube,
    pub map: BiLipschitzMap,
}

impl QuasiCube {
    pub fn new(base: Cube, map: BiLipschitzMap) -> Self {
        Self { base, map }
    }

    pub fn identity(base: Cube) -> Self {
        Self { base, map: BiLipschitzMap::Identity }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn side(&self) -> f64 {
        self.base.side
    }

    pub fn center(&self) -> Point {
        self.map.forward(&self.base.center())
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.base.contains(&self.map.inverse(x))
    }

    pub fn contains_quasicube(&self, other: &QuasiCube) -> bool {
        self.map == other.map && self.base.contains_cube(&other.base)
    }

    pub fn dilate(&self, factor: f64) -> QuasiCube {
        QuasiCube { base: self.base.dilate(factor), map: self.map }
    }
}

/// Distance between two quasicubes measured between their preimages.
pub fn qdist(e: &QuasiCube, f: &QuasiCube) -> Result<f64> {
    if e.map != f.map {
        return Err(Error::MapMismatch);
    }
    Ok(e.base.distance(&f.base))
}

/// Preimage distance from a quasicube to a finite point set.
pub fn qdist_to_points(e: &QuasiCube, pts: &[Point]) -> f64 {
    pts.iter().map(|p| e.base.distance_to_point(&e.map.inverse(p))).fold(f64::INFINITY, f64::min)
}

/// Preimage distance from `inner` to the boundary of `outer`; zero unless contained.
pub fn qdist_to_boundary(inner: &QuasiCube, outer: &QuasiCube) -> Result<f64> {
    if inner.map != outer.map {
        return Err(Error::MapMismatch);
    }
    if !outer.base.contains_cube(&inner.base) {
        return Ok(0.0);
    }
    Ok(outer.base.boundary_distance(&inner.base))
}

/// Size and distance parameters of a deep embedding `J ⋐_{r,ε} K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepParams {
    pub r: u32,
    pub epsilon: f64,
}

pub fn is_deeply_embedded(j: &QuasiCube, k: &QuasiCube, p: DeepParams) -> Result<bool> {
    if j.map != k.map {
        return Err(Error::MapMismatch);
    }
    Ok(deep_in_cube(&j.base, &k.base, p))
}

pub(crate) fn deep_in_cube(j: &Cube, k: &Cube, p: DeepParams) -> bool {
    if !k.contains_cube(j) {
        return false;
    }
    if j.side > k.side * 0.5f64.powi(p.r as i32) {
        return false;
    }
    let need = 0.5 * j.side.powf(p.epsilon) * k.side.powf(1.0 - p.epsilon);
    k.boundary_distance(j) >= need
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessParams {
    pub r: u32,
    pub epsilon: f64,
    pub tau: u32,
    pub gamma: f64,
}

impl GoodnessParams {
    pub fn new(r: u32, epsilon: f64, tau: u32, gamma: f64) -> Result<Self> {
        let p = Self { r, epsilon, tau, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let rf = self.r as f64;
        if self.r < 3 {
            return Err(invalid(format!("goodness.r must be at least 3, got {}", self.r)));
        }
        if !(1.0 / rf < self.epsilon && self.epsilon < 1.0 - 1.0 / rf) {
            return Err(invalid(format!(
                "goodness.epsilon must lie in (1/r, 1-1/r) = ({:.4}, {:.4}), got {}",
                1.0 / rf,
                1.0 - 1.0 / rf,
                self.epsilon
            )));
        }
        if self.tau < 1 {
            return Err(invalid("goodness.tau must be at least 1"));
        }
        if !(self.gamma >= 2.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("goodness.gamma must be at least 2, got {}", self.gamma)));
        }
        debug_assert!(self.delta() > 0.0);
        Ok(())
    }

    /// Largest admissible Poisson decay exponent `(rε − 1)/(r + τ)`.
    pub fn delta(&self) -> f64 {
        (self.r as f64 * self.epsilon - 1.0) / (self.r + self.tau) as f64
    }

    pub fn deep(&self) -> DeepParams {
        DeepParams { r: self.r, epsilon: self.epsilon }
    }

    /// Embedding with size gap `τ` in place of `r`.
    pub fn tau_deep(&self) -> DeepParams {
        DeepParams { r: self.tau, epsilon: self.epsilon }
    }
}

/// Address of a grid cube: its level below the top cube and the integer
/// offsets of its lower corner in units of that level's side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CubeId {
    pub level: u32,
    pub index: [i64; MAX_DIM],
}

impl CubeId {
    pub const TOP: CubeId = CubeId { level: 0, index: [0; MAX_DIM] };

    pub fn parent(&self) -> Option<CubeId> {
        (self.level > 0).then(|| CubeId { level: self.level - 1, index: self.index.map(|i| i.div_euclid(2)) })
    }

    /// Ancestor `steps` levels up; `None` above the top.
    pub fn ancestor(&self, steps: u32) -> Option<CubeId> {
        (steps <= self.level).then(|| CubeId {
            level: self.level - steps,
            index: self.index.map(|i| i.div_euclid(1 << steps)),
        })
    }

    pub fn ancestor_at(&self, level: u32) -> Option<CubeId> {
        self.level.checked_sub(level).and_then(|s| self.ancestor(s))
    }

    /// Whether `self ⊂ outer` (including equality).
    pub fn is_within(&self, outer: &CubeId) -> bool {
        self.ancestor_at(outer.level).is_some_and(|a| a == *outer)
    }

    pub fn children(&self, dim: usize) -> impl Iterator<Item = CubeId> + '_ {
        // first coordinate is the most significant bit, giving lexicographic order
        (0..1usize << dim).map(move |bits| {
            let mut index = [0; MAX_DIM];
            for (k, slot) in index.iter_mut().enumerate().take(dim) {
                *slot = 2 * self.index[k] + ((bits >> (dim - 1 - k)) & 1) as i64;
            }
            CubeId { level: self.level + 1, index }
        })
    }
}

/// Image under a fixed map of the dyadic subdivision of a top cube, to a fixed depth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DyadicQuasigrid {
    map: BiLipschitzMap,
    origin: Point,
    side: f64,
    depth: u32,
}

impl DyadicQuasigrid {
    pub fn new(map: BiLipschitzMap, top: Cube, depth: u32) -> Result<Self> {
        map.check(top.dim())?;
        if depth > 20 {
            return Err(invalid("grid depth above 20 is not supported"));
        }
        Ok(Self { map, origin: top.lo, side: top.side, depth })
    }

    /// Unit-side top cube with lower corner `offset`.
    pub fn unit(map: BiLipschitzMap, offset: &[f64], depth: u32) -> Result<Self> {
        Self::new(map, Cube::from_corner(offset, 1.0)?, depth)
    }

    /// Same grid with the top cube translated by `shift`.
    pub fn translated(&self, shift: &Point) -> Self {
        Self { origin: self.origin + *shift, ..self.clone() }
    }

    pub fn map(&self) -> &BiLipschitzMap {
        &self.map
    }

    pub fn dim(&self) -> usize {
        self.origin.dim()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn side_at(&self, level: u32) -> f64 {
        self.side * 0.5f64.powi(level as i32)
    }

    fn face(&self, k: usize, i: i64, level: u32) -> f64 {
        self.origin[k] + (i as f64) * self.side_at(level)
    }

    /// Preimage box spanning `width` cubes of `level` from corner index `index`.
    fn span(&self, level: u32, index: &[i64; MAX_DIM], width: i64) -> Cube {
        let d = self.dim();
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for k in 0..d {
            lo[k] = self.face(k, index[k], level);
            hi[k] = self.face(k, index[k] + width, level);
        }
        Cube { lo: Point::raw(lo, d), hi: Point::raw(hi, d), side: width as f64 * self.side_at(level) }
    }

    pub fn base_cube(&self, id: &CubeId) -> Cube {
        self.span(id.level, &id.index, 1)
    }

    pub fn cube(&self, id: &CubeId) -> QuasiCube {
        QuasiCube { base: self.base_cube(id), map: self.map }
    }

    pub fn top(&self) -> QuasiCube {
        self.cube(&CubeId::TOP)
    }

    /// Whether `id` names a cube inside the top cube within the grid depth.
    pub fn in_grid(&self, id: &CubeId) -> bool {
        let n = 1i64 << id.level;
        id.level <= self.depth && id.index[..self.dim()].iter().all(|&i| (0..n).contains(&i))
    }

    pub fn children(&self, id: &CubeId) -> Vec<CubeId> {
        if id.level >= self.depth {
            return Vec::new();
        }
        id.children(self.dim()).collect()
    }

    /// Grid cube of `level` containing the point, found by bisection in the preimage.
    pub fn locate(&self, x: &Point, level: u32) -> Option<CubeId> {
        let y = self.map.inverse(x);
        if !self.base_cube(&CubeId::TOP).contains(&y) {
            return None;
        }
        let mut index = [0i64; MAX_DIM];
        for lev in 1..=level {
            for (k, slot) in index.iter_mut().enumerate().take(self.dim()) {
                let mid = self.face(k, 2 * *slot + 1, lev);
                *slot = 2 * *slot + i64::from(y[k] >= mid);
            }
        }
        Some(CubeId { level, index })
    }

    /// All cubes of one level, in lexicographic order.
    pub fn cubes_at_level(&self, level: u32) -> Vec<CubeId> {
        let mut out = vec![CubeId::TOP];
        for _ in 0..level {
            out = out.iter().flat_map(|c| c.children(self.dim()).collect::<Vec<_>>()).collect();
        }
        out.sort();
        out
    }

    /// Every cube from the top down to the grid depth.
    pub fn all_cubes(&self) -> Vec<CubeId> {
        (0..=self.depth).flat_map(|l| self.cubes_at_level(l)).collect()
    }

    /// Moves the top cube off atoms that sit on a face of any grid cube.
    pub fn avoiding_atoms(&self, measures: &[&DiscreteMeasure]) -> Self {
        let mut grid = self.clone();
        let nudge = self.side_at(self.depth) * 0.0137;
        for attempt in 0..64 {
            let on_face = measures.iter().flat_map(|m| m.atoms()).any(|a| {
                let y = grid.map.inverse(&a.x);
                (0..grid.dim()).any(|k| {
                    let t = (y[k] - grid.origin[k]) / grid.side_at(grid.depth);
                    t == t.round()
                })
            });
            if !on_face {
                break;
            }
            let shift = nudge * (1.0 + 0.618 * attempt as f64);
            grid.origin = self.origin.map(|k, v| v - shift * (1.0 + 0.1 * k as f64));
        }
        grid
    }

    /// Indexes the atoms of `mu` by the grid cubes containing them.
    pub fn occupancy<'a>(&'a self, mu: &'a DiscreteMeasure) -> GriddedMeasure<'a> {
        GriddedMeasure::new(self, mu)
    }
}

/// Twice-as-large cube made of `2ⁿ` adjacent grid cubes of one level,
/// not necessarily aligned with the coarser grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AltCube {
    pub level: u32,
    pub index: [i64; MAX_DIM],
}

impl AltCube {
    pub fn base(&self, grid: &DyadicQuasigrid) -> Cube {
        grid.span(self.level, &self.index, 2)
    }

    pub fn quasicube(&self, grid: &DyadicQuasigrid) -> QuasiCube {
        QuasiCube { base: self.base(grid), map: grid.map }
    }

    /// The `2ⁿ` grid cubes it is made of, in lexicographic order.
    pub fn constituents(&self, dim: usize) -> Vec<CubeId> {
        (0..1usize << dim)
            .map(|bits| {
                let mut index = self.index;
                for (k, slot) in index.iter_mut().enumerate().take(dim) {
                    *slot += ((bits >> (dim - 1 - k)) & 1) as i64;
                }
                CubeId { level: self.level, index }
            })
            .collect()
    }

    /// Whether it coincides with a grid cube one level up.
    pub fn is_dyadic(&self, dim: usize) -> bool {
        self.index[..dim].iter().all(|i| i % 2 == 0)
    }
}

/// Alternate cubes built from grid cubes of `level` that meet the top cube.
/// Those hanging over the top cube's boundary are kept so every grid cube of
/// `level` lies in exactly `2ⁿ` of them.
pub fn alternate_quasicubes(grid: &DyadicQuasigrid, level: u32) -> Vec<AltCube> {
    let d = grid.dim();
    let n = 1i64 << level;
    let mut out = vec![[0i64; MAX_DIM]];
    for k in 0..d {
        out = out
            .into_iter()
            .flat_map(|idx| {
                (-1..n).map(move |i| {
                    let mut next = idx;
                    next[k] = i;
                    next
                })
            })
            .collect();
    }
    out.into_iter().map(|index| AltCube { level, index }).collect()
}

/// `K ⊂ 3K'∖K'` and `K' ⊂ 3K∖K`.
pub fn are_neighbours(a: &QuasiCube, b: &QuasiCube) -> bool {
    a.map == b.map
        && !a.base.intersects(&b.base)
        && b.base.dilate(3.0).contains_cube(&a.base)
        && a.base.dilate(3.0).contains_cube(&b.base)
}

/// Ordered neighbour pairs among the grid cubes of `level`: distinct cubes whose
/// indices differ by at most one in every coordinate.
pub fn neighbour_pairs(grid: &DyadicQuasigrid, level: u32) -> Vec<(CubeId, CubeId)> {
    let cubes = grid.cubes_at_level(level);
    let mut out = Vec::new();
    for a in &cubes {
        for b in neighbour_ids(grid, a) {
            out.push((*a, b));
        }
    }
    out
}

/// Grid neighbours of `id` inside the top cube.
pub fn neighbour_ids(grid: &DyadicQuasigrid, id: &CubeId) -> Vec<CubeId> {
    let d = grid.dim();
    let mut out = Vec::new();
    for code in 0..3usize.pow(d as u32) {
        let mut index = id.index;
        let mut c = code;
        for slot in index.iter_mut().take(d) {
            *slot += (c % 3) as i64 - 1;
            c /= 3;
        }
        let other = CubeId { level: id.level, index };
        if other != *id && grid.in_grid(&other) {
            out.push(other);
        }
    }
    out.sort();
    out
}

pub fn is_good(grid: &DyadicQuasigrid, id: &CubeId, p: &GoodnessParams) -> bool {
    let j = grid.base_cube(id);
    let deep = p.deep();
    (p.r..=id.level).all(|steps| {
        let outer = id.ancestor(steps).expect("within level");
        deep_in_cube(&j, &grid.base_cube(&outer), deep)
    })
}

/// Goodness of the children of `id` and of its first `τ` ancestors; only
/// cubes inside the grid are scanned.
pub fn is_tau_good(grid: &DyadicQuasigrid, id: &CubeId, p: &GoodnessParams) -> bool {
    grid.children(id).iter().all(|c| is_good(grid, c, p))
        && (0..=p.tau).filter_map(|l| id.ancestor(l)).all(|a| is_good(grid, &a, p))
}

/// Outcome of a maximal deep subcube search.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DeepCollection {
    pub cubes: Vec<CubeId>,
    /// Set when nothing qualified and the search ran into the grid depth.
    pub exhausted: bool,
}

/// Where a maximal deep subcube search runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Grid(CubeId),
    Alternate(AltCube),
}

impl Region {
    pub fn base(&self, grid: &DyadicQuasigrid) -> Cube {
        match self {
            Region::Grid(id) => grid.base_cube(id),
            Region::Alternate(a) => a.base(grid),
        }
    }

    fn roots(&self, grid: &DyadicQuasigrid) -> Vec<CubeId> {
        match self {
            Region::Grid(id) => vec![*id],
            // constituents outside the top cube carry no atoms and are not grid cubes
            Region::Alternate(a) => {
                a.constituents(grid.dim()).into_iter().filter(|c| grid.in_grid(c)).collect()
            }
        }
    }
}

pub fn maximal_deep_subcubes(grid: &DyadicQuasigrid, region: Region, p: DeepParams) -> DeepCollection {
    maximal_deep_subcubes_where(grid, region, p, |_| true)
}

/// Maximal grid cubes `J ⋐ K` inside the region, skipping subtrees rejected
/// by `explore` (typically cubes without mass, whose terms vanish).
pub fn maximal_deep_subcubes_where(
    grid: &DyadicQuasigrid,
    region: Region,
    p: DeepParams,
    explore: impl Fn(&CubeId) -> bool,
) -> DeepCollection {
    let outer = region.base(grid);
    let mut found = Vec::new();
    let mut hit_floor = false;
    let mut stack: Vec<CubeId> = region.roots(grid);
    stack.reverse();
    while let Some(id) = stack.pop() {
        if !explore(&id) {
            continue;
        }
        if deep_in_cube(&grid.base_cube(&id), &outer, p) {
            found.push(id);
            continue;
        }
        let kids = grid.children(&id);
        if kids.is_empty() {
            hit_floor = true;
        }
        stack.extend(kids.into_iter().rev());
    }
    found.sort();
    DeepCollection { exhausted: found.is_empty() && hit_floor, cubes: found }
}

/// Atoms of one measure sorted into the grid cubes that contain them.
#[derive(Clone, Debug)]
pub struct GriddedMeasure<'a> {
    grid: &'a DyadicQuasigrid,
    mu: &'a DiscreteMeasure,
    leaf: Vec<Option<CubeId>>,
    cells: BTreeMap<CubeId, Cell>,
}

#[derive(Clone, Debug, Default)]
struct Cell {
    atoms: Vec<usize>,
    mass: f64,
}

impl<'a> GriddedMeasure<'a> {
    pub fn new(grid: &'a DyadicQuasigrid, mu: &'a DiscreteMeasure) -> Self {
        let leaf: Vec<_> = mu.atoms().iter().map(|a| grid.locate(&a.x, grid.depth)).collect();
        let mut cells: BTreeMap<CubeId, Cell> = BTreeMap::new();
        for (i, (cell, atom)) in leaf.iter().zip(mu.atoms()).enumerate() {
            let Some(cell) = cell else { continue };
            for level in 0..=grid.depth {
                let entry = cells.entry(cell.ancestor_at(level).expect("leaf is deepest")).or_default();
                entry.atoms.push(i);
                entry.mass += atom.mass;
            }
        }
        Self { grid, mu, leaf, cells }
    }

    pub fn grid(&self) -> &'a DyadicQuasigrid {
        self.grid
    }

    pub fn measure(&self) -> &'a DiscreteMeasure {
        self.mu
    }

    pub fn mass(&self, id: &CubeId) -> f64 {
        self.cells.get(id).map_or(0.0, |c| c.mass)
    }

    pub fn atoms(&self, id: &CubeId) -> &[usize] {
        self.cells.get(id).map_or(&[], |c| &c.atoms)
    }

    pub fn is_nonempty(&self, id: &CubeId) -> bool {
        self.cells.contains_key(id)
    }

    /// Cubes with positive mass, coarse levels first.
    pub fn nonempty_cubes(&self) -> impl Iterator<Item = &CubeId> {
        self.cells.keys()
    }

    pub fn leaf(&self, atom: usize) -> Option<CubeId> {
        self.leaf[atom]
    }

    /// Grid cube of `level` holding the atom.
    pub fn cell_of(&self, atom: usize, level: u32) -> Option<CubeId> {
        self.leaf[atom].and_then(|c| c.ancestor_at(level))
    }

    pub fn nonempty_children(&self, id: &CubeId) -> Vec<CubeId> {
        self.grid.children(id).into_iter().filter(|c| self.is_nonempty(c)).collect()
    }

    /// `𝔼_Q^μ f` for per-atom values `f`; `None` on an empty cube.
    pub fn average(&self, id: &CubeId, f: &[f64]) -> Option<f64> {
        let cell = self.cells.get(id)?;
        let atoms = self.mu.atoms();
        Some(cell.atoms.iter().map(|&i| atoms[i].mass * f[i]).sum::<f64>() / cell.mass)
    }

    pub fn center_of_mass(&self, id: &CubeId) -> Option<Point> {
        let cell = self.cells.get(id)?;
        let atoms = self.mu.atoms();
        let sum = cell
            .atoms
            .iter()
            .fold(Point::origin(self.mu.dim()), |acc, &i| acc + atoms[i].x * atoms[i].mass);
        Some(sum * (1.0 / cell.mass))
    }

    /// Whether every cell of the deepest level holds at most one atom.
    pub fn separated(&self) -> bool {
        self.cells.iter().filter(|(id, _)| id.level == self.grid.depth).all(|(_, c)| c.atoms.len() <= 1)
    }
}
