//! Finite atomic measures on R^n (n ≤ 3) and point-mass bookkeeping.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Index, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quasigeom::QuasiCube;

pub const MAX_DIM: usize = 3;

/// A point of R^n stored inline; unused trailing slots are kept at zero.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        check_dim(coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { coords: c, dim: coords.len() })
    }

    /// Builds a point from an array without validation; for internal arithmetic.
    pub(crate) fn raw(coords: [f64; MAX_DIM], dim: usize) -> Self {
        Self { coords, dim }
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: [0.0; MAX_DIM], dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (k, slot) in c.iter_mut().enumerate().take(self.dim) {
            *slot = f(k, self.coords[k]);
        }
        Point::raw(c, self.dim)
    }

    /// Bit pattern used for exact coordinate equality (with -0.0 folded into 0.0).
    pub fn key(&self) -> [u64; MAX_DIM] {
        let mut k = [0u64; MAX_DIM];
        for (slot, &c) in k.iter_mut().zip(&self.coords) {
            *slot = if c == 0.0 { 0 } else { c.to_bits() };
        }
        k
    }

    pub fn lex_cmp(&self, other: &Point) -> std::cmp::Ordering {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.as_slice()[k]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        self.map(|k, c| c + rhs.coords[k])
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        self.map(|k, c| c - rhs.coords[k])
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        self.map(|_, c| c * s)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

pub fn check_dim(dim: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Point,
    pub mass: f64,
}

/// A positive measure with finitely many atoms at distinct points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

#[derive(Deserialize)]
struct MeasureFile {
    dim: usize,
    atoms: Vec<RawAtom>,
}

#[derive(Deserialize)]
struct RawAtom {
    x: Vec<f64>,
    mass: f64,
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = MeasureFile::deserialize(d)?;
        DiscreteMeasure::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl DiscreteMeasure {
    /// Validates the atoms and merges repeated points by adding their masses.
    pub fn new(dim: usize, atoms: impl IntoIterator<Item = Atom>) -> Result<Self> {
        check_dim(dim)?;
        let mut merged: Vec<Atom> = Vec::new();
        let mut slot: HashMap<[u64; MAX_DIM], usize> = HashMap::new();
        for (index, atom) in atoms.into_iter().enumerate() {
            if atom.x.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: atom.x.dim() });
            }
            if !(atom.mass > 0.0 && atom.mass.is_finite()) {
                return Err(Error::InvalidMass { index, mass: atom.mass });
            }
            match slot.get(&atom.x.key()) {
                Some(&i) => merged[i].mass += atom.mass,
                None => {
                    slot.insert(atom.x.key(), merged.len());
                    merged.push(atom);
                }
            }
        }
        Ok(Self { dim, atoms: merged })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, atoms: Vec::new() }
    }

    pub fn from_points(dim: usize, pts: &[(&[f64], f64)]) -> Result<Self> {
        let mut atoms = Vec::with_capacity(pts.len());
        for (index, (x, mass)) in pts.iter().enumerate() {
            let x = Point::new(x).map_err(|_| Error::NonFiniteAtom { index })?;
            atoms.push(Atom { x, mass: *mass });
        }
        Self::new(dim, atoms)
    }

    fn from_file(file: MeasureFile) -> Result<Self> {
        check_dim(file.dim)?;
        let mut atoms = Vec::with_capacity(file.atoms.len());
        for (index, raw) in file.atoms.into_iter().enumerate() {
            if raw.x.len() != file.dim {
                return Err(Error::DimensionMismatch { expected: file.dim, found: raw.x.len() });
            }
            if !(raw.mass > 0.0 && raw.mass.is_finite()) {
                return Err(Error::InvalidMass { index, mass: raw.mass });
            }
            let x = Point::new(&raw.x).map_err(|_| Error::NonFiniteAtom { index })?;
            atoms.push(Atom { x, mass: raw.mass });
        }
        Self::new(file.dim, atoms)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Mass sitting exactly at `p`.
    pub fn mass_at(&self, p: &Point) -> f64 {
        let key = p.key();
        self.atoms.iter().find(|a| a.x.key() == key).map_or(0.0, |a| a.mass)
    }

    pub fn restrict(&self, keep: impl Fn(&Atom) -> bool) -> Self {
        Self { dim: self.dim, atoms: self.atoms.iter().copied().filter(|a| keep(a)).collect() }
    }

    pub fn restrict_to(&self, q: &QuasiCube) -> Self {
        self.restrict(|a| q.contains(&a.x))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0, "scale factor must be positive");
        Self {
            dim: self.dim,
            atoms: self.atoms.iter().map(|a| Atom { x: a.x, mass: a.mass * factor }).collect(),
        }
    }

    /// Same atoms with one mass replaced; a zero mass removes the atom.
    pub fn with_mass(&self, index: usize, mass: f64) -> Self {
        let mut atoms = self.atoms.clone();
        if mass > 0.0 {
            atoms[index].mass = mass;
        } else {
            atoms.remove(index);
        }
        Self { dim: self.dim, atoms }
    }

    pub fn without_points(&self, pts: &[Point]) -> Self {
        let keys: Vec<_> = pts.iter().map(Point::key).collect();
        self.restrict(|a| !keys.contains(&a.x.key()))
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.mass * f(&a.x)).sum()
    }

    pub(crate) fn check_same_dim(&self, dim: usize) -> Result<()> {
        if self.dim == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: dim, found: self.dim })
        }
    }
}

/// Points carrying positive mass for both measures of a pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CommonPointSet {
    pub points: Vec<Point>,
}

impl CommonPointSet {
    pub fn contains(&self, p: &Point) -> bool {
        let key = p.key();
        self.points.iter().any(|q| q.key() == key)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

pub fn cube_mass(mu: &DiscreteMeasure, q: &QuasiCube) -> Result<f64> {
    mu.check_same_dim(q.dim())?;
    Ok(mu.atoms.iter().filter(|a| q.contains(&a.x)).map(|a| a.mass).sum())
}

/// Intersection of supports by exact coordinate equality, in `sigma`'s atom order.
pub fn common_point_masses(sigma: &DiscreteMeasure, omega: &DiscreteMeasure) -> Result<CommonPointSet> {
    sigma.check_same_dim(omega.dim)?;
    let keys: std::collections::HashSet<_> = omega.atoms.iter().map(|a| a.x.key()).collect();
    Ok(CommonPointSet {
        points: sigma.atoms.iter().filter(|a| keys.contains(&a.x.key())).map(|a| a.x).collect(),
    })
}

/// Heaviest atom of `mu` inside `q` among the common points; ties go to the
/// lexicographically smallest point.
fn heaviest_common(mu: &DiscreteMeasure, q: &QuasiCube, common: &CommonPointSet) -> Option<usize> {
    mu.atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| q.contains(&a.x) && common.contains(&a.x))
        .max_by(|(_, a), (_, b)| a.mass.total_cmp(&b.mass).then_with(|| b.x.lex_cmp(&a.x)))
        .map(|(i, _)| i)
}

/// `|Q|_mu` minus the largest mass `mu` places on a common point inside `Q`.
pub fn punctured_mass(mu: &DiscreteMeasure, q: &QuasiCube, common: &CommonPointSet) -> Result<f64> {
    let total = cube_mass(mu, q)?;
    let top = heaviest_common(mu, q, common).map_or(0.0, |i| mu.atoms[i].mass);
    Ok((total - top).max(0.0))
}

pub fn remove_largest_common_atom(
    mu: &DiscreteMeasure,
    q: &QuasiCube,
    common: &CommonPointSet,
) -> Result<DiscreteMeasure> {
    mu.check_same_dim(q.dim())?;
    Ok(match heaviest_common(mu, q, common) {
        Some(i) => {
            let mut atoms = mu.atoms.clone();
            atoms.remove(i);
            DiscreteMeasure { dim: mu.dim, atoms }
        }
        None => mu.clone(),
    })
}

/// Splits the common atoms inside `q` between the two measures by alternately
/// taking the heaviest remaining atom for sigma, then for omega. Each measure
/// keeps its own picks; the other measure loses them. Both results are
/// restricted to `q`.
pub fn greedy_depoint(
    sigma: &DiscreteMeasure,
    omega: &DiscreteMeasure,
    q: &QuasiCube,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let common = common_point_masses(sigma, omega)?;
    let sigma_q = sigma.restrict_to(q);
    let omega_q = omega.restrict_to(q);
    let mut pool: Vec<(Point, f64, f64)> = common
        .points
        .iter()
        .filter(|p| q.contains(p))
        .map(|p| (*p, sigma_q.mass_at(p), omega_q.mass_at(p)))
        .collect();

    let mut sigma_picks = Vec::new();
    let mut omega_picks = Vec::new();
    let mut sigma_turn = true;
    while !pool.is_empty() {
        // max_by returns the last maximum; scan in reverse so ties resolve to the lowest index
        let best = pool
            .iter()
            .enumerate()
            .rev()
            .max_by(|(_, a), (_, b)| {
                if sigma_turn {
                    a.1.total_cmp(&b.1)
                } else {
                    a.2.total_cmp(&b.2)
                }
            })
            .map(|(i, _)| i)
            .expect("pool is nonempty");
        let (p, _, _) = pool.remove(best);
        if sigma_turn {
            sigma_picks.push(p);
        } else {
            omega_picks.push(p);
        }
        sigma_turn = !sigma_turn;
    }
    Ok((sigma_q.without_points(&omega_picks), omega_q.without_points(&sigma_picks)))
}
