//! The fractional Riesz transform vector: kernels and their truncations,
//! operator matrices on atomic pairs, testing and weak boundedness constants,
//! the monotonicity and pivotal functionals, semi-harmonicity of the Riesz
//! potential, and reversal of energy.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::energy::energy_sq;
use crate::error::{invalid, Result};
use crate::haar::delta_norm_sq;
use crate::measure::{DiscreteMeasure, Point};
use crate::poisson::{poisson_m_weighted, poisson_standard, FracParams};
use crate::quasigeom::{CubeId, DyadicQuasigrid, GriddedMeasure, QuasiCube};

/// `K^{α,n}(w) = w/|w|^{n+1−α}`, with `K(0) = 0`.
pub fn riesz_kernel(w: &Point, p: &FracParams) -> Point {
    let r = w.norm();
    if r == 0.0 {
        return Point::origin(w.dim());
    }
    *w * r.powf(p.alpha - p.dim as f64 - 1.0)
}

/// Jacobian `∂_k K_ℓ(w) = |w|^{−p}(δ_{kℓ} − p w_ℓ w_k/|w|²)` with `p = n+1−α`.
pub fn kernel_gradient(w: &Point, p: &FracParams) -> DMatrix<f64> {
    let n = w.dim();
    let r2 = w.norm_sq();
    let e = p.dim as f64 + 1.0 - p.alpha;
    let scale = r2.powf(-e / 2.0);
    DMatrix::from_fn(n, n, |l, k| scale * (f64::from(u8::from(l == k)) - e * w[l] * w[k] / r2))
}

/// Size and smoothness constant of the Riesz kernel: `|K(w)| = |w|^{α−n}` and
/// the Jacobian has operator norm `max(1, n−α)|w|^{α−n−1}`.
pub fn kernel_constant(p: &FracParams) -> f64 {
    p.codim().max(1.0)
}

/// Largest coordinate of `K(−tu)` relative to `t^{α−n}`; at least `1/√n`.
pub fn ellipticity_ratio(u: &Point, t: f64, p: &FracParams) -> f64 {
    let k = riesz_kernel(&(*u * -t), p);
    let peak = k.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    peak / t.powf(p.alpha - p.dim as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationKind {
    /// `r^{α−n}` on `[δ,R]`, continued by its tangent lines inside `δ` and past `R`.
    Tangent,
    /// The sharp cutoff `1_{[δ,R]} r^{α−n}`.
    Cutoff,
    /// `r^{α−n}` times a smooth bump supported in `(δ,R)`.
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationProfile {
    pub delta: f64,
    pub outer: f64,
    pub params: FracParams,
    pub kind: TruncationKind,
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let (a, b) = ((-1.0 / t).exp(), (-1.0 / (1.0 - t)).exp());
    a / (a + b)
}

impl TruncationProfile {
    pub fn new(delta: f64, outer: f64, params: FracParams, kind: TruncationKind) -> Result<Self> {
        if !(delta > 0.0 && delta < outer && outer.is_finite()) {
            return Err(invalid(format!("truncation needs 0 < delta < R < inf, got ({delta}, {outer})")));
        }
        Ok(Self { delta, outer, params, kind })
    }

    /// Zero `S = R(n−α+1)/(n−α)` of the outer tangent line.
    pub fn tangent_zero(&self) -> f64 {
        let c = self.params.codim();
        self.outer * (c + 1.0) / c
    }

    fn power(&self, r: f64) -> f64 {
        r.powf(-self.params.codim())
    }

    /// Radial profile `ψ(r)`; zero at the origin for every kind.
    pub fn radial(&self, r: f64) -> f64 {
        let (d, big_r) = (self.delta, self.outer);
        if r <= 0.0 {
            return 0.0;
        }
        match self.kind {
            TruncationKind::Tangent => {
                let c = self.params.codim();
                if r < d {
                    self.power(d) * (1.0 + c * (1.0 - r / d))
                } else if r <= big_r {
                    self.power(r)
                } else {
                    let s = self.tangent_zero();
                    if r >= s {
                        0.0
                    } else {
                        self.power(big_r) * (s - r) / (s - big_r)
                    }
                }
            }
            TruncationKind::Cutoff => {
                if (d..=big_r).contains(&r) {
                    self.power(r)
                } else {
                    0.0
                }
            }
            TruncationKind::Smooth => {
                smooth_step((r - d) / d) * smooth_step((big_r - r) / (big_r / 2.0)) * self.power(r)
            }
        }
    }

    /// Truncated kernel `Ω(w)ψ(|w|)`.
    pub fn kernel(&self, w: &Point) -> Point {
        let r = w.norm();
        if r == 0.0 {
            return Point::origin(w.dim());
        }
        *w * (self.radial(r) / r)
    }

    pub fn with_kind(&self, kind: TruncationKind) -> Self {
        Self { kind, ..*self }
    }
}

/// `ψ(r)` of the tangent-line truncation.
pub fn tangent_truncation(r: f64, profile: &TruncationProfile) -> f64 {
    profile.with_kind(TruncationKind::Tangent).radial(r)
}

/// Constant in front of the dyadic shell majorant of the difference between
/// the tangent and cutoff kernels. Inside `δ` the difference is at most
/// `(n−α+1)δ^{α−n}`; on the outer shell `[2^{k−1}R, 2^kR]` the tangent line
/// at its left end, relative to the shell weight, gives the second family.
pub fn truncation_majorant_constant(profile: &TruncationProfile) -> f64 {
    let c = profile.params.codim();
    let (big_r, s) = (profile.outer, profile.tangent_zero());
    let mut best = c + 1.0;
    let mut k = 1;
    while 2f64.powi(k - 1) * big_r < s {
        let left = 2f64.powi(k - 1) * big_r;
        best = best.max(2f64.powf(2.0 * k as f64 * c) * (s - left) / (s - big_r));
        k += 1;
    }
    best
}

/// Shell majorant `Σ_k 2^{−k(n−α)} K_{2^{−k}δ}(w) + Σ_k 2^{−k(n−α)} K_{2^kR}(w)` without its constant,
/// with `K_ρ` the weight `ρ^{α−n}` on the shell ending at `ρ`.
fn shell_majorant(r: f64, profile: &TruncationProfile) -> f64 {
    let c = profile.params.codim();
    let (d, big_r) = (profile.delta, profile.outer);
    let mut total = 0.0;
    if r > 0.0 && r <= d {
        let k = (d / r).log2().floor() as i32;
        for kk in [k - 1, k, k + 1].into_iter().filter(|&kk| kk >= 0) {
            let rho = d * 2f64.powi(-kk);
            if r >= rho / 2.0 && r <= rho {
                total += 2f64.powf(-kk as f64 * c) * rho.powf(-c);
            }
        }
    }
    if r >= big_r {
        let k = (r / big_r).log2().ceil() as i32;
        for kk in [k - 1, k, k + 1].into_iter().filter(|&kk| kk >= 1) {
            let rho = big_r * 2f64.powi(kk);
            if r >= rho / 2.0 && r <= rho {
                total += 2f64.powf(-kk as f64 * c) * rho.powf(-c);
            }
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DifferenceBound {
    pub lhs: f64,
    pub rhs: f64,
}

impl DifferenceBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12)
    }
}

/// Componentwise difference of the tangent and cutoff kernels against the
/// shell majorant scaled by [`truncation_majorant_constant`].
pub fn truncation_difference_bound(w: &Point, profile: &TruncationProfile, component: usize) -> DifferenceBound {
    let r = w.norm();
    if r == 0.0 {
        return DifferenceBound { lhs: 0.0, rhs: 0.0 };
    }
    let omega = w[component] / r;
    let tangent = tangent_truncation(r, profile);
    let cutoff = profile.with_kind(TruncationKind::Cutoff).radial(r);
    DifferenceBound {
        lhs: (omega * (tangent - cutoff)).abs(),
        rhs: truncation_majorant_constant(profile) * shell_majorant(r, profile),
    }
}

/// `T_{μ,δ,R} f(x)` for one component, with `f ≡ 1` when absent.
pub fn apply_truncated(mu: &DiscreteMeasure, x: &Point, profile: &TruncationProfile, component: usize, f: Option<&[f64]>) -> f64 {
    apply_truncated_vector(mu, x, profile, f)[component]
}

pub fn apply_truncated_vector(mu: &DiscreteMeasure, x: &Point, profile: &TruncationProfile, f: Option<&[f64]>) -> Point {
    mu.atoms().iter().enumerate().fold(Point::origin(mu.dim()), |acc, (i, a)| {
        let weight = a.mass * f.map_or(1.0, |f| f[i]);
        acc + profile.kernel(&(*x - a.x)) * weight
    })
}

/// The truncated transform as a map from `ℓ²` coefficients of `L²(σ)` to
/// `L²(ω)`, one block of rows per vector component.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub matrix: DMatrix<f64>,
}

impl OperatorMatrix {
    pub fn norm(&self) -> f64 {
        if self.matrix.is_empty() {
            return 0.0;
        }
        self.matrix.clone().singular_values().max()
    }
}

pub fn operator_matrix(sigma: &DiscreteMeasure, omega: &DiscreteMeasure, profile: &TruncationProfile) -> OperatorMatrix {
    let (rows, cols, dim) = (omega.len(), sigma.len(), sigma.dim());
    let mut matrix = DMatrix::zeros(rows * dim, cols);
    for (i, x) in omega.atoms().iter().enumerate() {
        for (j, y) in sigma.atoms().iter().enumerate() {
            let k = profile.kernel(&(x.x - y.x));
            let w = (x.mass * y.mass).sqrt();
            for l in 0..dim {
                matrix[(l * rows + i, j)] = w * k[l];
            }
        }
    }
    OperatorMatrix { rows, cols, dim, matrix }
}

/// Truncation parameters over which the sups defining the norm and testing
/// constants are taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationLattice {
    pub kind: TruncationKind,
    pub pairs: Vec<(f64, f64)>,
}

fn distance_range(measures: &[&DiscreteMeasure]) -> (f64, f64) {
    let pts: Vec<Point> = measures.iter().flat_map(|m| m.atoms().iter().map(|a| a.x)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = a.dist(b);
            if d > 0.0 {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    if hi == 0.0 {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

impl TruncationLattice {
    /// A single truncation inside which every distinct pair of atoms is seen
    /// by the untruncated kernel.
    pub fn untruncated(sigma: &DiscreteMeasure, omega: &DiscreteMeasure, kind: TruncationKind) -> Self {
        let (lo, hi) = distance_range(&[sigma, omega]);
        Self { kind, pairs: vec![(lo / 2.0, 2.0 * hi)] }
    }

    /// `size × size` logarithmically spaced `(δ, R)` with `δ < R`, spanning
    /// from half the smallest atom separation to twice the diameter.
    pub fn logarithmic(sigma: &DiscreteMeasure, omega: &DiscreteMeasure, kind: TruncationKind, size: usize) -> Self {
        let (lo, hi) = distance_range(&[sigma, omega]);
        let (a, b) = ((lo / 2.0).ln(), (2.0 * hi).ln());
        let grid: Vec<f64> = (0..size.max(2)).map(|i| (a + (b - a) * i as f64 / (size.max(2) - 1) as f64).exp()).collect();
        let mut pairs = Vec::new();
        for &d in &grid {
            for &r in &grid {
                if d < r {
                    pairs.push((d, r));
                }
            }
        }
        Self { kind, pairs }
    }

    pub fn profiles(&self, params: FracParams) -> impl Iterator<Item = TruncationProfile> + '_ {
        self.pairs.iter().map(move |&(delta, outer)| TruncationProfile { delta, outer, params, kind: self.kind })
    }
}

/// A supremum over truncations and a finite family, with where it was attained.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TruncatedSup {
    pub value: f64,
    pub truncation: Option<(f64, f64)>,
    pub witness: Vec<CubeId>,
}

impl TruncatedSup {
    fn offer(&mut self, v: f64, profile: &TruncationProfile, witness: impl FnOnce() -> Vec<CubeId>) {
        if v > self.value {
            *self = Self { value: v, truncation: Some((profile.delta, profile.outer)), witness: witness() };
        }
    }
}

/// `𝔑` estimate: the largest operator norm over the lattice.
pub fn norm_constant(sigma: &DiscreteMeasure, omega: &DiscreteMeasure, params: FracParams, lattice: &TruncationLattice) -> TruncatedSup {
    let mut best = TruncatedSup::default();
    for profile in lattice.profiles(params) {
        best.offer(operator_matrix(sigma, omega, &profile).norm(), &profile, Vec::new);
    }
    best
}

/// `(1/|Q|_σ) ∫_Q |T(1_Q σ)|² dω`.
pub fn testing_term(sigma: &DiscreteMeasure, omega: &DiscreteMeasure, q: &QuasiCube, profile: &TruncationProfile) -> f64 {
    let local = sigma.restrict_to(q);
    let mass = local.total_mass();
    if mass == 0.0 {
        return 0.0;
    }
    omega
        .atoms()
        .iter()
        .filter(|a| q.contains(&a.x))
        .map(|a| a.mass * apply_truncated_vector(&local, &a.x, profile, None).norm_sq())
        .sum::<f64>()
        / mass
}

/// `𝔗²` over the σ-charged cubes of `grid`; the dual constant is this with the measures exchanged.
pub fn testing_constant(
    sigma: &DiscreteMeasure,
    omega: &DiscreteMeasure,
    grid: &DyadicQuasigrid,
    params: FracParams,
    lattice: &TruncationLattice,
) -> TruncatedSup {
    let gm = grid.occupancy(sigma);
    let family: Vec<CubeId> = gm.nonempty_cubes().copied().collect();
    let mut best = TruncatedSup::default();
    for profile in lattice.profiles(params) {
        for id in &family {
            best.offer(testing_term(sigma, omega, &grid.cube(id), &profile), &profile, || vec![*id]);
        }
    }
    best
}

/// Whether `Q ⊂ 3Q′∖Q′` or `Q′ ⊂ 3Q∖Q` with side ratio in `[1/C, C]`.
pub fn weakly_admissible(grid: &DyadicQuasigrid, q: &CubeId, q_prime: &CubeId, ratio: f64) -> bool {
    let (a, b) = (grid.base_cube(q), grid.base_cube(q_prime));
    let sides = a.side() / b.side();
    if !(1.0 / ratio..=ratio).contains(&sides) || a.intersects(&b) {
        return false;
    }
    b.dilate(3.0).contains_cube(&a) || a.dilate(3.0).contains_cube(&b)
}

/// `𝒲ℬ𝒫`: largest `|∫_Q T(1_{Q′}σ) dω| / √(|Q|_ω |Q′|_σ)` over admissible grid pairs.
pub fn weak_boundedness(
    sigma: &DiscreteMeasure,
    omega: &DiscreteMeasure,
    grid: &DyadicQuasigrid,
    params: FracParams,
    lattice: &TruncationLattice,
    ratio: f64,
) -> TruncatedSup {
    let (sg, og) = (grid.occupancy(sigma), grid.occupancy(omega));
    let sigma_cubes: Vec<CubeId> = sg.nonempty_cubes().copied().collect();
    let omega_cubes: Vec<CubeId> = og.nonempty_cubes().copied().collect();
    let mut best = TruncatedSup::default();
    for profile in lattice.profiles(params) {
        for q in &omega_cubes {
            for qp in sigma_cubes.iter().filter(|qp| weakly_admissible(grid, q, qp, ratio)) {
                let source = sigma.restrict_to(&grid.cube(qp));
                let integral = og.atoms(q).iter().fold(Point::origin(grid.dim()), |acc, &i| {
                    let a = &omega.atoms()[i];
                    acc + apply_truncated_vector(&source, &a.x, &profile, None) * a.mass
                });
                let v = integral.norm() / (og.mass(q) * sg.mass(qp)).sqrt();
                best.offer(v, &profile, || vec![*q, *qp]);
            }
        }
    }
    best
}

fn require_outside(mu: &DiscreteMeasure, q: &QuasiCube, what: &str) -> Result<()> {
    match mu.atoms().iter().position(|a| q.contains(&a.x)) {
        Some(i) => Err(invalid(format!("atom {i} of the exterior measure lies inside {what}"))),
        None => Ok(()),
    }
}

/// `Φ^α(J, μ)` with
/// `Φ² = (P^α(J,μ)/ℓ)² ‖Δ_J^ω x‖² + (P^α_{1+δ}(J,μ)/ℓ)² ‖x − m_J‖²_{L²(1_J ω)}`.
pub fn monotonicity_functional(j: &CubeId, omega: &GriddedMeasure, mu: &DiscreteMeasure, params: &FracParams) -> Result<f64> {
    let q = omega.grid().cube(j);
    require_outside(mu, &q.dilate(2.0), "2J")?;
    let l = q.side();
    let delta_sq: f64 = (0..params.dim).map(|k| delta_norm_sq(omega, j, &crate::haar::coordinate(omega, k))).sum();
    let spread = match omega.center_of_mass(j) {
        Some(m) => omega.atoms(j).iter().map(|&i| {
            let a = &omega.measure().atoms()[i];
            a.mass * (a.x - m).norm_sq()
        }).sum(),
        None => 0.0,
    };
    let p = poisson_standard(&q, mu, params) / l;
    let p_smooth = poisson_m_weighted(&q, mu, params, 1.0 + params.smoothness) / l;
    Ok((p * p * delta_sq + p_smooth * p_smooth * spread).sqrt())
}

/// `‖Δ_J^ω T μ‖_{L²(ω)}` over all vector components.
pub fn monotonicity_companion(j: &CubeId, omega: &GriddedMeasure, mu: &DiscreteMeasure, profile: &TruncationProfile) -> f64 {
    let values: Vec<Point> = omega.measure().atoms().iter().map(|a| apply_truncated_vector(mu, &a.x, profile, None)).collect();
    (0..profile.params.dim)
        .map(|k| delta_norm_sq(omega, j, &values.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .sum::<f64>()
        .sqrt()
}

/// `|⟨T ν, Ψ⟩_ω| / (‖Ψ‖_{L²(ω)} P^α(J,ν) √|J|_ω)` for `Ψ` given per ω atom and
/// supported in `J`; `ν` must avoid `γJ`.
pub fn pivotal_bound_check(
    j: &QuasiCube,
    psi: &[f64],
    omega: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    profile: &TruncationProfile,
    gamma: f64,
) -> Result<f64> {
    if psi.len() != omega.len() {
        return Err(invalid("psi needs one value per omega atom"));
    }
    require_outside(nu, &j.dilate(gamma), "gamma J")?;
    let mut pairing = Point::origin(omega.dim());
    let (mut psi_sq, mut mass) = (0.0, 0.0);
    for (a, &v) in omega.atoms().iter().zip(psi) {
        if !j.contains(&a.x) {
            continue;
        }
        pairing = pairing + apply_truncated_vector(nu, &a.x, profile, None) * (a.mass * v);
        psi_sq += a.mass * v * v;
        mass += a.mass;
    }
    let denom = psi_sq.sqrt() * poisson_standard(j, nu, &profile.params) * mass.sqrt();
    Ok(if denom == 0.0 { 0.0 } else { pairing.norm() / denom })
}

/// `Δ_{x′} |x|^β` with `β = α−n+1` and `x′` the first `ell` coordinates:
/// `β((ℓ+β−2)|x′|² + ℓ|x″|²)|x|^{β−4}`.
pub fn semiharmonic_laplacian(x: &Point, params: &FracParams, ell: usize) -> Result<f64> {
    if ell == 0 || ell > params.dim || x.dim() != params.dim {
        return Err(invalid(format!("need 1 <= ell <= {} in dimension {}", params.dim, params.dim)));
    }
    let r2 = x.norm_sq();
    if r2 == 0.0 {
        return Err(invalid("the Laplacian is singular at the origin"));
    }
    let head: f64 = x.as_slice()[..ell].iter().map(|v| v * v).sum();
    let beta = params.alpha - params.dim as f64 + 1.0;
    let l = ell as f64;
    Ok(beta * ((l + beta - 2.0) * head + l * (r2 - head)) * r2.powf((beta - 4.0) / 2.0))
}

/// Whether `(ℓ, α)` makes `|Δ_{x′}|x|^{α−n+1}|` comparable to `|x|^{α−n−1}`.
pub fn semiharmonic_admissible(dim: usize, ell: usize, alpha: f64) -> bool {
    let n = dim as f64;
    if dim < 2 || !(0.0..n).contains(&alpha) || alpha == n - 1.0 {
        return false;
    }
    if ell == dim {
        alpha != 1.0
    } else {
        (2..dim).contains(&ell) && alpha > n + 1.0 - ell as f64
    }
}

/// The same condition indexed by the plane dimension `k = ℓ−1`.
pub fn reversal_admissible(dim: usize, k: usize, alpha: f64) -> bool {
    k >= 1 && semiharmonic_admissible(dim, k + 1, alpha)
}

/// Whether `(ℓ+β−2)|x′|² + ℓ|x″|²` keeps one sign for all `x ≠ 0`.
pub fn semiharmonic_sign_constant(dim: usize, ell: usize, alpha: f64) -> bool {
    let beta = alpha - dim as f64 + 1.0;
    let a = ell as f64 + beta - 2.0;
    if ell == dim {
        a != 0.0
    } else {
        a > 0.0
    }
}

/// `∇R^{α,n}μ(z)` with eigenvalues ordered by magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct RieszGradient {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl RieszGradient {
    /// Trace of the restriction to the span of the first `ell` coordinates.
    pub fn coordinate_trace(&self, ell: usize) -> f64 {
        (0..ell).map(|i| self.matrix[(i, i)]).sum()
    }
}

/// The Jacobian of `R^{α,n}μ` at `z`, a multiple `1/β` of the Hessian of
/// `I^{α+1,n}μ(z) = ∫|z−y|^{α+1−n} dμ` when `β = α+1−n ≠ 0`.
pub fn riesz_gradient(z: &Point, mu: &DiscreteMeasure, params: &FracParams) -> Result<RieszGradient> {
    let n = params.dim;
    if z.dim() != n {
        return Err(crate::Error::DimensionMismatch { expected: n, found: z.dim() });
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, a) in mu.atoms().iter().enumerate() {
        let w = *z - a.x;
        if w.norm() == 0.0 {
            return Err(invalid(format!("atom {i} sits at the evaluation point")));
        }
        m += kernel_gradient(&w, params) * a.mass;
    }
    let matrix = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(RieszGradient { matrix, eigenvalues, eigenvectors })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ReversalCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `E(J,ω)² P^α(J,μ)²` against the ω-variance of `R^{α,n}μ` on `J`, for `μ`
/// avoiding `γJ`; `0/0` reads as 0.
pub fn energy_reversal_check(
    j: &QuasiCube,
    mu: &DiscreteMeasure,
    omega: &DiscreteMeasure,
    params: &FracParams,
    gamma: f64,
) -> Result<ReversalCheck> {
    if gamma < 2.0 {
        return Err(invalid(format!("gamma must be at least 2, got {gamma}")));
    }
    require_outside(mu, &j.dilate(gamma), "gamma J")?;
    let p = poisson_standard(j, mu, params);
    let lhs = energy_sq(j, omega) * p * p;
    let local: Vec<(f64, Point)> = omega
        .atoms()
        .iter()
        .filter(|a| j.contains(&a.x))
        .map(|a| {
            let t = mu.atoms().iter().fold(Point::origin(params.dim), |acc, y| acc + riesz_kernel(&(a.x - y.x), params) * y.mass);
            (a.mass, t)
        })
        .collect();
    let mass: f64 = local.iter().map(|(m, _)| m).sum();
    let rhs = if mass == 0.0 {
        0.0
    } else {
        let mean = local.iter().fold(Point::origin(params.dim), |acc, (m, t)| acc + *t * *m) * (1.0 / mass);
        local.iter().map(|(m, t)| m * (*t - mean).norm_sq()).sum::<f64>() / mass
    };
    let ratio = match (lhs == 0.0, rhs == 0.0) {
        (true, _) => 0.0,
        (false, true) => f64::INFINITY,
        (false, false) => lhs / rhs,
    };
    Ok(ReversalCheck { lhs, rhs, ratio })
}
