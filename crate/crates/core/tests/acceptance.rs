//! Acceptance suite: one PASS/FAIL line per criterion, with timing and the
//! worst value seen. Set `TWOWEIGHT_CALIBRATE=1` to print the corpus maxima
//! behind the frozen constants instead of asserting them.

use std::collections::{BTreeSet, HashSet};
use std::ops::RangeInclusive;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twoweight::corona::{
    carleson_check, corona_decomposition, cz_constant, cz_stopping, energy_stopping, leaf_averaged, stopping_bounds,
    validate_stopping_data, EnergyThreshold,
};
use twoweight::corpus::{generate_corpus, CorpusSpec, Generator, MeasurePair};
use twoweight::energy::{moment_spectrum, spectrum_of};
use twoweight::funcenergy::{backward_testing, build_upper_measure, forward_testing, in_tent, UpperMeasure};
use twoweight::haar::{build_haar_basis, expand, telescoping_check};
use twoweight::measure::{common_point_masses, cube_mass, greedy_depoint, punctured_mass};
use twoweight::poisson::{energy_a2_lemma_ratio, muckenhoupt_report, offset_a2};
use twoweight::riesz::{
    energy_reversal_check, norm_constant, operator_matrix, reversal_admissible, semiharmonic_admissible,
    semiharmonic_laplacian, truncation_difference_bound, TruncationKind, TruncationLattice, TruncationProfile,
};
use twoweight::{
    Atom, BiLipschitzMap, Cube, CubeId, DiscreteMeasure, DyadicQuasigrid, FracParams, GoodnessParams, Point,
    QuasiCube, WeightPair,
};

/// Largest reversal ratio on the calibration corpus (seed 1001), doubled.
const REVERSAL_C0: f64 = 2.0 * 7.22;
/// Largest `√offset A₂ / 𝔑` on the calibration corpus (seed 2001), doubled.
const NECESSITY_C: f64 = 2.0 * 4.40;

const REVERSAL_CALIBRATION_SEED: u64 = 1001;
const REVERSAL_SEED: u64 = 1002;
const NECESSITY_CALIBRATION_SEED: u64 = 2001;
const NECESSITY_SEED: u64 = 2002;

type Outcome = Result<String, String>;
type Criterion = (&'static str, f64, fn() -> Outcome);

fn calibrating() -> bool {
    std::env::var("TWOWEIGHT_CALIBRATE").is_ok_and(|v| v == "1")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pt(c: &[f64]) -> Point {
    Point::new(c).expect("finite")
}

fn random_map(r: &mut ChaCha8Rng, n: usize) -> BiLipschitzMap {
    match r.gen_range(0..3) {
        0 => BiLipschitzMap::Identity,
        1 if n >= 2 => BiLipschitzMap::Shear { amplitude: 0.05, frequency: 3.0 },
        2 if n == 2 => BiLipschitzMap::Spiral { epsilon: 0.05 },
        _ => BiLipschitzMap::Identity,
    }
}

fn unit_grid(map: BiLipschitzMap, n: usize, depth: u32) -> DyadicQuasigrid {
    DyadicQuasigrid::unit(map, &vec![0.0; n], depth).expect("grid")
}

fn random_mass(r: &mut ChaCha8Rng) -> f64 {
    10f64.powf(r.gen_range(-2.0..1.0))
}

/// One atom in each of `count` distinct leaves, so the grid separates them.
fn separated_measure(r: &mut ChaCha8Rng, grid: &DyadicQuasigrid, count: RangeInclusive<usize>) -> DiscreteMeasure {
    let n = grid.dim();
    let count = r.gen_range(count);
    let per_axis = 1i64 << grid.depth();
    let leaves = (per_axis as usize).pow(n as u32);
    let count = count.min(leaves);
    let mut chosen = HashSet::new();
    let mut atoms = Vec::new();
    while atoms.len() < count {
        let mut index = [0i64; 3];
        for c in index.iter_mut().take(n) {
            *c = r.gen_range(0..per_axis);
        }
        if !chosen.insert(index) {
            continue;
        }
        let base = grid.base_cube(&CubeId { level: grid.depth(), index });
        let lo = base.lo();
        let local: Vec<f64> = (0..n).map(|k| lo[k] + base.side() * r.gen_range(0.05..0.95)).collect();
        atoms.push(Atom { x: grid.map().forward(&pt(&local)), mass: random_mass(r) });
    }
    DiscreteMeasure::new(n, atoms).expect("measure")
}

fn uniform_measure(r: &mut ChaCha8Rng, n: usize, count: RangeInclusive<usize>) -> DiscreteMeasure {
    let count = r.gen_range(count);
    let atoms = (0..count).map(|_| {
        let c: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        Atom { x: pt(&c), mass: random_mass(r) }
    });
    DiscreteMeasure::new(n, atoms).expect("measure")
}

fn criterion_1() -> Outcome {
    let mut r = rng(1);
    let (mut parseval, mut telescope, mut useful_violations, mut bases) = (0.0f64, 0.0f64, 0usize, 0usize);
    for _ in 0..200 {
        let n = r.gen_range(1..=3);
        let depth = r.gen_range(2..=6);
        let grid = unit_grid(random_map(&mut r, n), n, depth);
        let mu = separated_measure(&mut r, &grid, 1..=200);
        let gm = grid.occupancy(&mu);
        ensure(gm.separated(), || "generator failed to separate atoms".into())?;
        let f: Vec<f64> = (0..mu.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let norm: f64 = mu.atoms().iter().zip(&f).map(|(a, v)| a.mass * v * v).sum();
        let energy = expand(&gm, &f).energy();
        parseval = parseval.max((energy - norm).abs() / norm);
        for id in gm.nonempty_cubes().filter(|c| c.level < depth) {
            let basis = build_haar_basis(&gm, id);
            bases += 1;
            for h in &basis.functions {
                for (value, mass) in h.iter().zip(&basis.child_mass) {
                    // the average over a child equals the value there
                    if value.abs() > (1.0 + 1e-12) / mass.sqrt() {
                        useful_violations += 1;
                    }
                }
            }
        }
        for _ in 0..5 {
            let atom = r.gen_range(0..mu.len());
            let leaf = gm.leaf(atom).expect("in grid");
            if leaf.level < 1 {
                continue;
            }
            let l0 = r.gen_range(1..=leaf.level);
            let q0 = leaf.ancestor_at(l0).expect("ancestor");
            let q1 = q0.parent().expect("parent");
            let q2 = q1.ancestor_at(r.gen_range(0..=q1.level)).expect("ancestor");
            telescope = telescope.max(telescoping_check(&gm, &q0, &q1, &q2, &f).map_err(|e| e.to_string())?);
        }
    }
    ensure(parseval <= 1e-9, || format!("Parseval relative error {parseval:e}"))?;
    ensure(telescope <= 1e-10, || format!("telescoping residual {telescope:e}"))?;
    ensure(useful_violations == 0, || format!("{useful_violations} useful-estimate violations"))?;
    Ok(format!("Parseval {parseval:.2e}, telescoping {telescope:.2e}, {bases} bases checked"))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut with_common = 0;
    for (i, generator) in [Generator::CommonAtoms, Generator::UniformAtoms].into_iter().enumerate() {
        for n in 1..=3usize {
            let count = if n == 1 { 84 } else { 83 };
            let spec = CorpusSpec { generator, count, seed: 20 + i as u64 * 10 + n as u64, dim: n, atoms: 14 };
            for (k, pair) in generate_corpus(&spec).map_err(|e| e.to_string())?.iter().enumerate() {
                let grid = unit_grid(BiLipschitzMap::Identity, n, if n == 3 { 4 } else { 5 });
                let alpha = (k % 4) as f64 * n as f64 / 4.0;
                let params = FracParams::new(n, alpha).expect("alpha");
                let wp = WeightPair::new(&grid, &pair.sigma, &pair.omega, params).map_err(|e| e.to_string())?;
                with_common += usize::from(!wp.common.is_empty());
                let ratio = energy_a2_lemma_ratio(&wp);
                worst = worst.max(ratio.value);
                ensure(ratio.value <= 1.0 + 1e-9, || format!("ratio {} at {:?}", ratio.value, ratio.witness))?;
            }
        }
    }
    Ok(format!("500 pairs ({with_common} with common atoms), worst term/(max{{n,3}} punct) = {worst:.4}"))
}

fn random_frame(r: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, k, |_, _| r.gen_range(-1.0..1.0));
    g.qr().q()
}

/// `Σ m |x − mean − Π(x − mean)|²` for the span of the frame's columns.
fn residual(atoms: &[Atom], frame: &DMatrix<f64>) -> f64 {
    let n = frame.nrows();
    let mass: f64 = atoms.iter().map(|a| a.mass).sum();
    let mean: Vec<f64> = (0..n).map(|k| atoms.iter().map(|a| a.mass * a.x[k]).sum::<f64>() / mass).collect();
    atoms
        .iter()
        .map(|a| {
            let v: Vec<f64> = (0..n).map(|k| a.x[k] - mean[k]).collect();
            let along: f64 = (0..frame.ncols()).map(|c| (0..n).map(|k| v[k] * frame[(k, c)]).sum::<f64>().powi(2)).sum();
            a.mass * (v.iter().map(|x| x * x).sum::<f64>() - along)
        })
        .sum()
}

/// `½(1/|J|)∬ dist(x, L₀ + y)² dμ dμ`.
fn double_integral(atoms: &[Atom], frame: &DMatrix<f64>) -> f64 {
    let n = frame.nrows();
    let mass: f64 = atoms.iter().map(|a| a.mass).sum();
    let mut s = 0.0;
    for a in atoms {
        for b in atoms {
            let v: Vec<f64> = (0..n).map(|k| a.x[k] - b.x[k]).collect();
            let along: f64 = (0..frame.ncols()).map(|c| (0..n).map(|k| v[k] * frame[(k, c)]).sum::<f64>().powi(2)).sum();
            s += a.mass * b.mass * (v.iter().map(|x| x * x).sum::<f64>() - along);
        }
    }
    0.5 * s / mass
}

fn orientation_oracle(r: &mut ChaCha8Rng, atoms: &[Atom], n: usize, k: usize) -> (f64, DMatrix<f64>) {
    let mut best = (f64::INFINITY, DMatrix::zeros(n, k));
    for _ in 0..10_000 {
        let frame = random_frame(r, n, k);
        let v = residual(atoms, &frame);
        if v < best.0 {
            best = (v, frame);
        }
    }
    let mut step = 0.05;
    while step > 1e-9 {
        let mut improved = false;
        for _ in 0..20 {
            let trial = (&best.1 + DMatrix::<f64>::from_fn(n, k, |_, _| r.gen_range(-step..step))).qr().q();
            let v = residual(atoms, &trial);
            if v < best.0 {
                best = (v, trial);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let (mut gap, mut identity) = (0.0f64, 0.0f64);
    for (n, k) in [(2usize, 1usize), (3, 1), (3, 2)] {
        for _ in 0..100 {
            let mu = uniform_measure(&mut r, n, 3..=20);
            // residual of the best k-plane: the n−k smallest covariance eigenvalues
            let eigen_k = spectrum_of(mu.atoms(), n, 1.0).moments_sq[k];
            let (oracle, frame) = orientation_oracle(&mut r, mu.atoms(), n, k);
            ensure(eigen_k <= oracle + 1e-12, || format!("eigen value {eigen_k} above oracle {oracle} (n={n}, k={k})"))?;
            gap = gap.max(oracle - eigen_k);
            let d = double_integral(mu.atoms(), &frame);
            let spread = residual(mu.atoms(), &DMatrix::zeros(n, 0));
            identity = identity.max((d - oracle).abs() / spread);
        }
    }
    ensure(gap <= 1e-6, || format!("oracle exceeds eigen value by {gap:e}"))?;
    ensure(identity <= 1e-10, || format!("double-integral form differs by {identity:e}"))?;
    Ok(format!("worst oracle gap {gap:.2e}, variance identity residual {identity:.2e}"))
}

fn fd_laplacian(x: &[f64], beta: f64, ell: usize) -> f64 {
    let u = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>().powf(beta / 2.0);
    let radius = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 2e-3 * radius;
    let mut total = 0.0;
    for k in 0..ell {
        let at = |s: f64| {
            let mut y = x.to_vec();
            y[k] += s * h;
            u(&y)
        };
        total += (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * h * h);
    }
    total
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let (mut worst, mut combos) = (0.0f64, 0usize);
    for n in 2..=3usize {
        for ell in 1..=n {
            for step in 0..(4 * n) {
                let alpha = step as f64 * 0.25 + 0.125;
                if !semiharmonic_admissible(n, ell, alpha) {
                    continue;
                }
                combos += 1;
                let params = FracParams::new(n, alpha).expect("alpha");
                let beta = alpha - n as f64 + 1.0;
                for _ in 0..100 {
                    let radius = r.gen_range(0.5..2.0);
                    let dir: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                    let x: Vec<f64> = dir.iter().map(|v| radius * v / norm).collect();
                    let closed = semiharmonic_laplacian(&pt(&x), &params, ell).map_err(|e| e.to_string())?;
                    let fd = fd_laplacian(&x, beta, ell);
                    let rel = (closed - fd).abs() / closed.abs();
                    worst = worst.max(rel);
                    ensure(rel <= 1e-6, || format!("n={n}, ell={ell}, alpha={alpha}, x={x:?}: {closed} vs {fd}"))?;
                }
            }
        }
    }
    Ok(format!("{combos} admissible (n, ell, alpha), worst relative error {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let (mut s_err, mut samples) = (0.0f64, 0usize);
    for _ in 0..50 {
        let n = r.gen_range(1..=3usize);
        let alpha = r.gen_range(0.0..n as f64 - 0.05);
        let params = FracParams::new(n, alpha).expect("alpha");
        let delta = 10f64.powf(r.gen_range(-3.0..-0.5));
        let outer = delta * 10f64.powf(r.gen_range(0.3..3.0));
        let profile = TruncationProfile::new(delta, outer, params, TruncationKind::Tangent).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let t = r.gen_range(delta..=outer);
            ensure(profile.radial(t) == t.powf(alpha - n as f64), || format!("psi({t}) differs from the power"))?;
        }
        ensure(profile.radial(delta) == delta.powf(alpha - n as f64) && profile.radial(outer) == outer.powf(alpha - n as f64), || {
            "endpoints differ".into()
        })?;
        // zero of the tangent line at R, by bisection on its own formula
        let c = n as f64 - alpha;
        let slope = -c * outer.powf(-c - 1.0);
        let line = |t: f64| outer.powf(-c) + slope * (t - outer);
        let (mut lo, mut hi) = (outer, 100.0 * outer * (c + 1.0) / c);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if line(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let expected = outer * (n as f64 - alpha + 1.0) / (n as f64 - alpha);
        s_err = s_err.max((lo - expected).abs() / expected);
        ensure((profile.tangent_zero() - expected).abs() <= 1e-12 * expected, || "tangent zero formula".into())?;
        ensure(profile.radial(expected * (1.0 + 1e-12)) == 0.0 && profile.radial(expected * (1.0 - 1e-9)) > 0.0, || {
            "profile support does not end at S".into()
        })?;
        for _ in 0..2_000 {
            let norm = 10f64.powf(r.gen_range((delta / 100.0).log10()..(20.0 * outer).log10()));
            let dir: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
            let w = pt(&dir.iter().map(|v| norm * v / len).collect::<Vec<_>>());
            let component = r.gen_range(0..n);
            let b = truncation_difference_bound(&w, &profile, component);
            samples += 1;
            ensure(b.holds(), || format!("majorant fails at |w| = {norm}: {} > {}", b.lhs, b.rhs))?;
        }
    }
    ensure(s_err <= 1e-12, || format!("root of the tangent line off by {s_err:e}"))?;
    Ok(format!("root-finding error {s_err:.1e}, {samples} majorant samples"))
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let n = r.gen_range(1..=3usize);
        let params = FracParams::new(n, r.gen_range(0.0..n as f64)).expect("alpha");
        let sigma = uniform_measure(&mut r, n, 1..=10);
        let omega = uniform_measure(&mut r, n, 1..=10);
        let kinds = [TruncationKind::Tangent, TruncationKind::Cutoff, TruncationKind::Smooth];
        let lattice = TruncationLattice::logarithmic(&sigma, &omega, *kinds.choose(&mut r).expect("kind"), 3);
        let profile = lattice.profiles(params).nth(r.gen_range(0..lattice.pairs.len())).expect("profile");
        let before = operator_matrix(&sigma, &omega, &profile).norm();
        let (s2, w2) = if r.gen_bool(0.5) {
            let i = r.gen_range(0..sigma.len());
            (sigma.with_mass(i, sigma.atoms()[i].mass * r.gen_range(0.0..1.0)), omega.clone())
        } else {
            let i = r.gen_range(0..omega.len());
            (sigma.clone(), omega.with_mass(i, omega.atoms()[i].mass * r.gen_range(0.0..1.0)))
        };
        let after = operator_matrix(&s2, &w2, &profile).norm();
        worst = worst.max(after - before);
        ensure(after <= before + 1e-10 * before.max(1.0), || format!("norm rose from {before} to {after}"))?;
        // the lattice sup is monotone as well
        let sup_before = norm_constant(&sigma, &omega, params, &lattice).value;
        let sup_after = norm_constant(&s2, &w2, params, &lattice).value;
        ensure(sup_after <= sup_before + 1e-10 * sup_before.max(1.0), || "lattice sup rose".into())?;
    }
    Ok(format!("200 perturbations, largest change {worst:.2e}"))
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let (mut worst_sigma, mut worst_omega, mut max_common) = (f64::INFINITY, f64::INFINITY, 0usize);
    for _ in 0..500 {
        let n = r.gen_range(1..=3usize);
        let shared = r.gen_range(0..=50usize);
        let common: Vec<Point> = (0..shared).map(|_| pt(&(0..n).map(|_| r.gen::<f64>()).collect::<Vec<_>>())).collect();
        let own = |r: &mut ChaCha8Rng| uniform_measure(r, n, 0..=10).atoms().to_vec();
        let mut s_atoms = own(&mut r);
        let mut w_atoms = own(&mut r);
        for p in &common {
            s_atoms.push(Atom { x: *p, mass: random_mass(&mut r) });
            w_atoms.push(Atom { x: *p, mass: random_mass(&mut r) });
        }
        let sigma = DiscreteMeasure::new(n, s_atoms).expect("sigma");
        let omega = DiscreteMeasure::new(n, w_atoms).expect("omega");
        let set = common_point_masses(&sigma, &omega).map_err(|e| e.to_string())?;
        max_common = max_common.max(set.len());
        let side = r.gen_range(0.3..1.0);
        let corner: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0 - side)).collect();
        let q = QuasiCube::identity(Cube::from_corner(&corner, side).expect("cube"));
        let (st, wt) = greedy_depoint(&sigma, &omega, &q).map_err(|e| e.to_string())?;
        let sq = cube_mass(&sigma, &q).expect("mass");
        let wq = punctured_mass(&omega, &q, &set).expect("mass");
        let (sk, wk) = (cube_mass(&st, &q).expect("mass"), cube_mass(&wt, &q).expect("mass"));
        ensure(sk >= 0.5 * sq * (1.0 - 1e-12), || format!("sigma kept {sk} of {sq}"))?;
        ensure(wk >= 0.5 * wq * (1.0 - 1e-12), || format!("omega kept {wk} of punctured {wq}"))?;
        if sq > 0.0 {
            worst_sigma = worst_sigma.min(sk / sq);
        }
        if wq > 0.0 {
            worst_omega = worst_omega.min(wk / wq);
        }
        let left = common_point_masses(&st, &wt).map_err(|e| e.to_string())?;
        ensure(left.points.iter().all(|p| !q.contains(p)), || "outputs still share an atom".into())?;
    }
    Ok(format!("kept fractions >= {worst_sigma:.3} (sigma), {worst_omega:.3} (omega); up to {max_common} common atoms"))
}

/// σ with a heavy far atom and ω clustered where σ is light, so energy stopping fires.
fn clustered_pair(r: &mut ChaCha8Rng) -> MeasurePair {
    let heavy = r.gen_range(0.02..0.2);
    let cluster = r.gen_range(0.55..0.8);
    let sigma = DiscreteMeasure::from_points(
        1,
        &[(&[heavy][..], r.gen_range(5.0..20.0)), (&[cluster + 0.011][..], r.gen_range(0.005..0.05))],
    )
    .expect("sigma");
    let pts: Vec<[f64; 1]> = (0..r.gen_range(3..7)).map(|i| [cluster + 0.02 * i as f64 + r.gen_range(0.0..0.005)]).collect();
    let mut list: Vec<(&[f64], f64)> = pts.iter().map(|p| (&p[..], 1.0)).collect();
    let far = [r.gen_range(0.25..0.45)];
    list.push((&far[..], 1.0));
    MeasurePair { sigma, omega: DiscreteMeasure::from_points(1, &list).expect("omega") }
}

fn threshold_for(wp: &WeightPair) -> EnergyThreshold {
    let m = muckenhoupt_report(wp);
    EnergyThreshold {
        c_energy: 2.0,
        energy_sq: m.energy_a2.value,
        a2: m.one_tailed_a2.value.max(m.one_tailed_a2_dual.value),
        a2_punct: m.punct_a2.value.max(m.punct_a2_dual.value),
    }
}

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let (mut recon, mut forests) = (0.0f64, 0usize);
    for _ in 0..100 {
        let n = r.gen_range(1..=3usize);
        let depth = if n == 3 { 4 } else { r.gen_range(4..=6) };
        let grid = unit_grid(random_map(&mut r, n), n, depth);
        let sigma = uniform_measure(&mut r, n, 1..=40);
        let gm = grid.occupancy(&sigma);
        let f: Vec<f64> = (0..sigma.len())
            .map(|_| if r.gen_bool(0.1) { r.gen_range(10.0..100.0) } else { r.gen_range(-1.0..1.0) })
            .collect();
        let c = [2.0, 4.0][r.gen_range(0..2)];
        let forest = cz_stopping(&f, &gm, c).map_err(|e| e.to_string())?;
        forests += usize::from(forest.len() > 1);
        let v = validate_stopping_data(&forest, &f, &gm, cz_constant(c));
        ensure(v.holds(), || format!("stopping data fails: {v:?}"))?;
        let rebuilt = corona_decomposition(&forest, &f, &gm).reconstruct(&gm);
        let target = leaf_averaged(&f, &gm);
        let scale = target.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let err = rebuilt.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        recon = recon.max(err);
    }
    ensure(recon <= 1e-12, || format!("reconstruction error {recon:e}"))?;

    let (mut carleson, mut nontrivial, mut bound_ratio) = (0.0f64, 0usize, 0.0f64);
    let uniform = generate_corpus(&CorpusSpec { generator: Generator::UniformAtoms, count: 50, seed: 80, dim: 2, atoms: 12 })
        .map_err(|e| e.to_string())?;
    let mut pairs: Vec<(usize, MeasurePair)> = uniform.into_iter().map(|p| (2, p)).collect();
    pairs.extend((0..50).map(|_| (1, clustered_pair(&mut r))));
    for (n, pair) in &pairs {
        let grid = unit_grid(BiLipschitzMap::Identity, *n, 6);
        let params = FracParams::new(*n, 0.0).expect("alpha");
        let wp = WeightPair::new(&grid, &pair.sigma, &pair.omega, params).map_err(|e| e.to_string())?;
        let g = GoodnessParams::new(3, 0.5, 1, 2.0).expect("goodness");
        let bare = EnergyThreshold { c_energy: 2.0, energy_sq: 0.0, a2: 0.0, a2_punct: 0.0 };
        for (t, is_bare) in [(threshold_for(&wp), false), (bare, true)] {
            let stops = energy_stopping(&wp, &g, t);
            let set: BTreeSet<CubeId> = stops.forest.cubes().copied().collect();
            if is_bare {
                nontrivial += usize::from(set.len() > 1);
            }
            let cl = carleson_check(&set, &wp.sigma);
            carleson = carleson.max(cl.value);
            ensure(cl.value <= 2.0 + 1e-12, || format!("Carleson ratio {} at {:?}", cl.value, cl.witness))?;
            for (s, x) in stopping_bounds(&wp, &g, &stops) {
                bound_ratio = bound_ratio.max(x / stops.threshold.max(1e-300));
                ensure(x <= stops.threshold * (1.0 + 1e-12), || {
                    format!("stopping energy {x} above {} at {s:?}", stops.threshold)
                })?;
            }
        }
    }
    ensure(nontrivial >= 10, || format!("only {nontrivial} instances stopped below the top"))?;
    Ok(format!(
        "reconstruction {recon:.1e}, {forests}/100 CZ forests branch; Carleson <= {carleson:.3}, \
         {nontrivial}/100 bare-threshold energy forests branch, stopping energy <= {bound_ratio:.3} x threshold"
    ))
}

fn tent_consequence(grid: &DyadicQuasigrid) -> Result<usize, String> {
    let cubes = grid.all_cubes();
    let mut checked = 0;
    for j in &cubes {
        let q = grid.cube(j);
        let (center, t) = (q.center(), q.side());
        for i in &cubes {
            let geometric = in_tent(grid, i, &center, t);
            if geometric != j.is_within(i) {
                return Err(format!("tent membership of {j:?} in {i:?}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Forward and backward testing by direct double sums over the atom lists.
fn testing_oracle(
    grid: &DyadicQuasigrid,
    i: &CubeId,
    sigma: &DiscreteMeasure,
    upper: &UpperMeasure,
    alpha: f64,
) -> (f64, f64) {
    let n = grid.dim() as f64;
    let e = (n + 1.0 - alpha) / 2.0;
    let ib = grid.base_cube(i);
    let inside_sigma: Vec<&Atom> = sigma.atoms().iter().filter(|a| ib.contains(&grid.map().inverse(&a.x))).collect();
    let mut forward = 0.0;
    for u in &upper.atoms {
        let mut p = 0.0;
        for a in &inside_sigma {
            let d2: f64 = (0..grid.dim()).map(|k| (u.center[k] - a.x[k]).powi(2)).sum();
            p += a.mass * u.height / (u.height * u.height + d2).powf(e);
        }
        forward += p * p * u.weight / (u.height * u.height);
    }
    let tent: Vec<_> = upper
        .atoms
        .iter()
        .filter(|u| u.height <= ib.side() && ib.contains(&grid.map().inverse(&u.center)))
        .collect();
    let mut backward = 0.0;
    for a in sigma.atoms() {
        let mut q = 0.0;
        for u in &tent {
            let d2: f64 = (0..grid.dim()).map(|k| (u.center[k] - a.x[k]).powi(2)).sum();
            q += u.height * u.height / (u.height * u.height + d2).powf(e) * u.weight / (u.height * u.height);
        }
        backward += a.mass * q * q;
    }
    (forward, backward)
}

fn criterion_9() -> Outcome {
    let mut r = rng(9);
    let mut tent_pairs = 0;
    for (n, depth) in [(1usize, 6u32), (2, 6), (3, 4)] {
        tent_pairs += tent_consequence(&unit_grid(BiLipschitzMap::Identity, n, depth))?;
    }
    tent_pairs += tent_consequence(&unit_grid(BiLipschitzMap::Shear { amplitude: 0.05, frequency: 3.0 }, 2, 5))?;
    let (mut identity, mut oracle_err, mut charged) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..50 {
        let n = r.gen_range(1..=2usize);
        let grid = unit_grid(random_map(&mut r, n), n, 5);
        let alpha = r.gen_range(0.0..n as f64);
        let sigma = uniform_measure(&mut r, n, 1..=10);
        let omega = uniform_measure(&mut r, n, 2..=10);
        let params = FracParams::new(n, alpha).expect("alpha");
        let wp = WeightPair::new(&grid, &sigma, &omega, params).map_err(|e| e.to_string())?;
        let f: Vec<f64> = (0..sigma.len()).map(|_| r.gen_range(0.01..10.0)).collect();
        let forest = cz_stopping(&f, &wp.sigma, 2.0).map_err(|e| e.to_string())?;
        let upper = build_upper_measure(&wp, &forest, &GoodnessParams::new(3, 0.5, 1, 2.0).expect("goodness"));
        charged += usize::from(upper.atoms.iter().any(|a| a.weight > 0.0));
        for i in grid.all_cubes().iter().filter(|c| c.level <= 3) {
            let combinatorial: f64 = upper.atoms.iter().filter(|a| a.cube.is_within(i)).map(|a| a.weight).sum();
            let geometric = upper.tent_mass(&grid, i);
            identity = identity.max((geometric - combinatorial).abs() / combinatorial.max(1e-300).max(geometric));
            let fw = forward_testing(i, &sigma, &upper, &grid, &params);
            let bw = backward_testing(i, &sigma, &upper, &grid, &params);
            let (fo, bo) = testing_oracle(&grid, i, &sigma, &upper, alpha);
            for (got, want) in [(fw.total, fo), (bw.value, bo)] {
                let err = (got - want).abs() / want.abs().max(1e-300);
                if want != 0.0 || got != 0.0 {
                    oracle_err = oracle_err.max(err);
                }
            }
        }
    }
    ensure(identity <= 1e-10, || format!("tent mass identity off by {identity:e}"))?;
    ensure(oracle_err <= 1e-9, || format!("testing integrals off by {oracle_err:e}"))?;
    ensure(charged >= 10, || format!("only {charged} instances carried upper mass"))?;
    Ok(format!(
        "{tent_pairs} tent pairs exact; tent mass identity {identity:.1e}; oracle error {oracle_err:.1e} ({charged}/50 charged)"
    ))
}

/// `(J, ω, μ)` for the reversal suite: ω an isotropic configuration, μ a few atoms beyond `2γJ`.
fn reversal_instance(pair: &MeasurePair, r: &mut ChaCha8Rng, gamma: f64) -> (QuasiCube, DiscreteMeasure) {
    let n = pair.omega.dim();
    let atoms = pair.omega.atoms();
    let lo: Vec<f64> = (0..n).map(|k| atoms.iter().map(|a| a.x[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..n).map(|k| atoms.iter().map(|a| a.x[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (a + b) / 2.0).collect();
    let side = 1.1 * lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let j = QuasiCube::identity(Cube::new(&center, side).expect("cube"));
    let mu_atoms: Vec<Atom> = (0..r.gen_range(1..=3))
        .map(|_| {
            let dir: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
            let reach = gamma * side * r.gen_range(1.0..4.0);
            Atom { x: pt(&(0..n).map(|k| center[k] + reach * dir[k] / len).collect::<Vec<_>>()), mass: random_mass(r) }
        })
        .collect();
    (j, DiscreteMeasure::new(n, mu_atoms).expect("mu"))
}

fn reversal_cases() -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for n in 2..=3usize {
        for k in 1..n {
            for step in 0..(4 * n) {
                let alpha = step as f64 * 0.25 + 0.125;
                if reversal_admissible(n, k, alpha) {
                    out.push((n, k, alpha));
                }
            }
        }
    }
    out
}

fn reversal_corpus(seed: u64, generator: Generator) -> Result<Vec<f64>, String> {
    let gamma = 8.0;
    let cases = reversal_cases();
    let mut r = rng(seed);
    let mut ratios = Vec::new();
    for i in 0..100 {
        let (n, k, alpha) = cases[i % cases.len()];
        let spec = CorpusSpec { generator, count: 1, seed: seed * 1000 + i as u64, dim: n, atoms: 8 };
        let pair = generate_corpus(&spec).map_err(|e| e.to_string())?.remove(0);
        let (j, mu) = reversal_instance(&pair, &mut r, gamma);
        let params = FracParams::new(n, alpha).expect("alpha");
        if generator == Generator::IsotropicDispersed {
            let dispersion = moment_spectrum(&j, &pair.omega).ratio(k).unwrap_or(0.0);
            ensure(dispersion >= 0.3, || format!("instance {i} is not dispersed: {dispersion}"))?;
        }
        ratios.push(energy_reversal_check(&j, &mu, &pair.omega, &params, gamma).map_err(|e| e.to_string())?.ratio);
    }
    Ok(ratios)
}

fn criterion_10() -> Outcome {
    if calibrating() {
        let max = reversal_corpus(REVERSAL_CALIBRATION_SEED, Generator::IsotropicDispersed)?.into_iter().fold(0.0, f64::max);
        println!("calibration: reversal max {max}");
    }
    let ratios = reversal_corpus(REVERSAL_SEED, Generator::IsotropicDispersed)?;
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    ensure(worst.is_finite() && worst <= REVERSAL_C0, || format!("reversal ratio {worst} above {REVERSAL_C0}"))?;
    let line = reversal_corpus(REVERSAL_SEED, Generator::LineConcentrated)?;
    let line_worst = line.iter().copied().fold(0.0, f64::max);
    Ok(format!(
        "dispersed worst {worst:.4} <= C0 = {REVERSAL_C0}; line-concentrated (reported only) worst {line_worst:.3e}"
    ))
}

fn necessity_ratios(seed: u64) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (g, generator) in [Generator::UniformAtoms, Generator::CommonAtoms].into_iter().enumerate() {
        for n in 1..=2usize {
            let spec = CorpusSpec { generator, count: 50, seed: seed * 10 + (2 * g + n) as u64, dim: n, atoms: 8 };
            for (k, pair) in generate_corpus(&spec).map_err(|e| e.to_string())?.iter().enumerate() {
                let grid = unit_grid(BiLipschitzMap::Identity, n, 4);
                let params = FracParams::new(n, (k % 4) as f64 * n as f64 / 4.0).expect("alpha");
                let wp = WeightPair::new(&grid, &pair.sigma, &pair.omega, params).map_err(|e| e.to_string())?;
                let offset = offset_a2(&wp, 0..=grid.depth()).value.sqrt();
                let lattice = TruncationLattice::logarithmic(&pair.sigma, &pair.omega, TruncationKind::Tangent, 4);
                let norm = norm_constant(&pair.sigma, &pair.omega, params, &lattice).value;
                out.push(match (offset == 0.0, norm == 0.0) {
                    (true, _) => 0.0,
                    (false, true) => f64::INFINITY,
                    (false, false) => offset / norm,
                });
            }
        }
    }
    Ok(out)
}

fn criterion_11() -> Outcome {
    if calibrating() {
        let max = necessity_ratios(NECESSITY_CALIBRATION_SEED)?.into_iter().fold(0.0, f64::max);
        println!("calibration: necessity max {max}");
    }
    let ratios = necessity_ratios(NECESSITY_SEED)?;
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    ensure(worst <= NECESSITY_C, || format!("sqrt(offset A2)/norm = {worst} above {NECESSITY_C}"))?;
    Ok(format!("{} pairs, worst ratio {worst:.4} <= C = {NECESSITY_C}", ratios.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("Haar suite", 60.0, criterion_1),
        ("energy A2 lemma", 120.0, criterion_2),
        ("variance identity", 120.0, criterion_3),
        ("semi-harmonicity", 30.0, criterion_4),
        ("truncation suite", 30.0, criterion_5),
        ("operator-norm monotonicity", 60.0, criterion_6),
        ("greedy depoint", 30.0, criterion_7),
        ("corona suite", 120.0, criterion_8),
        ("functional-energy identities", 60.0, criterion_9),
        ("reversal suite", 120.0, criterion_10),
        ("necessity direction", 120.0, criterion_11),
    ];
    let only: Option<usize> = std::env::var("TWOWEIGHT_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, limit, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(_) if secs > *limit => Err(format!("took {secs:.1} s, limit {limit} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name} ({secs:.2} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name} ({secs:.2} s): {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
