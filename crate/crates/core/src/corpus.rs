//! Seeded random weight pairs on the unit cube `[0,1)ⁿ`.
//!
//! Instance `i` draws from its own ChaCha stream, so a corpus of `count`
//! pairs is a prefix of every larger corpus with the same seed.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measure::{check_dim, Atom, DiscreteMeasure, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    UniformAtoms,
    /// Uniform atoms plus points carried by both measures.
    CommonAtoms,
    /// ω sits within a tiny neighbourhood of a random line.
    LineConcentrated,
    /// ω is a randomly rotated cross-polytope, so every covariance eigenvalue agrees.
    IsotropicDispersed,
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformAtoms => "uniform-atoms",
            Self::CommonAtoms => "common-atoms",
            Self::LineConcentrated => "line-concentrated",
            Self::IsotropicDispersed => "isotropic-dispersed",
        }
    }
}

fn default_atoms() -> usize {
    12
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub generator: Generator,
    pub count: usize,
    pub seed: u64,
    pub dim: usize,
    /// Upper bound on the atoms drawn per measure.
    #[serde(default = "default_atoms")]
    pub atoms: usize,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim)?;
        if self.atoms == 0 {
            return Err(invalid("corpus atoms must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurePair {
    pub sigma: DiscreteMeasure,
    pub omega: DiscreteMeasure,
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<MeasurePair>> {
    spec.validate()?;
    (0..spec.count).map(|i| generate_instance(spec, i)).collect()
}

pub fn generate_instance(spec: &CorpusSpec, index: usize) -> Result<MeasurePair> {
    spec.validate()?;
    let mut rng = instance_rng(spec.seed, index);
    let n = spec.dim;
    let sigma = uniform(&mut rng, n, spec.atoms);
    let omega = match spec.generator {
        Generator::UniformAtoms => uniform(&mut rng, n, spec.atoms),
        Generator::CommonAtoms => {
            let own = uniform(&mut rng, n, spec.atoms);
            let shared = rng.gen_range(1..=spec.atoms);
            let extra: Vec<Atom> = (0..shared).map(|_| random_atom(&mut rng, n)).collect();
            let sigma = with_atoms(&sigma, extra.iter().map(|a| Atom { x: a.x, mass: random_mass(&mut rng) }))?;
            let omega = with_atoms(&own, extra)?;
            return Ok(MeasurePair { sigma, omega });
        }
        Generator::LineConcentrated => line_concentrated(&mut rng, n, spec.atoms.max(2)),
        Generator::IsotropicDispersed => cross_polytope(&mut rng, n),
    };
    Ok(MeasurePair { sigma: DiscreteMeasure::new(n, sigma)?, omega: DiscreteMeasure::new(n, omega)? })
}

/// Independent stream per instance.
pub fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_mass(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.gen_range(-2.0..1.0))
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Point {
    let c: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    Point::new(&c).expect("finite")
}

fn random_atom(rng: &mut ChaCha8Rng, n: usize) -> Atom {
    Atom { x: random_point(rng, n), mass: random_mass(rng) }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, max_atoms: usize) -> Vec<Atom> {
    let count = rng.gen_range(1..=max_atoms);
    (0..count).map(|_| random_atom(rng, n)).collect()
}

fn with_atoms(base: &[Atom], extra: impl IntoIterator<Item = Atom>) -> Result<DiscreteMeasure> {
    let dim = base[0].x.dim();
    DiscreteMeasure::new(dim, base.iter().copied().chain(extra))
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

fn line_concentrated(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Atom> {
    let base: Vec<f64> = (0..n).map(|_| rng.gen_range(0.4..0.6)).collect();
    let dir = unit_vector(rng, n);
    (0..count)
        .map(|_| {
            let s = rng.gen_range(-0.3..0.3);
            let c: Vec<f64> = (0..n).map(|k| base[k] + s * dir[k] + rng.gen_range(-1e-6..1e-6)).collect();
            Atom { x: Point::new(&c).expect("finite"), mass: random_mass(rng) }
        })
        .collect()
}

/// `±r·u_k` around a random center, `u` a random orthonormal frame, equal masses.
fn cross_polytope(rng: &mut ChaCha8Rng, n: usize) -> Vec<Atom> {
    let gauss = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let frame = gauss.qr().q();
    let center: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..0.7)).collect();
    let radius = rng.gen_range(0.02..0.1);
    let mass = random_mass(rng);
    (0..n)
        .flat_map(|k| [1.0, -1.0].map(|sign| (k, sign)))
        .map(|(k, sign)| {
            let c: Vec<f64> = (0..n).map(|r| center[r] + sign * radius * frame[(r, k)]).collect();
            Atom { x: Point::new(&c).expect("finite"), mass }
        })
        .collect()
}
