//! Evaluation of one scenario: every instance in parallel, assembly in order.

use std::collections::BTreeSet;

use anyhow::Result;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use twoweight::corona::{
    carleson_check, cz_constant, cz_stopping, energy_stopping, stopping_bounds, validate_stopping_data, EnergyThreshold,
    StoppingValidation,
};
use twoweight::corpus::{generate_corpus, instance_rng, MeasurePair};
use twoweight::energy::{is_k_energy_dispersed, moment_spectrum, stopping_energy, strong_energy_constant, good_cubes, EnergyReport};
use twoweight::funcenergy::{backward_testing, build_upper_measure, forward_testing, functional_energy};
use twoweight::poisson::{energy_a2_lemma_ratio, muckenhoupt_report, MuckenhouptReport, Supremum};
use twoweight::riesz::{
    energy_reversal_check, norm_constant, reversal_admissible, testing_constant, weak_boundedness, ReversalCheck,
    TruncatedSup, TruncationLattice,
};
use twoweight::{Atom, Cube, CubeId, DiscreteMeasure, DyadicQuasigrid, Point, QuasiCube, WeightPair};

use crate::report::{Check, InstanceReport, Report};
use crate::scenario::{Scenario, Suite};

const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OperatorReport {
    /// `𝔑` over the truncation lattice.
    pub norm: TruncatedSup,
    /// The same for `T_ω : L²(ω) → L²(σ)`; vector output makes this differ from `𝔑`.
    pub norm_dual: TruncatedSup,
    /// `𝔗²` and `(𝔗*)²` over σ-charged (resp. ω-charged) grid cubes.
    pub testing_sq: TruncatedSup,
    pub testing_dual_sq: TruncatedSup,
    pub weak_boundedness: TruncatedSup,
    pub truncation_family: String,
    pub cube_family: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoronaReport {
    pub cz_stopping_cubes: usize,
    pub cz_validation: StoppingValidation,
    pub energy_stopping_cubes: usize,
    pub energy_threshold: f64,
    pub closure_rounds: usize,
    pub carleson: Supremum,
    /// Largest `X_α(𝒞_S)²` over stopping cubes.
    pub stopping_bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub upper_atoms: usize,
    /// Lower estimate of `𝔉²`.
    pub functional_energy_sq: f64,
    pub power_iterations: usize,
    /// Largest `|local + global − total|` of the forward testing split.
    pub split_residual: f64,
    /// Largest `∫ℚ²dσ / ∫_Î t² dμ̄` over σ-charged grid cubes.
    pub backward_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReversalReport {
    pub admissible: bool,
    pub dispersion: f64,
    pub check: ReversalCheck,
    pub cube: Option<Cube>,
}

fn lattice(scenario: &Scenario, pair: &MeasurePair) -> TruncationLattice {
    let kind = scenario.truncation.kind;
    if scenario.truncation.size <= 1 {
        TruncationLattice::untruncated(&pair.sigma, &pair.omega, kind)
    } else {
        TruncationLattice::logarithmic(&pair.sigma, &pair.omega, kind, scenario.truncation.size)
    }
}

/// Smallest axis cube around the ω atoms, with a margin, for the reversal suite.
fn enclosing_cube(omega: &DiscreteMeasure) -> Option<Cube> {
    let n = omega.dim();
    let atoms = omega.atoms();
    if atoms.is_empty() {
        return None;
    }
    let lo: Vec<f64> = (0..n).map(|k| atoms.iter().map(|a| a.x[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..n).map(|k| atoms.iter().map(|a| a.x[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (a + b) / 2.0).collect();
    let spread = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    Cube::new(&center, 1.1 * spread.max(1e-6)).ok()
}

fn reversal(scenario: &Scenario, pair: &MeasurePair, index: usize) -> Result<Option<ReversalReport>> {
    let params = scenario.params();
    let s = &scenario.settings;
    let Some(base) = enclosing_cube(&pair.omega) else { return Ok(None) };
    let j = QuasiCube::identity(base);
    let dispersion = moment_spectrum(&j, &pair.omega).ratio(s.reversal_k).unwrap_or(0.0);
    // one unit atom far outside γJ, in a direction drawn from the instance stream
    let mut rng = instance_rng(scenario.corpus.map_or(0, |c| c.seed) ^ 0x5eed, index);
    let dir: Vec<f64> = (0..params.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
    let reach = 2.0 * s.reversal_gamma * base.side();
    let c = base.center();
    let far: Vec<f64> = (0..params.dim).map(|k| c[k] + reach * dir[k] / norm).collect();
    let mu = DiscreteMeasure::new(params.dim, [Atom { x: Point::new(&far)?, mass: 1.0 }])?;
    let check = energy_reversal_check(&j, &mu, &pair.omega, &params, s.reversal_gamma)?;
    Ok(Some(ReversalReport {
        admissible: reversal_admissible(params.dim, s.reversal_k, params.alpha),
        dispersion,
        check,
        cube: Some(base),
    }))
}

fn evaluate(scenario: &Scenario, grid: &DyadicQuasigrid, pair: &MeasurePair, index: usize) -> Result<InstanceReport> {
    let params = scenario.params();
    let suites = scenario.suites();
    let s = &scenario.settings;
    let wp = WeightPair::new(grid, &pair.sigma, &pair.omega, params)?;
    let mut out = InstanceReport { index, sigma_atoms: pair.sigma.len(), omega_atoms: pair.omega.len(), ..Default::default() };
    let n = params.dim;

    let mut muck: Option<MuckenhouptReport> = None;
    if suites.contains(&Suite::Muckenhoupt) || suites.contains(&Suite::Necessity) || suites.contains(&Suite::Corona) {
        muck = Some(muckenhoupt_report(&wp));
    }
    if suites.contains(&Suite::Muckenhoupt) {
        let m = muck.as_ref().expect("computed");
        let lemma = energy_a2_lemma_ratio(&wp);
        out.checks.push(Check::asserted(
            "energy-a2-lemma",
            lemma.value,
            1.0,
            format!("cube {:?}; energy term over max{{n,3}} times the punctured sup of its subtree", lemma.witness),
        ));
        let rhs = m.one_tailed_a2.value + m.energy_a2.value;
        let ratio = if m.plugged_energy_a2.value == 0.0 { 0.0 } else { m.plugged_energy_a2.value / rhs };
        out.checks.push(Check::optional(
            "plugged-energy-a2",
            ratio,
            scenario.bounds.plugged_energy_a2,
            format!("cube {:?}; plugged over one-tailed plus energy", m.plugged_energy_a2.witness),
        ));
        out.muckenhoupt = Some(m.clone());
    }

    if suites.contains(&Suite::Energy) {
        let dual = wp.swapped();
        let good = good_cubes(&wp, &scenario.goodness);
        let stops = energy_stopping(&wp, &scenario.goodness, threshold(&wp, muck.as_ref(), s.energy_constant));
        let stopping_energy = stops
            .forest
            .cubes()
            .map(|f| {
                let corona = stops.forest.corona(f, &wp.sigma);
                (*f, stopping_energy(&wp, &corona, f, &scenario.goodness, &good).value)
            })
            .collect();
        let family: Vec<QuasiCube> = wp.omega.nonempty_cubes().map(|c| grid.cube(c)).collect();
        let dispersion_ratios = (0..n).map(|k| is_k_energy_dispersed(&pair.omega, k, 0.0, &family).worst_ratio).collect();
        let seed = scenario.corpus.map_or(0, |c| c.seed);
        out.energy = Some(EnergyReport {
            strong_energy: strong_energy_constant(&wp, &scenario.goodness, s.strong_energy_budget, seed),
            strong_energy_dual: strong_energy_constant(&dual, &scenario.goodness, s.strong_energy_budget, seed),
            stopping_energy,
            dispersion_ratios,
        });
    }

    let mut norm = None;
    if suites.contains(&Suite::Operator) || suites.contains(&Suite::Necessity) {
        let lat = lattice(scenario, pair);
        let nrm = norm_constant(&pair.sigma, &pair.omega, params, &lat);
        norm = Some(nrm.value);
        if suites.contains(&Suite::Operator) {
            let t = testing_constant(&pair.sigma, &pair.omega, grid, params, &lat);
            let td = testing_constant(&pair.omega, &pair.sigma, grid, params, &lat);
            let w = weak_boundedness(&pair.sigma, &pair.omega, grid, params, &lat, s.wbp_ratio);
            let dual = norm_constant(&pair.omega, &pair.sigma, params, &lat);
            let (n2, d2) = (nrm.value * nrm.value, dual.value * dual.value);
            out.checks.push(Check::asserted("testing-below-norm", t.value, n2, format!("cube {:?}", t.witness)));
            out.checks.push(Check::asserted("dual-testing-below-norm", td.value, d2, format!("cube {:?}", td.witness)));
            out.checks.push(Check::asserted("wbp-below-norm", w.value, nrm.value, format!("cubes {:?}", w.witness)));
            out.operator = Some(OperatorReport {
                truncation_family: format!("{} {:?} truncations (delta, R)", lat.pairs.len(), lat.kind),
                cube_family: "charged grid cubes of the scenario grid".into(),
                norm: nrm,
                norm_dual: dual,
                testing_sq: t,
                testing_dual_sq: td,
                weak_boundedness: w,
            });
        }
    }

    let mut forest_for_upper = None;
    if suites.contains(&Suite::Corona) || suites.contains(&Suite::Funcenergy) {
        let stops = energy_stopping(&wp, &scenario.goodness, threshold(&wp, muck.as_ref(), s.energy_constant));
        if suites.contains(&Suite::Corona) {
            let mut rng = instance_rng(scenario.corpus.map_or(0, |c| c.seed) ^ 0xc2, index);
            let f: Vec<f64> = (0..pair.sigma.len()).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let c0 = cz_constant(s.cz_constant);
            let (cz_len, validation) = match cz_stopping(&f, &wp.sigma, s.cz_constant) {
                Ok(forest) => (forest.len(), validate_stopping_data(&forest, &f, &wp.sigma, c0)),
                Err(twoweight::Error::ZeroMass) => (0, StoppingValidation::default()),
                Err(e) => return Err(e.into()),
            };
            let set: BTreeSet<CubeId> = stops.forest.cubes().copied().collect();
            let carleson = carleson_check(&set, &wp.sigma);
            let bound = stopping_bounds(&wp, &scenario.goodness, &stops).into_iter().map(|(_, x)| x).fold(0.0, f64::max);
            if cz_len > 0 {
                out.checks.push(Check::flag("cz-stopping-data", validation.holds(), "corona bound, Carleson, orthogonality, monotonicity"));
            }
            if s.energy_constant >= 2.0 {
                out.checks.push(Check::asserted("energy-carleson", carleson.value, 2.0, format!("cube {:?}", carleson.witness)));
            }
            out.checks.push(Check::asserted("stopping-bounds", bound, stops.threshold, "largest stopping energy over the threshold".into()));
            out.corona = Some(CoronaReport {
                cz_stopping_cubes: cz_len,
                cz_validation: validation,
                energy_stopping_cubes: stops.forest.len(),
                energy_threshold: stops.threshold,
                closure_rounds: stops.rounds,
                carleson,
                stopping_bound: bound,
            });
        }
        forest_for_upper = Some(stops.forest);
    }

    if suites.contains(&Suite::Funcenergy) {
        let forest = forest_for_upper.expect("computed");
        let upper = build_upper_measure(&wp, &forest, &scenario.goodness);
        let fe = functional_energy(&wp, &upper, s.power_iterations, 1e-13);
        let mut split_residual: f64 = 0.0;
        let mut backward_ratio: f64 = 0.0;
        for id in wp.sigma.nonempty_cubes() {
            let fw = forward_testing(id, &pair.sigma, &upper, grid, &params);
            split_residual = split_residual.max((fw.local + fw.global - fw.total).abs() / fw.total.max(1e-300));
            let bw = backward_testing(id, &pair.sigma, &upper, grid, &params);
            if bw.tent_mass > 0.0 {
                backward_ratio = backward_ratio.max(bw.value / bw.tent_mass);
            }
        }
        out.checks.push(Check::asserted("forward-split", split_residual, REL_TOL, "relative residual of local plus global".into()));
        out.funcenergy = Some(FunctionalReport {
            upper_atoms: upper.atoms.len(),
            functional_energy_sq: fe.value,
            power_iterations: fe.iterations,
            split_residual,
            backward_ratio,
        });
    }

    if suites.contains(&Suite::Reversal) {
        if let Some(r) = reversal(scenario, pair, index)? {
            let asserted = r.admissible && r.dispersion >= s.reversal_dispersion;
            let detail = format!("dispersion {:.4}, admissible {}", r.dispersion, r.admissible);
            out.checks.push(if asserted {
                Check::optional("reversal-ratio", r.check.ratio, scenario.bounds.reversal, detail)
            } else {
                Check::optional("reversal-ratio-unasserted", r.check.ratio, None, detail)
            });
            out.reversal = Some(r);
        }
    }

    if suites.contains(&Suite::Necessity) {
        let offset = muck.as_ref().expect("computed").offset_a2.value.sqrt();
        let nrm = norm.expect("computed");
        let ratio = match (offset == 0.0, nrm == 0.0) {
            (true, _) => 0.0,
            (false, true) => f64::INFINITY,
            (false, false) => offset / nrm,
        };
        out.checks.push(Check::optional("necessity", ratio, scenario.bounds.necessity, "square root of offset A2 over the norm".into()));
        out.norm = Some(nrm);
    }
    out.muckenhoupt = out.muckenhoupt.or(if suites.contains(&Suite::Necessity) { muck } else { None });
    if out.checks.iter().any(|c| !c.passed) {
        out.replay = Some(pair.clone());
    }
    Ok(out)
}

fn threshold(wp: &WeightPair, muck: Option<&MuckenhouptReport>, c_energy: f64) -> EnergyThreshold {
    let computed;
    let m = match muck {
        Some(m) => m,
        None => {
            computed = muckenhoupt_report(wp);
            &computed
        }
    };
    EnergyThreshold {
        c_energy,
        energy_sq: m.energy_a2.value,
        a2: m.one_tailed_a2.value.max(m.one_tailed_a2_dual.value),
        a2_punct: m.punct_a2.value.max(m.punct_a2_dual.value),
    }
}

/// All instances of a scenario: corpus first, then the explicit pairs.
pub fn instances(scenario: &Scenario) -> Result<Vec<MeasurePair>> {
    let mut out = match &scenario.corpus {
        Some(c) => generate_corpus(&scenario.corpus_spec(c))?,
        None => Vec::new(),
    };
    out.extend(scenario.pairs.iter().map(|p| MeasurePair { sigma: p.sigma.clone(), omega: p.omega.clone() }));
    Ok(out)
}

pub fn run_scenario(scenario: &Scenario) -> Result<Report> {
    let grid = scenario.grid()?;
    let pairs = instances(scenario)?;
    let results: Vec<Result<InstanceReport>> =
        pairs.par_iter().enumerate().map(|(i, p)| evaluate(scenario, &grid, p, i)).collect();
    let instances = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Report::assemble(scenario, instances))
}
