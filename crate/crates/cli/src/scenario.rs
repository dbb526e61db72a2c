//! Scenario files: one JSON document per run.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use twoweight::corpus::{CorpusSpec, Generator};
use twoweight::riesz::TruncationKind;
use twoweight::{BiLipschitzMap, Cube, DiscreteMeasure, DyadicQuasigrid, FracParams, GoodnessParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Muckenhoupt,
    Energy,
    Operator,
    Corona,
    Funcenergy,
    Reversal,
    Necessity,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Muckenhoupt,
        Suite::Energy,
        Suite::Operator,
        Suite::Corona,
        Suite::Funcenergy,
        Suite::Reversal,
        Suite::Necessity,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_owned()))
            .with_context(|| format!("unknown suite {name:?}"))
    }
}

fn unit_side() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopCube {
    /// Lower corner; the origin when omitted.
    #[serde(default)]
    pub corner: Option<Vec<f64>>,
    #[serde(default = "unit_side")]
    pub side: f64,
}

impl Default for TopCube {
    fn default() -> Self {
        Self { corner: None, side: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub top: TopCube,
    pub depth: u32,
    /// Translation of the top cube.
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

fn default_lattice_size() -> usize {
    4
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub kind: TruncationKind,
    /// Points per axis of the logarithmic `(δ, R)` lattice; 1 keeps only the untruncated pair.
    #[serde(default = "default_lattice_size")]
    pub size: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self { kind: TruncationKind::Tangent, size: default_lattice_size() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFile {
    pub generator: Generator,
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub atoms: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFile {
    pub sigma: DiscreteMeasure,
    pub omega: DiscreteMeasure,
}

/// Asserted bounds for the calibrated checks; a check without a bound is only reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub plugged_energy_a2: Option<f64>,
    pub reversal: Option<f64>,
    pub necessity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    /// Random partitions tried per cube in the strong energy search.
    pub strong_energy_budget: usize,
    /// `C_e` in the energy stopping threshold.
    pub energy_constant: f64,
    /// `C` in Calderón–Zygmund stopping.
    pub cz_constant: f64,
    /// Side ratio bound for weakly admissible cube pairs.
    pub wbp_ratio: f64,
    pub reversal_k: usize,
    pub reversal_gamma: f64,
    /// Dispersion ratio below which a reversal instance is reported but not asserted.
    pub reversal_dispersion: f64,
    pub power_iterations: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            strong_energy_budget: 4,
            energy_constant: 2.0,
            cz_constant: 4.0,
            wbp_ratio: 2.0,
            reversal_k: 1,
            reversal_gamma: 8.0,
            reversal_dispersion: 0.3,
            power_iterations: 500,
        }
    }
}

fn identity_map() -> BiLipschitzMap {
    BiLipschitzMap::Identity
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dimension: usize,
    pub alpha: f64,
    #[serde(default = "identity_map")]
    pub map: BiLipschitzMap,
    pub grid: GridSpec,
    pub goodness: GoodnessParams,
    #[serde(default)]
    pub truncation: LatticeSpec,
    #[serde(default)]
    pub corpus: Option<CorpusFile>,
    /// Explicit pairs, run after any corpus instances.
    #[serde(default)]
    pub pairs: Vec<PairFile>,
    /// Empty means every suite.
    #[serde(default)]
    pub suites: Vec<Suite>,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub settings: Settings,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid scenario at `{path}`: {}", e.into_inner())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dimension;
        FracParams::new(n, self.alpha).context("field `alpha` (with `dimension`)")?;
        self.map.check(n).context("field `map`")?;
        self.goodness.validate().context("field `goodness`")?;
        for (field, v) in [("grid.top.corner", &self.grid.top.corner), ("grid.offset", &self.grid.offset)] {
            if let Some(v) = v {
                if v.len() != n {
                    bail!("field `{field}`: expected {n} coordinates, found {}", v.len());
                }
            }
        }
        if !(self.grid.top.side > 0.0 && self.grid.top.side.is_finite()) {
            bail!("field `grid.top.side`: must be positive and finite");
        }
        if self.truncation.size == 0 {
            bail!("field `truncation.size`: must be at least 1");
        }
        if let Some(c) = &self.corpus {
            self.corpus_spec(c).validate().context("field `corpus`")?;
        }
        for (i, p) in self.pairs.iter().enumerate() {
            for (name, m) in [("sigma", &p.sigma), ("omega", &p.omega)] {
                if m.dim() != n {
                    bail!("field `pairs[{i}].{name}.dim`: expected {n}, found {}", m.dim());
                }
            }
        }
        let s = &self.settings;
        if s.cz_constant <= 1.0 {
            bail!("field `settings.cz_constant`: must exceed 1");
        }
        if s.energy_constant <= 0.0 {
            bail!("field `settings.energy_constant`: must be positive");
        }
        if s.reversal_gamma < 2.0 {
            bail!("field `settings.reversal_gamma`: must be at least 2");
        }
        if s.reversal_k >= n.max(1) && self.suites().contains(&Suite::Reversal) {
            bail!("field `settings.reversal_k`: must be below the dimension {n}");
        }
        if s.wbp_ratio < 1.0 {
            bail!("field `settings.wbp_ratio`: must be at least 1");
        }
        Ok(())
    }

    pub fn params(&self) -> FracParams {
        FracParams::new(self.dimension, self.alpha).expect("validated")
    }

    pub fn suites(&self) -> Vec<Suite> {
        if self.suites.is_empty() {
            Suite::ALL.to_vec()
        } else {
            let mut s = self.suites.clone();
            s.sort();
            s.dedup();
            s
        }
    }

    pub fn corpus_spec(&self, c: &CorpusFile) -> CorpusSpec {
        let mut spec = CorpusSpec { generator: c.generator, count: c.count, seed: c.seed, dim: self.dimension, atoms: 12 };
        if let Some(a) = c.atoms {
            spec.atoms = a;
        }
        spec
    }

    pub fn grid(&self) -> Result<DyadicQuasigrid> {
        let n = self.dimension;
        let corner = self.grid.top.corner.clone().unwrap_or_else(|| vec![0.0; n]);
        let offset = self.grid.offset.clone().unwrap_or_else(|| vec![0.0; n]);
        let lo: Vec<f64> = corner.iter().zip(&offset).map(|(c, o)| c + o).collect();
        let top = Cube::from_corner(&lo, self.grid.top.side)?;
        Ok(DyadicQuasigrid::new(self.map, top, self.grid.depth)?)
    }

    /// Applies command-line overrides.
    pub fn override_with(&mut self, seed: Option<u64>, suites: &[Suite]) {
        if let (Some(seed), Some(c)) = (seed, self.corpus.as_mut()) {
            c.seed = seed;
        }
        if !suites.is_empty() {
            self.suites = suites.to_vec();
        }
    }
}
