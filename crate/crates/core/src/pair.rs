use crate::error::Result;
use crate::haar::CoordinateEnergy;
use crate::measure::{common_point_masses, CommonPointSet, DiscreteMeasure};
use crate::poisson::FracParams;
use crate::quasigeom::{CubeId, DyadicQuasigrid, GriddedMeasure};

/// Everything computed once per weight pair and grid: occupancy of both
/// measures, their common atoms and the coordinate Haar energies.
#[derive(Clone, Debug)]
pub struct WeightPair<'a> {
    pub grid: &'a DyadicQuasigrid,
    pub params: FracParams,
    pub sigma: GriddedMeasure<'a>,
    pub omega: GriddedMeasure<'a>,
    pub common: CommonPointSet,
    pub sigma_common: Vec<bool>,
    pub omega_common: Vec<bool>,
    pub sigma_energy: CoordinateEnergy,
    pub omega_energy: CoordinateEnergy,
}

impl<'a> WeightPair<'a> {
    pub fn new(
        grid: &'a DyadicQuasigrid,
        sigma: &'a DiscreteMeasure,
        omega: &'a DiscreteMeasure,
        params: FracParams,
    ) -> Result<Self> {
        sigma.check_same_dim(grid.dim())?;
        omega.check_same_dim(grid.dim())?;
        params.check_dim(grid.dim())?;
        let common = common_point_masses(sigma, omega)?;
        let flags = |mu: &DiscreteMeasure| mu.atoms().iter().map(|a| common.contains(&a.x)).collect();
        let (sg, og) = (grid.occupancy(sigma), grid.occupancy(omega));
        Ok(Self {
            grid,
            params,
            sigma_common: flags(sigma),
            omega_common: flags(omega),
            sigma_energy: CoordinateEnergy::new(&sg),
            omega_energy: CoordinateEnergy::new(&og),
            sigma: sg,
            omega: og,
            common,
        })
    }

    /// The pair with the roles of the two measures exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            grid: self.grid,
            params: self.params,
            sigma: self.omega.clone(),
            omega: self.sigma.clone(),
            common: self.common.clone(),
            sigma_common: self.omega_common.clone(),
            omega_common: self.sigma_common.clone(),
            sigma_energy: self.omega_energy.clone(),
            omega_energy: self.sigma_energy.clone(),
        }
    }

    pub fn sigma_measure(&self) -> &'a DiscreteMeasure {
        self.sigma.measure()
    }

    pub fn omega_measure(&self) -> &'a DiscreteMeasure {
        self.omega.measure()
    }

    /// Grid cubes carrying mass for either measure, coarse levels first.
    pub fn family(&self) -> Vec<CubeId> {
        let mut out: Vec<CubeId> = self.sigma.nonempty_cubes().chain(self.omega.nonempty_cubes()).copied().collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn family_descriptor(&self) -> String {
        format!(
            "grid cubes of levels 0..={} carrying sigma or omega mass ({} cubes, top cube only)",
            self.grid.depth(),
            self.family().len()
        )
    }
}
