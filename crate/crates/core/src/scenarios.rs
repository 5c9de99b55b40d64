//! Two-regime, four-dimensional simulation settings.
//!
//! Regime 1 is a Gaussian D-vine on the path 1-2-3-4; regime 2 a Gumbel
//! C-vine with roots 1, 2, 3. Every edge of tree `k` has the same Kendall's
//! tau. With staying probabilities 0.95 and 0.9 the Gaussian regime holds two
//! thirds of the stationary mass.

use crate::error::{Error, Result};
use crate::ms_em::MsRVineModel;
use crate::pair_copula::{CopulaFamily, PairCopula};
use crate::regime_chain::TransitionMatrix;
use crate::rvine::{RVineMatrix, RVineSpec};

pub const STAY_GAUSS: f64 = 0.95;
pub const STAY_GUMBEL: f64 = 0.9;
pub const LENGTH: usize = 800;

/// Vine on `matrix` with family `family` and tau `taus[tree - 1]` on each edge.
pub fn tree_constant_vine(matrix: RVineMatrix, family: CopulaFamily, taus: &[f64]) -> Result<RVineSpec> {
    if taus.len() + 1 < matrix.dim() {
        return Err(Error::InvalidInput("one tau per tree is required".into()));
    }
    let m = matrix.clone();
    RVineSpec::from_fn(matrix, |r, _| {
        PairCopula::from_tau(family, taus[m.tree_of_row(r) - 1], None)
    })
}

pub fn gauss_dvine(taus: &[f64]) -> Result<RVineSpec> {
    tree_constant_vine(RVineMatrix::dvine(&[1, 2, 3, 4])?, CopulaFamily::Gaussian, taus)
}

pub fn gumbel_cvine(taus: &[f64]) -> Result<RVineSpec> {
    tree_constant_vine(RVineMatrix::cvine(&[1, 2, 3, 4])?, CopulaFamily::Gumbel, taus)
}

/// Per-tree taus `(gauss regime, gumbel regime)` of scenario 1 or 2.
pub fn scenario_taus(scenario: usize) -> Result<([f64; 3], [f64; 3])> {
    match scenario {
        1 => Ok(([0.8, 0.6, 0.4], [0.8, 0.6, 0.4])),
        2 => Ok(([0.3, 0.2, 0.1], [0.8, 0.6, 0.4])),
        _ => Err(Error::InvalidInput(format!("unknown scenario {scenario}"))),
    }
}

pub fn scenario(k: usize) -> Result<MsRVineModel> {
    let (gauss, gumbel) = scenario_taus(k)?;
    MsRVineModel::new(
        vec![gauss_dvine(&gauss)?, gumbel_cvine(&gumbel)?],
        TransitionMatrix::two_state(STAY_GAUSS, STAY_GUMBEL)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_edges() {
        let m = scenario(2).unwrap();
        let g = m.regime(0);
        let labels: Vec<(String, f64)> = g
            .edges()
            .map(|(r, c)| (g.matrix().edge_label(r, c), g.copula(r, c).tau()))
            .collect();
        assert_eq!(labels[0].0, "4,3");
        assert!((labels[5].1 - 0.1).abs() < 1e-12);
        assert_eq!(labels[5].0, "4,1|2,3");
        let c = m.regime(1);
        assert_eq!(c.matrix().edge_label(1, 0), "4,3|2,1");
        assert!((c.copula(1, 0).tau() - 0.4).abs() < 1e-12);
        assert!(scenario(3).is_err());
    }
}
