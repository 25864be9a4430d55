//! Observation containers, ingestion clamping, and the covariate design.
//!
//! Observations live on a sparse subset of lattice cells: one set of
//! Dirichlet-observed compositions (pollen-derived land cover) and `K`
//! Beta-observed human land-use proportions (one list per scenario
//! dataset). Raw values are clamped to the interior
//! `[INGEST_CLAMP, 1 - INGEST_CLAMP]` at ingestion — the Beta and Dirichlet
//! densities are unbounded or undefined on the boundary — and every clamp
//! is counted so downstream reports can disclose how much data was touched.
//!
//! The covariate design holds an implicit leading intercept plus named
//! columns that are centered and scaled to unit variance (shrinkage priors
//! are scale-sensitive); the transform is invertible so coefficients can be
//! reported on both scales.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::math::pairwise_sum;
use crate::transforms::{Composition3, INGEST_CLAMP};

/// A Dirichlet-observed land-cover composition at one cell.
#[derive(Debug, Clone, Copy)]
pub struct DirichletObs {
    pub cell: usize,
    pub value: Composition3,
}

/// A Beta-observed human land-use proportion at one cell of one scenario
/// dataset.
#[derive(Debug, Clone, Copy)]
pub struct BetaObs {
    pub cell: usize,
    /// Index of the scenario dataset this observation belongs to.
    pub dataset: usize,
    pub value: f64,
}

/// Counts of boundary clamps applied at ingestion, per source.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClampCounts {
    pub lcc: u64,
    pub alcc: Vec<u64>,
}

/// Clamp a raw 3-part composition to the interior and renormalize.
///
/// Returns the composition and whether any component was moved by the
/// clamp. Components must be nonnegative and the raw sum within
/// `[0.99, 1.01]`; renormalization makes the sum exactly one.
pub fn clamp_composition(raw: [f64; 3]) -> Result<(Composition3, bool)> {
    for (i, v) in raw.iter().enumerate() {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::Data(format!(
                "composition component {i} = {v} is not a finite nonnegative number"
            )));
        }
    }
    let sum: f64 = raw.iter().sum();
    if !(0.99..=1.01).contains(&sum) {
        return Err(Error::Data(format!(
            "composition sums to {sum}, outside [0.99, 1.01]"
        )));
    }
    let mut clamped = false;
    let vals = raw.map(|v| {
        let c = v.clamp(INGEST_CLAMP, 1.0 - INGEST_CLAMP);
        if c != v {
            clamped = true;
        }
        c
    });
    let s: f64 = vals.iter().sum();
    let comp = Composition3::new(vals[0] / s, vals[1] / s, vals[2] / s)
        .map_err(|e| Error::Data(format!("composition invalid after clamping: {e}")))?;
    Ok((comp, clamped))
}

/// Clamp a raw proportion in `[0, 1]` to the interior.
///
/// Returns the value and whether it was moved.
pub fn clamp_proportion(raw: f64) -> Result<(f64, bool)> {
    if !raw.is_finite() || !(0.0..=1.0).contains(&raw) {
        return Err(Error::Data(format!(
            "proportion {raw} is not in [0, 1]"
        )));
    }
    let c = raw.clamp(INGEST_CLAMP, 1.0 - INGEST_CLAMP);
    Ok((c, c != raw))
}

/// The full set of observations for one fit: sparse Dirichlet compositions
/// plus `K` sparse Beta datasets, with clamp provenance and an evaluation
/// counter used by the holdout protocol to assert that held-out data never
/// enters a likelihood.
#[derive(Debug)]
pub struct ObservationSet {
    lcc: Vec<DirichletObs>,
    alcc: Vec<Vec<BetaObs>>,
    clamp: ClampCounts,
    evals: AtomicU64,
}

impl Clone for ObservationSet {
    fn clone(&self) -> Self {
        ObservationSet {
            lcc: self.lcc.clone(),
            alcc: self.alcc.clone(),
            clamp: self.clamp.clone(),
            evals: AtomicU64::new(0),
        }
    }
}

impl ObservationSet {
    /// Validating constructor: every cell must exist on the lattice, cells
    /// must be unique within the Dirichlet set and within each Beta
    /// dataset, and each Beta observation must carry the index of the
    /// dataset list it lives in.
    pub fn new(
        lcc: Vec<DirichletObs>,
        alcc: Vec<Vec<BetaObs>>,
        clamp: ClampCounts,
        lattice: &Lattice,
    ) -> Result<Self> {
        let n = lattice.n_cells();
        let mut seen = vec![false; n];
        for obs in &lcc {
            if obs.cell >= n {
                return Err(Error::Data(format!(
                    "composition observation at cell {} outside lattice of {n} cells",
                    obs.cell
                )));
            }
            if seen[obs.cell] {
                return Err(Error::Data(format!(
                    "duplicate composition observation at cell {}",
                    obs.cell
                )));
            }
            seen[obs.cell] = true;
        }
        for (k, list) in alcc.iter().enumerate() {
            seen.iter_mut().for_each(|s| *s = false);
            for obs in list {
                if obs.cell >= n {
                    return Err(Error::Data(format!(
                        "land-use observation at cell {} outside lattice of {n} cells",
                        obs.cell
                    )));
                }
                if obs.dataset != k {
                    return Err(Error::Data(format!(
                        "land-use observation in dataset {k} carries index {}",
                        obs.dataset
                    )));
                }
                if seen[obs.cell] {
                    return Err(Error::Data(format!(
                        "duplicate land-use observation at cell {} in dataset {k}",
                        obs.cell
                    )));
                }
                seen[obs.cell] = true;
            }
        }
        Ok(ObservationSet {
            lcc,
            alcc,
            clamp,
            evals: AtomicU64::new(0),
        })
    }

    pub fn lcc(&self) -> &[DirichletObs] {
        &self.lcc
    }

    pub fn alcc(&self) -> &[Vec<BetaObs>] {
        &self.alcc
    }

    /// Number of Beta scenario datasets `K`.
    pub fn n_datasets(&self) -> usize {
        self.alcc.len()
    }

    pub fn n_lcc(&self) -> usize {
        self.lcc.len()
    }

    pub fn n_alcc(&self) -> usize {
        self.alcc.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_lcc() == 0 && self.n_alcc() == 0
    }

    pub fn clamp_counts(&self) -> &ClampCounts {
        &self.clamp
    }

    /// Sorted unique cells carrying a composition observation.
    pub fn lcc_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self.lcc.iter().map(|o| o.cell).collect();
        cells.sort_unstable();
        cells
    }

    /// Sorted unique cells carrying a land-use observation in any dataset.
    pub fn alcc_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self
            .alcc
            .iter()
            .flat_map(|list| list.iter().map(|o| o.cell))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    /// Record that `n` likelihood terms from this set were evaluated.
    pub fn record_evals(&self, n: u64) {
        self.evals.fetch_add(n, Ordering::Relaxed);
    }

    /// Total likelihood terms evaluated against this set so far.
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

/// Per-cell covariate design with an implicit leading intercept.
///
/// Non-intercept columns are centered and scaled to unit (population)
/// standard deviation; the original location/scale is retained so that
/// fitted coefficients can be mapped back to the raw covariate scale.
#[derive(Debug, Clone)]
pub struct CovariateTable {
    n_cells: usize,
    names: Vec<String>,
    /// Column-major standardized values, including the intercept column.
    columns: Vec<Vec<f64>>,
    raw_means: Vec<f64>,
    raw_sds: Vec<f64>,
}

impl CovariateTable {
    /// Build the design from named raw columns (the intercept is implicit
    /// and must not be supplied). Constant columns are rejected: they would
    /// duplicate the intercept and have no scale.
    pub fn new(n_cells: usize, raw: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidArgument("covariate table needs cells".into()));
        }
        let mut names = vec!["intercept".to_string()];
        let mut columns = vec![vec![1.0; n_cells]];
        let mut raw_means = vec![0.0];
        let mut raw_sds = vec![1.0];
        for (name, values) in raw {
            if values.len() != n_cells {
                return Err(Error::Data(format!(
                    "covariate {name} has {} values, lattice has {n_cells} cells",
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "covariate {name} contains non-finite value {v}"
                )));
            }
            let mean = pairwise_sum(&values) / n_cells as f64;
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            let sd = (pairwise_sum(&sq) / n_cells as f64).sqrt();
            if sd <= 0.0 {
                return Err(Error::Data(format!(
                    "covariate {name} is constant; drop it (the intercept is implicit)"
                )));
            }
            columns.push(values.iter().map(|v| (v - mean) / sd).collect());
            names.push(name);
            raw_means.push(mean);
            raw_sds.push(sd);
        }
        Ok(CovariateTable {
            n_cells,
            names,
            columns,
            raw_means,
            raw_sds,
        })
    }

    /// Intercept-only design.
    pub fn intercept_only(n_cells: usize) -> Result<Self> {
        Self::new(n_cells, Vec::new())
    }

    /// Design with no columns at all (`p = 0`), for models whose mean
    /// structure is pure spatial field.
    pub fn empty(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidArgument("covariate table needs cells".into()));
        }
        Ok(CovariateTable {
            n_cells,
            names: Vec::new(),
            columns: Vec::new(),
            raw_means: Vec::new(),
            raw_sds: Vec::new(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Number of design columns `p`, intercept included.
    pub fn n_covariates(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Standardized design value for (cell, column).
    pub fn value(&self, cell: usize, col: usize) -> f64 {
        self.columns[col][cell]
    }

    /// Standardized column `col` over all cells.
    pub fn column(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    /// Mean/scale used to standardize column `col` (0/1 for the intercept).
    pub fn raw_location_scale(&self, col: usize) -> (f64, f64) {
        (self.raw_means[col], self.raw_sds[col])
    }

    /// `B v` for a coefficient vector over the standardized design.
    pub fn mul_coeffs(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n_covariates());
        debug_assert_eq!(out.len(), self.n_cells);
        for s in 0..self.n_cells {
            let terms: Vec<f64> = (0..self.columns.len())
                .map(|j| self.columns[j][s] * coeffs[j])
                .collect();
            out[s] = pairwise_sum(&terms);
        }
    }

    /// Map coefficients on the standardized design to the raw covariate
    /// scale (slopes divided by the scale; intercept absorbing the
    /// locations).
    pub fn coeffs_to_raw_scale(&self, std_coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(std_coeffs.len(), self.n_covariates());
        if std_coeffs.is_empty() {
            return Vec::new();
        }
        let mut raw = vec![0.0; std_coeffs.len()];
        let mut intercept = std_coeffs[0];
        for j in 1..std_coeffs.len() {
            raw[j] = std_coeffs[j] / self.raw_sds[j];
            intercept -= std_coeffs[j] * self.raw_means[j] / self.raw_sds[j];
        }
        raw[0] = intercept;
        raw
    }
}
