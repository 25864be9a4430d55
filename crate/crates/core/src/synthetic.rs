//! Synthetic data drawn from the exact observation process, with the ground
//! truth retained so that a fitted chain can be scored against it.
//!
//! The generator runs the model's own building blocks forward:
//!
//! ```text
//!   X ~ N(0, Sigma (x) Q(kappa)^{-1})          correlated field deviations
//!   eta = B beta + X                           linear predictors (3 fields)
//!   p_L = alr^{-1}(eta_1, eta_2)               natural-cover composition
//!   p_H = logistic(eta_3)                      human land-use fraction
//!   z   = h(p_L, p_H)                          observable total composition
//!   eps_k ~ N(0, tau_eps^{-1})                 per-dataset offsets
//!   L_s  ~ Dirichlet(alpha z_s)                masked composition data
//!   H_ks ~ Beta(lambda p_Hk_s, lambda (1 - p_Hk_s))   masked land-use data
//! ```
//!
//! Everything is drawn from one seeded generator, so a dataset is a pure
//! function of `(config, seed)`. [`draw_observations`] exposes the last two
//! lines on their own: given fixed latent fields and masks it redraws only
//! the observations, which is what simulation-based calibration checks need.
//!
//! Observation draws use the same clamped link evaluation as the likelihood,
//! so the distribution that generated a value is exactly the distribution the
//! fitted model assigns to it whenever no boundary clamp fires. Ingestion
//! clamps are counted per source and should be zero for moderate
//! concentrations; the counters make silent boundary effects visible.

use nalgebra::Matrix3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDraw, Dirichlet, StandardNormal};

use crate::data::{
    clamp_composition, clamp_proportion, BetaObs, ClampCounts, CovariateTable, DirichletObs,
    ObservationSet,
};
use crate::error::{Error, Result};
use crate::gmrf::{build_precision, Factorization, FieldMatrix, KroneckerField, N_FIELDS};
use crate::lattice::{build_lattice, Lattice};
use crate::model::Model;
use crate::sampler::{posterior_summaries, ChainOutput, ScalarSummary};
use crate::transforms::{
    alr_inverse, clamp_probability, decompose_cover, link_jacobians, logit_inverse, Composition3,
};

/// Number of covariates the generator builds (intercept plus elevation).
pub const N_SYNTH_COVARIATES: usize = 2;

/// Configuration of the synthetic generator. The default is the desk-scale
/// benchmark used throughout the integration tests: a 20 x 20 lattice with a
/// smooth field, moderate concentrations, two land-use datasets, half of the
/// cells carrying a composition observation and full land-use coverage.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub kappa: f64,
    pub sigma: Matrix3<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub tau_eps: f64,
    pub n_datasets: usize,
    /// True regression coefficients on the standardized covariate scale,
    /// field-major: `[field 0 x (intercept, elevation), field 1 x .., ..]`.
    pub beta: Vec<f64>,
    /// Fraction of cells carrying a composition observation.
    pub lcc_fraction: f64,
    /// Fraction of cells observed in each land-use dataset.
    pub alcc_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_rows: 20,
            n_cols: 20,
            kappa: 0.3,
            sigma: Matrix3::new(1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0),
            alpha: 30.0,
            lambda: 30.0,
            tau_eps: 4.0,
            n_datasets: 2,
            beta: vec![0.4, 0.4, 0.4, -0.3, -0.2, 0.6],
            lcc_fraction: 0.5,
            alcc_fraction: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 2 || self.n_cols < 2 {
            return Err(Error::Config(format!(
                "synthetic lattice must be at least 2x2, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("tau_eps", self.tau_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "synthetic {name} = {v} must be positive and finite"
                )));
            }
        }
        if self.n_datasets == 0 {
            return Err(Error::Config(
                "synthetic benchmark needs at least one land-use dataset".into(),
            ));
        }
        if self.beta.len() != N_FIELDS * N_SYNTH_COVARIATES {
            return Err(Error::Config(format!(
                "expected {} true coefficients (3 fields x intercept, elevation), got {}",
                N_FIELDS * N_SYNTH_COVARIATES,
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("true coefficients must be finite".into()));
        }
        if self.sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(
                "cross-field covariance must be finite".into(),
            ));
        }
        for (name, f) in [
            ("lcc_fraction", self.lcc_fraction),
            ("alcc_fraction", self.alcc_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "{name} = {f} is not a fraction in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Everything that was used to generate a dataset, kept for scoring.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub eta: FieldMatrix,
    /// True coefficients on the standardized covariate scale, field-major.
    pub beta: Vec<f64>,
    pub eps: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub sigma: Matrix3<f64>,
    pub tau_eps: f64,
    pub p_l: Vec<Composition3>,
    pub p_h: Vec<f64>,
    pub z: Vec<Composition3>,
    /// Cells carrying a composition observation, ascending.
    pub lcc_cells: Vec<usize>,
    /// Cells observed per land-use dataset, ascending.
    pub alcc_cells: Vec<Vec<usize>>,
}

/// Intercept plus one smooth synthetic elevation surface. The surface varies
/// along both lattice axes so the standardized column is never constant.
pub fn elevation_covariates(lattice: &Lattice) -> Result<CovariateTable> {
    let tau = 2.0 * std::f64::consts::PI;
    let (nr, nc) = (lattice.n_rows() as f64, lattice.n_cols() as f64);
    let column: Vec<f64> = (0..lattice.n_cells())
        .map(|cell| {
            let (r, c) = lattice.row_col(cell);
            (tau * r as f64 / nr).sin() + (tau * c as f64 / nc).cos()
        })
        .collect();
    CovariateTable::new(
        lattice.n_cells(),
        vec![("elevation".to_string(), column)],
    )
}

/// Sample `round(fraction * n)` distinct cells, returned in ascending order.
fn draw_mask<R: Rng + ?Sized>(rng: &mut R, n_cells: usize, fraction: f64) -> Vec<usize> {
    let count = ((fraction * n_cells as f64).round() as usize).min(n_cells);
    let mut cells = rand::seq::index::sample(rng, n_cells, count).into_vec();
    cells.sort_unstable();
    cells
}

/// Draw one complete dataset. Returns the observations, the covariate table
/// the fit should use, and the ground truth behind both.
///
/// Draw order is fixed: field deviations, offsets, composition mask, land-use
/// masks, then observations cell by cell; identical `(config, seed)` pairs
/// therefore reproduce bit-identical datasets.
pub fn generate(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(ObservationSet, CovariateTable, GroundTruth)> {
    config.validate()?;
    let lattice = build_lattice(config.n_rows, config.n_cols)?;
    let n = lattice.n_cells();
    let covariates = elevation_covariates(&lattice)?;
    let q = build_precision(&lattice, config.kappa)?;
    let fact = Factorization::new(&q)?;
    let kron = KroneckerField::new(config.sigma, &q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut eta = kron.sample_field(&fact, &mut rng)?;
    let mut fitted = vec![0.0; n];
    for field in 0..N_FIELDS {
        let coeffs = &config.beta[field * N_SYNTH_COVARIATES..(field + 1) * N_SYNTH_COVARIATES];
        covariates.mul_coeffs(coeffs, &mut fitted);
        for (e, f) in eta.row_mut(field).iter_mut().zip(&fitted) {
            *e += f;
        }
    }

    let offset_scale = config.tau_eps.sqrt().recip();
    let eps: Vec<f64> = (0..config.n_datasets)
        .map(|_| offset_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();

    // Link values along the same path the posterior summaries take, so a
    // perfect fit reproduces these numbers bit for bit.
    let mut p_l = Vec::with_capacity(n);
    let mut p_h = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for s in 0..n {
        let pl = alr_inverse(eta.get(0, s), eta.get(1, s));
        let ph = clamp_probability(logit_inverse(eta.get(2, s)));
        z.push(decompose_cover(&pl, ph)?);
        p_l.push(pl);
        p_h.push(ph);
    }

    let lcc_cells = draw_mask(&mut rng, n, config.lcc_fraction);
    let alcc_cells: Vec<Vec<usize>> = (0..config.n_datasets)
        .map(|_| draw_mask(&mut rng, n, config.alcc_fraction))
        .collect();

    let obs = draw_observations(
        &lattice,
        &eta,
        &eps,
        config.alpha,
        config.lambda,
        &lcc_cells,
        &alcc_cells,
        &mut rng,
    )?;

    let truth = GroundTruth {
        eta,
        beta: config.beta.clone(),
        eps,
        alpha: config.alpha,
        lambda: config.lambda,
        kappa: config.kappa,
        sigma: config.sigma,
        tau_eps: config.tau_eps,
        p_l,
        p_h,
        z,
        lcc_cells,
        alcc_cells,
    };
    Ok((obs, covariates, truth))
}

/// Redraw the observations for fixed latent fields, offsets and masks.
///
/// The concentrations come from the same clamped link evaluation the
/// likelihood uses, so the sampling distribution here matches the fitted
/// density exactly for any latent state. Boundary clamps applied while
/// ingesting the draws are counted in the returned set.
#[allow(clippy::too_many_arguments)]
pub fn draw_observations<R: Rng + ?Sized>(
    lattice: &Lattice,
    eta: &FieldMatrix,
    eps: &[f64],
    alpha: f64,
    lambda: f64,
    lcc_cells: &[usize],
    alcc_cells: &[Vec<usize>],
    rng: &mut R,
) -> Result<ObservationSet> {
    if eta.n_cells() != lattice.n_cells() {
        return Err(Error::InvalidArgument(format!(
            "field covers {} cells, lattice has {}",
            eta.n_cells(),
            lattice.n_cells()
        )));
    }
    if eps.len() != alcc_cells.len() {
        return Err(Error::InvalidArgument(format!(
            "{} offsets for {} land-use masks",
            eps.len(),
            alcc_cells.len()
        )));
    }
    for (name, v) in [("alpha", alpha), ("lambda", lambda)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "concentration {name} = {v} must be positive and finite"
            )));
        }
    }

    let mut clamp = ClampCounts {
        lcc: 0,
        alcc: vec![0; eps.len()],
    };
    let mut lcc = Vec::with_capacity(lcc_cells.len());
    for &cell in lcc_cells {
        let link = link_jacobians(eta.get(0, cell), eta.get(1, cell), eta.get(2, cell))?;
        let conc = [alpha * link.z.c, alpha * link.z.b, alpha * link.z.u];
        let dist = Dirichlet::new(conc).map_err(|e| {
            Error::Numeric(format!(
                "cannot sample composition at cell {cell} with concentration {conc:?}: {e}"
            ))
        })?;
        let draw: [f64; 3] = rng.sample(dist);
        let (value, moved) = clamp_composition(draw)?;
        if moved {
            clamp.lcc += 1;
        }
        lcc.push(DirichletObs { cell, value });
    }

    let mut alcc = Vec::with_capacity(eps.len());
    for (k, cells) in alcc_cells.iter().enumerate() {
        let mut list = Vec::with_capacity(cells.len());
        for &cell in cells {
            let p = clamp_probability(logit_inverse(eta.get(2, cell) + eps[k]));
            let dist = BetaDraw::new(lambda * p, lambda * (1.0 - p)).map_err(|e| {
                Error::Numeric(format!(
                    "cannot sample land use at cell {cell} of dataset {k}: {e}"
                ))
            })?;
            let draw: f64 = rng.sample(dist);
            let (value, moved) = clamp_proportion(draw)?;
            if moved {
                clamp.alcc[k] += 1;
            }
            list.push(BetaObs {
                cell,
                dataset: k,
                value,
            });
        }
        alcc.push(list);
    }
    ObservationSet::new(lcc, alcc, clamp, lattice)
}

/// How well a fitted chain recovered the generating state.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub alpha_covered: bool,
    pub lambda_covered: bool,
    pub kappa_covered: bool,
    pub tau_eps_covered: bool,
    pub eps_covered: Vec<bool>,
    /// Fraction of cells whose 95% interval contains the true `p_H`.
    pub p_h_coverage: f64,
    /// Root-mean-square error of the posterior-mean `p_H` field.
    pub p_h_rmse: f64,
    /// Root-mean-square error of the posterior-mean cover composition,
    /// pooled over the three components.
    pub z_rmse: f64,
}

fn covers(summary: &ScalarSummary, truth: f64) -> bool {
    summary.lower <= truth && truth <= summary.upper
}

/// Score a fitted chain against the ground truth that generated its data.
pub fn scoring(model: &Model, chain: &ChainOutput, truth: &GroundTruth) -> Result<RecoveryReport> {
    let n = model.lattice().n_cells();
    if truth.eta.n_cells() != n || truth.p_h.len() != n || truth.z.len() != n {
        return Err(Error::InvalidArgument(format!(
            "ground truth covers {} cells, fitted model {}",
            truth.eta.n_cells(),
            n
        )));
    }
    if truth.eps.len() != model.n_datasets() {
        return Err(Error::InvalidArgument(format!(
            "ground truth has {} dataset offsets, fitted model {}",
            truth.eps.len(),
            model.n_datasets()
        )));
    }
    let summary = posterior_summaries(model, chain)?;

    let mut inside = 0usize;
    let mut sq_ph = 0.0;
    let mut sq_z = 0.0;
    for s in 0..n {
        if summary.p_h_lower[s] <= truth.p_h[s] && truth.p_h[s] <= summary.p_h_upper[s] {
            inside += 1;
        }
        let d = summary.p_h_mean[s] - truth.p_h[s];
        sq_ph += d * d;
        let mean_z = summary.z_mean[s];
        let true_z = truth.z[s].as_array();
        for i in 0..3 {
            let dz = mean_z[i] - true_z[i];
            sq_z += dz * dz;
        }
    }
    let eps_covered = summary
        .eps
        .iter()
        .zip(&truth.eps)
        .map(|(s, &t)| covers(s, t))
        .collect();

    Ok(RecoveryReport {
        alpha_covered: covers(&summary.alpha, truth.alpha),
        lambda_covered: covers(&summary.lambda, truth.lambda),
        kappa_covered: covers(&summary.kappa, truth.kappa),
        tau_eps_covered: covers(&summary.tau_eps, truth.tau_eps),
        eps_covered,
        p_h_coverage: inside as f64 / n as f64,
        p_h_rmse: (sq_ph / n as f64).sqrt(),
        z_rmse: (sq_z / (3 * n) as f64).sqrt(),
    })
}
