//! The assembled hierarchical model: latent state layout, the joint
//! log-posterior with gradient, and initialization.
//!
//! The jointly-proposed block is packed into one coordinate vector
//!
//! ```text
//! theta = [ eta (3n, field-major) | beta (3p, field-major) | eps (K)
//!           | log alpha | log lambda ]
//! ```
//!
//! The mean structure is `eta_k = B beta_k + X_k` per sub-field, so the
//! centered field `X = eta - B beta` carries the separable spatial prior
//! while `eta` itself enters the likelihood. The likelihood and prior parts
//! of the target are exposed separately: hyperparameter Gibbs updates change
//! only the prior part, so a cached likelihood (value and gradient) stays
//! valid across them.

use crate::data::{CovariateTable, ObservationSet};
use crate::error::{Error, Result};
use crate::gmrf::{FieldMatrix, KroneckerField, SparsePrecision, N_FIELDS};
use crate::lattice::Lattice;
use crate::likelihoods::{total_loglik, LikGrad};
use crate::priors::{log_prior, HyperState, PriorConstants, PriorGrad};
use crate::transforms::{alr_forward, logit};

/// Problem dimensions and fixed inputs: lattice, covariate design, number of
/// scenario datasets, prior constants.
#[derive(Debug, Clone)]
pub struct Model {
    lattice: Lattice,
    covariates: CovariateTable,
    n_datasets: usize,
    consts: PriorConstants,
}

/// The jointly-proposed latent block.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub eta: FieldMatrix,
    /// Field-major coefficients: field `k`, covariate `i` at `k * p + i`.
    pub beta: Vec<f64>,
    pub eps: Vec<f64>,
    pub log_alpha: f64,
    pub log_lambda: f64,
}

impl Model {
    pub fn new(
        lattice: Lattice,
        covariates: CovariateTable,
        n_datasets: usize,
        consts: PriorConstants,
    ) -> Result<Self> {
        if covariates.n_cells() != lattice.n_cells() {
            return Err(Error::InvalidArgument(format!(
                "covariate table covers {} cells, lattice has {}",
                covariates.n_cells(),
                lattice.n_cells()
            )));
        }
        consts.validate()?;
        Ok(Model {
            lattice,
            covariates,
            n_datasets,
            consts,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn covariates(&self) -> &CovariateTable {
        &self.covariates
    }

    pub fn n_cells(&self) -> usize {
        self.lattice.n_cells()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.n_covariates()
    }

    pub fn n_datasets(&self) -> usize {
        self.n_datasets
    }

    pub fn constants(&self) -> &PriorConstants {
        &self.consts
    }

    /// Total packed dimension `3n + 3p + K + 2`.
    pub fn dim(&self) -> usize {
        N_FIELDS * self.n_cells() + N_FIELDS * self.n_covariates() + self.n_datasets + 2
    }

    fn beta_offset(&self) -> usize {
        N_FIELDS * self.n_cells()
    }

    fn eps_offset(&self) -> usize {
        self.beta_offset() + N_FIELDS * self.n_covariates()
    }

    /// Human-readable name of a packed coordinate, for diagnostics.
    pub fn coordinate_name(&self, idx: usize) -> String {
        let n = self.n_cells();
        let p = self.n_covariates();
        if idx < N_FIELDS * n {
            return format!("eta[field {}, cell {}]", idx / n, idx % n);
        }
        let idx = idx - N_FIELDS * n;
        if idx < N_FIELDS * p {
            return format!("beta[field {}, covariate {}]", idx / p, idx % p);
        }
        let idx = idx - N_FIELDS * p;
        if idx < self.n_datasets {
            return format!("eps[{idx}]");
        }
        match idx - self.n_datasets {
            0 => "log_alpha".to_string(),
            _ => "log_lambda".to_string(),
        }
    }

    pub fn pack(&self, state: &LatentState) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        theta.extend_from_slice(state.eta.as_slice());
        theta.extend_from_slice(&state.beta);
        theta.extend_from_slice(&state.eps);
        theta.push(state.log_alpha);
        theta.push(state.log_lambda);
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<LatentState> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "packed vector of length {}, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        let n = self.n_cells();
        let p = self.n_covariates();
        let mut eta = FieldMatrix::zeros(n);
        eta.as_mut_slice().copy_from_slice(&theta[..N_FIELDS * n]);
        let beta = theta[self.beta_offset()..self.beta_offset() + N_FIELDS * p].to_vec();
        let eps = theta[self.eps_offset()..self.eps_offset() + self.n_datasets].to_vec();
        Ok(LatentState {
            eta,
            beta,
            eps,
            log_alpha: theta[self.dim() - 2],
            log_lambda: theta[self.dim() - 1],
        })
    }

    /// The centered field `X = eta - B beta`.
    pub fn centered_field(&self, state: &LatentState) -> FieldMatrix {
        let n = self.n_cells();
        let p = self.n_covariates();
        let mut x = state.eta.clone();
        let mut fitted = vec![0.0; n];
        for k in 0..N_FIELDS {
            self.covariates
                .mul_coeffs(&state.beta[k * p..(k + 1) * p], &mut fitted);
            for (xv, f) in x.row_mut(k).iter_mut().zip(&fitted) {
                *xv -= f;
            }
        }
        x
    }

    /// Likelihood part of the target (independent of the hyperparameters).
    pub fn likelihood_part(
        &self,
        state: &LatentState,
        obs: &ObservationSet,
    ) -> Result<(f64, LikGrad)> {
        total_loglik(
            &state.eta,
            &state.eps,
            state.log_alpha.exp(),
            state.log_lambda.exp(),
            obs,
        )
    }

    /// Prior part of the target for the current hyperparameters. `q` must be
    /// `Q(hyper.kappa)` and `q_logdet` its log-determinant.
    pub fn prior_part(
        &self,
        state: &LatentState,
        hyper: &HyperState,
        q: &SparsePrecision,
        q_logdet: f64,
    ) -> Result<(f64, PriorGrad)> {
        let field = KroneckerField::new(hyper.sigma, q)?;
        let x = self.centered_field(state);
        log_prior(
            &x,
            &field,
            q_logdet,
            &state.beta,
            &self.covariates,
            &state.eps,
            state.log_alpha,
            state.log_lambda,
            hyper,
            &self.consts,
        )
    }

    /// Merge the two gradient halves into one packed vector.
    pub fn pack_gradient(&self, lik: &LikGrad, prior: &PriorGrad) -> Vec<f64> {
        let mut grad = Vec::with_capacity(self.dim());
        for (a, b) in lik
            .d_eta
            .as_slice()
            .iter()
            .zip(prior.d_eta.as_slice())
        {
            grad.push(a + b);
        }
        grad.extend_from_slice(&prior.d_beta);
        for (a, b) in lik.d_eps.iter().zip(&prior.d_eps) {
            grad.push(a + b);
        }
        grad.push(lik.d_log_alpha + prior.d_log_alpha);
        grad.push(lik.d_log_lambda + prior.d_log_lambda);
        grad
    }

    /// Starting state: coefficients from a covariate-only least-squares fit
    /// of the link-transformed observations on observed cells; `eta` set to
    /// the fitted values at observed cells and zero elsewhere; offsets zero;
    /// concentrations at their prior mean.
    pub fn init_state(&self, obs: &ObservationSet) -> Result<LatentState> {
        if obs.n_datasets() != self.n_datasets {
            return Err(Error::InvalidArgument(format!(
                "observation set has {} datasets, model expects {}",
                obs.n_datasets(),
                self.n_datasets
            )));
        }
        let n = self.n_cells();
        let p = self.n_covariates();
        let mut eta = FieldMatrix::zeros(n);
        let mut beta = vec![0.0; N_FIELDS * p];

        // Link-scale targets per field at their observed cells.
        let mut targets: [Vec<(usize, f64)>; N_FIELDS] = [Vec::new(), Vec::new(), Vec::new()];
        for o in obs.lcc() {
            let (l1, l2) = alr_forward(&o.value);
            targets[0].push((o.cell, l1));
            targets[1].push((o.cell, l2));
        }
        let mut h_sum = vec![0.0; n];
        let mut h_count = vec![0u32; n];
        for list in obs.alcc() {
            for o in list {
                h_sum[o.cell] += o.value;
                h_count[o.cell] += 1;
            }
        }
        for s in 0..n {
            if h_count[s] > 0 {
                let mean = h_sum[s] / h_count[s] as f64;
                targets[2].push((s, logit(mean)?));
            }
        }

        for (k, field_targets) in targets.iter().enumerate() {
            if field_targets.is_empty() || p == 0 {
                continue;
            }
            let m = field_targets.len();
            let mut design = nalgebra::DMatrix::zeros(m, p);
            let mut rhs = nalgebra::DVector::zeros(m);
            for (row, &(cell, target)) in field_targets.iter().enumerate() {
                for j in 0..p {
                    design[(row, j)] = self.covariates.value(cell, j);
                }
                rhs[row] = target;
            }
            let svd = nalgebra::SVD::new(design, true, true);
            let solution = svd
                .solve(&rhs, 1e-10)
                .map_err(|e| Error::Numeric(format!("least-squares initialization: {e}")))?;
            for j in 0..p {
                beta[k * p + j] = solution[j];
            }
            for &(cell, _) in field_targets {
                let mut fitted = 0.0;
                for j in 0..p {
                    fitted += self.covariates.value(cell, j) * beta[k * p + j];
                }
                eta.set(k, cell, fitted);
            }
        }

        let prior_mean = self.consts.conc_shape / self.consts.conc_rate;
        Ok(LatentState {
            eta,
            beta,
            eps: vec![0.0; self.n_datasets],
            log_alpha: prior_mean.ln(),
            log_lambda: prior_mean.ln(),
        })
    }
}
