//! The fixed preconditioner of the joint gradient update.
//!
//! The proposal uses the inverse of a block-diagonal positive-definite
//! matrix `P` over the packed coordinates `[eta | beta | eps | log alpha |
//! log lambda]`:
//!
//! ```text
//! P_eta        = Sigma^{-1} (x) Q  +  blockdiag_s F_s
//! P_beta       = Sigma^{-1} (x) B'QB  +  diag 1/(phi^2 gamma_i^2)
//! P_eps[k]     = tau_eps + sum_s I_pp(lambda, p_k(s)) (p(1-p))^2
//! P_log_alpha  = rate * alpha + alpha^2 * sum_s I_aa(alpha, z(s))
//! P_log_lambda = rate * lambda + lambda^2 * sum_{k,s} I_ll(lambda, p_k(s))
//! ```
//!
//! where `F_s` is the per-cell expected information of the observations in
//! the link coordinates: `J' diag(alpha^2 psi'(alpha z_i)) J` for a pollen
//! composition (J the total-cover Jacobian) plus `I_pp (p(1-p))^2` on the
//! human-field entry per scenario observation. Cross terms between the
//! coordinate groups are dropped to keep `P` cheap and always positive
//! definite. The matrix is rebuilt only at adaptation checkpoints and frozen
//! after burn-in, so each Metropolis step uses one fixed kernel.

use rand::Rng;
use sprs::{CsMat, TriMat};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::gmrf::{Factorization, SparsePrecision, N_FIELDS};
use crate::likelihoods::{beta_fisher, dirichlet_fisher_alpha, dirichlet_fisher_z_diag};
use crate::model::{LatentState, Model};
use crate::priors::HyperState;
use crate::transforms::{clamp_probability, link_jacobians, logit_inverse};

pub(crate) struct Preconditioner {
    matrix: CsMat<f64>,
    fact: Factorization,
}

impl Preconditioner {
    pub fn build(
        model: &Model,
        state: &LatentState,
        hyper: &HyperState,
        q: &SparsePrecision,
        obs: &ObservationSet,
    ) -> Result<Self> {
        let n = model.n_cells();
        let p = model.n_covariates();
        let k_sets = model.n_datasets();
        let dim = model.dim();
        let alpha = state.log_alpha.exp();
        let lambda = state.log_lambda.exp();
        let rate = model.constants().conc_rate;

        let sigma_inv = nalgebra::Cholesky::new(hyper.sigma)
            .ok_or_else(|| Error::Numeric("cross-field covariance is not positive definite".into()))?
            .inverse();

        // Observation information, accumulated per cell and per scalar.
        let mut cell_fisher = vec![[[0.0f64; 3]; 3]; n];
        let mut observed_cell = vec![false; n];
        let mut alpha_info = 0.0;
        let mut lambda_info = 0.0;
        let mut eps_info = vec![0.0; k_sets];
        for o in obs.lcc() {
            let link = link_jacobians(
                state.eta.get(0, o.cell),
                state.eta.get(1, o.cell),
                state.eta.get(2, o.cell),
            )?;
            let diag = dirichlet_fisher_z_diag(alpha, &link.z);
            let f = &mut cell_fisher[o.cell];
            for a in 0..3 {
                for b in 0..3 {
                    let mut acc = 0.0;
                    for (i, d) in diag.iter().enumerate() {
                        acc += d * link.dz_deta[i][a] * link.dz_deta[i][b];
                    }
                    f[a][b] += acc;
                }
            }
            observed_cell[o.cell] = true;
            alpha_info += dirichlet_fisher_alpha(alpha, &link.z);
        }
        for (k, list) in obs.alcc().iter().enumerate() {
            for o in list {
                let p_h = clamp_probability(logit_inverse(state.eta.get(2, o.cell) + state.eps[k]));
                let fisher = beta_fisher(lambda, p_h);
                let dp = p_h * (1.0 - p_h);
                cell_fisher[o.cell][2][2] += fisher[1][1] * dp * dp;
                observed_cell[o.cell] = true;
                eps_info[k] += fisher[1][1] * dp * dp;
                lambda_info += fisher[0][0];
            }
        }

        let mut tri = TriMat::new((dim, dim));
        // Field block: Sigma^{-1} (x) Q plus the per-cell information.
        for a in 0..N_FIELDS {
            for b in 0..N_FIELDS {
                let w = sigma_inv[(a, b)];
                for (s, row) in q.matrix().outer_iterator().enumerate() {
                    for (t, &v) in row.iter() {
                        tri.add_triplet(a * n + s, b * n + t, w * v);
                    }
                }
            }
        }
        for (s, f) in cell_fisher.iter().enumerate() {
            if !observed_cell[s] {
                continue;
            }
            for a in 0..N_FIELDS {
                for b in 0..N_FIELDS {
                    tri.add_triplet(a * n + s, b * n + s, f[a][b]);
                }
            }
        }

        // Coefficient block: Sigma^{-1} (x) B'QB + shrinkage diagonal.
        let beta_off = N_FIELDS * n;
        if p > 0 {
            let mut btqb = vec![vec![0.0; p]; p];
            let mut qb = vec![0.0; n];
            for j in 0..p {
                q.mul_vec(model.covariates().column(j), &mut qb);
                for i in 0..p {
                    btqb[i][j] = crate::math::pairwise_dot(model.covariates().column(i), &qb);
                }
            }
            for a in 0..N_FIELDS {
                for b in 0..N_FIELDS {
                    let w = sigma_inv[(a, b)];
                    for i in 0..p {
                        for j in 0..p {
                            let mut v = w * btqb[i][j];
                            if a == b && i == j {
                                let scale = hyper.phi * hyper.gamma[i];
                                v += 1.0 / (scale * scale);
                            }
                            tri.add_triplet(beta_off + a * p + i, beta_off + b * p + j, v);
                        }
                    }
                }
            }
        }

        let eps_off = beta_off + N_FIELDS * p;
        for (k, info) in eps_info.iter().enumerate() {
            tri.add_triplet(eps_off + k, eps_off + k, hyper.tau_eps + info);
        }
        tri.add_triplet(
            dim - 2,
            dim - 2,
            rate * alpha + alpha * alpha * alpha_info,
        );
        tri.add_triplet(
            dim - 1,
            dim - 1,
            rate * lambda + lambda * lambda * lambda_info,
        );

        let matrix: CsMat<f64> = tri.to_csr();
        if matrix.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "preconditioner assembly produced non-finite entries".into(),
            ));
        }
        let fact = Factorization::from_matrix(matrix.view())?;
        Ok(Preconditioner { matrix, fact })
    }

    pub fn dim(&self) -> usize {
        self.fact.dim()
    }

    /// `P^{-1} rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.fact.solve(rhs)
    }

    /// Draw `v ~ N(0, P^{-1})` returning `(v, v' P v)`; the squared norm is
    /// exact by construction, not a separate product.
    pub fn sample_with_sqnorm<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        self.fact.sample_with_sqnorm(rng)
    }

    /// `v' P v` through the sparse matrix.
    pub fn quadform(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        let mut acc = Vec::with_capacity(v.len());
        for (row, vi) in self.matrix.outer_iterator().zip(v) {
            let mut dot = 0.0;
            for (j, &m) in row.iter() {
                dot += m * v[j];
            }
            acc.push(dot * vi);
        }
        crate::math::pairwise_sum(&acc)
    }
}
