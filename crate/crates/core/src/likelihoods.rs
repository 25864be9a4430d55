//! Observation log-densities, scores, and expected Fisher information.
//!
//! Compositions are Dirichlet with a shared concentration `alpha` around the
//! decomposed cover `z(s)`; human land-use proportions are Beta with shared
//! concentration `lambda` around the dataset-shifted mean:
//!
//! ```text
//! L(s)   ~ Dir(alpha * z(s))
//! H_k(s) ~ Beta(lambda * p_Hk(s), lambda * (1 - p_Hk(s)))
//! p_Hk(s) = logistic(eta_H(s) + eps_k)
//! ```
//!
//! Scores are analytic and finite-difference gated. Expected information is
//! exact through the links: because the cover components sum to one
//! identically in `eta` (and the Beta score has mean zero), the
//! second-derivative terms of the chain rule vanish in expectation, so the
//! per-cell information is `J^T diag(alpha^2 psi'(alpha z_i)) J` for the
//! Dirichlet part plus a Beta term on the human coordinate.
//!
//! The concentrations are sampled in log space; `total_loglik` therefore
//! reports gradients with respect to `log alpha`, `log lambda` (chain-rule
//! factor `alpha`, `lambda`).

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::gmrf::FieldMatrix;
use crate::math::{digamma, ln_gamma, pairwise_sum, trigamma};
use crate::transforms::{clamp_probability, link_jacobians, logit_inverse, Composition3};

/// Positive concentration parameters of the two observation families.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl ConcentrationParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("lambda", lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "concentration {name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(ConcentrationParams { alpha, lambda })
    }

    pub fn from_logs(log_alpha: f64, log_lambda: f64) -> Result<Self> {
        Self::new(log_alpha.exp(), log_lambda.exp())
    }
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} = {v} is not in (0, 1)"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} = {v} must be positive and finite"
        )));
    }
    Ok(())
}

/// Beta log-density of `y` with mean `p` and concentration `lambda`.
pub fn beta_logpdf(y: f64, lambda: f64, p: f64) -> Result<f64> {
    check_unit_interval("y", y)?;
    check_unit_interval("p", p)?;
    check_positive("lambda", lambda)?;
    Ok(beta_logpdf_raw(y, lambda, p))
}

fn beta_logpdf_raw(y: f64, lambda: f64, p: f64) -> f64 {
    let a = lambda * p;
    let b = lambda * (1.0 - p);
    ln_gamma(lambda) - ln_gamma(a) - ln_gamma(b)
        + (a - 1.0) * y.ln()
        + (b - 1.0) * (1.0 - y).ln()
}

/// Score of the Beta log-density: `(d/d lambda, d/d p)`.
pub fn beta_score(y: f64, lambda: f64, p: f64) -> Result<(f64, f64)> {
    check_unit_interval("y", y)?;
    check_unit_interval("p", p)?;
    check_positive("lambda", lambda)?;
    let q = 1.0 - p;
    let d_lambda = digamma(lambda) - p * digamma(lambda * p) - q * digamma(lambda * q)
        + p * y.ln()
        + q * (1.0 - y).ln();
    let d_p = -lambda * digamma(lambda * p) + lambda * digamma(lambda * q) + lambda * y.ln()
        - lambda * (1.0 - y).ln();
    Ok((d_lambda, d_p))
}

/// Expected Fisher information of the Beta family in `(lambda, p)`
/// coordinates, as a symmetric 2x2 `[[I_ll, I_lp], [I_lp, I_pp]]`.
pub fn beta_fisher(lambda: f64, p: f64) -> [[f64; 2]; 2] {
    debug_assert!(lambda > 0.0 && p > 0.0 && p < 1.0);
    let q = 1.0 - p;
    let ta = trigamma(lambda * p);
    let tb = trigamma(lambda * q);
    let i_ll = -trigamma(lambda) + p * p * ta + q * q * tb;
    let i_lp = lambda * p * ta - lambda * q * tb;
    let i_pp = lambda * lambda * (ta + tb);
    [[i_ll, i_lp], [i_lp, i_pp]]
}

/// Dirichlet log-density of the composition `l` with concentration vector
/// `alpha * z`.
pub fn dirichlet_logpdf(l: &Composition3, alpha: f64, z: &Composition3) -> Result<f64> {
    check_positive("alpha", alpha)?;
    Ok(dirichlet_logpdf_raw(l.as_array(), alpha, z.as_array()))
}

/// The same density as a raw function of unconstrained component vectors,
/// used internally and by finite-difference gates that step off the simplex.
fn dirichlet_logpdf_raw(l: [f64; 3], alpha: f64, z: [f64; 3]) -> f64 {
    let mut acc = ln_gamma(alpha);
    for i in 0..3 {
        let az = alpha * z[i];
        acc += -ln_gamma(az) + (az - 1.0) * l[i].ln();
    }
    acc
}

/// Score of the Dirichlet log-density: raw per-component `d/d z_i` (before
/// any simplex projection; directional derivatives on the simplex are
/// differences of these) and `d/d alpha`.
pub fn dirichlet_score(l: &Composition3, alpha: f64, z: &Composition3) -> Result<([f64; 3], f64)> {
    check_positive("alpha", alpha)?;
    let la = l.as_array();
    let za = z.as_array();
    let mut d_z = [0.0; 3];
    let mut d_alpha = digamma(alpha);
    for i in 0..3 {
        let lg = la[i].ln();
        d_z[i] = alpha * (lg - digamma(alpha * za[i]));
        d_alpha += za[i] * (lg - digamma(alpha * za[i]));
    }
    Ok((d_z, d_alpha))
}

/// Diagonal of the expected Dirichlet information in raw `z` coordinates:
/// `alpha^2 psi'(alpha z_i)`.
pub fn dirichlet_fisher_z_diag(alpha: f64, z: &Composition3) -> [f64; 3] {
    let za = z.as_array();
    [
        alpha * alpha * trigamma(alpha * za[0]),
        alpha * alpha * trigamma(alpha * za[1]),
        alpha * alpha * trigamma(alpha * za[2]),
    ]
}

/// Expected Dirichlet information for `alpha` at fixed cover `z`:
/// `sum_i z_i^2 psi'(alpha z_i) - psi'(alpha)`.
pub fn dirichlet_fisher_alpha(alpha: f64, z: &Composition3) -> f64 {
    let za = z.as_array();
    let mut acc = -trigamma(alpha);
    for zi in za {
        acc += zi * zi * trigamma(alpha * zi);
    }
    acc
}

/// Gradient of the total log-likelihood with respect to every coordinate it
/// touches. The regression coefficients do not appear (the likelihood
/// depends on them only through `eta`), so their block is identically zero
/// and omitted.
#[derive(Debug, Clone)]
pub struct LikGrad {
    /// Per-field, per-cell gradient with respect to `eta`; zero at
    /// unobserved cells.
    pub d_eta: FieldMatrix,
    /// Per-dataset gradient with respect to `eps_k`.
    pub d_eps: Vec<f64>,
    pub d_log_alpha: f64,
    pub d_log_lambda: f64,
}

impl LikGrad {
    pub fn zeros(n_cells: usize, n_datasets: usize) -> Self {
        LikGrad {
            d_eta: FieldMatrix::zeros(n_cells),
            d_eps: vec![0.0; n_datasets],
            d_log_alpha: 0.0,
            d_log_lambda: 0.0,
        }
    }
}

/// Total log-likelihood over all observed cells, with gradient.
///
/// Returns negative infinity (with a zero gradient) when the state pushes
/// any term out of floating range — callers treat that as a rejected
/// proposal, not an error. The result is invariant to the order in which
/// observations are stored: terms are evaluated in cell order and combined
/// by pairwise summation.
pub fn total_loglik(
    eta: &FieldMatrix,
    eps: &[f64],
    alpha: f64,
    lambda: f64,
    obs: &ObservationSet,
) -> Result<(f64, LikGrad)> {
    let n = eta.n_cells();
    if eps.len() != obs.n_datasets() {
        return Err(Error::InvalidArgument(format!(
            "{} dataset offsets supplied for {} datasets",
            eps.len(),
            obs.n_datasets()
        )));
    }
    for o in obs.lcc() {
        if o.cell >= n {
            return Err(Error::InvalidArgument(format!(
                "observation cell {} outside field of {n} cells",
                o.cell
            )));
        }
    }
    for list in obs.alcc() {
        for o in list {
            if o.cell >= n {
                return Err(Error::InvalidArgument(format!(
                    "observation cell {} outside field of {n} cells",
                    o.cell
                )));
            }
        }
    }
    obs.record_evals((obs.n_lcc() + obs.n_alcc()) as u64);

    let mut grad = LikGrad::zeros(n, obs.n_datasets());
    let bail = || (f64::NEG_INFINITY, LikGrad::zeros(n, obs.n_datasets()));
    if !(alpha > 0.0 && alpha.is_finite() && lambda > 0.0 && lambda.is_finite()) {
        return Ok(bail());
    }

    // Dirichlet terms, in cell order regardless of storage order.
    let mut lcc_idx: Vec<usize> = (0..obs.n_lcc()).collect();
    lcc_idx.sort_unstable_by_key(|&i| obs.lcc()[i].cell);
    let mut values = Vec::with_capacity(obs.n_lcc() + obs.n_alcc());
    let mut d_alpha_terms = Vec::with_capacity(obs.n_lcc());
    for &i in &lcc_idx {
        let o = &obs.lcc()[i];
        let s = o.cell;
        let link = link_jacobians(
            eta.get(0, s),
            eta.get(1, s),
            eta.get(2, s),
        )?;
        let value = dirichlet_logpdf_raw(o.value.as_array(), alpha, link.z.as_array());
        if !value.is_finite() {
            return Ok(bail());
        }
        values.push(value);
        let (d_z, d_alpha) = dirichlet_score(&o.value, alpha, &link.z)?;
        for col in 0..3 {
            let terms = [
                d_z[0] * link.dz_deta[0][col],
                d_z[1] * link.dz_deta[1][col],
                d_z[2] * link.dz_deta[2][col],
            ];
            *eta_grad(&mut grad.d_eta, col, s) += terms[0] + terms[1] + terms[2];
        }
        d_alpha_terms.push(d_alpha);
    }
    grad.d_log_alpha = alpha * pairwise_sum(&d_alpha_terms);

    // Beta terms per dataset, in cell order.
    let mut d_lambda_terms = Vec::with_capacity(obs.n_alcc());
    for (k, list) in obs.alcc().iter().enumerate() {
        let mut idx: Vec<usize> = (0..list.len()).collect();
        idx.sort_unstable_by_key(|&i| list[i].cell);
        let mut d_eps_terms = Vec::with_capacity(list.len());
        for &i in &idx {
            let o = &list[i];
            let s = o.cell;
            let linked = eta.get(2, s) + eps[k];
            if !linked.is_finite() {
                return Ok(bail());
            }
            let p = clamp_probability(logit_inverse(linked));
            let value = beta_logpdf_raw(o.value, lambda, p);
            if !value.is_finite() {
                return Ok(bail());
            }
            values.push(value);
            let (d_lambda, d_p) = beta_score(o.value, lambda, p)?;
            let d_link = d_p * p * (1.0 - p);
            *eta_grad(&mut grad.d_eta, 2, s) += d_link;
            d_eps_terms.push(d_link);
            d_lambda_terms.push(d_lambda);
        }
        grad.d_eps[k] = pairwise_sum(&d_eps_terms);
    }
    grad.d_log_lambda = lambda * pairwise_sum(&d_lambda_terms);

    let value = pairwise_sum(&values);
    if !value.is_finite() {
        return Ok(bail());
    }
    Ok((value, grad))
}

fn eta_grad(d_eta: &mut FieldMatrix, field: usize, cell: usize) -> &mut f64 {
    let row = d_eta.row_mut(field);
    &mut row[cell]
}
