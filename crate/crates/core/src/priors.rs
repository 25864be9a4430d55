//! Prior densities, gradients, and conjugate/auxiliary Gibbs updates.
//!
//! Hyperpriors:
//!
//! ```text
//! alpha, lambda, tau_eps ~ Gamma(1.5, 0.1)          (shape/rate)
//! kappa                  ~ Gamma(1, log(100)/sqrt(8))
//! Sigma                  ~ InvWishart(I, 10)
//! beta_{ki} | gamma_i, phi ~ N(0, phi^2 gamma_i^2)
//! gamma_i, phi           ~ HalfCauchy(0, 1)
//! eps_k | tau_eps        ~ N(0, 1 / tau_eps)
//! ```
//!
//! The horseshoe is grouped: one local scale `gamma_i` per covariate,
//! shared by the three sub-fields' coefficients on that covariate (group
//! size `m_i = 3`). Half-Cauchy scales are handled by inverse-gamma
//! augmentation (`nu_i`, `xi` auxiliaries), which makes every conditional
//! inverse-gamma:
//!
//! ```text
//! gamma_i^2 | .  ~ IG((1 + m_i)/2,  1/nu_i + sum_k beta_{ki}^2 / (2 phi^2))
//! nu_i | .       ~ IG(1, 1 + 1/gamma_i^2)
//! phi^2 | .      ~ IG((1 + sum m_i)/2,  1/xi + sum_{ik} beta_{ki}^2 / (2 gamma_i^2))
//! xi | .         ~ IG(1, 1 + 1/phi^2)
//! ```
//!
//! Concentrations are sampled in log space; their Gamma terms here carry
//! the log-scale Jacobian.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};

use crate::data::CovariateTable;
use crate::error::{Error, Result};
use crate::gmrf::{build_precision, Factorization, FieldMatrix, KroneckerField, N_FIELDS};
use crate::lattice::Lattice;
use crate::math::{ln_gamma, pairwise_dot, pairwise_sum};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Constants of the fixed hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConstants {
    /// Shape of the Gamma prior shared by `alpha`, `lambda`, `tau_eps`.
    pub conc_shape: f64,
    /// Rate of that Gamma prior.
    pub conc_rate: f64,
    /// Rate of the exponential (Gamma(1, rate)) prior on `kappa`.
    pub kappa_rate: f64,
    /// Degrees of freedom of the inverse-Wishart prior on `Sigma` (identity
    /// scale).
    pub iw_df: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        PriorConstants {
            conc_shape: 1.5,
            conc_rate: 0.1,
            kappa_rate: 100.0f64.ln() / 8.0f64.sqrt(),
            iw_df: 10.0,
        }
    }
}

impl PriorConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("conc_shape", self.conc_shape),
            ("conc_rate", self.conc_rate),
            ("kappa_rate", self.kappa_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "prior constant {name} = {v} must be positive and finite"
                )));
            }
        }
        if !(self.iw_df > (N_FIELDS + 1) as f64) {
            return Err(Error::Config(format!(
                "inverse-Wishart degrees of freedom {} must exceed {} for a finite prior mean",
                self.iw_df,
                N_FIELDS + 1
            )));
        }
        Ok(())
    }
}

/// All non-MALA parameters: spatial range, cross-field covariance, offset
/// precision, and the horseshoe scales with their auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub kappa: f64,
    pub sigma: Matrix3<f64>,
    pub tau_eps: f64,
    /// Per-covariate local shrinkage scales.
    pub gamma: Vec<f64>,
    /// Global shrinkage scale.
    pub phi: f64,
    /// Inverse-gamma auxiliaries paired with `gamma`.
    pub nu: Vec<f64>,
    /// Inverse-gamma auxiliary paired with `phi`.
    pub xi: f64,
}

impl HyperState {
    /// Neutral starting point: unit range and scales, identity covariance,
    /// offset precision at its prior mean.
    pub fn init(n_covariates: usize, consts: &PriorConstants) -> Self {
        HyperState {
            kappa: 1.0,
            sigma: Matrix3::identity(),
            tau_eps: consts.conc_shape / consts.conc_rate,
            gamma: vec![1.0; n_covariates],
            phi: 1.0,
            nu: vec![1.0; n_covariates],
            xi: 1.0,
        }
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        if self.gamma.len() != n_covariates || self.nu.len() != n_covariates {
            return Err(Error::InvalidArgument(format!(
                "horseshoe scales sized {} / {} for {} covariates",
                self.gamma.len(),
                self.nu.len(),
                n_covariates
            )));
        }
        let mut positives = vec![
            ("kappa", self.kappa),
            ("tau_eps", self.tau_eps),
            ("phi", self.phi),
            ("xi", self.xi),
        ];
        for (i, (&g, &v)) in self.gamma.iter().zip(&self.nu).enumerate() {
            if !(g > 0.0 && g.is_finite() && v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "horseshoe scale {i} not positive: gamma = {g}, nu = {v}"
                )));
            }
        }
        for (name, v) in positives.drain(..) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Density helpers and samplers
// ---------------------------------------------------------------------------

/// Gamma(shape, rate) log-density at `x > 0`.
pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    debug_assert!(x > 0.0 && shape > 0.0 && rate > 0.0);
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density of `t = log x` when `x ~ Gamma(shape, rate)`, Jacobian
/// included.
pub fn log_gamma_pdf_logscale(t: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + shape * t - rate * t.exp()
}

/// `d/dt` of [`log_gamma_pdf_logscale`].
pub fn log_gamma_logscale_grad(t: f64, shape: f64, rate: f64) -> f64 {
    shape - rate * t.exp()
}

/// Draw from Gamma(shape, rate).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let dist = GammaDist::new(shape, 1.0 / rate).expect("positive gamma parameters");
    dist.sample(rng)
}

/// Draw from InvGamma(shape, scale): `scale / Gamma(shape, 1)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let dist = GammaDist::new(shape, 1.0).expect("positive inverse-gamma shape");
    scale / dist.sample(rng)
}

/// Draw `Sigma ~ InvWishart(scale, df)` via the Bartlett decomposition of
/// the Wishart-distributed precision `Sigma^{-1} ~ Wishart(scale^{-1}, df)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    scale: &Matrix3<f64>,
    df: f64,
    rng: &mut R,
) -> Result<Matrix3<f64>> {
    if !(df > (N_FIELDS - 1) as f64) {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart degrees of freedom {df} too small"
        )));
    }
    let chol_scale = nalgebra::Cholesky::new(*scale)
        .ok_or_else(|| Error::Numeric("inverse-Wishart scale matrix is not SPD".into()))?;
    let scale_inv = chol_scale.inverse();
    let l = nalgebra::Cholesky::new(scale_inv)
        .ok_or_else(|| Error::Numeric("inverse-Wishart scale inverse is not SPD".into()))?
        .l();
    // Bartlett factor: sqrt(chi^2) diagonal, standard normal strict lower.
    let mut a = Matrix3::zeros();
    for i in 0..N_FIELDS {
        let chi_df = df - i as f64;
        a[(i, i)] = sample_gamma(chi_df / 2.0, 0.5, rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = la * la.transpose();
    let sigma = nalgebra::Cholesky::new(wishart)
        .ok_or_else(|| Error::Numeric("Wishart draw not invertible".into()))?
        .inverse();
    // Symmetrize against roundoff so downstream Cholesky factorizations of
    // the result never see an asymmetric matrix.
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Draw a full [`HyperState`] from the prior (used by the
/// successive-conditional correctness harness and synthetic generation).
/// The half-Cauchy scales are drawn jointly with their auxiliaries so the
/// pair has exactly the augmented prior law.
pub fn draw_prior_hyper<R: Rng + ?Sized>(
    n_covariates: usize,
    consts: &PriorConstants,
    rng: &mut R,
) -> Result<HyperState> {
    let kappa = sample_gamma(1.0, consts.kappa_rate, rng);
    let sigma = sample_inverse_wishart(&Matrix3::identity(), consts.iw_df, rng)?;
    let tau_eps = sample_gamma(consts.conc_shape, consts.conc_rate, rng);
    let mut gamma = Vec::with_capacity(n_covariates);
    let mut nu = Vec::with_capacity(n_covariates);
    for _ in 0..n_covariates {
        let nu_i = sample_inv_gamma(0.5, 1.0, rng);
        let gamma_sq = sample_inv_gamma(0.5, 1.0 / nu_i, rng);
        nu.push(nu_i);
        gamma.push(gamma_sq.sqrt());
    }
    let xi = sample_inv_gamma(0.5, 1.0, rng);
    let phi = sample_inv_gamma(0.5, 1.0 / xi, rng).sqrt();
    Ok(HyperState {
        kappa,
        sigma,
        tau_eps,
        gamma,
        phi,
        nu,
        xi,
    })
}

// ---------------------------------------------------------------------------
// MALA-block prior
// ---------------------------------------------------------------------------

/// Gradient of [`log_prior`] with respect to the jointly-proposed block.
#[derive(Debug, Clone)]
pub struct PriorGrad {
    pub d_eta: FieldMatrix,
    /// Field-major coefficient gradient (field `k`, covariate `i` at
    /// `k * p + i`).
    pub d_beta: Vec<f64>,
    pub d_eps: Vec<f64>,
    pub d_log_alpha: f64,
    pub d_log_lambda: f64,
}

/// Log-density of every prior factor that involves the MALA block
/// `(eta, beta, eps, log alpha, log lambda)`, with its gradient. The field
/// factor is evaluated through `X = eta - B beta` (supplied by the caller,
/// consistent with `beta`):
///
/// ```text
/// -(3n/2) log 2pi + (3/2) logdet Q - (n/2) logdet Sigma
///   - tr(Sigma^{-1} X Q X^T) / 2
/// ```
///
/// plus the Gaussian factors for `beta` and `eps` and log-scale Gamma terms
/// for the concentrations. Factors involving only hyperparameters are not
/// included; they are constant within the block.
#[allow(clippy::too_many_arguments)]
pub fn log_prior(
    x: &FieldMatrix,
    field: &KroneckerField<'_>,
    q_logdet: f64,
    beta: &[f64],
    covariates: &CovariateTable,
    eps: &[f64],
    log_alpha: f64,
    log_lambda: f64,
    hyper: &HyperState,
    consts: &PriorConstants,
) -> Result<(f64, PriorGrad)> {
    let n = x.n_cells();
    let p = covariates.n_covariates();
    hyper.validate(p)?;
    if covariates.n_cells() != n {
        return Err(Error::InvalidArgument(format!(
            "covariate table covers {} cells, field has {n}",
            covariates.n_cells()
        )));
    }
    if beta.len() != N_FIELDS * p {
        return Err(Error::InvalidArgument(format!(
            "coefficient vector of length {} for {} fields x {p} covariates",
            beta.len(),
            N_FIELDS
        )));
    }

    let (quad, sigma_inv_xq) = field.quadform_with_grad(x)?;
    let nf = n as f64;
    let mut value = -(N_FIELDS as f64) * nf / 2.0 * LN_2PI
        + (N_FIELDS as f64) / 2.0 * q_logdet
        - nf / 2.0 * field.sigma_logdet()
        - 0.5 * quad;

    let mut d_eta = FieldMatrix::zeros(n);
    for a in 0..N_FIELDS {
        for (g, v) in d_eta.row_mut(a).iter_mut().zip(sigma_inv_xq.row(a)) {
            *g = -v;
        }
    }
    let mut d_beta = vec![0.0; N_FIELDS * p];
    for k in 0..N_FIELDS {
        for i in 0..p {
            d_beta[k * p + i] = pairwise_dot(sigma_inv_xq.row(k), covariates.column(i));
        }
    }

    // Grouped horseshoe Gaussian factor for the coefficients.
    let mut beta_terms = Vec::with_capacity(N_FIELDS * p);
    for i in 0..p {
        let v = hyper.phi * hyper.phi * hyper.gamma[i] * hyper.gamma[i];
        for k in 0..N_FIELDS {
            let b = beta[k * p + i];
            beta_terms.push(-0.5 * (LN_2PI + v.ln()) - b * b / (2.0 * v));
            d_beta[k * p + i] += -b / v;
        }
    }
    value += pairwise_sum(&beta_terms);

    // Dataset offsets.
    let mut eps_terms = Vec::with_capacity(eps.len());
    let mut d_eps = Vec::with_capacity(eps.len());
    for &e in eps {
        eps_terms.push(0.5 * (hyper.tau_eps.ln() - LN_2PI) - 0.5 * hyper.tau_eps * e * e);
        d_eps.push(-hyper.tau_eps * e);
    }
    value += pairwise_sum(&eps_terms);

    // Concentrations in log space.
    value += log_gamma_pdf_logscale(log_alpha, consts.conc_shape, consts.conc_rate);
    value += log_gamma_pdf_logscale(log_lambda, consts.conc_shape, consts.conc_rate);
    let d_log_alpha = log_gamma_logscale_grad(log_alpha, consts.conc_shape, consts.conc_rate);
    let d_log_lambda = log_gamma_logscale_grad(log_lambda, consts.conc_shape, consts.conc_rate);

    Ok((
        value,
        PriorGrad {
            d_eta,
            d_beta,
            d_eps,
            d_log_alpha,
            d_log_lambda,
        },
    ))
}

// ---------------------------------------------------------------------------
// Gibbs updates
// ---------------------------------------------------------------------------

/// Conjugate cross-field covariance update:
/// `Sigma ~ InvWishart(I + X Q X^T, df + n)`.
pub fn gibbs_sigma<R: Rng + ?Sized>(
    x: &FieldMatrix,
    q: &crate::gmrf::SparsePrecision,
    consts: &PriorConstants,
    rng: &mut R,
) -> Result<Matrix3<f64>> {
    let scatter = q.field_scatter(x)?;
    let scale = Matrix3::identity() + scatter;
    sample_inverse_wishart(&scale, consts.iw_df + x.n_cells() as f64, rng)
}

/// Conjugate offset-precision update:
/// `tau_eps ~ Gamma(shape + K/2, rate + sum eps_k^2 / 2)`.
pub fn gibbs_tau_eps<R: Rng + ?Sized>(
    eps: &[f64],
    consts: &PriorConstants,
    rng: &mut R,
) -> f64 {
    let sq: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let shape = consts.conc_shape + eps.len() as f64 / 2.0;
    let rate = consts.conc_rate + 0.5 * pairwise_sum(&sq);
    sample_gamma(shape, rate, rng)
}

/// One sweep of the auxiliary-variable horseshoe updates, in the scan order
/// `gamma -> nu -> phi -> xi`. `beta` is field-major over `p` covariates;
/// every covariate's group spans the three sub-fields (`m_i = 3`).
pub fn gibbs_horseshoe<R: Rng + ?Sized>(beta: &[f64], hyper: &mut HyperState, rng: &mut R) {
    let p = hyper.gamma.len();
    debug_assert_eq!(beta.len(), N_FIELDS * p);
    let m = N_FIELDS as f64;
    let phi_sq = hyper.phi * hyper.phi;
    for i in 0..p {
        let beta_sq: f64 = (0..N_FIELDS).map(|k| beta[k * p + i] * beta[k * p + i]).sum();
        let shape = (1.0 + m) / 2.0;
        let scale = 1.0 / hyper.nu[i] + beta_sq / (2.0 * phi_sq);
        hyper.gamma[i] = sample_inv_gamma(shape, scale, rng).sqrt();
    }
    for i in 0..p {
        hyper.nu[i] = sample_inv_gamma(1.0, 1.0 + 1.0 / (hyper.gamma[i] * hyper.gamma[i]), rng);
    }
    let mut weighted = 0.0;
    for i in 0..p {
        let beta_sq: f64 = (0..N_FIELDS).map(|k| beta[k * p + i] * beta[k * p + i]).sum();
        weighted += beta_sq / (2.0 * hyper.gamma[i] * hyper.gamma[i]);
    }
    let shape = (1.0 + m * p as f64) / 2.0;
    hyper.phi = sample_inv_gamma(shape, 1.0 / hyper.xi + weighted, rng).sqrt();
    hyper.xi = sample_inv_gamma(1.0, 1.0 + 1.0 / (hyper.phi * hyper.phi), rng);
}

/// Log-posterior of `kappa` given the centered field `X` and `Sigma` (up to
/// terms not involving `kappa`), on the log scale the random walk moves in:
///
/// ```text
/// (3/2) logdet Q(kappa) - tr(Sigma^{-1} X Q(kappa) X^T) / 2
///   + log Gamma(kappa; 1, rate) + log kappa
/// ```
pub fn kappa_logpost(
    kappa: f64,
    x: &FieldMatrix,
    sigma_inv: &Matrix3<f64>,
    lattice: &Lattice,
    consts: &PriorConstants,
) -> Result<f64> {
    let q = build_precision(lattice, kappa)?;
    let fact = Factorization::new(&q)?;
    let scatter = q.field_scatter(x)?;
    let quad = (sigma_inv * scatter).trace();
    Ok((N_FIELDS as f64) / 2.0 * fact.logdet() - 0.5 * quad
        + log_gamma_pdf(kappa, 1.0, consts.kappa_rate)
        + kappa.ln())
}
