//! Point and interval summaries of a finished chain: per-cell posterior
//! means of the natural-cover composition, the human fraction, and the
//! total-cover composition; per-cell 95% quantile bands for the human
//! fraction; and per-cell 95% elliptical credible regions fitted to the
//! `(eta_L1, eta_L2)` samples, whose boundary maps into the simplex through
//! the inverse log-ratio link.

use crate::error::{Error, Result};
use crate::math::pairwise_sum;
use crate::model::Model;
use crate::sampler::ChainOutput;
use crate::transforms::{alr_inverse, clamp_probability, decompose_cover, logit_inverse};

/// 0.95 quantile of the chi-squared distribution with 2 degrees of freedom:
/// the squared Mahalanobis radius of a 95% Gaussian ellipse.
pub const ELLIPSE_RADIUS_SQ: f64 = 5.991464547107982;

/// A Gaussian credible ellipse `(x - mean)' cov^{-1} (x - mean) <= radius_sq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub radius_sq: f64,
}

impl Ellipse {
    /// Fit mean and unbiased covariance to paired samples.
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit an ellipse to zero samples".into(),
            ));
        }
        let n = samples.len() as f64;
        // Shift by the first sample before accumulating: the moments of the
        // shifted data lose far less precision to cancellation, and a run of
        // bitwise-identical samples collapses to an exactly zero covariance.
        let (sx, sy) = samples[0];
        let xs: Vec<f64> = samples.iter().map(|s| s.0 - sx).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.1 - sy).collect();
        let mx = pairwise_sum(&xs) / n;
        let my = pairwise_sum(&ys) / n;
        let mut cov = [[0.0; 2]; 2];
        if samples.len() > 1 {
            let cxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
            let cyy: Vec<f64> = ys.iter().map(|y| (y - my) * (y - my)).collect();
            let cxy: Vec<f64> = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mx) * (y - my))
                .collect();
            cov[0][0] = pairwise_sum(&cxx) / (n - 1.0);
            cov[1][1] = pairwise_sum(&cyy) / (n - 1.0);
            cov[0][1] = pairwise_sum(&cxy) / (n - 1.0);
            cov[1][0] = cov[0][1];
        }
        Ok(Ellipse {
            mean: [sx + mx, sy + my],
            cov,
            radius_sq: ELLIPSE_RADIUS_SQ,
        })
    }

    /// Eigenpairs of the symmetric covariance, largest first; eigenvalues
    /// clamped at zero against rounding.
    fn principal_axes(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let a = self.cov[0][0];
        let b = self.cov[0][1];
        let d = self.cov[1][1];
        let half_gap = (a - d) / 2.0;
        let disc = (half_gap * half_gap + b * b).sqrt();
        let l1 = ((a + d) / 2.0 + disc).max(0.0);
        let l2 = ((a + d) / 2.0 - disc).max(0.0);
        let v1 = if b.abs() > 0.0 {
            let norm = (b * b + (l1 - a) * (l1 - a)).sqrt();
            [b / norm, (l1 - a) / norm]
        } else if a >= d {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        let v2 = [-v1[1], v1[0]];
        ([l1, l2], [v1, v2])
    }

    /// Point on the boundary at parameter `angle` in [0, 2 pi). A
    /// zero-covariance ellipse degenerates to its center.
    pub fn boundary_point(&self, angle: f64) -> (f64, f64) {
        let (lambda, v) = self.principal_axes();
        let r1 = (self.radius_sq * lambda[0]).sqrt();
        let r2 = (self.radius_sq * lambda[1]).sqrt();
        let (s, c) = angle.sin_cos();
        (
            self.mean[0] + r1 * c * v[0][0] + r2 * s * v[1][0],
            self.mean[1] + r1 * c * v[0][1] + r2 * s * v[1][1],
        )
    }

    /// Whether the point lies inside (or on) the region.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        let det = self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0];
        if det <= 0.0 {
            return dx == 0.0 && dy == 0.0;
        }
        let q = (self.cov[1][1] * dx * dx - 2.0 * self.cov[0][1] * dx * dy
            + self.cov[0][0] * dy * dy)
            / det;
        q <= self.radius_sq
    }

    /// Area of the region, zero for degenerate covariance.
    pub fn area(&self) -> f64 {
        let det = self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0];
        std::f64::consts::PI * self.radius_sq * det.max(0.0).sqrt()
    }
}

/// Posterior mean with an equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-cell and scalar posterior summaries of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummaries {
    pub n_samples: usize,
    /// Posterior mean natural-cover composition (C, B, U) per cell.
    pub p_l_mean: Vec<[f64; 3]>,
    /// Posterior mean human fraction per cell.
    pub p_h_mean: Vec<f64>,
    /// 2.5% quantile of the human fraction per cell.
    pub p_h_lower: Vec<f64>,
    /// 97.5% quantile of the human fraction per cell.
    pub p_h_upper: Vec<f64>,
    /// Posterior mean total-cover composition per cell.
    pub z_mean: Vec<[f64; 3]>,
    /// 95% credible ellipse on (eta_L1, eta_L2) per cell.
    pub ellipses: Vec<Ellipse>,
    /// Posterior mean coefficients on the standardized design, field-major.
    pub beta_mean: Vec<f64>,
    /// The same coefficients mapped to the raw covariate scale.
    pub beta_mean_raw: Vec<f64>,
    pub eps: Vec<ScalarSummary>,
    pub alpha: ScalarSummary,
    pub lambda: ScalarSummary,
    pub kappa: ScalarSummary,
    pub tau_eps: ScalarSummary,
}

/// Empirical quantile with linear interpolation between order statistics;
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn scalar_summary(values: &mut Vec<f64>) -> ScalarSummary {
    let mean = pairwise_sum(values) / values.len() as f64;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ScalarSummary {
        mean,
        lower: quantile(values, 0.025),
        upper: quantile(values, 0.975),
    }
}

/// Summarize the thinned samples of a finished chain. Requires at least 100
/// samples so the 95% quantiles are supported by data.
pub fn posterior_summaries(model: &Model, output: &ChainOutput) -> Result<PosteriorSummaries> {
    let samples = &output.latent_samples;
    let m = samples.len();
    if m < 100 {
        return Err(Error::InvalidArgument(format!(
            "posterior summaries need at least 100 samples, chain stored {m}"
        )));
    }
    if output.hyper_samples.len() != m {
        return Err(Error::InvalidArgument(
            "latent and hyperparameter sample counts differ".into(),
        ));
    }
    let n = model.n_cells();
    let k_sets = model.n_datasets();

    let mut p_l_mean = vec![[0.0; 3]; n];
    let mut p_h_mean = vec![0.0; n];
    let mut z_mean = vec![[0.0; 3]; n];
    let mut p_h_lower = vec![0.0; n];
    let mut p_h_upper = vec![0.0; n];
    let mut ellipses = Vec::with_capacity(n);
    let mut p_h_col = vec![0.0; m];
    let mut pair_col = vec![(0.0, 0.0); m];
    for s in 0..n {
        let mut acc_l = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut acc_z = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for (j, state) in samples.iter().enumerate() {
            let l1 = state.eta.get(0, s);
            let l2 = state.eta.get(1, s);
            let p_l = alr_inverse(l1, l2);
            let p_h = clamp_probability(logit_inverse(state.eta.get(2, s)));
            let z = decompose_cover(&p_l, p_h)?;
            let la = p_l.as_array();
            let za = z.as_array();
            for i in 0..3 {
                acc_l[i][j] = la[i];
                acc_z[i][j] = za[i];
            }
            p_h_col[j] = p_h;
            pair_col[j] = (l1, l2);
        }
        for i in 0..3 {
            p_l_mean[s][i] = pairwise_sum(&acc_l[i]) / m as f64;
            z_mean[s][i] = pairwise_sum(&acc_z[i]) / m as f64;
        }
        p_h_mean[s] = pairwise_sum(&p_h_col) / m as f64;
        ellipses.push(Ellipse::fit(&pair_col)?);
        p_h_col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        p_h_lower[s] = quantile(&p_h_col, 0.025);
        p_h_upper[s] = quantile(&p_h_col, 0.975);
    }

    let p = model.n_covariates();
    let mut beta_mean = vec![0.0; 3 * p];
    for (j, b) in beta_mean.iter_mut().enumerate() {
        let col: Vec<f64> = samples.iter().map(|st| st.beta[j]).collect();
        *b = pairwise_sum(&col) / m as f64;
    }
    let mut beta_mean_raw = Vec::with_capacity(3 * p);
    for k in 0..3 {
        beta_mean_raw.extend(
            model
                .covariates()
                .coeffs_to_raw_scale(&beta_mean[k * p..(k + 1) * p]),
        );
    }

    let mut eps = Vec::with_capacity(k_sets);
    for k in 0..k_sets {
        let mut col: Vec<f64> = samples.iter().map(|st| st.eps[k]).collect();
        eps.push(scalar_summary(&mut col));
    }
    let mut alpha_col: Vec<f64> = samples.iter().map(|st| st.log_alpha.exp()).collect();
    let mut lambda_col: Vec<f64> = samples.iter().map(|st| st.log_lambda.exp()).collect();
    let mut kappa_col: Vec<f64> = output.hyper_samples.iter().map(|h| h.kappa).collect();
    let mut tau_col: Vec<f64> = output.hyper_samples.iter().map(|h| h.tau_eps).collect();

    Ok(PosteriorSummaries {
        n_samples: m,
        p_l_mean,
        p_h_mean,
        p_h_lower,
        p_h_upper,
        z_mean,
        ellipses,
        beta_mean,
        beta_mean_raw,
        eps,
        alpha: scalar_summary(&mut alpha_col),
        lambda: scalar_summary(&mut lambda_col),
        kappa: scalar_summary(&mut kappa_col),
        tau_eps: scalar_summary(&mut tau_col),
    })
}
