//! Link functions between latent link-scale fields and observable scales.
//!
//! The three-part natural-cover composition `p_L = (p_C, p_B, p_U)` is linked
//! to two free coordinates by the additive log-ratio transform with the open
//! class as reference:
//!
//! ```text
//! alr(p_L) = (ln(p_C / p_U), ln(p_B / p_U))
//! ```
//!
//! The human land-use fraction `p_H` uses the logit link. Observed total
//! cover mixes the two through the deterministic decomposition
//!
//! ```text
//! z_C = p_C (1 - p_H),  z_B = p_B (1 - p_H),  z_U = p_U (1 - p_H) + p_H
//! ```
//!
//! (human use converts natural cover into open land, so `z_U >= p_H`).
//!
//! All inverse links are overflow-safe (shift-by-max in the ALR inverse, the
//! two-branch logistic) and strictly interior: before entering any
//! log-likelihood, probabilities are clamped to
//! `[LIKELIHOOD_CLAMP, 1 - LIKELIHOOD_CLAMP]`. Analytic Jacobians for the
//! full eta -> z chain are provided and finite-difference gated in the tests.

use crate::error::{Error, Result};

/// Interior clamp applied to inverse-link outputs before log-likelihoods.
pub const LIKELIHOOD_CLAMP: f64 = 1e-12;

/// Interior clamp applied to raw observations at ingestion.
pub const INGEST_CLAMP: f64 = 1e-5;

/// A point in the open 3-part simplex (components positive, summing to 1
/// within 1e-12).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composition3 {
    pub c: f64,
    pub b: f64,
    pub u: f64,
}

impl Composition3 {
    /// Validating constructor.
    pub fn new(c: f64, b: f64, u: f64) -> Result<Self> {
        for (name, v) in [("c", c), ("b", b), ("u", u)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "composition component {name} = {v} is not in (0, 1)"
                )));
            }
        }
        let sum = c + b + u;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "composition sums to {sum}, not 1"
            )));
        }
        Ok(Composition3 { c, b, u })
    }

    /// Constructor for internally-produced values that are valid by
    /// construction.
    pub(crate) fn new_unchecked(c: f64, b: f64, u: f64) -> Self {
        debug_assert!(c > 0.0 && b > 0.0 && u > 0.0);
        debug_assert!((c + b + u - 1.0).abs() <= 1e-9);
        Composition3 { c, b, u }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.c, self.b, self.u]
    }

    /// Centered log-ratio coordinates (sum to zero).
    pub fn clr(&self) -> [f64; 3] {
        let lc = self.c.ln();
        let lb = self.b.ln();
        let lu = self.u.ln();
        let m = (lc + lb + lu) / 3.0;
        [lc - m, lb - m, lu - m]
    }
}

/// Forward additive log-ratio transform (reference class: open land `u`).
pub fn alr_forward(p: &Composition3) -> (f64, f64) {
    ((p.c / p.u).ln(), (p.b / p.u).ln())
}

/// Inverse additive log-ratio transform. Overflow-safe via shift-by-max and
/// strictly interior for all finite inputs: components are floored at the
/// smallest positive normal float and capped just below one (the dominant
/// component would otherwise round to exactly 1 for inputs beyond ~37).
pub fn alr_inverse(l1: f64, l2: f64) -> Composition3 {
    let m = l1.max(l2).max(0.0);
    let e1 = (l1 - m).exp();
    let e2 = (l2 - m).exp();
    let e0 = (-m).exp();
    let denom = e0 + e1 + e2;
    let floor = f64::MIN_POSITIVE;
    let cap = 1.0 - f64::EPSILON / 2.0;
    Composition3::new_unchecked(
        (e1 / denom).clamp(floor, cap),
        (e2 / denom).clamp(floor, cap),
        (e0 / denom).clamp(floor, cap),
    )
}

/// Log-odds of a probability in the open unit interval.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "logit argument {p} is not in (0, 1)"
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Overflow-safe logistic function, clamped to the open unit interval (never
/// underflows to exactly 0 or rounds to exactly 1).
pub fn logit_inverse(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Clamp a probability to the likelihood-safe interior
/// `[LIKELIHOOD_CLAMP, 1 - LIKELIHOOD_CLAMP]`.
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP)
}

/// Combine natural cover and human use into the observable total-cover
/// composition.
pub fn decompose_cover(p_l: &Composition3, p_h: f64) -> Result<Composition3> {
    if !(p_h > 0.0 && p_h < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "human fraction {p_h} is not in (0, 1)"
        )));
    }
    let r = 1.0 - p_h;
    Ok(Composition3::new_unchecked(
        p_l.c * r,
        p_l.b * r,
        p_l.u * r + p_h,
    ))
}

/// Values and derivatives of the full link chain at one cell.
///
/// `eta = (eta_l1, eta_l2, eta_h)` maps to `p_L` (via the inverse ALR), `p_H`
/// (via the logistic) and `z` (via the cover decomposition). Derivative
/// conventions: rows index the output component (C, B, U), columns the eta
/// coordinate.
#[derive(Debug, Clone)]
pub struct LinkJacobian {
    pub p_l: Composition3,
    pub p_h: f64,
    pub z: Composition3,
    /// d p_L / d (eta_l1, eta_l2); rows C, B, U.
    pub dpl_deta: [[f64; 2]; 3],
    /// d p_H / d eta_h = p_H (1 - p_H).
    pub dph_detah: f64,
    /// d z / d (eta_l1, eta_l2, eta_h); rows z_C, z_B, z_U.
    pub dz_deta: [[f64; 3]; 3],
}

/// Evaluate the link chain and its analytic Jacobians at one cell. Inverse
/// link outputs are clamped to the likelihood-safe interior first, and the
/// derivatives are evaluated at the clamped values so that the chain rule
/// stays internally consistent.
pub fn link_jacobians(eta_l1: f64, eta_l2: f64, eta_h: f64) -> Result<LinkJacobian> {
    for (name, v) in [("eta_l1", eta_l1), ("eta_l2", eta_l2), ("eta_h", eta_h)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite link input {name} = {v}")));
        }
    }
    let raw = alr_inverse(eta_l1, eta_l2);
    let mut parts = [
        clamp_probability(raw.c),
        clamp_probability(raw.b),
        clamp_probability(raw.u),
    ];
    let sum: f64 = parts.iter().sum();
    for p in &mut parts {
        *p /= sum;
    }
    let p_l = Composition3::new_unchecked(parts[0], parts[1], parts[2]);
    let p_h = clamp_probability(logit_inverse(eta_h));
    let z = decompose_cover(&p_l, p_h)?;

    // Softmax derivative with the reference logit fixed at zero.
    let (pc, pb, pu) = (p_l.c, p_l.b, p_l.u);
    let dpl_deta = [
        [pc * (1.0 - pc), -pc * pb],
        [-pb * pc, pb * (1.0 - pb)],
        [-pu * pc, -pu * pb],
    ];
    let dph = p_h * (1.0 - p_h);
    let r = 1.0 - p_h;
    let dz_deta = [
        [r * dpl_deta[0][0], r * dpl_deta[0][1], -pc * dph],
        [r * dpl_deta[1][0], r * dpl_deta[1][1], -pb * dph],
        [r * dpl_deta[2][0], r * dpl_deta[2][1], (1.0 - pu) * dph],
    ];
    Ok(LinkJacobian {
        p_l,
        p_h,
        z,
        dpl_deta,
        dph_detah: dph,
        dz_deta,
    })
}
