//! Diminishing Robbins–Monro step-size adaptation for the two Metropolis
//! kernels.
//!
//! Each kernel keeps a log step size that is nudged after every proposal,
//!
//! ```text
//! log h  <-  log h + c * t^(-gamma) * (1{accepted} - target)
//! ```
//!
//! with decay exponent `gamma = 0.7` and scale `c = 1`. The increments are
//! summable-square but not summable, so the step converges to the value
//! realizing the target acceptance rate; freezing after burn-in makes the
//! post-burn-in kernel exactly stationary.

/// Target acceptance rate of the gradient-drifted joint update.
pub const MALA_TARGET: f64 = 0.57;
/// Target acceptance rate of the log-scale random walk on `kappa`.
pub const RW_TARGET: f64 = 0.40;
/// Decay exponent `gamma` of the adaptation gain.
pub const ADAPT_DECAY: f64 = 0.7;
/// Gain scale `c`.
pub const ADAPT_SCALE: f64 = 1.0;

/// Step sizes and adaptation bookkeeping shared by both kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptState {
    pub log_step_mala: f64,
    pub log_step_rw: f64,
    /// Sweep counter driving the gain `c * iteration^(-gamma)`.
    pub iteration: u64,
    pub target_mala: f64,
    pub target_rw: f64,
    /// Once set, step sizes never change again.
    pub frozen: bool,
}

impl AdaptState {
    pub fn new(log_step_mala: f64, log_step_rw: f64) -> Self {
        AdaptState {
            log_step_mala,
            log_step_rw,
            iteration: 0,
            target_mala: MALA_TARGET,
            target_rw: RW_TARGET,
            frozen: false,
        }
    }

    /// Advance the sweep counter (call once per sweep, before recording).
    pub fn advance(&mut self) {
        self.iteration += 1;
    }

    /// Stop all further adaptation.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn gain(&self) -> f64 {
        ADAPT_SCALE * (self.iteration.max(1) as f64).powf(-ADAPT_DECAY)
    }

    pub fn record_mala(&mut self, accepted: bool) {
        if !self.frozen {
            self.log_step_mala += self.gain() * (f64::from(u8::from(accepted)) - self.target_mala);
        }
    }

    pub fn record_rw(&mut self, accepted: bool) {
        if !self.frozen {
            self.log_step_rw += self.gain() * (f64::from(u8::from(accepted)) - self.target_rw);
        }
    }
}
