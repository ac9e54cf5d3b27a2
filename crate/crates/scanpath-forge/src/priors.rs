//! The learnable bank of 2D Gaussian priors.
//!
//! Each prior is an axis-aligned Gaussian density over the unit square
//!
//! ```text
//! G(x, y) = 1 / (2 pi sx sy) * exp(-((x - mx)^2 / (2 sx^2) + (y - my)^2 / (2 sy^2)))
//! ```
//!
//! with the standard deviations carried as logarithms, so they stay strictly
//! positive under any sequence of gradient updates. The default bank places
//! the means on a uniform grid — a generalization of the central-bias layout
//! with one centered-plus-peripheral blob per cell — and trains the two
//! spread parameters of every prior while keeping the means fixed. A
//! configuration switch flips which half is trainable.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, VarId};

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("bank size {0} is not a perfect square")]
    NotSquare(usize),
    #[error("bank size must be positive")]
    EmptyBank,
    #[error("parameter tensors have mismatched shapes")]
    BadTensors,
}

/// One axis-aligned Gaussian: means in `[0, 1]` normalized coordinates,
/// spreads stored as logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mu_x: f64,
    pub mu_y: f64,
    pub log_sigma_x: f64,
    pub log_sigma_y: f64,
    pub trainable_mu: bool,
    pub trainable_sigma: bool,
}

impl GaussianPrior {
    pub fn sigma_x(&self) -> f64 {
        self.log_sigma_x.exp()
    }

    pub fn sigma_y(&self) -> f64 {
        self.log_sigma_y.exp()
    }
}

/// Density of the prior at a point of the unit square.
pub fn eval_gaussian(p: &GaussianPrior, x: f64, y: f64) -> f64 {
    let sx = p.sigma_x();
    let sy = p.sigma_y();
    let ex = (x - p.mu_x) * (x - p.mu_x) / (2.0 * sx * sx);
    let ey = (y - p.mu_y) * (y - p.mu_y) / (2.0 * sy * sy);
    (-(ex + ey)).exp() / (2.0 * PI * sx * sy)
}

/// The prior without its density coefficient: peak value one at the mean,
/// whatever the spread.
pub fn eval_gaussian_unit_peak(p: &GaussianPrior, x: f64, y: f64) -> f64 {
    let sx = p.sigma_x();
    let sy = p.sigma_y();
    let ex = (x - p.mu_x) * (x - p.mu_x) / (2.0 * sx * sx);
    let ey = (y - p.mu_y) * (y - p.mu_y) / (2.0 * sy * sy);
    (-(ex + ey)).exp()
}

/// Initial spread for grid-initialized banks.
pub const INIT_SIGMA: f64 = 0.15;

/// The fixed-cardinality set of Gaussian priors rendered into the feature
/// stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorBank {
    priors: Vec<GaussianPrior>,
}

impl PriorBank {
    /// Builds a bank of `n` priors (a perfect square) with means on a
    /// `sqrt(n) x sqrt(n)` uniform grid over `[0.125, 0.875]^2` and all
    /// spreads at `log(0.15)`. With `trainable_means` false the spreads are
    /// the two learnable parameters per prior; with it true, the means are.
    pub fn init_grid(n: usize, trainable_means: bool) -> Result<Self, PriorError> {
        if n == 0 {
            return Err(PriorError::EmptyBank);
        }
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(PriorError::NotSquare(n));
        }
        let lo = 0.125;
        let hi = 0.875;
        let step = if side > 1 {
            (hi - lo) / (side - 1) as f64
        } else {
            0.0
        };
        let mut priors = Vec::with_capacity(n);
        for row in 0..side {
            for col in 0..side {
                priors.push(GaussianPrior {
                    mu_x: lo + step * col as f64,
                    mu_y: lo + step * row as f64,
                    log_sigma_x: INIT_SIGMA.ln(),
                    log_sigma_y: INIT_SIGMA.ln(),
                    trainable_mu: trainable_means,
                    trainable_sigma: !trainable_means,
                });
            }
        }
        Ok(PriorBank { priors })
    }

    pub fn from_priors(priors: Vec<GaussianPrior>) -> Result<Self, PriorError> {
        if priors.is_empty() {
            return Err(PriorError::EmptyBank);
        }
        Ok(PriorBank { priors })
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn priors(&self) -> &[GaussianPrior] {
        &self.priors
    }

    /// Renders every prior on an `h x w` grid, sampling pixel centers of the
    /// unit square. Pure value-level counterpart of [`PriorBank::render_on_tape`].
    pub fn render_values(&self, h: usize, w: usize) -> Tensor {
        self.render_with(h, w, eval_gaussian)
    }

    /// As [`PriorBank::render_values`] but without the density coefficient.
    pub fn render_values_unit_peak(&self, h: usize, w: usize) -> Tensor {
        self.render_with(h, w, eval_gaussian_unit_peak)
    }

    fn render_with(&self, h: usize, w: usize, f: fn(&GaussianPrior, f64, f64) -> f64) -> Tensor {
        let n = self.priors.len();
        let mut data = Vec::with_capacity(n * h * w);
        for p in &self.priors {
            for r in 0..h {
                let y = (r as f64 + 0.5) / h as f64;
                for c in 0..w {
                    let x = (c as f64 + 0.5) / w as f64;
                    data.push(f(p, x, y));
                }
            }
        }
        Tensor::new([n, h, w], data)
    }

    /// Parameter tensors in bank order: means `[n, 2]` and log spreads
    /// `[n, 2]`, each row `(x, y)`.
    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        let n = self.priors.len();
        let mut mu = Vec::with_capacity(2 * n);
        let mut ls = Vec::with_capacity(2 * n);
        for p in &self.priors {
            mu.push(p.mu_x);
            mu.push(p.mu_y);
            ls.push(p.log_sigma_x);
            ls.push(p.log_sigma_y);
        }
        (Tensor::new([n, 2], mu), Tensor::new([n, 2], ls))
    }

    /// Rebuilds a bank from parameter tensors produced by
    /// [`PriorBank::to_tensors`].
    pub fn from_tensors(
        mu: &Tensor,
        log_sigma: &Tensor,
        trainable_means: bool,
    ) -> Result<Self, PriorError> {
        if mu.shape() != log_sigma.shape() || mu.shape().len() != 2 || mu.shape()[1] != 2 {
            return Err(PriorError::BadTensors);
        }
        let n = mu.shape()[0];
        if n == 0 {
            return Err(PriorError::EmptyBank);
        }
        let mus = mu.data();
        let lss = log_sigma.data();
        let priors = (0..n)
            .map(|i| GaussianPrior {
                mu_x: mus[2 * i],
                mu_y: mus[2 * i + 1],
                log_sigma_x: lss[2 * i],
                log_sigma_y: lss[2 * i + 1],
                trainable_mu: trainable_means,
                trainable_sigma: !trainable_means,
            })
            .collect();
        Ok(PriorBank { priors })
    }

    /// Records the differentiable rendering of bound parameter tensors.
    /// Gradients flow back into both `mu` and `log_sigma` leaves.
    pub fn render_on_tape(
        tape: &mut Tape,
        mu: VarId,
        log_sigma: VarId,
        h: usize,
        w: usize,
    ) -> Result<VarId, crate::autodiff::AutodiffError> {
        tape.gaussian_map(mu, log_sigma, h, w)
    }

    /// Differentiable rendering without the density coefficient.
    pub fn render_unit_peak_on_tape(
        tape: &mut Tape,
        mu: VarId,
        log_sigma: VarId,
        h: usize,
        w: usize,
    ) -> Result<VarId, crate::autodiff::AutodiffError> {
        tape.gaussian_map_unit_peak(mu, log_sigma, h, w)
    }
}
