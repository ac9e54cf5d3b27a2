//! Scanpath prediction with adversarial training, plus the full gaze-metric
//! evaluation stack needed to judge the predictions.
//!
//! The crate is organized around a small number of self-contained modules:
//!
//! - [`gaze`] — domain types: fixations, scanpaths, saliency maps, observer
//!   pools, and the metric report record.
//! - [`metrics`] — MultiMatch (shape, direction, length, position), NSS,
//!   Congruency, and saliency-map synthesis from pooled fixations.
//! - [`autodiff`] — a minimal reverse-mode tape over double-precision
//!   tensors with every layer the models need; no external ML framework.
//! - [`priors`] — the learnable bank of 2D Gaussian priors that generalizes
//!   the central-bias layout, rendered differentiably on the feature grid.
//! - [`models`] — the scanpath generator and the sequence discriminator.
//! - [`training`] — the adversarial min-max loop with periodic observer
//!   resampling, checkpointing, and telemetry.
//! - [`data`] — JSONL datasets, the synthetic blob-world generator, splits,
//!   raster I/O, and the external-feature import hook.
//! - [`evaluation`] — per-image and aggregate metric reports for a trained
//!   generator.
//!
//! A narrative guide with runnable examples lives in the `book/` directory of
//! the repository; its code blocks are compiled as doctests of this crate so
//! the guide cannot drift from the API.

pub mod autodiff;
pub mod data;
pub mod evaluation;
pub mod gaze;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod priors;
mod seeding;
pub mod training;

pub use gaze::{Fixation, MetricReport, ObserverPool, SaliencyMap, Scanpath};

// Book chapters double as doctests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/scanpaths.md")]
    mod scanpaths {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
