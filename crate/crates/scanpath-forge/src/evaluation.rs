//! Metric reports for a trained generator: per image, the predicted
//! scanpath is compared against every observer with MultiMatch (reduced by
//! mean or best match), and against the pooled saliency map with NSS and
//! Congruency. The aggregate block is the field-wise mean over images.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::gaze::{GazeError, MetricReport, ObserverPool, Scanpath};
use crate::metrics::{
    congruency, default_sigma, multimatch, nss, synthesize_saliency, MetricError,
};
use crate::models::{Generator, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation needs at least one image")]
    EmptyDataset,
    #[error("image '{id}': {source}")]
    Metric { id: String, source: MetricError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gaze(#[from] GazeError),
}

/// How the per-observer MultiMatch scores reduce to one number per image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmReduce {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub mm_reduce: MmReduce,
    /// Binarization quantile for congruency.
    pub congruency_q: f64,
    /// Smoothing bandwidth for the pooled saliency map; `None` derives it
    /// from the screen width.
    pub saliency_sigma: Option<f64>,
    /// Generated scanpath length.
    pub seq_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mm_reduce: MmReduce::Mean,
            congruency_q: 0.9,
            saliency_sigma: None,
            seq_len: 10,
        }
    }
}

/// One stimulus to evaluate on.
pub struct EvalInput {
    pub image_id: String,
    pub image: Tensor,
    pub pool: ObserverPool,
}

/// The JSON report: per image exactly the seven table fields, plus one
/// aggregate block of the same shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: BTreeMap<String, MetricReport>,
    pub aggregate: MetricReport,
}

/// Scores one predicted scanpath against an observer pool.
pub fn score_scanpath(
    predicted: &Scanpath,
    pool: &ObserverPool,
    cfg: &EvalConfig,
) -> Result<MetricReport, MetricError> {
    let mut scores = Vec::with_capacity(pool.len());
    for observer in pool.scanpaths() {
        if observer.len() < 2 {
            continue;
        }
        scores.push(multimatch(predicted, observer)?);
    }
    if scores.is_empty() {
        return Err(MetricError::TooShort { need: 2, got: 1 });
    }
    let reduce = |f: fn(&crate::metrics::MultiMatch) -> f64| -> f64 {
        let values = scores.iter().map(f);
        match cfg.mm_reduce {
            MmReduce::Mean => values.sum::<f64>() / scores.len() as f64,
            MmReduce::Max => values.fold(f64::NEG_INFINITY, f64::max),
        }
    };
    let mm_shape = reduce(|m| m.shape);
    let mm_direction = reduce(|m| m.direction);
    let mm_length = reduce(|m| m.length);
    let mm_position = reduce(|m| m.position);
    let mm_mean = (mm_shape + mm_direction + mm_length + mm_position) / 4.0;

    let (w, _) = pool.screen();
    let sigma = cfg.saliency_sigma.unwrap_or_else(|| default_sigma(w));
    let sal = synthesize_saliency(pool, sigma)?;
    Ok(MetricReport {
        mm_shape,
        mm_direction,
        mm_length,
        mm_position,
        mm_mean,
        nss: nss(predicted, &sal)?,
        congruency: congruency(predicted, &sal, cfg.congruency_q)?,
    })
}

fn mean_report(reports: &[&MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    MetricReport {
        mm_shape: avg(|r| r.mm_shape),
        mm_direction: avg(|r| r.mm_direction),
        mm_length: avg(|r| r.mm_length),
        mm_position: avg(|r| r.mm_position),
        mm_mean: avg(|r| r.mm_mean),
        nss: avg(|r| r.nss),
        congruency: avg(|r| r.congruency),
    }
}

/// Evaluates the generator over a dataset: per image a generated scanpath
/// is scored against the observers; results aggregate by field-wise mean.
pub fn evaluate_generator(
    gen: &Generator,
    inputs: &[EvalInput],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if inputs.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut images = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    for input in inputs {
        let (w, h) = input.pool.screen();
        let predicted = gen.predict_scanpath(&input.image, cfg.seq_len, &input.image_id, w, h)?;
        let report =
            score_scanpath(&predicted, &input.pool, cfg).map_err(|source| EvalError::Metric {
                id: input.image_id.clone(),
                source,
            })?;
        images.insert(input.image_id.clone(), report);
        predictions.insert(input.image_id.clone(), predicted);
    }
    let aggregate = mean_report(&images.values().collect::<Vec<_>>());
    Ok(EvalReport { images, aggregate })
}

/// Generated scanpaths keyed by image id, for rendering or export.
pub fn predict_all(
    gen: &Generator,
    inputs: &[EvalInput],
    seq_len: usize,
) -> Result<BTreeMap<String, Scanpath>, EvalError> {
    let mut out = BTreeMap::new();
    for input in inputs {
        let (w, h) = input.pool.screen();
        out.insert(
            input.image_id.clone(),
            gen.predict_scanpath(&input.image, seq_len, &input.image_id, w, h)?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::models::GeneratorConfig;

    fn inputs(n: usize, seed: u64) -> Vec<EvalInput> {
        generate_synthetic(&SyntheticSpec::default(), n, seed)
            .images
            .iter()
            .map(|img| EvalInput {
                image_id: img.record.image_id.clone(),
                image: img.image.clone(),
                pool: img.record.pool().unwrap(),
            })
            .collect()
    }

    #[test]
    fn report_has_exactly_seven_fields_per_image() {
        let gen = Generator::new(GeneratorConfig::default(), 1).unwrap();
        let report = evaluate_generator(&gen, &inputs(2, 3), &EvalConfig::default()).unwrap();
        assert_eq!(report.images.len(), 2);
        let json = serde_json::to_value(&report).unwrap();
        for (_, fields) in json["images"].as_object().unwrap() {
            let obj = fields.as_object().unwrap();
            assert_eq!(obj.len(), 7, "expected 7 fields, got {obj:?}");
            for key in [
                "mm_shape",
                "mm_direction",
                "mm_length",
                "mm_position",
                "mm_mean",
                "nss",
                "congruency",
            ] {
                assert!(obj.contains_key(key), "missing {key}");
            }
        }
        assert_eq!(json["aggregate"].as_object().unwrap().len(), 7);
    }

    #[test]
    fn mm_mean_is_mean_of_components() {
        let gen = Generator::new(GeneratorConfig::default(), 2).unwrap();
        let report = evaluate_generator(&gen, &inputs(1, 4), &EvalConfig::default()).unwrap();
        for r in report.images.values() {
            let mean = (r.mm_shape + r.mm_direction + r.mm_length + r.mm_position) / 4.0;
            assert!((r.mm_mean - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn max_reduce_dominates_mean_reduce() {
        let gen = Generator::new(GeneratorConfig::default(), 3).unwrap();
        let data = inputs(2, 9);
        let mean = evaluate_generator(&gen, &data, &EvalConfig::default()).unwrap();
        let max = evaluate_generator(
            &gen,
            &data,
            &EvalConfig {
                mm_reduce: MmReduce::Max,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        for (id, m) in &mean.images {
            assert!(max.images[id].mm_shape >= m.mm_shape - 1e-12);
            assert!(max.images[id].mm_position >= m.mm_position - 1e-12);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let gen = Generator::new(GeneratorConfig::default(), 1).unwrap();
        assert!(matches!(
            evaluate_generator(&gen, &[], &EvalConfig::default()),
            Err(EvalError::EmptyDataset)
        ));
    }
}
