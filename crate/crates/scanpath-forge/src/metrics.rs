//! The gaze-metric evaluation stack: MultiMatch vector alignment with its
//! four spatial components, NSS, Congruency, and saliency-map synthesis from
//! pooled fixations.
//!
//! All operations are pure functions over the [`gaze`](crate::gaze) types and
//! are safe to call concurrently on shared inputs.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use thiserror::Error;

use crate::gaze::{validate_scanpath, Fixation, GazeError, ObserverPool, SaliencyMap, Scanpath};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("scanpath too short: need at least {need} fixations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("screen sizes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    ScreenMismatch {
        a_w: u32,
        a_h: u32,
        b_w: u32,
        b_h: u32,
    },
    #[error("alignment requires nonempty saccade sequences")]
    EmptyInput,
    #[error("saliency map is flat: standard deviation below 1e-12")]
    FlatMap,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("quantile must lie strictly between 0 and 1, got {0}")]
    BadQuantile(f64),
    #[error(transparent)]
    Gaze(#[from] GazeError),
}

/// The gaze jump between two consecutive fixations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaccadeVector {
    pub dx: f64,
    pub dy: f64,
    pub amplitude: f64,
    /// Direction in `(-pi, pi]`; zero for a zero-amplitude saccade.
    pub angle: f64,
}

impl SaccadeVector {
    pub fn new(dx: f64, dy: f64) -> Self {
        let amplitude = dx.hypot(dy);
        let angle = if amplitude > 0.0 {
            let a = dy.atan2(dx);
            if a == -PI {
                PI
            } else {
                a
            }
        } else {
            0.0
        };
        SaccadeVector {
            dx,
            dy,
            amplitude,
            angle,
        }
    }

    fn between(from: &Fixation, to: &Fixation) -> Self {
        SaccadeVector::new(to.x - from.x, to.y - from.y)
    }
}

/// Saccade vector `k` points from fixation `k` to fixation `k + 1`.
pub fn saccade_vectors(sp: &Scanpath) -> Result<Vec<SaccadeVector>, MetricError> {
    validate_scanpath(sp)?;
    if sp.len() < 2 {
        return Err(MetricError::TooShort {
            need: 2,
            got: sp.len(),
        });
    }
    Ok(sp
        .fixations
        .windows(2)
        .map(|w| SaccadeVector::between(&w[0], &w[1]))
        .collect())
}

/// A monotone pairing of two saccade sequences: starts at `(0, 0)`, ends at
/// `(m-1, n-1)`, and each step increments `i`, `j`, or both by one.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentPath {
    pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of `|u_i - v_j|` over the aligned pairs.
    pub fn total_cost(&self, u: &[SaccadeVector], v: &[SaccadeVector]) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j)| vector_distance(&u[i], &v[j]))
            .sum()
    }
}

fn vector_distance(a: &SaccadeVector, b: &SaccadeVector) -> f64 {
    (a.dx - b.dx).hypot(a.dy - b.dy)
}

/// Minimum-total-cost monotone alignment of two saccade sequences, computed
/// by dynamic programming over the step DAG. Cost of pairing `(i, j)` is the
/// Euclidean norm of the vector difference. Ties are broken deterministically
/// by preferring the diagonal step, then the `i` step, then the `j` step.
pub fn align(u: &[SaccadeVector], v: &[SaccadeVector]) -> Result<AlignmentPath, MetricError> {
    if u.is_empty() || v.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let (m, n) = (u.len(), v.len());

    // cost-to-go from each cell to (m-1, n-1), inclusive of the cell itself
    let mut togo = vec![0.0f64; m * n];
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            let c = vector_distance(&u[i], &v[j]);
            let rest = match (i + 1 < m, j + 1 < n) {
                (false, false) => 0.0,
                (false, true) => togo[i * n + j + 1],
                (true, false) => togo[(i + 1) * n + j],
                (true, true) => togo[(i + 1) * n + j + 1]
                    .min(togo[(i + 1) * n + j])
                    .min(togo[i * n + j + 1]),
            };
            togo[i * n + j] = c + rest;
        }
    }

    let mut pairs = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (0usize, 0usize);
    pairs.push((i, j));
    while i + 1 < m || j + 1 < n {
        let diag = (i + 1 < m && j + 1 < n).then(|| togo[(i + 1) * n + j + 1]);
        let istep = (i + 1 < m).then(|| togo[(i + 1) * n + j]);
        let jstep = (j + 1 < n).then(|| togo[i * n + j + 1]);
        let best = [diag, istep, jstep]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if diag == Some(best) {
            i += 1;
            j += 1;
        } else if istep == Some(best) {
            i += 1;
        } else {
            j += 1;
        }
        pairs.push((i, j));
    }
    Ok(AlignmentPath { pairs })
}

/// The four MultiMatch similarity components and their mean, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiMatch {
    pub shape: f64,
    pub direction: f64,
    pub length: f64,
    pub position: f64,
    pub mean: f64,
}

/// Optional scanpath pre-merging applied before comparison, mirroring the
/// simplification stage of the original MultiMatch procedure. Disabled by
/// default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplifyConfig {
    /// Merge consecutive saccades when both amplitudes fall below this
    /// threshold, in pixels.
    pub amplitude_px: f64,
    /// Merge consecutive saccades when their angular difference falls below
    /// this threshold, in radians.
    pub direction_rad: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MultiMatchConfig {
    pub simplify: Option<SimplifyConfig>,
}

/// Merges consecutive saccades that are nearly collinear or jointly short,
/// never reducing a scanpath below two fixations. Single left-to-right passes
/// repeat until no merge applies.
pub fn simplify_scanpath(sp: &Scanpath, cfg: &SimplifyConfig) -> Scanpath {
    let mut fixations = sp.fixations.clone();
    loop {
        let mut merged = false;
        let mut k = 0;
        while k + 2 < fixations.len() && fixations.len() > 2 {
            let a = SaccadeVector::between(&fixations[k], &fixations[k + 1]);
            let b = SaccadeVector::between(&fixations[k + 1], &fixations[k + 2]);
            let collinear = angular_difference(&a, &b) < cfg.direction_rad;
            let short = a.amplitude < cfg.amplitude_px && b.amplitude < cfg.amplitude_px;
            if collinear || short {
                fixations.remove(k + 1);
                merged = true;
            } else {
                k += 1;
            }
        }
        if !merged {
            break;
        }
    }
    Scanpath {
        fixations,
        ..sp.clone()
    }
}

/// Angular difference in `[0, pi]`. Two zero saccades compare as identical;
/// exactly one zero saccade counts as a quarter turn, keeping the measure
/// bounded and symmetric.
fn angular_difference(a: &SaccadeVector, b: &SaccadeVector) -> f64 {
    let a_zero = a.amplitude == 0.0;
    let b_zero = b.amplitude == 0.0;
    if a_zero && b_zero {
        0.0
    } else if a_zero || b_zero {
        FRAC_PI_2
    } else {
        let d = (a.angle - b.angle).rem_euclid(TAU);
        if d > PI {
            TAU - d
        } else {
            d
        }
    }
}

pub fn multimatch(a: &Scanpath, b: &Scanpath) -> Result<MultiMatch, MetricError> {
    multimatch_with(a, b, &MultiMatchConfig::default())
}

/// MultiMatch over the aligned saccade pairs. With `D` the screen diagonal,
/// each aligned pair `(i, j)` contributes the dissimilarities
///
/// - shape: `|u_i - v_j| / 2D`
/// - length: `||u_i| - |v_j|| / D`
/// - direction: angular difference over `pi`
/// - position: distance between the saccade endpoint fixations over `D`
///
/// and each component similarity is one minus the mean dissimilarity along
/// the path.
pub fn multimatch_with(
    a: &Scanpath,
    b: &Scanpath,
    cfg: &MultiMatchConfig,
) -> Result<MultiMatch, MetricError> {
    validate_scanpath(a)?;
    validate_scanpath(b)?;
    if a.screen_w != b.screen_w || a.screen_h != b.screen_h {
        return Err(MetricError::ScreenMismatch {
            a_w: a.screen_w,
            a_h: a.screen_h,
            b_w: b.screen_w,
            b_h: b.screen_h,
        });
    }
    for sp in [a, b] {
        if sp.len() < 2 {
            return Err(MetricError::TooShort {
                need: 2,
                got: sp.len(),
            });
        }
    }

    let (a, b) = match cfg.simplify {
        Some(ref s) => (simplify_scanpath(a, s), simplify_scanpath(b, s)),
        None => (a.clone(), b.clone()),
    };
    let u = saccade_vectors(&a)?;
    let v = saccade_vectors(&b)?;
    let path = align(&u, &v)?;

    let diag = a.diagonal();
    let mut shape = 0.0;
    let mut length = 0.0;
    let mut direction = 0.0;
    let mut position = 0.0;
    for &(i, j) in path.pairs() {
        shape += vector_distance(&u[i], &v[j]) / (2.0 * diag);
        length += (u[i].amplitude - v[j].amplitude).abs() / diag;
        direction += angular_difference(&u[i], &v[j]) / PI;
        let pa = &a.fixations[i + 1];
        let pb = &b.fixations[j + 1];
        position += (pa.x - pb.x).hypot(pa.y - pb.y) / diag;
    }
    let steps = path.len() as f64;
    let shape = 1.0 - shape / steps;
    let length = 1.0 - length / steps;
    let direction = 1.0 - direction / steps;
    let position = 1.0 - position / steps;
    Ok(MultiMatch {
        shape,
        direction,
        length,
        position,
        mean: (shape + direction + length + position) / 4.0,
    })
}

/// Default smoothing bandwidth: roughly one degree of visual angle at
/// typical viewing geometry.
pub fn default_sigma(screen_w: u32) -> f64 {
    f64::from(screen_w) / 24.0
}

/// Builds a saliency map from every fixation in the pool: a binary fixation
/// map convolved with an isotropic Gaussian truncated at three sigma, then
/// max-normalized to `[0, 1]`. The grid matches the pool's screen size.
pub fn synthesize_saliency(pool: &ObserverPool, sigma_px: f64) -> Result<SaliencyMap, MetricError> {
    if !sigma_px.is_finite() || sigma_px <= 0.0 {
        return Err(MetricError::BadSigma(sigma_px));
    }
    let (w, h) = pool.screen();
    let raw = accumulate_fixation_blobs(pool, sigma_px)?;
    let peak = raw.iter().copied().fold(0.0f64, f64::max);
    let values = if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        raw
    };
    Ok(SaliencyMap::new(w, h, values)?)
}

/// The unnormalized blob accumulation behind [`synthesize_saliency`]:
/// each fixated pixel contributes a truncated Gaussian patch of unit peak.
pub(crate) fn accumulate_fixation_blobs(
    pool: &ObserverPool,
    sigma_px: f64,
) -> Result<Vec<f64>, MetricError> {
    let (w, h) = pool.screen();
    let (wi, hi) = (w as usize, h as usize);
    let mut binary = vec![false; wi * hi];
    for sp in pool.scanpaths() {
        validate_scanpath(sp)?;
        for f in &sp.fixations {
            let col = (f.x.floor() as i64).clamp(0, w as i64 - 1) as usize;
            let row = (f.y.floor() as i64).clamp(0, h as i64 - 1) as usize;
            binary[row * wi + col] = true;
        }
    }

    let radius = (3.0 * sigma_px).ceil() as i64;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut out = vec![0.0f64; wi * hi];
    for row in 0..hi {
        for col in 0..wi {
            if !binary[row * wi + col] {
                continue;
            }
            let r0 = (row as i64 - radius).max(0);
            let r1 = (row as i64 + radius).min(hi as i64 - 1);
            let c0 = (col as i64 - radius).max(0);
            let c1 = (col as i64 + radius).min(wi as i64 - 1);
            for r in r0..=r1 {
                let dy = r - row as i64;
                for c in c0..=c1 {
                    let dx = c - col as i64;
                    let d2 = (dx * dx + dy * dy) as f64;
                    out[r as usize * wi + c as usize] += (-d2 * inv_two_sigma_sq).exp();
                }
            }
        }
    }
    Ok(out)
}

/// Normalized Scanpath Saliency: the map is standardized to zero mean and
/// unit population standard deviation, then sampled at the nearest pixel of
/// each fixation and averaged.
pub fn nss(sp: &Scanpath, sal: &SaliencyMap) -> Result<f64, MetricError> {
    validate_scanpath(sp)?;
    if sp.is_empty() {
        return Err(MetricError::TooShort { need: 1, got: 0 });
    }
    let values = sal.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(MetricError::FlatMap);
    }
    let mut acc = 0.0;
    for f in &sp.fixations {
        let (col, row) = sal.pixel_for(f.x, f.y, sp.screen_w, sp.screen_h);
        acc += (sal.get(col, row) - mean) / std;
    }
    Ok(acc / sp.len() as f64)
}

/// Fraction of fixations landing on pixels at or above the `q`-quantile of
/// the map. The quantile is the linearly interpolated order statistic, so
/// congruency is non-increasing in `q`.
pub fn congruency(sp: &Scanpath, sal: &SaliencyMap, q: f64) -> Result<f64, MetricError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricError::BadQuantile(q));
    }
    validate_scanpath(sp)?;
    if sp.is_empty() {
        return Err(MetricError::TooShort { need: 1, got: 0 });
    }
    let threshold = quantile(sal.values(), q);
    let hits = sp
        .fixations
        .iter()
        .filter(|f| {
            let (col, row) = sal.pixel_for(f.x, f.y, sp.screen_w, sp.screen_h);
            sal.get(col, row) >= threshold
        })
        .count();
    Ok(hits as f64 / sp.len() as f64)
}

/// Linearly interpolated `q`-quantile of a nonempty slice.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("saliency values are finite"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze::Fixation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_on(screen: (u32, u32), fixes: &[(f64, f64)]) -> Scanpath {
        Scanpath::new(
            "img",
            "obs",
            screen.0,
            screen.1,
            fixes.iter().map(|&(x, y)| Fixation::new(x, y)).collect(),
        )
    }

    fn path(fixes: &[(f64, f64)]) -> Scanpath {
        path_on((640, 480), fixes)
    }

    // Exhaustive enumeration of monotone paths; the independent oracle for
    // the dynamic-programming alignment.
    fn brute_force_min_cost(costs: &[Vec<f64>]) -> f64 {
        fn rec(costs: &[Vec<f64>], i: usize, j: usize) -> f64 {
            let (m, n) = (costs.len(), costs[0].len());
            let here = costs[i][j];
            if i + 1 == m && j + 1 == n {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < m && j + 1 < n {
                best = best.min(rec(costs, i + 1, j + 1));
            }
            if i + 1 < m {
                best = best.min(rec(costs, i + 1, j));
            }
            if j + 1 < n {
                best = best.min(rec(costs, i, j + 1));
            }
            here + best
        }
        rec(costs, 0, 0)
    }

    fn random_vectors(rng: &mut ChaCha8Rng, n: usize) -> Vec<SaccadeVector> {
        (0..n)
            .map(|_| {
                SaccadeVector::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))
            })
            .collect()
    }

    #[test]
    fn saccade_vector_amplitude_and_angle() {
        let v = saccade_vectors(&path(&[(0.0, 0.0), (3.0, 4.0)])).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0].amplitude - 5.0).abs() < 1e-12);
        assert!((v[0].angle - 4.0f64.atan2(3.0)).abs() < 1e-12);
    }

    #[test]
    fn repeated_fixation_gives_zero_vector() {
        let v = saccade_vectors(&path(&[(1.0, 1.0), (1.0, 1.0)])).unwrap();
        assert_eq!(v[0].amplitude, 0.0);
        assert_eq!(v[0].angle, 0.0);
    }

    #[test]
    fn single_fixation_is_too_short() {
        let err = saccade_vectors(&path(&[(1.0, 1.0)])).unwrap_err();
        assert_eq!(err, MetricError::TooShort { need: 2, got: 1 });
    }

    #[test]
    fn identical_sequences_align_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_vectors(&mut rng, 4);
        let p = align(&u, &u).unwrap();
        assert_eq!(p.pairs(), &[(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn one_by_one_grid_is_forced() {
        let u = vec![SaccadeVector::new(1.0, 0.0)];
        let v = vec![SaccadeVector::new(0.0, 1.0)];
        assert_eq!(align(&u, &v).unwrap().pairs(), &[(0, 0)]);
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(
            align(&[], &[SaccadeVector::new(1.0, 0.0)]).unwrap_err(),
            MetricError::EmptyInput
        );
    }

    #[test]
    fn alignment_cost_matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let m = rng.random_range(1..=6);
            let n = rng.random_range(1..=6);
            let u = random_vectors(&mut rng, m);
            let v = random_vectors(&mut rng, n);
            let costs: Vec<Vec<f64>> = (0..m)
                .map(|i| (0..n).map(|j| vector_distance(&u[i], &v[j])).collect())
                .collect();
            let expected = brute_force_min_cost(&costs);
            let got = align(&u, &v).unwrap().total_cost(&u, &v);
            assert!(
                (expected - got).abs() < 1e-9,
                "dp={got} brute={expected} on {m}x{n}"
            );
        }
    }

    #[test]
    fn multimatch_self_similarity_is_one() {
        let a = path(&[(10.0, 20.0), (100.0, 80.0), (300.0, 400.0), (50.0, 470.0)]);
        let mm = multimatch(&a, &a).unwrap();
        for c in [mm.shape, mm.direction, mm.length, mm.position, mm.mean] {
            assert!((c - 1.0).abs() < 1e-9, "component {c} != 1");
        }
    }

    #[test]
    fn opposed_saccades_have_zero_direction_similarity() {
        let a = path_on((1, 1), &[(0.0, 0.0), (1.0, 0.0)]);
        let b = path_on((1, 1), &[(1.0, 0.0), (0.0, 0.0)]);
        let mm = multimatch(&a, &b).unwrap();
        assert!(mm.direction.abs() < 1e-12, "direction {}", mm.direction);
    }

    #[test]
    fn translated_scanpath_drops_only_position() {
        // Two-fixation paths force the single aligned pair (0, 0).
        let d = 30.0;
        let a = path(&[(100.0, 200.0), (250.0, 300.0)]);
        let b = path(&[(100.0 + d, 200.0), (250.0 + d, 300.0)]);
        let mm = multimatch(&a, &b).unwrap();
        let diag = a.diagonal();
        assert!((mm.shape - 1.0).abs() < 1e-12);
        assert!((mm.direction - 1.0).abs() < 1e-12);
        assert!((mm.length - 1.0).abs() < 1e-12);
        assert!((mm.position - (1.0 - d / diag)).abs() < 1e-12);
    }

    #[test]
    fn screen_mismatch_detected() {
        let a = path(&[(0.0, 0.0), (1.0, 1.0)]);
        let b = path_on((800, 480), &[(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(
            multimatch(&a, &b),
            Err(MetricError::ScreenMismatch { .. })
        ));
    }

    #[test]
    fn simplification_merges_collinear_saccades() {
        let sp = path(&[(0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (20.0, 50.0)]);
        let cfg = SimplifyConfig {
            amplitude_px: 0.0,
            direction_rad: 0.1,
        };
        let merged = simplify_scanpath(&sp, &cfg);
        assert_eq!(merged.len(), 3);
        assert_eq!(merged.fixations[1].x, 20.0);
        // default config leaves paths untouched
        let same = multimatch_with(&sp, &sp, &MultiMatchConfig::default()).unwrap();
        assert!((same.mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simplification_never_drops_below_two_fixations() {
        let sp = path(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let cfg = SimplifyConfig {
            amplitude_px: 1e6,
            direction_rad: PI,
        };
        assert_eq!(simplify_scanpath(&sp, &cfg).len(), 2);
    }

    #[test]
    fn single_fixation_saliency_peaks_at_that_pixel() {
        let pool =
            ObserverPool::new(vec![path_on((32, 32), &[(10.5, 20.5), (10.5, 20.5)])]).unwrap();
        let sal = synthesize_saliency(&pool, 2.0).unwrap();
        assert_eq!(sal.get(10, 20), 1.0);
        let peak_index = sal
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak_index, 20 * 32 + 10);
    }

    #[test]
    fn symmetric_fixations_give_symmetric_map() {
        let pool =
            ObserverPool::new(vec![path_on((33, 33), &[(8.5, 16.5), (24.5, 16.5)])]).unwrap();
        let sal = synthesize_saliency(&pool, 3.0).unwrap();
        for row in 0..33 {
            for col in 0..33 {
                let mirrored = sal.get(32 - col, row);
                assert!(
                    (sal.get(col, row) - mirrored).abs() < 1e-12,
                    "asymmetry at ({col}, {row})"
                );
            }
        }
    }

    #[test]
    fn two_blobs_at_four_sigma_keep_single_blob_peak() {
        // Closed form: the second blob contributes exp(-(4 sigma)^2 / (2 sigma^2))
        // = exp(-8) at the first blob's center, and nothing at all once the
        // kernel is truncated at 3 sigma. Either way the unnormalized peak is
        // within 1% of a single blob's.
        let sigma = 5.0;
        let one =
            ObserverPool::new(vec![path_on((128, 64), &[(40.5, 32.5), (40.5, 32.5)])]).unwrap();
        let two = ObserverPool::new(vec![path_on(
            (128, 64),
            &[(40.5, 32.5), (40.5 + 4.0 * sigma, 32.5)],
        )])
        .unwrap();
        let raw_one = accumulate_fixation_blobs(&one, sigma).unwrap();
        let raw_two = accumulate_fixation_blobs(&two, sigma).unwrap();
        let peak_one = raw_one.iter().copied().fold(0.0, f64::max);
        let peak_two = raw_two.iter().copied().fold(0.0, f64::max);
        let expected_ratio_bound = 1.0 + (-8.0f64).exp();
        assert!(peak_two / peak_one >= 1.0 - 1e-12);
        assert!(peak_two / peak_one <= expected_ratio_bound + 1e-12);
        assert!((peak_two / peak_one - 1.0).abs() < 0.01);
    }

    #[test]
    fn nss_matches_worked_two_by_two_example() {
        // map [0, 1; 2, 3]: mean 1.5, population variance 1.25
        let sal = SaliencyMap::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let sp = path_on((2, 2), &[(1.5, 1.5)]);
        let got = nss(&sp, &sal).unwrap();
        let expected = (3.0 - 1.5) / 1.25f64.sqrt();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 1.3416).abs() < 1e-4);
    }

    #[test]
    fn nss_rejects_flat_map() {
        let sal = SaliencyMap::new(3, 3, vec![0.7; 9]).unwrap();
        let sp = path_on((3, 3), &[(1.0, 1.0)]);
        assert_eq!(nss(&sp, &sal), Err(MetricError::FlatMap));
    }

    #[test]
    fn nss_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..4.0)).collect();
        let sal = SaliencyMap::new(8, 8, values.clone()).unwrap();
        let sp = path_on((8, 8), &[(1.2, 3.4), (6.9, 0.5), (4.4, 7.3)]);
        let base = nss(&sp, &sal).unwrap();
        for a in [0.5, 2.0, 10.0] {
            for b in [-1.0, 0.0, 3.0] {
                let shifted: Vec<f64> = values.iter().map(|v| (a * v + b) - (-1.0f64)).collect();
                // keep values nonnegative by adding 1 after the affine map;
                // the extra constant is itself part of the affine family
                let sal2 = SaliencyMap::new(8, 8, shifted).unwrap();
                let got = nss(&sp, &sal2).unwrap();
                assert!(
                    (got - base).abs() < 1e-9,
                    "a={a} b={b} got={got} base={base}"
                );
            }
        }
    }

    #[test]
    fn congruency_on_global_max_is_one() {
        let sal = SaliencyMap::new(3, 1, vec![0.1, 0.9, 0.4]).unwrap();
        let sp = path_on((3, 1), &[(1.5, 0.5), (1.2, 0.3)]);
        assert_eq!(congruency(&sp, &sal, 0.99).unwrap(), 1.0);
    }

    #[test]
    fn congruency_counts_fixations_in_region() {
        // threshold at q=0.5 over [0,1,2,3] is 1.5; pixels {2, 3} are salient
        let sal = SaliencyMap::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let sp = path_on((4, 1), &[(2.5, 0.5), (3.5, 0.5), (2.1, 0.5), (0.5, 0.5)]);
        assert_eq!(congruency(&sp, &sal, 0.5).unwrap(), 0.75);
    }

    #[test]
    fn congruency_monotone_in_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let values: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
            let sal = SaliencyMap::new(10, 10, values).unwrap();
            let fixes: Vec<(f64, f64)> = (0..8)
                .map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
                .collect();
            let sp = path_on((10, 10), &fixes);
            let mut last = f64::INFINITY;
            for k in 1..20 {
                let q = k as f64 / 20.0;
                let c = congruency(&sp, &sal, q).unwrap();
                assert!(c <= last + 1e-12, "congruency increased at q={q}");
                last = c;
            }
        }
    }

    #[test]
    fn congruency_rejects_bad_quantile() {
        let sal = SaliencyMap::new(2, 1, vec![0.0, 1.0]).unwrap();
        let sp = path_on((2, 1), &[(0.5, 0.5)]);
        assert_eq!(
            congruency(&sp, &sal, 1.0),
            Err(MetricError::BadQuantile(1.0))
        );
    }

    fn random_path(rng: &mut ChaCha8Rng, len: usize) -> Scanpath {
        let fixes: Vec<(f64, f64)> = (0..len)
            .map(|_| (rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        path(&fixes)
    }

    #[test]
    fn multimatch_components_bounded_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let len_a = rng.random_range(2..10);
            let len_b = rng.random_range(2..10);
            let a = random_path(&mut rng, len_a);
            let b = random_path(&mut rng, len_b);
            let ab = multimatch(&a, &b).unwrap();
            let ba = multimatch(&b, &a).unwrap();
            for (x, y) in [
                (ab.shape, ba.shape),
                (ab.direction, ba.direction),
                (ab.length, ba.length),
                (ab.position, ba.position),
            ] {
                assert!((0.0..=1.0).contains(&x), "component {x} out of range");
                assert!((x - y).abs() < 1e-9, "asymmetry: {x} vs {y}");
            }
        }
    }

    proptest! {
        #[test]
        fn alignment_path_is_monotone(
            m in 1usize..7, n in 1usize..7, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_vectors(&mut rng, m);
            let v = random_vectors(&mut rng, n);
            let p = align(&u, &v).unwrap();
            let pairs = p.pairs();
            prop_assert_eq!(pairs[0], (0, 0));
            prop_assert_eq!(*pairs.last().unwrap(), (m - 1, n - 1));
            for w in pairs.windows(2) {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                prop_assert!(di <= 1 && dj <= 1 && di + dj >= 1);
            }
        }
    }
}
