//! The adversarial min-max training loop with inter-observer conditioning.
//!
//! Each step first improves the discriminator on real scanpaths (drawn from
//! the observer pools by a periodically resampled assignment) against the
//! generator's current, gradient-detached outputs, then improves the
//! generator through the freshly updated discriminator. The discriminator
//! thereby acts as a loss function that sharpens over the course of
//! training.
//!
//! Everything is deterministic given the seed: batch order, observer
//! assignments and initialization all derive from it, and training resumed
//! from a checkpoint continues bit-for-bit as if it had never stopped.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, VarId};
use crate::gaze::{normalize_coords, GazeError, ObserverPool, Scanpath};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelError};
use crate::seeding::{hash_str, mix_seed, sample_normal};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}{}", diagnostic_note(.diagnostic))]
    NonFiniteLoss {
        step: u64,
        diagnostic: Option<PathBuf>,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gaze(#[from] GazeError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {field}")]
    CorruptCheckpoint { path: PathBuf, field: String },
}

fn diagnostic_note(diagnostic: &Option<PathBuf>) -> String {
    match diagnostic {
        Some(p) => format!(" (diagnostics at {})", p.display()),
        None => String::new(),
    }
}

/// Loop hyperparameters. `lr` defaults to the desk-scale value; the
/// faithful configuration uses `lr = 1e-5` over 246 epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Length every scanpath (real and generated) is harmonized to.
    pub seq_len: usize,
    /// Steps between observer reassignments; `None` resamples once per
    /// epoch, the most literal reading of periodic resampling.
    pub resample_period_steps: Option<u64>,
    pub seed: u64,
    pub d_steps_per_g_step: usize,
    /// Weight of the optional supervised term; zero keeps training purely
    /// adversarial.
    pub aux_mse_weight: f64,
    /// Use the literal saturating generator objective instead of the
    /// non-saturating default.
    pub saturating_g_loss: bool,
    pub grad_clip_norm: f64,
    /// Instance noise: standard deviation of seeded Gaussian noise added to
    /// every coordinate sequence the discriminator sees during training.
    /// With a deterministic generator each image contributes a point mass,
    /// which a capable discriminator can carve out exactly; smearing both
    /// distributions keeps its decision surface tied to the data density
    /// instead. Zero disables it.
    pub d_input_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 246,
            lr: 1e-4,
            batch_size: 16,
            seq_len: 10,
            resample_period_steps: None,
            seed: 0,
            d_steps_per_g_step: 1,
            aux_mse_weight: 0.0,
            saturating_g_loss: false,
            grad_clip_norm: 5.0,
            d_input_noise: 0.05,
        }
    }
}

/// Telemetry emitted after every training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_acc: f64,
    pub d_fake_acc: f64,
}

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Discriminator loss: `-(ln r + ln(1 - f))`, the maximization target of the
/// value function negated for minimization.
pub fn d_loss(real_prob: f64, fake_prob: f64) -> f64 {
    let r = real_prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let f = fake_prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(r.ln() + (1.0 - f).ln())
}

/// Generator loss. Non-saturating by default (`-ln f`); the saturating form
/// is the literal value-function term `ln(1 - f)`.
pub fn g_loss(fake_prob: f64, saturating: bool) -> f64 {
    let f = fake_prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if saturating {
        (1.0 - f).ln()
    } else {
        -f.ln()
    }
}

/// Tape counterpart of [`d_loss`]; the recorded arithmetic matches the
/// scalar function bit for bit.
pub fn d_loss_on_tape(tape: &mut Tape, real_prob: VarId, fake_prob: VarId) -> VarId {
    let r = tape.clamp(real_prob, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_r = tape.ln(r);
    let f = tape.clamp(fake_prob, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let one_minus_f = tape.affine(f, -1.0, 1.0);
    let log_omf = tape.ln(one_minus_f);
    let sum = tape.add(log_r, log_omf).expect("scalar shapes");
    tape.affine(sum, -1.0, 0.0)
}

/// Tape counterpart of [`g_loss`].
pub fn g_loss_on_tape(tape: &mut Tape, fake_prob: VarId, saturating: bool) -> VarId {
    let f = tape.clamp(fake_prob, PROB_CLAMP, 1.0 - PROB_CLAMP);
    if saturating {
        let omf = tape.affine(f, -1.0, 1.0);
        tape.ln(omf)
    } else {
        let lf = tape.ln(f);
        tape.affine(lf, -1.0, 0.0)
    }
}

/// Resamples a scanpath to exactly `len` fixations in normalized
/// coordinates: longer paths are truncated, shorter ones linearly
/// interpolated along the path.
pub fn harmonize_scanpath(sp: &Scanpath, len: usize) -> Result<(Vec<f64>, Vec<f64>), GazeError> {
    let coords = normalize_coords(sp)?;
    let n = coords.len();
    let mut xs = Vec::with_capacity(len);
    let mut ys = Vec::with_capacity(len);
    if n >= len {
        for &(u, v) in coords.iter().take(len) {
            xs.push(u);
            ys.push(v);
        }
    } else if n == 1 {
        xs.resize(len, coords[0].0);
        ys.resize(len, coords[0].1);
    } else {
        for t in 0..len {
            let pos = t as f64 * (n - 1) as f64 / (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil().min((n - 1) as f64) as usize;
            let frac = pos - lo as f64;
            xs.push(coords[lo].0 * (1.0 - frac) + coords[hi].0 * frac);
            ys.push(coords[lo].1 * (1.0 - frac) + coords[hi].1 * frac);
        }
    }
    Ok((xs, ys))
}

/// Draws the ground-truth observer for an image: one index per image per
/// resample period, uniform over the pool, held fixed for the whole period.
/// The draw is a pure function of (seed, period index, image id), so
/// resumed runs see the identical assignment stream.
#[derive(Clone, Copy, Debug)]
pub struct ObserverSampler {
    seed: u64,
    period_steps: u64,
}

impl ObserverSampler {
    pub fn new(seed: u64, period_steps: u64) -> Self {
        ObserverSampler {
            seed,
            period_steps: period_steps.max(1),
        }
    }

    pub fn observer_index(&self, pool: &ObserverPool, step: u64) -> usize {
        let period = step / self.period_steps;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            0x0B5E_7255,
            period,
            hash_str(pool.image_id()),
        ]));
        rng.random_range(0..pool.len())
    }

    pub fn sample<'a>(&self, pool: &'a ObserverPool, step: u64) -> &'a Scanpath {
        &pool.scanpaths()[self.observer_index(pool, step)]
    }
}

/// One training stimulus: the image tensor and its observer pool.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub image: Tensor,
    pub pool: ObserverPool,
}

/// Builds training examples straight from a synthetic dataset.
pub fn examples_from_synthetic(
    ds: &crate::data::SyntheticDataset,
) -> Result<Vec<TrainExample>, GazeError> {
    ds.images
        .iter()
        .map(|img| {
            Ok(TrainExample {
                image: img.image.clone(),
                pool: img.record.pool()?,
            })
        })
        .collect()
}

/// Owns both models and their optimizer states; the single writer of all
/// parameters.
pub struct Trainer {
    gen: Generator,
    disc: Discriminator,
    cfg: TrainConfig,
    opt_g: AdamState,
    opt_d: AdamState,
    step: u64,
    diagnostics_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        let gen = Generator::new(gen_cfg, mix_seed(&[cfg.seed, 0x6E6E]))?;
        let disc = Discriminator::new(disc_cfg, mix_seed(&[cfg.seed, 0xD15C]))?;
        let opt_g = AdamState::new(gen.params(), AdamConfig::with_lr(cfg.lr));
        let opt_d = AdamState::new(disc.params(), AdamConfig::with_lr(cfg.lr));
        Ok(Trainer {
            gen,
            disc,
            cfg,
            opt_g,
            opt_d,
            step: 0,
            diagnostics_dir: None,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.gen
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn discriminator_mut(&mut self) -> &mut Discriminator {
        &mut self.disc
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Where to write the diagnostic dump if a loss turns non-finite.
    pub fn set_diagnostics_dir(&mut self, dir: impl Into<PathBuf>) {
        self.diagnostics_dir = Some(dir.into());
    }

    fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        (n_examples.div_ceil(self.cfg.batch_size)).max(1) as u64
    }

    /// The observer sampler for a dataset of the given size, honoring the
    /// configured resample period (default: once per epoch).
    pub fn sampler_for(&self, n_examples: usize) -> ObserverSampler {
        let period = self
            .cfg
            .resample_period_steps
            .unwrap_or_else(|| self.steps_per_epoch(n_examples));
        ObserverSampler::new(self.cfg.seed, period)
    }

    /// Deterministic example order for an epoch.
    fn epoch_permutation(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.cfg.seed, 0x5AFF1E, epoch]));
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        indices
    }

    /// Runs training until `total_steps` global steps have completed,
    /// invoking `on_step` after each one. Batches are derived from the
    /// global step counter, so a resumed run replays the identical stream.
    pub fn run(
        &mut self,
        data: &[TrainExample],
        total_steps: u64,
        mut on_step: impl FnMut(&StepReport),
    ) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let spe = self.steps_per_epoch(data.len());
        let sampler = self.sampler_for(data.len());
        while self.step < total_steps {
            let epoch = self.step / spe;
            let slot = (self.step % spe) as usize;
            let perm = self.epoch_permutation(data.len(), epoch);
            let start = slot * self.cfg.batch_size;
            let end = (start + self.cfg.batch_size).min(data.len());
            let batch: Vec<&TrainExample> = perm[start..end].iter().map(|&i| &data[i]).collect();
            let report = self.train_step(&batch, &sampler)?;
            on_step(&report);
        }
        Ok(())
    }

    /// One adversarial step over a batch: update the discriminator on real
    /// versus detached fake scanpaths, then update the generator (prior bank
    /// included) through the updated discriminator.
    pub fn train_step(
        &mut self,
        batch: &[&TrainExample],
        sampler: &ObserverSampler,
    ) -> Result<StepReport, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let l = self.cfg.seq_len;
        let b = batch.len() as f64;

        // one generator forward per element; the tape is reused for the
        // generator update after the discriminator has moved
        let mut passes = Vec::with_capacity(batch.len());
        for ex in batch {
            let mut tape = Tape::new();
            let gpass = self.gen.forward(&mut tape, &ex.image, l)?;
            let real = sampler.sample(&ex.pool, self.step);
            let (rx, ry) = harmonize_scanpath(real, l)?;
            passes.push((tape, gpass, rx, ry));
        }

        let mut d_loss_mean = 0.0;
        let mut d_real_acc = 0.0;
        let mut d_fake_acc = 0.0;
        for d_iter in 0..self.cfg.d_steps_per_g_step.max(1) {
            self.disc.params_mut().zero_grads();
            d_loss_mean = 0.0;
            d_real_acc = 0.0;
            d_fake_acc = 0.0;
            for (elem, (tape, gpass, rx, ry)) in passes.iter().enumerate() {
                let mut noise = self.noise_rng(0xD_015E, d_iter as u64, elem as u64);
                let fake_x = self.noised(tape.value(gpass.x_seq).data(), &mut noise);
                let fake_y = self.noised(tape.value(gpass.y_seq).data(), &mut noise);
                let real_xv = self.noised(rx, &mut noise);
                let real_yv = self.noised(ry, &mut noise);

                let mut dtape = Tape::new();
                let dbind = self.disc.params().bind(&mut dtape);
                let real_x = dtape.leaf(Tensor::new([l], real_xv));
                let real_y = dtape.leaf(Tensor::new([l], real_yv));
                let fake_x = dtape.leaf(Tensor::new([l], fake_x));
                let fake_y = dtape.leaf(Tensor::new([l], fake_y));
                let real_prob = self
                    .disc
                    .forward_with_binding(&mut dtape, &dbind, real_x, real_y)?;
                let fake_prob = self
                    .disc
                    .forward_with_binding(&mut dtape, &dbind, fake_x, fake_y)?;
                let loss = d_loss_on_tape(&mut dtape, real_prob, fake_prob);

                let loss_value = dtape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(self.non_finite(loss_value, f64::NAN));
                }
                dtape.backward_scaled(loss, 1.0 / b);
                self.disc.params_mut().accumulate_grads(&dtape, &dbind);

                d_loss_mean += loss_value / b;
                if dtape.value(real_prob).item() > 0.5 {
                    d_real_acc += 1.0 / b;
                }
                if dtape.value(fake_prob).item() < 0.5 {
                    d_fake_acc += 1.0 / b;
                }
            }
            self.disc
                .params_mut()
                .clip_grad_norm(self.cfg.grad_clip_norm);
            self.opt_d.step(self.disc.params_mut());
        }

        self.gen.params_mut().zero_grads();
        let mut g_loss_mean = 0.0;
        for (elem, (mut tape, gpass, rx, ry)) in passes.into_iter().enumerate() {
            let mut noise = self.noise_rng(0x6_015E, 0, elem as u64);
            let x_in = self.noised_on_tape(&mut tape, gpass.x_seq, &mut noise);
            let y_in = self.noised_on_tape(&mut tape, gpass.y_seq, &mut noise);
            let dbind = self.disc.params().bind(&mut tape);
            let prob = self
                .disc
                .forward_with_binding(&mut tape, &dbind, x_in, y_in)?;
            let mut loss = g_loss_on_tape(&mut tape, prob, self.cfg.saturating_g_loss);
            if self.cfg.aux_mse_weight > 0.0 {
                let real_x = tape.leaf(Tensor::new([l], rx));
                let real_y = tape.leaf(Tensor::new([l], ry));
                let dx = tape.sub(gpass.x_seq, real_x).expect("same length");
                let dy = tape.sub(gpass.y_seq, real_y).expect("same length");
                let sx = tape.square(dx);
                let sy = tape.square(dy);
                let mx = tape.mean(sx);
                let my = tape.mean(sy);
                let mse = tape.add(mx, my).expect("scalars");
                let weighted = tape.affine(mse, self.cfg.aux_mse_weight, 0.0);
                loss = tape.add(loss, weighted).expect("scalars");
            }

            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(self.non_finite(d_loss_mean, loss_value));
            }
            tape.backward_scaled(loss, 1.0 / b);
            self.gen
                .params_mut()
                .accumulate_grads(&tape, &gpass.binding);
            g_loss_mean += loss_value / b;
        }
        self.gen
            .params_mut()
            .clip_grad_norm(self.cfg.grad_clip_norm);
        self.opt_g.step(self.gen.params_mut());
        self.gen.clamp_prior_means();

        if !d_loss_mean.is_finite() || !g_loss_mean.is_finite() {
            return Err(self.non_finite(d_loss_mean, g_loss_mean));
        }

        let report = StepReport {
            step: self.step,
            d_loss: d_loss_mean,
            g_loss: g_loss_mean,
            d_real_acc,
            d_fake_acc,
        };
        self.step += 1;
        Ok(report)
    }

    fn noise_rng(&self, tag: u64, d_iter: u64, elem: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(&[self.cfg.seed, tag, self.step, d_iter, elem]))
    }

    /// The sequence plus seeded instance noise; identity when disabled.
    fn noised(&self, values: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        if self.cfg.d_input_noise == 0.0 {
            return values.to_vec();
        }
        values
            .iter()
            .map(|v| v + self.cfg.d_input_noise * sample_normal(rng))
            .collect()
    }

    /// Instance noise on a tape value; the addition passes gradients through
    /// unchanged.
    fn noised_on_tape(&self, tape: &mut Tape, seq: VarId, rng: &mut ChaCha8Rng) -> VarId {
        if self.cfg.d_input_noise == 0.0 {
            return seq;
        }
        let len = tape.value(seq).len();
        let noise: Vec<f64> = (0..len)
            .map(|_| self.cfg.d_input_noise * sample_normal(rng))
            .collect();
        let noise = tape.leaf(Tensor::new([len], noise));
        tape.add(seq, noise).expect("same length")
    }

    fn non_finite(&self, d_loss: f64, g_loss: f64) -> TrainError {
        let diagnostic = self.diagnostics_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("nonfinite_step_{}.json", self.step));
            let dump = serde_json::json!({
                "step": self.step,
                "d_loss": d_loss,
                "g_loss": g_loss,
                "gen_grad_norm": self.gen.params().grad_norm(),
                "disc_grad_norm": self.disc.params().grad_norm(),
            });
            std::fs::write(&path, serde_json::to_string_pretty(&dump).expect("json"))
                .ok()
                .map(|_| path)
        });
        TrainError::NonFiniteLoss {
            step: self.step,
            diagnostic,
        }
    }

    // ---- checkpointing -----------------------------------------------------

    /// Writes every parameter and optimizer moment, bit-exact, plus the
    /// configs needed to rebuild the models.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        for (name, p) in self.gen.params().iter() {
            tensors.push((name.to_string(), &p.value));
        }
        for (name, p) in self.disc.params().iter() {
            tensors.push((name.to_string(), &p.value));
        }
        let (gm, gv) = self.opt_g.moments();
        for (i, (name, _)) in self.gen.params().iter().enumerate() {
            tensors.push((format!("adam_g.m.{name}"), &gm[i]));
            tensors.push((format!("adam_g.v.{name}"), &gv[i]));
        }
        let (dm, dv) = self.opt_d.moments();
        for (i, (name, _)) in self.disc.params().iter().enumerate() {
            tensors.push((format!("adam_d.m.{name}"), &dm[i]));
            tensors.push((format!("adam_d.v.{name}"), &dv[i]));
        }

        let mut index = serde_json::Map::new();
        let mut offset = 0usize;
        for (name, t) in &tensors {
            index.insert(
                name.clone(),
                serde_json::json!({ "shape": t.shape(), "offset": offset }),
            );
            offset += t.len();
        }
        let header = serde_json::json!({
            "format": 1,
            "step": self.step,
            "opt_g_t": self.opt_g.step_count(),
            "opt_d_t": self.opt_d.step_count(),
            "train_cfg": self.cfg,
            "gen_cfg": self.gen.config(),
            "disc_cfg": self.disc.config(),
            "tensors": serde_json::Value::Object(index),
        });
        let header_bytes = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(16 + header_bytes.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Rebuilds a trainer from a checkpoint; training resumes exactly where
    /// it stopped.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer, TrainError> {
        let path = path.as_ref();
        let corrupt = |field: &str| TrainError::CorruptCheckpoint {
            path: path.to_path_buf(),
            field: field.to_string(),
        };
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 16 + header_len {
            return Err(corrupt("header length"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| corrupt(&format!("header: {e}")))?;
        let payload = &bytes[16 + header_len..];
        if payload.len() % 8 != 0 {
            return Err(corrupt("payload alignment"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let fetch = |name: &str, expected_shape: &[usize]| -> Result<Vec<f64>, TrainError> {
            let entry = header.tensors.get(name).ok_or_else(|| corrupt(name))?;
            if entry.shape != expected_shape {
                return Err(corrupt(&format!(
                    "{name}: shape {:?}, expected {:?}",
                    entry.shape, expected_shape
                )));
            }
            let len: usize = entry.shape.iter().product();
            let end = entry.offset.checked_add(len).ok_or_else(|| corrupt(name))?;
            if end > values.len() {
                return Err(corrupt(&format!("{name}: runs past payload")));
            }
            let data = values[entry.offset..end].to_vec();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(&format!("{name}: non-finite values")));
            }
            Ok(data)
        };

        let mut trainer = Trainer::new(header.gen_cfg, header.disc_cfg, header.train_cfg)?;
        for slot in 0..trainer.gen.params().len() {
            let name = trainer.gen.params().name(slot).to_string();
            let shape = trainer.gen.params().get(slot).value.shape().to_vec();
            let data = fetch(&name, &shape)?;
            let gm = fetch(&format!("adam_g.m.{name}"), &shape)?;
            let gv = fetch(&format!("adam_g.v.{name}"), &shape)?;
            trainer
                .gen
                .params_mut()
                .get_mut(slot)
                .value
                .data_mut()
                .copy_from_slice(&data);
            let (m, v) = trainer.opt_g.moments_mut();
            m[slot].data_mut().copy_from_slice(&gm);
            v[slot].data_mut().copy_from_slice(&gv);
        }
        for slot in 0..trainer.disc.params().len() {
            let name = trainer.disc.params().name(slot).to_string();
            let shape = trainer.disc.params().get(slot).value.shape().to_vec();
            let data = fetch(&name, &shape)?;
            let dm = fetch(&format!("adam_d.m.{name}"), &shape)?;
            let dv = fetch(&format!("adam_d.v.{name}"), &shape)?;
            trainer
                .disc
                .params_mut()
                .get_mut(slot)
                .value
                .data_mut()
                .copy_from_slice(&data);
            let (m, v) = trainer.opt_d.moments_mut();
            m[slot].data_mut().copy_from_slice(&dm);
            v[slot].data_mut().copy_from_slice(&dv);
        }
        trainer.opt_g.set_step_count(header.opt_g_t);
        trainer.opt_d.set_step_count(header.opt_d_t);
        trainer.step = header.step;
        Ok(trainer)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPFCKPT1";

#[derive(Deserialize)]
struct CheckpointHeader {
    #[allow(dead_code)]
    format: u32,
    step: u64,
    opt_g_t: u64,
    opt_d_t: u64,
    train_cfg: TrainConfig,
    gen_cfg: GeneratorConfig,
    disc_cfg: DiscriminatorConfig,
    tensors: std::collections::BTreeMap<String, TensorEntry>,
}

#[derive(Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    offset: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::gaze::Fixation;
    use crate::gradcheck::{central_diff_gradient, compare_gradients};
    use std::sync::atomic::{AtomicU64, Ordering};

    static COUNTER: AtomicU64 = AtomicU64::new(0);

    fn temp_path(name: &str) -> PathBuf {
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        std::env::temp_dir().join(format!(
            "scanpath-forge-train-{}-{n}-{name}",
            std::process::id()
        ))
    }

    fn tiny_gen_cfg() -> GeneratorConfig {
        GeneratorConfig {
            image_h: 16,
            image_w: 16,
            encoder_channels: vec![8, 16],
            n_priors: 4,
            fuse_channels: 16,
            seq_len: 5,
            head_channels: vec![8],
            ..GeneratorConfig::default()
        }
    }

    fn tiny_disc_cfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            branch_channels: vec![8, 16],
            fc: vec![16],
            ..DiscriminatorConfig::default()
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            seq_len: 5,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_examples(n: usize) -> Vec<TrainExample> {
        let spec = SyntheticSpec {
            width: 16,
            height: 16,
            scanpath_len: (3, 7),
            ..SyntheticSpec::default()
        };
        examples_from_synthetic(&generate_synthetic(&spec, n, 99)).unwrap()
    }

    #[test]
    fn d_loss_worked_examples() {
        assert!((d_loss(0.5, 0.5) - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!((d_loss(0.9, 0.1) - (-2.0 * 0.9f64.ln())).abs() < 1e-12);
        assert!((d_loss(0.9, 0.1) - 0.2107).abs() < 1e-4);
        // perfect discriminator limit
        assert!(d_loss(1.0, 0.0) < 1e-6);
        // clamping keeps the loss finite at the boundary
        assert!(d_loss(0.0, 1.0).is_finite());
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.6931 is the frozen example value
    fn g_loss_worked_examples() {
        assert!((g_loss(0.5, false) - 2.0f64.ln()).abs() < 1e-12);
        assert!(g_loss(1.0, false) < 1e-6);
        assert!((g_loss(0.5, true) - 0.5f64.ln()).abs() < 1e-12);
        assert!((g_loss(0.5, true) + 0.6931).abs() < 1e-4);
    }

    #[test]
    fn tape_losses_match_scalar_losses() {
        for (r, f) in [(0.5, 0.5), (0.9, 0.1), (0.01, 0.99), (0.37, 0.62)] {
            let mut tape = Tape::new();
            let rp = tape.leaf(Tensor::scalar(r));
            let fp = tape.leaf(Tensor::scalar(f));
            let d = d_loss_on_tape(&mut tape, rp, fp);
            assert_eq!(tape.value(d).item(), d_loss(r, f));
            for saturating in [false, true] {
                let g = g_loss_on_tape(&mut tape, fp, saturating);
                assert_eq!(tape.value(g).item(), g_loss(f, saturating));
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // d_loss through the tape w.r.t. both probabilities
        let probe = |r: f64, f: f64| -> (f64, f64) {
            let mut tape = Tape::new();
            let rp = tape.leaf(Tensor::scalar(r));
            let fp = tape.leaf(Tensor::scalar(f));
            let loss = d_loss_on_tape(&mut tape, rp, fp);
            tape.backward(loss);
            (tape.grad(rp).unwrap()[0], tape.grad(fp).unwrap()[0])
        };
        let (gr, gf) = probe(0.7, 0.3);
        let nr = central_diff_gradient(|p| d_loss(p[0], 0.3), &[0.7], 1e-5);
        let nf = central_diff_gradient(|p| d_loss(0.7, p[0]), &[0.3], 1e-5);
        assert!(compare_gradients(&[gr], &nr).max_rel_err < 1e-6);
        assert!(compare_gradients(&[gf], &nf).max_rel_err < 1e-6);
    }

    #[test]
    fn d_loss_gradient_through_discriminator_matches_fd() {
        let disc = Discriminator::new(tiny_disc_cfg(), 21).unwrap();
        let rx = vec![0.3, 0.5, 0.7, 0.4, 0.6];
        let ry = vec![0.4, 0.4, 0.5, 0.6, 0.5];
        let fx = vec![0.2, 0.25, 0.3, 0.35, 0.4];
        let fy = vec![0.8, 0.75, 0.7, 0.65, 0.6];

        let loss_of = |disc: &Discriminator| -> f64 {
            let r = disc.classify(&rx, &ry).unwrap();
            let f = disc.classify(&fx, &fy).unwrap();
            d_loss(r, f)
        };

        let mut tape = Tape::new();
        let dbind = disc.params().bind(&mut tape);
        let rxi = tape.leaf(Tensor::new([5], rx.clone()));
        let ryi = tape.leaf(Tensor::new([5], ry.clone()));
        let fxi = tape.leaf(Tensor::new([5], fx.clone()));
        let fyi = tape.leaf(Tensor::new([5], fy.clone()));
        let rp = disc
            .forward_with_binding(&mut tape, &dbind, rxi, ryi)
            .unwrap();
        let fp = disc
            .forward_with_binding(&mut tape, &dbind, fxi, fyi)
            .unwrap();
        let loss = d_loss_on_tape(&mut tape, rp, fp);
        tape.backward(loss);

        let mut probe = Discriminator::new(tiny_disc_cfg(), 21).unwrap();
        let step = 1e-5;
        let mut worst = 0.0f64;
        for slot in 0..probe.params().len() {
            let analytic = tape.grad_tensor(dbind.id(slot));
            for i in 0..probe.params().get(slot).value.len() {
                let orig = probe.params().get(slot).value.data()[i];
                probe.params_mut().get_mut(slot).value.data_mut()[i] = orig + step;
                let plus = loss_of(&probe);
                probe.params_mut().get_mut(slot).value.data_mut()[i] = orig - step;
                let minus = loss_of(&probe);
                probe.params_mut().get_mut(slot).value.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3, "d_loss gradient rel err {worst}");
    }

    #[test]
    fn g_loss_gradient_through_both_models_matches_fd() {
        let gen_cfg = tiny_gen_cfg();
        let mut gen = Generator::new(gen_cfg.clone(), 22).unwrap();
        let disc = Discriminator::new(tiny_disc_cfg(), 23).unwrap();
        let image = tiny_examples(1)[0].image.clone();

        let loss_of = |gen: &Generator| -> f64 {
            let (xs, ys) = gen.predict(&image, 5).unwrap();
            g_loss(disc.classify(&xs, &ys).unwrap(), false)
        };

        let mut tape = Tape::new();
        let gpass = gen.forward(&mut tape, &image, 5).unwrap();
        let dpass = disc.forward(&mut tape, gpass.x_seq, gpass.y_seq).unwrap();
        let loss = g_loss_on_tape(&mut tape, dpass.prob, false);
        tape.backward(loss);

        let step = 1e-5;
        let mut worst = 0.0f64;
        for slot in 0..gen.params().len() {
            if !gen.params().get(slot).trainable {
                continue;
            }
            let analytic = tape.grad_tensor(gpass.binding.id(slot));
            for i in 0..gen.params().get(slot).value.len() {
                let orig = gen.params().get(slot).value.data()[i];
                gen.params_mut().get_mut(slot).value.data_mut()[i] = orig + step;
                let plus = loss_of(&gen);
                gen.params_mut().get_mut(slot).value.data_mut()[i] = orig - step;
                let minus = loss_of(&gen);
                gen.params_mut().get_mut(slot).value.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3, "g_loss gradient rel err {worst}");
    }

    #[test]
    fn harmonize_truncates_and_interpolates() {
        let sp = Scanpath::new(
            "i",
            "o",
            100,
            100,
            vec![
                Fixation::new(0.0, 0.0),
                Fixation::new(50.0, 100.0),
                Fixation::new(100.0, 0.0),
            ],
        );
        // truncation
        let (xs, _) = harmonize_scanpath(&sp, 2).unwrap();
        assert_eq!(xs, vec![0.0, 0.5]);
        // exact length passes through
        let (xs, ys) = harmonize_scanpath(&sp, 3).unwrap();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert_eq!(ys, vec![0.0, 1.0, 0.0]);
        // interpolation visits the midpoints
        let (xs, ys) = harmonize_scanpath(&sp, 5).unwrap();
        assert_eq!(xs.len(), 5);
        assert!((xs[1] - 0.25).abs() < 1e-12);
        assert!((ys[1] - 0.5).abs() < 1e-12);
        // single fixation repeats
        let single = Scanpath::new("i", "o", 100, 100, vec![Fixation::new(30.0, 40.0)]);
        let (xs, ys) = harmonize_scanpath(&single, 4).unwrap();
        assert!(xs.iter().all(|&x| x == 0.3));
        assert!(ys.iter().all(|&y| y == 0.4));
    }

    fn pool_of(n: usize) -> ObserverPool {
        let paths = (0..n)
            .map(|i| {
                Scanpath::new(
                    "img",
                    format!("obs{i}"),
                    10,
                    10,
                    vec![Fixation::new(i as f64, i as f64)],
                )
            })
            .collect();
        ObserverPool::new(paths).unwrap()
    }

    #[test]
    fn single_observer_pool_always_sampled() {
        let pool = pool_of(1);
        let sampler = ObserverSampler::new(3, 1);
        for step in 0..20 {
            assert_eq!(sampler.observer_index(&pool, step), 0);
        }
    }

    #[test]
    fn infinite_period_freezes_assignment() {
        let pool = pool_of(5);
        let sampler = ObserverSampler::new(3, u64::MAX);
        let first = sampler.observer_index(&pool, 0);
        for step in (0..100_000).step_by(997) {
            assert_eq!(sampler.observer_index(&pool, step), first);
        }
    }

    #[test]
    fn assignment_constant_within_period_changes_between() {
        let pool = pool_of(8);
        let sampler = ObserverSampler::new(11, 10);
        let within: Vec<usize> = (0..10).map(|s| sampler.observer_index(&pool, s)).collect();
        assert!(within.windows(2).all(|w| w[0] == w[1]));
        let across: Vec<usize> = (0..50)
            .map(|p| sampler.observer_index(&pool, p * 10))
            .collect();
        assert!(across.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn observer_frequencies_are_uniform() {
        let pool = pool_of(5);
        let sampler = ObserverSampler::new(42, 1);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for step in 0..draws {
            counts[sampler.observer_index(&pool, step)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 0.2).abs() <= 0.02,
                "observer {i} frequency {freq} outside 0.2 +- 0.02"
            );
        }
    }

    #[test]
    fn one_step_changes_both_models() {
        let mut trainer = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
        let data = tiny_examples(4);
        let batch: Vec<&TrainExample> = data.iter().collect();
        let sampler = trainer.sampler_for(data.len());

        let g_before: Vec<f64> = trainer
            .generator()
            .params()
            .iter()
            .flat_map(|(_, p)| p.value.data().to_vec())
            .collect();
        let d_before: Vec<f64> = trainer
            .discriminator()
            .params()
            .iter()
            .flat_map(|(_, p)| p.value.data().to_vec())
            .collect();

        let report = trainer.train_step(&batch, &sampler).unwrap();
        assert!(report.d_loss.is_finite() && report.g_loss.is_finite());
        assert!((0.0..=1.0).contains(&report.d_real_acc));
        assert!((0.0..=1.0).contains(&report.d_fake_acc));

        let g_after: Vec<f64> = trainer
            .generator()
            .params()
            .iter()
            .flat_map(|(_, p)| p.value.data().to_vec())
            .collect();
        let d_after: Vec<f64> = trainer
            .discriminator()
            .params()
            .iter()
            .flat_map(|(_, p)| p.value.data().to_vec())
            .collect();
        assert_ne!(g_before, g_after, "generator did not move");
        assert_ne!(d_before, d_after, "discriminator did not move");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_bitwise() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..tiny_train_cfg()
        };
        let mut trainer = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), cfg).unwrap();
        let data = tiny_examples(4);
        let batch: Vec<&TrainExample> = data.iter().collect();
        let sampler = trainer.sampler_for(data.len());

        let before: Vec<u64> = trainer
            .generator()
            .params()
            .iter()
            .chain(trainer.discriminator().params().iter())
            .flat_map(|(_, p)| {
                p.value
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect();
        let report = trainer.train_step(&batch, &sampler).unwrap();
        assert!(report.d_loss.is_finite() && report.g_loss.is_finite());
        let after: Vec<u64> = trainer
            .generator()
            .params()
            .iter()
            .chain(trainer.discriminator().params().iter())
            .flat_map(|(_, p)| {
                p.value
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let run = || {
            let mut trainer =
                Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
            let data = tiny_examples(6);
            let mut reports = Vec::new();
            trainer
                .run(&data, 5, |r| {
                    reports.push(serde_json::to_string(r).unwrap());
                })
                .unwrap();
            reports
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_restores_forward_outputs() {
        let mut trainer = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
        let data = tiny_examples(4);
        trainer.run(&data, 3, |_| {}).unwrap();

        let path = temp_path("ckpt.bin");
        trainer.save_checkpoint(&path).unwrap();
        let restored = Trainer::load_checkpoint(&path).unwrap();

        let (xs_a, ys_a) = trainer.generator().predict(&data[0].image, 5).unwrap();
        let (xs_b, ys_b) = restored.generator().predict(&data[0].image, 5).unwrap();
        assert_eq!(xs_a, xs_b);
        assert_eq!(ys_a, ys_b);
        assert_eq!(restored.step_count(), 3);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let trainer = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
        let path = temp_path("truncated.bin");
        trainer.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            Trainer::load_checkpoint(&path),
            Err(TrainError::CorruptCheckpoint { .. })
        ));
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(
            Trainer::load_checkpoint(&path),
            Err(TrainError::CorruptCheckpoint { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let data = tiny_examples(6);
        let collect = |trainer: &mut Trainer, to: u64| {
            let mut reports = Vec::new();
            trainer
                .run(&data, to, |r| {
                    reports.push(serde_json::to_string(r).unwrap())
                })
                .unwrap();
            reports
        };

        let mut straight = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
        let full = collect(&mut straight, 8);

        let mut first = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
        let head = collect(&mut first, 4);
        let path = temp_path("resume.bin");
        first.save_checkpoint(&path).unwrap();
        let mut second = Trainer::load_checkpoint(&path).unwrap();
        let tail = collect(&mut second, 8);

        let stitched: Vec<String> = head.into_iter().chain(tail).collect();
        assert_eq!(full, stitched, "resumed run diverged");

        // final parameters agree bitwise
        for ((_, a), (_, b)) in straight
            .generator()
            .params()
            .iter()
            .zip(second.generator().params().iter())
        {
            let ab: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn generator_descends_against_frozen_oracle() {
        // hand-coded "perfect" discriminator for a separable toy target:
        // high probability iff the mean predicted x sits near 0.8
        let gen_cfg = tiny_gen_cfg();
        let mut gen = Generator::new(gen_cfg.clone(), 5).unwrap();
        let mut opt = AdamState::new(gen.params(), AdamConfig::with_lr(2e-4));
        let image = {
            let spec = SyntheticSpec {
                width: 16,
                height: 16,
                ..SyntheticSpec::default()
            };
            generate_synthetic(&spec, 1, 1).images[0].image.clone()
        };

        let mut losses = Vec::new();
        for _ in 0..100 {
            let mut tape = Tape::new();
            let pass = gen.forward(&mut tape, &image, 5).unwrap();
            let mean_x = tape.mean(pass.x_seq);
            let off = tape.affine(mean_x, 1.0, -0.8);
            let sq = tape.square(off);
            let logits = tape.affine(sq, -40.0, 4.0);
            let prob = tape.sigmoid(logits);
            let loss = g_loss_on_tape(&mut tape, prob, false);
            losses.push(tape.value(loss).item());
            gen.params_mut().zero_grads();
            tape.backward(loss);
            gen.params_mut().accumulate_grads(&tape, &pass.binding);
            opt.step(gen.params_mut());
            gen.clamp_prior_means();
        }
        let negative_deltas = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(
            negative_deltas >= 90,
            "only {negative_deltas} of 99 deltas were negative; losses start {:?} end {:?}",
            &losses[..3],
            &losses[97..]
        );
    }

    #[test]
    fn frozen_discriminator_makes_g_update_sample_independent() {
        // with aux_mse_weight = 0 the real sample reaches G only through D's
        // parameters; freezing D removes that path entirely
        let make = |seed_shift: u64| {
            let mut trainer =
                Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), tiny_train_cfg()).unwrap();
            for slot in 0..trainer.discriminator().params().len() {
                trainer
                    .discriminator_mut()
                    .params_mut()
                    .get_mut(slot)
                    .trainable = false;
            }
            let spec = SyntheticSpec {
                width: 16,
                height: 16,
                n_observers: 5,
                ..SyntheticSpec::default()
            };
            // different observer pools for the same images
            let ds = generate_synthetic(&spec, 2, 1000 + seed_shift);
            let mut data = examples_from_synthetic(&ds).unwrap();
            let shared = generate_synthetic(&spec, 2, 555);
            for (ex, img) in data.iter_mut().zip(&shared.images) {
                ex.image = img.image.clone();
            }
            let batch: Vec<&TrainExample> = data.iter().collect();
            let sampler = trainer.sampler_for(data.len());
            trainer.train_step(&batch, &sampler).unwrap();
            trainer
                .generator()
                .params()
                .iter()
                .flat_map(|(_, p)| {
                    p.value
                        .data()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<u64>>()
        };
        assert_eq!(make(0), make(1), "real sample leaked into the G update");
    }

    #[test]
    fn aux_mse_pulls_generator_toward_sample() {
        // contrast with the ablation: a positive aux weight makes the update
        // depend on the real sample
        let make = |seed_shift: u64| {
            let cfg = TrainConfig {
                aux_mse_weight: 1.0,
                ..tiny_train_cfg()
            };
            let mut trainer = Trainer::new(tiny_gen_cfg(), tiny_disc_cfg(), cfg).unwrap();
            for slot in 0..trainer.discriminator().params().len() {
                trainer
                    .discriminator_mut()
                    .params_mut()
                    .get_mut(slot)
                    .trainable = false;
            }
            let spec = SyntheticSpec {
                width: 16,
                height: 16,
                n_observers: 5,
                ..SyntheticSpec::default()
            };
            let ds = generate_synthetic(&spec, 2, 2000 + seed_shift);
            let mut data = examples_from_synthetic(&ds).unwrap();
            let shared = generate_synthetic(&spec, 2, 555);
            for (ex, img) in data.iter_mut().zip(&shared.images) {
                ex.image = img.image.clone();
            }
            let batch: Vec<&TrainExample> = data.iter().collect();
            let sampler = trainer.sampler_for(data.len());
            trainer.train_step(&batch, &sampler).unwrap();
            trainer
                .generator()
                .params()
                .iter()
                .flat_map(|(_, p)| {
                    p.value
                        .data()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<u64>>()
        };
        assert_ne!(make(0), make(1));
    }
}
