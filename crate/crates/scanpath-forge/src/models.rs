//! The scanpath generator and the sequence discriminator.
//!
//! The generator encodes an image with a small stack of stride-2
//! depthwise-separable blocks, concatenates the rendered Gaussian prior
//! stack onto the feature map, fuses with a 3x3 convolution, bridges the 2D
//! features into a sequence, appends a positional ramp channel, and predicts
//! the x and y coordinate sequences with two independent 1D-convolution
//! branches ending in sigmoids.
//!
//! The discriminator mirrors the branch idea: each coordinate sequence runs
//! through its own 1D-convolution stack with Leaky ReLU activations, global
//! max pooling collapses each branch, and three fully connected layers score
//! the concatenated description.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    kaiming_uniform, AutodiffError, ParamStore, Tape, TapeBinding, Tensor, VarId,
};
use crate::gaze::{Fixation, Scanpath};
use crate::priors::{PriorBank, PriorError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("image shape {got:?} does not match config {expected:?}")]
    BadImage {
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("feature map shape {got:?} does not match config {expected:?}")]
    BadFeatures {
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("sequence length {0} is too short, need at least 2")]
    BadLength(usize),
    #[error("sequence lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
}

/// Architecture of the generator. The defaults describe the desk-scale
/// model: 64x64 RGB input, three stride-2 encoder blocks onto an 8x8 grid,
/// sixteen priors, and ten-fixation outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub in_channels: usize,
    /// Output channels of each depthwise-separable encoder block; every
    /// block halves the spatial size.
    pub encoder_channels: Vec<usize>,
    pub n_priors: usize,
    /// Channels after the fusing 3x3 convolution.
    pub fuse_channels: usize,
    /// Default output scanpath length; forward calls may override it.
    pub seq_len: usize,
    /// Hidden channels of each 1D head; a final single-channel stage is
    /// implied.
    pub head_channels: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
    /// Train the prior means instead of the spreads.
    pub trainable_means: bool,
    /// Render prior maps without the density coefficient (unit peak height
    /// regardless of spread) instead of the full density.
    pub unit_peak_priors: bool,
    /// Bridge 2D features by flattening the spatial grid into a sequence and
    /// resampling, instead of mean-pooling and tiling.
    pub flatten_bridge: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_h: 64,
            image_w: 64,
            in_channels: 3,
            encoder_channels: vec![16, 32, 64],
            n_priors: 16,
            fuse_channels: 64,
            seq_len: 10,
            head_channels: vec![32, 16],
            kernel: 3,
            leaky_slope: 0.2,
            trainable_means: false,
            unit_peak_priors: false,
            flatten_bridge: false,
        }
    }
}

impl GeneratorConfig {
    /// Spatial size of the encoder output (and of the rendered prior maps).
    pub fn feature_grid(&self) -> (usize, usize) {
        let mut h = self.image_h;
        let mut w = self.image_w;
        for _ in &self.encoder_channels {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    pub fn encoder_out_channels(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&self.in_channels)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.seq_len < 2 {
            return Err(ModelError::BadLength(self.seq_len));
        }
        if self.encoder_channels.is_empty() {
            return Err(ModelError::BadConfig(
                "encoder needs at least one block".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(ModelError::BadConfig(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        let (gh, gw) = self.feature_grid();
        if gh == 0 || gw == 0 {
            return Err(ModelError::BadConfig("encoder collapses the image".into()));
        }
        Ok(())
    }
}

struct GeneratorLayers {
    encoder: Vec<(usize, usize)>,
    mu: usize,
    log_sigma: usize,
    fuse: usize,
    head_x: Vec<usize>,
    head_y: Vec<usize>,
}

/// The scanpath generator. Parameters live in a named [`ParamStore`] under
/// the `gen.` prefix; the prior bank occupies `gen.priors.mu` and
/// `gen.priors.log_sigma`.
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    layers: GeneratorLayers,
}

/// Tape handles produced by a generator forward pass.
pub struct GeneratorPass {
    /// Predicted x coordinates in `[0, 1]`, shape `[L]`.
    pub x_seq: VarId,
    /// Predicted y coordinates in `[0, 1]`, shape `[L]`.
    pub y_seq: VarId,
    pub binding: TapeBinding,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = cfg.kernel;
        let slope = cfg.leaky_slope;

        let mut encoder = Vec::new();
        let mut c_in = cfg.in_channels;
        for (i, &c_out) in cfg.encoder_channels.iter().enumerate() {
            let dw = store.register(
                format!("gen.encoder.block{i}.depthwise"),
                kaiming_uniform([c_in, k, k], k * k, slope, &mut rng),
                true,
            );
            let pw = store.register(
                format!("gen.encoder.block{i}.pointwise"),
                kaiming_uniform([c_out, c_in, 1, 1], c_in, slope, &mut rng),
                true,
            );
            encoder.push((dw, pw));
            c_in = c_out;
        }

        let bank = PriorBank::init_grid(cfg.n_priors, cfg.trainable_means)?;
        let (mu_t, ls_t) = bank.to_tensors();
        let mu = store.register("gen.priors.mu", mu_t, cfg.trainable_means);
        let log_sigma = store.register("gen.priors.log_sigma", ls_t, !cfg.trainable_means);

        let fuse_in = cfg.encoder_out_channels() + cfg.n_priors;
        let fuse = store.register(
            "gen.fuse.weight",
            kaiming_uniform(
                [cfg.fuse_channels, fuse_in, k, k],
                fuse_in * k * k,
                slope,
                &mut rng,
            ),
            true,
        );

        let head_x = Self::register_head(&cfg, "head_x", &mut rng, &mut store);
        let head_y = Self::register_head(&cfg, "head_y", &mut rng, &mut store);

        Ok(Generator {
            cfg,
            store,
            layers: GeneratorLayers {
                encoder,
                mu,
                log_sigma,
                fuse,
                head_x,
                head_y,
            },
        })
    }

    fn register_head(
        cfg: &GeneratorConfig,
        name: &str,
        rng: &mut ChaCha8Rng,
        store: &mut ParamStore,
    ) -> Vec<usize> {
        let k = cfg.kernel;
        let mut ids = Vec::new();
        let mut c_in = cfg.fuse_channels + 1;
        for (i, &c_out) in cfg.head_channels.iter().chain([&1usize]).enumerate() {
            let id = store.register(
                format!("gen.{name}.conv{i}"),
                kaiming_uniform([c_out, c_in, k], c_in * k, cfg.leaky_slope, rng),
                true,
            );
            ids.push(id);
            c_in = c_out;
        }
        ids
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// The current prior bank, reconstructed from the parameter store.
    pub fn prior_bank(&self) -> PriorBank {
        PriorBank::from_tensors(
            &self.store.get(self.layers.mu).value,
            &self.store.get(self.layers.log_sigma).value,
            self.cfg.trainable_means,
        )
        .expect("store tensors are well formed")
    }

    /// Clamps the prior means into the unit square; called after every
    /// optimizer step.
    pub fn clamp_prior_means(&mut self) {
        let mu = &mut self.store.get_mut(self.layers.mu).value;
        for v in mu.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<(), ModelError> {
        let expected = [self.cfg.in_channels, self.cfg.image_h, self.cfg.image_w];
        if image.shape() != expected {
            return Err(ModelError::BadImage {
                got: image.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the full pipeline on a fresh binding, recording every step on
    /// the tape. Output coordinates are differentiable with respect to all
    /// trainable parameters, the prior bank included.
    pub fn forward(
        &self,
        tape: &mut Tape,
        image: &Tensor,
        seq_len: usize,
    ) -> Result<GeneratorPass, ModelError> {
        let binding = self.store.bind(tape);
        let (x_seq, y_seq) = self.forward_with_binding(tape, &binding, image, seq_len)?;
        Ok(GeneratorPass {
            x_seq,
            y_seq,
            binding,
        })
    }

    /// As [`Generator::forward`] but reusing an existing binding.
    pub fn forward_with_binding(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        image: &Tensor,
        seq_len: usize,
    ) -> Result<(VarId, VarId), ModelError> {
        self.check_image(image)?;
        let input = tape.leaf(image.clone());
        let features = self.encode_on_tape(tape, binding, input)?;
        self.decode_features(tape, binding, features, seq_len)
    }

    /// Encoder bypass: consumes an externally produced feature map in place
    /// of the built-in encoder output.
    pub fn forward_with_features(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        seq_len: usize,
    ) -> Result<GeneratorPass, ModelError> {
        let (gh, gw) = self.cfg.feature_grid();
        let expected = [self.cfg.encoder_out_channels(), gh, gw];
        if features.shape() != expected {
            return Err(ModelError::BadFeatures {
                got: features.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        let binding = self.store.bind(tape);
        let id = tape.leaf(features.clone());
        let (x_seq, y_seq) = self.decode_features(tape, &binding, id, seq_len)?;
        Ok(GeneratorPass {
            x_seq,
            y_seq,
            binding,
        })
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        input: VarId,
    ) -> Result<VarId, ModelError> {
        let slope = self.cfg.leaky_slope;
        let mut x = input;
        for &(dw, pw) in &self.layers.encoder {
            x = tape.depthwise_separable_block(x, binding.id(dw), binding.id(pw), 2, slope)?;
        }
        Ok(x)
    }

    fn decode_features(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        features: VarId,
        seq_len: usize,
    ) -> Result<(VarId, VarId), ModelError> {
        if seq_len < 2 {
            return Err(ModelError::BadLength(seq_len));
        }
        let slope = self.cfg.leaky_slope;
        let (gh, gw) = self.cfg.feature_grid();

        let priors = if self.cfg.unit_peak_priors {
            PriorBank::render_unit_peak_on_tape(
                tape,
                binding.id(self.layers.mu),
                binding.id(self.layers.log_sigma),
                gh,
                gw,
            )?
        } else {
            PriorBank::render_on_tape(
                tape,
                binding.id(self.layers.mu),
                binding.id(self.layers.log_sigma),
                gh,
                gw,
            )?
        };
        let cat = tape.concat_channels(&[features, priors])?;
        let fused = tape.conv2d(cat, binding.id(self.layers.fuse), 1)?;
        let fused = tape.leaky_relu(fused, slope)?;

        let seq = if self.cfg.flatten_bridge {
            let flat = tape.reshape(fused, [self.cfg.fuse_channels, gh * gw])?;
            tape.resample_columns(flat, seq_len)?
        } else {
            let pooled = tape.spatial_mean(fused)?;
            tape.tile_columns(pooled, seq_len)?
        };

        let ramp: Vec<f64> = (0..seq_len)
            .map(|t| t as f64 / (seq_len - 1) as f64)
            .collect();
        let ramp = tape.leaf(Tensor::new([1, seq_len], ramp));
        let with_pos = tape.concat_channels(&[seq, ramp])?;

        let x_seq = self.run_head(tape, binding, &self.layers.head_x, with_pos, seq_len)?;
        let y_seq = self.run_head(tape, binding, &self.layers.head_y, with_pos, seq_len)?;
        Ok((x_seq, y_seq))
    }

    fn run_head(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        head: &[usize],
        input: VarId,
        seq_len: usize,
    ) -> Result<VarId, ModelError> {
        let mut x = input;
        for (i, &slot) in head.iter().enumerate() {
            x = tape.conv1d(x, binding.id(slot))?;
            if i + 1 < head.len() {
                x = tape.leaky_relu(x, self.cfg.leaky_slope)?;
            }
        }
        let squashed = tape.sigmoid(x);
        Ok(tape.reshape(squashed, [seq_len])?)
    }

    /// Encoder output values for an image, for feature export.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        self.check_image(image)?;
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let input = tape.leaf(image.clone());
        let out = self.encode_on_tape(&mut tape, &binding, input)?;
        Ok(tape.value(out).clone())
    }

    /// Normalized coordinate sequences for an image, without keeping a tape.
    pub fn predict(
        &self,
        image: &Tensor,
        seq_len: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, image, seq_len)?;
        Ok((
            tape.value(pass.x_seq).data().to_vec(),
            tape.value(pass.y_seq).data().to_vec(),
        ))
    }

    /// Predicts and denormalizes onto a screen. The sigmoid output keeps
    /// every fixation inside the screen bounds.
    pub fn predict_scanpath(
        &self,
        image: &Tensor,
        seq_len: usize,
        image_id: &str,
        screen_w: u32,
        screen_h: u32,
    ) -> Result<Scanpath, ModelError> {
        let (xs, ys) = self.predict(image, seq_len)?;
        let fixations = xs
            .iter()
            .zip(&ys)
            .map(|(&u, &v)| Fixation::new(u * f64::from(screen_w), v * f64::from(screen_h)))
            .collect();
        Ok(Scanpath::new(
            image_id,
            "generator",
            screen_w,
            screen_h,
            fixations,
        ))
    }
}

/// Architecture of the discriminator: two identically shaped but
/// independently parameterized 1D-convolution branches and a fully
/// connected tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub branch_channels: Vec<usize>,
    /// Hidden widths of the fully connected tail; a final scalar stage is
    /// implied.
    pub fc: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            branch_channels: vec![16, 32, 64],
            fc: vec![64, 32],
            kernel: 3,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.branch_channels.is_empty() {
            return Err(ModelError::BadConfig(
                "branch needs at least one conv".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(ModelError::BadConfig(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

struct DiscriminatorLayers {
    branch_x: Vec<usize>,
    branch_y: Vec<usize>,
    fc: Vec<(usize, usize)>,
}

/// The sequence discriminator; outputs the probability that a coordinate
/// sequence pair came from a human observer.
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    store: ParamStore,
    layers: DiscriminatorLayers,
}

pub struct DiscriminatorPass {
    /// Probability in `(0, 1)`, shape `[1]`.
    pub prob: VarId,
    pub binding: TapeBinding,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = cfg.kernel;
        let slope = cfg.leaky_slope;

        let register_branch = |name: &str, rng: &mut ChaCha8Rng, store: &mut ParamStore| {
            let mut ids = Vec::new();
            let mut c_in = 1;
            for (i, &c_out) in cfg.branch_channels.iter().enumerate() {
                let id = store.register(
                    format!("disc.{name}.conv{i}"),
                    kaiming_uniform([c_out, c_in, k], c_in * k, slope, rng),
                    true,
                );
                ids.push(id);
                c_in = c_out;
            }
            ids
        };
        let branch_x = register_branch("branch_x", &mut rng, &mut store);
        let branch_y = register_branch("branch_y", &mut rng, &mut store);

        let mut fc = Vec::new();
        let mut n_in = 2 * *cfg.branch_channels.last().expect("validated nonempty");
        for (i, &n_out) in cfg.fc.iter().chain([&1usize]).enumerate() {
            let w = store.register(
                format!("disc.fc{i}.weight"),
                kaiming_uniform([n_out, n_in], n_in, slope, &mut rng),
                true,
            );
            let b = store.register(format!("disc.fc{i}.bias"), Tensor::zeros([n_out]), true);
            fc.push((w, b));
            n_in = n_out;
        }

        Ok(Discriminator {
            cfg,
            store,
            layers: DiscriminatorLayers {
                branch_x,
                branch_y,
                fc,
            },
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Scores a pair of coordinate sequences already on the tape (shape
    /// `[L]` or `[1, L]`), binding fresh parameter leaves.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x_seq: VarId,
        y_seq: VarId,
    ) -> Result<DiscriminatorPass, ModelError> {
        let binding = self.store.bind(tape);
        let prob = self.forward_with_binding(tape, &binding, x_seq, y_seq)?;
        Ok(DiscriminatorPass { prob, binding })
    }

    pub fn forward_with_binding(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        x_seq: VarId,
        y_seq: VarId,
    ) -> Result<VarId, ModelError> {
        let lx = sequence_len(tape, x_seq)?;
        let ly = sequence_len(tape, y_seq)?;
        if lx != ly {
            return Err(ModelError::LengthMismatch { a: lx, b: ly });
        }
        if lx < 2 {
            return Err(ModelError::BadLength(lx));
        }

        let px = self.run_branch(tape, binding, &self.layers.branch_x, x_seq, lx)?;
        let py = self.run_branch(tape, binding, &self.layers.branch_y, y_seq, ly)?;
        let both = tape.concat_channels(&[px, py])?;

        let mut x = both;
        for (i, &(w, b)) in self.layers.fc.iter().enumerate() {
            x = tape.dense(x, binding.id(w), binding.id(b))?;
            if i + 1 < self.layers.fc.len() {
                x = tape.leaky_relu(x, self.cfg.leaky_slope)?;
            }
        }
        Ok(tape.sigmoid(x))
    }

    fn run_branch(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        branch: &[usize],
        seq: VarId,
        len: usize,
    ) -> Result<VarId, ModelError> {
        let mut x = tape.reshape(seq, [1, len])?;
        for &slot in branch {
            x = tape.conv1d(x, binding.id(slot))?;
            x = tape.leaky_relu(x, self.cfg.leaky_slope)?;
        }
        Ok(tape.global_max_pool_1d(x)?)
    }

    /// Probability for plain value sequences, without keeping a tape.
    pub fn classify(&self, xs: &[f64], ys: &[f64]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([xs.len()], xs.to_vec()));
        let y = tape.leaf(Tensor::new([ys.len()], ys.to_vec()));
        let pass = self.forward(&mut tape, x, y)?;
        Ok(tape.value(pass.prob).item())
    }
}

fn sequence_len(tape: &Tape, id: VarId) -> Result<usize, ModelError> {
    let shape = tape.value(id).shape();
    match shape {
        [l] => Ok(*l),
        [1, l] => Ok(*l),
        other => Err(ModelError::BadConfig(format!(
            "expected a sequence, got shape {other:?}"
        ))),
    }
}

/// Total trainable scalar count of a parameter store.
pub fn count_parameters(store: &ParamStore) -> usize {
    store.count_trainable()
}
