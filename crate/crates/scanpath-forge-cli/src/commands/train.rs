use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use scanpath_forge::data::load_dataset;
use scanpath_forge::models::{DiscriminatorConfig, GeneratorConfig};
use scanpath_forge::training::{TrainConfig, TrainExample, Trainer};

use crate::error::{io_msg, CliError};

#[derive(Args)]
pub struct TrainArgs {
    /// JSONL dataset with image_path entries
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and telemetry
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; omitted sections fall back to defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total number of training steps; defaults to epochs from the config
    #[arg(long)]
    pub steps: Option<u64>,
    /// Resume from a checkpoint (configs come from the checkpoint)
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write an intermediate checkpoint every N steps
    #[arg(long, default_value_t = 500)]
    pub checkpoint_every: u64,
}

/// On-disk config layout: three optional sections, every field optional.
#[derive(Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    train: TrainConfig,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file_cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_msg("reading config", e))?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let records = load_dataset(&args.data)?;
    if records.is_empty() {
        return Err(CliError::Io(format!(
            "dataset {} contains no records",
            args.data.display()
        )));
    }
    let mut examples = Vec::with_capacity(records.len());
    for record in &records {
        examples.push(TrainExample {
            image: super::load_record_image(record, &args.data)?,
            pool: record.pool().map_err(|e| CliError::Usage(e.to_string()))?,
        });
    }

    std::fs::create_dir_all(&args.out).map_err(|e| io_msg("creating output dir", e))?;
    let mut trainer = match &args.resume {
        Some(ckpt) => Trainer::load_checkpoint(ckpt)?,
        None => Trainer::new(file_cfg.generator, file_cfg.discriminator, file_cfg.train)?,
    };
    trainer.set_diagnostics_dir(&args.out);

    let batch = trainer.config().batch_size.max(1);
    let steps_per_epoch = (examples.len().div_ceil(batch)).max(1) as u64;
    let total_steps = args
        .steps
        .unwrap_or(trainer.config().epochs as u64 * steps_per_epoch);

    let telemetry_path = args.out.join("telemetry.jsonl");
    let mut telemetry = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&telemetry_path)
        .map_err(|e| io_msg("opening telemetry", e))?;

    while trainer.step_count() < total_steps {
        let next = (trainer.step_count() + args.checkpoint_every).min(total_steps);
        let mut write_error = None;
        trainer.run(&examples, next, |report| {
            let line = serde_json::to_string(report).expect("report serializes");
            if let Err(e) = writeln!(telemetry, "{line}") {
                write_error.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_error {
            return Err(io_msg("writing telemetry", e));
        }
        if trainer.step_count() < total_steps {
            trainer.save_checkpoint(
                args.out
                    .join(format!("checkpoint_step_{}.bin", trainer.step_count())),
            )?;
        }
    }
    trainer.save_checkpoint(args.out.join("checkpoint.bin"))?;

    println!(
        "trained to step {} ({} examples, {} per epoch); checkpoint at {}",
        trainer.step_count(),
        examples.len(),
        steps_per_epoch,
        args.out.join("checkpoint.bin").display()
    );
    Ok(())
}
