use std::path::PathBuf;

use clap::{Args, ValueEnum};

use scanpath_forge::data::{load_dataset, save_scanpath};
use scanpath_forge::evaluation::{
    evaluate_generator, predict_all, EvalConfig, EvalInput, MmReduce,
};
use scanpath_forge::training::Trainer;

use crate::error::{io_msg, CliError};

#[derive(Clone, Copy, ValueEnum)]
pub enum ReduceArg {
    Mean,
    Max,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the JSON report
    #[arg(long)]
    pub report: PathBuf,
    /// Reduction of per-observer MultiMatch scores
    #[arg(long, value_enum, default_value_t = ReduceArg::Mean)]
    pub mm_reduce: ReduceArg,
    /// Congruency binarization quantile
    #[arg(long, default_value_t = 0.9)]
    pub q: f64,
    /// Generated scanpath length; defaults to the checkpoint's config
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Also dump each predicted scanpath as JSON into this directory
    #[arg(long)]
    pub scanpaths_out: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    if !(args.q > 0.0 && args.q < 1.0) {
        return Err(CliError::Usage(format!(
            "--q must lie strictly between 0 and 1, got {}",
            args.q
        )));
    }
    let trainer = Trainer::load_checkpoint(&args.checkpoint)?;
    let records = load_dataset(&args.data)?;
    if records.is_empty() {
        return Err(CliError::Io(format!(
            "dataset {} contains no records",
            args.data.display()
        )));
    }

    let mut inputs = Vec::with_capacity(records.len());
    for record in &records {
        inputs.push(EvalInput {
            image_id: record.image_id.clone(),
            image: super::load_record_image(record, &args.data)?,
            pool: record.pool().map_err(|e| CliError::Usage(e.to_string()))?,
        });
    }

    let cfg = EvalConfig {
        mm_reduce: match args.mm_reduce {
            ReduceArg::Mean => MmReduce::Mean,
            ReduceArg::Max => MmReduce::Max,
        },
        congruency_q: args.q,
        saliency_sigma: None,
        seq_len: args.seq_len.unwrap_or(trainer.generator().config().seq_len),
    };
    let report = evaluate_generator(trainer.generator(), &inputs, &cfg)?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&args.report, json).map_err(|e| io_msg("writing report", e))?;

    if let Some(dir) = &args.scanpaths_out {
        std::fs::create_dir_all(dir).map_err(|e| io_msg("creating scanpath dir", e))?;
        let predictions = predict_all(trainer.generator(), &inputs, cfg.seq_len)?;
        for (id, sp) in &predictions {
            save_scanpath(sp, dir.join(format!("{id}.json")))?;
        }
    }

    let a = &report.aggregate;
    println!(
        "evaluated {} images: mm_mean {:.4} nss {:.4} congruency {:.4} -> {}",
        report.images.len(),
        a.mm_mean,
        a.nss,
        a.congruency,
        args.report.display()
    );
    Ok(())
}
