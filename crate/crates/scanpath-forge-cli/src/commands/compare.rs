use std::path::PathBuf;

use clap::Args;

use scanpath_forge::data::load_scanpath;
use scanpath_forge::metrics::{multimatch_with, MetricError, MultiMatchConfig, SimplifyConfig};

use crate::error::CliError;

#[derive(Args)]
pub struct CompareArgs {
    /// First scanpath JSON file
    #[arg(long)]
    pub a: PathBuf,
    /// Second scanpath JSON file
    #[arg(long)]
    pub b: PathBuf,
    /// Enable pre-merging: amplitude threshold in pixels
    #[arg(long, requires = "simplify_dir")]
    pub simplify_amp: Option<f64>,
    /// Enable pre-merging: direction threshold in radians
    #[arg(long, requires = "simplify_amp")]
    pub simplify_dir: Option<f64>,
}

pub fn run(args: CompareArgs) -> Result<(), CliError> {
    let a = load_scanpath(&args.a)?;
    let b = load_scanpath(&args.b)?;
    let cfg = MultiMatchConfig {
        simplify: match (args.simplify_amp, args.simplify_dir) {
            (Some(amplitude_px), Some(direction_rad)) => Some(SimplifyConfig {
                amplitude_px,
                direction_rad,
            }),
            _ => None,
        },
    };
    let mm = multimatch_with(&a, &b, &cfg).map_err(|e| match e {
        MetricError::FlatMap => CliError::Numeric(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    let json = serde_json::json!({
        "mm_shape": mm.shape,
        "mm_direction": mm.direction,
        "mm_length": mm.length,
        "mm_position": mm.position,
        "mm_mean": mm.mean,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&json).expect("serializes")
    );
    Ok(())
}
