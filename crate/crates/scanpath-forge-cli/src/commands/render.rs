use std::path::PathBuf;

use clap::Args;

use scanpath_forge::data::{load_scanpath, read_ppm};

use crate::error::{io_msg, CliError};
use crate::svg;

#[derive(Args)]
pub struct RenderArgs {
    /// Scanpath JSON file
    #[arg(long)]
    pub scanpath: PathBuf,
    /// Output SVG path
    #[arg(long)]
    pub out: PathBuf,
    /// Optional PPM stimulus to draw underneath
    #[arg(long)]
    pub image: Option<PathBuf>,
}

pub fn run(args: RenderArgs) -> Result<(), CliError> {
    let sp = load_scanpath(&args.scanpath)?;
    sp.validate()
        .map_err(|e| CliError::Usage(format!("invalid scanpath: {e}")))?;
    let background = match &args.image {
        Some(path) => Some(read_ppm(path)?),
        None => None,
    };
    let svg = svg::render(&sp, background.as_ref());
    std::fs::write(&args.out, svg).map_err(|e| io_msg("writing svg", e))?;
    println!("rendered {} fixations to {}", sp.len(), args.out.display());
    Ok(())
}
