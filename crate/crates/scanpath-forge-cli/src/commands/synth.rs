use std::path::PathBuf;

use clap::Args;

use scanpath_forge::data::{
    generate_synthetic, save_dataset, write_pgm16, write_ppm, SyntheticSpec,
};

use crate::error::{io_msg, CliError};

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long, default_value_t = 15)]
    pub observers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub blobs: usize,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
    /// Blob spread range as fractions of image width
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Observer jitter as a fraction of image width
    #[arg(long)]
    pub noise: Option<f64>,
    /// Probability of dwelling on the current blob between fixations
    #[arg(long)]
    pub dwell: Option<f64>,
    #[arg(long)]
    pub len_min: Option<usize>,
    #[arg(long)]
    pub len_max: Option<usize>,
}

pub fn run(args: SynthArgs) -> Result<(), CliError> {
    if args.images == 0 {
        return Err(CliError::Usage("--images must be at least 1".into()));
    }
    if args.observers == 0 {
        return Err(CliError::Usage("--observers must be at least 1".into()));
    }
    if args.blobs == 0 {
        return Err(CliError::Usage("--blobs must be at least 1".into()));
    }
    if args.width == 0 || args.height == 0 {
        return Err(CliError::Usage("image dimensions must be positive".into()));
    }

    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        width: args.width,
        height: args.height,
        n_blobs: args.blobs,
        blob_sigma_frac: (
            args.sigma_min.unwrap_or(defaults.blob_sigma_frac.0),
            args.sigma_max.unwrap_or(defaults.blob_sigma_frac.1),
        ),
        n_observers: args.observers,
        scanpath_len: (
            args.len_min.unwrap_or(defaults.scanpath_len.0),
            args.len_max.unwrap_or(defaults.scanpath_len.1),
        ),
        observer_noise_frac: args.noise.unwrap_or(defaults.observer_noise_frac),
        dwell_prob: args.dwell.unwrap_or(defaults.dwell_prob),
        ..defaults
    };
    if spec.blob_sigma_frac.0 > spec.blob_sigma_frac.1
        || spec.scanpath_len.0 > spec.scanpath_len.1
        || spec.scanpath_len.0 == 0
    {
        return Err(CliError::Usage("empty sigma or length range".into()));
    }

    let ds = generate_synthetic(&spec, args.images, args.seed);

    let images_dir = args.out.join("images");
    let maps_dir = args.out.join("saliency");
    std::fs::create_dir_all(&images_dir).map_err(|e| io_msg("creating images dir", e))?;
    std::fs::create_dir_all(&maps_dir).map_err(|e| io_msg("creating saliency dir", e))?;

    let mut records = Vec::with_capacity(ds.images.len());
    for img in &ds.images {
        let id = &img.record.image_id;
        write_ppm(&img.image, images_dir.join(format!("{id}.ppm")))?;
        write_pgm16(&img.truth, maps_dir.join(format!("{id}.pgm")))?;
        let mut record = img.record.clone();
        record.image_path = Some(format!("images/{id}.ppm"));
        records.push(record);
    }
    save_dataset(&records, args.out.join("dataset.jsonl"))?;

    let scanpaths: usize = records.iter().map(|r| r.observers.len()).sum();
    println!(
        "wrote {} records ({} scanpaths) to {}",
        records.len(),
        scanpaths,
        args.out.display()
    );
    Ok(())
}
