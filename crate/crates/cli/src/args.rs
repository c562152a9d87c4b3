use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "octlat",
    version,
    about = "Semantic 3D scene generation and completion with octree latent diffusion",
    after_help = "Environment:\n  OCTLAT_THREADS  Maximum number of worker threads"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a LiDAR scan into an OCC1 occupancy grid
    Voxelize(VoxelizeArgs),
    /// Build an OCT1 octree from an SVOX or OCC1 grid
    BuildOctree(ConvertArgs),
    /// Write the dual graph of an octree as text
    Dualize(ConvertArgs),
    /// Train the patch codec and graph VAE on a directory of SVOX scenes
    TrainVae(TrainArgs),
    /// Train a structure or latent denoiser on a directory of SVOX scenes
    TrainDiff(TrainDiffArgs),
    /// Sample a scene unconditionally
    Generate(SampleArgs),
    /// Complete a scene from a LiDAR scan and/or partial semantics
    Complete(CompleteArgs),
    /// Outpaint a scene into a shifted window
    Extend(ExtendArgs),
    /// Compare two directories of SVOX scenes (FID, KID, MMD, IoU)
    Metrics(MetricsArgs),
    /// Run the built-in oracle suites
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (JSON)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output file, written atomically; a manifest goes to <PATH>.manifest.json
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// LiDAR scan (.bin, float32 x y z intensity)
    #[arg(long, value_name = "PATH")]
    pub scan: PathBuf,
    /// World position of the grid corner, in meters
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_origin)]
    pub origin: [f64; 3],
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Input grid or octree (SVOX, OCC1 or OCT1, detected by magic)
    #[arg(value_name = "INPUT")]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Directory of SVOX training scenes
    #[arg(value_name = "SCENES")]
    pub scenes: PathBuf,
    /// Seed for initialization and noise (default: config seed)
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Optimizer steps (default: from the config's train section)
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// Checkpoint to write; other components are copied from the config's checkpoint
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Structure,
    Latent,
}

#[derive(Debug, Args)]
pub struct TrainDiffArgs {
    /// Which denoiser to train
    #[arg(value_enum)]
    pub stage: Stage,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SamplerFlags {
    /// Seed for sampling (default: config seed)
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Number of sampling steps, replacing the sampler's T
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// Threshold on sampled structure values
    #[arg(long, value_name = "F")]
    pub threshold: Option<f64>,
    /// Write every intermediate state as OCC1 (structure) or SVOX (latent) files
    #[arg(long, value_name = "DIR")]
    pub dump_trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Partial semantic grid (SVOX) in the output frame
    #[arg(value_name = "PARTIAL")]
    pub partial: Option<PathBuf>,
    /// LiDAR scan (.bin); requires --origin
    #[arg(long, value_name = "PATH")]
    pub scan: Option<PathBuf>,
    /// World position of the grid corner, in meters
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_origin)]
    pub origin: Option<[f64; 3]>,
    /// Observed region of PARTIAL (OCC1); defaults to its non-empty voxels
    #[arg(long, value_name = "PATH")]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Source scene (SVOX)
    #[arg(value_name = "SOURCE")]
    pub source: PathBuf,
    /// Fraction of the window kept from the source along x, in (0, 1]
    #[arg(long, value_name = "F", default_value_t = 0.5)]
    pub overlap: f64,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Config whose checkpoint holds the feature extractor
    #[command(flatten)]
    pub config: ConfigArg,
    /// Directory of SVOX scenes (generated); also the prediction side of IoU
    #[arg(value_name = "DIR_A")]
    pub a: PathBuf,
    /// Directory of SVOX scenes (reference); also the ground truth side of IoU
    #[arg(value_name = "DIR_B")]
    pub b: PathBuf,
    /// JSON report
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Seed for the randomized cases
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
}

fn parse_origin(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("`{p}`: {e}"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn origin_parsing() {
        assert_eq!(parse_origin("1,-2.5, 3").unwrap(), [1.0, -2.5, 3.0]);
        assert!(parse_origin("1,2").is_err());
        assert!(parse_origin("1,2,x").is_err());
        assert!(parse_origin("1,2,inf").is_err());
    }
}
