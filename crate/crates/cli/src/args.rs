use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "segros",
    version,
    about = "Semantically grounded supervision for masked multimodal training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter text, build the grounding map and write a supervision plan.
    Plan(PlanArgs),
    /// Render the grounding map and the hint cells as PGM images.
    Heatmap(HeatmapArgs),
    /// Train the toy model on synthetic data.
    Train(TrainArgs),
    /// Repeat training over a list of values of one knob.
    Sweep(SweepArgs),
}

/// Pipeline knobs shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value file applied before the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma_lo: Option<f64>,
    #[arg(long)]
    pub gamma_hi: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fraction of patches kept as loss targets, or `none`.
    #[arg(long)]
    pub drop_loss: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `continuous` or `discrete`.
    #[arg(long)]
    pub mode: Option<String>,
    /// `grounded` or `random`.
    #[arg(long)]
    pub masking: Option<String>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            tau: self.tau,
            rho: self.rho,
            eta: self.eta,
            alpha: self.alpha,
            gamma_lo: self.gamma_lo,
            gamma_hi: self.gamma_hi,
            lambda: self.lambda,
            drop_loss: self.drop_loss.clone(),
            seed: self.seed,
            mode: self.mode.clone(),
            masking: self.masking.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Text embedding file.
    #[arg(long)]
    pub text: PathBuf,
    /// Image embedding file.
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Image embedding file carrying the grid shape.
    #[arg(long)]
    pub image: PathBuf,
    /// Directory written by `segros plan`.
    #[arg(long)]
    pub artifacts: PathBuf,
    /// Output PGM; the hint map goes next to it with a `_hints` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

/// Shape of the synthetic batch.
#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    /// Train on generated samples (the only supported dataset).
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 8)]
    pub n_text: usize,
    #[arg(long, default_value_t = 10)]
    pub n_patches: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub planted_fraction: f64,
    #[arg(long, default_value_t = 8)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = segros::toymodel::DEFAULT_LR)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: SyntheticArgs,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Also train with random masking and report both evaluation errors.
    #[arg(long)]
    pub compare_random: bool,
    /// Check analytic gradients against finite differences first.
    #[arg(long)]
    pub gradcheck: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Eta,
    Alpha,
    Rho,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::Eta => "eta",
            SweepParam::Alpha => "alpha",
            SweepParam::Rho => "rho",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub data: SyntheticArgs,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Output table file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}
