use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "sknn",
    version,
    about = "Sketched fully connected and convolutional layers"
)]
pub struct Cli {
    /// Root seed; every random draw is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (defaults to the core count; $SKNN_THREADS caps it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output location: data directory for gen-data, checkpoint for train,
    /// JSON report for the other subcommands.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a synthetic image classification set as IDX files.
    GenData(GenDataArgs),
    /// Train TestNet, optionally with sketched layers.
    Train(TrainArgs),
    /// Run a statistical or exact verification suite.
    Verify(VerifyArgs),
    /// Compare analytic and central-difference gradients of one layer.
    Gradcheck(GradcheckArgs),
    /// Parameter table of a saved checkpoint.
    Report(ReportArgs),
}

/// `HxWxC`, e.g. `32x32x3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ImageShape(pub [usize; 3]);

impl FromStr for ImageShape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let dims = parse_dims(s, 'x')?;
        match dims[..] {
            [h, w, c] => Ok(ImageShape([h, w, c])),
            _ => Err(format!("expected HxWxC, got `{s}`")),
        }
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [h, w, c] = self.0;
        write!(f, "{h}x{w}x{c}")
    }
}

pub fn parse_dims(s: &str, sep: char) -> Result<Vec<usize>, String> {
    s.split(sep)
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("`{t}` is not a non-negative integer in `{s}`"))
        })
        .collect()
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Test samples per class (defaults to a quarter of --n, at least 1).
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long, default_value = "32x32x3")]
    pub shape: ImageShape,
    /// Standard deviation of the per-pixel Gaussian noise.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Testnet,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Arch::Testnet)]
    pub arch: Arch,
    /// Directory written by gen-data. Without it a synthetic set is generated
    /// in memory using --image-shape, --classes and --n.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Expected `HxWxC`; must match the data when both are given.
    #[arg(long)]
    pub image_shape: Option<ImageShape>,
    /// Layers to sketch, e.g. `fc1:k=10,l=2;conv2:k=4,l=1`.
    #[arg(long, default_value = "")]
    pub sketch: String,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// Classes for in-memory data.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Training samples per class for in-memory data.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Evaluate only after the last epoch.
    #[arg(long)]
    pub no_eval: bool,
    /// JSON-lines history (defaults to the checkpoint path with extension
    /// `history.jsonl`).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteChoice {
    All,
    Estimators,
    Variance,
    Exact,
    ConvEquiv,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteChoice::All)]
    pub suite: SuiteChoice,
    /// Monte Carlo trials per estimator.
    #[arg(long, default_value_t = sknn::suites::DEFAULT_TRIALS)]
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerChoice {
    Fc,
    SkFc,
    Conv,
    SkConv,
    Maxpool,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub layer: LayerChoice,
    /// fc, sk-fc: `IN:OUT`. conv, sk-conv: `HxWxC:KHxKW:OUT`.
    /// maxpool: `HxWxC:WINDOW`. Defaults to a small layer of each kind.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub pad: usize,
    /// Sketch size for sk-fc and sk-conv.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Number of sketch pairs for sk-fc and sk-conv.
    #[arg(long = "ell", alias = "l", default_value_t = 2)]
    pub ell: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = sknn::gradcheck::DEFAULT_STEP)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = sknn::gradcheck::DEFAULT_TOLERANCE)]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Add a column with the dense layer counts for the same geometry.
    #[arg(long)]
    pub dense_equivalent: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_shape_parses_hwc() {
        assert_eq!(
            "32x16x3".parse::<ImageShape>().unwrap(),
            ImageShape([32, 16, 3])
        );
        assert!("32x16".parse::<ImageShape>().is_err());
        assert!("32xax3".parse::<ImageShape>().is_err());
        assert_eq!(ImageShape([8, 8, 1]).to_string(), "8x8x1");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
