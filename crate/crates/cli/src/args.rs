use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nerd_core::divergence::SigmaMode;
use nerd_core::neural::{BlockConfig, FilterKind, LrnParams};
use nerd_core::pipeline::{BankSource, PipelineConfig};
use nerd_core::salience::HierarchyConfig;
use nerd_core::segmentation::SlicParams;

#[derive(Debug, Parser)]
#[command(
    name = "nerd",
    version,
    about = "Saliency detection from neural response divergence"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Root seed; every stochastic stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// key=value file whose entries stand in for flags. Flags given on the
    /// command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the saliency map of one image.
    Detect(DetectArgs),
    /// Evaluate a directory of images against same-stem ground-truth masks.
    Eval(EvalArgs),
    /// Time the pipeline at several connectivity levels.
    Bench(BenchArgs),
    /// Write a generated filter bank in NERD-FB format.
    Genfilters(GenfiltersArgs),
}

pub const SUBCOMMANDS: [&str; 4] = ["detect", "eval", "bench", "genfilters"];

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// NERD-FB file with first-layer weights; overrides the generator flags.
    #[arg(long)]
    pub filters: Option<PathBuf>,
    #[arg(long, default_value_t = 96)]
    pub filter_count: usize,
    #[arg(long, default_value_t = 11)]
    pub filter_size: usize,
    #[arg(long, default_value = "gabor")]
    pub filter_kind: FilterKind,

    /// Fraction of synapses kept (1.0 = fully connected).
    #[arg(long, default_value_t = 0.25)]
    pub connectivity: f64,

    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    #[arg(long, default_value_t = 5)]
    pub lrn_size: usize,
    #[arg(long, default_value_t = 2.0)]
    pub lrn_k: f32,
    /// 0 disables normalization.
    #[arg(long, default_value_t = 1e-4)]
    pub lrn_alpha: f32,
    #[arg(long, default_value_t = 0.75)]
    pub lrn_beta: f32,
    #[arg(long, default_value_t = 3)]
    pub pool_window: usize,
    #[arg(long, default_value_t = 2)]
    pub pool_stride: usize,

    #[arg(long, default_value_t = 300)]
    pub superpixels: usize,
    #[arg(long, default_value_t = 10.0)]
    pub compactness: f64,
    #[arg(long, default_value_t = 10)]
    pub slic_iterations: usize,

    /// Sparse atom count per hierarchy layer, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "5,25,45,65,85")]
    pub atoms: Vec<usize>,

    /// `auto` or a fixed sigma^2.
    #[arg(long, default_value = "auto")]
    pub sigma: String,
}

impl PipelineArgs {
    pub fn to_config(&self, seed: u64) -> Result<PipelineConfig> {
        let sigma = match self.sigma.as_str() {
            "auto" => SigmaMode::Auto,
            v => SigmaMode::Fixed(
                v.parse()
                    .with_context(|| format!("--sigma expects `auto` or a number, got {v:?}"))?,
            ),
        };
        let bank = match &self.filters {
            Some(p) => BankSource::File(p.clone()),
            None => BankSource::Generate {
                count: self.filter_count,
                size: self.filter_size,
                kind: self.filter_kind,
            },
        };
        let cfg = PipelineConfig {
            bank,
            connectivity: self.connectivity,
            seed,
            block: BlockConfig {
                stride: self.stride,
                lrn: Some(LrnParams {
                    size: self.lrn_size,
                    k: self.lrn_k,
                    alpha: self.lrn_alpha,
                    beta: self.lrn_beta,
                }),
                pool_window: self.pool_window,
                pool_stride: self.pool_stride,
            },
            hierarchy: HierarchyConfig {
                atom_counts: self.atoms.clone(),
                slic: SlicParams {
                    target_segments: self.superpixels,
                    compactness: self.compactness,
                    iterations: self.slic_iterations,
                },
                sigma,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "saliency.png")]
    pub out: PathBuf,
    /// Write the superpixel label map as a 16-bit PGM.
    #[arg(long)]
    pub dump_segmentation: Option<PathBuf>,
    /// Write each hierarchy layer's normalized map into this directory.
    #[arg(long)]
    pub dump_layers: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub gts: PathBuf,
    /// Per-image report CSV.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
    /// Dataset-mean PR curve CSV.
    #[arg(long, default_value = "pr_curve.csv")]
    pub pr_out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave the seconds column empty so reports are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.75,1.0")]
    pub connectivity_sweep: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct GenfiltersArgs {
    #[arg(long, default_value_t = 96)]
    pub count: usize,
    #[arg(long, default_value_t = 11)]
    pub size: usize,
    #[arg(long, default_value = "gabor")]
    pub kind: FilterKind,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), n + 1);
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key {:?}", path.display(), n + 1, k.trim());
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(argv: &[String]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if let Some(v) = a.strip_prefix("--config=") {
            Some(PathBuf::from(v))
        } else if a == "--config" {
            argv.get(i + 1).map(PathBuf::from)
        } else {
            None
        }
    })
}

/// Splices config-file entries into `argv` right after the subcommand name so
/// that explicit flags, which come later, override them.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let pairs = read_config(&path)?;
    let Some(pos) = argv
        .iter()
        .skip(1)
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map(|p| p + 1)
    else {
        return Ok(argv);
    };
    let mut injected = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" if matches!(k.as_str(), "verbose" | "no-timing") => {
                injected.push(format!("--{k}"))
            }
            "false" if matches!(k.as_str(), "verbose" | "no-timing") => {}
            _ => injected.push(format!("--{k}={v}")),
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn defaults_mirror_conv1_and_hierarchy() {
        let cli = Cli::try_parse_from(argv("nerd detect a.png")).unwrap();
        let Command::Detect(d) = cli.command else {
            panic!()
        };
        let cfg = d.pipeline.to_config(cli.seed).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn config_values_are_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# sweep\nconnectivity = 0.5\natoms=3,6\nseed=9\nverbose=true\n",
        )
        .unwrap();
        let args = format!(
            "nerd --config {} detect a.png --connectivity 0.75",
            path.display()
        );
        let expanded = expand_config(argv(&args)).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        assert_eq!(cli.seed, 9);
        assert!(cli.verbose);
        let Command::Detect(d) = cli.command else {
            panic!()
        };
        assert_eq!(d.pipeline.connectivity, 0.75);
        assert_eq!(d.pipeline.atoms, vec![3, 6]);
    }

    #[test]
    fn bad_config_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "connectivity 0.5\n").unwrap();
        assert!(read_config(&path).is_err());
    }

    #[test]
    fn invalid_pipeline_values_fail_validation() {
        let cli = Cli::try_parse_from(argv("nerd detect a.png --atoms 5,4")).unwrap();
        let Command::Detect(d) = cli.command else {
            panic!()
        };
        assert!(d.pipeline.to_config(0).is_err());
        let cli = Cli::try_parse_from(argv("nerd detect a.png --sigma wide")).unwrap();
        let Command::Detect(d) = cli.command else {
            panic!()
        };
        assert!(d.pipeline.to_config(0).is_err());
    }
}
