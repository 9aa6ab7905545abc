mod args;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use nerd_core::evaluation::{bench_csv, bench_pipeline, curve_csv, evaluate_dataset};
use nerd_core::imaging::load_image;
use nerd_core::neural::generate_filter_bank;
use nerd_core::pipeline::Detector;
use nerd_core::salience::SaliencyMap;

use args::{BenchArgs, Cli, Command, DetectArgs, EvalArgs, GenfiltersArgs};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn detect(cli: &Cli, a: &DetectArgs) -> Result<()> {
    let cfg = a.pipeline.to_config(cli.seed)?;
    let image = load_image(&a.input)?;
    let detector = Detector::new(cfg)?;
    if cli.verbose {
        eprintln!(
            "bank {:?}, {} of {} synapses active",
            detector.bank.shape(),
            detector.bank.active_synapses(),
            detector.bank.synapse_count()
        );
    }
    let det = detector.detect(&image)?;
    det.map.save(&a.out)?;
    if let Some(path) = &a.dump_segmentation {
        det.segmentation.save_pgm(path)?;
    }
    if let Some(dir) = &a.dump_layers {
        fs::create_dir_all(dir)?;
        for (i, layer) in det.layers.iter().enumerate() {
            let k = detector.config.hierarchy.atom_counts[i];
            SaliencyMap::normalized(image.width(), image.height(), layer)
                .save(dir.join(format!("layer_{i}_k{k}.png")))?;
        }
    }
    for (stage, t) in det.timings.named() {
        println!("{stage:>18}: {:.4} s", t.as_secs_f64());
    }
    if cli.verbose {
        eprintln!(
            "{} superpixels, MACs {} of {} dense",
            det.segmentation.count, det.macs.actual, det.macs.dense
        );
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let cfg = a.pipeline.to_config(cli.seed)?;
    if !a.images.is_dir() {
        bail!("image directory {} does not exist", a.images.display());
    }
    let report = evaluate_dataset(&a.images, &a.gts, &cfg, a.jobs)?;
    for (file, reason) in &report.failures {
        eprintln!("skipped {file}: {reason}");
    }
    if report.images.is_empty() {
        bail!("no valid image/ground-truth pairs found");
    }
    write_text(&a.out, &report.to_csv(!a.no_timing))?;
    write_text(&a.pr_out, &curve_csv(&report.mean_curve))?;
    println!(
        "{} images, mean PR-AUC {:.4}",
        report.images.len(),
        report.mean_auc()
    );
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    if a.connectivity_sweep.is_empty() {
        bail!("--connectivity-sweep is empty");
    }
    if let Some(p) = a
        .connectivity_sweep
        .iter()
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        bail!("connectivity {p} outside [0, 1]");
    }
    let cfg = a.pipeline.to_config(cli.seed)?;
    let image = load_image(&a.input)?;
    let id = a
        .input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reports = bench_pipeline(&image, &id, &cfg, &a.connectivity_sweep, a.repetitions)?;
    write_text(&a.out, &bench_csv(&reports))?;
    let dense_conv = reports
        .iter()
        .find(|r| r.connectivity == 1.0)
        .and_then(|r| r.stage_seconds("conv"));
    for r in &reports {
        let conv = r.stage_seconds("conv").unwrap_or(0.0);
        let total = r.stage_seconds("total").unwrap_or(0.0);
        let gain = dense_conv
            .filter(|d| *d > 0.0)
            .map(|d| format!(", conv time -{:.1}% vs p=1", 100.0 * (1.0 - conv / d)))
            .unwrap_or_default();
        println!(
            "p={:<5} MACs {}/{} conv {:.4} s total {:.4} s{}",
            r.connectivity, r.macs.actual, r.macs.dense, conv, total, gain
        );
    }
    Ok(())
}

fn genfilters(cli: &Cli, a: &GenfiltersArgs) -> Result<()> {
    // Connectivity is irrelevant here: masks are never stored.
    let bank = generate_filter_bank(a.count, a.size, a.size, a.kind, 1.0, cli.seed)?;
    bank.export(&a.out)?;
    if cli.verbose {
        eprintln!("wrote {:?} bank to {}", bank.shape(), a.out.display());
    }
    Ok(())
}

fn run() -> Result<()> {
    let argv = args::expand_config(std::env::args().collect())?;
    let cli = Cli::parse_from(argv);
    match &cli.command {
        Command::Detect(a) => detect(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Bench(a) => bench(&cli, a),
        Command::Genfilters(a) => genfilters(&cli, a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
