use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use nashseek::experiment::{
    all_converged, certificate_lines, emit_plots, mean_table, read_metadata, results_table, run_experiment, write_bundle, ExperimentConfig,
    Preset, RunArtifact,
};

/// Runs the distributed Nash equilibrium seeker on seeded Cournot games.
///
/// Exits with status 0 only if every run stopped by tolerance.
#[derive(Debug, Parser)]
#[command(name = "nashseek", version)]
struct Args {
    /// Topology preset, repeatable: static-ring, static-star, static-random,
    /// time-varying-random, custom, or all (the four built-in presets).
    #[arg(long = "preset", value_name = "NAME")]
    presets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Independent repetitions; repetition r uses seed + r.
    #[arg(long)]
    reps: Option<usize>,
    /// Number of firms.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    markets: Option<usize>,
    /// Out-neighbours per node in the random presets.
    #[arg(long)]
    out_degree: Option<usize>,
    /// Rounds each time-varying graph is kept before redrawing.
    #[arg(long)]
    redraw_period: Option<usize>,
    #[arg(long)]
    mixing_delta: Option<f64>,
    /// Edge list ("round from to" per line) for the custom preset.
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// TOML file with the same keys as the flags (underscored); flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run the experiment recorded in a metadata.toml sidecar.
    #[arg(long, conflicts_with = "config")]
    replay: Option<PathBuf>,
    #[arg(long, default_value = "nashseek-out")]
    out_dir: PathBuf,
    /// Also write err_inf.svg and dz_inf.svg.
    #[arg(long)]
    emit_plots: bool,
}

fn parse_presets(names: &[String]) -> Result<Vec<Preset>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(Preset::BUILTIN);
        } else {
            out.push(name.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

fn resolve(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = if let Some(path) = &args.replay {
        read_metadata(path)?.config
    } else if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ExperimentConfig::from_toml(&text)?
    } else {
        ExperimentConfig::default()
    };
    if args.replay.is_some() {
        return Ok(cfg);
    }
    if !args.presets.is_empty() {
        cfg.presets = parse_presets(&args.presets)?;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field.clone() { cfg.$field = v; })*};
    }
    set!(seed, alpha, tol, max_iter, reps, m, markets, out_degree, redraw_period);
    if args.mixing_delta.is_some() {
        cfg.mixing_delta = args.mixing_delta;
    }
    if args.graph_file.is_some() {
        cfg.graph_file = args.graph_file.clone();
    }
    if cfg.graph_file.is_some() && args.presets.is_empty() && args.config.is_none() {
        cfg.presets = vec![Preset::Custom];
    }
    Ok(cfg)
}

fn plot(runs: &[RunArtifact], paths: &[PathBuf], args: &Args) -> Result<()> {
    let labelled: Vec<(String, PathBuf)> = runs
        .iter()
        .zip(paths)
        .map(|(r, p)| (format!("{} rep {}", r.summary.preset, r.summary.rep), p.clone()))
        .collect();
    let files = emit_plots(&labelled, &args.out_dir)?;
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match try_main(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs hit the iteration budget before the tolerance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn try_main(args: &Args) -> Result<bool> {
    let cfg = resolve(args)?;
    cfg.validate()?;
    if cfg.presets.contains(&Preset::Custom) && cfg.graph_file.is_none() {
        bail!("--preset custom needs --graph-file");
    }
    let runs = run_experiment(&cfg)?;
    let paths = write_bundle(&cfg, &runs, &args.out_dir)?;
    print!("{}", results_table(&runs));
    if cfg.reps > 1 {
        println!();
        print!("{}", mean_table(&cfg, &runs));
    }
    println!();
    print!("{}", certificate_lines(&runs));
    if args.emit_plots {
        plot(&runs, &paths, args)?;
    }
    eprintln!("wrote {} run CSVs to {}", paths.len(), args.out_dir.display());
    Ok(all_converged(&runs))
}
