//! Seeded experiment harness: topology presets, batch repetitions, run
//! bundles with a metadata sidecar, replay, and SVG error plots.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{certify, CertifyError, StepsizeCertificate};
use crate::game::{default_ne_stepsize, GameConstants, solve_ne_full_info, CournotSpec, GameError};
use crate::graph::{gen_cycle, gen_random, gen_star, read_edge_list, GraphError, GraphSequence};
use crate::mixing::{eta_report, MixingError};
use crate::seeker::{run, RunConfig, RunRecord, SeekerError, StopReason, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed run CSV {path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Seeker(#[from] SeekerError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    StaticRing,
    StaticStar,
    StaticRandom,
    TimeVaryingRandom,
    /// Graph sequence read from an edge-list file.
    Custom,
}

impl Preset {
    pub const BUILTIN: [Preset; 4] = [Preset::StaticRing, Preset::StaticStar, Preset::StaticRandom, Preset::TimeVaryingRandom];

    pub fn name(self) -> &'static str {
        match self {
            Preset::StaticRing => "static-ring",
            Preset::StaticStar => "static-star",
            Preset::StaticRandom => "static-random",
            Preset::TimeVaryingRandom => "time-varying-random",
            Preset::Custom => "custom",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Preset::StaticRing => "Static Ring",
            Preset::StaticStar => "Static Star",
            Preset::StaticRandom => "Static Random",
            Preset::TimeVaryingRandom => "Time-varying Random",
            Preset::Custom => "Custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        [Preset::StaticRing, Preset::StaticStar, Preset::StaticRandom, Preset::TimeVaryingRandom, Preset::Custom]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown preset `{s}`")))
    }
}

/// Everything that determines a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub presets: Vec<Preset>,
    /// Number of firms.
    pub m: usize,
    pub markets: usize,
    /// Out-neighbours per node for the random presets.
    pub out_degree: usize,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub reps: usize,
    /// Rounds each time-varying graph is held for.
    pub redraw_period: usize,
    /// Off-diagonal mixing weight; defaults to half the inverse max in-degree.
    pub mixing_delta: Option<f64>,
    pub graph_file: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            presets: Preset::BUILTIN.to_vec(),
            m: 20,
            markets: 7,
            out_degree: 4,
            alpha: 0.05,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            reps: 1,
            redraw_period: 1,
            mixing_delta: None,
            graph_file: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.presets.is_empty() {
            return bad("no presets selected".into());
        }
        if self.m < 2 {
            return bad(format!("need at least two firms, got {}", self.m));
        }
        if self.markets == 0 {
            return bad("need at least one market".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("stepsize must be positive, got {}", self.alpha));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 || self.reps == 0 || self.redraw_period == 0 {
            return bad("max_iter, reps and redraw_period must be positive".into());
        }
        if self.presets.contains(&Preset::Custom) && self.graph_file.is_none() {
            return bad("the custom preset needs a graph file".into());
        }
        Ok(())
    }

    /// Seed of repetition `rep`; game and graphs are both derived from it.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }
}

const GRAPH_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn build_graphs(cfg: &ExperimentConfig, preset: Preset, rep: usize) -> Result<GraphSequence> {
    let seed = cfg.rep_seed(rep) ^ GRAPH_SALT;
    Ok(match preset {
        Preset::StaticRing => GraphSequence::Static(gen_cycle(cfg.m)?),
        Preset::StaticStar => GraphSequence::Static(gen_star(cfg.m)?),
        Preset::StaticRandom => GraphSequence::Static(gen_random(cfg.m, cfg.out_degree, seed)?),
        Preset::TimeVaryingRandom => GraphSequence::seeded_random(cfg.m, cfg.out_degree, seed, cfg.redraw_period)?,
        Preset::Custom => {
            let path = cfg.graph_file.as_ref().ok_or_else(|| ExperimentError::Config("the custom preset needs a graph file".into()))?;
            let seq = read_edge_list(BufReader::new(fs::File::open(path)?))?;
            if seq.num_nodes() != cfg.m {
                return Err(ExperimentError::Config(format!("graph file has {} nodes but m = {}", seq.num_nodes(), cfg.m)));
            }
            seq
        }
    })
}

pub fn build_game(cfg: &ExperimentConfig, rep: usize) -> Result<CournotSpec> {
    Ok(CournotSpec::random(cfg.m, cfg.markets, cfg.rep_seed(rep))?)
}

/// Terminal row of one run, in the column order of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Preset,
    pub rep: usize,
    pub seed: u64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub err_inf: f64,
    pub dz_inf: f64,
    pub stop: StopReason,
}

impl RunSummary {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Tolerance
    }

    pub fn csv_name(&self) -> String {
        format!("{}_rep{}.csv", self.preset, self.rep)
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub summary: RunSummary,
    pub record: RunRecord,
    pub certificate: std::result::Result<StepsizeCertificate, String>,
}

/// Solves the equilibrium, runs the seeker with `π_k`-weighted errors, and
/// certifies the stepsize over the rounds actually run.
pub fn run_single(cfg: &ExperimentConfig, preset: Preset, rep: usize) -> Result<RunArtifact> {
    let spec = build_game(cfg, rep)?;
    let game = spec.to_game();
    let consts = spec.constants();
    let x_star = solve_ne_full_info(&game, default_ne_stepsize(&consts), 1e-12, 1_000_000)?;
    let graphs = build_graphs(cfg, preset, rep)?;
    let config = RunConfig {
        mixing_delta: cfg.mixing_delta,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        seed: cfg.rep_seed(rep),
        weighted: true,
        ..RunConfig::new(game, graphs, cfg.alpha)
    };
    let record = run(&config, Some(&x_star))?;
    let certificate = certificate_for(&config, &record, &consts);
    let last = record.last();
    let summary = RunSummary {
        preset,
        rep,
        seed: cfg.rep_seed(rep),
        iterations: record.iterations(),
        wall_time_s: record.wall_time.as_secs_f64(),
        err_inf: last.and_then(|r| r.err_inf).unwrap_or(f64::NAN),
        dz_inf: last.map_or(f64::NAN, |r| r.dz_inf),
        stop: record.stop,
    };
    Ok(RunArtifact { summary, record, certificate })
}

fn certificate_for(
    config: &RunConfig,
    record: &RunRecord,
    consts: &GameConstants,
) -> std::result::Result<StepsizeCertificate, String> {
    let pis = record.pis.as_ref().ok_or("no pi sequence recorded")?;
    let rounds = record.iterations().max(1);
    let weights = config.weights().map_err(|e| e.to_string())?;
    let eta = eta_report(&weights, pis, rounds).map_err(|e| e.to_string())?;
    certify(consts, pis, rounds, Some(&eta), eta.w, &config.alphas).map_err(|e| e.to_string())
}

/// Runs every (repetition, preset) pair in parallel; artifacts come back
/// ordered by repetition, then by preset as listed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    cfg.validate()?;
    let jobs: Vec<(usize, Preset)> = (0..cfg.reps).flat_map(|r| cfg.presets.iter().map(move |&p| (r, p))).collect();
    jobs.into_par_iter().map(|(rep, preset)| run_single(cfg, preset, rep)).collect()
}

pub fn all_converged(runs: &[RunArtifact]) -> bool {
    runs.iter().all(|r| r.summary.converged())
}

/// Per-run table: iterations, running time, `‖x^k−x*‖_∞`, `‖Z^{k+1}−Z^k‖_∞`.
pub fn results_table(runs: &[RunArtifact]) -> String {
    let mut out = format!("{:<22} {:>5} {:>12} {:>16} {:>10} {:>12} {:>12}\n", "graph", "rep", "iterations", "running time (s)", "stop", "err_inf", "dz_inf");
    for r in runs {
        let s = &r.summary;
        let stop = if s.converged() { "tol" } else { "budget" };
        writeln!(out, "{:<22} {:>5} {:>12} {:>16.3} {:>10} {:>12.1e} {:>12.1e}", s.preset.label(), s.rep, s.iterations, s.wall_time_s, stop, s.err_inf, s.dz_inf).unwrap();
    }
    out
}

/// Means over repetitions, one row per preset.
pub fn mean_table(cfg: &ExperimentConfig, runs: &[RunArtifact]) -> String {
    let mut out = format!(
        "stepsize alpha = {}, {} repetitions\n{:<22} {:>14} {:>18} {:>14} {:>14} {:>10}\n",
        cfg.alpha, cfg.reps, "graph", "avg iterations", "avg time (s)", "avg err_inf", "avg dz_inf", "converged"
    );
    for &preset in &cfg.presets {
        let rows: Vec<&RunSummary> = runs.iter().map(|r| &r.summary).filter(|s| s.preset == preset).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&RunSummary) -> f64| rows.iter().map(|s| f(s)).sum::<f64>() / n;
        writeln!(
            out,
            "{:<22} {:>14.2} {:>18.4} {:>14.4e} {:>14.4e} {:>7}/{}",
            preset.label(),
            mean(&|s| s.iterations as f64),
            mean(&|s| s.wall_time_s),
            mean(&|s| s.err_inf),
            mean(&|s| s.dz_inf),
            rows.iter().filter(|s| s.converged()).count(),
            rows.len()
        )
        .unwrap();
    }
    out.push_str("baseline algorithm column omitted: only this seeker is run\n");
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct RunEntry {
    summary: RunSummary,
    csv: String,
    certificate: Option<StepsizeCertificate>,
    certificate_error: Option<String>,
}

/// Sidecar describing a bundle; enough to replay it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub seed: u64,
    pub presets: Vec<Preset>,
    pub config: ExperimentConfig,
    runs: Vec<RunEntry>,
}

pub const METADATA_FILE: &str = "metadata.toml";

/// Writes per-run CSVs, `summary.txt`, and the metadata sidecar into
/// `out_dir`; returns the CSV paths in run order.
pub fn write_bundle(cfg: &ExperimentConfig, runs: &[RunArtifact], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(runs.len());
    let mut entries = Vec::with_capacity(runs.len());
    for r in runs {
        let name = r.summary.csv_name();
        let path = out_dir.join(&name);
        fs::write(&path, r.record.to_csv())?;
        paths.push(path);
        let (certificate, certificate_error) = match &r.certificate {
            Ok(c) => (Some(c.clone()), None),
            Err(e) => (None, Some(e.clone())),
        };
        entries.push(RunEntry { summary: r.summary.clone(), csv: name, certificate, certificate_error });
    }
    let mut summary = results_table(runs);
    if cfg.reps > 1 {
        summary.push('\n');
        summary.push_str(&mean_table(cfg, runs));
    }
    summary.push('\n');
    summary.push_str(&certificate_lines(runs));
    fs::write(out_dir.join("summary.txt"), summary)?;
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        presets: cfg.presets.clone(),
        config: cfg.clone(),
        runs: entries,
    };
    let text = toml::to_string(&meta).map_err(|e| ExperimentError::Config(e.to_string()))?;
    fs::write(out_dir.join(METADATA_FILE), text)?;
    Ok(paths)
}

/// One line per run: certified by the contraction bound, and whether the
/// run itself converged. The bound is only sufficient.
pub fn certificate_lines(runs: &[RunArtifact]) -> String {
    let mut out = String::new();
    for r in runs {
        let s = &r.summary;
        let ran = if s.converged() { "ran-converged" } else { "ran-budget" };
        match &r.certificate {
            Ok(c) => writeln!(
                out,
                "{} rep {}: {} (lambda_max = {:.6}, eta = {:.3e}), {ran}",
                s.preset,
                s.rep,
                if c.is_certified() { "certified" } else { "uncertified" },
                c.lambda_max,
                c.eta
            ),
            Err(e) => writeln!(out, "{} rep {}: no certificate ({e}), {ran}", s.preset, s.rep),
        }
        .unwrap();
    }
    out
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    toml::from_str(&fs::read_to_string(path)?).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

/// Re-runs the experiment described by a sidecar into `out_dir`.
pub fn replay(metadata: &Path, out_dir: &Path) -> Result<Vec<RunArtifact>> {
    let meta = read_metadata(metadata)?;
    let runs = run_experiment(&meta.config)?;
    write_bundle(&meta.config, &runs, out_dir)?;
    Ok(runs)
}

/// Reads `(k, err_inf, dz_inf)` from a run CSV. Rows without an error value
/// carry NaN there.
pub fn read_run_csv(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let malformed = |reason: String| ExperimentError::Csv { path: path.to_path_buf(), reason };
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| malformed(format!("missing column `{name}`")));
    let (ik, ierr, idz) = (col("k")?, col("err_inf")?, col("dz_inf")?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let k = field(ik).parse().map_err(|_| malformed(format!("bad round `{}`", field(ik))))?;
        let err = match field(ierr) {
            "" => f64::NAN,
            s => s.parse().map_err(|_| malformed(format!("bad error `{s}`")))?,
        };
        let dz = field(idz).parse().map_err(|_| malformed(format!("bad dz `{}`", field(idz))))?;
        rows.push((k, err, dz));
    }
    if rows.is_empty() {
        return Err(malformed("no rounds".into()));
    }
    Ok(rows)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_plot(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 70.0, 180.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|(_, y)| *y > 0.0 && y.is_finite());
    let (mut xmax, mut ymin, mut ymax) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xmax = xmax.max(x);
        ymin = ymin.min(y.log10());
        ymax = ymax.max(y.log10());
    }
    if !ymin.is_finite() {
        (ymin, ymax) = (-1.0, 0.0);
    }
    let (ylo, yhi) = (ymin.floor(), ymax.ceil().max(ymin.floor() + 1.0));
    let sx = |x: f64| left + pw * x / xmax;
    let sy = |ly: f64| top + ph * (yhi - ly) / (yhi - ylo);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n",
        left + pw / 2.0
    );
    for e in ylo as i32..=yhi as i32 {
        let y = sy(e as f64);
        writeln!(out, "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>", left + pw).unwrap();
        writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>", left - 6.0, y + 4.0).unwrap();
    }
    for i in 0..=4 {
        let x = xmax * i as f64 / 4.0;
        writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{:.0}</text>", sx(x), top + ph + 18.0, x).unwrap();
    }
    writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">iteration k</text>", left + pw / 2.0, h - 8.0).unwrap();
    for (idx, (label, s)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = s.iter().filter(|(_, y)| *y > 0.0 && y.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.log10()))).collect();
        writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", points.join(" ")).unwrap();
        let ly = top + 16.0 + 18.0 * idx as f64;
        writeln!(out, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", left + pw + 10.0, left + pw + 30.0).unwrap();
        writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", left + pw + 36.0, ly + 4.0, xml_escape(label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `err_inf.svg` and `dz_inf.svg` with one log-scale curve per
/// labelled run CSV.
pub fn emit_plots(runs: &[(String, PathBuf)], out_dir: &Path) -> Result<[PathBuf; 2]> {
    if runs.is_empty() {
        return Err(ExperimentError::Config("no runs to plot".into()));
    }
    let mut err = Vec::new();
    let mut dz = Vec::new();
    for (label, path) in runs {
        let rows = read_run_csv(path)?;
        err.push((label.clone(), rows.iter().map(|&(k, e, _)| (k as f64 + 1.0, e)).collect()));
        dz.push((label.clone(), rows.iter().map(|&(k, _, d)| (k as f64 + 1.0, d)).collect()));
    }
    fs::create_dir_all(out_dir)?;
    let err_path = out_dir.join("err_inf.svg");
    let dz_path = out_dir.join("dz_inf.svg");
    fs::write(&err_path, svg_plot("max-norm error to the equilibrium", &err))?;
    fs::write(&dz_path, svg_plot("max-norm change of the estimates", &dz))?;
    Ok([err_path, dz_path])
}
