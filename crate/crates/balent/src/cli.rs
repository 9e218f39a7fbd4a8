//! Command-line front end: score prediction cubes, select pixels to label,
//! run active-learning simulations, and merge run metrics into reports.
//!
//! Configuration is a plain `key = value` file (one pair per line, `#` starts
//! a comment); every command-line flag overrides the matching key. All
//! randomness flows from the explicit seeds, so re-running a command
//! overwrites its outputs byte for byte.
//!
//! Exit codes: 0 success, 1 bad arguments or config, 2 file problems,
//! 3 numeric failures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{score_pixel, select_top_n, AcquisitionKind, ScoreParams};
use crate::error::{Error, Result};
use crate::simulator::{metrics_from_csv, metrics_to_csv, run_al, ALConfig};
use crate::tensorio::{
    fmt_score, read_cube, read_labels, read_scores, write_scores, write_selections, ScoreMap,
};
use crate::uncertainty::{fit_pixel, record_for_pixel, renormalized_means};

#[derive(Parser)]
#[command(name = "balent", version, about = "Balanced-entropy active learning for pixels")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every pixel of a prediction cube and export uncertainty records.
    Score {
        /// Prediction-cube file.
        cube: PathBuf,
        /// One of: balent_acq, bald, power_bald, margin, entropy, random.
        #[arg(long)]
        acquisition: String,
        /// Exponent on BALD inside power_bald.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scores CSV path; the per-pixel record table lands next to it with
        /// extension `records.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the highest-scoring unlabeled pixels from a score map.
    Select {
        /// Score-map CSV.
        scores: PathBuf,
        /// Label-map CSV marking already-labeled pixels.
        labels: PathBuf,
        /// Class count of the label map; the value `classes` means unlabeled.
        #[arg(long)]
        classes: u32,
        /// How many pixels to select.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the active-learning loop and write metrics, selections, and a
    /// manifest into a directory.
    Simulate {
        /// Config file; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        acquisition: Option<String>,
        /// Pixels queried per image per cycle.
        #[arg(long)]
        n: Option<usize>,
        /// Stochastic forward passes per inference.
        #[arg(long)]
        m: Option<usize>,
        /// Dropout rate of the model.
        #[arg(long)]
        dropout: Option<f64>,
        /// Number of acquisition cycles.
        #[arg(long)]
        cycles: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Candidate-pool multiplier for the margin acquisition.
        #[arg(long)]
        pool_factor: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge the metrics of several runs into a comparison table plus a
    /// plot-ready long-format CSV.
    Report {
        /// Metrics CSVs, each with a `manifest.cfg` in the same directory.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Table CSV path; the long-format companion lands next to it with
        /// extension `long.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses the process arguments, runs the selected command, and returns the
/// exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive here too and are not failures.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score { cube, acquisition, gamma, seed, out } => {
            cmd_score(&cube, acquisition.parse()?, gamma, seed, &out)
        }
        Command::Select { scores, labels, classes, n, seed, out } => {
            cmd_select(&scores, &labels, classes, n, seed, &out)
        }
        Command::Simulate {
            config,
            out,
            acquisition,
            n,
            m,
            dropout,
            cycles,
            gamma,
            pool_factor,
            seed,
        } => {
            let overrides = SimOverrides {
                acquisition: acquisition.map(|s| s.parse()).transpose()?,
                n,
                m,
                dropout,
                cycles,
                gamma,
                pool_factor,
                seed,
            };
            cmd_simulate(config.as_deref(), &overrides, &out)
        }
        Command::Report { metrics, out } => cmd_report(&metrics, &out),
    }
}

/// Largest minus second-largest entry.
fn prob_margin(means: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in means {
        if p > best {
            second = best;
            best = p;
        } else if p > second {
            second = p;
        }
    }
    best - second
}

pub fn cmd_score(
    cube_path: &Path,
    kind: AcquisitionKind,
    gamma: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let params = ScoreParams { gamma, ..ScoreParams::default() };
    params.validate()?;
    let cube = read_cube(cube_path)?;
    let clamps = Default::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (h, w, c) = (cube.height(), cube.width(), cube.num_classes());
    let mut scores = Vec::with_capacity(h * w);
    let mut table =
        String::from("row,col,shannon,epistemic,aleatoric,posterior,mjent,balent,score\n");
    for row in 0..h {
        for col in 0..w {
            let samples = cube.pixel_samples(row, col);
            let rec = record_for_pixel(&samples, c, &clamps)?;
            // The margin acquisition ranks by smallest gap between the top
            // two mean probabilities, so its exported score is the negated
            // gap; every other kind scores through the shared path.
            let score = if kind == AcquisitionKind::Margin {
                let means = renormalized_means(&fit_pixel(&samples, c, &clamps)?);
                -prob_margin(&means)
            } else {
                score_pixel(kind, &params, &rec, &mut rng)?
            };
            writeln!(
                table,
                "{row},{col},{},{},{},{},{},{},{}",
                fmt_score(rec.shannon),
                fmt_score(rec.epistemic),
                fmt_score(rec.aleatoric),
                fmt_score(rec.posterior_u),
                fmt_score(rec.mjent),
                fmt_score(rec.balent),
                fmt_score(score),
            )
            .unwrap();
            scores.push(score);
        }
    }
    let map = ScoreMap::new(h, w, Some(kind), scores)?;
    write_scores(&map, out)?;
    let records_path = out.with_extension("records.csv");
    fs::write(&records_path, table).map_err(|e| Error::io(&records_path, e))?;
    Ok(())
}

pub fn cmd_select(
    scores_path: &Path,
    labels_path: &Path,
    classes: u32,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let map = read_scores(scores_path)?;
    let labels = read_labels(labels_path, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image_id = scores_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .replace([',', '\n'], "_");
    let picked = select_top_n(&map, &labels, n, &mut rng, &image_id, 0)?;
    if picked.len() < n {
        eprintln!("warning: only {} unlabeled pixels remain, selected all of them", picked.len());
    }
    write_selections(&picked, out)
}

#[derive(Debug, Default)]
pub struct SimOverrides {
    pub acquisition: Option<AcquisitionKind>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub dropout: Option<f64>,
    pub cycles: Option<usize>,
    pub gamma: Option<f64>,
    pub pool_factor: Option<usize>,
    pub seed: Option<u64>,
}

impl SimOverrides {
    fn apply(&self, cfg: &mut ALConfig) {
        if let Some(v) = self.acquisition {
            cfg.acquisition = v;
        }
        if let Some(v) = self.n {
            cfg.pixels_per_image = v;
        }
        if let Some(v) = self.m {
            cfg.mc_samples = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout_rate = v;
        }
        if let Some(v) = self.cycles {
            cfg.cycles = v;
        }
        if let Some(v) = self.gamma {
            cfg.score.gamma = v;
        }
        if let Some(v) = self.pool_factor {
            cfg.pool_factor = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

pub fn cmd_simulate(config: Option<&Path>, overrides: &SimOverrides, out_dir: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text)?
        }
        None => ALConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join("manifest.cfg");
    fs::write(&manifest_path, render_config(&cfg)).map_err(|e| Error::io(&manifest_path, e))?;

    eprintln!(
        "simulating {} for {} cycles (seed {})",
        cfg.acquisition, cfg.cycles, cfg.seed
    );
    let result = run_al(&cfg)?;
    for row in &result.metrics {
        eprintln!("cycle {}: miou {:.4}", row.cycle, row.miou);
    }
    if result.truncated {
        eprintln!("warning: pool exhausted before the cycle budget was spent");
    }

    let metrics_path = out_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_to_csv(&result.metrics)?)
        .map_err(|e| Error::io(&metrics_path, e))?;
    write_selections(&result.selections, out_dir.join("selections.csv"))
}

struct ReportRun {
    acquisition: AcquisitionKind,
    seed: u64,
    miou: Vec<f64>,
}

pub fn cmd_report(metric_paths: &[PathBuf], out: &Path) -> Result<()> {
    if metric_paths.is_empty() {
        return Err(Error::Validation("report needs at least one metrics file".into()));
    }
    let mut runs = Vec::new();
    let mut shape: Option<(Vec<usize>, usize, PathBuf)> = None;
    for path in metric_paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = metrics_from_csv(&text, path)?;
        if rows.is_empty() {
            return Err(Error::format(path, "metrics file has no rows"));
        }
        let cycles: Vec<usize> = rows.iter().map(|r| r.cycle).collect();
        let classes = rows[0].per_class_iou.len();
        match &shape {
            None => shape = Some((cycles, classes, path.clone())),
            Some((c0, k0, first)) => {
                if *c0 != cycles {
                    return Err(Error::Validation(format!(
                        "{} covers cycles {cycles:?} where {} covers {c0:?}",
                        path.display(),
                        first.display()
                    )));
                }
                if *k0 != classes {
                    return Err(Error::Validation(format!(
                        "{} reports {classes} classes where {} reports {k0}",
                        path.display(),
                        first.display()
                    )));
                }
            }
        }
        let manifest_path = path.parent().unwrap_or(Path::new(".")).join("manifest.cfg");
        let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let cfg = parse_config(&manifest)?;
        runs.push(ReportRun {
            acquisition: cfg.acquisition,
            seed: cfg.seed,
            miou: rows.iter().map(|r| r.miou).collect(),
        });
    }
    let (cycles, _, _) = shape.expect("at least one metrics file was parsed");

    let mut by_kind: BTreeMap<&'static str, Vec<&ReportRun>> = BTreeMap::new();
    for run in &runs {
        by_kind.entry(run.acquisition.as_str()).or_default().push(run);
    }

    let mut table = String::from("acquisition,cycle,runs,miou_mean,miou_std,summary\n");
    for (name, group) in &by_kind {
        for (i, cycle) in cycles.iter().enumerate() {
            let values: Vec<f64> = group.iter().map(|r| r.miou[i]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let std = sample_std(&values);
            let summary = match std {
                Some(s) => format!("{mean:.4} ± {s:.4}"),
                None => format!("{mean:.4}"),
            };
            writeln!(
                table,
                "{name},{cycle},{},{mean:.4},{},{summary}",
                group.len(),
                std.map(|s| format!("{s:.4}")).unwrap_or_default(),
            )
            .unwrap();
        }
    }
    fs::write(out, table).map_err(|e| Error::io(out, e))?;

    let mut long = String::from("acquisition,seed,cycle,miou\n");
    for (name, group) in &by_kind {
        let mut ordered: Vec<&&ReportRun> = group.iter().collect();
        ordered.sort_by_key(|r| r.seed);
        for run in ordered {
            for (i, cycle) in cycles.iter().enumerate() {
                writeln!(long, "{name},{},{cycle},{}", run.seed, fmt_score(run.miou[i])).unwrap();
            }
        }
    }
    let long_path = out.with_extension("long.csv");
    fs::write(&long_path, long).map_err(|e| Error::io(&long_path, e))
}

/// Sample standard deviation; absent for fewer than two values.
fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    Some(var.sqrt())
}

/// Parses a `key = value` config into a run configuration, starting from the
/// defaults. Unknown keys and unparseable values are errors naming the line.
pub fn parse_config(text: &str) -> Result<ALConfig> {
    let mut cfg = ALConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got {stripped:?}") })?;
        apply_key(&mut cfg, key.trim(), value.trim(), line)?;
    }
    Ok(cfg)
}

fn apply_key(cfg: &mut ALConfig, key: &str, value: &str, line: usize) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
        value.parse().map_err(|_| Error::Config {
            line,
            msg: format!("invalid value {value:?} for key `{key}`"),
        })
    }
    match key {
        "acquisition" => cfg.acquisition = parse(key, value, line)?,
        "n" => cfg.pixels_per_image = parse(key, value, line)?,
        "m" => cfg.mc_samples = parse(key, value, line)?,
        "dropout" => cfg.dropout_rate = parse(key, value, line)?,
        "cycles" => cfg.cycles = parse(key, value, line)?,
        "gamma" => cfg.score.gamma = parse(key, value, line)?,
        "pool_factor" => cfg.pool_factor = parse(key, value, line)?,
        "seed" => cfg.seed = parse(key, value, line)?,
        "epochs" => cfg.epochs = parse(key, value, line)?,
        "learning_rate" => cfg.learning_rate = parse(key, value, line)?,
        "hidden_dim" => cfg.hidden_dim = parse(key, value, line)?,
        "val_fraction" => cfg.val_fraction = parse(key, value, line)?,
        "warm_start" => cfg.warm_start = parse(key, value, line)?,
        "num_images" => cfg.dataset.num_images = parse(key, value, line)?,
        "height" => cfg.dataset.height = parse(key, value, line)?,
        "width" => cfg.dataset.width = parse(key, value, line)?,
        "num_classes" => cfg.dataset.num_classes = parse(key, value, line)?,
        "feature_dim" => cfg.dataset.feature_dim = parse(key, value, line)?,
        "blob_scale" => cfg.dataset.blob_scale = parse(key, value, line)?,
        "noise_sigma" => cfg.dataset.noise_sigma = parse(key, value, line)?,
        "eps_mean" => cfg.clamps.eps_mean = parse(key, value, line)?,
        "eps_var" => cfg.clamps.eps_var = parse(key, value, line)?,
        "eps_var_rel" => cfg.clamps.eps_var_rel = parse(key, value, line)?,
        "eps_zero" => cfg.score.eps_zero = parse(key, value, line)?,
        "eps_log" => cfg.score.eps_log = parse(key, value, line)?,
        other => {
            return Err(Error::Config { line, msg: format!("unknown key `{other}`") });
        }
    }
    Ok(())
}

/// Renders a configuration in the same `key = value` format [`parse_config`]
/// reads; parsing the result reproduces the configuration exactly.
pub fn render_config(cfg: &ALConfig) -> String {
    let mut out = String::new();
    let mut kv = |key: &str, value: String| writeln!(out, "{key} = {value}").unwrap();
    kv("acquisition", cfg.acquisition.to_string());
    kv("n", cfg.pixels_per_image.to_string());
    kv("m", cfg.mc_samples.to_string());
    kv("dropout", cfg.dropout_rate.to_string());
    kv("cycles", cfg.cycles.to_string());
    kv("gamma", cfg.score.gamma.to_string());
    kv("pool_factor", cfg.pool_factor.to_string());
    kv("seed", cfg.seed.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("learning_rate", cfg.learning_rate.to_string());
    kv("hidden_dim", cfg.hidden_dim.to_string());
    kv("val_fraction", cfg.val_fraction.to_string());
    kv("warm_start", cfg.warm_start.to_string());
    kv("num_images", cfg.dataset.num_images.to_string());
    kv("height", cfg.dataset.height.to_string());
    kv("width", cfg.dataset.width.to_string());
    kv("num_classes", cfg.dataset.num_classes.to_string());
    kv("feature_dim", cfg.dataset.feature_dim.to_string());
    kv("blob_scale", cfg.dataset.blob_scale.to_string());
    kv("noise_sigma", cfg.dataset.noise_sigma.to_string());
    kv("eps_mean", cfg.clamps.eps_mean.to_string());
    kv("eps_var", cfg.clamps.eps_var.to_string());
    kv("eps_var_rel", cfg.clamps.eps_var_rel.to_string());
    kv("eps_zero", cfg.score.eps_zero.to_string());
    kv("eps_log", cfg.score.eps_log.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ALConfig::default();
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn parser_skips_comments_and_blank_lines() {
        let cfg = parse_config("# a comment\n\n  seed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn later_assignments_win() {
        let cfg = parse_config("seed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.seed, 2);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = parse_config("seed = 1\nbogus = 3\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_value_names_key_and_line() {
        let err = parse_config("dropout = many\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("dropout"), "{msg}");
                assert!(msg.contains("many"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn line_without_equals_is_rejected() {
        let err = parse_config("just words\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }

    #[test]
    fn margin_is_gap_between_top_two() {
        assert_eq!(prob_margin(&[0.5, 0.3, 0.2]), 0.5 - 0.3);
        assert_eq!(prob_margin(&[0.25, 0.25, 0.5]), 0.25);
    }

    #[test]
    fn sample_std_matches_hand_computation() {
        assert_eq!(sample_std(&[1.0]), None);
        assert!((sample_std(&[1.0, 3.0]).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn any_config_round_trips(
            kind_index in 0usize..6,
            n in 1usize..20,
            m in 2usize..50,
            dropout in 0.0f64..0.9,
            gamma in 0.1f64..8.0,
            seed in any::<u64>(),
            epochs in 1usize..400,
            warm_start in any::<bool>(),
            noise in 0.0f64..2.0,
        ) {
            let mut cfg = ALConfig::default();
            cfg.acquisition = AcquisitionKind::ALL[kind_index];
            cfg.pixels_per_image = n;
            cfg.mc_samples = m;
            cfg.dropout_rate = dropout;
            cfg.score.gamma = gamma;
            cfg.seed = seed;
            cfg.epochs = epochs;
            cfg.warm_start = warm_start;
            cfg.dataset.noise_sigma = noise;
            prop_assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
        }
    }
}
