//! End-to-end checks of the command-line interface: every subcommand, the
//! documented exit codes, and byte-level determinism of the outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use balent::tensorio::{write_cube, PredictionCube};
use tempfile::tempdir;

fn balent_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balent"))
        .args(args)
        .output()
        .expect("the binary should launch")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code_of(out: &Output) -> i32 {
    out.status.code().expect("the binary should exit normally")
}

/// A 2x2 two-class cube whose pixels get increasingly confident about
/// class 1, with a little spread across the three samples.
fn demo_cube(dir: &Path) -> PathBuf {
    let (h, w, c, m) = (2usize, 2usize, 2usize, 3usize);
    let mut values = vec![0.0f32; h * w * c * m];
    for px in 0..h * w {
        let p0 = 0.2 + 0.15 * px as f32;
        for j in 0..m {
            let jitter = 0.01 * (j as f32 - 1.0);
            values[(px * c) * m + j] = p0 + jitter;
            values[(px * c + 1) * m + j] = 1.0 - p0 - jitter;
        }
    }
    let cube = PredictionCube::new(h, w, c, m, values).unwrap();
    let path = dir.join("demo.cube");
    write_cube(&cube, &path).unwrap();
    path
}

fn write_small_config(path: &Path) {
    fs::write(
        path,
        "num_images = 6\nheight = 8\nwidth = 8\nepochs = 20\nm = 4\nn = 2\ncycles = 2\n",
    )
    .unwrap();
}

#[test]
fn score_writes_scores_and_records_deterministically() {
    let dir = tempdir().unwrap();
    let cube = demo_cube(dir.path());
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let run = balent_bin(&[
            "score",
            cube.to_str().unwrap(),
            "--acquisition",
            "balent_acq",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
    }

    let scores = fs::read_to_string(&out_a).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next(), Some("row,col,score"));
    assert_eq!(lines.count(), 4, "one line per pixel");
    let records = fs::read_to_string(dir.path().join("a.records.csv")).unwrap();
    assert!(records
        .starts_with("row,col,shannon,epistemic,aleatoric,posterior,mjent,balent,score"));
    assert_eq!(records.lines().count(), 5);

    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.records.csv")).unwrap(),
        fs::read(dir.path().join("b.records.csv")).unwrap()
    );
}

#[test]
fn score_seed_controls_randomized_acquisitions() {
    let dir = tempdir().unwrap();
    let cube = demo_cube(dir.path());
    let score_with_seed = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let run = balent_bin(&[
            "score",
            cube.to_str().unwrap(),
            "--acquisition",
            "power_bald",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
        fs::read(out).unwrap()
    };
    let first = score_with_seed("s1.csv", "11");
    let again = score_with_seed("s2.csv", "11");
    let other = score_with_seed("s3.csv", "12");
    assert_eq!(first, again);
    assert_ne!(first, other);
}

#[test]
fn score_margin_exports_negated_probability_gap() {
    let dir = tempdir().unwrap();
    let cube = demo_cube(dir.path());
    let out = dir.path().join("margin.csv");
    let run = balent_bin(&[
        "score",
        cube.to_str().unwrap(),
        "--acquisition",
        "margin",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
    // Pixel (1, 0) sits at p0 = 0.5, a coin flip between the classes, so
    // its gap is the smallest and its exported score the largest.
    let scores = fs::read_to_string(&out).unwrap();
    let best = scores
        .lines()
        .skip(1)
        .max_by(|a, b| {
            let parse = |l: &str| l.rsplit(',').next().unwrap().parse::<f64>().unwrap();
            parse(a).total_cmp(&parse(b))
        })
        .unwrap()
        .to_string();
    assert!(best.starts_with("1,0,"), "expected pixel (1,0) to rank first, got {best}");
}

#[test]
fn score_missing_cube_exits_2_and_names_the_path() {
    let run = balent_bin(&[
        "score",
        "/no/such/cube.bin",
        "--acquisition",
        "bald",
        "--out",
        "/tmp/unused.csv",
    ]);
    assert_eq!(code_of(&run), 2);
    assert!(stderr_of(&run).contains("/no/such/cube.bin"));
}

#[test]
fn score_corrupt_cube_exits_2() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("broken.cube");
    fs::write(&path, b"not a cube at all").unwrap();
    let run = balent_bin(&[
        "score",
        path.to_str().unwrap(),
        "--acquisition",
        "entropy",
        "--out",
        dir.path().join("out.csv").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 2);
    assert!(stderr_of(&run).contains("broken.cube"));
}

#[test]
fn score_unknown_acquisition_exits_1() {
    let dir = tempdir().unwrap();
    let cube = demo_cube(dir.path());
    let run = balent_bin(&[
        "score",
        cube.to_str().unwrap(),
        "--acquisition",
        "gradients",
        "--out",
        dir.path().join("out.csv").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 1);
    assert!(stderr_of(&run).contains("gradients"));
}

fn write_demo_scores(path: &Path) {
    // [[3, 1], [2, 4]] with the maximum at (1, 1).
    fs::write(
        path,
        "row,col,score\n0,0,3.00000000e0\n0,1,1.00000000e0\n1,0,2.00000000e0\n1,1,4.00000000e0\n",
    )
    .unwrap();
}

#[test]
fn select_picks_the_best_unlabeled_pixel() {
    let dir = tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_demo_scores(&scores);
    let labels = dir.path().join("labels.csv");
    // (1, 1) already labeled, everything else open (2 = unlabeled marker).
    fs::write(&labels, "row,col,label\n0,0,2\n0,1,2\n1,0,2\n1,1,0\n").unwrap();
    let out = dir.path().join("picked.csv");
    let run = balent_bin(&[
        "select",
        scores.to_str().unwrap(),
        labels.to_str().unwrap(),
        "--classes",
        "2",
        "--n",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "image_id,row,col,cycle\nscores,0,0,0\n",
        "the labeled maximum must be skipped in favor of (0,0)"
    );
}

#[test]
fn select_exhaustion_selects_all_and_warns() {
    let dir = tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_demo_scores(&scores);
    let labels = dir.path().join("labels.csv");
    fs::write(&labels, "row,col,label\n0,0,1\n0,1,2\n1,0,2\n1,1,0\n").unwrap();
    let out = dir.path().join("picked.csv");
    let run = balent_bin(&[
        "select",
        scores.to_str().unwrap(),
        labels.to_str().unwrap(),
        "--classes",
        "2",
        "--n",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3, "header plus two pixels");
    assert!(stderr_of(&run).contains("warning"));
}

#[test]
fn select_dimension_mismatch_exits_1() {
    let dir = tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_demo_scores(&scores);
    let labels = dir.path().join("labels.csv");
    fs::write(&labels, "row,col,label\n0,0,2\n0,1,2\n").unwrap();
    let run = balent_bin(&[
        "select",
        scores.to_str().unwrap(),
        labels.to_str().unwrap(),
        "--classes",
        "2",
        "--n",
        "1",
        "--out",
        dir.path().join("picked.csv").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 1, "{}", stderr_of(&run));
}

#[test]
fn simulate_bundled_default_config_completes_with_ten_rows() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.cfg");
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let run = balent_bin(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11, "header plus one row per cycle");
    // 80 pool images times 5 pixels, one initial batch plus ten queries.
    let selections = fs::read_to_string(out.join("selections.csv")).unwrap();
    assert_eq!(selections.lines().count(), 1 + 80 * 5 * 11);
    assert!(out.join("manifest.cfg").exists());
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let run = balent_bin(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
        out
    };
    let a = run_once("a");
    let b = run_once("b");
    for file in ["metrics.csv", "selections.csv", "manifest.cfg"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs between reruns"
        );
    }
}

#[test]
fn simulate_acquisitions_share_cycle_zero_then_diverge() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let run_kind = |kind: &str| {
        let out = dir.path().join(kind);
        let run = balent_bin(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--acquisition",
            kind,
        ]);
        assert_eq!(code_of(&run), 0, "{}", stderr_of(&run));
        fs::read_to_string(out.join("selections.csv")).unwrap()
    };
    let balent_log = run_kind("balent_acq");
    let random_log = run_kind("random");
    assert_ne!(balent_log, random_log);
    // The initial batch precedes any scoring: one held-out image leaves
    // five pool images, so the first 5*2 entries agree.
    let head = |log: &str| log.lines().take(11).collect::<Vec<_>>().join("\n");
    assert_eq!(head(&balent_log), head(&random_log));
}

#[test]
fn simulate_unknown_key_exits_1_naming_key_and_line() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    fs::write(&config, "seed = 1\n\nbogus = 2\n").unwrap();
    let run = balent_bin(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 1);
    let err = stderr_of(&run);
    assert!(err.contains("bogus"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn simulate_zero_cycles_exits_1() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let run = balent_bin(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--cycles",
        "0",
    ]);
    assert_eq!(code_of(&run), 1);
    assert!(stderr_of(&run).contains("cycles"));
}

#[test]
fn simulate_divergent_training_exits_3() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("diverge.cfg");
    // Labeling every pixel guarantees a mixed-class batch, and the absurd
    // learning rate then blows the softmax into an exact zero.
    fs::write(
        &config,
        "num_images = 8\nheight = 16\nwidth = 16\nblob_scale = 4\ncycles = 1\n\
         epochs = 5\nlearning_rate = 1e16\nm = 2\nn = 256\nnoise_sigma = 0\nseed = 0\n",
    )
    .unwrap();
    let run = balent_bin(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&run), 3, "{}", stderr_of(&run));
    assert!(stderr_of(&run).contains("numeric"));
}

#[test]
fn report_single_run_emits_table_without_std() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let out = dir.path().join("run");
    let sim = balent_bin(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&sim), 0, "{}", stderr_of(&sim));

    let table = dir.path().join("table.csv");
    let report = balent_bin(&[
        "report",
        out.join("metrics.csv").to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&report), 0, "{}", stderr_of(&report));
    let text = fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("acquisition,cycle,runs,miou_mean,miou_std,summary"));
    for line in lines {
        assert!(line.starts_with("balent_acq,"), "{line}");
        assert!(line.contains(",1,"), "one run per row: {line}");
        let std_field = line.split(',').nth(4).unwrap();
        assert_eq!(std_field, "", "no std for a single run: {line}");
        assert!(!line.contains('±'), "{line}");
    }
    let long = fs::read_to_string(dir.path().join("table.long.csv")).unwrap();
    assert_eq!(long.lines().next(), Some("acquisition,seed,cycle,miou"));
    assert_eq!(long.lines().count(), 3, "header plus two cycles");
}

#[test]
fn report_groups_runs_and_aggregates_seeds() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let mut metric_paths = Vec::new();
    for (kind, seed) in [("balent_acq", "1"), ("random", "1"), ("random", "2")] {
        let out = dir.path().join(format!("{kind}_{seed}"));
        let sim = balent_bin(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--acquisition",
            kind,
            "--seed",
            seed,
        ]);
        assert_eq!(code_of(&sim), 0, "{}", stderr_of(&sim));
        metric_paths.push(out.join("metrics.csv"));
    }

    let table = dir.path().join("table.csv");
    let mut args = vec!["report"];
    let rendered: Vec<String> =
        metric_paths.iter().map(|p| p.to_str().unwrap().to_string()).collect();
    args.extend(rendered.iter().map(|s| s.as_str()));
    args.extend(["--out", table.to_str().unwrap()]);
    let report = balent_bin(&args);
    assert_eq!(code_of(&report), 0, "{}", stderr_of(&report));

    let text = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "two acquisitions, two cycles each");
    assert!(rows[0].starts_with("balent_acq,0,1,"));
    assert!(rows[2].starts_with("random,0,2,"));
    assert!(rows[2].contains('±'), "aggregated rows carry mean ± std: {}", rows[2]);
    let long = fs::read_to_string(dir.path().join("table.long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 3 * 2);
}

#[test]
fn report_inconsistent_cycle_counts_exits_1() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let mut metric_paths = Vec::new();
    for (name, cycles) in [("two", "2"), ("three", "3")] {
        let out = dir.path().join(name);
        let sim = balent_bin(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--cycles",
            cycles,
        ]);
        assert_eq!(code_of(&sim), 0, "{}", stderr_of(&sim));
        metric_paths.push(out.join("metrics.csv"));
    }
    let report = balent_bin(&[
        "report",
        metric_paths[0].to_str().unwrap(),
        metric_paths[1].to_str().unwrap(),
        "--out",
        dir.path().join("table.csv").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&report), 1, "{}", stderr_of(&report));
}

#[test]
fn report_missing_manifest_exits_2() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("small.cfg");
    write_small_config(&config);
    let out = dir.path().join("run");
    let sim = balent_bin(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&sim), 0, "{}", stderr_of(&sim));
    let orphan = dir.path().join("orphan.csv");
    fs::copy(out.join("metrics.csv"), &orphan).unwrap();
    let report = balent_bin(&[
        "report",
        orphan.to_str().unwrap(),
        "--out",
        dir.path().join("table.csv").to_str().unwrap(),
    ]);
    assert_eq!(code_of(&report), 2, "{}", stderr_of(&report));
    assert!(stderr_of(&report).contains("manifest.cfg"));
}

#[test]
fn help_exits_0_and_missing_subcommand_exits_1() {
    let help = balent_bin(&["--help"]);
    assert_eq!(code_of(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("simulate"));

    let bare = balent_bin(&[]);
    assert_eq!(code_of(&bare), 1);
}
