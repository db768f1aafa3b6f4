use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svf_core::attention::AttentionWeights;
use svf_core::svt1::{write_file, StoredTensor};
use svf_core::{AttentionSpec, RealTensor, Score, SpikeTensor, Variant};

const SMALL_TASK: &str = "\
[training]
frames = 4
height = 8
width = 8
bar_height = 2
train_size = 32
test_size = 32
epochs = 2
";

fn svf(args: &[&str]) -> Output {
    svf_env(args, &[])
}

fn svf_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_svf"));
    cmd.args(args).env_remove("SVF_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("svf-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Column `name` of a CSV with a header row.
fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .expect("column present");
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&svf(&["--help"])), 0);
    assert_eq!(code(&svf(&["--version"])), 0);
    assert_eq!(code(&svf(&["train-toy", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&svf(&[])), 1);
    assert_eq!(code(&svf(&["no-such-command"])), 1);
    assert_eq!(code(&svf(&["attn-bench", "--variant", "diagonal"])), 1);
    assert_eq!(code(&svf(&["jl-verify", "--pairs", "0"])), 1);
    assert_eq!(code(&svf(&["jl-verify", "--dims", "64,16"])), 1);
}

#[test]
fn jl_verify_writes_decreasing_curve() {
    let dir = scratch("jl");
    let out = dir.join("jl.csv");
    let o = svf(&[
        "jl-verify",
        "--dims",
        "16,64,256",
        "--pairs",
        "2000",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("D,num_pairs,mean_error,max_error\n"));
    let means: Vec<f64> = column(&csv, "mean_error")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(means.len(), 3);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn equiv_check_passes_and_self_test_fails() {
    let o = svf(&["equiv-check", "--trials", "30"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).lines().skip(1).all(|l| l.ends_with(",0,true")),
        "{}",
        stdout(&o)
    );

    let o = svf(&["equiv-check", "--trials", "30", "--self-test"]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("reproducer: seed=7 trial=0"),
        "{}",
        stderr(&o)
    );

    assert_eq!(
        code(&svf(&["equiv-check", "--max-dims", "1", "--trials", "30"])),
        0
    );
    assert_eq!(code(&svf(&["equiv-check", "--trials", "0"])), 1);
}

#[test]
fn attn_bench_reports_closed_form_parameters() {
    for (variant, factor) in [("joint", 4), ("hierarchical", 8), ("factorized", 7)] {
        let o = svf(&[
            "attn-bench",
            "--variant",
            variant,
            "--T-list",
            "2,4",
            "--N",
            "4",
            "--D",
            "16",
            "--M",
            "2",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for p in column(&stdout(&o), "params") {
            assert_eq!(p.parse::<usize>().unwrap(), factor * 16 * 16, "{variant}");
        }
    }
    // The lowercase alias works too.
    assert_eq!(
        code(&svf(&[
            "attn-bench",
            "--t-list",
            "2,4",
            "--N",
            "4",
            "--D",
            "16"
        ])),
        0
    );
    assert_eq!(code(&svf(&["attn-bench", "--D", "30", "--M", "4"])), 1);
}

#[test]
fn energy_report_on_silent_spikes_costs_nothing() {
    let dir = scratch("energy-zero");
    let input = dir.join("zeros.svt1");
    write_file(
        &input,
        &StoredTensor::Spike(SpikeTensor::zeros(vec![1, 4, 8, 16]).unwrap()),
    )
    .unwrap();
    let o = svf(&["energy-report", "--input", input.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    let scopes = column(&csv, "scope");
    let e_snn = column(&csv, "e_snn_pj");
    assert_eq!(scopes.last().unwrap(), "total");
    assert_eq!(e_snn.last().unwrap().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn energy_report_ratio_matches_rate() {
    let dir = scratch("energy-ratio");
    let input = dir.join("spikes.svt1");
    let x = SpikeTensor::from_fn(vec![1, 4, 8, 16], |i| i % 3 == 0).unwrap();
    write_file(&input, &StoredTensor::Spike(x)).unwrap();
    let o = svf(&[
        "energy-report",
        "--input",
        input.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    for (rho, (ann, snn)) in column(&csv, "rho").iter().zip(
        column(&csv, "e_ann_pj")
            .iter()
            .zip(column(&csv, "e_snn_pj")),
    ) {
        let (rho, ann, snn): (f64, f64, f64) = (
            rho.parse().unwrap(),
            ann.parse().unwrap(),
            snn.parse().unwrap(),
        );
        if ann > 0.0 {
            assert!((snn / ann - rho * 0.9 / 4.6).abs() <= 1e-12);
        }
    }
}

#[test]
fn energy_report_reads_weight_manifest() {
    let dir = scratch("energy-weights");
    let input = dir.join("spikes.svt1");
    let x = SpikeTensor::from_fn(vec![1, 2, 4, 8], |i| i % 5 < 2).unwrap();
    write_file(&input, &StoredTensor::Spike(x)).unwrap();
    // Default attention template with the input's dimensions.
    let spec = AttentionSpec::new(Variant::Joint, Score::Hamming, 2, 4, 8, 1).unwrap();
    let manifest = AttentionWeights::random(&spec, 9)
        .unwrap()
        .to_store("attention")
        .unwrap()
        .save(&dir)
        .unwrap();
    let input = input.to_str().unwrap();
    let from_manifest = svf(&[
        "energy-report",
        "--input",
        input,
        "--weights",
        manifest.to_str().unwrap(),
    ]);
    let from_seed = svf(&["energy-report", "--input", input, "--seed", "9"]);
    assert_eq!(code(&from_manifest), 0, "{}", stderr(&from_manifest));
    assert_eq!(stdout(&from_manifest), stdout(&from_seed));

    let wrong = AttentionSpec::new(Variant::Hierarchical, Score::Hamming, 2, 4, 8, 1).unwrap();
    let other = scratch("energy-weights-wrong");
    let manifest = AttentionWeights::random(&wrong, 9)
        .unwrap()
        .to_store("attention")
        .unwrap()
        .save(&other)
        .unwrap();
    let cfg = write(&other, "h.ini", "[attention]\nvariant = factorized\n");
    let o = svf(&[
        "--config",
        &cfg,
        "energy-report",
        "--input",
        input,
        "--weights",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn energy_report_runs_backbone_on_frames() {
    let dir = scratch("energy-frames");
    let input = dir.join("frames.svt1");
    let x = RealTensor::from_fn(vec![2, 32, 32, 3], |i| ((i * 7919) % 13) as f64 / 13.0).unwrap();
    write_file(&input, &StoredTensor::Real(x)).unwrap();
    let cfg = write(&dir, "b.ini", "[backbone]\ndepths = 1,1,1,1,1\n");
    let o = svf(&[
        "--config",
        &cfg,
        "energy-report",
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scopes = column(&stdout(&o), "scope");
    assert!(scopes.iter().any(|s| s.starts_with("stage0.")));
    assert!(scopes.iter().any(|s| s.starts_with("stage4.")));
}

#[test]
fn energy_report_rejects_missing_input() {
    assert_eq!(
        code(&svf(&["energy-report", "--input", "/nonexistent/x.svt1"])),
        1
    );
    let dir = scratch("energy-garbage");
    let p = write(&dir, "bad.svt1", "not a tensor");
    assert_eq!(code(&svf(&["energy-report", "--input", &p])), 1);
}

#[test]
fn train_toy_exit_codes() {
    let dir = scratch("train");
    let cfg = write(&dir, "small.ini", SMALL_TASK);
    let o = svf(&["--config", &cfg, "train-toy", "--epochs", "0"]);
    assert_eq!(code(&o), 2);
    assert_eq!(stdout(&o), "epoch,train_loss,test_acc\n0,0.693147,0.5000\n");

    let diverging = write(&dir, "lr.ini", &format!("{SMALL_TASK}lr = 1e12\n"));
    assert_eq!(
        code(&svf(&[
            "--config",
            &diverging,
            "train-toy",
            "--epochs",
            "3"
        ])),
        3
    );

    let bad = write(&dir, "bad.ini", "[training]\nlearning_rate = 0.1\n");
    assert_eq!(code(&svf(&["--config", &bad, "train-toy"])), 1);
}

#[test]
fn seeded_commands_are_byte_identical() {
    let dir = scratch("determinism");
    let cfg = write(&dir, "small.ini", SMALL_TASK);
    let input = dir.join("spikes.svt1");
    write_file(
        &input,
        &StoredTensor::Spike(SpikeTensor::from_fn(vec![1, 2, 4, 8], |i| i % 3 == 1).unwrap()),
    )
    .unwrap();
    let runs: [&[&str]; 5] = [
        &[
            "jl-verify",
            "--dims",
            "16,64",
            "--pairs",
            "500",
            "--seed",
            "11",
        ],
        &["equiv-check", "--trials", "20", "--seed", "11"],
        &[
            "attn-bench",
            "--T-list",
            "2,4",
            "--N",
            "4",
            "--D",
            "8",
            "--seed",
            "11",
        ],
        &[
            "energy-report",
            "--input",
            input.to_str().unwrap(),
            "--seed",
            "11",
        ],
        &["--config", &cfg, "train-toy", "--seed", "11"],
    ];
    for args in runs {
        let (a, b) = (svf(args), svf(args));
        assert!(!a.stdout.is_empty(), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let args = ["equiv-check", "--trials", "20"];
    assert_eq!(code(&svf_env(&args, &[("SVF_THREADS", "0")])), 1);
    assert_eq!(code(&svf_env(&args, &[("SVF_THREADS", "many")])), 1);
    let one = svf_env(&args, &[("SVF_THREADS", "1")]);
    let three = svf_env(&args, &[("SVF_THREADS", "3")]);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, three.stdout);
}

#[test]
fn print_config_round_trips() {
    let dir = scratch("config");
    let first = svf(&["print-config"]);
    assert_eq!(code(&first), 0);
    let path = write(&dir, "all.ini", &stdout(&first));
    let again = svf(&["--config", &path, "print-config"]);
    assert_eq!(first.stdout, again.stdout);
}
