use std::path::Path;
use std::process::{Command, Output};

use qdiff::baselines::exact_mld;
use qdiff::codes::{code_capacity_model, preset};
use qdiff::experiment::{read_results_csv, LerResult};
use qdiff::nn::{Checkpoint, ContinuousConfig, ContinuousNet, Network};
use qdiff::noise::DetectorErrorModel;
use rand::SeedableRng;

fn qdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qdiff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn rows(csv: &str) -> Vec<LerResult> {
    read_results_csv(csv.as_bytes()).unwrap()
}

const TRAIN_TOML: &str = r#"
seed = 11
p_train = 0.1
batch = 16
validation_interval = 20
validation_samples = 200
log_interval = 10

[model]
code = "toy422"

[network]
kind = "masked"
n_dl = 2
n_h = 2
d_m = 8
d_f = 16
steps = 4

[[stages]]
r1 = 0
r2 = 0
iterations = 40
lr = { kind = "cosine", lo = 1e-4, hi = 3e-3, horizon = 40 }
"#;

fn train_tiny(dir: &Path) -> String {
    let cfg = dir.join("train.toml");
    std::fs::write(&cfg, TRAIN_TOML).unwrap();
    let out = dir.join("run");
    ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    out.join("final.ckpt").to_str().unwrap().to_string()
}

#[test]
fn golden_mld_results() {
    let csv = ok(&[
        "eval",
        "--code",
        "toy422",
        "--p",
        "0.05,0.1",
        "--decoder",
        "mld",
        "--samples",
        "4000",
        "--seed",
        "3",
        "--latency-samples",
        "5",
    ]);
    let golden = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/eval_mld_toy422.csv"),
    )
    .unwrap();
    let strip = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| l.split(',').take(9).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(strip(&csv), strip(&golden));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.toml");
    let csv_path = dir.path().join("out.csv");
    let json_path = dir.path().join("out.json");
    std::fs::write(
        &cfg,
        "decoder = \"bp-osd\"\np = [0.05]\nsamples = 500\nseed = 2\nlatency_samples = 3\n[model]\ncode = \"steane\"\n",
    )
    .unwrap();
    ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--samples",
        "300",
        "--p",
        "0.02,0.04",
        "--output",
        csv_path.to_str().unwrap(),
        "--json",
        json_path.to_str().unwrap(),
    ]);
    let r = rows(&std::fs::read_to_string(&csv_path).unwrap());
    assert_eq!(r.len(), 2);
    assert!(r.iter().all(|x| x.samples == 300 && x.decoder == "bp-osd"));
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
    assert_eq!(doc["config"]["seed"], 2);
    assert_eq!(doc["results"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let cases: [&[&str]; 5] = [
        &[
            "eval",
            "--code",
            "toy422",
            "--p",
            "0.1",
            "--decoder",
            "mld",
            "--samples",
            "0",
        ],
        &["eval", "--code", "toy422", "--decoder", "mld"],
        &[
            "eval",
            "--code",
            "toy422",
            "--p",
            "0.1",
            "--decoder",
            "masked-df",
        ],
        &["eval", "--code", "nope", "--p", "0.1", "--decoder", "mld"],
        &[
            "gen-dem", "--code", "toy422", "--p", "0.01", "--rounds", "0",
        ],
    ];
    for args in cases {
        assert_eq!(qdiff(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let model = code_capacity_model(&preset("toy422").unwrap(), 0.1).unwrap();
    let config = ContinuousConfig {
        n_l: model.n_l(),
        n_s: model.n_s(),
        d_t: 8,
        d_f: 8,
        steps: 40,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net = ContinuousNet::new(config, &mut rng).unwrap();
    for (_, t) in net.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = f32::NAN);
    }
    let path = dir.path().join("nan.ckpt");
    Checkpoint::from_network(&Network::Continuous(net), 0, vec![])
        .save(&path)
        .unwrap();
    let out = qdiff(&[
        "eval",
        "--code",
        "toy422",
        "--p",
        "0.1",
        "--decoder",
        "continuous-df",
        "--checkpoint",
        path.to_str().unwrap(),
        "--samples",
        "10",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_dem_is_deterministic_and_phenomenological() {
    let a = ok(&[
        "gen-dem", "--code", "steane", "--p", "0.01", "--rounds", "2",
    ]);
    let b = ok(&[
        "gen-dem", "--code", "steane", "--p", "0.01", "--rounds", "2",
    ]);
    assert_eq!(a, b);
    let dem = DetectorErrorModel::parse(&a).unwrap();
    let n_c = 6;
    for e in &dem.events {
        // each check lights in at most two consecutive rounds
        for c in 0..n_c {
            let rounds: Vec<usize> = e
                .detectors
                .iter()
                .filter(|d| *d % n_c == c)
                .map(|d| d / n_c)
                .collect();
            assert!(rounds.len() <= 2);
            if rounds.len() == 2 {
                assert_eq!(rounds[1], rounds[0] + 1);
            }
        }
    }
    let flips = dem.events.iter().filter(|e| e.p == 0.01).count();
    assert_eq!(flips, 2 * n_c);
    dem.to_code_model().unwrap();
}

#[test]
fn zero_decoder_matches_nonzero_logical_probability() {
    let p = 0.01;
    let model = code_capacity_model(&preset("toy422").unwrap(), p).unwrap();
    let exact = exact_mld(&model).unwrap().nonzero_logical_probability();
    let r = rows(&ok(&[
        "eval",
        "--code",
        "toy422",
        "--p",
        "0.01",
        "--decoder",
        "zero",
        "--samples",
        "100000",
        "--seed",
        "4",
    ]))
    .remove(0);
    let sigma = (exact * (1.0 - exact) / r.samples as f64).sqrt();
    assert!((r.ler - exact).abs() < 3.0 * sigma, "{} vs {exact}", r.ler);
}

#[test]
fn disjoint_seeds_agree() {
    let run = |seed: &str| {
        rows(&ok(&[
            "eval",
            "--code",
            "toy422",
            "--p",
            "0.08",
            "--decoder",
            "mld",
            "--samples",
            "20000",
            "--seed",
            seed,
        ]))
        .remove(0)
    };
    let (a, b) = (run("1"), run("2"));
    assert_ne!(a.failures, b.failures);
    let joint = (a.sigma().powi(2) + b.sigma().powi(2)).sqrt();
    assert!((a.ler - b.ler).abs() < 3.0 * joint);
}

#[test]
fn train_eval_tsweep_and_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let run = dir.path().join("run");
    for f in [
        "initial.ckpt",
        "stage0.ckpt",
        "final.ckpt",
        "metrics.csv",
        "config.toml",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iteration,loss,lr,val_ler"));

    let common = [
        "--code",
        "toy422",
        "--p",
        "0.1",
        "--samples",
        "3000",
        "--seed",
        "9",
        "--checkpoint",
        &ckpt,
    ];
    let lr = rows(&ok(&[&["eval", "--decoder", "lr"], &common[..]].concat())).remove(0);
    let sweep = rows(&ok(&[
        &["tsweep", "--decoder", "masked-df", "--t-list", "1,2,4"],
        &common[..],
    ]
    .concat()));
    assert_eq!(sweep.len(), 3);
    assert_eq!(sweep[0].t_inf, Some(1));
    assert_eq!(sweep[0].failures, lr.failures);
    assert_eq!(lr.t_inf, Some(1));

    let bundle: serde_json::Value = serde_json::from_str(&ok(&[
        "export-attention",
        "--checkpoint",
        &ckpt,
        "--code",
        "toy422",
    ]))
    .unwrap();
    assert_eq!(bundle["decoder"].as_array().unwrap().len(), 2 * 2);
    let j = bundle["j"].as_array().unwrap();
    assert_eq!(j.len(), 4 + 2);
    assert!(j.iter().all(|row| row.as_array().unwrap().len() == 6));

    let mismatch = qdiff(&[
        "eval",
        "--code",
        "steane",
        "--p",
        "0.1",
        "--decoder",
        "masked-df",
        "--checkpoint",
        &ckpt,
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
}
