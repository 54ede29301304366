//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Criteria 1 to 3 need the public UJIIndoorLoc files. Point
//! `HIERLOC_UJI_DIR` at a directory holding `trainingData.csv` and
//! `validationData.csv` to run them; otherwise they are skipped.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hierloc::dataset::synthetic::{synthetic_records, SyntheticConfig};
use hierloc::dataset::{load_ujiindoorloc, split_train_val, write_ujiindoorloc, DatasetLayout, FingerprintRecord};
use hierloc::eval::{evaluate, positioning_error_2d, positioning_error_3d, report_from_predictions, EvalReport, PenaltyConfig};
use hierloc::model::{early_stopping_should_stop, train_all, DecodedPrediction, HierLocModel, HyperParams};
use hierloc::nn::{Activation, CellKind};
use hierloc::SeededRng;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Pass,
        detail: detail.into(),
    }
}

fn verdict(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Skip,
        detail: detail.into(),
    }
}

fn uji_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("HIERLOC_UJI_DIR")?);
    let ok = dir.join("trainingData.csv").is_file() && dir.join("validationData.csv").is_file();
    ok.then_some(dir)
}

const NO_DATA: &str = "UJIIndoorLoc files not found; set HIERLOC_UJI_DIR";

struct Uji {
    train: Vec<FingerprintRecord>,
    test: Vec<FingerprintRecord>,
}

fn load_uji(dir: &Path) -> Uji {
    let layout = DatasetLayout::default();
    Uji {
        train: load_ujiindoorloc(dir.join("trainingData.csv"), &layout).expect("training file"),
        test: load_ujiindoorloc(dir.join("validationData.csv"), &layout).expect("validation file"),
    }
}

fn run_pipeline(params: HyperParams, train: &[FingerprintRecord], test: &[FingerprintRecord], layout: DatasetLayout) -> EvalReport {
    let split = split_train_val(train.to_vec(), 0.9, params.seed, layout).expect("split");
    let mut model = HierLocModel::new(params, split.meta).expect("model");
    train_all(&mut model, &split).expect("training");
    evaluate(&model, test, PenaltyConfig::default()).expect("evaluation")
}

fn describe(r: &EvalReport) -> String {
    format!(
        "building {:.2}%, floor {:.2}%, 3D {:.2} m (2D {:.2} m)",
        100.0 * r.building_hit_rate,
        100.0 * r.floor_hit_rate,
        r.mean_3d_error,
        r.mean_2d_error
    )
}

fn criterion_1(data: Option<&Uji>) -> Outcome {
    let Some(d) = data else { return skip(NO_DATA) };
    let start = Instant::now();
    let r = run_pipeline(HyperParams::default(), &d.train, &d.test, DatasetLayout::default());
    let ok = r.building_hit_rate >= 0.995 && r.floor_hit_rate >= 0.93 && r.mean_3d_error <= 10.5;
    verdict(ok, format!("{} in {:.0} s", describe(&r), start.elapsed().as_secs_f64()))
}

fn criterion_2(data: Option<&Uji>) -> Outcome {
    let Some(d) = data else { return skip(NO_DATA) };
    let params = HyperParams {
        rnn_kind: CellKind::Standard,
        ..HyperParams::default()
    };
    let r = run_pipeline(params, &d.train, &d.test, DatasetLayout::default());
    verdict(r.floor_hit_rate >= 0.92 && r.mean_3d_error <= 10.5, describe(&r))
}

fn criterion_3(data: Option<&Uji>) -> Outcome {
    let Some(d) = data else { return skip(NO_DATA) };
    let grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let mut bf_hits = Vec::new();
    let mut pos_errors = Vec::new();
    for &rate in &grid {
        let p = HyperParams {
            bf_dropout: rate,
            ..HyperParams::default()
        };
        bf_hits.push(run_pipeline(p, &d.train, &d.test, DatasetLayout::default()).building_floor_hit_rate);
        let p = HyperParams {
            position_dropout: rate,
            ..HyperParams::default()
        };
        pos_errors.push(run_pipeline(p, &d.train, &d.test, DatasetLayout::default()).mean_3d_error);
    }
    let best_hit = bf_hits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_err = pos_errors.iter().cloned().fold(f64::INFINITY, f64::min);
    let hit_ok = bf_hits[2] == best_hit || best_hit - bf_hits[2] <= 0.005;
    let err_ok = pos_errors[1] == best_err || pos_errors[1] - best_err <= 0.3;
    verdict(
        hit_ok && err_ok,
        format!(
            "bf_dropout 0.2 hit {:.2}% vs best {:.2}%; position_dropout 0.1 error {:.2} m vs best {:.2} m",
            100.0 * bf_hits[2],
            100.0 * best_hit,
            pos_errors[1],
            best_err
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let checks = [
        ("dense relu", common::grad_dense(Activation::Relu)),
        ("dense tanh", common::grad_dense(Activation::Tanh)),
        ("dense linear", common::grad_dense(Activation::Linear)),
        ("standard unroll", common::grad_unroll(CellKind::Standard, 21)),
        ("lstm unroll", common::grad_unroll(CellKind::Lstm, 23)),
        ("toy model (lstm)", common::grad_full_model(CellKind::Lstm)),
        ("toy model (standard)", common::grad_full_model(CellKind::Standard)),
    ];
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let ok = checks.iter().all(|(_, e)| *e <= 1e-4) && secs < 60.0;
    verdict(ok, format!("worst {} = {:.2e}, {:.2} s", worst.0, worst.1, secs))
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for kind in [CellKind::Lstm, CellKind::Standard] {
        let m = common::hand_weighted_model(kind);
        let x = common::random_inputs(16, 4, 99);
        let raw = m.predict_raw(&x).expect("predict");
        for (i, r) in raw.iter().enumerate() {
            let (b, f, px, py) = common::oracle_forward(&m.net, x.row(i));
            for d in [r.building_score - b, r.floor_score - f, r.xy_scaled.0 - px, r.xy_scaled.1 - py] {
                worst = worst.max(d.abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("max abs deviation {worst:.1e}"))
}

fn dp(b: usize, f: usize, x: f64, y: f64) -> DecodedPrediction {
    DecodedPrediction { building_id: b, floor: f, x, y }
}

fn criterion_6() -> Outcome {
    let pen = PenaltyConfig::default();
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let t = [dp(0, 1, 0.0, 0.0), dp(1, 2, 0.0, 0.0), dp(2, 3, 0.0, 0.0)];
    let rates = |d: &[DecodedPrediction]| hierloc::eval::hit_rates(d, &t).unwrap();
    expect("all correct", rates(&t) == (1.0, 1.0, 1.0));
    expect(
        "counting",
        rates(&[dp(0, 1, 0.0, 0.0), dp(1, 0, 0.0, 0.0), dp(0, 3, 0.0, 0.0)]) == (2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0),
    );
    expect(
        "joint <= marginal",
        rates(&[dp(0, 0, 0.0, 0.0), dp(1, 0, 0.0, 0.0), dp(2, 0, 0.0, 0.0)]) == (1.0, 0.0, 0.0),
    );
    expect("3-4-5", positioning_error_2d((0.0, 0.0), (3.0, 4.0)) == 5.0);
    expect("identity", positioning_error_2d((2.0, 7.0), (2.0, 7.0)) == 0.0);
    expect("symmetry", positioning_error_2d((1.0, 2.0), (-3.0, 5.5)) == positioning_error_2d((-3.0, 5.5), (1.0, 2.0)));
    expect("3d reduces to 2d", positioning_error_3d(&dp(1, 1, 0.0, 0.0), &dp(1, 1, 3.0, 4.0), &pen) == 5.0);
    // Formula oracle: 2D distance + 50·[building wrong] + 4·|floor difference|.
    expect("floor off by 2", positioning_error_3d(&dp(1, 3, 0.0, 0.0), &dp(1, 1, 3.0, 4.0), &pen) == 5.0 + 2.0 * 4.0);
    expect("building wrong", positioning_error_3d(&dp(0, 1, 0.0, 0.0), &dp(2, 1, 3.0, 4.0), &pen) == 5.0 + 50.0);

    let one = report_from_predictions(&t[..1], &t[..1], pen, &HyperParams::default()).unwrap();
    expect(
        "single perfect record",
        (one.building_hit_rate, one.floor_hit_rate, one.building_floor_hit_rate) == (1.0, 1.0, 1.0)
            && one.mean_2d_error == 0.0
            && one.mean_3d_error == 0.0,
    );

    let mut rng = SeededRng::new(2024);
    let mut monotone_cases = 0;
    for _ in 0..2000 {
        let n = 1 + rng.below(30);
        let rand_pred = |rng: &mut SeededRng| dp(rng.below(3), rng.below(5), rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0));
        let pred: Vec<_> = (0..n).map(|_| rand_pred(&mut rng)).collect();
        let truth: Vec<_> = (0..n).map(|_| rand_pred(&mut rng)).collect();
        let (bp, fp) = (rng.uniform(0.0, 100.0), rng.uniform(0.0, 10.0));
        let (dbp, dfp) = (rng.uniform(0.0, 50.0), rng.uniform(0.0, 5.0));
        let m = |b: f64, f: f64| {
            report_from_predictions(&pred, &truth, PenaltyConfig::new(b, f).unwrap(), &HyperParams::default())
                .unwrap()
                .mean_3d_error
        };
        let base = m(bp, fp);
        if m(bp + dbp, fp) >= base && m(bp, fp + dfp) >= base {
            monotone_cases += 1;
        }
    }
    expect("penalty monotonicity", monotone_cases == 2000);
    if failures.is_empty() {
        pass("10 examples exact, monotonicity held on 2000 random sets")
    } else {
        verdict(false, format!("failed: {}", failures.join(", ")))
    }
}

fn small_layout() -> DatasetLayout {
    DatasetLayout {
        ap_count: 16,
        building_count: 3,
        floor_count: 5,
    }
}

fn hierloc_cmd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hierloc"))
        .args(args)
        .output()
        .expect("run hierloc binary")
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let layout = small_layout();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    write_ujiindoorloc(&train, &synthetic_records(&SyntheticConfig::new(layout, 400, 1)), &layout).unwrap();
    write_ujiindoorloc(&test, &synthetic_records(&SyntheticConfig::new(layout, 100, 2)), &layout).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "train_file = {}\ntest_file = {}\nap_count = 16\nsae_layers = 32,16\nsae_epochs = 6\n\
             common_layers = 32\nrnn_hidden = 16\nbf_epochs = 6\nposition_layers = 32,2\nposition_epochs = 6\n",
            train.display(),
            test.display()
        ),
    )
    .unwrap();
    let files = ["model.hloc", "train_log.json", "report.json", "report.txt", "errors.csv"];
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
        for cmd in ["train", "evaluate"] {
            let res = hierloc_cmd(&[cmd, "--config", c, "--seed", "11", "--out", o]);
            if !res.status.success() {
                return verdict(false, format!("{cmd} failed: {}", String::from_utf8_lossy(&res.stderr)));
            }
        }
        outputs.push(files.map(|f| std::fs::read(out.join(f)).unwrap_or_default()));
    }
    let differing: Vec<&str> = files
        .iter()
        .zip(outputs[0].iter().zip(&outputs[1]))
        .filter(|(_, (a, b))| a.is_empty() || a != b)
        .map(|(f, _)| *f)
        .collect();
    if differing.is_empty() {
        pass("model, train log and reports byte-identical across two runs")
    } else {
        verdict(false, format!("differing: {}", differing.join(", ")))
    }
}

fn criterion_8() -> Outcome {
    let flat = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let examples_ok = (1..10).all(|n| !early_stopping_should_stop(&flat[..n], 5, 5))
        && early_stopping_should_stop(&flat, 5, 5)
        && !early_stopping_should_stop(&[5.0, 4.0, 3.0], 5, 5);
    let decreasing: Vec<f64> = (0..30).map(|i| 100.0 - i as f64 * 0.5).collect();
    let never_ok = (1..=30).all(|n| !early_stopping_should_stop(&decreasing[..n], 5, 5));
    let mut rng = SeededRng::new(8);
    let cases = 20_000;
    let mut mismatches = 0;
    for _ in 0..cases {
        let n = 1 + rng.below(25);
        // Few distinct levels make ties, which must not count as improvement.
        let losses: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
        if early_stopping_should_stop(&losses, 5, 5) != common::reference_should_stop(&losses, 5, 5) {
            mismatches += 1;
        }
    }
    verdict(
        examples_ok && never_ok && mismatches == 0,
        format!("examples {examples_ok}, never-stop {never_ok}, {mismatches}/{cases} random mismatches"),
    )
}

fn criterion_9() -> Outcome {
    let layout = DatasetLayout::default();
    // Noiseless: no distractor APs, and xy depends on the two coordinate APs only.
    let noiseless = |records, seed| SyntheticConfig {
        spacing: 0.0,
        distractor_probability: 0.0,
        ..SyntheticConfig::new(layout, records, seed)
    };
    let train = synthetic_records(&noiseless(2000, 101));
    let test = synthetic_records(&noiseless(500, 202));
    // The default 30-epoch budget stops the position head short of metre accuracy.
    let params = HyperParams {
        position_epochs: 300,
        patience: 30,
        ..HyperParams::default()
    };
    let start = Instant::now();
    let r = run_pipeline(params, &train, &test, layout);
    let ok = r.building_hit_rate == 1.0 && r.floor_hit_rate >= 0.99 && r.mean_2d_error <= 1.0;
    verdict(ok, format!("{} in {:.0} s", describe(&r), start.elapsed().as_secs_f64()))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("HIERLOC_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let data = if (1..=3).any(wanted) { uji_dir().map(|d| load_uji(&d)) } else { None };
    let criteria: [(&str, &dyn Fn() -> Outcome); 9] = [
        ("end-to-end reproduction, LSTM", &|| criterion_1(data.as_ref())),
        ("standard RNN variant", &|| criterion_2(data.as_ref())),
        ("dropout sweep ordering", &|| criterion_3(data.as_ref())),
        ("gradient verification", &criterion_4),
        ("forward-pass oracle", &criterion_5),
        ("metric suite", &criterion_6),
        ("determinism", &criterion_7),
        ("early stopping", &criterion_8),
        ("dataset-free fallback", &criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted(id) {
            continue;
        }
        let o = run();
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("[{tag}] criterion {id}: {name}: {}", o.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
