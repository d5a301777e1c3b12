use std::fs;
use std::path::Path;
use std::process::ExitCode;

use mim::cli::main_with_args;

fn run(args: &[&str]) -> ExitCode {
    main_with_args(std::iter::once("mim").chain(args.iter().copied()))
}

fn ok(args: &[&str]) {
    assert_eq!(run(args), ExitCode::SUCCESS, "mim {}", args.join(" "));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--regions", "16", "--subjects", "200", "--seed", "7", "--out", s(&a)]);
    ok(&["gen-data", "--regions", "16", "--subjects", "200", "--seed", "7", "--out", s(&b)]);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 200);
    assert_eq!(fs::read_dir(a.join("subjects")).unwrap().count(), 200);
    for f in ["manifest.csv", "config.resolved.toml", "subjects/sub000.csv", "subjects/sub199.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unstable_rho_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(run(&["gen-data", "--rho", "1.2", "--out", s(dir.path())]), ExitCode::SUCCESS);
}

#[test]
fn unknown_flags_and_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(run(&["gen-data", "--bogus", "3", "--out", s(dir.path())]), ExitCode::SUCCESS);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\nregionz = 4\n").unwrap();
    let err = mim::cli::RunConfig::load(&cfg).unwrap_err().to_string();
    assert!(err.contains("regionz"), "{err}");
    assert_ne!(run(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]), ExitCode::SUCCESS);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--regions", "6", "--subjects", "4", "--timepoints", "20", "--block-size", "2", "--seed", "3", "--out", s(&a)]);
    let resolved = a.join("config.resolved.toml");
    ok(&["gen-data", "--config", s(&resolved), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("subjects/sub003.csv")).unwrap(), fs::read(b.join("subjects/sub003.csv")).unwrap());
}

const TINY_MODEL: &str = r#"
[model]
y_head_hidden = [10]
encoder_head_hidden = [9]
graph_head_hidden = [7]
xavier_gain = 2.0

[model.encoder]
input_length = 24
kernel_sizes = [4, 3, 1]
strides = [2, 1, 1]
channels = [4, 6, 3]
region_embed_dim = 8

[model.gnn]
layers = 3
hidden_dim = 6
topk_ratios = [0.8, 0.5]
attention_pool_dim = 5

[train]
learning_rate = 1e-3
max_epochs = 3
patience = 2

[train.folds]
folds = 2
val_size = 6
test_size = 6

[experiment]
trials = 1
curve_sizes = [4, 6]
"#;

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    fs::write(&cfg, TINY_MODEL).unwrap();
    let common = ["--regions", "8", "--timepoints", "24", "--block-size", "2"];
    let mut gen = vec!["gen-data", "--subjects", "30", "--unlabeled", "--seed", "1", "--out"];
    let unl = d.join("unl");
    gen.push(s(&unl));
    gen.extend(common);
    ok(&gen);
    let lab = d.join("lab");
    let mut gen = vec!["gen-data", "--subjects", "40", "--seed", "2", "--out", s(&lab)];
    gen.extend(common);
    ok(&gen);

    let pre = d.join("pre");
    let unl_m = unl.join("manifest.csv");
    let pre_args = ["pretrain", "--config", s(&cfg), "--data", s(&unl_m), "--batch-size", "8", "--out", s(&pre)];
    ok(&pre_args);
    let curve = fs::read_to_string(pre.join("loss_curve.csv")).unwrap();
    let epochs = curve.lines().count() - 1;
    assert!((1..=3).contains(&epochs));
    let ckpt = pre.join("checkpoint.mim");
    let pre2 = d.join("pre2");
    let mut again = pre_args.to_vec();
    *again.last_mut().unwrap() = s(&pre2);
    ok(&again);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(pre2.join("checkpoint.mim")).unwrap());

    let lab_m = lab.join("manifest.csv");
    let ft = d.join("ft");
    ok(&["finetune", "--config", s(&cfg), "--data", s(&lab_m), "--checkpoint", s(&ckpt), "--out", s(&ft)]);
    let jsonl = fs::read_to_string(ft.join("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    assert!(jsonl.contains("\"name\":\"pretrained\""));

    let missing = d.join("nope.mim");
    assert_ne!(
        run(&["finetune", "--config", s(&cfg), "--data", s(&lab_m), "--checkpoint", s(&missing), "--out", s(&d.join("x"))]),
        ExitCode::SUCCESS
    );

    let cv = d.join("curve");
    ok(&["curve", "--config", s(&cfg), "--data", s(&lab_m), "--checkpoint", s(&ckpt), "--out", s(&cv)]);
    let table = fs::read_to_string(cv.join("curve.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().contains(",p,"));
    assert_eq!(lines.count(), 4);
    for arm in ["curve_pretrained.csv", "curve_fresh.csv"] {
        let text = fs::read_to_string(cv.join(arm)).unwrap();
        assert!(text.starts_with("train_size,mean_auc,std_auc\n"));
        assert_eq!(text.lines().count(), 3);
    }

    let bl = d.join("bl");
    ok(&["baseline", "--config", s(&cfg), "--data", s(&lab_m), "--features", "fnc,raw", "--train-per-class", "6", "--out", s(&bl)]);
    let summary = fs::read_to_string(bl.join("summary.txt")).unwrap();
    assert!(summary.contains("lr-fnc@6") && summary.contains("lr-raw@6"));

    let merged = d.join("merged");
    ok(&["report", s(&bl), s(&ft), "--baseline", "lr-fnc@6", "--out", s(&merged)]);
    let text = fs::read_to_string(merged.join("summary.txt")).unwrap();
    assert_eq!(text.lines().count(), 4);
}
