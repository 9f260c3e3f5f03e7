use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcpnn_core::model_io::encode_params;
use bcpnn_core::{build_network, NetworkConfig, PrecisionMode};

const CONFIG: &str = "\
n_input_hcu = 16
n_hidden_hcu = 3
hidden_mcu_per_hcu = 6
n_classes = 4
n_act = 6
n_sil = 4
epochs_unsup = 2
epochs_sup = 2
seed = 11
";

fn bcpnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcpnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 4x4 IDX dataset where class `k` lights up row `k`.
fn write_idx(dir: &Path, name: &str, n: usize) -> (PathBuf, PathBuf) {
    let mut img = vec![0, 0, 8, 3];
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&4u32.to_be_bytes());
    img.extend_from_slice(&4u32.to_be_bytes());
    let mut lab = vec![0, 0, 8, 1];
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let k = i % 4;
        for p in 0..16 {
            let on = p / 4 == k;
            img.push(if on { 200 + (i % 50) as u8 } else { ((i * 7 + p) % 40) as u8 });
        }
        lab.push(k as u8);
    }
    let (ip, lp) = (dir.join(format!("{name}-images")), dir.join(format!("{name}-labels")));
    fs::write(&ip, img).unwrap();
    fs::write(&lp, lab).unwrap();
    (ip, lp)
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
    images: PathBuf,
    labels: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("net.conf");
    fs::write(&config, CONFIG).unwrap();
    let (images, labels) = write_idx(dir.path(), "train", 80);
    Fixture {
        dir,
        config,
        images,
        labels,
    }
}

impl Fixture {
    fn train(&self, model: &Path, extra: &[&str]) -> Output {
        let mut args = vec![
            "train",
            "--config",
            s(&self.config),
            "--images",
            s(&self.images),
            "--labels",
            s(&self.labels),
            "--model",
            s(model),
        ];
        args.extend_from_slice(extra);
        bcpnn(&args)
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_dataset_is_an_input_error() {
    let f = fixture();
    let o = bcpnn(&[
        "train",
        "--config",
        s(&f.config),
        "--images",
        "/nonexistent/images",
        "--labels",
        s(&f.labels),
        "--model",
        s(&f.dir.path().join("m")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("dataset not found"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bcpnn(&["train"]).status.code(), Some(2));
    assert_eq!(bcpnn(&["eval", "--model", "x", "--precision", "fp8"]).status.code(), Some(2));
}

#[test]
fn train_inspect_eval_export() {
    let f = fixture();
    let model = f.dir.path().join("model.bcpn");
    let o = f.train(&model, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = stdout(&o);
    assert!(metrics.starts_with("epoch,phase,wall_ms,test_accuracy"));
    assert_eq!(metrics.lines().count(), 5);

    let o = bcpnn(&["inspect", "--model", s(&model)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("n_hidden_hcu 3"));
    assert!(stdout(&o).contains("precision fp32"));

    let (ti, tl) = write_idx(f.dir.path(), "test", 20);
    let per_sample = f.dir.path().join("eval.csv");
    let counters = f.dir.path().join("counters.csv");
    let o = bcpnn(&[
        "eval",
        "--model",
        s(&model),
        "--test-images",
        s(&ti),
        "--test-labels",
        s(&tl),
        "--csv",
        s(&per_sample),
        "--counters-csv",
        s(&counters),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let row = out.lines().last().unwrap();
    assert!(row.starts_with("model,fp32,"), "{row}");
    let acc: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(acc >= 0.9, "{acc}");
    let rows = fs::read_to_string(&per_sample).unwrap();
    assert!(rows.starts_with("sample,label,pred,latency_us"));
    assert_eq!(rows.lines().count(), 21);
    let c = fs::read_to_string(&counters).unwrap();
    assert!(c.starts_with("stage,items,send_stalls,recv_stalls,busy_us"));
    assert_eq!(c.lines().count(), 6);

    let half = f.dir.path().join("model16.bcpn");
    let o = bcpnn(&["export", "--model", s(&model), "--out", s(&half), "--precision", "fp16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::metadata(&half).unwrap().len() < fs::metadata(&model).unwrap().len());
    let o = bcpnn(&["eval", "--model", s(&half), "--images", s(&ti), "--labels", s(&tl)]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().last().unwrap().starts_with("model,fp16,"));
}

#[test]
fn zero_epochs_exports_fresh_network() {
    let f = fixture();
    let model = f.dir.path().join("fresh.bcpn");
    let o = f.train(&model, &["--epochs-unsup", "0", "--epochs-sup", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut cfg: NetworkConfig = CONFIG.parse().unwrap();
    cfg.epochs_unsup = 0;
    cfg.epochs_sup = 0;
    let expect = encode_params(&build_network(&cfg).unwrap(), PrecisionMode::FP32).unwrap();
    assert_eq!(fs::read(&model).unwrap(), expect);
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let (a, b, c) = (
        f.dir.path().join("a"),
        f.dir.path().join("b"),
        f.dir.path().join("c"),
    );
    let strip = |o: &Output| -> Vec<String> {
        stdout(o)
            .lines()
            .map(|l| {
                let mut v: Vec<&str> = l.split(',').collect();
                v.remove(2);
                v.join(",")
            })
            .collect()
    };
    let oa = f.train(&a, &[]);
    let ob = f.train(&b, &[]);
    let oc = f.train(&c, &["--pipeline", "--channel-capacity", "1"]);
    assert_eq!(strip(&oa), strip(&ob));
    assert_eq!(strip(&oa), strip(&oc));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn corrupt_model_is_rejected() {
    let f = fixture();
    let model = f.dir.path().join("m.bcpn");
    assert!(f.train(&model, &["--epochs-unsup", "1", "--epochs-sup", "1"]).status.success());
    let mut bytes = fs::read(&model).unwrap();
    bytes[100] ^= 0x10;
    fs::write(&model, bytes).unwrap();
    let o = bcpnn(&["inspect", "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("crc-mismatch"));
}

#[test]
fn sweep_and_bench() {
    let f = fixture();
    let base = [
        "sweep",
        "--config",
        s(&f.config),
        "--images",
        s(&f.images),
        "--labels",
        s(&f.labels),
        "--sweep",
    ];
    let mut args = base.to_vec();
    args.push("");
    assert_eq!(bcpnn(&args).status.code(), Some(2));

    let mut args = base.to_vec();
    args.push("hcu=3,1;precision=fp32,mixed");
    let o = bcpnn(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let csv: Vec<&str> = out.lines().skip_while(|l| !l.starts_with("config,")).collect();
    assert_eq!(csv.len(), 5);
    assert!(csv[1].starts_with("hcu=3,fp32,"));
    assert!(csv[4].starts_with("hcu=1,mixed,"));

    let o = bcpnn(&[
        "bench",
        "--preset",
        "pneumonia",
        "--sweep",
        "hcu=30,10",
        "--samples",
        "3",
        "--repeats",
        "1",
        "--warmup",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<Vec<&str>> = out
        .lines()
        .skip_while(|l| !l.starts_with("config,"))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let ops: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(ops[1] <= 0.4 * ops[0]);
}
