use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_readmit");

/// 150 rows, 24 features, classes 0/1/2 in ratio 3:2:1 with shifted means.
fn write_toy(dir: &Path) -> PathBuf {
    let mut s: String = (0..24).map(|j| format!("f{j},")).collect();
    s += "readmitted\n";
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..150 {
        let y = [0, 0, 0, 1, 1, 2][i % 6];
        for j in 0..24 {
            let v = next() + 0.4 * y as f64 * (j % 3) as f64;
            s += &format!("{v:.5},");
        }
        s += &format!("{y}\n");
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, s).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("READMIT_SEED")
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn small(cmd: &str, data: &Path, out: &Path) -> Vec<String> {
    let mut a: Vec<String> = [
        cmd,
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "--folds",
        "3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let extra: &[&str] = match cmd {
        "train" | "sweep" => &["--model", "vanilla", "--epochs", "2", "--batch-size", "32"],
        "cascade" => &["--epochs", "2", "--rounds", "5", "--resample", "adasyn"],
        "select" => &["--model", "gbm", "--rounds", "5", "--ks", "4"],
        "resample" => &["--model", "gbm", "--rounds", "5", "--methods", "smote,nearmiss"],
        "binary-study" => &["--rounds", "5"],
        _ => &[],
    };
    a.extend(extra.iter().map(|s| s.to_string()));
    if cmd == "sweep" {
        a.retain(|s| s != "--epochs" && s != "2" && s != "--batch-size" && s != "32");
        a.extend(
            ["--epochs-grid", "1", "--lr-grid", "1e-3", "--batch-grid", "32"]
                .iter()
                .map(|s| s.to_string()),
        );
    }
    a
}

#[test]
fn every_subcommand_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    let before = std::fs::read(&data).unwrap();
    for cmd in [
        "ingest",
        "stats",
        "select",
        "resample",
        "train",
        "sweep",
        "cascade",
        "binary-study",
    ] {
        let out = tmp.path().join(cmd);
        let args = small(cmd, &data, &out);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let first = run(&args);
        assert!(
            first.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&first.stderr)
        );
        let a = files(&out);
        let second = run(&args);
        assert!(second.status.success());
        assert_eq!(first.stdout, second.stdout, "{cmd} stdout");
        assert_eq!(a, files(&out), "{cmd} files");
        assert!(a.iter().any(|(n, _)| n == &format!("{cmd}.tsv")));
    }
    assert_eq!(std::fs::read(&data).unwrap(), before, "input CSV was modified");
}

#[test]
fn embedded_config_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    for cmd in ["train", "sweep", "select"] {
        let out = tmp.path().join(cmd);
        let args = small(cmd, &data, &out);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(run(&args).status.success());
        let report = std::fs::read(out.join(format!("{cmd}.txt"))).unwrap();
        let copy = tmp.path().join(format!("{cmd}.json"));
        std::fs::copy(out.join("config.json"), &copy).unwrap();
        std::fs::remove_dir_all(&out).unwrap();
        let again = run(&[cmd, "--config", copy.to_str().unwrap()]);
        assert!(
            again.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&again.stderr)
        );
        assert_eq!(std::fs::read(out.join(format!("{cmd}.txt"))).unwrap(), report, "{cmd}");
    }
}

#[test]
fn workers_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    let mut reports = Vec::new();
    for w in ["1", "3"] {
        let out = tmp.path().join("train");
        let mut args = small("train", &data, &out);
        args.extend(["--workers".to_string(), w.to_string()]);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(run(&args).status.success());
        reports.push(std::fs::read(out.join("train.txt")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    let out = tmp.path().join("ingest");
    let o = Command::new(BIN)
        .args([
            "ingest",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .env("READMIT_SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed: 99\n"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    let d = data.to_str().unwrap();
    let out = tmp.path().join("x");
    let o = out.to_str().unwrap();

    assert_eq!(
        run(&["train", "--data", d, "--out", o]).status.code(),
        Some(1),
        "missing seed"
    );
    assert_eq!(
        run(&["train", "--data", d, "--out", o, "--seed", "1", "--resample", "magic"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&[
            "binary-study",
            "--data",
            d,
            "--out",
            o,
            "--seed",
            "1",
            "--regimes",
            "magic"
        ])
        .status
        .code(),
        Some(1)
    );
    let missing = tmp.path().join("none.csv");
    assert_eq!(
        run(&["ingest", "--data", missing.to_str().unwrap(), "--out", o, "--seed", "1"])
            .status
            .code(),
        Some(2)
    );
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "a,readmitted\n1,0\n2,5\n").unwrap();
    assert_eq!(
        run(&["ingest", "--data", bad.to_str().unwrap(), "--out", o, "--seed", "1"])
            .status
            .code(),
        Some(2)
    );
    let nan = run(&[
        "train",
        "--data",
        d,
        "--out",
        o,
        "--seed",
        "1",
        "--folds",
        "3",
        "--model",
        "vanilla",
        "--optimizer",
        "sgd",
        "--lr",
        "1e300",
        "--epochs",
        "2",
    ]);
    assert_eq!(nan.status.code(), Some(3), "{}", String::from_utf8_lossy(&nan.stderr));
}

#[test]
fn cascade_paper_mode_annotates_published_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    let out = tmp.path().join("cascade");
    let mut args = small("cascade", &data, &out);
    args.push("--paper-mode".into());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("cascade.txt")).unwrap();
    assert!(text.contains("== cascade confusion, pooled =="));
    assert!(text.contains("published 64.94%, computed 64.93%"));
    assert!(text.contains("80632"));
}

#[test]
fn report_collates_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_toy(tmp.path());
    let a = tmp.path().join("train");
    let args = small("train", &data, &a);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(run(&args).status.success());
    let rep = tmp.path().join("rep");
    let o = run(&["report", "--runs", a.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("train: vanilla mean"));
    assert!(text.contains("train: vanilla pooled"));
}
