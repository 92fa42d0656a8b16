use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thinkaudit"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path) {
    let o = run(
        dir,
        &["gen-forget-set", "--seed", "0", "--n", "60", "--out", "forget_set.json"],
    );
    assert!(o.status.success(), "{o:?}");
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_server(preset: &str) -> Server {
    let mut child = bin()
        .args(["simulate", "serve", "--preset", preset, "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    assert!(url.starts_with("http://"), "{line}");
    Server(child, url)
}

#[test]
fn gen_forget_set_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let first = std::fs::read(dir.path().join("forget_set.json")).unwrap();
    gen(dir.path());
    assert_eq!(std::fs::read(dir.path().join("forget_set.json")).unwrap(), first);
    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["authors"].as_array().unwrap().len(), 60);
}

#[test]
fn simulate_list_names_every_preset() {
    let o = run(Path::new("."), &["simulate", "list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for p in [
        "memorized",
        "npo_k100",
        "npo_k400",
        "npo_k800",
        "npo_k1600",
        "llama_drift",
        "ga_k400plus",
    ] {
        assert!(out.lines().any(|l| l.starts_with(p)), "{p} missing from\n{out}");
    }
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let args = [
        "audit",
        "run",
        "--adapters",
        "npo_K1600_seed0",
        "sim:npo_k1600",
        "llama_drift",
        "sim:llama_drift",
        "--forget-set",
        "forget_set.json",
        "--out",
        "r.jsonl",
        "--prefill-mode",
        "bio",
        "meta",
        "none",
        "--convention",
        "both",
        "--tf",
    ];
    let o = run(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    assert!(
        out.contains("| npo_K1600_seed0 | auto | empty-think | 0.600 (36/60) | 0.833 (50/60) | +0.233 | 60/60 |"),
        "{out}"
    );
    assert!(out.contains("| llama_drift | auto | full-think |"), "{out}");

    let again = run(dir.path(), &args);
    assert!(stdout(&again).contains("requests 0,"), "{}", stdout(&again));

    let md = run(dir.path(), &["audit", "report", "--in", "r.jsonl", "--format", "md"]);
    assert!(md.status.success());
    let md = stdout(&md);
    assert!(md.contains("14 bypass, 12 prefix-echo (0.86)"));
    assert!(md.contains("+0.917"));

    let csv = run(
        dir.path(),
        &[
            "audit", "report", "--in", "r.jsonl", "--format", "csv", "--out", "r.csv",
        ],
    );
    assert!(csv.status.success());
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(text.starts_with("section,adapter,arm,convention,metric,value,lo,hi,hits,n,excludes_zero\n"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    std::fs::write(
        dir.path().join("audit.toml"),
        "forget_set = \"forget_set.json\"\nout = \"from_config.jsonl\"\nprobe_kinds = [\"canary\"]\n\n\
         [[adapters]]\nlabel = \"memorized\"\nuri = \"sim:memorized\"\n",
    )
    .unwrap();
    let o = run(
        dir.path(),
        &[
            "audit",
            "run",
            "--config",
            "audit.toml",
            "--out",
            "override.jsonl",
            "--prefill-mode",
            "bio",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    assert!(!dir.path().join("from_config.jsonl").exists());
    let lines = std::fs::read_to_string(dir.path().join("override.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 120);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = run(dir.path(), &["audit", "report", "--in", "empty.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));

    let o = run(dir.path(), &["audit", "run", "--convention", "sideways"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(
        dir.path(),
        &[
            "audit",
            "run",
            "--adapters",
            "x",
            "sim:nope",
            "--forget-set",
            "forget_set.json",
            "--out",
            "o.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(1));

    let o = bin()
        .current_dir(dir.path())
        .env("THINKAUDIT_TIMEOUT_SECS", "2")
        .args([
            "audit",
            "run",
            "--adapters",
            "ok",
            "sim:memorized",
            "down",
            "http://127.0.0.1:9",
            "--forget-set",
            "forget_set.json",
            "--out",
            "d.jsonl",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    assert!(stdout(&o).contains("(degraded)"));
}

#[test]
fn serve_and_check_conformance() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let server = spawn_server("npo_k1600");
    let o = run(
        dir.path(),
        &[
            "audit",
            "conformance",
            "--backend",
            &server.1,
            "--forget-set",
            "forget_set.json",
        ],
    );
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 4);

    let o = run(
        dir.path(),
        &[
            "audit",
            "run",
            "--adapters",
            "npo_K1600_seed0",
            &server.1,
            "--forget-set",
            "forget_set.json",
            "--out",
            "h.jsonl",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("| npo_K1600_seed0 | auto | empty-think | 0.600 (36/60) |"));
}
