use std::path::Path;
use std::process::{Command, Output};

use fracsde::config::RunConfig;

fn fracsde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracsde"))
        .current_dir(dir)
        .env_remove("FRACSDE_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn regimes_report_for_quarter_hurst() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fracsde(tmp.path(), &["regimes", "--H", "0.25", "--d", "1", "--p", "2", "--q", "inf", "--output-dir", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/regimes/report.json")).unwrap()).unwrap();
    assert_eq!(v["h1"]["holds"], true);
    assert_eq!(v["h2"], true);
    assert_eq!(v["params"]["q"], "inf");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "H = 0.3\nbogus = 1\n").unwrap();
    let o = fracsde(d, &["run", "--config", "bad.toml"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`bogus`"));

    let o = fracsde(d, &["simulate", "--n-paths", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`n_paths`"));

    let o = fracsde(d, &["converge", "--drift", "singular_power:gamma=0.3,radius=1", "--p", "1.2"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("p >= 2"));

    let o = fracsde(d, &["converge", "--drift", "singular_power:gamma=0.3,radius=1", "--H", "0.45", "--q", "2", "--p", "100"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Hq >= 1"));

    let o = fracsde(d, &["girsanov", "--generator", "cholesky", "--n-steps", "16", "--n-paths", "8"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn simulate_then_holder_check() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let base = ["--n-paths", "400", "--n-steps", "128", "--output-dir", "o"];
    let o = fracsde(d, &[&["simulate", "--cache"][..], &base].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = fracsde(d, &[&["verify", "--check", "holder", "--input-cache", "o/simulate/paths.fbm1"][..], &base].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("o/verify/holder.json")).unwrap()).unwrap();
    let slope = v["values"]["slope"].as_f64().unwrap();
    assert!((slope - 0.6).abs() <= 0.05, "slope {slope}");
}

fn strip_timing(s: &str) -> String {
    s.lines().filter(|l| !l.contains("\"wall_time\"") && !l.contains("\"runtime\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = ["simulate", "--n-paths", "64", "--n-steps", "64", "--drift", "bump:amp=0.5,width=1,center=0"];
    let mut runs = Vec::new();
    for bs in ["1", "64"] {
        let o = fracsde(d, &[&args[..], &["--batch-size", bs, "--output-dir", "o"]].concat());
        assert_eq!(code(&o), 0);
        let dir = d.join("o/simulate");
        runs.push([
            std::fs::read(dir.join("paths.csv")).unwrap(),
            std::fs::read(dir.join("solution.csv")).unwrap(),
            strip_timing(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).into_bytes(),
        ]);
    }
    assert_eq!(runs[0][0], runs[1][0]);
    assert_eq!(runs[0][1], runs[1][1]);
    // the summary echoes the config, so batch_size differs; compare everything else
    let a = String::from_utf8(runs[0][2].clone()).unwrap().replace("\"batch_size\": 1,", "\"batch_size\": 64,");
    assert_eq!(a.into_bytes(), runs[1][2]);
}

#[test]
fn env_overrides_config_and_flags_override_env() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("c.toml"), "experiment = \"regimes\"\noutput_dir = \"from_file\"\n").unwrap();
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_fracsde"))
            .current_dir(d)
            .env("FRACSDE_OUT", "from_env")
            .args([&["run", "--config", "c.toml"][..], extra].concat())
            .output()
            .unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    assert!(d.join("from_env/regimes/report.json").exists());
    assert!(!d.join("from_file").exists());
    assert_eq!(code(&run(&["--output-dir", "from_flag"])), 0);
    assert!(d.join("from_flag/regimes/report.json").exists());
}

#[test]
fn shipped_example_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let c = RunConfig::load(&path).unwrap();
    assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
}
