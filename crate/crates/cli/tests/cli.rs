use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sumx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumx")).args(args).output().expect("spawn sumx")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn write_spec(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("spec.json");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{"width":32,"height":24,"labels":{"kind":"voronoi","regions":5},
    "library":{"kind":"builtin"},"sigma":20.0,"seed":3}"#;

#[test]
fn exit_codes() {
    assert_eq!(sumx(&[]).status.code(), Some(1));
    assert_eq!(sumx(&["denoise", "a", "b", "--method", "nope"]).status.code(), Some(1));
    assert_eq!(sumx(&["denoise", "/nonexistent/in", "/tmp/out"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let st = dir.path().join("st");
    assert!(sumx(&["simulate", s(&spec), s(&st)]).status.success());
    let bad = sumx(&["denoise", s(&st), s(&dir.path().join("o")), "--medfilt3"]);
    assert_eq!(bad.status.code(), Some(1));
    let even = sumx(&["denoise", s(&st), s(&dir.path().join("o")), "--method", "medfilt3", "--window", "4"]);
    assert_ne!(even.status.code(), Some(0));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a/st"), dir.path().join("b/st"));
    assert!(sumx(&["simulate", s(&spec), s(&a)]).status.success());
    assert!(sumx(&["simulate", s(&spec), s(&b)]).status.success());
    for f in ["st.f32", "st.json", "st_clean.f32", "truth/labels.f32", "truth/map.f32", "truth/shifts.csv"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn subsampled_simulation_keeps_ceil_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SMALL.replace("\"seed\":3", "\"seed\":3,\"fraction\":0.1"));
    let st = dir.path().join("st");
    assert!(sumx(&["simulate", s(&spec), s(&st)]).status.success());
    let header: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("st.json")).unwrap()).unwrap();
    assert_eq!(header["frames"], 12);
    let e = header["energies"].as_array().unwrap();
    assert!(e.windows(2).all(|w| w[1].as_f64() > w[0].as_f64()));
}

#[test]
fn denoise_fit_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let st = dir.path().join("st");
    assert!(sumx(&["simulate", s(&data("demo_phantom.json")), s(&st)]).status.success());
    let den = dir.path().join("den");
    let out = sumx(&["denoise", s(&st), s(&den), "--denoiser", "wavelet:2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("den.report.json")).unwrap()).unwrap();
    assert!(report["selected_k"].as_u64().unwrap() >= 1);

    let map = dir.path().join("map");
    let fit = sumx(&["fit", s(&den), s(&data("ni_library.csv")), s(&data("ni_states.json")), s(&map)]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    assert!(dir.path().join("map.png").exists());
    assert!(dir.path().join("map.fit.json").exists());

    let truth_map = dir.path().join("truth/map");
    let m = sumx(&["metrics", s(&den), s(&dir.path().join("st_clean")), "--map", s(&map), "--truth-map", s(&truth_map)]);
    assert!(m.status.success(), "{}", String::from_utf8_lossy(&m.stderr));
    let v: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    assert!(v["correlation"].as_f64().unwrap() > 0.9, "{v}");
    assert!(v["fpsnr"].as_f64().unwrap() > 30.0, "{v}");
}

#[test]
fn register_writes_truth_schema() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"{"width":128,"height":128,"labels":{"kind":"voronoi","regions":5},"library":{"kind":"builtin","frames":40},
            "amplitude":"morphology","jitter":3,"seed":9}"#,
    );
    let st = dir.path().join("st");
    assert!(sumx(&["simulate", s(&spec), s(&st)]).status.success());
    let reg = dir.path().join("reg");
    assert!(sumx(&["register", s(&st), s(&reg)]).status.success());
    let got = fs::read_to_string(dir.path().join("reg.shifts.csv")).unwrap();
    let want = fs::read_to_string(dir.path().join("truth/shifts.csv")).unwrap();
    assert_eq!(got.lines().next(), want.lines().next());
    let parse = |text: &str| -> Vec<(i64, i64)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let v: Vec<i64> = l.split(',').map(|x| x.parse().unwrap()).collect();
                (v[1], v[2])
            })
            .collect()
    };
    let rate = sumx::registration::shift_recovery_rate(&parse(&got), &parse(&want)).unwrap();
    assert!(rate >= 0.95, "{rate}\n{got}");
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"phantoms":[{{"name":"small","spec":{SMALL}}}],"sigmas":[10,40],"methods":["noisy","svd","medfilt3"],"params":{{"denoiser":{{"kind":"wavelet-soft","levels":2}}}}}}"#
        ),
    )
    .unwrap();
    let out = dir.path().join("rows.csv");
    let r = sumx(&["sweep", s(&cfg), s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
}
