use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ffcount::autograd::checkpoint;
use ffcount::focusnet::{Ablation, FocusNet, FocusNetConfig};
use ffcount::geometry::{estimate_sigma_gak, load_dataset};
use ffcount::supervision::io::{load_ffdm, save_ffdm};
use ffcount::supervision::DensityMap;
use tempfile::TempDir;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo.json")
}

fn ffcount(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffcount"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = ffcount(out, args);
    assert!(
        o.status.success(),
        "ffcount {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// `(image, sigma)` rows of a sigmas.csv.
fn sigma_rows(dir: &Path) -> Vec<(String, f64)> {
    std::fs::read_to_string(dir.join("sigmas.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn synth_fixed_sigma_conserves_mass() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth-gt", "--synth", "uniform,count=10", "--kernel", "fixed:5"]);
    let maps: Vec<_> = files(tmp.path())
        .into_keys()
        .filter(|k| k.ends_with(".ffdm"))
        .collect();
    assert_eq!(maps.len(), 1);
    let m = load_ffdm(tmp.path().join(&maps[0])).unwrap();
    assert!((m.sum() - 10.0).abs() < 1e-6, "sum {}", m.sum());
    let labels = std::fs::read_to_string(tmp.path().join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 2);
}

#[test]
fn gak_sigmas_match_library() {
    let tmp = TempDir::new().unwrap();
    let demo = demo();
    ok(
        tmp.path(),
        &["synth-gt", "--annotations", demo.to_str().unwrap(), "--kernel", "gak", "--beta", "0.3", "--k", "5"],
    );
    let rows = sigma_rows(tmp.path());
    let mut expected = Vec::new();
    for a in load_dataset(&demo).unwrap() {
        let s = estimate_sigma_gak(&a.to_point_set().unwrap(), 5, 0.3).unwrap();
        expected.extend(s.sigmas().iter().map(|&v| (a.image.clone(), v)));
    }
    assert_eq!(rows.len(), expected.len());
    for (r, e) in rows.iter().zip(&expected) {
        assert_eq!(r.0, e.0);
        // CSV round trip through the shortest decimal representation is exact.
        assert_eq!(r.1, e.1);
    }
}

#[test]
fn nonuniform_and_gak_sigmas_differ_on_clustered_demo() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let demo = demo();
    let demo = demo.to_str().unwrap();
    ok(a.path(), &["synth-gt", "--annotations", demo, "--kernel", "gak"]);
    ok(b.path(), &["synth-gt", "--annotations", demo, "--kernel", "nonuniform"]);
    let (ga, nu) = (sigma_rows(a.path()), sigma_rows(b.path()));
    assert_eq!(ga.len(), nu.len());
    let differing = ga.iter().zip(&nu).filter(|(x, y)| (x.1 - y.1).abs() > 1e-9).count();
    assert!(differing * 2 > ga.len(), "only {differing} of {} sigmas differ", ga.len());
}

#[test]
fn malformed_annotations_exit_2_with_position() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "[\n{\"image\": \"a\", \"width\": 10,\n \"height\": }\n]").unwrap();
    let o = ffcount(&tmp.path().join("out"), &["synth-gt", "--annotations", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn point_outside_image_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"image": "a", "width": 10, "height": 10, "points": [[12, 3]]}"#).unwrap();
    let o = ffcount(&tmp.path().join("out"), &["synth-gt", "--annotations", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn source_flags_are_exclusive_and_required() {
    let tmp = TempDir::new().unwrap();
    let demo = demo();
    let both = ffcount(
        tmp.path(),
        &["synth-gt", "--annotations", demo.to_str().unwrap(), "--synth", "uniform"],
    );
    assert_eq!(both.status.code(), Some(2));
    assert_eq!(ffcount(tmp.path(), &["synth-gt"]).status.code(), Some(2));
    let bad_kernel = ffcount(tmp.path(), &["synth-gt", "--synth", "uniform", "--kernel", "wide"]);
    assert_eq!(bad_kernel.status.code(), Some(2));
}

#[test]
fn evaluate_identical_directories() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt");
    ok(&gt, &["synth-gt", "--synth", "clustered,size=64,count=10-20", "--images", "4"]);
    let gt_s = gt.to_str().unwrap();
    let ev = tmp.path().join("ev");
    ok(&ev, &["evaluate", "--truth", gt_s, "--pred", gt_s]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    let agg = &report["aggregate"];
    assert_eq!(agg["images"], 4);
    assert_eq!(agg["mae"], 0.0);
    assert_eq!(agg["ssim"], 1.0);
    assert_eq!(agg["psnr"], "inf");
    assert!(agg["game"].as_array().unwrap().iter().all(|g| g == 0.0));
    let csv = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "image,truth,pred,abs_err,game1,game2,game3,game4");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn evaluate_shifted_mass() {
    let tmp = TempDir::new().unwrap();
    let (t, p) = (tmp.path().join("t"), tmp.path().join("p"));
    std::fs::create_dir_all(&t).unwrap();
    std::fs::create_dir_all(&p).unwrap();
    let mut a = vec![0.0; 64];
    let mut b = vec![0.0; 64];
    a[0] = 3.0;
    b[63] = 3.0;
    save_ffdm(&DensityMap::from_values(8, 8, a).unwrap(), t.join("x.ffdm")).unwrap();
    save_ffdm(&DensityMap::from_values(8, 8, b).unwrap(), p.join("x.ffdm")).unwrap();
    let ev = tmp.path().join("ev");
    ok(&ev, &["evaluate", "--truth", t.to_str().unwrap(), "--pred", p.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    let game = report["aggregate"]["game"].as_array().unwrap();
    assert_eq!(game[0], 0.0);
    assert_eq!(game[2], 6.0);
}

#[test]
fn evaluate_lists_orphans() {
    let tmp = TempDir::new().unwrap();
    let (t, p) = (tmp.path().join("t"), tmp.path().join("p"));
    std::fs::create_dir_all(&t).unwrap();
    std::fs::create_dir_all(&p).unwrap();
    let m = DensityMap::zeros(4, 4).unwrap();
    for (dir, name) in [(&t, "a"), (&t, "b"), (&p, "b"), (&p, "c")] {
        save_ffdm(&m, dir.join(format!("{name}.ffdm"))).unwrap();
    }
    let o = ffcount(
        &tmp.path().join("ev"),
        &["evaluate", "--truth", t.to_str().unwrap(), "--pred", p.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("a.ffdm") && err.contains("c.ffdm") && !err.contains("b.ffdm"), "{err}");
}

#[test]
fn evaluate_crowding_strata_equal_thirds() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt");
    ok(&gt, &["synth-gt", "--synth", "bimodal,size=64,count=2-30", "--images", "9"]);
    let gt_s = gt.to_str().unwrap();
    let ann = gt.join("annotations.json");
    let ev = tmp.path().join("ev");
    ok(
        &ev,
        &["evaluate", "--truth", gt_s, "--pred", gt_s, "--stratify", "crowding", "--annotations", ann.to_str().unwrap()],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    let strata = report["strata"].as_array().unwrap();
    let labels: Vec<_> = strata.iter().map(|s| s["stratum"].as_str().unwrap()).collect();
    assert_eq!(labels, vec!["sparse", "medium", "dense"]);
    assert!(strata.iter().all(|s| s["images"] == 3));

    let missing = ffcount(&ev, &["evaluate", "--truth", gt_s, "--pred", gt_s, "--stratify", "scale"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_toy_zero_epochs_keeps_initialization() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["--seed", "5", "train-toy", "--scenes", "20", "--epochs", "0", "--synth", "uniform,size=32", "--channels", "4"],
    );
    let saved = std::fs::read(tmp.path().join("none/checkpoint.ffck")).unwrap();
    let cfg = FocusNetConfig {
        input_size: 32,
        base_channels: 4,
        seed: 5,
        ..FocusNetConfig::default()
    };
    let fresh = FocusNet::new(cfg, Ablation::None).unwrap();
    assert_eq!(saved, checkpoint::to_bytes(fresh.params()));
    let log = std::fs::read_to_string(tmp.path().join("none/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn train_toy_needs_twenty_scenes() {
    let tmp = TempDir::new().unwrap();
    let o = ffcount(tmp.path(), &["train-toy", "--scenes", "19", "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let demo = demo();
    let demo = demo.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["--seed", "3", "synth-gt", "--synth", "clustered,size=96,count=20-40", "--images", "3", "--kernel", "nonuniform"],
        &["synth-gt", "--annotations", demo, "--kernel", "boxes", "--patch", "64"],
        &["--seed", "2", "train-toy", "--scenes", "20", "--epochs", "2", "--synth", "bimodal,size=32", "--channels", "4", "--ablate", "all"],
    ];
    for args in runs {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        ok(a.path(), args);
        ok(b.path(), args);
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(!fa.is_empty());
        assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>(), "{args:?}");
        for (k, v) in &fa {
            assert!(v == &fb[k], "{k} differs between runs of {args:?}");
        }
    }
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["synth-gt", "--synth", "uniform,size=64,count=5-25", "--images", "6"];
    ok(a.path(), &[&["--threads", "1"], &args[..]].concat());
    ok(b.path(), &[&["--threads", "3"], &args[..]].concat());
    let (fa, fb) = (files(a.path()), files(b.path()));
    for (k, v) in &fa {
        if k != "manifest.json" {
            assert!(v == &fb[k], "{k}");
        }
    }
}
