use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxtrav::config::{PipelineConfig, KEYS};

fn voxtrav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxtrav"))
        .args(args)
        .env_remove("VOXTRAV_CONFIG")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = voxtrav(args);
    assert!(
        out.status.success(),
        "voxtrav {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the last stderr line, which must be a single diagnostic.
fn fails(args: &[&str]) -> (i32, String) {
    let out = voxtrav(args);
    let err = String::from_utf8(out.stderr).unwrap();
    let last = err.lines().last().unwrap_or_default().to_string();
    assert!(last.starts_with("error kind="), "{last}");
    (out.status.code().unwrap(), last)
}

const DESK: &str = "terrain.patch_size=8\nterrain.height_budget=4\nterrain.z_min=-1\n\
terrain.objects_min=8\nterrain.objects_max=16\nterrain.diameter_min=0.2\nterrain.diameter_max=2\n";

fn desk_config(dir: &Path) -> PathBuf {
    let p = dir.join("desk.cfg");
    std::fs::write(&p, format!("# desk-scale patch\n{DESK}")).unwrap();
    p
}

#[test]
fn full_pipeline_on_a_desk_patch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();

    ok(&["--config", cfg, "terrain", "--seed", "5", "--mode", "stepped", "--out", &p("m.obj")]);
    ok(&["--config", cfg, "voxelize", "--mesh", &p("m.obj"), "--res", "0.1", "--out", &p("g.voxg")]);
    ok(&["--config", cfg, "collect", "--grid", &p("g.voxg"), "--trials", "10", "--seed", "5", "--jobs", "2", "--out", &p("t.trav")]);
    ok(&[
        "--config", cfg, "windows", "--grid", &p("g.voxg"), "--trav", &p("t.trav"), "--head", "dir4", "--augment-seed", "5", "--count", "6",
        "--out", &p("ds.twnd"),
    ]);
    ok(&[
        "--config", cfg, "train", "--train", &p("ds.twnd"), "--val", &p("ds.twnd"), "--steps", "12", "--batch", "2", "--lr", "0.001", "--seed",
        "1", "--out", &p("m.vtck"),
    ]);
    let report = ok(&["--config", cfg, "eval", "--ds", &p("ds.twnd"), "--model", &p("m.vtck"), "--out", &p("eval.txt")]);
    assert!(report.lines().any(|l| l.starts_with("rmse=")), "{report}");
    assert_eq!(std::fs::read_to_string(p("eval.txt")).unwrap(), report);
    ok(&[
        "--config", cfg, "predict", "--grid", &p("g.voxg"), "--pose", "4,4,0.3,90", "--model", &p("m.vtck"), "--out", &p("p.vtpr"), "--mesh",
        &p("p.obj"),
    ]);
    let plan = ok(&[
        "--config", cfg, "plan", "--pred", &p("p.vtpr"), "--start", "4,4,0.3", "--goal", "4.6,4.2,0.3", "--lambda", "0.1", "--snap", "--out",
        &p("path.txt"),
    ]);
    assert!(plan.starts_with("found="));

    // every artifact parses back
    let mesh = voxtrav::terrain::read_obj(Path::new(&p("m.obj"))).unwrap();
    assert!(!mesh.triangles.is_empty());
    let grid = voxtrav::voxgrid::read_grid(Path::new(&p("g.voxg"))).unwrap();
    assert!(!grid.is_empty());
    let trav = voxtrav::voxgrid::read_trav(Path::new(&p("t.trav"))).unwrap();
    assert!(!trav.is_empty());
    let ds = voxtrav::dataset::read_dataset(Path::new(&p("ds.twnd"))).unwrap();
    assert_eq!(ds.head, voxtrav::dataset::Head::Dir4);
    assert_eq!(ds.windows.len(), 6);
    let model = voxtrav::sparsenet::load_checkpoint(Path::new(&p("m.vtck")), None).unwrap();
    assert_eq!(model.spec.out, 4);
    let log = std::fs::read_to_string(p("m.vtck.log")).unwrap();
    assert_eq!(log.lines().count(), 12);
    assert!(log.lines().last().unwrap().contains("val_rmse="));
    let (frame, pred) = voxtrav::sparsenet::read_prediction(Path::new(&p("p.vtpr"))).unwrap();
    assert_eq!(pred.channels, 4);
    assert!((frame.yaw - 90f64.to_radians()).abs() < 1e-9);
    let colored = voxtrav::terrain::read_obj(Path::new(&p("p.obj"))).unwrap();
    assert_eq!(colored.vertices.len(), 8 * pred.len());
    let path = std::fs::read_to_string(p("path.txt")).unwrap();
    if plan.starts_with("found=1") {
        assert!(path.starts_with("# x y z step_cost"));
        assert!(path.lines().any(|l| l.starts_with("total_cost=")));
    } else {
        assert_eq!(path, "found=0\n");
    }

    // the same inputs give the same bytes
    ok(&["--config", cfg, "terrain", "--seed", "5", "--mode", "stepped", "--out", &p("m2.obj")]);
    assert_eq!(std::fs::read(p("m.obj")).unwrap(), std::fs::read(p("m2.obj")).unwrap());
    ok(&[
        "--config", cfg, "predict", "--grid", &p("g.voxg"), "--pose", "4,4,0.3,90", "--model", &p("m.vtck"), "--out", &p("p2.vtpr"),
    ]);
    assert_eq!(std::fs::read(p("p.vtpr")).unwrap(), std::fs::read(p("p2.vtpr")).unwrap());

    // failure classes
    let (code, msg) = fails(&["eval", "--ds", &p("g.voxg"), "--model", &p("m.vtck")]);
    assert_eq!(code, 2, "{msg}");
    assert!(msg.contains("kind=format"));
    let (code, msg) = fails(&["eval", "--ds", &p("missing.twnd"), "--model", &p("m.vtck")]);
    assert_eq!(code, 2, "{msg}");
    assert!(msg.contains("kind=io"));
    let (code, msg) = fails(&["train", "--train", &p("ds.twnd"), "--steps", "3", "--batch", "2", "--lr", "1e30", "--out", &p("bad.vtck")]);
    assert_eq!(code, 3, "{msg}");
    assert!(msg.contains("kind=numeric"));
    let (code, msg) = fails(&["plan", "--pred", &p("p.vtpr"), "--start", "4,4,1.9", "--goal", "4,4,0.3", "--out", &p("x.txt")]);
    assert_eq!(code, 1, "{msg}");
    assert!(msg.contains("kind=not_traversable"), "{msg}");
    let (code, _) = fails(&["predict", "--grid", &p("g.voxg"), "--pose", "4,4", "--model", &p("m.vtck"), "--out", &p("x.vtpr")]);
    assert_eq!(code, 1);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "voxel.resolution=0.1\nvoxel.resolutoin=0.2\n").unwrap();
    let (code, msg) = fails(&["--config", cfg.to_str().unwrap(), "terrain", "--out", "/dev/null"]);
    assert_eq!(code, 1);
    assert!(msg.contains("voxel.resolutoin"), "{msg}");
    let (code, msg) = fails(&["--set", "plan.lamda=1", "terrain", "--out", "/dev/null"]);
    assert_eq!(code, 1);
    assert!(msg.contains("plan.lamda"), "{msg}");
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.cfg");
    std::fs::write(&cfg, "terrain.patch_size=2\nterrain.objects_min=0\nterrain.objects_max=0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_voxtrav"))
        .args(["terrain", "--out", dir.path().join("m.obj").to_str().unwrap()])
        .env("VOXTRAV_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    // the resolved config is logged in full
    assert!(err.contains("config terrain.patch_size=2"));
    assert_eq!(err.lines().filter(|l| l.starts_with("config ")).count(), KEYS.len());
}

#[test]
fn help_lists_every_key_with_default() {
    let out = voxtrav(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    let d = PipelineConfig::default();
    for (k, _) in KEYS {
        let want = format!("{k}={}", d.get(k).unwrap());
        assert!(help.contains(&want), "help lacks {want}");
    }
}

#[test]
fn bad_arguments_exit_one() {
    let (code, msg) = fails(&["collect", "--grid"]);
    assert_eq!(code, 1);
    assert!(msg.contains("kind=usage"));
    let (code, _) = fails(&["terrain", "--mode", "wavy", "--out", "/dev/null"]);
    assert_eq!(code, 1);
}
