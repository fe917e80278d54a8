use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use voxtrav::config::{PipelineConfig, KEYS};
use voxtrav::dataset::{self, Head, WindowFrame};
use voxtrav::error::{Error, Result};
use voxtrav::oracle;
use voxtrav::planner::{self, PlannedPath};
use voxtrav::sparsenet::{self, Prediction};
use voxtrav::terrain::{self, GroundMode};
use voxtrav::voxelize::voxelize_mesh;
use voxtrav::voxgrid::{self, GridMeta, Pose, Voxel};

#[derive(Parser)]
#[command(name = "voxtrav", version, about = "Voxel traversability pipeline", after_help = config_help())]
struct Cli {
    /// key=value configuration file (falls back to $VOXTRAV_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a terrain mesh (OBJ)
    Terrain {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<GroundMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize a mesh into an occupancy grid
    Voxelize {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        res: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a grid with the traversal oracle
    Collect {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        trials: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut training windows from a labelled grid
    Windows {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        trav: PathBuf,
        #[arg(long)]
        head: Option<Head>,
        #[arg(long = "augment-seed")]
        augment_seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and a metrics log next to it
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log path (default: <out>.log)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a model on a dataset
    Eval {
        #[arg(long)]
        ds: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the window around a pose; yaw in degrees, snapped to 10 degrees
    Predict {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, value_name = "X,Y,Z,YAW")]
        pose: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Colored OBJ of the scored voxels in world coordinates
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Risk-aware shortest path over a prediction
    Plan {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_name = "X,Y,Z")]
        start: String,
        #[arg(long, value_name = "X,Y,Z")]
        goal: String,
        #[arg(long)]
        lambda: Option<f64>,
        /// Move start and goal to the nearest traversable voxel
        #[arg(long)]
        snap: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_help() -> String {
    let d = PipelineConfig::default();
    let mut s = String::from("Configuration keys (key=value, defaults shown):\n");
    for (k, doc) in KEYS {
        let _ = writeln!(s, "  {k}={}  {doc}", d.get(k).unwrap_or_default());
    }
    s
}

fn floats<const N: usize>(what: &str, s: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::usage(format!("{what}: expected {N} comma-separated numbers, got {s:?}")))?;
    let arr: [f64; N] = v
        .try_into()
        .map_err(|_| Error::usage(format!("{what}: expected {N} comma-separated numbers, got {s:?}")))?;
    if arr.iter().any(|x| !x.is_finite()) {
        return Err(Error::usage(format!("{what}: values must be finite")));
    }
    Ok(arr)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.clone().or_else(|| std::env::var_os("VOXTRAV_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => PipelineConfig::from_file(&p)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn put<T: ToString>(cfg: &mut PipelineConfig, key: &str, v: Option<T>) -> Result<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn auto_bounds(mesh: &terrain::TriMesh, res: f64) -> Result<GridMeta> {
    let (lo, hi) = mesh.bounds().ok_or_else(|| Error::usage("mesh has no vertices"))?;
    if !(res > 0.0 && res.is_finite()) {
        return Err(Error::usage(format!("resolution must be positive, got {res}")));
    }
    // one meter of headroom above the highest surface
    let top = [hi[0], hi[1], hi[2] + 1.0];
    let origin = lo.map(|x| (x / res).floor() * res);
    let mut dims = [0u32; 3];
    for a in 0..3 {
        dims[a] = (((top[a] - origin[a]) / res).ceil() as u32).max(1);
    }
    GridMeta::new(dims, origin, res)
}

fn score_color(s: f32) -> [f32; 3] {
    [1.0 - s, s, 0.0]
}

/// Cubes for every scored voxel, colored from red (0) to green (1), in world
/// coordinates.
fn colored_obj(pred: &Prediction, frame: &WindowFrame) -> String {
    let mut out = String::new();
    let r = frame.meta.resolution;
    let mut base = 1;
    for (row, c) in pred.coords.iter().enumerate() {
        let s = pred.score(row).iter().sum::<f32>() / pred.channels as f32;
        let col = score_color(s);
        let lo = frame.meta.center_unchecked(Voxel::new(c[0], c[1], c[2])).map(|x| x - r / 2.0);
        for k in 0..8 {
            let p = [lo[0] + r * (k & 1) as f64, lo[1] + r * ((k >> 1) & 1) as f64, lo[2] + r * (k >> 2) as f64];
            let w = frame.to_world(p);
            let _ = writeln!(out, "v {:.5} {:.5} {:.5} {:.3} {:.3} {:.3}", w[0], w[1], w[2], col[0], col[1], col[2]);
        }
        for f in [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]] {
            let _ = writeln!(out, "f {} {} {}", base + f[0], base + f[1], base + f[2]);
            let _ = writeln!(out, "f {} {} {}", base + f[0], base + f[2], base + f[3]);
        }
        base += 8;
    }
    out
}

fn locate(graph: &planner::TravGraph, frame: &WindowFrame, p: [f64; 3], snap: bool, which: &str) -> Result<Voxel> {
    let q = frame.to_window(p);
    if snap {
        return graph
            .nearest_node(q)
            .ok_or_else(|| Error::usage("prediction has no traversable voxel"));
    }
    frame
        .meta
        .world_to_index(q)
        .ok_or_else(|| Error::usage(format!("{which} {p:?} lies outside the predicted window")))
}

fn path_text(path: &PlannedPath, frame: &WindowFrame) -> String {
    let world: Vec<[f64; 3]> = path.points.iter().map(|&p| frame.to_world(p)).collect();
    planner::format_path(path, &world)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Terrain { seed, mode, .. } => {
            put(&mut cfg, "terrain.seed", *seed)?;
            put(&mut cfg, "terrain.ground_mode", *mode)?;
        }
        Cmd::Voxelize { res, .. } => put(&mut cfg, "voxel.resolution", *res)?,
        Cmd::Collect { trials, seed, jobs, .. } => {
            put(&mut cfg, "oracle.trials", *trials)?;
            put(&mut cfg, "oracle.seed", *seed)?;
            put(&mut cfg, "jobs", *jobs)?;
        }
        Cmd::Windows {
            head,
            augment_seed,
            count,
            jobs,
            ..
        } => {
            put(&mut cfg, "windows.head", *head)?;
            put(&mut cfg, "windows.seed", *augment_seed)?;
            put(&mut cfg, "windows.count", *count)?;
            put(&mut cfg, "jobs", *jobs)?;
        }
        Cmd::Train {
            steps,
            batch,
            lr,
            seed,
            variant,
            ..
        } => {
            put(&mut cfg, "train.steps", *steps)?;
            put(&mut cfg, "train.batch", *batch)?;
            put(&mut cfg, "train.lr", *lr)?;
            put(&mut cfg, "train.seed", *seed)?;
            put(&mut cfg, "train.variant", variant.clone())?;
        }
        Cmd::Plan { lambda, .. } => put(&mut cfg, "plan.lambda", *lambda)?,
        Cmd::Eval { .. } | Cmd::Predict { .. } => {}
    }
    for line in cfg.resolved().lines() {
        eprintln!("config {line}");
    }

    match cli.cmd {
        Cmd::Terrain { out, .. } => {
            let t = terrain::generate_terrain(cfg.terrain_seed, &cfg.terrain())?;
            write_text(&out, &terrain::write_obj(&t.mesh))?;
            println!("triangles={} primitives={}", t.mesh.triangles.len(), t.primitives.len());
        }
        Cmd::Voxelize { mesh, out, .. } => {
            let m = terrain::read_obj(&mesh)?;
            let grid = voxelize_mesh(&m, &auto_bounds(&m, cfg.resolution)?);
            voxgrid::write_grid(&out, &grid)?;
            println!("dims={:?} occupied={}", grid.meta().dims, grid.len());
        }
        Cmd::Collect { grid, out, .. } => {
            let g = voxgrid::read_grid(&grid)?;
            let (trav, stats) = oracle::collect(&g, &cfg.collect(), cfg.jobs)?;
            voxgrid::write_trav(&out, &trav)?;
            println!(
                "start_poses={} entries={} rollouts={} successes={}",
                stats.start_poses, stats.entries, stats.rollouts, stats.successes
            );
        }
        Cmd::Windows { grid, trav, out, .. } => {
            let g = voxgrid::read_grid(&grid)?;
            let t = voxgrid::read_trav(&trav)?;
            let wc = cfg.windows();
            let windows = dataset::build_windows(&g, &t, &wc, cfg.jobs)?;
            let n = windows.len();
            dataset::write_dataset(&out, &dataset::Dataset::new(wc.head, windows)?)?;
            println!("windows={n}");
        }
        Cmd::Train { train, val, out, log, .. } => {
            let tr = dataset::read_dataset(&train)?;
            let va = val.as_deref().map(dataset::read_dataset).transpose()?;
            let spec = cfg.model(tr.head.channels());
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log");
                PathBuf::from(p)
            });
            let mut lines = String::new();
            let result = sparsenet::train(spec, &cfg.train(), &tr, va.as_ref(), |r| {
                let _ = writeln!(lines, "{r}");
                if r.val_rmse.is_some() {
                    eprintln!("{r}");
                }
            });
            write_text(&log_path, &lines)?;
            let outcome = result?;
            sparsenet::save_checkpoint(&out, &outcome.params)?;
            if let Some(last) = outcome.log.last() {
                println!("{last}");
            }
        }
        Cmd::Eval { ds, model, out } => {
            let d = dataset::read_dataset(&ds)?;
            let spec = cfg.model(d.head.channels());
            let params = sparsenet::load_checkpoint(&model, None)?;
            if params.spec.out != spec.out {
                return Err(Error::usage(format!(
                    "model predicts {} channels but the dataset head has {}",
                    params.spec.out, spec.out
                )));
            }
            let report = sparsenet::evaluate(&params, &d);
            print!("{report}");
            if let Some(o) = out {
                write_text(&o, &report.to_string())?;
            }
        }
        Cmd::Predict {
            grid,
            pose,
            model,
            out,
            mesh,
        } => {
            let g = voxgrid::read_grid(&grid)?;
            let [x, y, z, yaw] = floats::<4>("--pose", &pose)?;
            let heading_idx = ((yaw / 10.0).round() as i64).rem_euclid(36) as u8;
            let p = Pose {
                p: [x, y, z],
                heading_idx,
                roll: 0.0,
                pitch: 0.0,
            };
            let params = sparsenet::load_checkpoint(&model, None)?;
            let head = Head::from_channels(params.spec.out)
                .ok_or_else(|| Error::format(8, format!("model has {} channels, not a known head", params.spec.out)))?;
            let window = dataset::extract_window_from(&g, &BTreeMap::new(), &p, head)?;
            let frame = WindowFrame::for_pose(g.meta(), &p)?;
            let pred = sparsenet::predict(&params, &window.input.iter().map(|v| v.as_array()).collect::<Vec<_>>());
            sparsenet::write_prediction(&out, &pred, &frame)?;
            if let Some(m) = mesh {
                write_text(&m, &colored_obj(&pred, &frame))?;
            }
            println!("input={} predicted={}", window.input.len(), pred.len());
        }
        Cmd::Plan {
            pred,
            start,
            goal,
            snap,
            out,
            ..
        } => {
            let (frame, p) = sparsenet::read_prediction(&pred)?;
            let scores: BTreeMap<Voxel, f64> = p
                .coords
                .iter()
                .enumerate()
                .map(|(r, c)| {
                    let s = p.score(r).iter().map(|&x| x as f64).sum::<f64>() / p.channels as f64;
                    (Voxel::new(c[0], c[1], c[2]), s)
                })
                .collect();
            let graph = planner::build_graph(&scores, &frame.meta, cfg.graph())?;
            let s = locate(&graph, &frame, floats::<3>("--start", &start)?, snap, "start")?;
            let t = locate(&graph, &frame, floats::<3>("--goal", &goal)?, snap, "goal")?;
            match graph.dijkstra(s, t)? {
                Some(path) => {
                    write_text(&out, &path_text(&path, &frame))?;
                    println!("found=1 steps={} total_cost={:.6}", path.step_costs.len(), path.total);
                }
                None => {
                    write_text(&out, "found=0\n")?;
                    println!("found=0");
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::NotTraversable(_) => 1,
        Error::Format { .. } | Error::Io { .. } => 2,
        Error::Numeric(_) => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Usage(_) => "usage",
        Error::NotTraversable(_) => "not_traversable",
        Error::Format { .. } => "format",
        Error::Io { .. } => "io",
        Error::Numeric(_) => "numeric",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error kind=usage code=1 msg={first:?}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error kind={} code={code} msg={:?}", kind(&e), e.to_string());
            let _ = std::io::stderr().flush();
            ExitCode::from(code)
        }
    }
}
