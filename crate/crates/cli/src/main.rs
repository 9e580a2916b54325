mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use v3dg_core::bench::{gen_trajectory, run_bench, summarize, write_csv_file, BenchOptions, TrajectoryConfig};
use v3dg_core::build::{build_bundle_with_progress, Progress};
use v3dg_core::io::{load_ply, read_bundle, write_atomic, write_bundle, write_ply, write_scene, Bundle};
use v3dg_core::model::{focal_from_fov, Camera, Vec3};
use v3dg_core::pipeline::{render_frame, FrameRequest};
use v3dg_core::raster::RasterConfig;
use v3dg_core::select::{CullMode, LoadedScene};
use v3dg_core::synthetic::{blob, grid_scene, sphere_shell};
use v3dg_viewer::Viewer;

use config::{BuildFlags, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "v3dg", version, about = "Level-of-detail bundles for 3D Gaussian assets")]
struct Cli {
    /// TOML file with defaults for any flag (keys in kebab-case).
    #[arg(long, global = true, env = "V3DG_CONFIG")]
    config: Option<PathBuf>,
    /// Worker thread cap for building and rendering.
    #[arg(long, global = true, env = "V3DG_THREADS")]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy, Default)]
struct BuildArgs {
    /// Gaussians per cluster.
    #[arg(long, env = "V3DG_CLUSTER_SIZE")]
    cluster_size: Option<usize>,
    /// Clusters merged per group.
    #[arg(long, env = "V3DG_GROUP_SIZE")]
    group_size: Option<usize>,
    /// Local splatting iterations per group.
    #[arg(long, env = "V3DG_ITERATIONS")]
    iterations: Option<usize>,
    /// Scale multiplier applied when halving a group.
    #[arg(long, env = "V3DG_SCALE_EXPANSION")]
    scale_expansion: Option<f64>,
    #[arg(long, env = "V3DG_SEED")]
    seed: Option<u64>,
}

impl BuildArgs {
    fn flags(&self) -> BuildFlags {
        BuildFlags {
            cluster_size: self.cluster_size,
            group_size: self.group_size,
            iterations: self.iterations,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct ViewArgs {
    /// Footprint tolerance in pixels.
    #[arg(long, env = "V3DG_TAU")]
    tau: Option<f64>,
    /// lod, vanilla, radius-clip or layer-debug.
    #[arg(long, env = "V3DG_MODE")]
    mode: Option<String>,
    /// Screen radius in pixels below which radius-clip drops a Gaussian.
    #[arg(long, env = "V3DG_CLIP")]
    clip: Option<f64>,
    #[arg(long, env = "V3DG_WIDTH")]
    width: Option<u32>,
    #[arg(long, env = "V3DG_HEIGHT")]
    height: Option<u32>,
    /// Horizontal field of view in degrees.
    #[arg(long, env = "V3DG_FOV")]
    fov: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Cull {
    Off,
    Instance,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Blob,
    Shell,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a bundle from a PLY asset.
    Build {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Render one frame of a scene to PNG.
    Render {
        scene: PathBuf,
        output: PathBuf,
        /// Eye and target as "ex,ey,ez,tx,ty,tz" (+z is up).
        #[arg(long, allow_hyphen_values = true)]
        camera: Option<String>,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Run the orbit trajectory benchmark and write per-camera CSV records.
    Bench {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Largest orbit radius; defaults to three times the scene's half diagonal.
        #[arg(long, env = "V3DG_EXTENT")]
        extent: Option<f64>,
        /// Comma-separated tolerances.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// Supersampling factor of the reference images.
        #[arg(long)]
        ssaa: Option<u32>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long, value_enum, default_value_t = Cull::Instance)]
        cull: Cull,
        /// Also write every reference, vanilla and LOD image here.
        #[arg(long)]
        png_dir: Option<PathBuf>,
        /// Run cameras concurrently (timings become unreliable).
        #[arg(long)]
        parallel: bool,
    },
    /// Print a bundle's layers and check every invariant.
    Info { bundle: PathBuf },
    /// Serve live frames over WebSocket at /ws.
    Serve {
        scene: PathBuf,
        #[arg(long, env = "V3DG_PORT")]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Directory of browser console assets served at /.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write a procedural asset, its bundle and a grid scene of instances.
    Fixture {
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Blob)]
        kind: Kind,
        #[arg(long, default_value_t = 32768)]
        gaussians: usize,
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        #[arg(long, default_value_t = 2.5)]
        spacing: f64,
        #[command(flatten)]
        build: BuildArgs,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<v3dg_core::Error> for Failure {
    fn from(e: v3dg_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage<T>(r: Result<T, String>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match config::config_path(cli.config.clone()) {
        Some(p) => usage(FileConfig::load(&p))?,
        None => FileConfig::default(),
    };
    let threads = config::pick(cli.threads, &file.threads, 0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Build { input, output, build } => cmd_build(&input, &output, build, &file),
        Command::Render {
            scene,
            output,
            camera,
            view,
        } => cmd_render(&scene, &output, camera.as_deref(), view, &file),
        Command::Bench {
            scene,
            out,
            preset,
            extent,
            taus,
            ssaa,
            width,
            height,
            cull,
            png_dir,
            parallel,
        } => {
            let mut traj = match preset {
                Preset::Desk => TrajectoryConfig::desk(),
                Preset::Full => TrajectoryConfig::full(),
            };
            (traj.width, traj.height) = usage(config::resolution(width, height, &file, (traj.width, traj.height)))?;
            let opts = BenchOptions {
                ssaa: config::pick(ssaa, &file.ssaa, 2),
                cull: match cull {
                    Cull::Off => CullMode::Off,
                    Cull::Instance => CullMode::Instance,
                    Cull::Cluster => CullMode::Cluster,
                },
                png_dir,
                parallel,
                ..Default::default()
            };
            let taus = config::pick(taus, &file.taus, vec![512.0, 1024.0, 2048.0, 4096.0, 8192.0]);
            cmd_bench(&scene, &out, traj, config::pick(extent, &file.extent, 0.0), &taus, opts)
        }
        Command::Info { bundle } => cmd_info(&bundle),
        Command::Serve {
            scene,
            port,
            bind,
            static_dir,
        } => cmd_serve(&scene, config::pick(port, &file.port, 8080), &bind, static_dir, threads),
        Command::Fixture {
            out_dir,
            kind,
            gaussians,
            rows,
            cols,
            spacing,
            build,
        } => cmd_fixture(&out_dir, kind, gaussians, (rows, cols, spacing), build, &file),
    }
}

fn print_layers(bundle: &Bundle) {
    println!("{:>5} {:>9} {:>11} {:>12}", "layer", "clusters", "gaussians", "mean radius");
    for l in 0..bundle.layer_count {
        let clusters: Vec<_> = bundle.layer_clusters(l).collect();
        let radii: Vec<f64> = clusters.iter().map(|(_, c)| c.own.radius).collect();
        println!(
            "{:>5} {:>9} {:>11} {:>12.4}",
            l,
            clusters.len(),
            bundle.layer_gaussian_count(l),
            radii.iter().sum::<f64>() / radii.len().max(1) as f64
        );
    }
}

fn cmd_build(input: &Path, output: &Path, args: BuildArgs, file: &FileConfig) -> Outcome {
    let params = usage(config::build_params(args.flags(), args.scale_expansion, file))?;
    let started = Instant::now();
    let asset = load_ply(input)?;
    log::info!("{}: {} gaussians", input.display(), asset.len());
    let report = |p: Progress| {
        if p.groups_done == p.groups_total {
            log::info!("layer {} done: {} groups", p.layer, p.groups_total);
        }
    };
    let bundle = build_bundle_with_progress(&asset, &params, &report)?;
    write_bundle(&bundle, output)?;
    print_layers(&bundle);
    println!(
        "wrote {} ({} layers, {} clusters, {} gaussians) in {:.1} s",
        output.display(),
        bundle.layer_count,
        bundle.clusters.len(),
        bundle.gaussians.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// A view of the whole scene from above one corner of its bounds.
fn overview_eye(scene: &LoadedScene) -> (Vec3, Vec3) {
    let (lo, hi) = scene.bounds().unwrap_or((Vec3::repeat(-1.0), Vec3::repeat(1.0)));
    let target = (lo + hi) / 2.0;
    let reach = ((hi - lo).norm() / 2.0).max(1e-3);
    (target + Vec3::new(1.0, 0.6, 0.8).normalize() * reach * 2.5, target)
}

fn cmd_render(scene_path: &Path, output: &Path, camera: Option<&str>, view: ViewArgs, file: &FileConfig) -> Outcome {
    let req = FrameRequest {
        tolerance: usage(config::tolerance(view.tau, file))?,
        mode: usage(config::mode(view.mode, file))?,
        clip: usage(config::clip(view.clip, file))?,
        cull: CullMode::Instance,
    };
    let (w, h) = usage(config::resolution(view.width, view.height, file, (1280, 720)))?;
    let fov = usage(config::fov(view.fov, file))?;
    let eye_target = camera.map(config::parse_camera).transpose().map_err(Failure::Usage)?;

    let scene = LoadedScene::load(scene_path)?;
    let (eye, target) = match eye_target {
        Some((e, t)) => (Vec3::from(e), Vec3::from(t)),
        None => overview_eye(&scene),
    };
    let f = focal_from_fov(w, fov);
    let cam = Camera::look_at(eye, target, Vec3::z(), w, h, f, f).map_err(|e| Failure::Usage(e.to_string()))?;
    let frame = render_frame(&scene, &cam, &req, &RasterConfig::default())?;
    write_atomic(output, &frame.image.to_png()?)?;
    eprintln!(
        "{}: {} gaussians ({:.2}% of {}), select {:.2} ms, render {:.2} ms",
        req.mode,
        frame.rendered_count,
        frame.percentage(),
        frame.selection.resident_count,
        frame.selection.select_ms,
        frame.render_ms
    );
    Ok(())
}

fn cmd_bench(
    scene_path: &Path,
    out: &Path,
    traj: TrajectoryConfig,
    extent: f64,
    taus: &[f64],
    opts: BenchOptions,
) -> Outcome {
    if taus.is_empty() {
        return Err(Failure::Usage("at least one tolerance is needed".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Failure::Usage(format!("tolerance {t} must be ≥ 0")));
    }
    if opts.ssaa == 0 {
        return Err(Failure::Usage("supersampling factor must be at least 1".into()));
    }
    if !(extent >= 0.0 && extent.is_finite()) {
        return Err(Failure::Usage(format!("extent {extent} must be positive")));
    }
    let scene = LoadedScene::load(scene_path)?;
    let extent = if extent > 0.0 {
        extent
    } else {
        let (lo, hi) = scene
            .bounds()
            .ok_or_else(|| Failure::Usage("scene has no instances; pass --extent".into()))?;
        1.5 * (hi - lo).norm()
    };
    let trajectory = gen_trajectory(extent, &traj)?;
    let started = Instant::now();
    let records = run_bench(&scene, taus, &trajectory, &opts)?;
    write_csv_file(&records, out)?;

    println!(
        "{:>4} {:>8} {:>8} {:>9} {:>10} {:>10} {:>9} {:>9}",
        "dist", "tau", "pct", "speedup", "ours ms", "van ms", "ours dB", "van dB"
    );
    for ((d, tau), s) in summarize(&records) {
        println!(
            "{:>4} {:>8} {:>8.2} {:>9.2} {:>10.2} {:>10.2} {:>9.2} {:>9.2}",
            d,
            f64::from_bits(tau),
            s.percentage,
            s.vanilla_ms / s.ours_ms.max(1e-9),
            s.ours_ms,
            s.vanilla_ms,
            s.ours_psnr,
            s.vanilla_psnr
        );
    }
    println!(
        "{} cameras x {} tolerances (extent {extent:.3}) in {:.1} s -> {}",
        trajectory.len(),
        taus.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn cmd_info(path: &Path) -> Outcome {
    let bundle = read_bundle(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    bundle
        .validate()
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let p = &bundle.params;
    println!("{}", path.display());
    println!(
        "cluster size {}, group size {}, iterations {}, scale expansion {:.6}, seed {}",
        p.cluster_size, p.group_size, p.iterations, p.scale_expansion, p.seed
    );
    print_layers(&bundle);
    println!(
        "{} layers, {} clusters, {} gaussians: all invariants hold",
        bundle.layer_count,
        bundle.clusters.len(),
        bundle.gaussians.len()
    );
    Ok(())
}

fn cmd_serve(scene_path: &Path, port: u16, bind: &str, static_dir: Option<PathBuf>, threads: usize) -> Outcome {
    let scene = LoadedScene::load(scene_path)?;
    let viewer = Arc::new(Viewer {
        static_dir,
        ..Viewer::new(scene)
    });
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if threads > 0 {
        rt.worker_threads(threads);
    }
    let rt = rt.enable_all().build().map_err(|e| Failure::Runtime(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((bind, port))
            .await
            .map_err(|e| Failure::Runtime(format!("bind {bind}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
        eprintln!("serving {} on ws://{addr}/ws", scene_path.display());
        v3dg_viewer::serve(listener, viewer)
            .await
            .map_err(|e| Failure::Runtime(format!("server: {e}")))
    })
}

fn cmd_fixture(
    out_dir: &Path,
    kind: Kind,
    gaussians: usize,
    (rows, cols, spacing): (usize, usize, f64),
    args: BuildArgs,
    file: &FileConfig,
) -> Outcome {
    if gaussians == 0 || rows == 0 || cols == 0 || !(spacing > 0.0) {
        return Err(Failure::Usage("fixture needs gaussians, rows, cols and spacing above zero".into()));
    }
    let params = usage(config::build_params(args.flags(), args.scale_expansion, file))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", out_dir.display())))?;
    let asset = match kind {
        Kind::Blob => blob(gaussians, 1.0, params.seed),
        Kind::Shell => sphere_shell(gaussians, 1.0, params.seed),
    };
    let ply = out_dir.join("asset.ply");
    write_ply(&asset, &ply)?;
    let bundle_path = out_dir.join("asset.v3dg");
    cmd_build(&ply, &bundle_path, args, file)?;
    let scene = grid_scene("asset", PathBuf::from("asset.v3dg"), rows, cols, spacing, params.seed);
    let scene_path = out_dir.join("scene.json");
    write_scene(&scene, &scene_path)?;
    println!("wrote {}", scene_path.display());
    Ok(())
}
