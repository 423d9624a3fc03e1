use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cubesolve_core::admm::{reconstruct, AdmmConfig, DenoiserKind};
use cubesolve_core::dataset::{
    generate_scene, step_edge_scene, write_channel_pngs, write_rgb_png, SceneSpec, DEFAULT_SCENE_SEED,
    DEFAULT_STEP_EDGE_SEED,
};
use cubesolve_core::format::{read_cube, read_masks, read_measurement, write_cube, write_masks, write_measurement};
use cubesolve_core::forward::{add_noise, forward};
use cubesolve_core::masks::{
    layout_masks_with, load_calibration, synthesize_library, LayoutMode, DEFAULT_LIBRARY_SEED, DEFAULT_UNIT_COUNT,
};
use cubesolve_core::metrics::evaluate;
use cubesolve_core::perpixel::{reconstruct_perpixel, PerPixelConfig};
use cubesolve_core::types::{Dims, MaskStack, Measurement, NoiseSpec, SpectralCube, WavelengthGrid};
use cubesolve_core::unet::{denoise, load_weights, save_weights, WeightBundle};

const THREADS_ENV: &str = "CUBESOLVE_THREADS";

#[derive(Parser)]
#[command(name = "cubesolve", version, about = "Snapshot spectral imaging: simulate, reconstruct, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene, masks and a (noisy) measurement.
    Simulate(SimulateArgs),
    /// Recover a cube from a measurement and its masks.
    Reconstruct(ReconstructArgs),
    /// Time both reconstruction methods.
    Bench(BenchArgs),
    /// Write a WUNB weights file with random or zero parameters.
    InitWeights(InitWeightsArgs),
    /// Run one U-net stage on a cube (no normalization).
    Denoise(DenoiseArgs),
    /// Render a cube to RGB and per-channel PNGs.
    Render(RenderArgs),
}

#[derive(Clone, Copy, Debug)]
struct Size {
    width: usize,
    height: usize,
    bands: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("expected WxHxB, got {s:?}"))?;
        match nums[..] {
            [w, h, b] if w > 0 && h > 0 && b > 0 => Ok(Size {
                width: w,
                height: h,
                bands: b,
            }),
            _ => Err(format!("expected WxHxB with positive entries, got {s:?}")),
        }
    }
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.bands)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SceneKind {
    Voronoi,
    Step,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, default_value = "64x64x8")]
    size: Size,
    /// Scene seed; defaults to the pinned seed of the chosen scene kind.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SceneKind::Voronoi)]
    scene: SceneKind,
    #[arg(long, default_value_t = 8)]
    regions: usize,
}

impl SceneArgs {
    fn build(&self) -> Result<SpectralCube> {
        let grid = WavelengthGrid::visible(self.size.bands)?;
        Ok(match self.scene {
            SceneKind::Voronoi => generate_scene(&SceneSpec {
                width: self.size.width,
                height: self.size.height,
                grid,
                regions: self.regions,
                seed: self.seed.unwrap_or(DEFAULT_SCENE_SEED),
                ..SceneSpec::default()
            })?,
            SceneKind::Step => step_edge_scene(
                self.size.width,
                self.size.height,
                grid,
                self.seed.unwrap_or(DEFAULT_STEP_EDGE_SEED),
            )?,
        })
    }
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long, default_value_t = DEFAULT_UNIT_COUNT)]
    units: usize,
    #[arg(long, default_value_t = DEFAULT_LIBRARY_SEED)]
    library_seed: u64,
    /// `random` or `repeat:P` for a tiled P x P super-pixel.
    #[arg(long, default_value = "random")]
    layout: String,
    /// Use a measured SMSK calibration instead of a synthetic library.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

impl MaskArgs {
    fn build(&self, size: Size) -> Result<MaskStack> {
        if let Some(path) = &self.calibration {
            let masks = load_calibration(path, size.bands)?;
            if masks.width() != size.width || masks.height() != size.height {
                bail!("calibration is {} but the scene is {size}", masks.dims());
            }
            return Ok(masks);
        }
        let mode = match self.layout.as_str() {
            "random" => LayoutMode::Random,
            other => match other.strip_prefix("repeat:").map(str::parse::<usize>) {
                Some(Ok(period)) => LayoutMode::Repeating { period },
                _ => bail!("unknown layout {other:?} (expected random or repeat:P)"),
            },
        };
        let lib = synthesize_library(self.units, WavelengthGrid::visible(size.bands)?, self.library_seed)?;
        Ok(layout_masks_with(&lib, size.width, size.height, mode)?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    masks: MaskArgs,
    /// Upper bound of the noise level; σ is drawn from [0, noise] and scaled by max|y|.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Admm,
    Perpixel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct AdmmArgs {
    #[arg(long, default_value_t = cubesolve_core::admm::DEFAULT_STAGES)]
    stages: usize,
    /// tv, identity or learned.
    #[arg(long, default_value = "tv")]
    denoiser: String,
    /// WUNB weights for the learned denoiser, or `none`.
    #[arg(long)]
    weights: Option<String>,
    /// Constant γ for every stage (TV and identity paths).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    literal_eq4: OnOff,
}

impl AdmmArgs {
    fn config(&self) -> Result<AdmmConfig> {
        let kind = DenoiserKind::from_str(&self.denoiser)?;
        let mut cfg = match kind {
            DenoiserKind::Tv => AdmmConfig::tv(self.stages),
            DenoiserKind::Identity => AdmmConfig::identity(self.stages),
            DenoiserKind::Learned => {
                let path = match self.weights.as_deref() {
                    None | Some("none") => bail!("the learned denoiser needs --weights PATH"),
                    Some(p) => p,
                };
                let bundle = load_weights(path).with_context(|| format!("loading weights from {path}"))?;
                let mut cfg = AdmmConfig::learned(Arc::new(bundle));
                if self.stages < cfg.stages {
                    cfg.stages = self.stages;
                    cfg.gamma.truncate(self.stages);
                }
                cfg
            }
        };
        if let Some(g) = self.gamma {
            cfg = cfg.with_gamma(g);
        }
        cfg.literal_eq4 = self.literal_eq4 == OnOff::On;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PerPixelArgs {
    #[arg(long, default_value_t = 1e-2)]
    reg_lambda: f64,
    /// Neighbourhood half-width.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Solve on a grid this many times denser than the band grid.
    #[arg(long, default_value_t = 1)]
    refine: usize,
}

impl PerPixelArgs {
    fn config(&self) -> Result<PerPixelConfig> {
        let cfg = PerPixelConfig {
            n: self.n,
            reg_lambda: self.reg_lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            refine: self.refine,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, value_enum, default_value_t = Method::Admm)]
    method: Method,
    /// Directory written by `simulate`; supplies any input not given explicitly.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    measurement: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Ground truth for the metrics report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    admm: AdmmArgs,
    #[command(flatten)]
    perpixel: PerPixelArgs,
    /// Edge neighbourhood for the mosaic probe.
    #[arg(long, default_value_t = 2)]
    edge_dist: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64x64x8")]
    sizes: Vec<Size>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Admm, Method::Perpixel])]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_SCENE_SEED)]
    seed: u64,
    #[command(flatten)]
    admm: AdmmArgs,
    #[command(flatten)]
    perpixel: PerPixelArgs,
    /// Also time with every available worker.
    #[arg(long)]
    parallel: bool,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    bands: usize,
    #[arg(long, default_value_t = cubesolve_core::admm::DEFAULT_STAGES)]
    stages: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// All-zero parameters instead of He-uniform draws.
    #[arg(long)]
    zeros: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    stage: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-channel grayscale PNGs.
    #[arg(long)]
    channels: Option<PathBuf>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let truth = args.scene.build()?;
    let masks = args.masks.build(args.scene.size)?;
    let clean = forward(&truth, &masks)?;
    let (y, sigma) = add_noise(&clean, &NoiseSpec::new(args.noise, args.noise_seed)?)?;

    create_dir(&args.out)?;
    write_cube(&truth, args.out.join("truth.scub"))?;
    write_masks(&masks, args.out.join("masks.smsk"))?;
    write_measurement(&y, args.out.join("measurement.smes"))?;
    let meta = json!({
        "size": args.scene.size.to_string(),
        "scene": format!("{:?}", args.scene.scene).to_lowercase(),
        "scene_seed": args.scene.seed,
        "regions": args.scene.regions,
        "units": args.masks.units,
        "library_seed": args.masks.library_seed,
        "layout": args.masks.layout,
        "noise_max": args.noise,
        "noise_seed": args.noise_seed,
        "sigma": sigma,
    });
    fs::write(args.out.join("simulation.json"), serde_json::to_string_pretty(&meta)? + "\n")
        .context("writing simulation.json")?;
    println!("sigma={sigma}");
    println!("wrote {}", args.out.display());
    Ok(())
}

fn input_path(explicit: &Option<PathBuf>, from: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| from.as_ref().map(|d| d.join(name)).filter(|p| p.exists()))
}

fn run_method(
    method: Method,
    y: &Measurement,
    masks: &MaskStack,
    admm: &AdmmConfig,
    pp: &PerPixelConfig,
) -> Result<(SpectralCube, Option<String>)> {
    Ok(match method {
        Method::Admm => {
            let out = reconstruct(y, masks, admm)?;
            let trace = out.trace_csv();
            (out.cube, Some(trace))
        }
        Method::Perpixel => (reconstruct_perpixel(y, masks, pp)?, None),
    })
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<()> {
    let Some(y_path) = input_path(&args.measurement, &args.from, "measurement.smes") else {
        bail!("no measurement given (use --measurement or --from)");
    };
    let Some(m_path) = input_path(&args.masks, &args.from, "masks.smsk") else {
        bail!("no masks given (use --masks or --from)");
    };
    let y = read_measurement(&y_path)?;
    let masks = read_masks(&m_path)?;
    let truth = input_path(&args.truth, &args.from, "truth.scub").map(read_cube).transpose()?;
    let admm = args.admm.config()?;
    let pp = args.perpixel.config()?;

    let start = Instant::now();
    let (cube, trace) = run_method(args.method, &y, &masks, &admm, &pp)?;
    let elapsed = start.elapsed().as_secs_f64();

    create_dir(&args.out)?;
    write_cube(&cube, args.out.join("recon.scub"))?;
    write_rgb_png(&cube, args.out.join("recon.png"))?;
    write_channel_pngs(&cube, args.out.join("channels"))?;
    if let Some(trace) = trace {
        fs::write(args.out.join("trace.csv"), trace).context("writing trace.csv")?;
    }
    println!("method={:?} time_s={elapsed:.4}", args.method);
    if let Some(truth) = truth {
        let report = evaluate(&truth, &cube, args.edge_dist)?;
        fs::write(args.out.join("metrics.csv"), report.to_csv()).context("writing metrics.csv")?;
        if let Some(f) = report.get("fidelity", "all") {
            println!("mean_fidelity={f:.6}");
        }
        if let Some(p) = report.get("psnr_db", "all") {
            println!("psnr_db={p:.3}");
        }
        if let (Some(e), Some(f)) = (report.get("fidelity", "edge"), report.get("fidelity", "flat")) {
            println!("mosaic_probe edge_mean={e:.6} flat_mean={f:.6}");
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Timing {
    size: Size,
    method: Method,
    workers: usize,
    seconds: f64,
    fidelity: f64,
}

fn time_method(
    workers: usize,
    method: Method,
    repeats: usize,
    y: &Measurement,
    masks: &MaskStack,
    truth: &SpectralCube,
    admm: &AdmmConfig,
    pp: &PerPixelConfig,
) -> Result<(f64, f64)> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| {
        let mut times = Vec::with_capacity(repeats);
        let mut fid = 0.0;
        for _ in 0..repeats {
            let start = Instant::now();
            let (cube, _) = run_method(method, y, masks, admm, pp)?;
            times.push(start.elapsed().as_secs_f64());
            fid = cubesolve_core::metrics::mean_fidelity_map(truth, &cube, None)?.mean;
        }
        Ok((median(times), fid))
    })
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let admm = args.admm.config()?;
    let pp = args.perpixel.config()?;
    let mut worker_counts = vec![1];
    if args.parallel {
        let all = rayon::current_num_threads();
        if all > 1 {
            worker_counts.push(all);
        }
    }
    let mut rows = Vec::new();
    for &size in &args.sizes {
        let grid = WavelengthGrid::visible(size.bands)?;
        let truth = generate_scene(&SceneSpec {
            width: size.width,
            height: size.height,
            grid,
            seed: args.seed,
            ..SceneSpec::default()
        })?;
        let lib = synthesize_library(DEFAULT_UNIT_COUNT, grid, DEFAULT_LIBRARY_SEED)?;
        let masks = layout_masks_with(&lib, size.width, size.height, LayoutMode::Random)?;
        let y = forward(&truth, &masks)?;
        for &workers in &worker_counts {
            for &method in &args.methods {
                let (seconds, fidelity) = time_method(workers, method, args.repeats, &y, &masks, &truth, &admm, &pp)?;
                rows.push(Timing {
                    size,
                    method,
                    workers,
                    seconds,
                    fidelity,
                });
            }
        }
    }

    let mut csv = String::from("size,method,workers,seconds_per_cube,seconds_per_channel,mean_fidelity\n");
    println!(
        "{:<12} {:<9} {:>7} {:>14} {:>16} {:>9}",
        "size", "method", "workers", "s/cube", "s/channel", "fidelity"
    );
    for r in &rows {
        let per_channel = r.seconds / r.size.bands as f64;
        let method = format!("{:?}", r.method).to_lowercase();
        let _ = writeln!(
            csv,
            "{},{method},{},{:.6e},{:.6e},{:.6}",
            r.size, r.workers, r.seconds, per_channel, r.fidelity
        );
        println!(
            "{:<12} {:<9} {:>7} {:>14.6e} {:>16.6e} {:>9.5}",
            r.size.to_string(),
            method,
            r.workers,
            r.seconds,
            per_channel,
            r.fidelity
        );
    }
    for &size in &args.sizes {
        for &workers in &worker_counts {
            let find = |m: Method| {
                rows.iter()
                    .find(|r| r.method == m && r.workers == workers && r.size.to_string() == size.to_string())
                    .map(|r| r.seconds)
            };
            if let (Some(a), Some(p)) = (find(Method::Admm), find(Method::Perpixel)) {
                println!("speedup {size} workers={workers}: perpixel/admm = {:.2}x", p / a);
            }
        }
    }
    if let Some(path) = &args.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_init_weights(args: &InitWeightsArgs) -> Result<()> {
    let gammas = vec![args.gamma; args.stages];
    let bundle = if args.zeros {
        WeightBundle::zeros(args.bands, gammas)?
    } else {
        WeightBundle::random(args.bands, gammas, args.seed)?
    };
    save_weights(&bundle, &args.out)?;
    println!(
        "wrote {} ({} stages, {} tensors)",
        args.out.display(),
        bundle.stage_count(),
        bundle.tensors().len()
    );
    Ok(())
}

fn cmd_denoise(args: &DenoiseArgs) -> Result<()> {
    let bundle = load_weights(&args.weights)?;
    let input = read_cube(&args.input)?;
    let out = denoise(&input, &bundle, args.stage)?;
    write_cube(&out, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let cube = read_cube(&args.input)?;
    write_rgb_png(&cube, &args.out)?;
    if let Some(dir) = &args.channels {
        write_channel_pngs(&cube, dir)?;
    }
    let d: Dims = cube.dims();
    println!("rendered {d} to {}", args.out.display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Bench(a) => cmd_bench(a),
        Command::InitWeights(a) => cmd_init_weights(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Render(a) => cmd_render(a),
    }
}
