//! `pe3d` command line: render analytic scenes, export PE grids, compute
//! similarity maps, sweep the ray-discrepancy model, run ablation suites
//! and gradient checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use pe3d_core::analysis::{cohesion_metric, similarity_map};
use pe3d_core::bins::DepthBins;
use pe3d_core::detector::{ablation_suite, SuiteKind, SuiteRow, TrainConfig};
use pe3d_core::encode::{
    pe2d, pe_camera_ray, pe_lidar_ray, pe_oracle_point, FeatureGridSpec, MlpParams, PeGrid,
    SineSpec,
};
use pe3d_core::error::Error;
use pe3d_core::geometry::{project, PerceptionRegion};
use pe3d_core::io::{
    read_depth, similarity_to_csv, similarity_to_pgm, write_depth, write_pe_grid, Annotations, Rig,
};
use pe3d_core::ray::{discrepancy, RayGeometry};
use pe3d_core::sim::{default_rig, render, SimScene};

#[derive(Parser)]
#[command(
    name = "pe3d",
    about = "3D positional-encoding toolkit for surround-view detection at desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene through a rig into per-camera depth maps (DPTH) and
    /// an annotations JSON.
    Render(RenderArgs),
    /// Export per-camera PE grids as PE3D binaries.
    Encode(EncodeArgs),
    /// Compute a similarity map against a reference cell (CSV + PGM).
    Similarity(SimilarityArgs),
    /// Sweep the camera-ray/sensor-ray discrepancy over depth (CSV).
    DiscrepancySweep(SweepArgs),
    /// Run an ablation suite and write a results CSV.
    Ablate(AblateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Rig configuration JSON, or `default[:d_lc[:delta]]` for the
    /// built-in six-camera rig.
    #[arg(long, default_value = "default")]
    rig: String,
    /// Deterministic seed (the PE3D_SEED environment variable overrides).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GridArgs {
    /// Feature-grid rows per camera.
    #[arg(long, default_value_t = 16)]
    grid_height: usize,
    /// Feature-grid columns per camera.
    #[arg(long, default_value_t = 44)]
    grid_width: usize,
    /// Image pixels per feature cell.
    #[arg(long, default_value_t = 16)]
    stride: u32,
}

impl GridArgs {
    fn spec(&self) -> FeatureGridSpec {
        FeatureGridSpec::new(self.grid_height, self.grid_width, self.stride)
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Scene JSON (list of primitives).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for DPTH files and annotations.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// PE variant: pe2d | camera-ray | lidar-ray | oracle-point | depth-point.
    #[arg(long)]
    variant: String,
    /// Depth bins as method:min:max:count (camera-ray).
    #[arg(long, default_value = "lid:1:61:64")]
    bins: String,
    /// Fixed depth in meters (lidar-ray).
    #[arg(long, default_value_t = 15.0)]
    fixed_d: f64,
    /// Scene JSON; required by oracle-point (rendered depth is the oracle).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Directory of per-camera DPTH files; required by depth-point.
    #[arg(long)]
    depth_dir: Option<PathBuf>,
    /// PE channel count C.
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Encoder MLP hidden width (default 4C).
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimilarityArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Scene JSON.
    #[arg(long)]
    scene: PathBuf,
    /// PE variant: pe2d | camera-ray | lidar-ray | oracle-point.
    #[arg(long, default_value = "oracle-point")]
    variant: String,
    #[arg(long, default_value = "lid:1:61:64")]
    bins: String,
    #[arg(long, default_value_t = 15.0)]
    fixed_d: f64,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long)]
    hidden: Option<usize>,
    /// Reference cell as view:u:v, or `auto-object` for the largest
    /// object's center pixel.
    #[arg(long, default_value = "auto-object")]
    r#ref: String,
    /// Output CSV path.
    #[arg(long)]
    out_csv: PathBuf,
    /// Directory for per-view PGM images (optional).
    #[arg(long)]
    out_pgm_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Camera-ray azimuth in degrees.
    #[arg(long)]
    alpha: f64,
    /// Camera offset along the view direction, meters.
    #[arg(long)]
    dlc: f64,
    /// Camera offset perpendicular to the view direction, meters.
    #[arg(long)]
    delta: f64,
    /// Depth sweep as min:max:steps.
    #[arg(long)]
    d_range: String,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Which suite: table1 | table2 | table3 | table6.
    #[arg(long)]
    suite: String,
    /// Number of seeds per configuration.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Training steps per run.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return ExitCode::SUCCESS;
                }
                _ => 1,
            };
            eprint!("{e}");
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Render(args) => run_render(args),
        Command::Encode(args) => run_encode(args),
        Command::Similarity(args) => run_similarity(args),
        Command::DiscrepancySweep(args) => run_sweep(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// PE3D_SEED overrides the command-line seed when set.
fn resolve_seed(flag_seed: u64) -> Result<u64, Error> {
    match std::env::var("PE3D_SEED") {
        Ok(v) => v.parse().map_err(|_| Error::Config {
            path: "PE3D_SEED".into(),
            message: format!("not an integer: '{v}'"),
        }),
        Err(_) => Ok(flag_seed),
    }
}

fn load_rig(spec: &str) -> Result<Rig, Error> {
    if let Some(rest) = spec.strip_prefix("default") {
        let mut d_lc = 0.8;
        let mut delta = 0.3;
        let parts: Vec<&str> = rest.trim_start_matches(':').split(':').collect();
        let parse = |s: &str, what: &str| -> Result<f64, Error> {
            s.parse().map_err(|_| Error::Config {
                path: format!("rig.{what}"),
                message: format!("not a number: '{s}'"),
            })
        };
        if !rest.is_empty() {
            if !parts.is_empty() && !parts[0].is_empty() {
                d_lc = parse(parts[0], "d_lc")?;
            }
            if parts.len() > 1 {
                delta = parse(parts[1], "delta")?;
            }
        }
        let cameras = default_rig(d_lc, delta);
        return Ok(Rig {
            names: (0..cameras.len()).map(|i| format!("cam{i}")).collect(),
            cameras,
            region: PerceptionRegion::default(),
        });
    }
    let text = fs::read_to_string(spec)?;
    pe3d_core::io::parse_rig(&text)
}

fn load_scene(path: &Path, region: &PerceptionRegion) -> Result<SimScene, Error> {
    let text = fs::read_to_string(path)?;
    let scene: SimScene = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: "scene".into(),
        message: e.to_string(),
    })?;
    scene.validate(region)?;
    Ok(scene)
}

fn run_render(args: RenderArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.common.seed)?;
    let rig = load_rig(&args.common.rig)?;
    let scene = load_scene(&args.scene, &rig.region)?;
    let grid = args.grid.spec();
    println!(
        "config: render rig={} scene={} grid={}x{} stride={} out={} seed={seed}",
        args.common.rig,
        args.scene.display(),
        grid.height,
        grid.width,
        grid.stride,
        args.out_dir.display()
    );
    fs::create_dir_all(&args.out_dir)?;
    for (name, cam) in rig.names.iter().zip(&rig.cameras) {
        let view = render(&scene, cam, grid)?;
        let mut file = fs::File::create(args.out_dir.join(format!("{name}.dpth")))?;
        write_depth(&mut file, &view.depth)?;
    }
    let annotations = Annotations {
        objects: scene
            .objects()
            .iter()
            .map(|(class, center)| pe3d_core::io::AnnotationObject {
                class: *class,
                center: [center.x, center.y, center.z],
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&annotations).expect("annotations serialize");
    fs::write(args.out_dir.join("annotations.json"), json)?;
    Ok(ExitCode::SUCCESS)
}

enum CliVariant {
    Pe2d,
    CameraRay(DepthBins),
    LidarRay(f64),
    OraclePoint,
    DepthPoint,
}

fn parse_variant(
    variant: &str,
    bins: &str,
    fixed_d: f64,
) -> Result<CliVariant, clap::error::Error> {
    let usage = |msg: String| clap::error::Error::raw(ErrorKind::InvalidValue, msg + "\n");
    match variant {
        "pe2d" => Ok(CliVariant::Pe2d),
        "camera-ray" => DepthBins::parse_spec(bins)
            .map(CliVariant::CameraRay)
            .map_err(|e| usage(e.to_string())),
        "lidar-ray" => {
            if fixed_d <= 0.0 {
                return Err(usage(format!("--fixed-d must be positive, got {fixed_d}")));
            }
            Ok(CliVariant::LidarRay(fixed_d))
        }
        "oracle-point" => Ok(CliVariant::OraclePoint),
        "depth-point" => Ok(CliVariant::DepthPoint),
        other => Err(usage(format!(
            "unknown variant '{other}' (expected pe2d|camera-ray|lidar-ray|oracle-point|depth-point)"
        ))),
    }
}

fn usage_exit(e: clap::error::Error) -> ExitCode {
    eprint!("{e}");
    ExitCode::from(1)
}

fn run_encode(args: EncodeArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.common.seed)?;
    let variant = match parse_variant(&args.variant, &args.bins, args.fixed_d) {
        Ok(v) => v,
        Err(e) => return Ok(usage_exit(e)),
    };
    let rig = load_rig(&args.common.rig)?;
    let grid = args.grid.spec();
    let spec = SineSpec::for_channels(args.channels)?;
    let hidden = args.hidden.unwrap_or(4 * args.channels);
    println!(
        "config: encode rig={} variant={} bins={} fixed_d={} channels={} hidden={hidden} grid={}x{} stride={} out={} seed={seed}",
        args.common.rig,
        args.variant,
        args.bins,
        args.fixed_d,
        args.channels,
        grid.height,
        grid.width,
        grid.stride,
        args.out_dir.display()
    );
    fs::create_dir_all(&args.out_dir)?;
    let scene = match (&variant, &args.scene) {
        (CliVariant::OraclePoint, Some(path)) => Some(load_scene(path, &rig.region)?),
        (CliVariant::OraclePoint, None) => {
            return Ok(usage_exit(clap::error::Error::raw(
                ErrorKind::MissingRequiredArgument,
                "oracle-point requires --scene\n",
            )))
        }
        _ => None,
    };
    if matches!(variant, CliVariant::DepthPoint) && args.depth_dir.is_none() {
        return Ok(usage_exit(clap::error::Error::raw(
            ErrorKind::MissingRequiredArgument,
            "depth-point requires --depth-dir\n",
        )));
    }
    for (name, cam) in rig.names.iter().zip(&rig.cameras) {
        let pe: PeGrid = match &variant {
            CliVariant::Pe2d => pe2d(grid, &spec),
            CliVariant::CameraRay(bins) => {
                let mlp = MlpParams::ray_encoder(args.channels, hidden, &spec, bins.count(), seed);
                pe_camera_ray(cam, bins, &mlp, &rig.region, &spec, grid)?
            }
            CliVariant::LidarRay(d) => {
                let mlp = MlpParams::ray_encoder(args.channels, hidden, &spec, 1, seed);
                pe_lidar_ray(cam, *d, &mlp, &rig.region, &spec, grid)?
            }
            CliVariant::OraclePoint => {
                let mlp = MlpParams::point_encoder(args.channels, hidden, &spec, seed);
                let view = render(scene.as_ref().expect("checked above"), cam, grid)?;
                pe_oracle_point(&view.depth, cam, &rig.region, &mlp, &spec, grid.stride)?
            }
            CliVariant::DepthPoint => {
                let mlp = MlpParams::point_encoder(args.channels, hidden, &spec, seed);
                let depth_path = args
                    .depth_dir
                    .as_ref()
                    .expect("checked above")
                    .join(format!("{name}.dpth"));
                let mut file = fs::File::open(&depth_path)?;
                let depth = read_depth(&mut file)?;
                pe3d_core::encode::pe_depth_point(
                    &depth,
                    cam,
                    &rig.region,
                    &mlp,
                    &spec,
                    grid.stride,
                )?
            }
        };
        let mut file = fs::File::create(args.out_dir.join(format!("{name}.pe3d")))?;
        write_pe_grid(&mut file, &pe)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_similarity(args: SimilarityArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.common.seed)?;
    let variant = match parse_variant(&args.variant, &args.bins, args.fixed_d) {
        Ok(CliVariant::DepthPoint) => {
            return Ok(usage_exit(clap::error::Error::raw(
                ErrorKind::InvalidValue,
                "similarity supports pe2d|camera-ray|lidar-ray|oracle-point\n",
            )))
        }
        Ok(v) => v,
        Err(e) => return Ok(usage_exit(e)),
    };
    let rig = load_rig(&args.common.rig)?;
    let scene = load_scene(&args.scene, &rig.region)?;
    let grid = args.grid.spec();
    let spec = SineSpec::for_channels(args.channels)?;
    let hidden = args.hidden.unwrap_or(4 * args.channels);
    println!(
        "config: similarity rig={} scene={} variant={} ref={} channels={} hidden={hidden} seed={seed}",
        args.common.rig,
        args.scene.display(),
        args.variant,
        args.r#ref,
        args.channels
    );
    let views: Vec<_> = rig
        .cameras
        .iter()
        .map(|cam| render(&scene, cam, grid))
        .collect::<Result<_, _>>()?;
    let pes: Vec<PeGrid> = rig
        .cameras
        .iter()
        .zip(&views)
        .map(|(cam, view)| -> Result<PeGrid, Error> {
            Ok(match &variant {
                CliVariant::Pe2d => pe2d(grid, &spec),
                CliVariant::CameraRay(bins) => {
                    let mlp =
                        MlpParams::ray_encoder(args.channels, hidden, &spec, bins.count(), seed);
                    pe_camera_ray(cam, bins, &mlp, &rig.region, &spec, grid)?
                }
                CliVariant::LidarRay(d) => {
                    let mlp = MlpParams::ray_encoder(args.channels, hidden, &spec, 1, seed);
                    pe_lidar_ray(cam, *d, &mlp, &rig.region, &spec, grid)?
                }
                CliVariant::OraclePoint => {
                    let mlp = MlpParams::point_encoder(args.channels, hidden, &spec, seed);
                    pe_oracle_point(&view.depth, cam, &rig.region, &mlp, &spec, grid.stride)?
                }
                CliVariant::DepthPoint => unreachable!("rejected above"),
            })
        })
        .collect::<Result<_, _>>()?;

    let (ref_view, ref_u, ref_v) = if args.r#ref == "auto-object" {
        auto_object_reference(&scene, &rig, grid)?
    } else {
        let parts: Vec<&str> = args.r#ref.split(':').collect();
        if parts.len() != 3 {
            return Ok(usage_exit(clap::error::Error::raw(
                ErrorKind::InvalidValue,
                "--ref must be view:u:v or auto-object\n",
            )));
        }
        let parse = |s: &str| -> Result<usize, Error> {
            s.parse().map_err(|_| Error::Config {
                path: "ref".into(),
                message: format!("not an index: '{s}'"),
            })
        };
        (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)
    };
    println!("reference: view={ref_view} u={ref_u} v={ref_v}");

    let map = similarity_map(&pes, ref_view, ref_u, ref_v)?;
    fs::write(&args.out_csv, similarity_to_csv(&map))?;
    if let Some(dir) = &args.out_pgm_dir {
        fs::create_dir_all(dir)?;
        for (name, view) in rig.names.iter().zip(&map.views) {
            fs::write(dir.join(format!("{name}.pgm")), similarity_to_pgm(view))?;
        }
    }
    // With a known object, report how cohesive the similarity is.
    let mut object_mask = Vec::new();
    for view in &views {
        object_mask.extend(view.object_mask(&scene));
    }
    if object_mask.iter().any(|m| *m) {
        match cohesion_metric(&map, &object_mask) {
            Ok(m) => println!(
                "cohesion: in_object={:.6} background={:.6} margin={:.6}",
                m.in_object_mean, m.background_mean, m.margin
            ),
            Err(e) => println!("cohesion: unavailable ({e})"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// The largest object's center pixel: project every object center into
/// every view and pick the object with the most rendered cells; reference
/// is its center's cell in the view that sees most of it.
fn auto_object_reference(
    scene: &SimScene,
    rig: &Rig,
    grid: FeatureGridSpec,
) -> Result<(usize, usize, usize), Error> {
    let mut best: Option<(usize, usize, usize, usize)> = None; // cells, view, u, v
    for (view_idx, cam) in rig.cameras.iter().enumerate() {
        let view = render(scene, cam, grid)?;
        for (prim_idx, prim) in scene.primitives.iter().enumerate() {
            if !prim.object {
                continue;
            }
            let cells = view
                .prim
                .iter()
                .filter(|&&p| p == prim_idx as i32)
                .count();
            if cells == 0 {
                continue;
            }
            let Ok((u, v, _)) = project(prim.shape.center(), cam) else {
                continue;
            };
            let (cu, cv) = (
                (u / grid.stride as f64) as usize,
                (v / grid.stride as f64) as usize,
            );
            if cu >= grid.width || cv >= grid.height || !view.depth.is_valid(cv, cu) {
                continue;
            }
            if best.map_or(true, |(c, ..)| cells > c) {
                best = Some((cells, view_idx, cu, cv));
            }
        }
    }
    best.map(|(_, view, u, v)| (view, u, v))
        .ok_or_else(|| Error::Config {
            path: "ref".into(),
            message: "auto-object found no visible object".into(),
        })
}

fn run_sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.seed)?;
    let parts: Vec<&str> = args.d_range.split(':').collect();
    if parts.len() != 3 {
        return Ok(usage_exit(clap::error::Error::raw(
            ErrorKind::InvalidValue,
            "--d-range must be min:max:steps\n",
        )));
    }
    let parse_f = |s: &str| -> Result<f64, Error> {
        s.parse().map_err(|_| Error::Config {
            path: "d_range".into(),
            message: format!("not a number: '{s}'"),
        })
    };
    let d_min = parse_f(parts[0])?;
    let d_max = parse_f(parts[1])?;
    let steps: usize = parts[2].parse().map_err(|_| Error::Config {
        path: "d_range.steps".into(),
        message: format!("not an integer: '{}'", parts[2]),
    })?;
    if steps < 2 || d_min <= 0.0 || d_max <= d_min {
        return Err(Error::Config {
            path: "d_range".into(),
            message: format!("need 0 < min < max and steps >= 2, got {}", args.d_range),
        });
    }
    println!(
        "config: discrepancy-sweep alpha={}deg dlc={} delta={} d_range={} seed={seed}",
        args.alpha, args.dlc, args.delta, args.d_range
    );
    let alpha = args.alpha.to_radians();
    let mut csv = String::from("d,Dis\n");
    for i in 0..steps {
        let d = d_min + (d_max - d_min) * i as f64 / (steps - 1) as f64;
        let dis = discrepancy(&RayGeometry::new(alpha, d, args.dlc, args.delta)?);
        csv.push_str(&format!("{d},{dis}\n"));
    }
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_ablate(args: AblateArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.seed)?;
    let kind = SuiteKind::parse(&args.suite)?;
    if args.seeds == 0 {
        return Ok(usage_exit(clap::error::Error::raw(
            ErrorKind::InvalidValue,
            "--seeds must be at least 1\n",
        )));
    }
    println!(
        "config: ablate suite={} seeds={} steps={} out={} seed={seed}",
        args.suite,
        args.seeds,
        args.steps,
        args.out.display()
    );
    let base = TrainConfig {
        steps: args.steps,
        seed,
        ..TrainConfig::default()
    };
    let rows = ablation_suite(kind, args.seeds, &base)?;
    let mut csv = String::from(SuiteRow::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(&args.out, csv)?;
    println!("wrote {} rows", rows.len());
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let seed = resolve_seed(args.seed)?;
    println!("config: gradcheck seed={seed}");
    let reports = pe3d_core::gradcheck::run_all(seed)?;
    let mut all_pass = true;
    let mut stdout = std::io::stdout().lock();
    for report in &reports {
        writeln!(stdout, "{}", report.line())?;
        all_pass &= report.passed();
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::Config {
            path: "gradcheck".into(),
            message: "one or more gradient checks failed".into(),
        })
    }
}
