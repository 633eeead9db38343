use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddsl::harness::{self, GradcheckConfig};
use ddsl::optimizer::{self, FitProblem};
use ddsl::pipeline::{polygon_subdivide, rasterize, Mode, Polygon, RasterizeConfig};
use ddsl::{Error, SimplexMesh};

const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "ddsl", version, about = "Differentiable rasterization of simplex meshes")]
struct Cli {
    /// Run on a single worker thread (overrides DDSL_WORKERS).
    #[arg(long, global = true)]
    single_thread: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a mesh JSON file to a float32 raster with a JSON sidecar.
    Rasterize(RasterizeArgs),
    /// Compare analytic and finite-difference gradients on a random mesh.
    Gradcheck(GradcheckArgs),
    /// Time analytic against finite-difference gradients.
    Bench(BenchArgs),
    /// Fit a mesh, rig or pose to a target by gradient descent.
    Fit(FitArgs),
    /// Refine a polygon by offset edge midpoints.
    Subdivide(SubdivideArgs),
}

#[derive(Args)]
struct RasterizeArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long = "res")]
    resolution: usize,
    /// Gaussian filter standard deviation in cells.
    #[arg(long, default_value_t = 2.0)]
    filter: f64,
    #[arg(long, default_value = "simplex")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    /// Also write an 8-bit PGM (2D single-channel meshes only).
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Reject degenerate elements and open boundaries.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    j: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 12)]
    points: usize,
    #[arg(long = "res", default_value_t = 8)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Simplex degrees, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    j: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Point counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
    points: Vec<usize>,
    /// Resolutions, comma separated.
    #[arg(long = "res", value_delimiter = ',', default_value = "16")]
    resolution: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SubdivideArgs {
    /// Polygon JSON: an array of [x, y] vertices.
    #[arg(long)]
    polygon: PathBuf,
    /// One offset per edge, or a single offset for every edge.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    deltas: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Lib(Error),
    Tolerance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn configure_workers(single_thread: bool) -> Result<(), Error> {
    let workers = if single_thread {
        Some(1)
    } else {
        match std::env::var("DDSL_WORKERS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Some(n),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "DDSL_WORKERS must be an integer >= 1, got {v:?}"
                    )))
                }
            },
            Err(_) => None,
        }
    };
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("could not start worker pool: {e}")))?;
    }
    Ok(())
}

fn cmd_rasterize(a: &RasterizeArgs) -> Result<(), Failure> {
    let mesh = SimplexMesh::read_json(&a.mesh)?;
    for w in mesh.validate(a.strict).iter().filter(|v| v.is_warning()) {
        eprintln!("warning: {w}");
    }
    let config = RasterizeConfig::new(a.resolution, a.filter, a.mode)?.strict(a.strict);
    let raster = rasterize(&mesh, &config)?;
    raster.write_binary(&a.out)?;
    if let Some(p) = &a.pgm {
        raster.write_pgm(p)?;
    }
    println!(
        "wrote {} ({}D, R={}, mean {:.9})",
        a.out.display(),
        raster.dim,
        raster.resolution,
        raster.mean(0)
    );
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let cfg = GradcheckConfig {
        degree: a.j,
        dim: a.d,
        n_points: a.points,
        resolution: a.resolution,
        seed: a.seed,
        step: a.h,
    };
    let report = harness::gradcheck(&cfg)?;
    let err = report.max_relative_error;
    println!(
        "j={} d={} points={} R={} seed={} h={:e}: max relative error {err:e} (tol {:e})",
        a.j, a.d, a.points, a.resolution, a.seed, a.h, a.tol
    );
    if err <= a.tol {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!(
            "gradient error {err:e} exceeds tolerance {:e}",
            a.tol
        )))
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<(), Failure> {
    if a.j.is_empty() || a.points.is_empty() || a.resolution.is_empty() {
        return Err(Error::InvalidArgument("degree, point and resolution lists must be non-empty".into()).into());
    }
    let mut records = Vec::new();
    for &j in &a.j {
        for &r in &a.resolution {
            for &n in &a.points {
                match harness::bench_one(j, a.d, n, r, a.reps, a.seed) {
                    Ok(rec) => {
                        println!(
                            "j={j} d={} points={n} R={r}: analytic {:.3} ms, numeric {:.3} ms, speedup {:.1}x",
                            a.d, rec.analytic_ms_mean, rec.numeric_ms_mean, rec.speedup
                        );
                        records.push(rec);
                    }
                    Err(e) => eprintln!("j={j} d={} points={n} R={r}: failed: {e}", a.d),
                }
            }
        }
    }
    harness::write_bench_csv(&records, &a.csv)?;
    for &j in &a.j {
        for &r in &a.resolution {
            let rows: Vec<_> = records.iter().filter(|x| x.j == j && x.resolution == r).collect();
            if rows.len() < 2 {
                continue;
            }
            let n: Vec<f64> = rows.iter().map(|x| x.n_points as f64).collect();
            let ta: Vec<f64> = rows.iter().map(|x| x.analytic_ms_mean).collect();
            let tn: Vec<f64> = rows.iter().map(|x| x.numeric_ms_mean).collect();
            println!(
                "j={j} R={r}: time ~ points^{:.2} (analytic), points^{:.2} (numeric)",
                harness::log_log_slope(&n, &ta),
                harness::log_log_slope(&n, &tn)
            );
        }
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let problem = FitProblem::read_json(&a.problem)?;
    let (objective, result) = optimizer::fit(&problem)?;
    optimizer::write_fit_outputs(&objective, &result, problem.snapshot_every, &a.out)?;
    let last = result.rows.last().map_or(0, |r| r.iteration);
    println!(
        "{last} iterations, loss {:e} -> {:e} ({:?})",
        result.rows[0].loss,
        result.final_loss(),
        result.stop
    );
    Ok(())
}

fn cmd_subdivide(a: &SubdivideArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.polygon).map_err(Error::from)?;
    let poly: Polygon = serde_json::from_str(&text).map_err(Error::from)?;
    let poly = Polygon::new(poly.vertices)?;
    let deltas = if a.deltas.len() == 1 {
        vec![a.deltas[0]; poly.len()]
    } else {
        a.deltas.clone()
    };
    let out = polygon_subdivide(&poly, &deltas)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&out).map_err(Error::from)?).map_err(Error::from)?;
    println!("wrote {} vertices to {}", out.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<(), Failure> {
        configure_workers(cli.single_thread)?;
        match &cli.command {
            Command::Rasterize(a) => cmd_rasterize(a),
            Command::Gradcheck(a) => cmd_gradcheck(a),
            Command::Bench(a) => cmd_bench(a),
            Command::Fit(a) => cmd_fit(a),
            Command::Subdivide(a) => cmd_subdivide(a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Tolerance(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_TOLERANCE)
        }
    }
}
