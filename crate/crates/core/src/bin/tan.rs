//! Terrain-aided navigation simulator CLI.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime scenario error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tan_core::bench::{bench_csv, bench_predictors, BenchMethod};
use tan_core::predict::make_scan_pattern;
use tan_core::scenario::{load_scenario, run_scenario, ScenarioError};
use tan_core::terrain::{
    parse_ascii_grid, sample_bilinear, serialize_ascii_grid, synth_terrain, TerrainClass,
    TerrainKind,
};

#[derive(Parser)]
#[command(name = "tan", about = "Terrain-aided navigation simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario preset (S1..S12) or a JSON scenario file.
    Run(RunArgs),
    /// Benchmark the measurement predictors on synthetic rugged terrain.
    Bench(BenchArgs),
    /// DEM utilities.
    Dem(DemArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Preset id (S1..S12) or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for trace.csv / rmse.json / config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Hypothetical poses per prediction sweep.
    #[arg(long, default_value_t = 500)]
    particles: usize,
    /// Points per scan pattern (arranged as close to square as possible).
    #[arg(long, default_value_t = 16)]
    points: usize,
    /// Comma-separated methods: raycast_triangles,raycast_bisection,sliding.
    #[arg(long, default_value = "raycast_triangles,raycast_bisection,sliding")]
    methods: String,
    /// Timed sweeps per method.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Raycast range limit, metres.
    #[arg(long, default_value_t = 20_000.0)]
    t_max: f64,
    /// Output directory for bench.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemArgs {
    #[command(subcommand)]
    command: DemCommand,
}

#[derive(Subcommand)]
enum DemCommand {
    /// Synthesize a DEM and write it as an ASCII grid.
    Synth {
        /// Terrain kind: rugged or flat.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 4242)]
        seed: u64,
        /// Output ASCII grid path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000.0)]
        extent_m: f64,
        #[arg(long, default_value_t = 30.0)]
        cell_m: f64,
        #[arg(long, default_value_t = 200.0)]
        base_m: f64,
    },
    /// Print summary statistics of an ASCII grid DEM.
    Info { file: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    if let Some(s) = e.downcast_ref::<ScenarioError>() {
        match s {
            ScenarioError::UnknownPreset(_)
            | ScenarioError::Schema(_)
            | ScenarioError::Io(_)
            | ScenarioError::Layout(_) => 2,
            _ => 3,
        }
    } else if e.downcast_ref::<ConfigError>().is_some() {
        2
    } else {
        3
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Dem(args) => match args.command {
            DemCommand::Synth { kind, seed, out, extent_m, cell_m, base_m } => {
                cmd_dem_synth(&kind, seed, &out, extent_m, cell_m, base_m)
            }
            DemCommand::Info { file } => cmd_dem_info(&file),
        },
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (trace, rmse) = run_scenario(&cfg)?;
    println!("scenario {} seed {} ({} measurement steps)", cfg.id, cfg.seed, trace.rows.len());
    println!(
        "rmse full        x {:8.4} m  y {:8.4} m  z {:8.4} m",
        rmse.full[0], rmse.full[1], rmse.full[2]
    );
    println!(
        "rmse last quarter x {:8.4} m  y {:8.4} m  z {:8.4} m",
        rmse.last_quarter[0], rmse.last_quarter[1], rmse.last_quarter[2]
    );
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("trace.csv"), trace.to_csv())?;
        std::fs::write(dir.join("rmse.json"), serde_json::to_string_pretty(&rmse)?)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn grid_shape(points: usize) -> (usize, usize) {
    let mut rows = (points as f64).sqrt().floor() as usize;
    while rows > 1 && points % rows != 0 {
        rows -= 1;
    }
    (rows.max(1), points / rows.max(1))
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let methods: Vec<BenchMethod> = args
        .methods
        .split(',')
        .map(|s| {
            BenchMethod::parse(s.trim())
                .ok_or_else(|| ConfigError(format!("unknown bench method `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if args.particles == 0 || args.steps == 0 || args.points == 0 {
        return Err(ConfigError("particles, points and steps must be >= 1".into()).into());
    }
    let kind = TerrainKind {
        kind: TerrainClass::Rugged,
        seed: 4242,
        extent_m: 16_000.0,
        base_elevation_m: 200.0,
    };
    let dem = synth_terrain(&kind, 30.0, 535, 535);
    let (rows, cols) = grid_shape(args.points);
    let pattern = make_scan_pattern(rows, cols, 12.0);
    let rows_out = bench_predictors(
        &dem,
        &pattern,
        args.particles,
        args.steps,
        args.t_max,
        &methods,
        1000.0,
    );
    let csv = bench_csv(&rows_out);
    print!("{csv}");
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("bench.csv"), csv)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_dem_synth(
    kind: &str,
    seed: u64,
    out: &PathBuf,
    extent_m: f64,
    cell_m: f64,
    base_m: f64,
) -> anyhow::Result<()> {
    let class = match kind {
        "rugged" => TerrainClass::Rugged,
        "flat" => TerrainClass::Flat,
        other => return Err(ConfigError(format!("unknown terrain kind `{other}`")).into()),
    };
    if !(cell_m > 0.0) || !(extent_m > 0.0) {
        return Err(ConfigError("extent and cell size must be positive".into()).into());
    }
    let n = (extent_m / cell_m).round() as usize + 1;
    if n < 2 {
        return Err(ConfigError("extent must cover at least one cell".into()).into());
    }
    let tk = TerrainKind { kind: class, seed, extent_m, base_elevation_m: base_m };
    let dem = synth_terrain(&tk, cell_m, n, n);
    std::fs::write(out, serialize_ascii_grid(&dem))?;
    println!("wrote {} ({}x{} nodes, cell {} m)", out.display(), n, n, cell_m);
    Ok(())
}

fn cmd_dem_info(file: &PathBuf) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(file)?;
    let dem = parse_ascii_grid(&text).map_err(|e| ConfigError(e.to_string()))?;
    let (lo, hi) = dem.z_range().unwrap_or((f64::NAN, f64::NAN));
    println!("file        {}", file.display());
    println!("size        {} cols x {} rows", dem.n_cols(), dem.n_rows());
    println!("cell        {} m", dem.cell());
    println!("origin      ({}, {})", dem.x_origin(), dem.y_origin());
    println!("extent      {} m x {} m", dem.extent_x(), dem.extent_y());
    println!("elevation   [{lo:.2}, {hi:.2}] m (relief {:.2} m)", hi - lo);
    println!("nodata      {} ({} cells)", dem.nodata(), dem.nodata_count());
    let cx = dem.x_origin() + 0.5 * dem.extent_x();
    let cy = dem.y_origin() + 0.5 * dem.extent_y();
    if let Ok(z) = sample_bilinear(&dem, cx, cy) {
        println!("center      {z:.2} m at ({cx:.0}, {cy:.0})");
    }
    Ok(())
}
