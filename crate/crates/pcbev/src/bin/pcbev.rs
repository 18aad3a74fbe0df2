//! Command line front end for the dual-branch BEV fusion library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcbev::bench::{emit_report, run_bench, BenchConfig, Kernel, ReportFormat};
use pcbev::cloud::{read_scan, synth_scan, write_scan, ScanStride, SynthProfile};
use pcbev::error::{Error, Result};
use pcbev::feature_map::FeatureMap;
use pcbev::grid::{assign_cells, coverage_stats, CartesianGridSpec, GridSpec, PolarGridSpec};
use pcbev::pillar::project_cloud;
use pcbev::pipeline::{checksum_bytes, labels_to_bytes, run_pipeline, PipelineConfig};
use pcbev::remap::{apply_remap, build_remap_table, RemapMode, RemapTable};
use pcbev::weights::{load_mlp, MlpWeights};

#[derive(Parser)]
#[command(name = "pcbev", about = "Dual-branch BEV feature fusion tools", version)]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScanArgs {
    /// Binary scan file, packed little-endian f32 records.
    #[arg(long)]
    scan: PathBuf,
    /// Read 5-float records (5th value ignored) instead of 4-float.
    #[arg(long)]
    stride5: bool,
}

impl ScanArgs {
    fn load(&self) -> Result<pcbev::cloud::PointCloud> {
        let stride = if self.stride5 { ScanStride::Five } else { ScanStride::Four };
        let r = read_scan(&self.scan, stride)?;
        if r.dropped_nonfinite > 0 {
            eprintln!("dropped {} non-finite points", r.dropped_nonfinite);
        }
        Ok(r.cloud)
    }
}

/// Grid selector: the literal names pick the default BEV layouts, anything
/// else is treated as a path to a JSON grid spec.
fn load_grid(sel: &str) -> Result<GridSpec> {
    match sel {
        "cartesian" => Ok(GridSpec::Cartesian(CartesianGridSpec::default_bev())),
        "polar" => Ok(GridSpec::Polar(PolarGridSpec::default_bev())),
        path => {
            let text = std::fs::read_to_string(Path::new(path))?;
            let grid: GridSpec = serde_json::from_str(&text)?;
            grid.validate()?;
            Ok(grid)
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scan file.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 120_000)]
        points: usize,
        #[arg(long, value_enum, default_value_t = SynthProfile::UniformDisk)]
        profile: SynthProfile,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a scan into a BEV feature map.
    Project {
        #[command(flatten)]
        scan: ScanArgs,
        /// "cartesian", "polar", or a JSON grid spec path.
        #[arg(long, default_value = "cartesian")]
        grid: String,
        /// Encoder weight manifest; a seeded encoder is used when absent.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute a grid-to-grid remap table.
    RemapBuild {
        /// Source grid: "cartesian", "polar", or a JSON grid spec path.
        #[arg(long)]
        src: String,
        /// Destination grid, same forms as --src.
        #[arg(long)]
        dest: String,
        #[arg(long, value_enum, default_value_t = RemapMode::Nearest)]
        mode: RemapMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a precomputed remap table to a feature map.
    RemapApply {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full dual-branch pipeline and write per-point labels.
    Pipeline {
        #[command(flatten)]
        scan: ScanArgs,
        /// Pipeline config JSON; defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output label file, packed little-endian u16.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure interaction kernel latencies.
    Bench {
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 120_000)]
        points: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Comma-separated kernel names; all kernels when absent.
        #[arg(long)]
        kernels: Option<String>,
        #[arg(long, value_enum, default_value_t = RemapMode::Nearest)]
        mode: RemapMode,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report BEV cell occupancy for a scan.
    Coverage {
        #[command(flatten)]
        scan: ScanArgs,
        /// "cartesian", "polar", or a JSON grid spec path.
        #[arg(long, default_value = "cartesian")]
        grid: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cli.threads
    };
    // bench builds its own pool; everything else uses the global one
    if !matches!(cli.command, Command::Bench { .. }) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Synth { seed, points, profile, out } => {
            let cloud = synth_scan(seed, points, profile);
            write_scan(&out, &cloud)?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::Project { scan, grid, encoder, seed, channels, out } => {
            let cloud = scan.load()?;
            let grid = load_grid(&grid)?;
            let enc = match encoder {
                Some(path) => load_mlp(&path)?,
                None => MlpWeights::seeded(&[8, 32, channels], seed)?,
            };
            let (map, assignment) = project_cloud(&cloud, &grid, &enc)?;
            map.write_bfm1(&out)?;
            let cov = coverage_stats(&assignment);
            println!(
                "wrote {}x{}x{} map to {} ({} occupied cells)",
                map.height,
                map.width,
                map.channels,
                out.display(),
                cov.occupied_cells
            );
        }
        Command::RemapBuild { src, dest, mode, out } => {
            let src = load_grid(&src)?;
            let dest = load_grid(&dest)?;
            let table = build_remap_table(&src, &dest, mode)?;
            table.write_rmt1(&out)?;
            println!(
                "wrote {:?} table {}x{} -> {}x{} to {}",
                mode,
                table.src_h,
                table.src_w,
                table.dest_h,
                table.dest_w,
                out.display()
            );
        }
        Command::RemapApply { table, input, out } => {
            let table = RemapTable::read_rmt1(&table)?;
            let map = FeatureMap::read_bfm1(&input)?;
            let result = apply_remap(&table, &map)?;
            result.write_bfm1(&out)?;
            println!(
                "wrote {}x{}x{} map to {}",
                result.height,
                result.width,
                result.channels,
                out.display()
            );
        }
        Command::Pipeline { scan, config, seed, out } => {
            let cloud = scan.load()?;
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    serde_json::from_str::<PipelineConfig>(&text)?
                }
                None => PipelineConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let result = run_pipeline(&cloud, &cfg)?;
            let bytes = labels_to_bytes(&result.labels);
            if let Some(out) = &out {
                std::fs::write(out, &bytes)?;
            }
            println!("points {} checksum {:016x}", result.labels.len(), checksum_bytes(&bytes));
        }
        Command::Bench {
            height,
            width,
            channels,
            points,
            warmup,
            reps,
            kernels,
            mode,
            seed,
            format,
            out,
        } => {
            let kernels = match kernels {
                Some(list) => list
                    .split(',')
                    .map(|s| Kernel::parse(s.trim()))
                    .collect::<Result<Vec<_>>>()?,
                None => Kernel::all(),
            };
            let cfg = BenchConfig {
                height,
                width,
                channels,
                points,
                warmup,
                reps,
                threads,
                kernels,
                remap_mode: mode,
                seed,
            };
            let report = run_bench(&cfg)?;
            let text = emit_report(&report, format)?;
            if let Some(out) = &out {
                std::fs::write(out, &text)?;
            }
            println!("{text}");
        }
        Command::Coverage { scan, grid } => {
            let cloud = scan.load()?;
            let grid = load_grid(&grid)?;
            let assignment = assign_cells(&cloud, &grid);
            let cov = coverage_stats(&assignment);
            println!("{}", serde_json::to_string_pretty(&cov)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
