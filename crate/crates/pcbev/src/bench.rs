//! Latency harness comparing remap-based fusion against the point-based
//! grid-sample + scatter-back interaction on identical inputs.
//!
//! Remap tables and per-point coordinates are precomputed outside the timed
//! region: both interaction styles have fixed correspondences that a real
//! pipeline computes once. Each kernel's output is checksummed so the work
//! cannot be optimized away and so a timed run can be compared against the
//! untimed library call.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{synth_scan, SynthProfile};
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::grid::{assign_cells, continuous_coords, CartesianGridSpec, GridSpec, PolarGridSpec};
use crate::interaction::{grid_sample, scatter_back_parallel, Reduce};
use crate::pipeline::checksum_f32;
use crate::remap::{apply_remap, build_remap_table, fused_output_features, RemapMode};

pub const BENCH_SCHEMA: &str = "bench_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    GridSample,
    ScatterBack,
    PointInteraction,
    RemapApply,
    FusedOutput,
}

impl Kernel {
    pub fn all() -> Vec<Kernel> {
        vec![
            Kernel::GridSample,
            Kernel::ScatterBack,
            Kernel::PointInteraction,
            Kernel::RemapApply,
            Kernel::FusedOutput,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::GridSample => "grid_sample",
            Kernel::ScatterBack => "scatter_back",
            Kernel::PointInteraction => "point_interaction",
            Kernel::RemapApply => "remap_apply",
            Kernel::FusedOutput => "fused_output",
        }
    }

    pub fn parse(name: &str) -> Result<Kernel> {
        Kernel::all()
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown kernel '{name}'")))
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub points: usize,
    pub warmup: usize,
    pub reps: usize,
    pub threads: usize,
    pub kernels: Vec<Kernel>,
    pub remap_mode: RemapMode,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            height: 512,
            width: 512,
            channels: 64,
            points: 120_000,
            warmup: 2,
            reps: 10,
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            kernels: Kernel::all(),
            remap_mode: RemapMode::Nearest,
            seed: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 10 {
            return Err(Error::Config("bench needs at least 10 repetitions".into()));
        }
        if self.warmup < 1 {
            return Err(Error::Config("bench needs at least 1 warmup iteration".into()));
        }
        if self.kernels.is_empty() {
            return Err(Error::Config("no kernels selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelStats {
    pub kernel: String,
    pub min_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub mean_us: f64,
    pub checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchEnv {
    pub threads: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub points: usize,
    pub build_profile: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatencyReport {
    pub schema: String,
    pub env: BenchEnv,
    /// Remap table construction time, reported separately and never folded
    /// into apply time.
    pub table_build_us: f64,
    pub kernels: Vec<KernelStats>,
}

impl LatencyReport {
    pub fn stats_for(&self, kernel: Kernel) -> Option<&KernelStats> {
        self.kernels.iter().find(|k| k.kernel == kernel.name())
    }
}

fn stats(samples: &mut [f64]) -> (f64, f64, f64, f64) {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    let min = samples[0];
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    let p95 = samples[(((n as f64) * 0.95).ceil() as usize).clamp(1, n) - 1];
    let mean = samples.iter().sum::<f64>() / n as f64;
    (min, median, p95, mean)
}

/// The closure returns the raw kernel output; checksumming happens outside
/// the timed region so every kernel pays only its own cost.
fn time_kernel(
    name: &str,
    warmup: usize,
    reps: usize,
    mut f: impl FnMut() -> Vec<f32>,
) -> Result<KernelStats> {
    let mut checksum = 0u64;
    for _ in 0..warmup {
        checksum = checksum_f32(&f());
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = f();
        samples.push(t0.elapsed().as_secs_f64() * 1e6);
        let c = checksum_f32(&out);
        if c != checksum {
            return Err(Error::Config(format!(
                "kernel {name} produced a different checksum across repetitions"
            )));
        }
    }
    let (min_us, median_us, p95_us, mean_us) = stats(&mut samples);
    Ok(KernelStats {
        kernel: name.into(),
        min_us,
        median_us,
        p95_us,
        mean_us,
        checksum: format!("{checksum:016x}"),
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<LatencyReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let cart = GridSpec::Cartesian(CartesianGridSpec {
        x_min: -51.2,
        x_max: 51.2,
        y_min: -51.2,
        y_max: 51.2,
        width: cfg.width,
        height: cfg.height,
    });
    let polar = GridSpec::Polar(PolarGridSpec {
        rho_min: 0.0,
        rho_max: 51.2,
        n_rho: cfg.height,
        n_phi: cfg.width,
        swap_atan2_args: false,
    });
    let (ph, pw) = polar.dims();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f_polar = FeatureMap::from_data(
        ph,
        pw,
        cfg.channels,
        (0..ph * pw * cfg.channels).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )?;
    let f_cart = FeatureMap::from_data(
        cfg.height,
        cfg.width,
        cfg.channels,
        (0..cfg.height * cfg.width * cfg.channels)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect(),
    )?;
    let cloud = synth_scan(cfg.seed, cfg.points, SynthProfile::UniformDisk);

    // fixed correspondences, computed once
    let t0 = Instant::now();
    let table = build_remap_table(&polar, &cart, cfg.remap_mode)?;
    let table_build_us = t0.elapsed().as_secs_f64() * 1e6;
    let polar_coords = continuous_coords(&cloud, &polar);
    let cart_assignment = assign_cells(&cloud, &cart);

    let sampled_polar = grid_sample(&f_polar, &polar_coords)?;
    let compact_sampled = compact_valid(&sampled_polar, &cart_assignment.valid, cfg.channels);

    let mut kernels = Vec::new();
    pool.install(|| -> Result<()> {
        for kernel in &cfg.kernels {
            let s = match kernel {
                Kernel::GridSample => time_kernel("grid_sample", cfg.warmup, cfg.reps, || {
                    grid_sample(&f_polar, &polar_coords).unwrap()
                })?,
                Kernel::ScatterBack => time_kernel("scatter_back", cfg.warmup, cfg.reps, || {
                    scatter_back_parallel(
                        &compact_sampled,
                        &cart_assignment,
                        cfg.height,
                        cfg.width,
                        cfg.channels,
                        Reduce::Max,
                    )
                    .unwrap()
                    .data
                })?,
                Kernel::PointInteraction => {
                    time_kernel("point_interaction", cfg.warmup, cfg.reps, || {
                        let sampled = grid_sample(&f_polar, &polar_coords).unwrap();
                        let compact =
                            compact_valid(&sampled, &cart_assignment.valid, cfg.channels);
                        scatter_back_parallel(
                            &compact,
                            &cart_assignment,
                            cfg.height,
                            cfg.width,
                            cfg.channels,
                            Reduce::Max,
                        )
                        .unwrap()
                        .data
                    })?
                }
                Kernel::RemapApply => time_kernel("remap_apply", cfg.warmup, cfg.reps, || {
                    apply_remap(&table, &f_polar).unwrap().data
                })?,
                Kernel::FusedOutput => time_kernel("fused_output", cfg.warmup, cfg.reps, || {
                    fused_output_features(&f_cart, &f_polar, &table, &cart, &cloud).unwrap()
                })?,
            };
            kernels.push(s);
        }
        Ok(())
    })?;

    Ok(LatencyReport {
        schema: BENCH_SCHEMA.into(),
        env: BenchEnv {
            threads: cfg.threads,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
            points: cfg.points,
            build_profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
        },
        table_build_us,
        kernels,
    })
}

fn compact_valid(values: &[f32], valid: &[bool], channels: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(values.len());
    for (k, &v) in valid.iter().enumerate() {
        if v {
            out.extend_from_slice(&values[k * channels..(k + 1) * channels]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn emit_report(report: &LatencyReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Csv => {
            let mut out = String::from("kernel,min_us,median_us,p95_us,mean_us,checksum\n");
            for k in &report.kernels {
                out.push_str(&format!(
                    "{},{:.3},{:.3},{:.3},{:.3},{}\n",
                    k.kernel, k.min_us, k.median_us, k.p95_us, k.mean_us, k.checksum
                ));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> BenchConfig {
        BenchConfig {
            height: 64,
            width: 64,
            channels: 8,
            points: 1000,
            warmup: 1,
            reps: 10,
            threads: 2,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn ordering_invariant_holds() {
        let report = run_bench(&small_cfg()).unwrap();
        assert_eq!(report.kernels.len(), 5);
        for k in &report.kernels {
            assert!(k.min_us <= k.median_us, "{k:?}");
            assert!(k.median_us <= k.p95_us, "{k:?}");
        }
    }

    #[test]
    fn checksums_reproducible_across_runs() {
        let cfg = small_cfg();
        let a = run_bench(&cfg).unwrap();
        let b = run_bench(&cfg).unwrap();
        for (x, y) in a.kernels.iter().zip(&b.kernels) {
            assert_eq!(x.checksum, y.checksum, "kernel {}", x.kernel);
        }
    }

    #[test]
    fn checksums_thread_count_independent() {
        let mut cfg = small_cfg();
        cfg.kernels = vec![Kernel::GridSample, Kernel::RemapApply, Kernel::ScatterBack];
        cfg.threads = 1;
        let a = run_bench(&cfg).unwrap();
        cfg.threads = 4;
        let b = run_bench(&cfg).unwrap();
        for (x, y) in a.kernels.iter().zip(&b.kernels) {
            assert_eq!(x.checksum, y.checksum, "kernel {}", x.kernel);
        }
    }

    #[test]
    fn timed_matches_untimed_library_call() {
        let cfg = small_cfg();
        let report = run_bench(&cfg).unwrap();
        // recompute remap_apply untimed with identical inputs
        let cart = GridSpec::Cartesian(CartesianGridSpec {
            x_min: -51.2,
            x_max: 51.2,
            y_min: -51.2,
            y_max: 51.2,
            width: cfg.width,
            height: cfg.height,
        });
        let polar = GridSpec::Polar(PolarGridSpec {
            rho_min: 0.0,
            rho_max: 51.2,
            n_rho: cfg.height,
            n_phi: cfg.width,
            swap_atan2_args: false,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (ph, pw) = polar.dims();
        let f_polar = FeatureMap::from_data(
            ph,
            pw,
            cfg.channels,
            (0..ph * pw * cfg.channels).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let table = build_remap_table(&polar, &cart, cfg.remap_mode).unwrap();
        let expect = checksum_f32(&apply_remap(&table, &f_polar).unwrap().data);
        let got = &report.stats_for(Kernel::RemapApply).unwrap().checksum;
        assert_eq!(*got, format!("{expect:016x}"));
    }

    #[test]
    fn report_json_round_trip() {
        let report = run_bench(&small_cfg()).unwrap();
        let json = emit_report(&report, ReportFormat::Json).unwrap();
        let back: LatencyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.schema, report.schema);
        assert_eq!(back.env, report.env);
        // float parsing is allowed a few ulps of slack
        assert!((back.table_build_us - report.table_build_us).abs() < 1e-6);
        for (x, y) in back.kernels.iter().zip(&report.kernels) {
            assert_eq!(x.kernel, y.kernel);
            assert_eq!(x.checksum, y.checksum);
            assert!((x.median_us - y.median_us).abs() < 1e-6);
        }
    }

    #[test]
    fn report_csv_one_row_per_kernel() {
        let report = run_bench(&small_cfg()).unwrap();
        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + report.kernels.len());
        assert!(csv.starts_with("kernel,"));
    }

    #[test]
    fn golden_csv_fixture() {
        let report = LatencyReport {
            schema: BENCH_SCHEMA.into(),
            env: BenchEnv {
                threads: 1,
                height: 4,
                width: 4,
                channels: 1,
                points: 10,
                build_profile: "release".into(),
            },
            table_build_us: 12.5,
            kernels: vec![KernelStats {
                kernel: "remap_apply".into(),
                min_us: 1.0,
                median_us: 2.0,
                p95_us: 3.0,
                mean_us: 2.25,
                checksum: "00000000deadbeef".into(),
            }],
        };
        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        assert_eq!(
            csv,
            "kernel,min_us,median_us,p95_us,mean_us,checksum\n\
             remap_apply,1.000,2.000,3.000,2.250,00000000deadbeef\n"
        );
    }

    #[test]
    fn too_few_reps_rejected() {
        let cfg = BenchConfig {
            reps: 5,
            ..small_cfg()
        };
        assert!(run_bench(&cfg).is_err());
    }

    #[test]
    fn unknown_kernel_name_rejected() {
        assert!(Kernel::parse("warp_drive").is_err());
        assert_eq!(Kernel::parse("remap_apply").unwrap(), Kernel::RemapApply);
    }
}
