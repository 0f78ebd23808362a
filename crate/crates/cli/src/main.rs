//! Command-line driver: scene generation, stereo depth sweeps, frame fusion,
//! NMS and pooling benchmarks, and metric evaluation. Every subcommand writes
//! its artifacts under `--out-dir` and is byte-reproducible under
//! `--deterministic` with a fixed `--seed` (benchmark timing files excepted,
//! as timings are measurements).
//!
//! Exit codes: 0 success, 2 usage error, 3 data error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};

use parallax_core::bev_pool::{
    bench_pool, pool_v1, pool_v2, random_inputs, AccumMode, BenchSize, BevGridSpec, PoolBenchRow,
};
use parallax_core::fusion::{fuse_sequence, make_plan, FrameRecord, ShortfallPolicy};
use parallax_core::geometry::CameraModel;
use parallax_core::grid::{FeatureMap, Grid2};
use parallax_core::io;
use parallax_core::metrics::{center_recall, depth_metrics};
use parallax_core::nms::{
    bench_nms, circle_nms, rotated_iou_nms, size_aware_circle_nms, NmsConfig,
};
use parallax_core::stereo::{
    expected_depth, relative_geometry, stereo_pipeline, OffsetField, SourceView, StereoConfig,
};
use parallax_core::synth::{
    camera_for_ego, generate_scene, make_nms_corpus, motion_offsets, render, SynthConfig,
    TrajectoryConfig,
};

#[derive(Parser)]
#[command(name = "parallax", version, about = "Temporal-stereo depth and BEV kernel driver")]
struct Cli {
    /// RNG seed for every generated artifact.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Deterministic accumulation everywhere (bit-stable outputs).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its frame sequence.
    Synth(SynthArgs),
    /// Sweep stereo refinement iterations and report depth metrics.
    Stereo(StereoArgs),
    /// Fuse a frame sequence into a BEV grid.
    Fuse(FuseArgs),
    /// Run the NMS variants over a corpus and flag disagreements.
    Nms(NmsArgs),
    /// Benchmark the two voxel-pooling variants.
    PoolBench(PoolBenchArgs),
    /// Evaluate depth grids or box sets against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of frames to render.
    #[arg(long, default_value_t = 4)]
    frames: usize,
    /// Feature noise amplitude override.
    #[arg(long)]
    noise: Option<f64>,
    /// Ego forward speed, m/s.
    #[arg(long)]
    forward_speed: Option<f64>,
    /// Ego lateral speed, m/s.
    #[arg(long)]
    lateral_speed: Option<f64>,
    /// Seconds between frames.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct StereoArgs {
    /// Sequence manifest (defaults to <out-dir>/manifest.toml).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Largest iteration count of the sweep (0..=N rows).
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    /// Number of source frames matched against (newest first; default all).
    #[arg(long)]
    sources: Option<usize>,
    /// Extra feature noise added at load time.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Use the rendered ground-truth motion offsets when present.
    #[arg(long)]
    gt_offsets: bool,
    /// Dump final mu/weight/distribution binaries.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Frames per stereo group.
    #[arg(long, default_value_t = 2)]
    group_size: usize,
    /// Frames skipped between groups.
    #[arg(long, default_value_t = 0)]
    interval: usize,
    /// Use only the newest N frames of the sequence.
    #[arg(long)]
    frames: Option<usize>,
    /// Pad missing groups with zero grids instead of failing.
    #[arg(long)]
    pad: bool,
    #[arg(long, default_value_t = 120)]
    nx: usize,
    #[arg(long, default_value_t = 80)]
    ny: usize,
    #[arg(long, default_value_t = 0.5)]
    cell_size: f64,
    #[arg(long, default_value_t = 0.0)]
    origin_x: f64,
    #[arg(long, default_value_t = -16.0)]
    origin_y: f64,
}

#[derive(Args)]
struct NmsArgs {
    /// Bundled corpus layout name.
    #[arg(long, conflicts_with = "corpus")]
    layout: Option<String>,
    /// Box corpus CSV path.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of boxes for the random layout.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Size-aware scale factor.
    #[arg(long)]
    w: Option<f64>,
    /// Plain circle NMS radius, meters.
    #[arg(long)]
    radius: Option<f64>,
    /// Ignore class ids.
    #[arg(long)]
    class_agnostic: bool,
    /// IoU threshold of the reference variant.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Also time the three variants.
    #[arg(long)]
    bench: bool,
    /// Timed repetitions for --bench.
    #[arg(long, default_value_t = 30)]
    reps: usize,
}

#[derive(Args)]
struct PoolBenchArgs {
    /// Problem sizes as "P,B,C,nx,ny" separated by ';'.
    #[arg(long, default_value = "1000,16,16,64,64;20000,32,32,128,128")]
    sizes: String,
    /// Timed repetitions per variant and size.
    #[arg(long, default_value_t = 30)]
    reps: usize,
    /// Add the large reference size (P=1e6, B=32, C=64).
    #[arg(long)]
    big: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted depth grid (binary).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth depth grid (binary).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Optional 0/1 mask grid (binary).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Predicted boxes CSV.
    #[arg(long)]
    pred_boxes: Option<PathBuf>,
    /// Ground-truth boxes CSV.
    #[arg(long)]
    gt_boxes: Option<PathBuf>,
    /// Recall thresholds, meters.
    #[arg(long, default_value = "0.5,1,2,4")]
    thresholds: String,
}

/// Values settable from the --config file; flags take precedence.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default)]
struct FileConfig {
    stereo: Option<StereoConfig>,
    synth: Option<SynthConfig>,
    nms: Option<NmsConfig>,
}

struct Ctx {
    seed: u64,
    deterministic: bool,
    out_dir: PathBuf,
    stereo_cfg: StereoConfig,
    synth_cfg: SynthConfig,
    nms_cfg: NmsConfig,
}

impl Ctx {
    fn accum_mode(&self) -> AccumMode {
        if self.deterministic {
            AccumMode::Deterministic
        } else {
            AccumMode::Parallel
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Usage-shaped errors (bad flag combinations) exit 2, everything
            // else is a data error.
            if err.to_string().starts_with("usage:") {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    let file_cfg: FileConfig = match &cli.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?,
        None => FileConfig::default(),
    };
    fs::create_dir_all(&cli.out_dir)?;
    let ctx = Ctx {
        seed: cli.seed,
        deterministic: cli.deterministic,
        out_dir: cli.out_dir.clone(),
        stereo_cfg: file_cfg.stereo.unwrap_or_default(),
        synth_cfg: file_cfg.synth.unwrap_or_default(),
        nms_cfg: file_cfg.nms.unwrap_or_default(),
    };
    ctx.stereo_cfg.validate()?;
    ctx.nms_cfg.validate()?;
    match cli.command {
        Command::Synth(args) => cmd_synth(&ctx, args),
        Command::Stereo(args) => cmd_stereo(&ctx, args),
        Command::Fuse(args) => cmd_fuse(&ctx, args),
        Command::Nms(args) => cmd_nms(&ctx, args),
        Command::PoolBench(args) => cmd_pool_bench(&ctx, args),
        Command::Eval(args) => cmd_eval(&ctx, args),
    }
}

// ---------------------------------------------------------------- synth ----

fn cmd_synth(ctx: &Ctx, args: SynthArgs) -> anyhow::Result<()> {
    if args.frames == 0 {
        anyhow::bail!("usage: --frames must be at least 1");
    }
    let mut synth_cfg = ctx.synth_cfg.clone();
    if let Some(noise) = args.noise {
        synth_cfg.noise = noise;
    }
    let traj = TrajectoryConfig {
        n_frames: args.frames,
        dt: args.dt.unwrap_or(TrajectoryConfig::default().dt),
        forward_speed: args
            .forward_speed
            .unwrap_or(TrajectoryConfig::default().forward_speed),
        lateral_speed: args
            .lateral_speed
            .unwrap_or(TrajectoryConfig::default().lateral_speed),
        ..TrajectoryConfig::default()
    };
    let scene = generate_scene(ctx.seed, &synth_cfg);

    // Group sources by the default pairing so each source frame can carry
    // motion offsets toward its group reference.
    let group_ref: Vec<Option<usize>> = {
        let mut refs = vec![None; args.frames];
        if let Ok(plan) = make_plan(args.frames.max(2), 2, 0, ShortfallPolicy::Pad) {
            for g in &plan.groups {
                for &s in &g.sources {
                    if s < args.frames {
                        refs[s] = Some(g.reference);
                    }
                }
            }
        }
        refs
    };

    let mut manifest = io::SequenceManifest::default();
    let mut rendered = Vec::new();
    for i in 0..args.frames {
        let t = i as f64 * traj.dt;
        let cam = camera_for_ego(&traj.ego_at(i), &synth_cfg);
        rendered.push((t, cam.clone(), render(&scene, &cam, t, &synth_cfg)));
    }
    for i in 0..args.frames {
        let (t, cam, frame) = &rendered[i];
        let stem = format!("frame_{i:02}");
        io::write_camera(&ctx.path(&format!("{stem}.camera.toml")), cam)?;
        let f = &frame.record.features;
        io::write_grid_bin(
            &ctx.path(&format!("{stem}.features.bin")),
            f.height,
            f.width,
            f.channels,
            f.values(),
        )?;
        io::write_grid2(&ctx.path(&format!("{stem}.mono_mu.bin")), &frame.record.mono_mu)?;
        io::write_grid2(&ctx.path(&format!("{stem}.mono_sigma.bin")), &frame.record.mono_sigma)?;
        io::write_grid2(&ctx.path(&format!("{stem}.gt_depth.bin")), &frame.gt_depth)?;
        let offsets = match group_ref[i] {
            Some(r) if r < rendered.len() => motion_offsets(
                &scene,
                &rendered[r].1,
                rendered[r].0,
                cam,
                *t,
                &synth_cfg,
            ),
            _ => OffsetField::zeros(f.height, f.width),
        };
        io::write_grid2(&ctx.path(&format!("{stem}.offsets_du.bin")), &offsets.du)?;
        io::write_grid2(&ctx.path(&format!("{stem}.offsets_dv.bin")), &offsets.dv)?;
        manifest.frames.push(io::FrameEntry {
            timestamp: *t,
            camera: format!("{stem}.camera.toml"),
            features: format!("{stem}.features.bin"),
            mono_mu: format!("{stem}.mono_mu.bin"),
            mono_sigma: format!("{stem}.mono_sigma.bin"),
            gt_depth: Some(format!("{stem}.gt_depth.bin")),
            gt_offsets_du: Some(format!("{stem}.offsets_du.bin")),
            gt_offsets_dv: Some(format!("{stem}.offsets_dv.bin")),
        });
    }
    let anchor = traj.ego_at(args.frames - 1);
    io::write_transform(&ctx.path("anchor.toml"), &anchor)?;
    manifest.anchor = Some("anchor.toml".into());
    io::write_manifest(&ctx.path("manifest.toml"), &manifest)?;

    println!(
        "scene seed={} frames={} landmarks={} objects={} size={}x{} noise={}",
        ctx.seed,
        args.frames,
        scene.landmarks.len(),
        scene.objects.len(),
        synth_cfg.width,
        synth_cfg.height,
        synth_cfg.noise
    );
    Ok(())
}

// --------------------------------------------------------------- loading ----

struct LoadedFrame {
    record: FrameRecord,
    gt_depth: Option<Grid2<f64>>,
    offsets: OffsetField,
}

fn load_sequence(manifest_path: &Path) -> anyhow::Result<(Vec<LoadedFrame>, Option<PathBuf>)> {
    let manifest = io::read_manifest(manifest_path)?;
    if manifest.frames.is_empty() {
        anyhow::bail!("{}: manifest has no frames", manifest_path.display());
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let cam: CameraModel = io::read_camera(&io::manifest_relative(manifest_path, &entry.camera))?;
        let (h, w, c, values) =
            io::read_grid_bin(&io::manifest_relative(manifest_path, &entry.features))?;
        let features = FeatureMap::new(h, w, c, values)?;
        let mono_mu = io::read_grid2(&io::manifest_relative(manifest_path, &entry.mono_mu))?;
        let mono_sigma = io::read_grid2(&io::manifest_relative(manifest_path, &entry.mono_sigma))?;
        let gt_depth = match &entry.gt_depth {
            Some(p) => Some(io::read_grid2(&io::manifest_relative(manifest_path, p))?),
            None => None,
        };
        let offsets = match (&entry.gt_offsets_du, &entry.gt_offsets_dv) {
            (Some(du), Some(dv)) => OffsetField {
                du: io::read_grid2(&io::manifest_relative(manifest_path, du))?,
                dv: io::read_grid2(&io::manifest_relative(manifest_path, dv))?,
            },
            _ => OffsetField::zeros(h, w),
        };
        frames.push(LoadedFrame {
            record: FrameRecord { timestamp: entry.timestamp, camera: cam, features, mono_mu, mono_sigma },
            gt_depth,
            offsets,
        });
    }
    let anchor = manifest.anchor.as_ref().map(|p| io::manifest_relative(manifest_path, p));
    Ok((frames, anchor))
}

fn manifest_path(ctx: &Ctx, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| ctx.path("manifest.toml"))
}

// --------------------------------------------------------------- stereo ----

fn cmd_stereo(ctx: &Ctx, args: StereoArgs) -> anyhow::Result<()> {
    let path = manifest_path(ctx, args.manifest);
    let (mut frames, _) = load_sequence(&path)?;
    if frames.len() < 2 {
        anyhow::bail!("stereo needs at least two frames, manifest has {}", frames.len());
    }
    if args.noise > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5EED_0F5E);
        for frame in &mut frames {
            for v in frame.record.features.values_mut() {
                *v += (args.noise * rng.random::<f64>().mul_add(2.0, -1.0)) as f32;
            }
        }
    }

    let (reference, sources) = frames.split_last().unwrap();
    // Rendered offset fields pair each source with its default group
    // reference (the next newer frame), so --gt-offsets defaults to the one
    // source that pairing is valid for.
    let default_sources = if args.gt_offsets { 1 } else { sources.len() };
    let n_sources = args.sources.unwrap_or(default_sources).clamp(1, sources.len());
    let zero =
        OffsetField::zeros(reference.record.features.height, reference.record.features.width);
    let views: Vec<SourceView> = sources
        .iter()
        .rev()
        .take(n_sources)
        .map(|s| SourceView {
            features: &s.record.features,
            geometry: relative_geometry(&reference.record.camera, &s.record.camera),
            offsets: if args.gt_offsets { &s.offsets } else { &zero },
            mono_mu: &s.record.mono_mu,
        })
        .collect();

    let gt = reference
        .gt_depth
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("reference frame has no ground-truth depth"))?;
    let mask = gt.map(|v| v > 0.0);

    let mut csv = String::from("iterations,mean_abs_err,");
    csv.push_str(parallax_core::metrics::DepthEvalReport::CSV_HEADER);
    csv.push('\n');
    for iterations in 0..=args.iterations {
        let cfg = StereoConfig { iterations, ..ctx.stereo_cfg };
        let out = stereo_pipeline(
            &reference.record.features,
            &reference.record.mono_mu,
            &reference.record.mono_sigma,
            &views,
            &cfg,
        )?;
        let pred = expected_depth(&out.fused);
        let report = depth_metrics(&pred, gt, &mask)?;
        let mean_abs = {
            let mut sum = 0.0;
            let mut n = 0usize;
            for i in 0..pred.len() {
                if mask.as_slice()[i] {
                    sum += (pred.as_slice()[i] - gt.as_slice()[i]).abs();
                    n += 1;
                }
            }
            sum / n.max(1) as f64
        };
        csv.push_str(&format!("{iterations},{mean_abs:.9},{}\n", report.to_csv()));
        println!(
            "iterations={iterations} mean_abs_err={mean_abs:.4} abs_rel={:.4} rmse={:.4}",
            report.abs_rel, report.rmse
        );
        if args.dump && iterations == args.iterations {
            io::write_grid2(&ctx.path("stereo_mu.bin"), &out.mu_final)?;
            io::write_grid2(&ctx.path("stereo_weight.bin"), &out.weight)?;
            io::write_distribution(&ctx.path("stereo_fused_dist.bin"), &out.fused)?;
            io::write_grid2(&ctx.path("stereo_expected.bin"), &pred)?;
            let mu32: Vec<f32> = out.mu_final.as_slice().iter().map(|&v| v as f32).collect();
            io::write_grid_csv(
                &ctx.path("stereo_mu.csv"),
                out.mu_final.h(),
                out.mu_final.w(),
                1,
                &mu32,
            )?;
        }
    }
    fs::write(ctx.path("stereo_report.csv"), csv)?;
    Ok(())
}

// ----------------------------------------------------------------- fuse ----

fn cmd_fuse(ctx: &Ctx, args: FuseArgs) -> anyhow::Result<()> {
    let path = manifest_path(ctx, args.manifest);
    let (frames, anchor_path) = load_sequence(&path)?;
    let n = args.frames.unwrap_or(frames.len()).min(frames.len());
    let records: Vec<FrameRecord> =
        frames.into_iter().rev().take(n).rev().map(|f| f.record).collect();
    let policy = if args.pad { ShortfallPolicy::Pad } else { ShortfallPolicy::Error };
    let plan = make_plan(records.len(), args.group_size, args.interval, policy)?;
    let spec = BevGridSpec {
        nx: args.nx,
        ny: args.ny,
        cell_size: args.cell_size,
        origin_x: args.origin_x,
        origin_y: args.origin_y,
    };
    let anchor = match anchor_path {
        Some(p) => io::read_transform(&p)?,
        None => parallax_core::geometry::RigidTransform::identity(),
    };
    let grid = fuse_sequence(&records, &plan, &ctx.stereo_cfg, &spec, &anchor, ctx.accum_mode())?;
    let data: Vec<f32> = grid.values.iter().map(|&v| v as f32).collect();
    io::write_grid_bin(&ctx.path("bev.bin"), spec.ny, spec.nx, grid.channels, &data)?;
    println!(
        "fused {} frames into {} groups ({} padded): grid {}x{}x{} total_mass={:.4}",
        records.len(),
        plan.groups.len(),
        plan.padded_groups,
        spec.nx,
        spec.ny,
        grid.channels,
        grid.total()
    );
    Ok(())
}

// ------------------------------------------------------------------ nms ----

fn cmd_nms(ctx: &Ctx, args: NmsArgs) -> anyhow::Result<()> {
    let boxes = match (&args.layout, &args.corpus) {
        (Some(layout), None) => make_nms_corpus(ctx.seed, args.n, layout)?,
        (None, Some(path)) => io::read_boxes_csv(path)?,
        (None, None) => make_nms_corpus(ctx.seed, args.n, "random")?,
        (Some(_), Some(_)) => anyhow::bail!("usage: pass either --layout or --corpus"),
    };
    let cfg = NmsConfig {
        scale_factor: args.w.unwrap_or(ctx.nms_cfg.scale_factor),
        radius: args.radius.unwrap_or(ctx.nms_cfg.radius),
        class_agnostic: args.class_agnostic || ctx.nms_cfg.class_agnostic,
    };
    cfg.validate()?;

    let kept_sa = size_aware_circle_nms(&boxes, &cfg);
    let kept_c = circle_nms(&boxes, &cfg);
    let kept_r = rotated_iou_nms(&boxes, args.iou, cfg.class_agnostic);

    let mut csv =
        String::from("index,cx,cy,dx,dy,theta,score,class_id,kept_size_aware,kept_circle,kept_rotated_iou\n");
    for (i, b) in boxes.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{}\n",
            b.cx,
            b.cy,
            b.dx,
            b.dy,
            b.theta,
            b.score,
            b.class_id,
            u8::from(kept_sa.contains(&i)),
            u8::from(kept_c.contains(&i)),
            u8::from(kept_r.contains(&i)),
        ));
    }
    fs::write(ctx.path("nms_kept.csv"), csv)?;

    let mut sa_sorted = kept_sa.clone();
    let mut c_sorted = kept_c.clone();
    sa_sorted.sort_unstable();
    c_sorted.sort_unstable();
    let agree = sa_sorted == c_sorted;
    println!(
        "boxes={} kept: size_aware={} circle={} rotated_iou={}  size_aware-vs-circle {}",
        boxes.len(),
        kept_sa.len(),
        kept_c.len(),
        kept_r.len(),
        if agree { "AGREE" } else { "DISAGREE" }
    );

    if args.bench {
        let rows = bench_nms(&boxes, &cfg, args.iou, args.reps);
        let mut csv = String::from(parallax_core::nms::NmsBenchRow::CSV_HEADER);
        csv.push('\n');
        for row in &rows {
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        fs::write(ctx.path("nms_bench_timing.csv"), csv)?;
        for row in rows {
            println!("bench {} median={}ns kept={}", row.variant, row.median_ns, row.kept);
        }
    }
    Ok(())
}

// ----------------------------------------------------------- pool-bench ----

fn parse_sizes(spec: &str) -> anyhow::Result<Vec<BenchSize>> {
    let mut sizes = Vec::new();
    for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
        let nums: Vec<usize> = part
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| anyhow::anyhow!("usage: bad size spec `{part}`"))?;
        if nums.len() != 5 {
            anyhow::bail!("usage: size spec needs P,B,C,nx,ny, got `{part}`");
        }
        sizes.push(BenchSize { p: nums[0], b: nums[1], c: nums[2], nx: nums[3], ny: nums[4] });
    }
    if sizes.is_empty() {
        anyhow::bail!("usage: no benchmark sizes given");
    }
    Ok(sizes)
}

fn cmd_pool_bench(ctx: &Ctx, args: PoolBenchArgs) -> anyhow::Result<()> {
    let mut sizes = parse_sizes(&args.sizes)?;
    if args.big {
        sizes.push(BenchSize { p: 1_000_000, b: 32, c: 64, nx: 128, ny: 128 });
    }

    // Deterministic artifact: v1/v2/oracle agreement on the smallest size.
    let smallest = *sizes
        .iter()
        .min_by_key(|s| s.p * s.b * s.c)
        .expect("nonempty");
    let spec = BevGridSpec {
        nx: smallest.nx,
        ny: smallest.ny,
        cell_size: 0.5,
        origin_x: 0.0,
        origin_y: 0.0,
    };
    let inputs = random_inputs(&smallest, &spec, ctx.seed);
    let want = parallax_core::bev_pool::oracle::pool_serial(&inputs, &spec);
    let mut eq_csv = String::from("variant,max_rel_diff\n");
    for (name, f) in [("v1", pool_v1 as PoolFn), ("v2", pool_v2 as PoolFn)] {
        let (got, _) = f(&inputs, &spec, ctx.accum_mode())?;
        let max_rel = got
            .values
            .iter()
            .zip(&want.values)
            .map(|(g, w)| (g - w).abs() / w.abs().max(1.0))
            .fold(0.0f64, f64::max);
        eq_csv.push_str(&format!("{name},{max_rel:.3e}\n"));
    }
    fs::write(ctx.path("pool_equivalence.csv"), eq_csv)?;

    let rows = bench_pool(&sizes, args.reps, ctx.seed)?;
    let mut csv = String::from(PoolBenchRow::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(ctx.path("pool_bench_timing.csv"), csv)?;
    for row in rows {
        println!(
            "bench {} P={} B={} C={} median={}ns p90={}ns",
            row.variant, row.p, row.b, row.c, row.median_ns, row.p90_ns
        );
    }
    Ok(())
}

type PoolFn = fn(
    &parallax_core::bev_pool::PoolInputs,
    &BevGridSpec,
    AccumMode,
) -> parallax_core::Result<(parallax_core::bev_pool::BevGrid, parallax_core::bev_pool::PoolStats)>;

// ----------------------------------------------------------------- eval ----

fn cmd_eval(ctx: &Ctx, args: EvalArgs) -> anyhow::Result<()> {
    match (&args.pred, &args.gt, &args.pred_boxes, &args.gt_boxes) {
        (Some(pred), Some(gt), None, None) => {
            let pred = io::read_grid2(pred)?;
            let gt = io::read_grid2(gt)?;
            let mask = match &args.mask {
                Some(p) => io::read_grid2(p)?.map(|v| v != 0.0),
                None => gt.map(|v| v > 0.0),
            };
            let report = depth_metrics(&pred, &gt, &mask)?;
            let mut csv = String::from(parallax_core::metrics::DepthEvalReport::CSV_HEADER);
            csv.push('\n');
            csv.push_str(&report.to_csv());
            csv.push('\n');
            fs::write(ctx.path("eval_depth.csv"), csv)?;
            io::write_key_values(&ctx.path("eval_depth.txt"), &report.key_values())?;
            println!(
                "silog={:.4} abs_rel={:.6} sq_rel={:.6} log10={:.6} rmse={:.6} n={}",
                report.silog, report.abs_rel, report.sq_rel, report.log10, report.rmse, report.n_pixels
            );
            Ok(())
        }
        (None, None, Some(pred), Some(gt)) => {
            let pred = io::read_boxes_csv(pred)?;
            let gt = io::read_boxes_csv(gt)?;
            let thresholds: Vec<f64> = args
                .thresholds
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow::anyhow!("usage: bad --thresholds"))?;
            let report = center_recall(&pred, &gt, &thresholds)?;
            fs::write(ctx.path("eval_recall.csv"), report.to_csv())?;
            for (t, r) in report.thresholds.iter().zip(&report.recall) {
                println!("recall@{t} = {r:.4}{}", if report.empty_gt { " (empty gt)" } else { "" });
            }
            Ok(())
        }
        _ => anyhow::bail!("usage: pass --pred/--gt for depth or --pred-boxes/--gt-boxes for recall"),
    }
}
