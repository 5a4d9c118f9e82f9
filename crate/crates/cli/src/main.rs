//! `bdrseg`: dataset generation, training, segmentation and evaluation.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure.

mod overlay;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use bdrseg_core::contour::{brn_segment_detailed, BrnParams};
use bdrseg_core::distmap::mask_to_distance_map;
use bdrseg_core::imgio::{
    read_fmap, read_mask, read_pgm, write_fmap, write_mask, write_pgm, Manifest, ManifestRecord, Split,
};
use bdrseg_core::metrics::{evaluate, EvalReport};
use bdrseg_core::models::{clamp_unit, load_trained, train_to_disk, Pipeline, TrainConfig};
use bdrseg_core::phantom::{make_dataset, PhantomRanges};
use bdrseg_core::{BinaryMask, DistanceMap, Error, Image};

const LOG_ENV: &str = "BDRSEG_LOG";

#[derive(Parser, Debug)]
#[command(name = "bdrseg", version, about = "Boundary distance regression segmentation")]
struct Cli {
    /// Worker threads for batch-parallel kernels; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset with a manifest.
    Gen(GenArgs),
    /// Convert a binary mask into an exp(-distance) boundary map.
    Distmap(DistmapArgs),
    /// Train the pipeline on a dataset.
    Train(TrainArgs),
    /// Segment one image or every image of a dataset split.
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 50)]
    n_test: usize,
    /// Square frame side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file with phantom parameter ranges; flags below override it.
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Upper bound of the relative notch depth.
    #[arg(long)]
    notch_max: Option<f64>,
    /// Speckle strength range, as `min,max`.
    #[arg(long, value_parser = parse_pair)]
    speckle: Option<(f64, f64)>,
    /// Gaussian blur sigma range, as `min,max`.
    #[arg(long, value_parser = parse_pair)]
    blur: Option<(f64, f64)>,
    /// Largest relative gain change across the frame.
    #[arg(long)]
    gain: Option<f64>,
}

#[derive(Args, Debug)]
struct DistmapArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML training configuration; the desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (or manifest file).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the config is stored next to it as `<out>.toml`.
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Argmax of the pixel classifier.
    Classifier,
    /// Threshold, thin, MST max path and fill on the predicted map.
    Brn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "dmap")]
    ckpt: Option<PathBuf>,
    /// Training config of the checkpoint; defaults to its `.toml` sidecar.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single input image.
    #[arg(long, conflicts_with = "data")]
    image: Option<PathBuf>,
    /// Use this distance map instead of a network prediction (brn mode).
    #[arg(long, conflicts_with_all = ["ckpt", "data", "image"])]
    dmap: Option<PathBuf>,
    /// Output mask for a single image.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset to segment in batch.
    #[arg(long, requires = "out_dir")]
    data: Option<PathBuf>,
    /// Batch output directory; gets its own manifest.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "classifier")]
    mode: Mode,
    /// Distance-map threshold (brn mode).
    #[arg(long, default_value_t = BrnParams::default().tau)]
    tau: f64,
    /// Pixel graph link radius (brn mode).
    #[arg(long, default_value_t = BrnParams::default().link_radius)]
    link_radius: f64,
    /// Image | overlay | mask triptych (single-image mode).
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Recovered contour as `y x` lines (single-image brn mode).
    #[arg(long)]
    contour: Option<PathBuf>,
    /// Also write the clamped predicted distance map (single-image mode).
    #[arg(long)]
    dmap_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory (or manifest) of predicted masks.
    #[arg(long)]
    pred: PathBuf,
    /// Directory (or manifest) of ground-truth masks.
    #[arg(long)]
    gt: PathBuf,
    /// Second prediction set; adds paired Wilcoxon tests.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "pred")]
    name: String,
    #[arg(long, default_value = "compare")]
    compare_name: String,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `min,max`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("{a} > {b}"));
    }
    Ok((a, b))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) => 2,
        Error::DivergedTraining { .. }
        | Error::EmptyResult(_)
        | Error::DegenerateContour(_)
        | Error::OpenRegion
        | Error::TooFewSamples(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    info!("{cli:?}");
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Distmap(a) => cmd_distmap(a),
        Command::Train(a) => cmd_train(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Error> {
    let mut ranges = match &a.ranges {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => PhantomRanges::square(a.size),
    };
    ranges.height = a.size;
    ranges.width = a.size;
    if let Some(n) = a.notch_max {
        ranges.notch_depth.1 = n;
    }
    if let Some(s) = a.speckle {
        ranges.speckle = s;
    }
    if let Some(b) = a.blur {
        ranges.blur_sigma = b;
    }
    if let Some(g) = a.gain {
        ranges.gain = g;
    }
    info!("phantom ranges:\n{}", toml::to_string(&ranges).unwrap_or_default());
    let m = make_dataset(&a.out, a.n_train, a.n_test, a.seed, &ranges)?;
    println!("wrote {} samples to {}", m.records.len(), a.out.display());
    Ok(())
}

fn cmd_distmap(a: DistmapArgs) -> Result<(), Error> {
    let mask = read_mask(&a.mask)?;
    write_fmap(&a.out, &mask_to_distance_map(&mask)?)
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(e) = a.epochs {
        cfg.schedule.total_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    info!("resolved training config:\n{}", cfg.to_toml());
    let manifest = Manifest::load(&a.data)?;
    let start = Instant::now();
    let art = train_to_disk(&manifest, &cfg, &a.out, a.log.as_deref())?;
    if let Some(last) = art.rows.last() {
        println!(
            "trained {} epochs in {:.1}s; final lambda {:.3} ce {:.5} val_dice {}",
            art.rows.len(),
            start.elapsed().as_secs_f64(),
            last.lambda,
            last.ce,
            last.val_dice.map_or("n/a".into(), |d| format!("{d:.4}"))
        );
    }
    println!("checkpoint {}", art.checkpoint.display());
    println!("config {}", art.config.display());
    println!("log {}", art.log.display());
    Ok(())
}

struct Segmented {
    mask: BinaryMask,
    dmap: Option<DistanceMap>,
    contour: Option<String>,
}

fn brn(dmap: &DistanceMap, params: &BrnParams) -> Result<Segmented, Error> {
    let out = brn_segment_detailed(dmap, params)?;
    Ok(Segmented {
        mask: out.mask,
        dmap: Some(dmap.clone()),
        contour: Some(out.contour.to_text()),
    })
}

fn run_network(net: &mut Pipeline<f32>, img: &Image, mode: Mode, params: &BrnParams) -> Result<Segmented, Error> {
    let (raw, mask) = net.infer(&[img])?.remove(0);
    let dmap = clamp_unit(&raw);
    match mode {
        Mode::Classifier => Ok(Segmented {
            mask,
            dmap: Some(dmap),
            contour: None,
        }),
        Mode::Brn => brn(&dmap, params),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_segment(a: SegmentArgs) -> Result<(), Error> {
    let params = BrnParams {
        tau: a.tau,
        link_radius: a.link_radius,
        ..BrnParams::default()
    };
    if let Some(dmap_path) = &a.dmap {
        if a.mode != Mode::Brn {
            return Err(Error::Config("--dmap input needs --mode brn".into()));
        }
        let out = a.out.as_ref().ok_or_else(|| Error::Config("--dmap needs --out".into()))?;
        let start = Instant::now();
        let seg = brn(&read_fmap(dmap_path)?, &params)?;
        println!("latency\t{}\t{:.3} ms", dmap_path.display(), start.elapsed().as_secs_f64() * 1e3);
        return write_single(&a, out, None, &seg);
    }
    let ckpt = a.ckpt.as_ref().ok_or_else(|| Error::Config("--ckpt is required".into()))?;
    let (cfg, mut net) = load_trained(ckpt, a.config.as_deref())?;
    info!("segmenting with config:\n{}", cfg.to_toml());
    match (&a.image, &a.data) {
        (Some(img_path), None) => {
            let out = a.out.as_ref().ok_or_else(|| Error::Config("--image needs --out".into()))?;
            let img = read_pgm(img_path)?;
            let start = Instant::now();
            let seg = run_network(&mut net, &img, a.mode, &params)?;
            println!("latency\t{}\t{:.3} ms", img_path.display(), start.elapsed().as_secs_f64() * 1e3);
            write_single(&a, out, Some(&img), &seg)
        }
        (None, Some(data)) => {
            let out_dir = a.out_dir.as_ref().ok_or_else(|| Error::Config("--data needs --out-dir".into()))?;
            segment_dataset(&mut net, data, out_dir, &a, &params)
        }
        _ => Err(Error::Config("give either --image or --data".into())),
    }
}

fn write_single(a: &SegmentArgs, out: &Path, img: Option<&Image>, seg: &Segmented) -> Result<(), Error> {
    write_mask(out, &seg.mask)?;
    if let (Some(p), Some(c)) = (&a.contour, &seg.contour) {
        write_text(p, c)?;
    }
    if let (Some(p), Some(d)) = (&a.dmap_out, &seg.dmap) {
        write_fmap(p, d)?;
    }
    if let Some(p) = &a.overlay {
        let base = match (img, &seg.dmap) {
            (Some(i), _) => i.clone(),
            (None, Some(d)) => d.clone(),
            (None, None) => seg.mask.map(|&v| f32::from(v)),
        };
        write_pgm(p, &overlay::triptych(&base, &seg.mask)?)?;
    }
    Ok(())
}

fn segment_dataset(
    net: &mut Pipeline<f32>,
    data: &Path,
    out_dir: &Path,
    a: &SegmentArgs,
    params: &BrnParams,
) -> Result<(), Error> {
    let manifest = Manifest::load(data)?;
    let chosen: Vec<&ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| match a.split {
            SplitArg::All => true,
            SplitArg::Train => r.split == Split::Train,
            SplitArg::Test => r.split == Split::Test,
        })
        .collect();
    for sub in ["images", "masks", "dmaps"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::Io { path: d, source: e })?;
    }
    let mut records = Vec::with_capacity(chosen.len());
    let mut failures = 0usize;
    for group in chosen.chunks(a.batch.max(1)) {
        let images = group
            .iter()
            .map(|r| read_pgm(&manifest.resolve(&r.image_path)))
            .collect::<Result<Vec<_>, _>>()?;
        let start = Instant::now();
        let outputs = net.infer(&images.iter().collect::<Vec<_>>())?;
        let per_image = start.elapsed().as_secs_f64() / group.len() as f64;
        for ((r, img), (raw, cls_mask)) in group.iter().zip(&images).zip(outputs) {
            let dmap = clamp_unit(&raw);
            let t0 = Instant::now();
            let mask = match a.mode {
                Mode::Classifier => cls_mask,
                Mode::Brn => match brn(&dmap, params) {
                    Ok(s) => s.mask,
                    Err(e) => {
                        // an unrecoverable contour scores as an empty prediction
                        log::warn!("{}: {e}", r.id);
                        failures += 1;
                        BinaryMask::filled(img.height(), img.width(), 0)
                    }
                },
            };
            let ms = (per_image + t0.elapsed().as_secs_f64()) * 1e3;
            println!("latency\t{}\t{ms:.3} ms", r.id);
            let rec = ManifestRecord {
                id: r.id.clone(),
                image_path: format!("images/{}.pgm", r.id),
                mask_path: format!("masks/{}.pgm", r.id),
                dmap_path: format!("dmaps/{}.fmap", r.id),
                split: r.split,
            };
            write_pgm(&out_dir.join(&rec.image_path), img)?;
            write_mask(&out_dir.join(&rec.mask_path), &mask)?;
            write_fmap(&out_dir.join(&rec.dmap_path), &dmap)?;
            records.push(rec);
        }
    }
    Manifest {
        dir: out_dir.to_path_buf(),
        records,
    }
    .save()?;
    println!(
        "segmented {} images into {}{}",
        chosen.len(),
        out_dir.display(),
        if failures > 0 { format!(" ({failures} contour failures)") } else { String::new() }
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let gt = Manifest::load(&a.gt)?;
    let mut report = evaluate(&a.name, &Manifest::load(&a.pred)?, &gt)?;
    if let Some(c) = &a.compare {
        let other: EvalReport = evaluate(&a.compare_name, &Manifest::load(c)?, &gt)?;
        report.compare_with(&other)?;
    }
    report.save(&a.report)?;
    print!("{}", report.summary_table());
    Ok(())
}
