//! `thermolat` command-line interface.

mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use thermolat::cuts_encoder::train_encoder;
use thermolat::gradcheck::{run_suite, CheckKind};
use thermolat::pipeline::{
    compare_overlay, encoder_images, evaluate, infer, labeled_samples, load_dataset, render_overlay, run_grid,
    synth_dataset, Inference, CACHE_ENV,
};
use thermolat::thermio::{render, RenderKind, SegMask, Split, ThermalFrame};
use thermolat::unet_decoder::train_decoder;
use thermolat::{CutsEncoder, Task, UNet};

use config::RunConfig;
use error::CliError;

/// Gradient-check tolerance for single ops.
const OP_TOLERANCE: f64 = 1e-6;
/// Gradient-check tolerance for full network graphs.
const NETWORK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "thermolat", version, about = "Self-supervised thermogram embeddings and UNet decoders")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single worker thread and fixed reduction order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for convolutions.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration field, e.g. `encoder.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Directory for outputs and the resolved configuration.
    #[arg(long = "output-dir", global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        labeled: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Dataset directory (defaults to `<output-dir>/data`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the contrastive encoder on the training split.
    TrainEncoder {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        render_kind: Option<RenderKind>,
        /// Checkpoint path (defaults to `<output-dir>/encoder.thrm`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a decoder on frozen embeddings.
    TrainDecoder {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        render_kind: Option<RenderKind>,
        /// Checkpoint path (defaults to `<output-dir>/decoder-<task>.thrm`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a decoder on one split.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Metrics JSON path (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score all four encoder/decoder rendering pairs.
    Grid {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Report directory (defaults to `<output-dir>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one frame through an encoder and decoder.
    Infer {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        /// Must match the decoder when given.
        #[arg(long)]
        task: Option<Task>,
        /// PGM mask for segmentation, JSON for classification.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a mask over a rendered frame as PNG.
    Overlay {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Ground-truth mask shown to the right of the prediction.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "heatmap")]
        render_kind: RenderKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every op and network graph.
    GradCheck {
        /// Number of seeds, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown split {s:?} (train, val, test)"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display()))),
        None => Ok(()),
    }
}

fn resolve(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::resolve(global.config.as_deref(), &global.sets)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if global.deterministic {
        cfg.deterministic = true;
    }
    if let Some(j) = global.jobs {
        if j == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        cfg.jobs = Some(j);
    }
    if let Some(dir) = &global.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.finalize();
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve(&cli.global)?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth {
            count,
            labeled,
            test,
            height,
            width,
            out,
        } => {
            let s = &mut cfg.synth;
            s.count = count.unwrap_or(s.count);
            s.labeled = labeled.or(s.labeled);
            s.test = test.or(s.test);
            s.height = height.unwrap_or(s.height);
            s.width = width.unwrap_or(s.width);
            let out = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            cfg.echo(&cfg.output_dir)?;
            let manifest = synth_dataset(&out, &cfg.synth)?;
            println!("{}", manifest.display());
        }
        Command::TrainEncoder {
            manifest,
            render_kind,
            out,
        } => {
            cfg.manifest = manifest.unwrap_or(cfg.manifest);
            if let Some(k) = render_kind {
                cfg.encoder.render_kind = k;
            }
            cfg.echo(&cfg.output_dir)?;
            let data = load_dataset(&cfg.manifest)?;
            let images = encoder_images(&data, cfg.encoder.render_kind, cfg.normalize)?;
            info!("training encoder on {} frames", images.len());
            let trained = train_encoder::<f32>(&images, &cfg.encoder)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("encoder.thrm"));
            ensure_parent(&out)?;
            trained.encoder.save(&out)?;
            for (epoch, loss) in trained.loss_history.iter().enumerate() {
                info!("epoch {epoch}: loss {loss:.6}");
            }
            println!("{}", out.display());
        }
        Command::TrainDecoder {
            manifest,
            encoder,
            task,
            render_kind,
            out,
        } => {
            cfg.manifest = manifest.unwrap_or(cfg.manifest);
            let dc = match task {
                Task::Classification => &mut cfg.classification,
                Task::Segmentation => &mut cfg.segmentation,
            };
            if let Some(k) = render_kind {
                dc.render_kind = k;
            }
            let dc = dc.clone();
            cfg.echo(&cfg.output_dir)?;
            let enc = CutsEncoder::<f32>::load(&encoder)?;
            let data = load_dataset(&cfg.manifest)?;
            let samples = labeled_samples(&data, Split::Train, task, dc.render_kind, cfg.normalize)?;
            info!("training {task} decoder on {} samples", samples.len());
            let trained = train_decoder(&enc, &samples, &dc)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join(format!("decoder-{task}.thrm")));
            ensure_parent(&out)?;
            trained.decoder.save(&out)?;
            println!("{}", out.display());
        }
        Command::Eval {
            manifest,
            encoder,
            decoder,
            split,
            out,
        } => {
            cfg.manifest = manifest.unwrap_or(cfg.manifest);
            let enc = CutsEncoder::<f32>::load(&encoder)?;
            let dec = UNet::<f32>::load(&decoder)?;
            let data = load_dataset(&cfg.manifest)?;
            let samples = labeled_samples(&data, split, dec.task(), dec.decoder_render_kind(), cfg.normalize)?;
            let report = evaluate(&enc, &dec, &samples)?;
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("serialisable")),
            }
        }
        Command::Grid { manifest, out } => {
            cfg.manifest = manifest.unwrap_or(cfg.manifest);
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(c) = std::env::var_os(CACHE_ENV).filter(|c| !c.is_empty()) {
                cfg.cache_dir = Some(PathBuf::from(c));
            }
            cfg.echo(&cfg.output_dir)?;
            let result = run_grid(&cfg.grid())?;
            print!("{}", result.to_markdown());
        }
        Command::Infer {
            encoder,
            decoder,
            frame,
            task,
            out,
        } => {
            let enc = CutsEncoder::<f32>::load(&encoder)?;
            let dec = UNet::<f32>::load(&decoder)?;
            if let Some(t) = task.filter(|&t| t != dec.task()) {
                return Err(CliError::config(format!("--task {t} but the decoder is a {} decoder", dec.task())));
            }
            let frame = ThermalFrame::read(&frame)?;
            ensure_parent(&out)?;
            match infer(&frame, &enc, &dec, cfg.normalize)? {
                Inference::Mask(m) => m.write(&out)?,
                Inference::Class(logits) => {
                    let probs = logits.probabilities();
                    write_json(
                        &out,
                        &serde_json::json!({
                            "label": logits.predicted(),
                            "logits": logits.values.map(f64::from),
                            "probabilities": probs.map(f64::from),
                        }),
                    )?
                }
            }
        }
        Command::Overlay {
            frame,
            mask,
            truth,
            render_kind,
            out,
        } => {
            let frame = ThermalFrame::read(&frame)?;
            let img = render(&frame, render_kind, cfg.normalize)?;
            let mask = SegMask::read(&mask)?;
            let picture = match truth {
                Some(t) => compare_overlay(&img, &mask, &SegMask::read(&t)?)?,
                None => render_overlay(&img, &mask)?,
            };
            ensure_parent(&out)?;
            picture.write_png(&out)?;
        }
        Command::GradCheck { seeds } => {
            let mut failed = 0usize;
            for seed in cfg.seed..cfg.seed + seeds {
                for r in run_suite(seed)? {
                    let tol = match r.kind {
                        CheckKind::Op => OP_TOLERANCE,
                        CheckKind::Network => NETWORK_TOLERANCE,
                    };
                    let ok = r.report.checked > 0 && r.report.max_rel_error < tol;
                    failed += usize::from(!ok);
                    println!(
                        "seed {seed} {:<20} max_rel_error {:.3e} checked {:>5} kinks {:>3} {}",
                        r.name,
                        r.report.max_rel_error,
                        r.report.checked,
                        r.report.skipped_kinks,
                        if ok { "ok" } else { "FAIL" }
                    );
                }
            }
            if failed > 0 {
                return Err(CliError::numeric(format!("{failed} gradient checks exceeded tolerance")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.to_string().lines().next().unwrap_or("invalid arguments").to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.class.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
