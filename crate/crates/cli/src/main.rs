use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use evseg_core::config::{RunConfig, KEYS};
use evseg_core::event::EventWindow;
use evseg_core::io::{self, EventStream};
use evseg_core::level2::EventLabeling;
use evseg_core::metrics::{self, EvalReport};
use evseg_core::pipeline::segment_stream;
use evseg_core::synth::generate_scene;
use evseg_core::{par, Error};

/// Event-based motion segmentation by cascaded two-level multi-model fitting.
#[derive(Parser)]
#[command(name = "evseg", version, after_help = "Every configuration key can also be given as --key=value.")]
struct Cli {
    /// Run all data-parallel stages on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic event stream with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Segment an event file into motion clusters.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write a labeled PPM and a motion-compensated PGM per window.
        #[arg(long)]
        render_dir: Option<PathBuf>,
        /// Process windows concurrently. Output order is unchanged.
        #[arg(long)]
        parallel_windows: bool,
        /// Print the effective configuration to stderr.
        #[arg(long)]
        print_config: bool,
    },
    /// Compare a labeled file against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::KeyValue)]
        format: Format,
        #[arg(long, default_value_t = metrics::DEFAULT_BOX_IOU)]
        box_iou: f64,
    },
    /// Render a labeled file (PPM) or its raw event counts (PGM).
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path; a .pgm extension selects the grayscale count image.
        #[arg(long)]
        out: PathBuf,
        /// Only render this window of the file.
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    KeyValue,
    Csv,
}

/// Splits `--key=value` configuration overrides off the argument list.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    args.into_iter().partition(|a| {
        a.strip_prefix("--")
            .and_then(|b| b.split_once('='))
            .is_none_or(|(k, _)| !KEYS.contains(&k))
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::InsufficientFeatures { .. }
            | Error::NoModel
            | Error::EmptyPool
            | Error::DegenerateSample(_)
            | Error::NonConvergence { .. },
        ) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    par::set_parallel(!cli.sequential);
    match run(cli.cmd, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evseg: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Cmd, overrides: &[String]) -> anyhow::Result<()> {
    if !overrides.is_empty() && !matches!(cmd, Cmd::Segment { .. }) {
        bail!(Error::Config(format!("{} only applies to segment", overrides[0])));
    }
    match cmd {
        Cmd::Synth { spec, out, gt } => synth(&spec, &out, &gt),
        Cmd::Segment {
            input,
            config,
            out,
            render_dir,
            parallel_windows,
            print_config,
        } => {
            let mut cfg = RunConfig::default();
            if let Some(path) = &config {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
                cfg.apply_text(&text).with_context(|| path.display().to_string())?;
            }
            for o in overrides {
                cfg.apply_flag(o)?;
            }
            cfg.validate()?;
            if print_config {
                eprint!("{}", cfg.to_text());
            }
            segment(&input, &cfg, &out, render_dir.as_deref(), parallel_windows)
        }
        Cmd::Eval {
            pred,
            gt,
            out,
            format,
            box_iou,
        } => eval(&pred, &gt, out.as_deref(), format, box_iou),
        Cmd::Render { input, out, window } => render(&input, &out, window),
    }
}

fn synth(spec: &Path, out: &Path, gt_path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| Error::Io {
        path: spec.display().to_string(),
        msg: e.to_string(),
    })?;
    let spec = io::parse_scene_spec(&text)?;
    let (w, gt) = generate_scene(&spec)?;
    io::write_file(out, |f| {
        io::write_events(f, &EventStream::from_window(&w)).map_err(|e| Error::io(out, e))
    })?;
    io::write_file(gt_path, |f| io::write_ground_truth(f, &w, &gt).map_err(|e| Error::io(gt_path, e)))?;
    eprintln!("{} events, {} labels", w.len(), gt.num_labels());
    Ok(())
}

fn segment(
    input: &Path,
    cfg: &RunConfig,
    out: &Path,
    render_dir: Option<&Path>,
    parallel_windows: bool,
) -> anyhow::Result<()> {
    let stream = io::read_events(input)?;
    let windows = stream.slice(cfg.delta_t_us());
    let results = segment_stream(&windows, &cfg.pipeline, parallel_windows)?;
    for (k, (w, r)) in windows.iter().zip(&results).enumerate() {
        eprintln!(
            "window {k}: {} events, {} features, {} level-one models, {} clusters, energy {:.1}",
            w.len(),
            r.num_features,
            r.level1_models.len(),
            r.models.len(),
            r.level2_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    let parts: Vec<(&EventWindow, &EventLabeling, &[_])> = windows
        .iter()
        .zip(&results)
        .map(|(w, r)| (w, &r.labeling, r.models.as_slice()))
        .collect();
    io::write_file(out, |f| io::write_labeled_events(f, stream.width, stream.height, &parts))?;

    if let Some(dir) = render_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, (w, r)) in windows.iter().zip(&results).enumerate() {
            let labels: Vec<Option<u32>> = io::file_labels(&r.labeling)?
                .into_iter()
                .map(|l| (l != io::OUTLIER_LABEL).then_some(l))
                .collect();
            let img = io::render_labels(w.width, w.height, &w.events, &labels);
            let ppm = dir.join(format!("window_{k:04}_labels.ppm"));
            io::write_file(&ppm, |f| io::write_ppm(f, &img).map_err(|e| Error::io(&ppm, e)))?;
            let iwe = io::compensated_iwe(w, &r.labeling, &r.models, cfg.pipeline.level2.iwe_eps);
            let pgm = dir.join(format!("window_{k:04}_compensated.pgm"));
            io::write_file(&pgm, |f| io::write_pgm(f, &iwe).map_err(|e| Error::io(&pgm, e)))?;
        }
    }
    Ok(())
}

fn eval(pred: &Path, gt: &Path, out: Option<&Path>, format: Format, box_iou: f64) -> anyhow::Result<()> {
    let p = io::read_labeled(pred)?;
    let g = io::read_labeled(gt)?;
    if p.events != g.events {
        bail!(Error::Config(format!(
            "{} and {} do not hold the same events",
            pred.display(),
            gt.display()
        )));
    }
    if g.labels.iter().any(|l| l.is_none()) {
        bail!(Error::Config(format!("{} contains outlier labels", gt.display())));
    }
    let gt_labels: Vec<u32> = g.labels.iter().map(|l| l.unwrap_or(0)).collect();
    let ranges = if p.windows.is_empty() {
        vec![0..p.events.len()]
    } else {
        p.windows.iter().map(|w| w.2.clone()).collect()
    };
    let mut reports = Vec::new();
    for r in ranges.into_iter().filter(|r| !r.is_empty()) {
        let labeling = EventLabeling {
            labels: p.labels[r.clone()].iter().map(|l| l.map(|l| l as usize)).collect(),
        };
        let events = p.events[r.clone()].to_vec();
        let (t0, t1) = (events[0].t, events[events.len() - 1].t);
        let w = EventWindow::new(events, t0, t1.max(t0 + 1), p.width, p.height)?;
        reports.push(metrics::evaluate(&labeling, &gt_labels[r], &w, box_iou)?);
    }
    let Some(report) = EvalReport::average(&reports) else {
        bail!(Error::Config(format!("{} holds no events", pred.display())));
    };
    let text = match format {
        Format::KeyValue => report.to_key_value(),
        Format::Csv => report.to_csv(),
    };
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn render(input: &Path, out: &Path, window: Option<usize>) -> anyhow::Result<()> {
    let f = io::read_labeled(input)?;
    let range = match window {
        None => 0..f.events.len(),
        Some(k) => match f.windows.get(k) {
            Some(w) => w.2.clone(),
            None => bail!(Error::Config(format!("{} has no window {k}", input.display()))),
        },
    };
    let events = &f.events[range.clone()];
    if out.extension().is_some_and(|e| e == "pgm") {
        let img = io::count_image(f.width, f.height, events);
        io::write_file(out, |w| io::write_pgm(w, &img).map_err(|e| Error::io(out, e)))?;
    } else {
        let img = io::render_labels(f.width, f.height, events, &f.labels[range]);
        io::write_file(out, |w| io::write_ppm(w, &img).map_err(|e| Error::io(out, e)))?;
    }
    Ok(())
}
