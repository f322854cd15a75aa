use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use tactile_core::dataset::{self, Split};
use tactile_core::frame::{GestureWindow, RawFrame};
use tactile_core::model::{self, Arch, EvalReport, Model, ModelConfig};
use tactile_core::session::{self, InputSource, ScriptStep, SessionConfig, StateEvent};
use tactile_core::wire;

use crate::args::{AugmentArgs, BenchArgs, EvalArgs, Generate, ReplayArgs, SplitArg, TrainArgs};
use crate::CliError;

pub fn generate(cmd: &Generate, out: &mut impl Write) -> Result<(), CliError> {
    match cmd {
        Generate::Recordings { per_class, seed, duration_ms, out: dir } => {
            let recs = dataset::synthetic_recordings_with(*per_class, *seed, *duration_ms);
            dataset::save_recordings(dir, &recs)?;
            writeln!(out, "wrote {} recordings to {}", recs.len(), dir.display())?;
        }
        Generate::Capture { gestures, seed, out: path } => {
            let frames = session::simulate_stream(gestures, *seed)?;
            wire::write_capture(path, &frames)?;
            writeln!(out, "wrote {} frames to {}", frames.len(), path.display())?;
        }
    }
    Ok(())
}

pub fn augment(a: &AugmentArgs, out: &mut impl Write) -> Result<(), CliError> {
    let recs = dataset::load_recordings(&a.recordings)?
        .iter()
        .map(|r| r.process())
        .collect::<Result<Vec<_>, _>>()?;
    let ds = dataset::build_dataset(&recs, a.per_recording, a.seed)?;
    dataset::save_dataset(&ds, &a.out)?;
    let train = ds.indices(Split::Train).len();
    writeln!(out, "wrote {} samples ({} train, {} val) to {}", ds.len(), train, ds.len() - train, a.out.display())?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    arch: Arch,
    best_epoch: usize,
    val_accuracy: f64,
    epochs_run: usize,
    seconds: f64,
}

pub fn train(a: &TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let ds = dataset::load_dataset(&a.dataset)?;
    let t = Instant::now();
    let mut io_err = None;
    let outcome = model::train(&ds, ModelConfig::standard(a.arch), &a.train_config(), |rec| {
        let line = serde_json::to_string(rec).expect("epoch records serialize");
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    model::save_params(&outcome.model, &a.out)?;
    let summary = TrainSummary {
        arch: a.arch,
        best_epoch: outcome.best_epoch,
        val_accuracy: outcome.best_val.accuracy,
        epochs_run: outcome.history.len(),
        seconds: t.elapsed().as_secs_f64(),
    };
    writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serializes"))?;
    Ok(())
}

pub fn render_report(report: &EvalReport) -> String {
    format!(
        "accuracy {:.4} ({} samples)\nmean loss {:.4}\nmean latency {:.3} ms/window\n\n{}",
        report.accuracy,
        report.samples,
        report.mean_loss,
        report.mean_latency_ms,
        report.confusion_table()
    )
}

pub fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<(), CliError> {
    let model = model::load_params(&a.weights, None)?;
    let ds = dataset::load_dataset(&a.dataset)?;
    let report = match a.split {
        SplitArg::Train => model::evaluate_split(&model, &ds, Split::Train)?,
        SplitArg::Val => model::evaluate_split(&model, &ds, Split::Val)?,
        SplitArg::All => model::evaluate(&model, &ds.samples)?,
    };
    write!(out, "{}", render_report(&report))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub arch: Arch,
    pub windows: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Mean wall time of one full session tick (filter, window, classify, step).
    pub session_tick_ms: f64,
    /// Frames of history between a touch and the decision that uses it.
    pub buffer_ticks: usize,
    pub buffer_ms: f64,
}

/// Times `windows` single-threaded classifications on varied inputs.
pub fn measure(model: &Model<f32>, windows: usize) -> Result<BenchReport, CliError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let inputs: Vec<GestureWindow> = (0..windows.clamp(1, 64))
        .map(|_| GestureWindow::from_vec((0..GestureWindow::LEN).map(|_| rng.gen_range(0.0..0.3)).collect()).expect("full window"))
        .collect();
    // Warm caches and the allocator before timing.
    model.classify(&inputs[0])?;
    let mut times = Vec::with_capacity(windows);
    for i in 0..windows {
        let t = Instant::now();
        std::hint::black_box(model.classify(&inputs[i % inputs.len()])?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len().max(1);
    let mean_ms = times.iter().sum::<f64>() / n as f64;
    let p99_ms = times.get((n * 99).div_ceil(100).saturating_sub(1)).copied().unwrap_or(0.0);
    let max_ms = times.last().copied().unwrap_or(0.0);

    let cfg = SessionConfig::default();
    let ticks = 300;
    let frames: Vec<RawFrame> = (0..tactile_core::frame::CALIBRATION_FRAMES + ticks)
        .map(|i| RawFrame::uniform(500, i as u32, i as u64 * 5000))
        .collect();
    let buffer_ticks = cfg.filter_window + tactile_core::WINDOW_LEN + 1;
    let buffer_ms = buffer_ticks as f64 * 1e3 / cfg.frame_rate_hz as f64;
    let mut s = session::Session::new(cfg, Box::new(model.clone()))?;
    let mut tick_total = 0.0;
    for (i, f) in frames.iter().enumerate() {
        let t = Instant::now();
        s.push_raw(f)?;
        if i >= tactile_core::frame::CALIBRATION_FRAMES {
            tick_total += t.elapsed().as_secs_f64() * 1e3;
        }
    }
    Ok(BenchReport {
        arch: model.arch(),
        windows,
        mean_ms,
        p99_ms,
        max_ms,
        session_tick_ms: tick_total / ticks as f64,
        buffer_ticks,
        buffer_ms,
    })
}

pub fn bench(a: &BenchArgs, out: &mut impl Write) -> Result<(), CliError> {
    let model = match &a.weights {
        Some(p) => model::load_params(p, None)?,
        None => Model::init(ModelConfig::standard(a.arch), 0),
    };
    let report = measure(&model, a.windows)?;
    writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes"))?;
    if report.mean_ms > a.max_ms {
        return Err(CliError::Threshold(format!(
            "mean latency {:.3} ms exceeds the {:.3} ms bound",
            report.mean_ms, a.max_ms
        )));
    }
    Ok(())
}

/// Frames named by the config's input source.
pub fn source_frames(source: &InputSource) -> Result<(Vec<RawFrame>, wire::DecodeStats), CliError> {
    match source {
        InputSource::Capture { path } => read_capture(path),
        InputSource::Simulator { gestures, seed } => {
            let steps = gestures.iter().map(|g| g.parse()).collect::<Result<Vec<ScriptStep>, _>>()?;
            let frames = session::simulate_stream(&steps, *seed)?;
            let stats = wire::DecodeStats {
                frames: frames.len(),
                ..Default::default()
            };
            Ok((frames, stats))
        }
        InputSource::Live => Err(CliError::Config("replay needs a capture or simulator source, not a live stream".into())),
    }
}

fn read_capture(path: &Path) -> Result<(Vec<RawFrame>, wire::DecodeStats), CliError> {
    let decoded = wire::read_capture(path)?;
    Ok((decoded.frames, decoded.stats))
}

pub fn load_weights(cfg: &SessionConfig, flag: Option<&Path>) -> Result<Model<f32>, CliError> {
    let path = flag
        .or(cfg.weights.as_deref())
        .ok_or_else(|| CliError::Config("no weights given (use --weights or `weights` in the config)".into()))?;
    Ok(model::load_params(path, None)?)
}

pub fn replay(a: &ReplayArgs, cfg: SessionConfig, out: &mut impl Write, diag: &mut impl Write) -> Result<Vec<StateEvent>, CliError> {
    let mut cfg = cfg;
    if let Some(r) = a.input_rate {
        cfg.input_rate_hz = r;
    }
    cfg.validate()?;
    let model = load_weights(&cfg, a.weights.as_deref())?;
    let (frames, stats) = match &a.capture {
        Some(p) => read_capture(p)?,
        None => source_frames(&cfg.source)?,
    };
    let events = session::run_session(cfg, Box::new(model), frames)?;
    let log = session::event_log(&events);
    match &a.out {
        Some(p) => fs::write(p, &log)?,
        None => out.write_all(log.as_bytes())?,
    }
    let moved = events.iter().filter(|e| !e.twist.is_zero()).count();
    writeln!(
        diag,
        "{} frames decoded ({} corrupt dropped), {} events, {} moving",
        stats.frames,
        stats.crc_failures,
        events.len(),
        moved
    )?;
    Ok(events)
}
