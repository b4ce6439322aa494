use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use pip_core::eval::{evaluate, EvalOptions, EvalReport, Section};
use pip_core::inference::{DtwPhaseBaseline, Engine};
use pip_core::model::{load_model, save_model, train as train_model, Dataset, DofRole, PhaseInput, PipModel, TrainConfig, MAGIC};
use pip_core::synth::{generate, SynthConfig};
use pip_core::Error;
use serde_json::json;

use crate::stream::{Line, StreamParser};
use crate::{EvalArgs, Failure, Format, GlobalOpts, InferArgs, SynthArgs, TrainArgs, ValidateArgs};

/// Attaches the file name to errors that do not already carry it.
fn in_file(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| match e {
        Error::Io(_) => Failure::from(e),
        Error::Numeric(_) => Failure::Numeric(format!("{}: {e}", path.display())),
        other => Failure::Input(format!("{}: {other}", path.display())),
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Input(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

pub fn synth(a: &SynthArgs, g: &GlobalOpts) -> Result<(), Failure> {
    let mut cfg = SynthConfig::from_file(&a.config).map_err(in_file(&a.config))?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.cycles {
        cfg.n_cycles = n;
    }
    if let Some(id) = a.first_cycle_id {
        cfg.first_cycle_id = id;
    }
    let out = generate(&cfg).map_err(in_file(&a.config))?;
    out.dataset.write_file(&a.out).map_err(in_file(&a.out))?;
    let rows: usize = out.dataset.cycles().iter().map(|c| c.len()).sum();
    match g.format {
        Format::Machine => print_json(&json!({
            "out": a.out.display().to_string(),
            "seed": cfg.seed,
            "cycles": cfg.n_cycles,
            "rows": rows,
            "dofs": cfg.dofs.len(),
        }))?,
        Format::Human if !g.quiet => println!(
            "wrote {} cycles ({rows} rows, {} DOFs, seed {}) to {}",
            cfg.n_cycles,
            cfg.dofs.len(),
            cfg.seed,
            a.out.display()
        ),
        Format::Human => {}
    }
    Ok(())
}

pub fn train(a: &TrainArgs, g: &GlobalOpts) -> Result<(), Failure> {
    let dataset = Dataset::read_file(&a.data).map_err(in_file(&a.data))?;
    let mut overrides = BTreeMap::new();
    for (name, count) in &a.basis {
        if overrides.insert(name.clone(), *count).is_some() {
            return Err(Failure::Input(format!("--basis given twice for `{name}`")));
        }
    }
    let config = TrainConfig {
        basis_count: a.basis_count,
        basis_overrides: overrides,
        kappa: a.kappa,
        ridge: a.ridge,
        position_bins: a.position_bins,
        velocity_bins: a.velocity_bins,
        dtw_band: a.dtw_band,
    };
    let start = Instant::now();
    let (model, summary) = train_model(&dataset, &config).map_err(in_file(&a.data))?;
    let seconds = start.elapsed().as_secs_f64();
    save_model(&model, &a.out).map_err(in_file(&a.out))?;

    let reference_id = dataset.cycles()[summary.reference_cycle].cycle_id;
    match g.format {
        Format::Machine => {
            let dofs: Vec<_> = model
                .dofs
                .iter()
                .enumerate()
                .map(|(d, spec)| {
                    json!({
                        "name": spec.name,
                        "role": spec.role,
                        "unit": spec.unit,
                        "basis_count": model.bases[d].count(),
                        "kappa": model.bases[d].kappa(),
                        "residual_rms": summary.residual_rms[d],
                        "noise_std": model.noise[d].sqrt(),
                    })
                })
                .collect();
            print_json(&json!({
                "out": a.out.display().to_string(),
                "cycles": summary.cycles,
                "total_basis": summary.total_basis,
                "reference_cycle_id": reference_id,
                "seconds": seconds,
                "dofs": dofs,
            }))?;
        }
        Format::Human if !g.quiet => {
            println!(
                "trained on {} cycles in {seconds:.2} s; B = {}; reference cycle_id {reference_id}",
                summary.cycles, summary.total_basis
            );
            println!("{:<20} {:<10} {:>4} {:>8} {:>14} {:>12}", "dof", "role", "B", "kappa", "residual_rms", "noise_std");
            for (d, spec) in model.dofs.iter().enumerate() {
                println!(
                    "{:<20} {:<10} {:>4} {:>8.3} {:>14.6} {:>12.6}",
                    spec.name,
                    spec.role.as_str(),
                    model.bases[d].count(),
                    model.bases[d].kappa(),
                    summary.residual_rms[d],
                    model.noise[d].sqrt()
                );
            }
            println!("model written to {}", a.out.display());
        }
        Format::Human => {}
    }
    Ok(())
}

fn resolve_targets(model: &PipModel, names: &[String]) -> Result<Vec<usize>, Failure> {
    if names.is_empty() {
        return Ok((0..model.dof_count())
            .filter(|&d| model.dofs[d].role != DofRole::Observed)
            .collect());
    }
    names
        .iter()
        .map(|n| {
            model
                .dof_index(n)
                .ok_or_else(|| Failure::Input(format!("--predict: model has no DOF `{n}`")))
        })
        .collect()
}

/// Writes one output line; a closed stdout ends the stream quietly.
fn emit(out: &mut impl Write, line: &str) -> io::Result<bool> {
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(e),
    }
}

pub fn infer(a: &InferArgs, g: &GlobalOpts) -> Result<(), Failure> {
    let model = load_model(&a.model).map_err(in_file(&a.model))?;
    let targets = resolve_targets(&model, &a.predict)?;
    if a.samples == 0 {
        return Err(Failure::Input("-P must be at least 1".into()));
    }
    let baseline = match a.baseline_window {
        Some(w) if w < 2 => return Err(Failure::Input("--baseline-window must be at least 2".into())),
        Some(w) => Some((DtwPhaseBaseline::new(&model, 100)?, w)),
        None => None,
    };
    let input: Box<dyn BufRead> = if a.input.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        let f = File::open(&a.input).map_err(|e| Failure::Input(format!("{}: {e}", a.input.display())))?;
        Box::new(BufReader::new(f))
    };

    let pos = model.phase_input_index(PhaseInput::Position);
    let vel = model.phase_input_index(PhaseInput::Velocity);
    let mut parser = StreamParser::new(&model);
    let mut engine = Engine::new(&model);
    let mut history: VecDeque<(f64, f64)> = VecDeque::new();
    let mut out = io::stdout().lock();
    let (mut frames, mut skipped, mut unavailable) = (0usize, 0usize, 0usize);

    if g.format == Format::Human {
        let mut cols = vec!["time_s".to_string(), "phase".to_string()];
        for &d in &targets {
            cols.push(model.dofs[d].name.clone());
            if a.emit_band {
                cols.push(format!("{}_std", model.dofs[d].name));
            }
        }
        if baseline.is_some() {
            cols.push("dtw_phase".into());
        }
        if !emit(&mut out, &format!("# {}", cols.join(",")))? {
            return Ok(());
        }
    }

    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Failure::Input(format!("{}: {e}", a.input.display())))?;
        let (time, frame) = match parser.parse(&line) {
            Ok(Line::Blank | Line::Comment) => continue,
            Ok(Line::Reset) => {
                engine.reset();
                history.clear();
                continue;
            }
            Ok(Line::Header(unknown)) => {
                for name in unknown {
                    eprintln!("warning: line {lineno}: column `{name}` is not a model DOF; ignored");
                }
                continue;
            }
            Ok(Line::Frame { time, frame }) => (time, frame),
            Err(msg) => {
                eprintln!("warning: line {lineno}: {msg}; line skipped");
                skipped += 1;
                continue;
            }
        };
        frames += 1;
        let phase = match engine.step(&frame) {
            Ok(p) => Some(p),
            Err(Error::PhaseUnavailable) => {
                unavailable += 1;
                None
            }
            Err(e @ Error::Numeric(_)) => return Err(Failure::Numeric(format!("line {lineno}: {e}"))),
            Err(e) => {
                eprintln!("warning: line {lineno}: {e}; line skipped");
                skipped += 1;
                continue;
            }
        };
        let dtw_phase = match (&baseline, phase) {
            (Some((b, window)), Some(_)) => {
                let p = frame.values[pos].expect("phase inputs present");
                let v = frame.values[vel].expect("phase inputs present");
                if history.len() == *window {
                    history.pop_front();
                }
                history.push_back((p, v));
                let h: Vec<(f64, f64)> = history.iter().copied().collect();
                if h.len() >= 2 {
                    Some(b.estimate(&h)?)
                } else {
                    None
                }
            }
            _ => None,
        };

        let text = match g.format {
            Format::Human => {
                let mut fields = vec![time.clone(), phase.map_or("NA".into(), |p| p.to_string())];
                for &d in &targets {
                    match phase {
                        Some(p) => {
                            let (mean, std) = engine.predict_at(d, p);
                            fields.push(mean.to_string());
                            if a.emit_band {
                                fields.push(std.to_string());
                            }
                        }
                        None => {
                            fields.push("NA".into());
                            if a.emit_band {
                                fields.push("NA".into());
                            }
                        }
                    }
                }
                if baseline.is_some() {
                    fields.push(dtw_phase.map_or("NA".into(), |p| p.to_string()));
                }
                fields.join(",")
            }
            Format::Machine => {
                let mut preds = serde_json::Map::new();
                for &d in &targets {
                    let value = phase.map(|p| engine.predict_at(d, p));
                    let entry = match value {
                        Some((mean, std)) if a.emit_band => json!({ "mean": mean, "std": std }),
                        Some((mean, _)) => json!({ "mean": mean }),
                        None => json!(null),
                    };
                    preds.insert(model.dofs[d].name.clone(), entry);
                }
                let mut obj = json!({
                    "time_s": time.parse::<f64>().expect("validated time"),
                    "phase": phase,
                    "predictions": preds,
                });
                if baseline.is_some() {
                    obj["dtw_phase"] = json!(dtw_phase);
                }
                obj.to_string()
            }
        };
        if !emit(&mut out, &text)? {
            return Ok(());
        }
    }

    if let Some(path) = &a.trajectory {
        write_trajectory(path, &engine, &targets, a.samples)?;
    }
    if !g.quiet {
        eprintln!("{frames} frames, {unavailable} without phase, {skipped} lines skipped");
    }
    Ok(())
}

fn write_trajectory(path: &Path, engine: &Engine, targets: &[usize], samples: usize) -> Result<(), Failure> {
    let model = engine.model();
    let bands = targets
        .iter()
        .map(|&d| engine.predict(&model.dofs[d].name, samples))
        .collect::<Result<Vec<_>, _>>()?;
    let file = File::create(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["phase".to_string()];
    for &d in targets {
        header.push(format!("{}_mean", model.dofs[d].name));
        header.push(format!("{}_std", model.dofs[d].name));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..samples {
        let mut row = vec![bands.first().map_or(0.0, |b| b.trajectory.phases[i]).to_string()];
        for b in &bands {
            row.push(b.trajectory.values[i].to_string());
            row.push(b.std[i].to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs, g: &GlobalOpts) -> Result<(), Failure> {
    let model = load_model(&a.model).map_err(in_file(&a.model))?;
    let holdout = Dataset::read_file(&a.data).map_err(in_file(&a.data))?;
    if let Some(path) = &a.training_data {
        let training = Dataset::read_file(path).map_err(in_file(path))?;
        let train_ids: BTreeSet<u64> = training.cycles().iter().map(|c| c.cycle_id).collect();
        let shared: Vec<u64> = holdout
            .cycles()
            .iter()
            .map(|c| c.cycle_id)
            .filter(|id| train_ids.contains(id))
            .collect();
        if let Some(first) = shared.first() {
            return Err(Failure::Input(format!(
                "{} shares {} cycle_id(s) with {} (first: {first}); holdout must be disjoint",
                a.data.display(),
                shared.len(),
                path.display()
            )));
        }
    }
    let opts = EvalOptions {
        dropout_sweep: a.dropout_sweep,
        baseline: a.baseline,
        baseline_window: a.baseline_window,
    };
    let report = evaluate(&model, &holdout, &opts).map_err(in_file(&a.data))?;
    match g.format {
        Format::Machine => {
            // serialized directly so fields keep their declared order
            let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Input(e.to_string()))?;
            println!("{text}");
        }
        Format::Human => print_report(&report, a.training_data.is_some()),
    }
    Ok(())
}

fn print_report(r: &EvalReport, disjoint_checked: bool) {
    println!("evaluated {} held-out cycles ({} frames)", r.cycles, r.timing.steps);
    if disjoint_checked {
        println!("holdout cycle_ids verified disjoint from training data");
    }
    for (section, title) in [
        (Section::Predicted, "predicted (sensors, remaining cycle span)"),
        (Section::Inferred, "inferred (latent and controlled, current phase)"),
    ] {
        println!();
        println!("{title}");
        println!("  {:<20} {:<10} {:<10} {:>12}", "dof", "role", "unit", "mae");
        for s in r.dofs.iter().filter(|s| s.section == section) {
            println!("  {:<20} {:<10} {:<10} {:>12.6}", s.name, s.role.as_str(), s.unit, s.mae);
        }
    }
    println!();
    println!(
        "timing: step + {}-sample predict mean {:.1} us, p99 {:.1} us",
        pip_core::eval::TIMED_PREDICT_SAMPLES,
        r.timing.mean_step_us,
        r.timing.p99_step_us
    );
    if !r.dropout.is_empty() {
        println!();
        println!("dropout sweep (inferred MAE as % of range)");
        for p in &r.dropout {
            let masked = if p.masked.is_empty() { "-".to_string() } else { p.masked.join(",") };
            println!("  k={:<2} {:>8.3}%  masked: {masked}", p.masked_count, 100.0 * p.inferred_mae);
        }
    }
    if let Some(b) = &r.baseline {
        println!();
        println!(
            "DTW baseline (window {}): median |lookup - dtw| {:.3} over {} frames; lookup {:.3} us, dtw {:.1} us, ratio {:.0}x",
            b.window, b.median_phase_difference, b.frames, b.lookup_mean_us, b.dtw_mean_us, b.speed_ratio
        );
    }
}

pub fn validate(a: &ValidateArgs, g: &GlobalOpts) -> Result<(), Failure> {
    let bytes = std::fs::read(&a.path).map_err(|e| Failure::Input(format!("{}: {e}", a.path.display())))?;
    let summary = if bytes.starts_with(MAGIC) {
        let model = pip_core::model::decode_model(&bytes).map_err(in_file(&a.path))?;
        json!({
            "kind": "model",
            "dofs": model.dof_count(),
            "total_basis": model.total_basis(),
            "position_bins": model.manifold.position_bins(),
            "velocity_bins": model.manifold.velocity_bins(),
        })
    } else if a.path.extension().is_some_and(|e| e == "toml") {
        let cfg = SynthConfig::from_file(&a.path).map_err(in_file(&a.path))?;
        json!({
            "kind": "config",
            "dofs": cfg.dofs.len(),
            "cycles": cfg.n_cycles,
            "seed": cfg.seed,
        })
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Failure::Input(format!("{}: neither a model nor UTF-8 text", a.path.display())))?;
        let data = Dataset::from_csv_str(&text).map_err(in_file(&a.path))?;
        let count = |role| data.dofs().iter().filter(|d| d.role == role).count();
        json!({
            "kind": "dataset",
            "cycles": data.cycles().len(),
            "rows": data.cycles().iter().map(|c| c.len()).sum::<usize>(),
            "observed": count(DofRole::Observed),
            "latent": count(DofRole::Latent),
            "controlled": count(DofRole::Controlled),
        })
    };
    match g.format {
        Format::Machine => print_json(&summary)?,
        Format::Human if !g.quiet => {
            let fields: Vec<String> = summary
                .as_object()
                .expect("summary is an object")
                .iter()
                .filter(|(k, _)| *k != "kind")
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            println!("{}: valid {} ({})", a.path.display(), summary["kind"].as_str().unwrap_or(""), fields.join(", "));
        }
        Format::Human => {}
    }
    Ok(())
}
