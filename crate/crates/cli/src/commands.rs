use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use spinshelve::config::{Preset, RunConfig};
use spinshelve::detector::overshoot_ratio;
use spinshelve::experiments::{
    compile_protocol, linear_grid, protocol_source, Experiment, ExperimentOutput, ExperimentReport, MwDrive,
    Simulator, Span,
};
use spinshelve::fitting::{fit as run_fit, FitOptions};
use spinshelve::model::{calibrate_rates, steady_state};
use spinshelve::pulseseq::{compile_with_resolution, expand_sweep_with, parse, Bindings, SequenceSpec};

use crate::args::{CalibrateArgs, CompileArgs, ExperimentArgs, FitArgs, Global, RerunArgs, SimulateArgs};
use crate::output::{gnuplot_script, json_text, sidecar, write};
use crate::CliError;

fn run_config(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::new(Preset::resolve(&g.preset)?);
    cfg.seed = g.seed;
    cfg.noise = g.noise;
    if let Some(n) = g.shots {
        cfg.shots = n;
    }
    if let Some(w) = g.bin_width {
        cfg.bin_width_ns = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A sequence file, or failing that a shipped protocol of that name.
fn load_sequence(name: &str) -> Result<SequenceSpec, CliError> {
    let path = Path::new(name);
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => match protocol_source(name) {
            Some(src) => src.to_string(),
            None => return Err(CliError::Input(format!("cannot read {}: {e}", path.display()))),
        },
    };
    parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_drive(s: &str) -> Result<MwDrive, CliError> {
    match s {
        "off" => Ok(MwDrive::Off),
        "rabi" => Ok(MwDrive::Rabi),
        other => match other.parse::<f64>() {
            Ok(p) if (0.0..=1.0).contains(&p) => Ok(MwDrive::Fixed(p)),
            _ => Err(CliError::Input(format!("--mw must be off, rabi or a fraction in [0, 1], got `{other}`"))),
        },
    }
}

fn write_table(path: &Path, text: &str, columns: &[String], gnuplot: bool) -> Result<(), CliError> {
    write(path, text)?;
    if gnuplot {
        gnuplot_script(path, columns)?;
    }
    Ok(())
}

pub fn simulate(g: &Global, a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = run_config(g)?;
    let spec = load_sequence(&a.pseq)?;
    let mut bindings: Vec<(&str, f64)> = a.bindings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if let Some(tau) = a.tau {
        bindings.push(("tau", tau));
    }
    let mw = a.mw.clone().unwrap_or_else(|| if spec.has_channel("mw") { "rabi" } else { "off" }.to_string());
    let drive = parse_drive(&mw)?;
    let k_e = a.k_e.unwrap_or(cfg.preset.laser.k_exp);
    let tl = compile_protocol(&spec, &bindings)?;
    let sim = Simulator::new(&cfg);
    let len = sim.readout_length(&tl)?;
    let traj = sim.run(&tl, k_e, drive, &[Span::new(0.0, len, a.dt)])?.remove(0);
    let hist = sim.histogram(&traj, 0)?;
    let (_, steady_end) = cfg.steady_window_ns;
    let overshoot = if steady_end <= len {
        Some(overshoot_ratio(&hist, cfg.steady_window_ns, cfg.median_filter)?)
    } else {
        None
    };

    let mut csv = Vec::new();
    traj.write_csv(&mut csv).expect("writing to memory");
    let mut hcsv = Vec::new();
    hist.write_csv(&mut hcsv).expect("writing to memory");
    let columns: Vec<String> = ["t_ns", "n_gs0", "n_gs1", "n_es0", "n_es1", "n_is", "pl"].map(String::from).to_vec();
    let dir = &g.out;
    write_table(&dir.join("trajectory.csv"), &String::from_utf8_lossy(&csv), &columns, g.gnuplot)?;
    write_table(
        &dir.join("histogram.csv"),
        &String::from_utf8_lossy(&hcsv),
        &["bin_start_ns".into(), "counts".into()],
        g.gnuplot,
    )?;
    let bound: BTreeMap<&str, f64> = bindings.iter().copied().collect();
    let meta = json!({
        "sequence": spec.to_string(),
        "bindings": bound,
        "k_e": k_e,
        "mw": mw,
        "dt_ns": a.dt,
        "readout_length_ns": len,
        "samples": traj.len(),
        "clamped_components": traj.clamped,
        "overshoot_ratio": overshoot,
        "timeline": tl.to_json(),
        "config_hash": cfg.hash(),
        "config": serde_json::to_value(&cfg).expect("config serializes"),
    });
    write(&dir.join("trajectory.json"), &json_text(&meta))?;
    sidecar(dir)?;
    match overshoot {
        Some(r) => println!("read-out {len} ns, {} samples, overshoot ratio {r:.4}", traj.len()),
        None => println!("read-out {len} ns, {} samples", traj.len()),
    }
    Ok(())
}

fn headline(r: &ExperimentReport) -> String {
    let s = &r.summary;
    let get = |k: &str| s.get(k).copied().unwrap_or(f64::NAN);
    match r.protocol.as_str() {
        "fig2_recovery" => {
            let mut each: Vec<(f64, f64)> = s
                .iter()
                .filter_map(|(k, t)| Some((s.get(&format!("k_e[{}", k.strip_prefix("T_IS_ns[")?))?, *t)))
                .map(|(k, t)| (*k, t))
                .collect();
            each.sort_by(|a, b| a.0.total_cmp(&b.0));
            let list: Vec<String> = each.iter().map(|(k, t)| format!("{t:.2} ns at {k:.2e}")).collect();
            format!("T_IS ≈ {:.1} ns ({} s⁻¹)", get("T_IS_mean_ns"), list.join(", "))
        }
        "fig3_init" => format!(
            "power-law exponent a ≈ {:.2}, t95 at k_exp = {:.0} ns",
            get("power_law_a"),
            get("t95_at_k_exp_ns")
        ),
        "fig4a_rabi" => format!(
            "amplitude time constant ≈ {:.1} ns, last/first amplitude {:.2}",
            get("T_buffer_ns"),
            get("amplitude_ratio_last_first")
        ),
        "fig4c_t1" => format!(
            "short-range time constant ≈ {:.1} ns, T1 ≈ {:.1} µs",
            get("T_short_ns"),
            get("T1_long_ns") / 1e3
        ),
        "fig1c_odmr" => format!(
            "{} resolved dips, groups at {:.3} and {:.3} GHz",
            get("resolved_dips"),
            get("group_low_ghz"),
            get("group_high_ghz")
        ),
        other => other.to_string(),
    }
}

fn finish_experiment(g: &Global, out: &ExperimentOutput, dir: &Path) -> Result<(), CliError> {
    let written = out.write_to(dir)?;
    if g.gnuplot {
        for t in &out.tables {
            gnuplot_script(&dir.join(&t.name), &t.columns)?;
        }
    }
    sidecar(dir)?;
    println!("{}", headline(&out.report));
    for note in &out.report.notes {
        println!("note: {note}");
    }
    println!("wrote {} files to {}", written.len(), dir.display());
    let failed: Vec<&str> = out.report.fits.iter().filter(|(_, f)| !f.converged).map(|(k, _)| k.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!("fits did not converge: {}", failed.join(", "))))
    }
}

pub fn experiment(g: &Global, a: &ExperimentArgs) -> Result<(), CliError> {
    let mut cfg = run_config(g)?;
    if let Some(hf) = a.hyperfine_a {
        cfg.preset.system.hyperfine_a_mhz = Some(hf);
        cfg.validate()?;
    }
    let name = a.name.as_str();
    let exp = Experiment::default_for(name, &cfg.preset).expect("every listed experiment has defaults");
    let out = exp.run(&cfg)?;
    finish_experiment(g, &out, &g.out.join(name))
}

/// Runs the configuration and request embedded in a report. Flags that would
/// change the configuration are ignored.
pub fn rerun(g: &Global, a: &RerunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.report)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.report.display())))?;
    let report: ExperimentReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{} is not a report: {e}", a.report.display())))?;
    let p = &report.provenance;
    if p.config.hash() != p.config_hash {
        return Err(CliError::Input(format!(
            "{}: embedded configuration does not match its hash",
            a.report.display()
        )));
    }
    let exp = p
        .request
        .as_ref()
        .ok_or_else(|| CliError::Input(format!("{} records no experiment request", a.report.display())))?;
    let out = exp.run(&p.config)?;
    finish_experiment(g, &out, &g.out)
}

struct Table {
    header: Option<Vec<String>>,
    /// `(line number, fields)`
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(fields);
        } else {
            rows.push((line, fields));
        }
    }
    Ok(Table { header, rows })
}

fn column(table: &Table, spec: &str) -> Result<usize, CliError> {
    if let Ok(i) = spec.parse::<usize>() {
        return Ok(i);
    }
    table
        .header
        .as_ref()
        .and_then(|h| h.iter().position(|c| c == spec))
        .ok_or_else(|| CliError::Input(format!("no column named `{spec}`")))
}

fn field(fields: &[String], col: usize, line: u64) -> Result<f64, CliError> {
    let raw = fields
        .get(col)
        .ok_or_else(|| CliError::Input(format!("row {line}: missing column {col}")))?;
    raw.parse()
        .map_err(|_| CliError::Input(format!("row {line}: `{raw}` in column {col} is not a number")))
}

pub fn fit(g: &Global, a: &FitArgs) -> Result<(), CliError> {
    let table = read_table(&a.csv)?;
    let (cx, cy) = (column(&table, &a.x)?, column(&table, &a.y)?);
    let cs = match &a.sigma {
        Some(s) => Some(column(&table, s)?),
        None => table.rows.first().filter(|(_, f)| f.len() >= 3 && cx < 2 && cy < 2).map(|_| 2),
    };
    let (mut x, mut y, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for (line, fields) in &table.rows {
        let xv = field(fields, cx, *line)?;
        let yv = field(fields, cy, *line)?;
        let sv = cs.map(|c| field(fields, c, *line)).transpose()?;
        if a.range.is_some_and(|(lo, hi)| xv < lo || xv > hi) {
            continue;
        }
        x.push(xv);
        y.push(yv);
        sigma.extend(sv);
    }
    let model = a.model.model();
    let opts = FitOptions {
        sigma: cs.map(|_| sigma),
        multistart: a.multistart,
        ..FitOptions::default()
    };
    let result = run_fit(model, &x, &y, &opts)?;
    let text = serde_json::to_string_pretty(&result).expect("fit result serializes") + "\n";
    let stem = a.csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
    let path: PathBuf = g.out.join(format!("{stem}.{}.fit.json", model.name()));
    write(&path, &text)?;
    print!("{text}");
    if result.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "{} fit did not converge after {} iterations; result written to {}",
            model.name(),
            result.iterations,
            path.display()
        )))
    }
}

fn timeline_json(b: &Bindings, tl: &spinshelve::pulseseq::Timeline) -> Value {
    json!({
        "bindings": b,
        "duration_ns": tl.duration_ns(),
        "resolution_ns": tl.resolution_ns(),
        "channels": tl.to_json(),
    })
}

pub fn compile(g: &Global, a: &CompileArgs) -> Result<(), CliError> {
    let spec = load_sequence(&a.pseq)?;
    let base: Bindings = a.bindings.iter().cloned().collect();
    match &a.sweep {
        None => {
            let tl = compile_with_resolution(&spec, &base, a.resolution)?;
            let text = json_text(&timeline_json(&base, &tl));
            write(&g.out.join("timeline.json"), &text)?;
            print!("{text}");
        }
        Some((var, start, stop, step)) => {
            let values = linear_grid(*start, *stop, *step);
            if values.is_empty() {
                return Err(CliError::Input(format!("sweep {var}={start}:{stop}:{step} has no points")));
            }
            // check the sweep and compile every point before writing anything
            expand_sweep_with(&spec, &base, var, &values[..1])?;
            let mut files = Vec::with_capacity(values.len());
            for &v in &values {
                let mut b = base.clone();
                b.insert(var.clone(), v);
                let tl = compile_with_resolution(&spec, &b, a.resolution)?;
                files.push(json_text(&timeline_json(&b, &tl)));
            }
            let width = values.len().to_string().len().max(3);
            for (i, text) in files.iter().enumerate() {
                write(&g.out.join(format!("timeline_{i:0width$}.json")), text)?;
            }
            println!("wrote {} timelines to {}", files.len(), g.out.display());
        }
    }
    Ok(())
}

pub fn calibrate(g: &Global, a: &CalibrateArgs) -> Result<(), CliError> {
    let mut preset = Preset::resolve(&g.preset)?;
    let cal = preset
        .calibration
        .ok_or_else(|| CliError::Input(format!("preset `{}` has no [calibration] section", preset.name)))?;
    let rates = calibrate_rates(&cal.targets, &cal.priors)?;
    let n_is = steady_state(&rates, cal.targets.k_exp)?.n_is;
    preset.system.rates = rates;
    preset.validate()?;
    eprintln!(
        "T_IS = {:.3} ns, steady-state IS occupation {n_is:.4} at k_exp = {:e} s⁻¹",
        rates.t_is_ns().unwrap_or(f64::INFINITY),
        cal.targets.k_exp
    );
    let text = preset.to_toml();
    match &a.write {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
