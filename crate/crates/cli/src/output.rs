//! Output files. Results are written atomically and never contain the wall
//! clock; the time of a run goes to a separate sidecar.

use std::path::Path;

use spinshelve::io::write_atomic;

use crate::CliError;

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// `run_info.json` next to the results: when and how they were produced.
pub fn sidecar(dir: &Path) -> Result<(), CliError> {
    let info = serde_json::json!({
        "finished_at": chrono::Utc::now().to_rfc3339(),
        "command_line": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write(&dir.join("run_info.json"), &json_text(&info))
}

/// Gnuplot script plotting every column of `csv` against the first.
pub fn gnuplot_script(csv: &Path, columns: &[String]) -> Result<(), CliError> {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str(&format!("set xlabel '{}'\n", columns.first().map_or("x", |c| c.as_str())));
    s.push_str("set key autotitle columnhead\n");
    s.push_str(&format!("plot for [i=2:{}] '{name}' using 1:i with linespoints\n", columns.len().max(2)));
    s.push_str("pause mouse close\n");
    write(&csv.with_extension("gp"), &s)
}
