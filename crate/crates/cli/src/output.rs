use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Six significant digits; `NaN` and infinities spelled out.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a seventh digit (e.g. 9.999995).
        if s.trim_start_matches('-').trim_start_matches("0.").trim_start_matches('0').replace('.', "").len() > 6 {
            return format!("{:.*}", decimals.saturating_sub(1), x);
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

pub fn opt_sig6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// `# sgmm <version> <command>` and the resolved config as one JSON line.
pub fn csv_header(command: &str, config: &impl Serialize) -> CliResult<String> {
    let json = serde_json::to_string(config).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(format!("# sgmm {} {command}\n# config: {json}\n", env!("CARGO_PKG_VERSION")))
}

#[derive(Serialize)]
pub struct JsonDoc<'a, C: Serialize, B: Serialize> {
    pub program: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    #[serde(flatten)]
    pub body: B,
}

pub fn json_document(command: &str, config: &impl Serialize, body: impl Serialize) -> CliResult<String> {
    let doc = JsonDoc { program: "sgmm", version: env!("CARGO_PKG_VERSION"), command, config, body };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes to a temporary file in the target directory and renames it into
/// place, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let err = |e: std::io::Error| CliError::Output(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents.as_bytes()).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub fn emit(out: Option<&Path>, contents: &str) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes()).map_err(|e| CliError::Output(e.to_string()))
        }
    }
}
