use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Opens `path`, or stdout when it is `None` or `-`.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

/// CSV writer whose output starts with `# key=value` provenance lines.
pub fn csv_with_header(path: Option<&Path>, header: &[(&str, String)]) -> Result<csv::Writer<Box<dyn Write>>> {
    let mut out = sink(path)?;
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(csv::Writer::from_writer(out))
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Fixed-precision rendering so files diff cleanly.
pub fn num(x: f64, digits: usize) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.digits$}")
    }
}

pub fn opt_num(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(String::new, |v| num(v, digits))
}
