//! Report envelope and file outputs. Reports are deterministic for a fixed
//! (config, seeds): no timestamps, sorted maps, shortest round-trip floats.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use crate::config::{EffectiveConfig, Mode};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Serialize)]
pub struct ReportEnvelope {
    pub format_version: u32,
    pub mode: &'static str,
    pub config: EffectiveConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl ReportEnvelope {
    pub fn ok(mode: Mode, config: EffectiveConfig, result: serde_json::Value) -> Self {
        ReportEnvelope {
            format_version: FORMAT_VERSION,
            mode: mode.as_str(),
            config,
            result: Some(result),
            error: None,
        }
    }

    pub fn failed(
        mode: Mode,
        config: EffectiveConfig,
        partial: Option<serde_json::Value>,
        error: ErrorInfo,
    ) -> Self {
        ReportEnvelope {
            format_version: FORMAT_VERSION,
            mode: mode.as_str(),
            config,
            result: partial,
            error: Some(error),
        }
    }
}

pub fn write_report(dir: &Path, envelope: &ReportEnvelope) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(envelope)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One row of the response series dump.
pub struct SeriesRow<'a> {
    pub t: f64,
    pub state: &'a [f64],
    pub divv_x: f64,
    pub psi: f64,
    pub eta: f64,
    pub f_eta: f64,
    pub nu_x: f64,
    pub phi: f64,
    pub d: f64,
}

pub fn write_series_csv<'a>(
    dir: &Path,
    dim: usize,
    rows: impl Iterator<Item = SeriesRow<'a>>,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("series.csv");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    write!(w, "t")?;
    for i in 0..dim {
        write!(w, ",x{i}")?;
    }
    writeln!(w, ",divv_x,psi,eta,f_eta,nu_x,phi,d")?;
    for row in rows {
        write!(w, "{}", row.t)?;
        for v in row.state {
            write!(w, ",{v}")?;
        }
        writeln!(
            w,
            ",{},{},{},{},{},{},{}",
            row.divv_x, row.psi, row.eta, row.f_eta, row.nu_x, row.phi, row.d
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_orbit_csv(
    dir: &Path,
    orbit: &equidiv::dynsys::OrbitSegment,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("series.csv");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    write!(w, "t")?;
    for i in 0..orbit.dim() {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    for k in 0..orbit.len() {
        write!(w, "{}", orbit.time(k))?;
        for v in orbit.state(k) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
