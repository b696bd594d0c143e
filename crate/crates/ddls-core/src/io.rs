//! File formats: metrics CSV, complex grid CSV (one row per symbol/Doppler
//! bin, entries as `re+imj`), channel JSON for replay, run manifests, and
//! diagnostic exports. All numeric output uses Rust's shortest
//! round-tripping float formatting, which is locale-independent.

use crate::channel::{GridConfig, MimoChannelSet};
use crate::error::{DdlsError, Result};
use crate::harness::MetricsTable;
use crate::mimo::{Precoder, PrecoderScope};
use crate::ofdm::TfGrid;
use crate::otfs::{DdGrid, DdTap};
use crate::predict::BemFit;
use crate::CMat;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// `re+imj` with full round-trip precision, e.g. `1.5-0.25j`.
pub fn format_complex(z: Complex64) -> String {
    if z.im >= 0.0 || z.im.is_nan() {
        format!("{}+{}j", z.re, z.im)
    } else {
        format!("{}{}j", z.re, z.im)
    }
}

/// Parses the `re±imj` form.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let t = s.trim();
    let inner = t
        .strip_suffix('j')
        .ok_or_else(|| DdlsError::Parse(format!("complex value '{t}' must end in j")))?;
    // Split at the sign of the imaginary part (skipping a leading sign and
    // exponent signs).
    let bytes = inner.as_bytes();
    let mut split = None;
    for i in (1..bytes.len()).rev() {
        let b = bytes[i];
        if (b == b'+' || b == b'-') && bytes[i - 1] != b'e' && bytes[i - 1] != b'E' {
            split = Some(i);
            break;
        }
    }
    let i = split.ok_or_else(|| DdlsError::Parse(format!("no imaginary part in '{t}'")))?;
    let re: f64 = inner[..i]
        .parse()
        .map_err(|e| DdlsError::Parse(format!("bad real part in '{t}': {e}")))?;
    let im: f64 = inner[i..]
        .parse()
        .map_err(|e| DdlsError::Parse(format!("bad imaginary part in '{t}': {e}")))?;
    Ok(Complex64::new(re, im))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| DdlsError::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| DdlsError::io(path.display().to_string(), e))
}

fn matrix_to_csv(m: &CMat) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for z in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_complex(*z));
            first = false;
        }
        out.push('\n');
    }
    out
}

fn matrix_from_csv(text: &str) -> Result<CMat> {
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            line.split(',')
                .map(parse_complex)
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if rows.is_empty() {
        return Err(DdlsError::Parse("empty grid file".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(DdlsError::Parse("ragged grid rows".into()));
    }
    let data: Vec<Complex64> = rows.into_iter().flatten().collect();
    let nrows = data.len() / cols;
    Array2::from_shape_vec((nrows, cols), data)
        .map_err(|e| DdlsError::Parse(format!("grid shape: {e}")))
}

/// Time-frequency grid CSV: row = symbol, column = subcarrier.
pub fn write_tf_grid(path: &Path, grid: &TfGrid) -> Result<()> {
    write_file(path, &matrix_to_csv(&grid.data))
}

pub fn read_tf_grid(path: &Path) -> Result<TfGrid> {
    let data = matrix_from_csv(&read_file(path)?)?;
    Ok(TfGrid {
        m_symbols: data.nrows(),
        n_subcarriers: data.ncols(),
        data,
    })
}

/// Delay-Doppler grid CSV: row = Doppler bin, column = delay bin.
pub fn write_dd_grid(path: &Path, grid: &DdGrid) -> Result<()> {
    write_file(path, &matrix_to_csv(&grid.data))
}

pub fn read_dd_grid(path: &Path) -> Result<DdGrid> {
    let data = matrix_from_csv(&read_file(path)?)?;
    Ok(DdGrid {
        m_doppler: data.nrows(),
        n_delay: data.ncols(),
        data,
    })
}

/// Replayable channel file: grid geometry plus every antenna pair's paths
/// and the frame horizon of the run it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    pub grid: GridConfig,
    pub channel: MimoChannelSet,
    #[serde(default = "default_frames")]
    pub frames: usize,
}

fn default_frames() -> usize {
    usize::MAX
}

pub fn write_channel(path: &Path, file: &ChannelFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)
        .map_err(|e| DdlsError::Parse(format!("serialize channel: {e}")))?;
    write_file(path, &json)
}

pub fn read_channel(path: &Path) -> Result<ChannelFile> {
    serde_json::from_str(&read_file(path)?)
        .map_err(|e| DdlsError::Parse(format!("{}: {e}", path.display())))
}

/// Metrics CSV with the fixed column set of the harness.
pub fn write_metrics_csv(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut out = String::from(
        "scenario,waveform,predictor,snr_db,ber,ber_stderr,chan_nmse,precoder_nmse,trials,seed\n",
    );
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.waveform,
            r.predictor,
            r.snr_db,
            r.ber,
            r.ber_stderr,
            r.chan_nmse,
            r.precoder_nmse,
            r.trials,
            r.seed
        )
        .expect("string write");
    }
    write_file(path, &out)
}

/// Precoder CSV: header line with scope and CSI frame, then the matrix.
pub fn write_precoder(path: &Path, w: &Precoder) -> Result<()> {
    let scope = match w.scope {
        PrecoderScope::PerFrame => "frame".to_string(),
        PrecoderScope::PerSubcarrier(l) => format!("subcarrier:{l}"),
    };
    let mut out = format!(
        "# scope={scope} csi_frame={} regularized={}\n",
        w.csi_frame, w.regularized
    );
    out.push_str(&matrix_to_csv(&w.matrix));
    write_file(path, &out)
}

/// Tap map CSV: delay, Doppler, re, im.
pub fn write_taps(path: &Path, taps: &[DdTap]) -> Result<()> {
    let mut out = String::from("delay,doppler,re,im\n");
    for t in taps {
        writeln!(out, "{},{},{},{}", t.delay, t.doppler, t.gain.re, t.gain.im)
            .expect("string write");
    }
    write_file(path, &out)
}

/// Refinement diagnostics CSV: per-iteration residual and the final
/// frequencies, for convergence plots.
pub fn write_fit_diagnostics(path: &Path, fit: &BemFit) -> Result<()> {
    let mut out = String::from("iteration,residual\n");
    for (i, r) in fit.residual_trajectory.iter().enumerate() {
        writeln!(out, "{i},{r}").expect("string write");
    }
    out.push_str("frequency\n");
    for f in &fit.frequencies {
        writeln!(out, "{f}").expect("string write");
    }
    write_file(path, &out)
}
