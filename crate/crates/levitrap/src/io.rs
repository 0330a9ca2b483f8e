//! File formats: CSV traces and profiles, a raw binary profile layout, and
//! JSON fit records.
//!
//! Trace CSV schema: header `t_s,<value column>[,lit]` where the value
//! column label encodes the unit (`z_m`, `u_v`, `var_v2`, `e_j`, `e_kbt0`,
//! `f_hz`, `a2_m2`, `value`); the optional `lit` column holds 0/1
//! stroboscopic flags. Values round-trip bit-exactly through Rust's
//! shortest-representation float formatting.
//!
//! Profile CSV schema: header `position_m,intensity`.
//!
//! Profile binary layout (little-endian): magic `LPRF`, u32 version (1),
//! u64 sample count, f64 pixel pitch (m), f64 origin (m), then count f64
//! intensities.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::detection::IntensityProfile;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::spectral::{AllanPoint, FrequencySeries, Psd};
use crate::trace::{TimeTrace, Unit};

const PROFILE_MAGIC: &[u8; 4] = b"LPRF";
const PROFILE_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Column mapping for importing externally produced CSV traces whose headers
/// do not follow the native schema.
#[derive(Debug, Clone, serde::Deserialize)]
pub struct HeaderMap {
    pub time_column: String,
    pub value_column: String,
    /// Native unit label the value column corresponds to (e.g. `z_m`).
    pub unit: String,
}

impl HeaderMap {
    pub fn from_toml_file(path: &Path) -> Result<HeaderMap> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| parse_err(path, 0, e.to_string()))
    }
}

/// Writes a trace in the native CSV schema.
pub fn export_trace_csv(trace: &TimeTrace, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let has_mask = trace.lit.is_some();
    if has_mask {
        writeln!(out, "t_s,{},lit", trace.unit.column_label())?;
    } else {
        writeln!(out, "t_s,{}", trace.unit.column_label())?;
    }
    for i in 0..trace.len() {
        if has_mask {
            writeln!(
                out,
                "{},{},{}",
                trace.time(i),
                trace.values[i],
                if trace.is_lit(i) { 1 } else { 0 }
            )?;
        } else {
            writeln!(out, "{},{}", trace.time(i), trace.values[i])?;
        }
    }
    Ok(())
}

/// Imports a trace from the native CSV schema.
pub fn import_trace_csv(path: &Path) -> Result<TimeTrace> {
    import_trace_csv_mapped(path, None)
}

/// Imports a trace, optionally remapping foreign column names.
pub fn import_trace_csv_mapped(path: &Path, map: Option<&HeaderMap>) -> Result<TimeTrace> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();

    let (t_idx, v_idx, unit, lit_idx) = match map {
        None => {
            if cols.is_empty() || cols[0] != "t_s" {
                return Err(parse_err(
                    path,
                    1,
                    format!("expected first column 't_s', got '{}'", cols.first().unwrap_or(&"")),
                ));
            }
            if cols.len() < 2 {
                return Err(parse_err(path, 1, "missing value column"));
            }
            let unit = Unit::from_column_label(cols[1]).ok_or_else(|| {
                parse_err(
                    path,
                    1,
                    format!(
                        "unknown unit column '{}'; expected one of z_m, a2_m2, u_v, var_v2, e_j, e_kbt0, f_hz, value",
                        cols[1]
                    ),
                )
            })?;
            let lit_idx = cols.iter().position(|c| *c == "lit");
            (0usize, 1usize, unit, lit_idx)
        }
        Some(m) => {
            let t_idx = cols
                .iter()
                .position(|c| *c == m.time_column)
                .ok_or_else(|| {
                    parse_err(path, 1, format!("time column '{}' not found", m.time_column))
                })?;
            let v_idx = cols
                .iter()
                .position(|c| *c == m.value_column)
                .ok_or_else(|| {
                    parse_err(path, 1, format!("value column '{}' not found", m.value_column))
                })?;
            let unit = Unit::from_column_label(&m.unit)
                .ok_or_else(|| parse_err(path, 1, format!("unknown unit '{}'", m.unit)))?;
            (t_idx, v_idx, unit, None)
        }
    };

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut lit = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let need = t_idx.max(v_idx).max(lit_idx.unwrap_or(0)) + 1;
        if fields.len() < need {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("expected {need} fields, got {}", fields.len()),
            ));
        }
        let t: f64 = fields[t_idx]
            .parse()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad time value: {e}")))?;
        let v: f64 = fields[v_idx]
            .parse()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad value: {e}")))?;
        times.push(t);
        values.push(v);
        if let Some(li) = lit_idx {
            lit.push(fields[li] != "0");
        }
    }
    if times.len() < 2 {
        return Err(parse_err(path, 1, "trace needs at least two samples"));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(parse_err(path, 2, "time column must increase"));
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(parse_err(
                path,
                i + 3,
                "trace sampling must be uniform",
            ));
        }
    }
    let mut trace = TimeTrace::new(times[0], dt, values, unit);
    if !lit.is_empty() {
        trace = trace.with_mask(lit);
    }
    Ok(trace)
}

/// Writes a profile as `position_m,intensity` CSV.
pub fn export_profile_csv(profile: &IntensityProfile, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "position_m,intensity")?;
    for (p, v) in profile.positions.iter().zip(&profile.intensities) {
        writeln!(out, "{},{}", p * profile.meter_per_pixel, v)?;
    }
    Ok(())
}

/// Imports a `position_m,intensity` CSV profile. Positions are converted to
/// pixel units of the inferred pitch.
pub fn import_profile_csv(path: &Path) -> Result<IntensityProfile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if header.trim() != "position_m,intensity" {
        return Err(parse_err(
            path,
            1,
            format!("expected header 'position_m,intensity', got '{header}'"),
        ));
    }
    let mut pos_m = Vec::new();
    let mut intensities = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',').map(str::trim);
        let p: f64 = it
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad position: {e}")))?;
        let v: f64 = it
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing intensity field"))?
            .parse()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad intensity: {e}")))?;
        pos_m.push(p);
        intensities.push(v);
    }
    if pos_m.len() < 2 {
        return Err(parse_err(path, 1, "profile needs at least two samples"));
    }
    let pitch_m = pos_m[1] - pos_m[0];
    if !(pitch_m > 0.0) {
        return Err(parse_err(path, 2, "positions must increase"));
    }
    let positions: Vec<f64> = pos_m.iter().map(|p| p / pitch_m).collect();
    Ok(IntensityProfile {
        positions,
        intensities,
        meter_per_pixel: pitch_m,
        exposure: None,
    })
}

/// Writes a profile in the raw binary layout.
pub fn export_profile_binary(profile: &IntensityProfile, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(PROFILE_MAGIC)?;
    out.write_all(&PROFILE_VERSION.to_le_bytes())?;
    out.write_all(&(profile.intensities.len() as u64).to_le_bytes())?;
    out.write_all(&profile.meter_per_pixel.to_le_bytes())?;
    let origin_m = profile.positions.first().copied().unwrap_or(0.0) * profile.meter_per_pixel;
    out.write_all(&origin_m.to_le_bytes())?;
    for v in &profile.intensities {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a profile from the raw binary layout.
pub fn import_profile_binary(path: &Path) -> Result<IntensityProfile> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| parse_err(path, 0, msg);
    if bytes.len() < 32 || &bytes[0..4] != PROFILE_MAGIC {
        return Err(fail("not a profile file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PROFILE_VERSION {
        return Err(fail(&format!("unsupported profile version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let pitch = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let origin_m = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let expected = 32 + count * 8;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "truncated profile: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    if !(pitch > 0.0) {
        return Err(fail("pixel pitch must be > 0"));
    }
    let intensities: Vec<f64> = (0..count)
        .map(|i| f64::from_le_bytes(bytes[32 + 8 * i..40 + 8 * i].try_into().unwrap()))
        .collect();
    let origin_px = origin_m / pitch;
    Ok(IntensityProfile {
        positions: (0..count).map(|i| origin_px + i as f64).collect(),
        intensities,
        meter_per_pixel: pitch,
        exposure: None,
    })
}

/// Serializes a fit result as pretty JSON.
pub fn export_fit_json(fit: &FitResult, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(fit)
        .map_err(|e| Error::invalid(format!("fit serialization failed: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Writes Allan deviation points as CSV.
pub fn export_allan_csv(points: &[AllanPoint], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "tau_s,sigma,sigma_stderr,intervals")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.tau_actual,
            p.sigma.map_or(f64::NAN, |s| s),
            p.sigma_stderr.map_or(f64::NAN, |s| s),
            p.intervals
        )?;
    }
    Ok(())
}

/// Writes a frequency series as `t_s,f_hz` CSV (gap samples flagged).
pub fn export_frequency_csv(series: &FrequencySeries, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "t_s,f_hz,valid")?;
    for i in 0..series.len() {
        writeln!(
            out,
            "{},{},{}",
            series.times[i],
            series.frequencies[i],
            if series.valid[i] { 1 } else { 0 }
        )?;
    }
    Ok(())
}

/// Writes a PSD as `f_hz,psd` CSV.
pub fn export_psd_csv(psd: &Psd, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "f_hz,psd")?;
    for (f, v) in psd.frequencies.iter().zip(&psd.values) {
        writeln!(out, "{},{}", f, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempdir::tmp_path;

    mod tempdir {
        use std::path::PathBuf;
        use std::sync::atomic::{AtomicU64, Ordering};

        static COUNTER: AtomicU64 = AtomicU64::new(0);

        pub fn tmp_path(name: &str) -> PathBuf {
            let n = COUNTER.fetch_add(1, Ordering::Relaxed);
            let dir = std::env::temp_dir().join(format!(
                "levitrap-io-test-{}-{n}",
                std::process::id()
            ));
            std::fs::create_dir_all(&dir).unwrap();
            dir.join(name)
        }
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let values = vec![1.2345678901234567e-6, -3.3e-7, 0.0, 5.5e-5, 1.0 / 3.0];
        let trace = TimeTrace::new(0.0, 0.125, values, Unit::Meter);
        let p1 = tmp_path("trace.csv");
        export_trace_csv(&trace, &p1).unwrap();
        let back = import_trace_csv(&p1).unwrap();
        assert_eq!(back.values, trace.values);
        assert_eq!(back.dt, trace.dt);
        assert_eq!(back.unit, Unit::Meter);
        // Export again: identical bytes.
        let p2 = tmp_path("trace2.csv");
        export_trace_csv(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn trace_with_mask_round_trips() {
        let trace = TimeTrace::new(0.0, 0.5, vec![1.0, 2.0, 3.0, 4.0], Unit::KbT0)
            .with_mask(vec![true, false, true, false]);
        let p = tmp_path("masked.csv");
        export_trace_csv(&trace, &p).unwrap();
        let back = import_trace_csv(&p).unwrap();
        assert_eq!(back.lit, trace.lit);
    }

    #[test]
    fn import_rejects_missing_unit_header() {
        let p = tmp_path("bad.csv");
        std::fs::write(&p, "t_s,position\n0,1\n1,2\n").unwrap();
        let err = import_trace_csv(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn import_reports_offending_line() {
        let p = tmp_path("badline.csv");
        std::fs::write(&p, "t_s,z_m\n0,1\n1,not-a-number\n").unwrap();
        match import_trace_csv(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_map_imports_foreign_columns() {
        let p = tmp_path("foreign.csv");
        std::fs::write(&p, "time,displacement\n0,1e-6\n0.1,2e-6\n").unwrap();
        let map = HeaderMap {
            time_column: "time".into(),
            value_column: "displacement".into(),
            unit: "z_m".into(),
        };
        let trace = import_trace_csv_mapped(&p, Some(&map)).unwrap();
        assert_eq!(trace.unit, Unit::Meter);
        assert_eq!(trace.values, vec![1e-6, 2e-6]);
    }

    #[test]
    fn profile_binary_round_trip() {
        let profile = IntensityProfile {
            positions: (0..64).map(|i| i as f64).collect(),
            intensities: (0..64).map(|i| (i as f64 * 0.1).sin().abs()).collect(),
            meter_per_pixel: 1.35e-6,
            exposure: None,
        };
        let p = tmp_path("profile.bin");
        export_profile_binary(&profile, &p).unwrap();
        let back = import_profile_binary(&p).unwrap();
        assert_eq!(back.intensities, profile.intensities);
        assert!((back.meter_per_pixel - profile.meter_per_pixel).abs() < 1e-20);
    }

    #[test]
    fn profile_binary_rejects_corruption() {
        let p = tmp_path("corrupt.bin");
        std::fs::write(&p, b"NOPE0000").unwrap();
        assert!(import_profile_binary(&p).is_err());
    }

    #[test]
    fn profile_csv_round_trip() {
        let profile = IntensityProfile {
            positions: (0..32).map(|i| i as f64).collect(),
            intensities: (0..32).map(|i| i as f64 * 0.25).collect(),
            meter_per_pixel: 2.0e-6,
            exposure: None,
        };
        let p = tmp_path("profile.csv");
        export_profile_csv(&profile, &p).unwrap();
        let back = import_profile_csv(&p).unwrap();
        assert_eq!(back.intensities, profile.intensities);
        assert!((back.meter_per_pixel - 2.0e-6).abs() < 1e-18);
    }
}
