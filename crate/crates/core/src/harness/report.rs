//! Report files. Every writer is deterministic in its input.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::run::{OccasionRecord, RunReport};
use super::HarnessError;
use crate::serde_db::fmt_db;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    /// `occasions.csv` and `aggregate.csv`.
    Csv,
    /// `run.jsonl` and `aggregate.json`.
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" => Ok(Format::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io { path: path.to_path_buf(), source: e }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

/// Flat per-occasion summary for spreadsheet use.
#[derive(Serialize)]
struct OccasionRow {
    occasion_id: u64,
    signal_type: &'static str,
    beam_bitmap: u64,
    n_subcarriers: usize,
    n_symbols: usize,
    papr_db: String,
    detections: usize,
    targets_in_view: usize,
    targets_detected: usize,
    false_alarms: usize,
    mean_peak_snr: String,
    quality_below_target: bool,
    suspected_spoof: bool,
    integrity_failure: bool,
    commands: String,
    status: String,
    fronthaul_bits: u64,
    sniff_outcome: String,
    fake_target_detected: bool,
}

impl From<&OccasionRecord> for OccasionRow {
    fn from(r: &OccasionRecord) -> Self {
        let commands: Vec<String> = r
            .commands
            .iter()
            .map(|c| serde_json::to_value(c.kind).ok().and_then(|v| v["kind"].as_str().map(String::from)).unwrap_or_default())
            .collect();
        Self {
            occasion_id: r.occasion_id,
            signal_type: r.signal_type.as_str(),
            beam_bitmap: r.beam_bitmap,
            n_subcarriers: r.n_subcarriers,
            n_symbols: r.n_symbols,
            papr_db: fmt_db(r.papr_db),
            detections: r.detections.len(),
            targets_in_view: r.truth.iter().filter(|t| t.in_view).count(),
            targets_detected: r.truth.iter().filter(|t| t.in_view && t.detected).count(),
            false_alarms: r.false_alarms,
            mean_peak_snr: fmt_db(r.quality.mean_peak_snr),
            quality_below_target: r.quality.quality_below_target,
            suspected_spoof: r.flags.suspected_spoof,
            integrity_failure: r.flags.integrity_failure,
            commands: commands.join("+"),
            status: r.status.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_default(),
            fronthaul_bits: r.load.bits_per_slot,
            sniff_outcome: r.sniff_outcome.clone().unwrap_or_default(),
            fake_target_detected: r.attacks.iter().any(|a| a.fake_target_detected),
        }
    }
}

/// Header line of `T` as the csv crate would write it.
fn header_of<T: Serialize>(sample: &T) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(sample)?;
    let buf = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    let end = buf.iter().position(|&b| b == b'\n').map_or(buf.len(), |i| i + 1);
    Ok(buf[..end].to_vec())
}

/// Writes `rows` with a header; an empty table still gets its header from
/// `template`.
fn write_csv<T: Serialize>(path: &Path, rows: &[T], template: &T) -> Result<(), HarnessError> {
    if rows.is_empty() {
        let header = header_of(template).map_err(csv_err(path))?;
        return fs::write(path, header).map_err(io_err(path));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the run in each requested format; returns the files written.
pub fn emit_reports(report: &RunReport, out_dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    if formats.contains(&Format::Jsonl) {
        let path = out_dir.join("run.jsonl");
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for r in &report.records {
            let line = serde_json::to_string(r).map_err(|e| io_err(&path)(e.into()))?;
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);

        let path = out_dir.join("aggregate.json");
        let body = serde_json::to_string_pretty(&report.aggregate).map_err(|e| io_err(&path)(e.into()))?;
        fs::write(&path, body + "\n").map_err(io_err(&path))?;
        written.push(path);
    }
    if formats.contains(&Format::Csv) {
        let path = out_dir.join("occasions.csv");
        let rows: Vec<OccasionRow> = report.records.iter().map(OccasionRow::from).collect();
        let template = OccasionRow::from(&template_record());
        write_csv(&path, &rows, &template)?;
        written.push(path);

        let path = out_dir.join("aggregate.csv");
        if report.records.is_empty() {
            write_csv(&path, &[], &report.aggregate)?;
        } else {
            write_csv(&path, std::slice::from_ref(&report.aggregate), &report.aggregate)?;
        }
        written.push(path);
    }
    Ok(written)
}

/// Writes a comparison table as `<name>.csv`.
pub fn emit_comparison<T: Serialize>(rows: &[T], out_dir: &Path, name: &str) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Stand-in record used only to derive the CSV header of an empty run.
fn template_record() -> OccasionRecord {
    use crate::control::{assess_missing, QualityTarget};
    use crate::fronthaul::{FronthaulLoadReport, Placement};
    let num = crate::Numerology::nr_30khz(12, 2);
    OccasionRecord {
        occasion_id: 0,
        signal_type: crate::waveform::SignalType::StochasticData,
        beam_bitmap: 0,
        n_subcarriers: 0,
        n_symbols: 0,
        papr_db: 0.0,
        detections: Vec::new(),
        truth: Vec::new(),
        false_alarms: 0,
        quality: assess_missing(0, &num, &QualityTarget::default()),
        flags: Default::default(),
        commands: Vec::new(),
        status: None,
        load: FronthaulLoadReport { placement: Placement::RuProcessing, bits_per_slot: 0, breakdown: Vec::new() },
        sniff_outcome: None,
        attacks: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::Aggregate;

    fn empty_report() -> RunReport {
        RunReport { scenario: "empty".into(), master_seed: 0, records: Vec::new(), aggregate: Aggregate::from_records(&[]) }
    }

    #[test]
    fn empty_run_gives_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&empty_report(), dir.path(), &[Format::Csv, Format::Jsonl]).unwrap();
        for name in ["occasions.csv", "aggregate.csv"] {
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().count(), 1, "{name}: {text}");
            assert!(text.starts_with("occasion_id") || text.starts_with("n_occasions"), "{text}");
        }
        assert_eq!(fs::read_to_string(dir.path().join("run.jsonl")).unwrap(), "");
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<Format>(), Ok(Format::Csv));
        assert_eq!(" jsonl".parse::<Format>(), Ok(Format::Jsonl));
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn unwritable_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let e = emit_reports(&empty_report(), &blocker.join("sub"), &[Format::Csv]).unwrap_err();
        assert!(e.to_string().contains("file"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }
}
