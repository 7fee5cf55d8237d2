//! Artifact files and human-readable summaries.
//!
//! Every pipeline stage writes its result as JSON next to its inputs:
//! `poison_record.json`, `report.json`, `baseline.json`, `mitigation.json`.
//! All writes go through [`write_atomic`] (write-temp-rename) so partially
//! written artifacts are never observed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `payload` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, payload: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, payload)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes `value` as pretty JSON and writes it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

/// Reads a JSON artifact.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::format(format!("missing artifact {}", path.display())));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Output format for rendered summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(Error::config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Renders an inspection report in the requested format.
///
/// Column set for CSV is fixed: `label,r,n,anomaly_index,degenerate,mask_l1,flip_rate,skipped`.
pub fn render_inspection(
    report: &crate::inspector::InspectionReport,
    format: ReportFormat,
) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Csv => {
            let mut out = String::from("label,r,n,anomaly_index,degenerate,mask_l1,flip_rate,skipped\n");
            for label in &report.labels {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    label.label,
                    label.transfer_ratio.map(|v| v.to_string()).unwrap_or_default(),
                    label.sample_count.map(|v| v.to_string()).unwrap_or_default(),
                    label.anomaly_index.map(|v| v.to_string()).unwrap_or_default(),
                    label.degenerate,
                    label.mask_l1.map(|v| v.to_string()).unwrap_or_default(),
                    label.flip_rate.map(|v| v.to_string()).unwrap_or_default(),
                    label.skipped,
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!(
                "# Inspection report\n\nverdict: **{}**\n\n",
                match report.verdict {
                    crate::inspector::Verdict::Trojaned => "trojaned",
                    crate::inspector::Verdict::Clean => "clean",
                }
            ));
            out.push_str(&format!(
                "max anomaly index: {:.4}\n\ninfected labels: {:?}\n\n",
                report.max_anomaly_index, report.infected_labels
            ));
            out.push_str("| label | r | n | anomaly index | degenerate | mask L1 | flip rate | skipped |\n");
            out.push_str("|---|---|---|---|---|---|---|---|\n");
            for label in &report.labels {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    label.label,
                    label.transfer_ratio.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                    label.sample_count.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    label.anomaly_index.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                    label.degenerate,
                    label.mask_l1.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
                    label.flip_rate.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                    label.skipped,
                ));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }
}
