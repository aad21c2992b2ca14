//! Plain-file outputs: training log, reports, comparison tables and images.

use std::io::Write;
use std::path::Path;

use nbagent_core::evalkit::{ComparisonRow, RunReport, Stat};
use nbagent_core::trainer::LogRow;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image buffer holds {got} pixels, expected {width}x{height}")]
    ImageSize { width: usize, height: usize, got: usize },
}

pub const LOG_HEADER: [&str; 7] = ["task", "iteration", "ce", "ssr", "srd", "total", "replayed"];

pub fn write_train_log<W: Write>(out: W, rows: &[LogRow]) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in rows {
        let l = r.loss;
        w.write_record([
            r.task.to_string(),
            r.iteration.to_string(),
            l.ce.to_string(),
            l.ssr.to_string(),
            l.srd.to_string(),
            l.total.to_string(),
            l.masked.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline. Field order is fixed by the types, so
/// equal values give byte-equal files.
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String, ArtifactError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<(), ArtifactError> {
    std::fs::write(path, to_json_text(report)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport, ArtifactError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub const COMPARISON_COLUMNS: [&str; 5] = ["base", "novel", "all", "avg", "forget"];

pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string(), "seeds".to_string()];
    for c in COMPARISON_COLUMNS {
        for s in ["mean", "min", "max"] {
            header.push(format!("{c}_{s}"));
        }
    }
    w.write_record(&header)?;
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let mut rec = vec![r.method.clone(), seeds.join(" ")];
        for st in [r.base, r.novel, r.all, r.avg, r.forget] {
            let Stat { mean, min, max } = st;
            rec.extend([mean, min, max].map(|x| format!("{x:.4}")));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary 8-bit PPM; channels are clamped to `[0, 1]`.
pub fn write_ppm<W: Write>(mut out: W, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<(), ArtifactError> {
    if rgb.len() != width * height {
        return Err(ArtifactError::ImageSize {
            width,
            height,
            got: rgb.len(),
        });
    }
    write!(out, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = rgb
        .iter()
        .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nbagent_core::distill::LossBreakdown;

    #[test]
    fn log_has_header_and_rows() {
        let row = LogRow {
            task: 1,
            iteration: 3,
            loss: LossBreakdown {
                ce: 2.0,
                ssr: 0.5,
                srd: 0.25,
                total: 2.55,
                masked: 1,
            },
        };
        let mut buf = Vec::new();
        write_train_log(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "task,iteration,ce,ssr,srd,total,replayed\n1,3,2,0.5,0.25,2.55,1\n");
    }

    #[test]
    fn ppm_layout() {
        let mut buf = Vec::new();
        write_ppm(&mut buf, 2, 1, &[[1.0, 0.0, 2.0], [0.5, -1.0, 0.0]]).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(&buf[11..], &[255, 0, 255, 128, 0, 0]);
        assert!(write_ppm(&mut Vec::new(), 2, 2, &[[0.0; 3]]).is_err());
    }
}
