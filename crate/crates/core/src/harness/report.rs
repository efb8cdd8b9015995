//! Report emission: plot-ready CSV for the decay fits and a JSON run
//! summary. The CSV bytes are a determinism surface, so floats print with
//! the shortest round-trip formatting and no timing data enters the file.

use super::fits::{DecayFit, FitStatus};
use crate::spectral::Grid;
use crate::{Error, Result};
use serde::Serialize;
use std::io::Write;

pub fn write_report_csv<W: Write>(w: &mut W, fits: &[DecayFit]) -> Result<()> {
    writeln!(w, "display_id,quantity,k,q,axis,predicted,fitted,r2,pass")?;
    for f in fits {
        let fitted = if f.slope.is_nan() {
            String::new()
        } else {
            format!("{:e}", f.slope)
        };
        let r2 = if f.r2.is_nan() {
            String::new()
        } else {
            format!("{:e}", f.r2)
        };
        let pass = match f.status {
            FitStatus::Pass => "pass",
            FitStatus::Fail => "fail",
            FitStatus::Vacuous => "vacuous",
            FitStatus::Partial => "partial",
        };
        writeln!(
            w,
            "{},{},{},{},{},{:e},{},{},{}",
            f.id,
            f.quantity,
            f.k,
            f.q,
            f.axis.label(),
            f.predicted,
            fitted,
            r2,
            pass
        )?;
    }
    Ok(())
}

/// Run metadata for the summary file (timings live here, not in the CSV).
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub grid: Grid,
    pub seed: u64,
    pub elapsed_seconds: f64,
    pub fits_total: usize,
    pub fits_passed: usize,
    pub partial: bool,
    pub notes: Vec<String>,
}

pub fn write_summary_json<W: Write>(w: &mut W, summary: &RunSummary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Config(format!("summary encode: {e}")))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fits::Axis;

    #[test]
    fn csv_layout_is_stable() {
        let fit = DecayFit::from_samples(
            "demo_R_k0_q2",
            "demo",
            0,
            2.0,
            Axis::Radius,
            vec![1.0, 2.0, 4.0],
            vec![1.0, 0.25, 0.0625],
            -2.0,
            0.3,
        );
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[fit]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "display_id,quantity,k,q,axis,predicted,fitted,r2,pass"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("demo_R_k0_q2,demo,0,2,R,"));
        assert!(row.ends_with(",pass"));
    }
}
