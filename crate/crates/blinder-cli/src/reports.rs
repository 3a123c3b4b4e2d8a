//! Report files: metrics JSON documents, the training round log CSV, and
//! privacy/utility curve CSVs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use blinder_core::eval::{CurvePoint, MetricsReport};
use blinder_core::fed::RoundRecord;

use crate::error::CliError;

/// A metrics report with the provenance needed to reproduce it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ReportDocument {
    pub target: String,
    pub seed: u64,
    pub report: MetricsReport,
    /// The same model scored on raw (un-anonymized) data, when available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_baseline: Option<MetricsReport>,
    pub config: serde_json::Value,
}

pub fn write_report(path: &Path, doc: &ReportDocument) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(doc)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

/// Round log: one row per client per round.
pub fn write_round_log(path: &Path, rounds: &[RoundRecord]) -> Result<(), CliError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,round,client,vae_loss,disc_loss,meta_loss,grad_norm")?;
    for record in rounds {
        for c in &record.clients {
            let disc = if c.disc_query.is_empty() {
                f64::NAN
            } else {
                c.disc_query.iter().sum::<f64>() / c.disc_query.len() as f64
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                record.epoch, record.round, c.client, c.support_loss, disc, c.meta_loss, c.grad_norm
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Curve CSV: per-epoch desired/intrusive accuracy and MI values. Intrusive
/// and private-MI columns repeat per attribute.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), CliError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let attrs = curve.first().map_or(0, |p| p.intrusive_accuracy.len());
    write!(w, "epoch,desired_acc")?;
    for j in 0..attrs {
        write!(w, ",intrusive_acc_{j}")?;
    }
    write!(w, ",mi_public")?;
    for j in 0..attrs {
        write!(w, ",mi_private_{j}")?;
    }
    writeln!(w)?;
    for point in curve {
        write!(w, "{},{}", point.epoch, point.desired_accuracy)?;
        for v in &point.intrusive_accuracy {
            write!(w, ",{v}")?;
        }
        write!(w, ",{}", point.mi_public)?;
        for v in &point.mi_private {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use blinder_core::fed::ClientRoundStats;

    #[test]
    fn round_log_has_one_row_per_client() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        let rounds = vec![RoundRecord {
            epoch: 0,
            round: 1,
            selected: vec![0, 2],
            clients: vec![
                ClientRoundStats {
                    client: 0,
                    support_loss: 1.5,
                    meta_loss: 1.25,
                    disc_query: vec![0.7],
                    grad_norm: 3.0,
                    skipped: false,
                },
                ClientRoundStats {
                    client: 2,
                    support_loss: 1.0,
                    meta_loss: 0.75,
                    disc_query: vec![0.6],
                    grad_norm: 2.0,
                    skipped: false,
                },
            ],
            aggregate_norm: 2.5,
        }];
        write_round_log(&path, &rounds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1,0,1.5,0.7,1.25,3"));
    }

    #[test]
    fn curve_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = vec![CurvePoint {
            epoch: 0,
            desired_accuracy: 0.9,
            intrusive_accuracy: vec![0.55, 0.6],
            mi_public: 0.5,
            mi_private: vec![0.1, 0.2],
        }];
        write_curve(&path, &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "epoch,desired_acc,intrusive_acc_0,intrusive_acc_1,mi_public,mi_private_0,mi_private_1"
        ));
        assert!(text.lines().nth(1).unwrap().starts_with("0,0.9,0.55,0.6,0.5,0.1,0.2"));
    }
}
