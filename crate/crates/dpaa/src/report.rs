//! CSV and markdown outputs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dpaa_core::eval::{EvalReport, Group};
use dpaa_core::train::EpochRecord;

use crate::experiment::{GridRow, SweepRow};

pub const REPORT_HEADER: &str = "group,k,recall,ndcg,hr,num_users";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("{}", path.display()))
}

pub fn training_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,delta_t,beta_t,val_recall\n");
    for r in log {
        let beta = r.beta_t.map(|b| format!("{b:.9}")).unwrap_or_default();
        writeln!(out, "{},{:.9},{:.9},{},{:.9}", r.epoch, r.loss, r.delta_t, beta, r.val_metric).unwrap();
    }
    out
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for g in Group::ALL {
        let m = report.group(g);
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            g.as_str(),
            report.k,
            m.recall,
            m.ndcg,
            m.hit_ratio,
            m.num_users
        )
        .unwrap();
    }
    out
}

/// One parsed row of a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: String,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub num_users: usize,
}

pub fn parse_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        bail!("{}: expected header `{REPORT_HEADER}`", path.display());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || anyhow::anyhow!("{}:{}: malformed report row", path.display(), n + 2);
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(ReportRow {
                group: f[0].to_string(),
                k: f[1].parse().map_err(|_| bad())?,
                recall: f[2].parse().map_err(|_| bad())?,
                ndcg: f[3].parse().map_err(|_| bad())?,
                hr: f[4].parse().map_err(|_| bad())?,
                num_users: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn rows_of(report: &EvalReport) -> Vec<ReportRow> {
    Group::ALL
        .iter()
        .map(|&g| {
            let m = report.group(g);
            ReportRow {
                group: g.as_str().to_string(),
                k: report.k,
                recall: m.recall,
                ndcg: m.ndcg,
                hr: m.hit_ratio,
                num_users: m.num_users,
            }
        })
        .collect()
}

/// Markdown table with one block of rows per labelled run.
pub fn markdown_table(blocks: &[(String, Vec<ReportRow>)]) -> String {
    let mut out = String::from("| run | group | k | Recall | NDCG | HR | users |\n|---|---|---|---|---|---|---|\n");
    for (label, rows) in blocks {
        for r in rows {
            writeln!(
                out,
                "| {label} | {} | {} | {:.4} | {:.4} | {:.4} | {} |",
                r.group, r.k, r.recall, r.ndcg, r.hr, r.num_users
            )
            .unwrap();
        }
    }
    out
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("c,eta,delta,val_recall,best_epoch\n");
    for r in rows {
        writeln!(out, "{},{},{},{:.6},{}", r.c, r.eta, r.delta, r.val_recall, r.best_epoch).unwrap();
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow], k: usize) -> String {
    let mut out = format!("severity,method,recall@{k},ndcg@{k},hr@{k},popular_recall@{k},niche_recall@{k}\n");
    for r in rows {
        let m = &r.report;
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.severity,
            r.method.as_str(),
            m.all.recall,
            m.all.ndcg,
            m.all.hit_ratio,
            m.popular.recall,
            m.niche.recall
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpaa_core::eval::GroupMetrics;

    #[test]
    fn report_csv_parses_back() {
        let g = |r: f64| GroupMetrics {
            recall: r,
            ndcg: r / 2.0,
            hit_ratio: r * 1.5,
            num_users: 7,
        };
        let report = EvalReport {
            k: 20,
            all: g(0.25),
            popular: g(0.5),
            niche: g(0.125),
            skipped_users: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_text(&p, &report_csv(&report)).unwrap();
        assert_eq!(parse_report_csv(&p).unwrap(), rows_of(&report));
        let md = markdown_table(&[("x".into(), rows_of(&report))]);
        assert_eq!(md.lines().count(), 5);
    }

    #[test]
    fn log_leaves_beta_blank_without_blend() {
        let rec = |beta_t| EpochRecord {
            epoch: 1,
            loss: 0.5,
            delta_t: 0.0,
            beta_t,
            val_metric: 0.1,
        };
        let csv = training_log_csv(&[rec(None), rec(Some(1.0))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "1,0.500000000,0.000000000,,0.100000000");
        assert_eq!(lines[2], "1,0.500000000,0.000000000,1.000000000,0.100000000");
    }
}
