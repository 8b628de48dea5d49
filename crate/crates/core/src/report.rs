//! CSV report bundles derived from a metrics log: one global series file and
//! one per-difficulty series file per bucket observed in the log.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::difficulty::Bucket;
use crate::error::Result;
use crate::metrics::MetricRecord;
use crate::train::read_metrics;

pub const GLOBAL_HEADER: &str =
    "iter,accuracy,length,nhe,tau_high,kl_ctrl,loss,clip_fraction,filtered_fraction";
pub const BUCKET_HEADER: &str =
    "iter,groups,trajectories,accuracy,length,nhe,kl_ctrl,kappa,lambda,target";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the report CSVs for `metrics_path` into `out_dir`; returns the
/// files written (global first).
pub fn run_report(metrics_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (_, records) = read_metrics(metrics_path)?;
    write_report(&records, out_dir)
}

/// Same as [`run_report`] over already-parsed records.
pub fn write_report(records: &[MetricRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let global_path = out_dir.join("series_global.csv");
    {
        let mut w = BufWriter::new(File::create(&global_path)?);
        writeln!(w, "{GLOBAL_HEADER}")?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.accuracy,
                r.length,
                r.nhe,
                r.tau_high,
                opt(r.kl_ctrl),
                opt(r.loss),
                opt(r.clip_fraction),
                r.filtered_fraction
            )?;
        }
        w.flush()?;
    }
    written.push(global_path);

    for bucket in Bucket::ALL {
        if !records.iter().any(|r| r.buckets.contains_key(&bucket)) && !records.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("series_{}.csv", bucket.name()));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{BUCKET_HEADER}")?;
        for r in records {
            if let Some(b) = r.buckets.get(&bucket) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.iter,
                    b.groups,
                    b.trajectories,
                    b.accuracy,
                    b.length,
                    b.nhe,
                    opt(b.kl_ctrl),
                    b.kappa,
                    b.lambda,
                    opt(b.target)
                )?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::BucketMetrics;
    use std::collections::BTreeMap;

    fn record(iter: u64, buckets: &[Bucket]) -> MetricRecord {
        let bm: BTreeMap<Bucket, BucketMetrics> = buckets
            .iter()
            .map(|&b| {
                (
                    b,
                    BucketMetrics {
                        groups: 2,
                        trajectories: 16,
                        accuracy: 0.5,
                        length: 7.25,
                        nhe: 1.5,
                        kl_ctrl: Some(0.01),
                        kappa: 1.0,
                        lambda: 0.0,
                        target: Some(1.5),
                    },
                )
            })
            .collect();
        MetricRecord {
            iter,
            mode: "aepo".to_string(),
            skipped: false,
            accuracy: 0.5,
            length: 7.25,
            nhe: 1.5,
            tau_high: 2.0,
            kl_ctrl: Some(0.01),
            loss: Some(-0.1),
            clip_fraction: Some(0.0),
            filtered_fraction: 0.25,
            buckets: bm,
        }
    }

    #[test]
    fn empty_log_emits_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&[], dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.trim(), GLOBAL_HEADER);
        // With no records every bucket file still exists with just a header.
        assert_eq!(files.len(), 4);
    }

    #[test]
    fn single_record_gives_single_rows() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&[record(0, &[Bucket::Easy])], dir.path()).unwrap();
        let global = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(global.lines().count(), 2);
        assert!(global.lines().next().unwrap() == GLOBAL_HEADER);
    }

    #[test]
    fn one_series_file_per_bucket() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            record(0, &[Bucket::Easy, Bucket::Medium]),
            record(1, &[Bucket::Hard]),
        ];
        let files = write_report(&recs, dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            vec![
                "series_global.csv",
                "series_easy.csv",
                "series_medium.csv",
                "series_hard.csv"
            ]
        );
        let hard = fs::read_to_string(&files[3]).unwrap();
        assert_eq!(hard.lines().count(), 2);
    }
}
