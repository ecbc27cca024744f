//! Tab-separated output tables, each with a header row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stexp_core::evaluation::MetricsRecord;

use crate::{Error, Result};

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `slide_id pcc_acg pcc_heg mse mae`, one row per record.
pub fn metrics_tsv(records: &[&MetricsRecord]) -> String {
    let mut s = String::from("slide_id\tpcc_acg\tpcc_heg\tmse\tmae\n");
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.slide_id, r.pcc_acg, r.pcc_heg, r.mse, r.mae
        );
    }
    s
}

pub fn write_metrics(path: &Path, records: &[&MetricsRecord]) -> Result<()> {
    write(path, metrics_tsv(records))
}

/// `gene r neg_log10_p`, sorted by `neg_log10_p` descending.
pub fn genes_tsv(record: &MetricsRecord) -> String {
    let mut s = String::from("gene\tr\tneg_log10_p\n");
    for g in record.ranked_genes() {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}", g.gene, g.r, g.neg_log10_p);
    }
    s
}

pub fn write_genes(path: &Path, record: &MetricsRecord) -> Result<()> {
    write(path, genes_tsv(record))
}

/// `spot x y label`, plus `truth` when ground-truth labels exist.
pub fn labels_tsv(coords: &[[u32; 2]], labels: &[usize], truth: Option<&[u16]>) -> String {
    let mut s = String::from(if truth.is_some() {
        "spot\tx\ty\tlabel\ttruth\n"
    } else {
        "spot\tx\ty\tlabel\n"
    });
    for (i, (c, l)) in coords.iter().zip(labels).enumerate() {
        let _ = write!(s, "{i}\t{}\t{}\t{l}", c[0], c[1]);
        if let Some(t) = truth {
            let _ = write!(s, "\t{}", t[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_labels(
    path: &Path,
    coords: &[[u32; 2]],
    labels: &[usize],
    truth: Option<&[u16]>,
) -> Result<()> {
    write(path, labels_tsv(coords, labels, truth))
}

/// Generic table from a header and pre-formatted rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join("\t");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join("\t"));
        s.push('\n');
    }
    write(path, s)
}
