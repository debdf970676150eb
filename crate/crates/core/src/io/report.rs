//! Per-token decomposition reports: `token_index,unc,tkd,dkd,kl_total,split`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csv_util::{read_rows, write_rows};
use crate::decompose::TokenDecomposition;
use crate::error::{Error, Result};
use crate::objective::TokenSplit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Hard,
    Easy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub token_index: usize,
    pub unc: f64,
    pub tkd: f64,
    pub dkd: f64,
    pub kl_total: f64,
    pub split: SplitLabel,
}

pub const REPORT_HEADER: [&str; 6] = ["token_index", "unc", "tkd", "dkd", "kl_total", "split"];

/// One row per token in `split` (hard or easy), in ascending token order.
pub fn report_rows(decomposition: &TokenDecomposition, split: &TokenSplit) -> Result<Vec<ReportRow>> {
    let n = decomposition.len();
    let mut rows = Vec::with_capacity(split.hard.len() + split.easy.len());
    for (indices, label) in [(&split.hard, SplitLabel::Hard), (&split.easy, SplitLabel::Easy)] {
        for &t in indices {
            if t >= n {
                return Err(Error::IndexOutOfRange { index: t, len: n });
            }
            rows.push(ReportRow {
                token_index: t,
                unc: decomposition.unc[t],
                tkd: decomposition.tkd[t],
                dkd: decomposition.dkd[t],
                kl_total: decomposition.kl_total[t],
                split: label,
            });
        }
    }
    rows.sort_by_key(|r| r.token_index);
    Ok(rows)
}

pub fn write_report(decomposition: &TokenDecomposition, split: &TokenSplit, path: impl AsRef<Path>) -> Result<()> {
    write_rows(path.as_ref(), &REPORT_HEADER, &report_rows(decomposition, split)?, None)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    read_rows(path.as_ref(), &REPORT_HEADER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{batch_decompose, LogitBatch};
    use crate::objective::split_batch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_only_when_no_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let d = TokenDecomposition {
            unc: vec![0.5],
            tkd: vec![0.0],
            dkd: vec![0.0],
            kl_total: vec![0.0],
        };
        let split = TokenSplit { hard: vec![], easy: vec![] };
        write_report(&d, &split, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "token_index,unc,tkd,dkd,kl_total,split\n");
        assert!(read_report(&path).unwrap().is_empty());
    }

    #[test]
    fn single_token_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let d = TokenDecomposition {
            unc: vec![0.25],
            tkd: vec![0.1],
            dkd: vec![0.2],
            kl_total: vec![0.15],
        };
        let split = TokenSplit { hard: vec![0], easy: vec![] };
        write_report(&d, &split, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "token_index,unc,tkd,dkd,kl_total,split\n0,0.25,0.1,0.2,0.15,hard\n");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn values_re_parse_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (t, c) = (40, 13);
        let mut logits = || (0..t * c).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let teacher = logits();
        let student = logits();
        let mask: Vec<bool> = (0..t).map(|i| i % 7 != 0).collect();
        let batch = LogitBatch::new(t, c, teacher, student, (0..t).map(|i| i % c).collect(), mask).unwrap();
        let d = batch_decompose(&batch);
        let split = split_batch(&batch, 0.5).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&d, &split, &path).unwrap();
        let rows = read_report(&path).unwrap();
        assert_eq!(rows.len(), batch.masked_count());
        for row in rows {
            let i = row.token_index;
            assert!(batch.mask()[i]);
            assert_eq!(row.unc.to_bits(), d.unc[i].to_bits());
            assert_eq!(row.tkd.to_bits(), d.tkd[i].to_bits());
            assert_eq!(row.dkd.to_bits(), d.dkd[i].to_bits());
            assert_eq!(row.kl_total.to_bits(), d.kl_total[i].to_bits());
            assert_eq!(row.split == SplitLabel::Hard, split.is_hard(i));
        }
    }

    #[test]
    fn out_of_range_split() {
        let d = TokenDecomposition {
            unc: vec![0.5],
            tkd: vec![0.0],
            dkd: vec![0.0],
            kl_total: vec![0.0],
        };
        let split = TokenSplit { hard: vec![3], easy: vec![] };
        assert!(report_rows(&d, &split).is_err());
    }
}
