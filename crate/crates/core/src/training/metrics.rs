use std::fmt::Write as _;
use std::path::Path;

/// One line of the training log. Empty fields stay empty in the CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub mlm: Option<f64>,
    pub orth: Option<f64>,
    pub ce: Option<f64>,
    pub kl: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "stage,epoch,split,loss,mlm,orth,ce,kl,accuracy";

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        log::info!(
            "{} epoch {} {}: loss {}",
            row.stage,
            row.epoch,
            row.split,
            row.loss.map_or("-".into(), |l| format!("{l:.6}"))
        );
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.stage,
                r.epoch,
                r.split,
                f(r.loss),
                f(r.mlm),
                f(r.orth),
                f(r.ce),
                f(r.kl),
                f(r.accuracy)
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Rows of one stage and split, in epoch order.
    pub fn series(&self, stage: &str, split: &str) -> Vec<&MetricsRow> {
        self.rows.iter().filter(|r| r.stage == stage && r.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_empty_cells_for_missing_values() {
        let mut log = MetricsLog::default();
        log.push(MetricsRow {
            stage: "pretrain".into(),
            epoch: 1,
            split: "train".into(),
            loss: Some(2.5),
            mlm: Some(2.0),
            orth: Some(1.0),
            ..Default::default()
        });
        let csv = log.to_csv();
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 9);
        assert!(line.ends_with(",,,"));
        assert_eq!(line.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 2.5);
        assert_eq!(log.series("pretrain", "train").len(), 1);
    }
}
