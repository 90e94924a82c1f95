//! Confusion matrices and the staging metrics: overall accuracy,
//! per-class F1, macro-F1, and Cohen's kappa.

use crate::data::{Label, SleepStage, N_CLASSES};
use crate::error::{Error, Result};

/// Per-class counts with rows indexed by the true stage and columns by the
/// prediction. Excluded frames never enter the matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    /// Tallies predictions against labels, skipping excluded frames.
    pub fn from_pairs(preds: &[SleepStage], labels: &[Label]) -> Result<ConfusionMatrix> {
        if preds.len() != labels.len() {
            return Err(Error::Usage(format!(
                "{} predictions against {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::new();
        for (&p, &l) in preds.iter().zip(labels) {
            if let Some(truth) = l.stage() {
                cm.record(truth, p);
            }
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: SleepStage, pred: SleepStage) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    /// Elementwise sum, for merging evaluation shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, &o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn counts(&self) -> &[[u64; N_CLASSES]; N_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// CSV grid with a header column of true-stage names and a header row
    /// of predicted-stage names.
    pub fn csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for s in SleepStage::ALL {
            out.push(',');
            out.push_str(s.name());
        }
        out.push('\n');
        for (i, s) in SleepStage::ALL.iter().enumerate() {
            out.push_str(s.name());
            for j in 0..N_CLASSES {
                out.push_str(&format!(",{}", self.counts[i][j]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics {
    pub overall_accuracy: f64,
    pub per_class_f1: [f64; N_CLASSES],
    pub macro_f1: f64,
    pub kappa: f64,
}

impl StageMetrics {
    /// One CSV row `oa,mf1,kappa,f1_w,f1_n1,f1_n2,f1_n3,f1_r` (no header).
    pub fn csv_row(&self) -> String {
        let f1 = self
            .per_class_f1
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!("{},{},{},{}", self.overall_accuracy, self.macro_f1, self.kappa, f1)
    }

    /// Human-readable multi-line report.
    pub fn report(&self) -> String {
        let mut out = format!(
            "overall_accuracy: {:.4}\nmacro_f1: {:.4}\nkappa: {:.4}\n",
            self.overall_accuracy, self.macro_f1, self.kappa
        );
        for (s, f1) in SleepStage::ALL.iter().zip(&self.per_class_f1) {
            out.push_str(&format!("f1_{}: {:.4}\n", s.name().to_lowercase(), f1));
        }
        out
    }
}

/// Computes the staging metrics from a confusion matrix.
///
/// Per-class F1 is 0 whenever its precision+recall denominator is 0. The
/// macro average runs over classes present in the true labels unless
/// `include_absent` forces all classes in (absent ones count as 0). Kappa
/// uses the observed row/column marginals; a degenerate single-cell
/// diagonal matrix yields kappa = 1.
pub fn stage_metrics(cm: &ConfusionMatrix, include_absent: bool) -> Result<StageMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("confusion matrix is empty".into()));
    }
    let total = total as f64;

    let trace: u64 = (0..N_CLASSES).map(|i| cm.counts[i][i]).sum();
    let overall_accuracy = trace as f64 / total;

    let mut per_class_f1 = [0.0f64; N_CLASSES];
    let mut f1_sum = 0.0;
    let mut f1_classes = 0usize;
    for c in 0..N_CLASSES {
        let tp = cm.counts[c][c] as f64;
        let row = cm.row_sum(c) as f64;
        let col = cm.col_sum(c) as f64;
        // 2 tp / (row + col) equals 2PR/(P+R) without dividing by zero
        // marginals first.
        per_class_f1[c] = if row + col > 0.0 { 2.0 * tp / (row + col) } else { 0.0 };
        if include_absent || row > 0.0 {
            f1_sum += per_class_f1[c];
            f1_classes += 1;
        }
    }
    let macro_f1 = f1_sum / f1_classes as f64;

    let p_o = overall_accuracy;
    let p_e: f64 = (0..N_CLASSES)
        .map(|c| (cm.row_sum(c) as f64 / total) * (cm.col_sum(c) as f64 / total))
        .sum();
    let kappa = if p_e >= 1.0 { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };

    Ok(StageMetrics { overall_accuracy, per_class_f1, macro_f1, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_class(c00: u64, c01: u64, c10: u64, c11: u64) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new();
        cm.counts[0][0] = c00;
        cm.counts[0][1] = c01;
        cm.counts[1][0] = c10;
        cm.counts[1][1] = c11;
        cm
    }

    #[test]
    fn tallies_skip_excluded() {
        let preds = [SleepStage::Wake, SleepStage::N2, SleepStage::Rem];
        let labels = [
            Label::Stage(SleepStage::Wake),
            Label::Stage(SleepStage::N2),
            Label::Excluded,
        ];
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.counts()[SleepStage::Wake.index()][SleepStage::Wake.index()], 1);
        assert_eq!(cm.counts()[SleepStage::N2.index()][SleepStage::N2.index()], 1);

        let all_excluded = ConfusionMatrix::from_pairs(&preds, &[Label::Excluded; 3]).unwrap();
        assert_eq!(all_excluded.total(), 0);
        assert!(stage_metrics(&all_excluded, false).is_err());

        assert!(ConfusionMatrix::from_pairs(&preds, &labels[..2]).is_err());
    }

    #[test]
    fn hand_tally() {
        // preds [0,0,1,1] against labels [0,1,1,1].
        let preds = [SleepStage::Wake, SleepStage::Wake, SleepStage::N1, SleepStage::N1];
        let labels: Vec<Label> = [SleepStage::Wake, SleepStage::N1, SleepStage::N1, SleepStage::N1]
            .iter()
            .map(|&s| Label::Stage(s))
            .collect();
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        assert_eq!(cm.counts()[0][0], 1);
        assert_eq!(cm.counts()[0][1], 0);
        assert_eq!(cm.counts()[1][0], 1);
        assert_eq!(cm.counts()[1][1], 2);
    }

    #[test]
    fn perfect_diagonal() {
        let mut cm = ConfusionMatrix::new();
        for s in SleepStage::ALL {
            cm.record(s, s);
            cm.record(s, s);
        }
        let m = stage_metrics(&cm, false).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.kappa, 1.0);
    }

    #[test]
    fn toy_metrics_by_hand() {
        let cm = two_class(1, 0, 1, 2);
        let m = stage_metrics(&cm, false).unwrap();
        assert_eq!(m.overall_accuracy, 0.75);
        assert_eq!(m.kappa, 0.5);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class_f1[1] - 0.8).abs() < 1e-12);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn anti_diagonal_reaches_minimum_kappa() {
        let cm = two_class(0, 1, 1, 0);
        let m = stage_metrics(&cm, false).unwrap();
        assert_eq!(m.overall_accuracy, 0.0);
        assert_eq!(m.kappa, -1.0);
    }

    #[test]
    fn single_cell_diagonal_degenerates_to_kappa_one() {
        let cm = two_class(4, 0, 0, 0);
        let m = stage_metrics(&cm, false).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.kappa, 1.0);
        // The absent class is out of the default macro average...
        assert_eq!(m.macro_f1, 1.0);
        // ...and drags it down when forced in.
        let forced = stage_metrics(&cm, true).unwrap();
        assert!((forced.macro_f1 - 1.0 / N_CLASSES as f64).abs() < 1e-12);
    }

    #[test]
    fn kappa_is_one_exactly_when_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut cm = ConfusionMatrix::new();
            for _ in 0..rng.gen_range(1..40) {
                let t = rng.gen_range(0..N_CLASSES);
                let p = if rng.gen_bool(0.8) { t } else { rng.gen_range(0..N_CLASSES) };
                cm.record(SleepStage::ALL[t], SleepStage::ALL[p]);
            }
            let m = stage_metrics(&cm, false).unwrap();
            let diagonal = (0..N_CLASSES)
                .all(|i| (0..N_CLASSES).all(|j| i == j || cm.counts()[i][j] == 0));
            assert_eq!((m.kappa - 1.0).abs() < 1e-12, diagonal, "{:?}", cm);
        }
    }

    #[test]
    fn label_permutation_preserves_aggregates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let perm = [2usize, 0, 4, 1, 3];
        for _ in 0..50 {
            let n = rng.gen_range(10..60);
            let truths: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();
            let preds: Vec<usize> = truths
                .iter()
                .map(|&t| if rng.gen_bool(0.7) { t } else { rng.gen_range(0..N_CLASSES) })
                .collect();

            let build = |map: bool| {
                let mut cm = ConfusionMatrix::new();
                for (&t, &p) in truths.iter().zip(&preds) {
                    let (t, p) = if map { (perm[t], perm[p]) } else { (t, p) };
                    cm.record(SleepStage::ALL[t], SleepStage::ALL[p]);
                }
                stage_metrics(&cm, false).unwrap()
            };
            let base = build(false);
            let mapped = build(true);
            assert!((base.overall_accuracy - mapped.overall_accuracy).abs() < 1e-12);
            assert!((base.macro_f1 - mapped.macro_f1).abs() < 1e-12);
            assert!((base.kappa - mapped.kappa).abs() < 1e-12);
            for c in 0..N_CLASSES {
                assert!((base.per_class_f1[c] - mapped.per_class_f1[perm[c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agrees_with_brute_force_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..500 {
            let n = rng.gen_range(1..80);
            let truths: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();

            let mut cm = ConfusionMatrix::new();
            for (&t, &p) in truths.iter().zip(&preds) {
                cm.record(SleepStage::ALL[t], SleepStage::ALL[p]);
            }
            let m = stage_metrics(&cm, false).unwrap();

            // Independent recount straight from the raw lists.
            let nf = n as f64;
            let oa = truths.iter().zip(&preds).filter(|(t, p)| t == p).count() as f64 / nf;
            assert!((m.overall_accuracy - oa).abs() < 1e-12);

            let mut f1_sum = 0.0;
            let mut classes = 0;
            for c in 0..N_CLASSES {
                let tp = truths
                    .iter()
                    .zip(&preds)
                    .filter(|&(&t, &p)| t == c && p == c)
                    .count() as f64;
                let t_c = truths.iter().filter(|&&t| t == c).count() as f64;
                let p_c = preds.iter().filter(|&&p| p == c).count() as f64;
                let f1 = if t_c + p_c > 0.0 { 2.0 * tp / (t_c + p_c) } else { 0.0 };
                assert!((m.per_class_f1[c] - f1).abs() < 1e-12);
                if t_c > 0.0 {
                    f1_sum += f1;
                    classes += 1;
                }
            }
            assert!((m.macro_f1 - f1_sum / classes as f64).abs() < 1e-12);

            let p_e: f64 = (0..N_CLASSES)
                .map(|c| {
                    let t_c = truths.iter().filter(|&&t| t == c).count() as f64 / nf;
                    let p_c = preds.iter().filter(|&&p| p == c).count() as f64 / nf;
                    t_c * p_c
                })
                .sum();
            let kappa = if p_e >= 1.0 { 1.0 } else { (oa - p_e) / (1.0 - p_e) };
            assert!((m.kappa - kappa).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = two_class(1, 2, 3, 4);
        let b = two_class(10, 20, 30, 40);
        a.merge(&b);
        assert_eq!(a, two_class(11, 22, 33, 44));
    }

    #[test]
    fn csv_grid_shape() {
        let cm = two_class(1, 0, 1, 2);
        let csv = cm.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + N_CLASSES);
        assert!(lines[0].starts_with("true\\pred,W,N1,"));
        assert!(lines[1].starts_with("W,1,0,"));
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 1 + N_CLASSES);
        }
    }
}
