use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::nn::{meda_label, LossKind};
use crate::{Arm, Error, Result};

/// One pooled out-of-fold prediction: per-arm ensemble means and spreads on the
/// model's output scale (log count or logit).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: u64,
    pub arm: Arm,
    pub y: i64,
    pub outer_fold: Option<usize>,
    pub yhat: BTreeMap<Arm, f64>,
    pub spread: BTreeMap<Arm, f64>,
}

impl PredictionRow {
    pub fn meda(&self) -> bool {
        meda_label(self.y)
    }

    /// Prediction of the head for the arm the patient actually received.
    pub fn factual(&self) -> f64 {
        self.yhat[&self.arm]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    arms: Vec<Arm>,
    loss: LossKind,
    rows: Vec<PredictionRow>,
}

impl PredictionTable {
    /// Validates and sorts `rows` by id.
    pub fn new(arms: Vec<Arm>, loss: LossKind, mut rows: Vec<PredictionRow>) -> Result<Self> {
        let mut arms_sorted = arms.clone();
        arms_sorted.sort();
        arms_sorted.dedup();
        if arms_sorted.len() != arms.len() || !arms.contains(&Arm::Placebo) {
            return Err(Error::Data(format!("table arms {arms:?} must be distinct and include placebo")));
        }
        rows.sort_by_key(|r| r.id);
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.id) {
                return Err(Error::Data(format!("duplicate id {} in prediction table", r.id)));
            }
            if !arms.contains(&r.arm) {
                return Err(Error::Data(format!("row {} has arm {} outside the table's arms", r.id, r.arm)));
            }
            if r.y < 0 {
                return Err(Error::Data(format!("row {} has negative count {}", r.id, r.y)));
            }
            for a in &arms {
                let (Some(m), Some(s)) = (r.yhat.get(a), r.spread.get(a)) else {
                    return Err(Error::Data(format!("row {} lacks a prediction for {a}", r.id)));
                };
                if !m.is_finite() || !s.is_finite() || *s < 0.0 {
                    return Err(Error::Data(format!("row {} has an invalid prediction for {a}", r.id)));
                }
            }
            if r.yhat.len() != arms.len() {
                return Err(Error::Data(format!("row {} has predictions for arms outside the table", r.id)));
            }
        }
        Ok(Self { arms, loss, rows })
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn arm_rows(&self, arm: Arm) -> impl Iterator<Item = &PredictionRow> {
        self.rows.iter().filter(move |r| r.arm == arm)
    }

    /// Rows satisfying `keep`, same arms and loss.
    pub fn filter(&self, keep: impl Fn(&PredictionRow) -> bool) -> Self {
        Self {
            arms: self.arms.clone(),
            loss: self.loss,
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn get(&self, id: u64) -> Option<&PredictionRow> {
        self.rows.binary_search_by_key(&id, |r| r.id).ok().map(|i| &self.rows[i])
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string(), "treatment".into(), "y".into()];
        h.extend(self.arms.iter().map(|a| format!("yhat_{a}")));
        h.extend(self.arms.iter().map(|a| format!("std_{a}")));
        h.push("outer_fold".into());
        h
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.id.to_string(), r.arm.to_string(), r.y.to_string()];
            rec.extend(self.arms.iter().map(|a| r.yhat[a].to_string()));
            rec.extend(self.arms.iter().map(|a| r.spread[a].to_string()));
            rec.push(r.outer_fold.map(|f| f.to_string()).unwrap_or_default());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str, loss: LossKind) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data(format!("prediction table header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[..3] != ["id", "treatment", "y"] {
            return Err(Error::Data("prediction table must start with id,treatment,y".into()));
        }
        let arms: Vec<Arm> = header[3..]
            .iter()
            .filter_map(|h| h.strip_prefix("yhat_"))
            .map(str::parse)
            .collect::<Result<_>>()?;
        let n = arms.len();
        let expected_std: Vec<String> = arms.iter().map(|a| format!("std_{a}")).collect();
        if header.len() < 3 + 2 * n || header[3 + n..3 + 2 * n] != expected_std[..] {
            return Err(Error::Data("prediction table needs std_<arm> columns matching yhat_<arm>".into()));
        }
        let has_fold = header.get(3 + 2 * n).map(String::as_str) == Some("outer_fold");
        if header.len() != 3 + 2 * n + usize::from(has_fold) {
            return Err(Error::Data("prediction table has unexpected columns".into()));
        }

        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("prediction table row {}: {e}", line + 2)))?;
            let bad = |what: &str| Error::Data(format!("prediction table row {}: invalid {what}", line + 2));
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&header[i]));
            let mut yhat = BTreeMap::new();
            let mut spread = BTreeMap::new();
            for (j, a) in arms.iter().enumerate() {
                yhat.insert(*a, num(3 + j)?);
                spread.insert(*a, num(3 + n + j)?);
            }
            rows.push(PredictionRow {
                id: rec[0].parse().map_err(|_| bad("id"))?,
                arm: rec[1].parse().map_err(|_| bad("treatment"))?,
                y: rec[2].parse().map_err(|_| bad("y"))?,
                outer_fold: match (has_fold, rec.get(3 + 2 * n)) {
                    (true, Some(s)) if !s.is_empty() => Some(s.parse().map_err(|_| bad("outer_fold"))?),
                    _ => None,
                },
                yhat,
                spread,
            });
        }
        Self::new(arms, loss, rows)
    }

    pub fn read_csv(path: &Path, loss: LossKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, loss)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn row(id: u64, arm: Arm, y: i64, preds: &[(Arm, f64)]) -> PredictionRow {
        PredictionRow {
            id,
            arm,
            y,
            outer_fold: Some((id % 4) as usize),
            yhat: preds.iter().copied().collect(),
            spread: preds.iter().map(|(a, _)| (*a, 0.25)).collect(),
        }
    }

    fn table() -> PredictionTable {
        let arms = vec![Arm::Placebo, Arm::HE];
        let rows = vec![
            row(3, Arm::HE, 0, &[(Arm::Placebo, 1.0 / 3.0), (Arm::HE, -0.1)]),
            row(1, Arm::Placebo, 7, &[(Arm::Placebo, 2.0), (Arm::HE, 0.5)]),
        ];
        PredictionTable::new(arms, LossKind::LogCountMSE, rows).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = table();
        let csv = t.to_csv();
        assert!(csv.starts_with("id,treatment,y,yhat_placebo,yhat_HE,std_placebo,std_HE,outer_fold\n"));
        assert_eq!(PredictionTable::from_csv(&csv, LossKind::LogCountMSE).unwrap(), t);
    }

    #[test]
    fn rows_are_sorted_and_unique() {
        let t = table();
        assert_eq!(t.rows()[0].id, 1);
        assert!(t.get(3).unwrap().meda());
        let mut rows = t.rows().to_vec();
        rows.push(rows[0].clone());
        assert!(PredictionTable::new(t.arms().to_vec(), t.loss(), rows).is_err());
    }

    #[test]
    fn missing_arm_prediction_is_rejected() {
        let rows = vec![row(1, Arm::Placebo, 1, &[(Arm::Placebo, 0.0)])];
        assert!(PredictionTable::new(vec![Arm::Placebo, Arm::LE], LossKind::LogCountMSE, rows).is_err());
    }
}
