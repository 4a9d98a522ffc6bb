use super::table::PredictionTable;
use crate::Arm;

/// Number of rows with each observed count `0..=max`, for one arm or all rows.
pub fn count_histogram(table: &PredictionTable, arm: Option<Arm>) -> Vec<usize> {
    let mut bins: Vec<usize> = Vec::new();
    for r in table.rows().iter().filter(|r| arm.is_none_or(|a| r.arm == a)) {
        let y = r.y as usize;
        if bins.len() <= y {
            bins.resize(y + 1, 0);
        }
        bins[y] += 1;
    }
    bins
}
