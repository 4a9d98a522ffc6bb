use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::meda_label;
use crate::sim::PatientRecord;
use crate::util::mix_seed;
use crate::{Arm, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldOptions {
    pub k_outer: usize,
    pub k_inner: usize,
    /// Reject strata with fewer than `k` members instead of dealing them
    /// into as many folds as they can fill.
    pub strict_strata: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        Self {
            k_outer: 4,
            k_inner: 4,
            strict_strata: false,
        }
    }
}

/// Outer and inner fold assignments, stratified by arm × MEDA label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
    /// Record id → outer test fold.
    pub outer: BTreeMap<u64, usize>,
    /// Per outer fold: training id → inner fold.
    pub inner: Vec<BTreeMap<u64, usize>>,
    /// Stratum key (`<arm>/meda` or `<arm>/active`) → size.
    pub strata: BTreeMap<String, usize>,
}

fn stratum_key(arm: Arm, y: i64) -> String {
    format!("{arm}/{}", if meda_label(y) { "meda" } else { "active" })
}

/// Deals the shuffled members of each stratum round-robin into `k` folds,
/// continuing the rotation across strata so fold sizes stay within one.
fn stratified_assign(
    items: &[(u64, Arm, i64)],
    k: usize,
    seed: u64,
    strict: bool,
    level: &str,
) -> Result<BTreeMap<u64, usize>> {
    let mut strata: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for &(id, arm, y) in items {
        strata.entry(stratum_key(arm, y)).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    let mut cursor = 0usize;
    for (key, ids) in &mut strata {
        if ids.len() < k {
            if strict {
                return Err(Error::Fold(format!(
                    "{level} stratum {key} has {} records, fewer than k = {k}",
                    ids.len()
                )));
            }
            log::warn!("{level} stratum {key} has {} records for {k} folds; some folds will lack it", ids.len());
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            out.insert(*id, cursor % k);
            cursor += 1;
        }
    }
    Ok(out)
}

pub fn make_fold_plan(records: &[PatientRecord], opts: FoldOptions, seed: u64) -> Result<FoldPlan> {
    if opts.k_outer < 2 || opts.k_inner < 2 {
        return Err(Error::Fold(format!(
            "need at least 2 outer and 2 inner folds, got {}×{}",
            opts.k_outer, opts.k_inner
        )));
    }
    let items: Vec<(u64, Arm, i64)> = records.iter().map(|r| (r.id, r.arm, r.y)).collect();
    let mut ids: Vec<u64> = items.iter().map(|t| t.0).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Fold(format!("duplicate record id {}", w[0])));
    }
    let mut strata = BTreeMap::new();
    for &(_, arm, y) in &items {
        *strata.entry(stratum_key(arm, y)).or_insert(0) += 1;
    }
    let outer = stratified_assign(&items, opts.k_outer, mix_seed(seed, 0xF0), opts.strict_strata, "outer")?;
    let inner = (0..opts.k_outer)
        .map(|f| {
            let train: Vec<_> = items.iter().copied().filter(|t| outer[&t.0] != f).collect();
            let inner = stratified_assign(
                &train,
                opts.k_inner,
                mix_seed(seed, 0xF1 + f as u64),
                opts.strict_strata,
                &format!("outer fold {f} inner"),
            )?;
            if (0..opts.k_inner).any(|i| !inner.values().any(|&v| v == i)) {
                return Err(Error::Fold(format!("outer fold {f} has too few records for {} inner folds", opts.k_inner)));
            }
            Ok(inner)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldPlan {
        k_outer: opts.k_outer,
        k_inner: opts.k_inner,
        seed,
        outer,
        inner,
        strata,
    })
}

impl FoldPlan {
    pub fn test_ids(&self, outer: usize) -> Vec<u64> {
        self.outer.iter().filter(|(_, f)| **f == outer).map(|(id, _)| *id).collect()
    }

    /// Training and early-stopping ids of member `(outer, inner)`.
    pub fn member_split(&self, outer: usize, inner: usize) -> (Vec<u64>, Vec<u64>) {
        let (val, train): (Vec<_>, Vec<_>) = self.inner[outer].iter().partition(|(_, f)| **f == inner);
        (
            train.into_iter().map(|(id, _)| *id).collect(),
            val.into_iter().map(|(id, _)| *id).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::IndexedRandom;

    fn records(n: usize, seed: u64) -> Vec<PatientRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n as u64)
            .map(|id| PatientRecord {
                id: id * 3 + 1,
                features: vec![],
                arm: *Arm::ALL.choose(&mut rng).unwrap(),
                y: rand::Rng::random_range(&mut rng, 0..8),
            })
            .collect()
    }

    #[test]
    fn uniform_strata_give_equal_outer_folds() {
        let recs: Vec<PatientRecord> = (0..16)
            .map(|id| PatientRecord {
                id,
                features: vec![],
                arm: if id % 2 == 0 { Arm::Placebo } else { Arm::HE },
                y: if id % 4 < 2 { 0 } else { 5 },
            })
            .collect();
        let plan = make_fold_plan(&recs, FoldOptions { k_inner: 2, ..Default::default() }, 1).unwrap();
        for f in 0..4 {
            assert_eq!(plan.test_ids(f).len(), 4);
        }
    }

    #[test]
    fn strict_mode_names_the_small_stratum() {
        let mut recs = records(200, 2);
        recs.iter_mut().filter(|r| r.arm == Arm::HE).for_each(|r| r.y = 0);
        recs.iter_mut().find(|r| r.arm == Arm::HE).unwrap().y = 9;
        let strict = FoldOptions {
            strict_strata: true,
            ..Default::default()
        };
        let err = make_fold_plan(&recs, strict, 0).unwrap_err().to_string();
        assert!(err.contains("HE/active"), "{err}");
        make_fold_plan(&recs, FoldOptions::default(), 0).unwrap();
    }

    #[test]
    fn seeds_give_different_valid_plans() {
        let recs = records(120, 3);
        let a = make_fold_plan(&recs, FoldOptions::default(), 1).unwrap();
        let b = make_fold_plan(&recs, FoldOptions::default(), 2).unwrap();
        assert_ne!(a.outer, b.outer);
        assert_eq!(a, make_fold_plan(&recs, FoldOptions::default(), 1).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn plan_partitions_and_balances(n in 40usize..300, seed in any::<u64>()) {
            let recs = records(n, seed);
            let plan = make_fold_plan(&recs, FoldOptions::default(), seed).unwrap();
            prop_assert_eq!(plan.outer.len(), n);
            let mut union: Vec<u64> = (0..4).flat_map(|f| plan.test_ids(f)).collect();
            union.sort_unstable();
            let mut ids: Vec<u64> = recs.iter().map(|r| r.id).collect();
            ids.sort_unstable();
            prop_assert_eq!(union, ids);
            // per stratum, fold counts differ by at most one
            for key in plan.strata.keys() {
                let mut counts = [0usize; 4];
                for r in &recs {
                    if &stratum_key(r.arm, r.y) == key {
                        counts[plan.outer[&r.id]] += 1;
                    }
                }
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
            for f in 0..4 {
                let test = plan.test_ids(f);
                let inner = &plan.inner[f];
                prop_assert_eq!(inner.len(), n - test.len());
                prop_assert!(test.iter().all(|id| !inner.contains_key(id)));
                for i in 0..4 {
                    let (tr, va) = plan.member_split(f, i);
                    prop_assert_eq!(tr.len() + va.len(), inner.len());
                    prop_assert!(!va.is_empty());
                }
            }
        }
    }
}
