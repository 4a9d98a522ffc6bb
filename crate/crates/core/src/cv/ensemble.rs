use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Arm, Error, Result};

/// Per-arm mean and population std over ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub mean: BTreeMap<Arm, f64>,
    pub spread: BTreeMap<Arm, f64>,
    pub members: BTreeMap<Arm, Vec<f64>>,
}

impl EnsemblePrediction {
    pub fn from_members(members: &[BTreeMap<Arm, f64>]) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Aggregation("ensemble has no members".into()))?;
        let mut by_arm: BTreeMap<Arm, Vec<f64>> = BTreeMap::new();
        for m in members {
            if m.len() != first.len() || m.keys().any(|a| !first.contains_key(a)) {
                return Err(Error::Aggregation("ensemble members disagree on arms".into()));
            }
            for (a, v) in m {
                by_arm.entry(*a).or_default().push(*v);
            }
        }
        let mean = by_arm.iter().map(|(a, v)| (*a, crate::util::mean(v))).collect();
        let spread = by_arm.iter().map(|(a, v)| (*a, crate::util::population_std(v))).collect();
        Ok(Self {
            mean,
            spread,
            members: by_arm,
        })
    }
}
