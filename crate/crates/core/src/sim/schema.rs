use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered names of the raw feature vector: five clinical columns followed by
/// `latent1..latentK`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub const AGE: usize = 0;
    pub const SEX: usize = 1;
    pub const EDSS: usize = 2;
    pub const T2VOL: usize = 3;
    pub const GAD: usize = 4;
    pub const CLINICAL: [&'static str; 5] = ["age", "sex", "edss", "t2vol", "gad"];

    pub fn with_latents(latent_dim: usize) -> Self {
        let mut names: Vec<String> = Self::CLINICAL.iter().map(|s| s.to_string()).collect();
        names.extend((1..=latent_dim).map(|k| format!("latent{k}")));
        Self { names }
    }

    /// Accepts only names produced by [`FeatureSchema::with_latents`].
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let latent_dim = names.len().saturating_sub(Self::CLINICAL.len());
        let expected = Self::with_latents(latent_dim);
        if names.len() < Self::CLINICAL.len() || expected.names != names {
            return Err(Error::Data(format!(
                "feature columns {names:?} do not match the schema age,sex,edss,t2vol,gad,latent1..latentK"
            )));
        }
        Ok(expected)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.names.len() - Self::CLINICAL.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Builds a feature vector from named values; every schema name must be
    /// present exactly once and no other name may appear.
    pub fn vector_from_named<'a>(&self, values: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Vec<f64>> {
        let mut out = vec![None; self.names.len()];
        let mut problems = Vec::new();
        for (name, v) in values {
            match self.index_of(name) {
                Some(i) if out[i].is_some() => problems.push(format!("{name}: given twice")),
                Some(i) => out[i] = Some(v),
                None => problems.push(format!("{name}: not a schema feature")),
            }
        }
        for (name, v) in self.names.iter().zip(&out) {
            if v.is_none() {
                problems.push(format!("{name}: missing"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Data(problems.join("; ")));
        }
        let values: Vec<f64> = out.into_iter().flatten().collect();
        self.check_values(&values)?;
        Ok(values)
    }

    /// Checks that a raw vector has the schema length and clinically valid values:
    /// age > 0, sex in {0, 1}, EDSS in [0, 10] on a 0.5 grid, t2vol ≥ 0 and a
    /// non-negative integer gad count.
    pub fn check_values(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Data(format!(
                "expected {} features ({}), got {}",
                self.names.len(),
                self.names.join(","),
                values.len()
            )));
        }
        let mut problems = Vec::new();
        for (name, v) in self.names.iter().zip(values) {
            if !v.is_finite() {
                problems.push(format!("{name}: non-finite value"));
            }
        }
        let v = |i: usize| values[i];
        if v(Self::AGE) <= 0.0 {
            problems.push(format!("age: {} is not positive", v(Self::AGE)));
        }
        if v(Self::SEX) != 0.0 && v(Self::SEX) != 1.0 {
            problems.push(format!("sex: {} is not 0 or 1", v(Self::SEX)));
        }
        let edss = v(Self::EDSS);
        if !(0.0..=10.0).contains(&edss) || (edss * 2.0).fract() != 0.0 {
            problems.push(format!("edss: {edss} is not in 0..10 with step 0.5"));
        }
        if v(Self::T2VOL) < 0.0 {
            problems.push(format!("t2vol: {} is negative", v(Self::T2VOL)));
        }
        let gad = v(Self::GAD);
        if gad < 0.0 || gad.fract() != 0.0 {
            problems.push(format!("gad: {gad} is not a non-negative integer"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(problems.join("; ")))
        }
    }
}
