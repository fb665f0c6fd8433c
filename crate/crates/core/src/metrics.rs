//! Confusion counts and Unweighted Average Recall.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("class {0} has no reference items; recall is undefined")]
    MissingClass(&'static str),
    #[error("predictions ({predicted}) and references ({reference}) differ in length")]
    LengthMismatch { predicted: usize, reference: usize },
}

/// Binary class index: negative = 0, positive = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Negative = 0,
    Positive = 1,
}

impl Class {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Class::Negative
        } else {
            Class::Positive
        }
    }

    fn name(self) -> &'static str {
        match self {
            Class::Negative => "negative",
            Class::Positive => "positive",
        }
    }
}

/// 2×2 counts indexed `[true][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 2]; 2],
}

impl Confusion {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn from_pairs(
        reference: &[Class],
        predicted: &[Class],
    ) -> Result<Self, MetricsError> {
        if reference.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch {
                predicted: predicted.len(),
                reference: reference.len(),
            });
        }
        let mut c = Self::default();
        for (r, p) in reference.iter().zip(predicted) {
            c.add(*r, *p);
        }
        Ok(c)
    }

    pub fn add(&mut self, truth: Class, predicted: Class) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn recall(&self, class: Class) -> Result<f64, MetricsError> {
        let row = self.counts[class.index()];
        let support = row[0] + row[1];
        if support == 0 {
            return Err(MetricsError::MissingClass(class.name()));
        }
        Ok(row[class.index()] as f64 / support as f64)
    }

    pub fn recalls(&self) -> Result<[f64; 2], MetricsError> {
        Ok([self.recall(Class::Negative)?, self.recall(Class::Positive)?])
    }
}

/// Mean of the per-class recalls: `½ (TN/(TN+FP) + TP/(TP+FN))`.
pub fn uar(c: &Confusion) -> Result<f64, MetricsError> {
    let [neg, pos] = c.recalls()?;
    Ok(0.5 * (neg + pos))
}

/// UAR in percent with one decimal, the way result tables print it.
pub fn format_uar_percent(uar: f64) -> String {
    format!("{:.1}", uar * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub uar: f64,
    pub recalls: [f64; 2],
    pub confusion: [[u64; 2]; 2],
}

impl MetricsReport {
    pub fn from_confusion(c: &Confusion) -> Result<Self, MetricsError> {
        Ok(Self {
            uar: uar(c)?,
            recalls: c.recalls()?,
            confusion: c.counts,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
