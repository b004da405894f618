//! Published mean angular errors, stored verbatim for side-by-side reports.

use serde::Serialize;

use crate::eval::Scope;

pub const MPIIGAZE: &str = "MPIIGaze";
pub const GAZE360: &str = "Gaze360";
pub const L2CS: &str = "L2CS-Net";
pub const FARE_NET: &str = "FARE-Net";
/// Subject label of the across-subject average bar.
pub const AVG: &str = "Avg";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRecord {
    pub dataset: &'static str,
    pub method: &'static str,
    pub scope: Scope,
    /// Regression coefficient, for rows that name one.
    pub beta: Option<f64>,
    /// `None` for whole-dataset numbers; a subject id or [`AVG`] otherwise.
    pub subject: Option<&'static str>,
    pub mean_error_deg: f64,
}

/// Lookup key. `beta` and `subject` must match exactly, including `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceKey<'a> {
    pub dataset: &'a str,
    pub method: &'a str,
    pub scope: Scope,
    pub beta: Option<f64>,
    pub subject: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceTable {
    records: Vec<ReferenceRecord>,
}

const SUBJECTS: [&str; 16] = [
    "p00", "p01", "p02", "p03", "p04", "p05", "p06", "p07", "p08", "p09", "p10", "p11", "p12", "p13", "p14", AVG,
];

const L2CS_PER_SUBJECT: [f64; 16] = [
    2.38, 2.96, 3.78, 3.21, 2.72, 4.73, 3.58, 4.07, 5.17, 3.47, 4.39, 6.74, 3.39, 4.17, 4.32, 3.92,
];

const FARE_NET_PER_SUBJECT: [f64; 16] = [
    2.57, 3.76, 5.65, 2.79, 2.7, 6.05, 3.5, 4.75, 5.2, 4.47, 5.26, 3.59, 3.78, 5.31, 6.67, 4.4,
];

const MPIIGAZE_BASELINES: [(&str, f64); 11] = [
    ("iTracker (AlexNet)", 5.6),
    ("MeNets", 4.9),
    ("FullFace (Spatial weights CNN)", 4.8),
    ("Dilated-Net", 4.8),
    ("RT-Gene (1 model)", 4.8),
    ("GEDDNet", 4.5),
    ("RT-Gene (4 ensemble)", 4.3),
    ("Bayesian Approach", 4.3),
    ("FAR-Net", 4.3),
    ("CA-Net", 4.1),
    ("AGE-Net", 4.09),
];

/// (method, front 180, front facing)
const GAZE360_BASELINES: [(&str, f64, Option<f64>); 5] = [
    ("FullFace", 14.99, None),
    ("Dilated-Net", 13.73, None),
    ("RT-Gene (4 ensemble)", 12.26, None),
    ("CA-Net", 12.26, None),
    ("Gaze360 (LSTM)", 11.4, Some(11.1)),
];

fn whole(dataset: &'static str, method: &'static str, scope: Scope, beta: Option<f64>, v: f64) -> ReferenceRecord {
    ReferenceRecord {
        dataset,
        method,
        scope,
        beta,
        subject: None,
        mean_error_deg: v,
    }
}

impl ReferenceTable {
    /// Every published number this crate reports against.
    pub fn published() -> Self {
        let mut records = Vec::new();
        for (m, v) in MPIIGAZE_BASELINES {
            records.push(whole(MPIIGAZE, m, Scope::All, None, v));
        }
        records.push(whole(MPIIGAZE, L2CS, Scope::All, Some(1.0), 3.96));
        records.push(whole(MPIIGAZE, L2CS, Scope::All, Some(2.0), 3.92));
        for (m, f180, ff) in GAZE360_BASELINES {
            records.push(whole(GAZE360, m, Scope::Front180, None, f180));
            if let Some(ff) = ff {
                records.push(whole(GAZE360, m, Scope::FrontFacing, None, ff));
            }
        }
        records.push(whole(GAZE360, L2CS, Scope::Front180, Some(1.0), 10.41));
        records.push(whole(GAZE360, L2CS, Scope::Front180, Some(2.0), 10.54));
        records.push(whole(GAZE360, L2CS, Scope::FrontFacing, Some(1.0), 9.02));
        records.push(whole(GAZE360, L2CS, Scope::FrontFacing, Some(2.0), 9.13));
        for (method, values) in [(L2CS, L2CS_PER_SUBJECT), (FARE_NET, FARE_NET_PER_SUBJECT)] {
            for (s, v) in SUBJECTS.into_iter().zip(values) {
                records.push(ReferenceRecord {
                    dataset: MPIIGAZE,
                    method,
                    scope: Scope::All,
                    beta: None,
                    subject: Some(s),
                    mean_error_deg: v,
                });
            }
        }
        Self { records }
    }

    pub fn empty() -> Self {
        Self { records: Vec::new() }
    }

    pub fn records(&self) -> &[ReferenceRecord] {
        &self.records
    }

    pub fn get(&self, key: &ReferenceKey<'_>) -> Option<f64> {
        self.records
            .iter()
            .find(|r| {
                r.dataset.eq_ignore_ascii_case(key.dataset)
                    && r.method == key.method
                    && r.scope == key.scope
                    && r.beta == key.beta
                    && r.subject == key.subject
            })
            .map(|r| r.mean_error_deg)
    }

    /// Whole-dataset L2CS-Net number for a β.
    pub fn l2cs(&self, dataset: &str, scope: Scope, beta: f64) -> Option<f64> {
        self.get(&ReferenceKey {
            dataset,
            method: L2CS,
            scope,
            beta: Some(beta),
            subject: None,
        })
    }

    /// Per-subject bar value (MPIIGaze only), including [`AVG`].
    pub fn per_subject(&self, method: &str, subject: &str) -> Option<f64> {
        self.get(&ReferenceKey {
            dataset: MPIIGAZE,
            method,
            scope: Scope::All,
            beta: None,
            subject: Some(subject),
        })
    }

    /// Subject labels of the per-subject chart, in plotting order.
    pub fn chart_subjects() -> &'static [&'static str] {
        &SUBJECTS
    }
}
