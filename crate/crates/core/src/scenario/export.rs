//! Trajectory and profile export.

use serde::Serialize;

use super::event::EventLog;
use crate::response::ResponseLevel;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: Tick,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub n4: f64,
    pub n5: f64,
    pub n6: f64,
    pub cqs: f64,
    pub level: ResponseLevel,
}

/// One row per metric snapshot in the log.
pub fn trajectory(log: &EventLog) -> Vec<TrajectoryRow> {
    log.snapshots()
        .map(|(t, s)| {
            let [n1, n2, n3, n4, n5, n6] = s.values;
            TrajectoryRow {
                t,
                n1,
                n2,
                n3,
                n4,
                n5,
                n6,
                cqs: s.cqs,
                level: s.level,
            }
        })
        .collect()
}

/// CSV with header `t,n1,n2,n3,n4,n5,n6,cqs,level`.
pub fn trajectory_csv(log: &EventLog) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in trajectory(log) {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub t: Tick,
    pub values: [f64; 6],
}

/// Six-value profiles at the requested ticks, skipping ticks not in the log.
pub fn profiles(log: &EventLog, ticks: &[Tick]) -> Vec<Profile> {
    ticks
        .iter()
        .filter_map(|&t| {
            log.snapshots()
                .find(|(at, _)| *at == t)
                .map(|(_, s)| Profile { t, values: s.values })
        })
        .collect()
}
