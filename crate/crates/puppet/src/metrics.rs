//! Post-hoc run metrics, computed from a [`DemoRecord`] only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::DemoRecord;

/// Largest lag searched by [`lag_estimate`], in rows.
pub const MAX_LAG_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockStats {
    pub count: usize,
    pub causes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// rad, over all rows and joints
    pub rms_tracking_error: f64,
    /// rad
    pub max_joint_error: f64,
    pub lag_estimate_ms: f64,
    pub lock_events: LockStats,
    pub ik_failures: usize,
    pub velocity_faults: usize,
    pub targets_sent: usize,
    pub rows: usize,
}

/// Row period in ms implied by the header.
fn row_period_ms(record: &DemoRecord) -> f64 {
    (record.header.ticks_per_row * record.header.dt_ns) as f64 * 1e-6
}

pub fn compute(record: &DemoRecord) -> Metrics {
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut max: f64 = 0.0;
    let mut locks = LockStats {
        count: 0,
        causes: BTreeMap::new(),
    };
    let mut ik = 0;
    let mut vel = 0;
    let mut sent = 0;
    for r in &record.rows {
        for (l, f) in r.q_leader.iter().zip(&r.q_follower) {
            let e = l - f;
            sq += e * e;
            max = max.max(e.abs());
            count += 1;
        }
        for e in r.events.iter().filter(|e| e.event == "lock") {
            locks.count += 1;
            let cause = e.cause.clone().unwrap_or_else(|| "unknown".into());
            *locks.causes.entry(cause).or_default() += 1;
        }
        match r.leader_fault.as_deref() {
            Some(f) if f.starts_with("ik:") => ik += 1,
            Some(f) if f.starts_with("velocity:") => vel += 1,
            _ => {}
        }
        sent += r.target_sent as usize;
    }
    let leader: Vec<&[f64]> = record.rows.iter().map(|r| r.q_leader.as_slice()).collect();
    let follower: Vec<&[f64]> = record.rows.iter().map(|r| r.q_follower.as_slice()).collect();
    Metrics {
        rms_tracking_error: if count == 0 { 0.0 } else { (sq / count as f64).sqrt() },
        max_joint_error: max,
        lag_estimate_ms: lag_estimate(&leader, &follower, MAX_LAG_ROWS) as f64 * row_period_ms(record),
        lock_events: locks,
        ik_failures: ik,
        velocity_faults: vel,
        targets_sent: sent,
        rows: record.rows.len(),
    }
}

/// Lag (in samples) maximising the correlation between `leader[t]` and
/// `follower[t + lag]`. Each candidate lag uses the Pearson correlation of
/// the overlapping window, pooled over joints so that joints which barely
/// move carry little weight. Signals without variation give 0.
pub fn lag_estimate(leader: &[&[f64]], follower: &[&[f64]], max_lag: usize) -> usize {
    let n = leader.len().min(follower.len());
    if n < 3 {
        return 0;
    }
    let joints = leader[0].len();
    let max_lag = max_lag.min(n / 2);
    let mut best = (0usize, f64::NEG_INFINITY);
    for lag in 0..=max_lag {
        let m = n - lag;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for j in 0..joints {
            let ma = (0..m).map(|t| leader[t][j]).sum::<f64>() / m as f64;
            let mb = (0..m).map(|t| follower[t + lag][j]).sum::<f64>() / m as f64;
            for t in 0..m {
                let (x, y) = (leader[t][j] - ma, follower[t + lag][j] - mb);
                sab += x * y;
                saa += x * x;
                sbb += y * y;
            }
        }
        if saa <= 1e-18 || sbb <= 1e-18 {
            continue;
        }
        let r = sab / (saa * sbb).sqrt();
        if r > best.1 + 1e-12 {
            best = (lag, r);
        }
    }
    best.0
}
