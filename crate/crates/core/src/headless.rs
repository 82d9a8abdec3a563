//! Synthetic-user driven session runs.
//!
//! A headless run drives a real [`Session`] through the same messages the UI
//! would send (hand in range, slider drag, commit), so the resulting event log
//! can be replayed like any recorded session. Log timestamps come from a
//! [`LogicalClock`], which makes two runs with the same inputs byte-identical.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param_space::ParamVector;
use crate::session::{EventLogEntry, Inbound, LogicalClock, Session, SessionConfig, SessionError};
use crate::synthetic::{target_for_seed, ChoicePolicy, IterationRecord, LatentGoodness, SyntheticUser};

#[derive(Debug, Error)]
pub enum HeadlessError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("session has no active slider segment")]
    NoSegment,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlessOptions {
    pub iterations: usize,
    pub noise_scale: f64,
    /// Hidden optimum; drawn from the seed when absent.
    pub target: Option<ParamVector>,
    pub width: f64,
    /// Hand distance reported before the first iteration.
    pub hand_distance_mm: f64,
}

impl Default for HeadlessOptions {
    fn default() -> Self {
        Self {
            iterations: 15,
            noise_scale: 0.0,
            target: None,
            width: 0.4,
            hand_distance_mm: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadlessRun {
    pub target: ParamVector,
    pub rows: Vec<IterationRecord>,
    pub log: Vec<EventLogEntry>,
    pub final_hash: u64,
}

pub fn run_headless(config: &SessionConfig, opts: &HeadlessOptions) -> Result<HeadlessRun, HeadlessError> {
    let target = opts.target.unwrap_or_else(|| target_for_seed(config.seed));
    let latent = LatentGoodness {
        target,
        width: opts.width,
    };
    let policy = ChoicePolicy {
        noise_scale: opts.noise_scale,
        seed: config.seed,
        ..ChoicePolicy::default()
    };
    let mut user = SyntheticUser::new(latent, policy);
    let mut session = Session::with_clock(config.clone(), Box::new(LogicalClock::new(100)))?;
    session.apply(Inbound::Hand {
        distance_mm: Some(opts.hand_distance_mm),
    })?;

    let mut rows = Vec::with_capacity(opts.iterations);
    for _ in 0..opts.iterations {
        let seg = session.state().segment.ok_or(HeadlessError::NoSegment)?;
        let t = user.choose(&seg);
        session.apply(Inbound::SetSlider { t })?;
        session.apply(Inbound::CommitChoice)?;
        let opt = &session.state().optimizer;
        let x = opt.incumbent_point().expect("committed state has an incumbent");
        rows.push(IterationRecord {
            iteration: opt.iteration,
            best_goodness: latent.goodness(&x),
            distance_to_target: x.distance(&target),
            incumbent_map: opt.incumbent_value(),
        });
    }
    Ok(HeadlessRun {
        target,
        rows,
        final_hash: session.state().hash(),
        log: session.log().to_vec(),
    })
}

/// CSV with columns `iteration, best_goodness, distance_to_target`.
pub fn write_rows_csv<W: Write>(rows: &[IterationRecord], out: W) -> Result<(), HeadlessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "best_goodness", "distance_to_target"])?;
    for r in rows {
        w.serialize((r.iteration, r.best_goodness, r.distance_to_target))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::replay;

    #[test]
    fn headless_run_replays() {
        let cfg = SessionConfig::default().with_seed(8);
        let opts = HeadlessOptions {
            iterations: 4,
            ..HeadlessOptions::default()
        };
        let run = run_headless(&cfg, &opts).unwrap();
        assert_eq!(run.rows.len(), 4);
        assert_eq!(run.log.len(), 1 + 2 * 4);
        assert_eq!(replay(&cfg, &run.log).unwrap(), run.final_hash);

        let mut buf = Vec::new();
        write_rows_csv(&run.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,best_goodness,distance_to_target\n1,"));
    }
}
