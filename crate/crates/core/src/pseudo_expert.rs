//! Pseudo-expert action construction: find the two expert log waypoints
//! nearest the ego, linearly interpolate their associated futures, and match
//! the interpolated reference to the action vocabulary.
//!
//! Both futures are re-expressed in the CURRENT ego frame before blending;
//! interpolating in mismatched frames would mix incompatible headings. The
//! blend weight is the clamped scalar projection of the ego position onto
//! the segment between the two waypoints, so the label varies continuously
//! as the ego moves and never extrapolates past the log ends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist_sq, Pose2D};
use crate::scalar::Real;
use crate::vocabulary::{nearest_prototype, ActionVocabulary, Trajectory, VocabError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpertError {
    #[error("expert log needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("expert futures must share one horizon: {0} vs {1}")]
    MixedHorizons(usize, usize),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// One recorded expert state: a global pose with its T-step future expressed
/// in that pose's own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogWaypoint<S> {
    pub pose: Pose2D<S>,
    pub timestamp: S,
    pub future: Trajectory<S>,
}

/// Clean reference drive for one scenario, ordered along the route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertLog<S> {
    waypoints: Vec<LogWaypoint<S>>,
}

impl<S: Real> ExpertLog<S> {
    pub fn new(waypoints: Vec<LogWaypoint<S>>) -> Result<Self, ExpertError> {
        if waypoints.len() < 2 {
            return Err(ExpertError::TooFewWaypoints(waypoints.len()));
        }
        let horizon = waypoints[0].future.len();
        for w in &waypoints {
            if w.future.len() != horizon {
                return Err(ExpertError::MixedHorizons(horizon, w.future.len()));
            }
        }
        Ok(ExpertLog { waypoints })
    }

    pub fn waypoints(&self) -> &[LogWaypoint<S>] {
        &self.waypoints
    }

    pub fn horizon(&self) -> usize {
        self.waypoints[0].future.len()
    }

    pub fn futures(&self) -> impl Iterator<Item = &Trajectory<S>> {
        self.waypoints.iter().map(|w| &w.future)
    }
}

/// Pseudo-expert label for one ego state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoExpertLabel<S> {
    /// Index into the action vocabulary.
    pub action_index: usize,
    /// The interpolated reference, in the ego frame.
    pub reference: Trajectory<S>,
    /// Squared trajectory distance between reference and matched prototype.
    pub match_distance: S,
}

/// The two log indices used for interpolation, ordered by log position, plus
/// the blend weight toward the later one.
fn select_segment<S: Real>(ego: &Pose2D<S>, log: &ExpertLog<S>) -> (usize, usize, S) {
    let pos = ego.position();
    let wps = log.waypoints();
    let d2 = |i: usize| dist_sq(pos, wps[i].pose.position());

    let mut nearest = 0usize;
    for i in 1..wps.len() {
        if d2(i) < d2(nearest) {
            nearest = i;
        }
    }
    let mut second = if nearest == 0 { 1 } else { 0 };
    for i in 0..wps.len() {
        if i != nearest && d2(i) < d2(second) {
            second = i;
        }
    }

    // prefer the two globally nearest when adjacent in log order; otherwise
    // (looping or folded routes) pair the nearest waypoint with its nearer
    // log-neighbor
    let (a, b) = if nearest.abs_diff(second) == 1 {
        (nearest.min(second), nearest.max(second))
    } else {
        let prev = nearest.checked_sub(1);
        let next = if nearest + 1 < wps.len() { Some(nearest + 1) } else { None };
        let neighbor = match (prev, next) {
            (Some(p), Some(n)) => {
                if d2(p) <= d2(n) {
                    p
                } else {
                    n
                }
            }
            (Some(p), None) => p,
            (None, Some(n)) => n,
            (None, None) => unreachable!("log has at least 2 waypoints"),
        };
        (nearest.min(neighbor), nearest.max(neighbor))
    };

    let pa = wps[a].pose.position();
    let pb = wps[b].pose.position();
    let seg = [pb[0] - pa[0], pb[1] - pa[1]];
    let len2 = seg[0] * seg[0] + seg[1] * seg[1];
    let lambda = if len2 > S::of(1e-18) {
        // clamped scalar projection of the ego onto the waypoint segment
        (((pos[0] - pa[0]) * seg[0] + (pos[1] - pa[1]) * seg[1]) / len2)
            .max(S::zero())
            .min(S::one())
    } else {
        // degenerate pair: fall back to the nearest waypoint's future verbatim
        S::zero()
    };
    (a, b, lambda)
}

fn future_in_ego_frame<S: Real>(
    wp: &LogWaypoint<S>,
    ego: &Pose2D<S>,
) -> Vec<[S; 2]> {
    wp.future
        .waypoints
        .iter()
        .map(|&p| ego.point_to_frame(wp.pose.point_to_world(p)))
        .collect()
}

/// Interpolated reference trajectory for an ego state, in the ego frame.
pub fn interpolate_reference<S: Real>(
    ego: &Pose2D<S>,
    log: &ExpertLog<S>,
) -> Result<Trajectory<S>, ExpertError> {
    if log.waypoints().len() < 2 {
        return Err(ExpertError::TooFewWaypoints(log.waypoints().len()));
    }
    let (a, b, lambda) = select_segment(ego, log);
    let fa = future_in_ego_frame(&log.waypoints()[a], ego);
    let fb = future_in_ego_frame(&log.waypoints()[b], ego);
    let one = S::one();
    let blended: Vec<[S; 2]> = fa
        .iter()
        .zip(&fb)
        .map(|(p, q)| {
            [
                (one - lambda) * p[0] + lambda * q[0],
                (one - lambda) * p[1] + lambda * q[1],
            ]
        })
        .collect();
    Ok(Trajectory { waypoints: blended })
}

/// The vocabulary prototype nearest the interpolated reference.
pub fn pseudo_expert_action<S: Real>(
    ego: &Pose2D<S>,
    log: &ExpertLog<S>,
    vocab: &ActionVocabulary<S>,
) -> Result<PseudoExpertLabel<S>, ExpertError> {
    let reference = interpolate_reference(ego, log)?;
    let (action_index, match_distance) = nearest_prototype(vocab, &reference)?;
    Ok(PseudoExpertLabel { action_index, reference, match_distance })
}
