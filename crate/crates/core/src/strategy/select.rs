//! Cluster-wise buffer gradient selection.
//!
//! Every buffered update gets the score `V / (tau + 1)^2`. Within each
//! cluster the highest-scoring update `m` is found and every other update
//! survives only if it is no worse than `m` on at least one axis:
//! `V_x >= V_m || tau_x <= tau_m`. An update that loses on both axes is
//! dropped, then optionally rescued with probability
//! `score(x) / max score over the whole buffer`.

use rand::Rng;

use super::Update;
use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};

/// Score of an update with `volume` samples and staleness `tau`.
pub fn score_of(volume: usize, tau: u64) -> f64 {
    let t = tau as f64 + 1.0;
    volume as f64 / (t * t)
}

/// Score of `update` when consumed at `current_round`.
pub fn score(update: &Update, current_round: u64) -> Result<f64> {
    let tau = crate::sim::staleness_between(update.birth_round, current_round)?;
    Ok(score_of(update.volume, tau))
}

/// Obsolescence decay `1/sqrt(tau + 1)`.
pub fn staleness_decay(tau: u64) -> f64 {
    1.0 / (tau as f64 + 1.0).sqrt()
}

/// Outcome of [`gradient_select`]; all indices refer to buffer positions
/// and are in arrival order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selection {
    pub kept: Vec<usize>,
    /// Entries removed by the keep-rule, whether later rescued or not.
    pub dropped: Vec<usize>,
    pub rescued: Vec<usize>,
}

impl Selection {
    pub fn updates<'a>(&self, entries: &'a [Update]) -> Vec<&'a Update> {
        self.kept.iter().map(|&i| &entries[i]).collect()
    }
}

/// Selects the updates of a full buffer that enter aggregation.
///
/// Ties for the best score go to the lowest client id, then the earliest
/// arrival. With `rescue` on, one uniform draw is taken from `rng` for each
/// dropped entry, in buffer order.
pub fn gradient_select<R: Rng + ?Sized>(
    entries: &[Update],
    assignment: &ClusterAssignment,
    current_round: u64,
    rescue: bool,
    rng: &mut R,
) -> Result<Selection> {
    let mut selection = Selection::default();
    let mut leaders = Vec::new();
    classify(entries, assignment.k, current_round, rescue, rng, &mut leaders, |i, verdict| {
        match verdict {
            Verdict::Kept => selection.kept.push(i),
            Verdict::Dropped => selection.dropped.push(i),
            Verdict::Rescued => {
                selection.kept.push(i);
                selection.dropped.push(i);
                selection.rescued.push(i);
            }
        }
    })?;
    Ok(selection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Kept,
    /// Removed by the keep-rule and not rescued.
    Dropped,
    /// Removed by the keep-rule, then rescued.
    Rescued,
}

/// Best entry of one cluster, kept by value so the keep-rule pass needs no
/// lookups. Scratch space for [`classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    score: f64,
    client_id: usize,
    volume: usize,
    birth_round: u64,
}

impl Leader {
    const EMPTY: Leader =
        Leader { score: f64::NEG_INFINITY, client_id: usize::MAX, volume: 0, birth_round: 0 };
}

/// Allocation-free core of [`gradient_select`]: calls `visit` once per
/// entry, in buffer order. `leaders` is reusable scratch space.
///
/// The comparisons are written with non-short-circuit `&`/`|` so the leader
/// update compiles to conditional moves; buffers differ every round and the
/// branchy form mispredicts most of the time.
pub fn classify<R, F>(
    entries: &[Update],
    k: usize,
    current_round: u64,
    rescue: bool,
    rng: &mut R,
    leaders: &mut Vec<Leader>,
    mut visit: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(usize, Verdict),
{
    if entries.is_empty() {
        return Err(Error::Invariant("gradient selection on an empty buffer".into()));
    }
    leaders.clear();
    leaders.resize(k, Leader::EMPTY);
    let mut top = 0.0_f64;
    for u in entries {
        if u.cluster_id >= k {
            return Err(unknown_cluster(u, k));
        }
        let Some(tau) = current_round.checked_sub(u.birth_round) else {
            return Err(future_birth(u, current_round));
        };
        let s = score_of(u.volume, tau);
        top = top.max(s);
        let slot = &mut leaders[u.cluster_id];
        let better = (s > slot.score) | ((s == slot.score) & (u.client_id < slot.client_id));
        let candidate =
            Leader { score: s, client_id: u.client_id, volume: u.volume, birth_round: u.birth_round };
        *slot = if better { candidate } else { *slot };
    }

    for (i, u) in entries.iter().enumerate() {
        let m = leaders[u.cluster_id];
        // tau_x <= tau_m is birth_x >= birth_m at a common round.
        let keep = (u.volume >= m.volume) | (u.birth_round >= m.birth_round);
        let verdict = if keep {
            Verdict::Kept
        } else if rescue && rng.random::<f64>() < score_of(u.volume, current_round - u.birth_round) / top {
            Verdict::Rescued
        } else {
            Verdict::Dropped
        };
        visit(i, verdict);
    }
    Ok(())
}

#[cold]
fn unknown_cluster(u: &Update, k: usize) -> Error {
    Error::Strategy(format!("update from client {} has cluster {} outside [0, {k})", u.client_id, u.cluster_id))
}

#[cold]
fn future_birth(u: &Update, current_round: u64) -> Error {
    crate::sim::staleness_between(u.birth_round, current_round).unwrap_err()
}
