use super::select::staleness_decay;
use super::{DecayMode, StrategyConfig, Update};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sim::{staleness, ServerState};

/// Summary of one applied global step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedStep {
    pub count: usize,
    pub min_staleness: u64,
    pub max_staleness: u64,
    /// Decay factor used for the uniform mode; 1 for per-gradient mode.
    pub lambda: f64,
}

fn finish_round(state: &mut ServerState) -> Result<()> {
    state.global_round += 1;
    if !state.global_model.is_finite() {
        return Err(Error::NonFiniteModel { round: state.global_round });
    }
    Ok(())
}

/// `w <- w - eta_g * mean(decayed deltas)` over `updates`, summed in slice
/// order, then advances the global round.
///
/// With [`DecayMode::UniformMinStaleness`] the mean is scaled once by
/// `1/sqrt(tau_min + 1)`; with [`DecayMode::PerGradient`] each delta is
/// scaled by its own factor before summing.
pub fn apply_decayed_mean(
    updates: &[&Update],
    state: &mut ServerState,
    cfg: &StrategyConfig,
) -> Result<AppliedStep> {
    let n = updates.len();
    if n == 0 {
        return Err(Error::Invariant("aggregation over zero updates".into()));
    }
    let dim = state.global_model.dim();
    let mut taus = Vec::with_capacity(n);
    for u in updates {
        if u.delta.dim() != dim {
            return Err(Error::Dimension { expected: dim, got: u.delta.dim() });
        }
        taus.push(staleness(u, state)?);
    }
    let min_staleness = *taus.iter().min().expect("non-empty");
    let max_staleness = *taus.iter().max().expect("non-empty");

    let mut sum = vec![0.0; dim];
    let lambda = match cfg.decay_mode {
        DecayMode::UniformMinStaleness => {
            for u in updates {
                for (s, d) in sum.iter_mut().zip(u.delta.as_slice()) {
                    *s += d;
                }
            }
            staleness_decay(min_staleness)
        }
        DecayMode::PerGradient => {
            for (u, &tau) in updates.iter().zip(&taus) {
                let l = staleness_decay(tau);
                for (s, d) in sum.iter_mut().zip(u.delta.as_slice()) {
                    *s += l * d;
                }
            }
            1.0
        }
    };
    let scale = lambda / n as f64;
    for (w, s) in state.global_model.as_mut_slice().iter_mut().zip(&sum) {
        *w -= cfg.eta_g * (scale * s);
    }
    finish_round(state)?;
    Ok(AppliedStep { count: n, min_staleness, max_staleness, lambda })
}

/// AFBS global step over the updates that survived selection.
pub fn afbs_aggregate(
    selected: &[&Update],
    state: &mut ServerState,
    cfg: &StrategyConfig,
) -> Result<AppliedStep> {
    if selected.is_empty() || selected.len() > cfg.capacity {
        return Err(Error::Invariant(format!(
            "AFBS aggregated {} updates with buffer capacity {}",
            selected.len(),
            cfg.capacity
        )));
    }
    apply_decayed_mean(selected, state, cfg)
}

/// FedBuff global step over a full buffer.
pub fn fedbuff_aggregate(
    buffer: &[Update],
    state: &mut ServerState,
    cfg: &StrategyConfig,
) -> Result<AppliedStep> {
    if buffer.len() != cfg.capacity {
        return Err(Error::Invariant(format!(
            "FedBuff fired with {} of {} updates",
            buffer.len(),
            cfg.capacity
        )));
    }
    let refs: Vec<&Update> = buffer.iter().collect();
    apply_decayed_mean(&refs, state, cfg)
}

/// FedAsync mixing: rebuilds the client model as `dispatched - delta` and
/// sets `w <- lambda * client + (1 - lambda) * w` with
/// `lambda = async_mix_alpha / sqrt(tau + 1)`. Returns `lambda`.
pub fn fedasync_step(
    update: &Update,
    dispatched: &ModelParams,
    state: &mut ServerState,
    cfg: &StrategyConfig,
) -> Result<f64> {
    let dim = state.global_model.dim();
    if update.delta.dim() != dim || dispatched.dim() != dim {
        return Err(Error::Dimension { expected: dim, got: update.delta.dim() });
    }
    let tau = staleness(update, state)?;
    let lambda = cfg.async_mix_alpha * staleness_decay(tau);
    let keep = 1.0 - lambda;
    for ((w, base), d) in state
        .global_model
        .as_mut_slice()
        .iter_mut()
        .zip(dispatched.as_slice())
        .zip(update.delta.as_slice())
    {
        *w = lambda * (base - d) + keep * *w;
    }
    finish_round(state)?;
    Ok(lambda)
}

/// Synchronous step: `w <- w - eta_g * sum(V_i delta_i) / sum(V_i)`.
/// Every update must be fresh.
pub fn fedavg_round(
    updates: &[Update],
    state: &mut ServerState,
    cfg: &StrategyConfig,
) -> Result<AppliedStep> {
    if updates.is_empty() {
        return Err(Error::Invariant("FedAvg round with no updates".into()));
    }
    let dim = state.global_model.dim();
    let mut sum = vec![0.0; dim];
    let mut total_volume = 0.0;
    for u in updates {
        let tau = staleness(u, state)?;
        if tau != 0 {
            return Err(Error::Invariant(format!(
                "synchronous round received update from client {} with staleness {tau}",
                u.client_id
            )));
        }
        if u.delta.dim() != dim {
            return Err(Error::Dimension { expected: dim, got: u.delta.dim() });
        }
        let v = u.volume as f64;
        total_volume += v;
        for (s, d) in sum.iter_mut().zip(u.delta.as_slice()) {
            *s += v * d;
        }
    }
    for (w, s) in state.global_model.as_mut_slice().iter_mut().zip(&sum) {
        *w -= cfg.eta_g * (s / total_volume);
    }
    finish_round(state)?;
    Ok(AppliedStep { count: updates.len(), min_staleness: 0, max_staleness: 0, lambda: 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ServerState;

    fn state(w: Vec<f64>, round: u64) -> ServerState {
        let mut s = ServerState::new(ModelParams::from_vec(w), 0);
        s.global_round = round;
        s
    }

    fn up(client: usize, delta: Vec<f64>, volume: usize, birth: u64) -> Update {
        Update::new(client, ModelParams::from_vec(delta), volume, birth)
    }

    fn cfg(eta_g: f64, capacity: usize, decay_mode: DecayMode) -> StrategyConfig {
        StrategyConfig { eta_g, capacity, decay_mode, ..StrategyConfig::default() }
    }

    #[test]
    fn fresh_mean_is_plain_average() {
        let mut s = state(vec![1.0, 1.0], 0);
        let (a, b) = (up(0, vec![0.5, -1.0], 1, 0), up(1, vec![0.25, 3.0], 1, 0));
        let step = afbs_aggregate(&[&a, &b], &mut s, &cfg(0.5, 10, DecayMode::UniformMinStaleness))
            .unwrap();
        assert_eq!(step.lambda, 1.0);
        assert_eq!(s.global_model.as_slice(), &[1.0 - 0.5 * 0.375, 1.0 - 0.5 * 1.0]);
        assert_eq!(s.global_round, 1);
    }

    #[test]
    fn uniform_decay_uses_min_staleness() {
        let mut s = state(vec![0.0], 7);
        let (a, b) = (up(0, vec![2.0], 1, 4), up(1, vec![6.0], 1, 2));
        let step =
            afbs_aggregate(&[&a, &b], &mut s, &cfg(1.0, 10, DecayMode::UniformMinStaleness)).unwrap();
        assert_eq!((step.min_staleness, step.max_staleness), (3, 5));
        assert_eq!(step.lambda, 0.5);
        assert_eq!(s.global_model.as_slice(), &[-2.0]);
    }

    #[test]
    fn per_gradient_decay_weights_each_delta() {
        let mut s = state(vec![0.0], 3);
        let (a, b) = (up(0, vec![2.0], 1, 0), up(1, vec![6.0], 1, 3));
        afbs_aggregate(&[&a, &b], &mut s, &cfg(1.0, 10, DecayMode::PerGradient)).unwrap();
        assert_eq!(s.global_model.as_slice(), &[-(0.5 * 2.0 + 6.0) / 2.0]);
    }

    #[test]
    fn single_fresh_update_is_sgd_step() {
        let mut s = state(vec![3.0, -1.0], 2);
        let a = up(0, vec![0.5, 0.25], 9, 2);
        afbs_aggregate(&[&a], &mut s, &cfg(1.0, 10, DecayMode::UniformMinStaleness)).unwrap();
        assert_eq!(s.global_model.as_slice(), &[2.5, -1.25]);
    }

    #[test]
    fn afbs_bounds_are_enforced() {
        let mut s = state(vec![0.0], 0);
        let c = cfg(1.0, 1, DecayMode::UniformMinStaleness);
        assert!(matches!(afbs_aggregate(&[], &mut s, &c), Err(Error::Invariant(_))));
        let (a, b) = (up(0, vec![1.0], 1, 0), up(1, vec![1.0], 1, 0));
        assert!(matches!(afbs_aggregate(&[&a, &b], &mut s, &c), Err(Error::Invariant(_))));
    }

    #[test]
    fn fedbuff_requires_full_buffer() {
        let mut s = state(vec![0.0], 0);
        let buf = vec![up(0, vec![1.0], 1, 0)];
        assert!(fedbuff_aggregate(&buf, &mut s, &cfg(1.0, 2, DecayMode::UniformMinStaleness)).is_err());
        let step =
            fedbuff_aggregate(&buf, &mut s, &cfg(1.0, 1, DecayMode::UniformMinStaleness)).unwrap();
        assert_eq!(step.count, 1);
    }

    #[test]
    fn fedasync_extremes() {
        let dispatched = ModelParams::from_vec(vec![1.0, 2.0]);
        let u = up(0, vec![0.5, 0.5], 1, 4);

        let mut s = state(vec![10.0, 20.0], 4);
        let c = StrategyConfig { async_mix_alpha: 1.0, ..StrategyConfig::default() };
        assert_eq!(fedasync_step(&u, &dispatched, &mut s, &c).unwrap(), 1.0);
        assert_eq!(s.global_model.as_slice(), &[0.5, 1.5]);

        let mut s = state(vec![10.0, 20.0], 4);
        let c = StrategyConfig { async_mix_alpha: 0.0, ..StrategyConfig::default() };
        assert_eq!(fedasync_step(&u, &dispatched, &mut s, &c).unwrap(), 0.0);
        assert_eq!(s.global_model.as_slice(), &[10.0, 20.0]);
        assert_eq!(s.global_round, 5);

        let mut s = state(vec![10.0, 20.0], 4);
        let c = StrategyConfig { async_mix_alpha: 0.6, ..StrategyConfig::default() };
        assert_eq!(fedasync_step(&u, &dispatched, &mut s, &c).unwrap(), 0.6);
    }

    #[test]
    fn fedavg_weights_by_volume() {
        let mut s = state(vec![0.0, 0.0], 0);
        let ups = vec![up(0, vec![4.0, 0.0], 1, 0), up(1, vec![0.0, 8.0], 3, 0)];
        fedavg_round(&ups, &mut s, &cfg(1.0, 10, DecayMode::UniformMinStaleness)).unwrap();
        assert_eq!(s.global_model.as_slice(), &[-1.0, -6.0]);

        let mut s = state(vec![0.0], 0);
        let ups = vec![up(0, vec![2.0], 5, 0), up(1, vec![4.0], 5, 0)];
        fedavg_round(&ups, &mut s, &cfg(1.0, 10, DecayMode::UniformMinStaleness)).unwrap();
        assert_eq!(s.global_model.as_slice(), &[-3.0]);
    }

    #[test]
    fn fedavg_rejects_stale_updates() {
        let mut s = state(vec![0.0], 2);
        let ups = vec![up(0, vec![1.0], 1, 1)];
        assert!(matches!(
            fedavg_round(&ups, &mut s, &cfg(1.0, 10, DecayMode::UniformMinStaleness)),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn non_finite_result_aborts() {
        let mut s = state(vec![f64::MAX], 0);
        let a = up(0, vec![-f64::MAX], 1, 0);
        let err = afbs_aggregate(&[&a], &mut s, &cfg(2.0, 1, DecayMode::UniformMinStaleness));
        assert!(matches!(err, Err(Error::NonFiniteModel { round: 1 })));
    }
}
