//! Scripted context simulation: event replay, simulated users, and colleague histories.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::context::{ContextState, ItemIdx, Transaction};
use crate::scenario::{AcceptTable, Scenario};
use crate::{Error, Result};

/// Parses and validates a scenario document.
pub fn load_scenario(document: &str) -> Result<Scenario> {
    Scenario::from_toml(document)
}

/// `(s, s_next)` for a trial. The last scripted event is its own successor.
pub fn next_event(scenario: &Scenario, trial: usize) -> Result<(ContextState, ContextState)> {
    next_event_in(&scenario.event_sequence, scenario.trials, trial)
}

pub(crate) fn next_event_in(
    events: &[ContextState],
    trials: usize,
    trial: usize,
) -> Result<(ContextState, ContextState)> {
    if trial >= trials || trial >= events.len() {
        return Err(Error::TrialOutOfRange { index: trial, trials });
    }
    let s = events[trial];
    Ok((s, events.get(trial + 1).copied().unwrap_or(s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUser {
    pub user_id: String,
    pub accept: AcceptTable,
}

impl SimulatedUser {
    /// Scans the list in rank order; rank `j` (0-based) is taken with
    /// probability `P(item | s) · discount^j`. At most one item is chosen.
    pub fn user_choice<R: Rng + ?Sized>(
        &self,
        s: ContextState,
        recommended: &[ItemIdx],
        position_discount: f64,
        rng: &mut R,
    ) -> Option<ItemIdx> {
        debug_assert!(
            recommended.iter().enumerate().all(|(i, a)| !recommended[..i].contains(a)),
            "duplicate recommendation"
        );
        let mut weight = 1.0;
        for &item in recommended {
            let p = self.accept.get(s, item) * weight;
            if rng.random::<f64>() < p {
                return Some(item);
            }
            weight *= position_discount;
        }
        None
    }
}

/// Mean acceptance table over the target's group colleagues.
pub fn group_mean_table(scenario: &Scenario) -> AcceptTable {
    let members = scenario.target_group_colleagues();
    let mut mean = scenario.empty_accept_table();
    if members.is_empty() {
        return mean;
    }
    let w = 1.0 / members.len() as f64;
    for (t, c) in mean.clone().situations() {
        let row = mean.row_at_mut(t, c);
        for m in &members {
            let src = scenario.accept_table(m).expect("validated colleague").row_at(t, c);
            for (dst, p) in row.iter_mut().zip(src) {
                *dst += w * p;
            }
        }
    }
    mean
}

/// The newcomer's true preferences: `ρ · group mean + (1 − ρ) · noise`, where
/// the noise table reshuffles each situation's group-mean row across items.
/// Shuffling keeps the overall acceptance level while decorrelating which
/// items are liked.
pub fn target_user<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> SimulatedUser {
    let rho = scenario.group_coherence_rho;
    let mean = group_mean_table(scenario);
    let mut accept = mean.clone();
    for (t, c) in mean.situations() {
        let mut noise = mean.row_at(t, c).to_vec();
        noise.shuffle(rng);
        for ((dst, m), n) in accept.row_at_mut(t, c).iter_mut().zip(mean.row_at(t, c)).zip(noise) {
            *dst = (rho * m + (1.0 - rho) * n).clamp(0.0, 1.0);
        }
    }
    SimulatedUser { user_id: scenario.target.user_id.clone(), accept }
}

/// Samples `history_trials_per_colleague` situations per colleague and logs one
/// chosen item per situation, drawn proportionally to acceptance.
/// A situation where the colleague accepts nothing yields no record.
pub fn generate_colleague_history<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<Transaction> {
    let mut log = Vec::new();
    if scenario.history_contexts.is_empty() {
        return log;
    }
    for (user, _) in scenario.colleagues() {
        let table = scenario.accept_table(user).expect("validated colleague");
        for _ in 0..scenario.history_trials_per_colleague {
            let s = scenario.history_contexts[rng.random_range(0..scenario.history_contexts.len())];
            if let Some(item) = sample_proportional(table.row(s), rng) {
                log.push(Transaction::chosen(user, scenario.actions.id(item)));
            }
        }
    }
    log
}

fn sample_proportional<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<ItemIdx> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if u < w {
            return Some(ItemIdx(i));
        }
        u -= w;
        last = Some(ItemIdx(i));
    }
    // rounding can leave u a hair above the final weight
    last
}
