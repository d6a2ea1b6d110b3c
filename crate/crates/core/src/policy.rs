//! Action selection: greedy, ε-greedy, pure CF, and CF-QL.
//!
//! CF-QL keeps ε-greedy's exploit branch but swaps the uniform exploratory
//! draw for the target's CF top-1 item (top-2 when top-1 is already the
//! greedy choice, so exploring always leaves the greedy action).
//!
//! Every random draw comes from the caller's rng. The two ε-greedy variants
//! consume it in the same order (one uniform for the branch, then one index
//! draw only on a uniform exploration) so that an evidence-free CF model makes
//! CF-QL replay QL exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cf::{CfModel, RecommendationList};
use crate::context::{ActionSet, ContextState, ItemIdx, UserProfile};
use crate::rl::QTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cf,
    Ql,
    Cfql,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Cf, Algorithm::Ql, Algorithm::Cfql];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cf => "cf",
            Algorithm::Ql => "ql",
            Algorithm::Cfql => "cfql",
        }
    }

    pub fn uses_q_table(self) -> bool {
        matches!(self, Algorithm::Ql | Algorithm::Cfql)
    }

    pub fn uses_cf(self) -> bool {
        matches!(self, Algorithm::Cf | Algorithm::Cfql)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" => Ok(Algorithm::Cf),
            "ql" => Ok(Algorithm::Ql),
            "cfql" | "cf-ql" => Ok(Algorithm::Cfql),
            other => Err(Error::invalid("algorithm", format!("`{other}` (expected cf, ql or cfql)"))),
        }
    }
}

/// Why an item landed at its list position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Branch {
    Exploit,
    ExploreRandom,
    ExploreCf,
    CfOnly,
}

impl Branch {
    pub fn is_exploration(self) -> bool {
        matches!(self, Branch::ExploreRandom | Branch::ExploreCf)
    }
}

/// Linear ε decay plus the algorithm choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub decay_trials: usize,
    pub algorithm: Algorithm,
}

impl PolicyConfig {
    pub fn new(epsilon_start: f64, epsilon_end: f64, decay_trials: usize, algorithm: Algorithm) -> Result<Self> {
        let c = Self { epsilon_start, epsilon_end, decay_trials, algorithm };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.epsilon_start) || !unit(self.epsilon_end) {
            return Err(Error::invalid("epsilon", "start and end must lie in [0, 1]"));
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::invalid("epsilon", "end must not exceed start"));
        }
        if self.decay_trials == 0 {
            return Err(Error::invalid("decay_trials", "must be positive"));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, trial: usize) -> f64 {
        let progress = trial.min(self.decay_trials) as f64 / self.decay_trials as f64;
        // start − (start − end)·p, written so both endpoints come out exact
        self.epsilon_start * (1.0 - progress) + self.epsilon_end * progress
    }
}

fn explores<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < epsilon
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..=1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::invalid("epsilon", format!("{epsilon} not in [0, 1]")))
    }
}

/// Standard ε-greedy: uniform random action with probability ε, greedy otherwise.
pub fn select_ql<R: Rng + ?Sized>(
    table: &QTable,
    s: ContextState,
    actions: &ActionSet,
    epsilon: f64,
    rng: &mut R,
) -> Result<(ItemIdx, Branch)> {
    check_epsilon(epsilon)?;
    let greedy = table.greedy_action(s, actions)?;
    if explores(epsilon, rng) {
        Ok((ItemIdx(rng.random_range(0..actions.len())), Branch::ExploreRandom))
    } else {
        Ok((greedy, Branch::Exploit))
    }
}

/// The CF recommendation list with nothing excluded.
pub fn select_cf(model: &CfModel, target: &UserProfile, n: usize) -> Result<RecommendationList> {
    model.top_n(target, n, &BTreeSet::new())
}

/// ε-greedy whose exploratory move is the CF pick for the target.
#[allow(clippy::too_many_arguments)]
pub fn select_cfql<R: Rng + ?Sized>(
    table: &QTable,
    model: &CfModel,
    target: &UserProfile,
    s: ContextState,
    actions: &ActionSet,
    epsilon: f64,
    rng: &mut R,
) -> Result<(ItemIdx, Branch)> {
    check_epsilon(epsilon)?;
    let greedy = table.greedy_action(s, actions)?;
    if !explores(epsilon, rng) {
        return Ok((greedy, Branch::Exploit));
    }
    let ranking = model.top_n(target, 2, &BTreeSet::new())?;
    if !ranking.has_no_evidence() {
        if let Some(pick) = ranking.items.iter().map(|r| r.item).find(|&i| i != greedy) {
            return Ok((pick, Branch::ExploreCf));
        }
    }
    Ok((ItemIdx(rng.random_range(0..actions.len())), Branch::ExploreRandom))
}

/// Result of building one recommendation list.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub chosen: Vec<ItemIdx>,
    pub branch: Vec<Branch>,
    pub epsilon_used: f64,
}

/// Everything a policy may look at when it builds a list.
#[derive(Debug, Clone, Copy)]
pub struct SelectionInputs<'a> {
    pub algorithm: Algorithm,
    pub table: &'a QTable,
    pub model: &'a CfModel,
    pub target: &'a UserProfile,
    pub state: ContextState,
    pub actions: &'a ActionSet,
    pub epsilon: f64,
}

/// Builds an `n`-item list: position 1 by the algorithm's single-action rule,
/// the rest filled by descending Q (QL, CF-QL) or descending CF score (CF).
pub fn select_list<R: Rng + ?Sized>(inputs: &SelectionInputs<'_>, n: usize, rng: &mut R) -> Result<SelectionTrace> {
    let actions = inputs.actions;
    if actions.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if n > actions.len() {
        return Err(Error::TooManyRecommendations { requested: n, available: actions.len() });
    }

    if inputs.algorithm == Algorithm::Cf {
        let list = select_cf(inputs.model, inputs.target, n)?;
        return Ok(SelectionTrace {
            chosen: list.item_ids(),
            branch: vec![Branch::CfOnly; n],
            epsilon_used: inputs.epsilon,
        });
    }

    let (first, branch) = match inputs.algorithm {
        Algorithm::Ql => select_ql(inputs.table, inputs.state, actions, inputs.epsilon, rng)?,
        _ => select_cfql(inputs.table, inputs.model, inputs.target, inputs.state, actions, inputs.epsilon, rng)?,
    };
    let mut chosen = vec![first];
    let mut branches = vec![branch];
    for a in inputs.table.ranked(inputs.state, actions) {
        if chosen.len() == n {
            break;
        }
        if a != first {
            chosen.push(a);
            branches.push(Branch::Exploit);
        }
    }
    Ok(SelectionTrace { chosen, branch: branches, epsilon_used: inputs.epsilon })
}
