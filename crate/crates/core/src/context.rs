//! Discrete context states, actions, and the implicit-rating transaction log.
//!
//! Symbols are scenario data: a [`ContextSpace`] holds the declared alphabets
//! and is the only way to mint a [`ContextState`], so every state in play is
//! known to be in-alphabet. States store alphabet positions and are cheap
//! `Copy` keys.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One discrete context: time slot, social group and cognitive tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextState {
    time_slot: u16,
    social_group: u16,
    cognitive_tag: u16,
}

impl ContextState {
    pub fn time_slot(&self) -> usize {
        self.time_slot as usize
    }

    pub fn social_group(&self) -> usize {
        self.social_group as usize
    }

    pub fn cognitive_tag(&self) -> usize {
        self.cognitive_tag as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    dimension: &'static str,
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<I, S>(dimension: &'static str, symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::invalid("alphabet", format!("{dimension} alphabet is empty")));
        }
        if symbols.len() > u16::MAX as usize {
            return Err(Error::invalid("alphabet", format!("{dimension} alphabet is too large")));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::Duplicate { what: dimension, id: s.clone() });
            }
        }
        Ok(Self { dimension, symbols })
    }

    pub fn dimension(&self) -> &'static str {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSymbol { dimension: self.dimension, symbol: symbol.to_owned() })
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }
}

/// The declared alphabets of the three sensed context dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSpace {
    time_slots: Alphabet,
    social_groups: Alphabet,
    cognitive_tags: Alphabet,
}

impl ContextSpace {
    pub fn new(time_slots: Alphabet, social_groups: Alphabet, cognitive_tags: Alphabet) -> Self {
        Self { time_slots, social_groups, cognitive_tags }
    }

    /// Convenience constructor straight from symbol lists.
    pub fn from_symbols<S: AsRef<str>>(time_slots: &[S], social_groups: &[S], cognitive_tags: &[S]) -> Result<Self> {
        let list = |xs: &[S]| xs.iter().map(|s| s.as_ref().to_owned()).collect::<Vec<_>>();
        Ok(Self::new(
            Alphabet::new("time_slot", list(time_slots))?,
            Alphabet::new("social_group", list(social_groups))?,
            Alphabet::new("cognitive_tag", list(cognitive_tags))?,
        ))
    }

    pub fn time_slots(&self) -> &Alphabet {
        &self.time_slots
    }

    pub fn social_groups(&self) -> &Alphabet {
        &self.social_groups
    }

    pub fn cognitive_tags(&self) -> &Alphabet {
        &self.cognitive_tags
    }

    /// Builds a state from symbol names, rejecting anything outside the alphabets.
    pub fn state(&self, time_slot: &str, social_group: &str, cognitive_tag: &str) -> Result<ContextState> {
        Ok(ContextState {
            time_slot: self.time_slots.index_of(time_slot)? as u16,
            social_group: self.social_groups.index_of(social_group)? as u16,
            cognitive_tag: self.cognitive_tags.index_of(cognitive_tag)? as u16,
        })
    }

    pub fn state_at(&self, time_slot: usize, social_group: usize, cognitive_tag: usize) -> Result<ContextState> {
        let check = |alphabet: &Alphabet, i: usize| {
            if i < alphabet.len() {
                Ok(i as u16)
            } else {
                Err(Error::UnknownSymbol { dimension: alphabet.dimension(), symbol: format!("#{i}") })
            }
        };
        Ok(ContextState {
            time_slot: check(&self.time_slots, time_slot)?,
            social_group: check(&self.social_groups, social_group)?,
            cognitive_tag: check(&self.cognitive_tags, cognitive_tag)?,
        })
    }

    pub fn names(&self, s: ContextState) -> StateNames {
        StateNames {
            time_slot: self.time_slots.symbol(s.time_slot()).to_owned(),
            social_group: self.social_groups.symbol(s.social_group()).to_owned(),
            cognitive_tag: self.cognitive_tags.symbol(s.cognitive_tag()).to_owned(),
        }
    }

    /// Number of distinct states.
    pub fn cardinality(&self) -> usize {
        self.time_slots.len() * self.social_groups.len() * self.cognitive_tags.len()
    }
}

/// A state spelled out by symbol, as it appears in logs and snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateNames {
    pub time_slot: String,
    pub social_group: String,
    pub cognitive_tag: String,
}

impl StateNames {
    pub fn resolve(&self, space: &ContextSpace) -> Result<ContextState> {
        space.state(&self.time_slot, &self.social_group, &self.cognitive_tag)
    }
}

/// Position of an action in its [`ActionSet`]. Because the set is sorted by
/// `item_id`, ordering by index is ordering by item id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemIdx(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub item_id: String,
    pub label: String,
}

impl Action {
    pub fn new(item_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self { item_id: item_id.into(), label: label.into() }
    }
}

/// The finite action set `A` of one run, kept sorted by `item_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    actions: Vec<Action>,
    by_id: HashMap<String, ItemIdx>,
}

impl ActionSet {
    pub fn new(mut actions: Vec<Action>) -> Result<Self> {
        actions.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        if let Some(w) = actions.windows(2).find(|w| w[0].item_id == w[1].item_id) {
            return Err(Error::Duplicate { what: "item_id", id: w[0].item_id.clone() });
        }
        let by_id = actions.iter().enumerate().map(|(i, a)| (a.item_id.clone(), ItemIdx(i))).collect();
        Ok(Self { actions, by_id })
    }

    /// Actions labelled by their own id.
    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            ids.into_iter()
                .map(|id| {
                    let id = id.into();
                    Action::new(id.clone(), id)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, idx: ItemIdx) -> &Action {
        &self.actions[idx.0]
    }

    pub fn id(&self, idx: ItemIdx) -> &str {
        &self.actions[idx.0].item_id
    }

    pub fn index_of(&self, item_id: &str) -> Result<ItemIdx> {
        self.by_id.get(item_id).copied().ok_or_else(|| Error::UnknownItem(item_id.to_owned()))
    }

    pub fn indices(&self) -> impl ExactSizeIterator<Item = ItemIdx> + Clone {
        (0..self.actions.len()).map(ItemIdx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }
}

/// One `⟨user, item, rating⟩` record. Ratings are implicit: 1 for chosen, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
}

impl Transaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, rating: f64) -> Self {
        Self { user_id: user_id.into(), item_id: item_id.into(), rating }
    }

    pub fn chosen(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Self::new(user_id, item_id, 1.0)
    }
}

/// Dense implicit-rating row for one user over the full item set.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub social_group: String,
    pub ratings: Vec<f64>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, social_group: impl Into<String>, ratings: Vec<f64>) -> Self {
        Self { user_id: user_id.into(), social_group: social_group.into(), ratings }
    }

    /// A profile with no recorded transactions.
    pub fn empty(user_id: impl Into<String>, social_group: impl Into<String>, n_items: usize) -> Self {
        Self::new(user_id, social_group, vec![0.0; n_items])
    }

    pub fn rating(&self, item: ItemIdx) -> f64 {
        self.ratings[item.0]
    }

    pub fn is_all_zero(&self) -> bool {
        self.ratings.iter().all(|&r| r == 0.0)
    }
}

/// Folds a transaction log into `user_id`'s dense profile, last write wins.
///
/// Every transaction in the log is validated, not only the target user's.
pub fn build_profile(
    transactions: &[Transaction],
    user_id: &str,
    social_group: &str,
    items: &ActionSet,
) -> Result<UserProfile> {
    let mut ratings = vec![0.0; items.len()];
    for t in transactions {
        let idx = items.index_of(&t.item_id)?;
        if t.rating != 0.0 && t.rating != 1.0 {
            return Err(Error::invalid(
                "rating",
                format!("{} for ({}, {}) is not 0 or 1", t.rating, t.user_id, t.item_id),
            ));
        }
        if t.user_id == user_id {
            ratings[idx.0] = t.rating;
        }
    }
    Ok(UserProfile::new(user_id, social_group, ratings))
}

/// Writes one JSON object per line: `{"user_id":..,"item_id":..,"rating":..}`.
pub fn write_transaction_log<W: Write>(mut w: W, transactions: &[Transaction]) -> Result<()> {
    for t in transactions {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transaction_log<R: BufRead>(r: R) -> Result<Vec<Transaction>> {
    read_json_lines(r)
}

pub(crate) fn read_json_lines<R: BufRead, T: serde::de::DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Record { line: i + 1, source })?);
    }
    Ok(out)
}
