//! Scenario documents: schema, loading and validation.
//!
//! A scenario is a TOML document. Top-level keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `name` | scenario label |
//! | `item_set` | `[{ item_id, label }]`, the recommendable resources |
//! | `alphabets` | `{ time_slot = [..], cognitive_tag = [..] }` |
//! | `groups` | `[{ group_id, members = [..] }]`; group ids form the social alphabet |
//! | `target_user` | `{ user_id, group_id }`, the newcomer being served |
//! | `preference_model` | `[[preference_model]]` blocks, see below |
//! | `group_coherence_rho` | weight of the group mean in the target's true preferences |
//! | `event_sequence` | `[{ time_slot, cognitive_tag }]`, one entry consumed per trial |
//! | `trials` | trial count, at most `event_sequence` length |
//! | `n_recommend` | list length per trial |
//! | `seeds` | default seed list for sweeps |
//! | `history_trials_per_colleague` | sampled history length per colleague |
//!
//! Optional: `history_contexts` (situations colleagues were observed in;
//! defaults to the distinct situations of `event_sequence`),
//! `position_discount` (default 0.8), and `[rl]`, `[policy]`, `[cf]` tables
//! overriding the learner settings.
//!
//! Each `[[preference_model]]` block names `users`, an optional `baseline`
//! acceptance written to every cell, and `rules` of the form
//! `{ item, time_slot?, cognitive_tag?, p }`; an omitted dimension matches every
//! symbol. Blocks and rules apply in document order, later writes win. Every
//! colleague must be covered; the target must not be, since its preferences
//! are derived from the group.

use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use crate::cf::CfConfig;
use crate::context::{Action, ActionSet, Alphabet, ContextSpace, ContextState, ItemIdx};
use crate::rl::RlConfig;
use crate::{Error, Result};

pub const DEFAULT_POSITION_DISCOUNT: f64 = 0.8;
pub const DEFAULT_EPSILON_START: f64 = 0.5;
pub const DEFAULT_EPSILON_END: f64 = 0.05;

/// Acceptance probabilities `P(item | time slot, cognitive tag)` for one user.
///
/// The social dimension is fixed per user, so it does not index the table.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptTable {
    n_time: usize,
    n_cog: usize,
    n_items: usize,
    p: Vec<f64>,
}

impl AcceptTable {
    pub fn filled(n_time: usize, n_cog: usize, n_items: usize, value: f64) -> Self {
        Self { n_time, n_cog, n_items, p: vec![value; n_time * n_cog * n_items] }
    }

    fn offset(&self, time: usize, cog: usize) -> usize {
        (time * self.n_cog + cog) * self.n_items
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, s: ContextState, item: ItemIdx) -> f64 {
        self.row(s)[item.0]
    }

    pub fn row(&self, s: ContextState) -> &[f64] {
        self.row_at(s.time_slot(), s.cognitive_tag())
    }

    pub fn row_at(&self, time: usize, cog: usize) -> &[f64] {
        let o = self.offset(time, cog);
        &self.p[o..o + self.n_items]
    }

    pub fn row_at_mut(&mut self, time: usize, cog: usize) -> &mut [f64] {
        let o = self.offset(time, cog);
        &mut self.p[o..o + self.n_items]
    }

    pub fn set(&mut self, time: usize, cog: usize, item: ItemIdx, p: f64) {
        self.row_at_mut(time, cog)[item.0] = p;
    }

    pub fn situations(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_time).flat_map(move |t| (0..self.n_cog).map(move |c| (t, c)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub group_id: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetUser {
    pub user_id: String,
    pub group_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySettings {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Linear decay horizon; `None` means "the run's trial count".
    pub decay_trials: Option<usize>,
}

/// A validated scenario. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub actions: ActionSet,
    pub space: ContextSpace,
    pub groups: Vec<Group>,
    pub target: TargetUser,
    /// Colleague id → acceptance table, sorted by id.
    pub preference_model: Vec<(String, AcceptTable)>,
    pub group_coherence_rho: f64,
    pub event_sequence: Vec<ContextState>,
    pub trials: usize,
    pub n_recommend: usize,
    pub seeds: Vec<u64>,
    pub history_trials_per_colleague: usize,
    /// Situations colleague histories are sampled from. Stored with the
    /// target's social group; only time slot and cognitive tag matter.
    pub history_contexts: Vec<ContextState>,
    pub position_discount: f64,
    pub rl: RlConfig,
    pub policy: PolicySettings,
    pub cf: CfConfig,
}

impl Scenario {
    /// Every user in `groups` other than the target, in id order, with their group.
    pub fn colleagues(&self) -> Vec<(&str, &str)> {
        let mut out: Vec<(&str, &str)> = self
            .groups
            .iter()
            .flat_map(|g| g.members.iter().map(move |m| (m.as_str(), g.group_id.as_str())))
            .filter(|(m, _)| *m != self.target.user_id)
            .collect();
        out.sort();
        out
    }

    pub fn accept_table(&self, user_id: &str) -> Option<&AcceptTable> {
        self.preference_model.iter().find(|(u, _)| u == user_id).map(|(_, t)| t)
    }

    /// Members of the target's group other than the target.
    pub fn target_group_colleagues(&self) -> Vec<&str> {
        self.colleagues().into_iter().filter(|(_, g)| *g == self.target.group_id).map(|(u, _)| u).collect()
    }

    pub fn empty_accept_table(&self) -> AcceptTable {
        AcceptTable::filled(self.space.time_slots().len(), self.space.cognitive_tags().len(), self.actions.len(), 0.0)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_owned(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ScenarioDoc =
            toml::from_str(text).map_err(|e| Error::Scenario(e.to_string().trim_end().to_owned()))?;
        Loader { text }.build(doc)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    name: String,
    item_set: Vec<ItemDoc>,
    alphabets: AlphabetsDoc,
    groups: Vec<GroupDoc>,
    target_user: TargetDoc,
    preference_model: Vec<PreferenceBlock>,
    group_coherence_rho: Spanned<f64>,
    event_sequence: Vec<SituationDoc>,
    trials: Spanned<usize>,
    n_recommend: Spanned<usize>,
    seeds: Vec<u64>,
    history_trials_per_colleague: usize,
    #[serde(default)]
    history_contexts: Option<Vec<SituationDoc>>,
    #[serde(default)]
    position_discount: Option<Spanned<f64>>,
    #[serde(default)]
    rl: Option<RlDoc>,
    #[serde(default)]
    policy: Option<PolicyDoc>,
    #[serde(default)]
    cf: Option<CfDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemDoc {
    item_id: Spanned<String>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphabetsDoc {
    time_slot: Vec<String>,
    cognitive_tag: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupDoc {
    group_id: Spanned<String>,
    members: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetDoc {
    user_id: String,
    group_id: Spanned<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreferenceBlock {
    users: Vec<Spanned<String>>,
    #[serde(default)]
    baseline: Option<Spanned<f64>>,
    #[serde(default)]
    rules: Vec<RuleDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDoc {
    item: Spanned<String>,
    #[serde(default)]
    time_slot: Option<Spanned<String>>,
    #[serde(default)]
    cognitive_tag: Option<Spanned<String>>,
    p: Spanned<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SituationDoc {
    time_slot: Spanned<String>,
    cognitive_tag: Spanned<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RlDoc {
    alpha: Option<f64>,
    gamma: Option<f64>,
    initial_q: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    decay_trials: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CfDoc {
    neighborhood_size: Option<usize>,
    group_restriction: Option<bool>,
}

struct Loader<'a> {
    text: &'a str,
}

impl Loader<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err<T>(&self, field: &str, span: Range<usize>, msg: impl std::fmt::Display) -> Result<T> {
        Err(Error::Scenario(format!("line {}: `{field}`: {msg}", self.line(span))))
    }

    fn symbol(&self, field: &str, alphabet: &Alphabet, s: &Spanned<String>) -> Result<usize> {
        alphabet.index_of(s.get_ref()).or_else(|_| {
            self.err(field, s.span(), format!("`{}` is not in the {} alphabet", s.get_ref(), alphabet.dimension()))
        })
    }

    fn probability(&self, field: &str, p: &Spanned<f64>) -> Result<f64> {
        let v = *p.get_ref();
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            self.err(field, p.span(), format!("{v} is outside [0, 1]"))
        }
    }

    fn build(&self, doc: ScenarioDoc) -> Result<Scenario> {
        let scenario_err = |msg: String| Error::Scenario(msg);

        if doc.item_set.is_empty() {
            return Err(scenario_err("`item_set` is empty".into()));
        }
        let mut actions = Vec::with_capacity(doc.item_set.len());
        for it in &doc.item_set {
            let id = it.item_id.get_ref();
            if actions.iter().any(|a: &Action| &a.item_id == id) {
                return self.err("item_set", it.item_id.span(), format!("duplicate item_id `{id}`"));
            }
            actions.push(Action::new(id.clone(), it.label.clone().unwrap_or_else(|| id.clone())));
        }
        let actions = ActionSet::new(actions)?;

        // groups and membership
        let mut groups: Vec<Group> = Vec::new();
        for g in &doc.groups {
            let gid = g.group_id.get_ref();
            if groups.iter().any(|x| &x.group_id == gid) {
                return self.err("groups", g.group_id.span(), format!("duplicate group_id `{gid}`"));
            }
            let mut members = Vec::new();
            for m in &g.members {
                let id = m.get_ref();
                if members.contains(id) || groups.iter().any(|x| x.members.contains(id)) {
                    return self.err("groups.members", m.span(), format!("user `{id}` listed twice"));
                }
                members.push(id.clone());
            }
            groups.push(Group { group_id: gid.clone(), members });
        }
        if groups.is_empty() {
            return Err(scenario_err("`groups` is empty".into()));
        }
        let social = Alphabet::new("social_group", groups.iter().map(|g| g.group_id.clone()))?;
        let space = ContextSpace::new(
            Alphabet::new("time_slot", doc.alphabets.time_slot.clone())
                .map_err(|e| scenario_err(format!("`alphabets.time_slot`: {e}")))?,
            social,
            Alphabet::new("cognitive_tag", doc.alphabets.cognitive_tag.clone())
                .map_err(|e| scenario_err(format!("`alphabets.cognitive_tag`: {e}")))?,
        );

        let target_group = self.symbol("target_user.group_id", space.social_groups(), &doc.target_user.group_id)?;
        let target = TargetUser {
            user_id: doc.target_user.user_id.clone(),
            group_id: doc.target_user.group_id.get_ref().clone(),
        };
        if let Some(g) = groups.iter().find(|g| g.members.contains(&target.user_id) && g.group_id != target.group_id) {
            return Err(scenario_err(format!(
                "target `{}` is listed in group `{}` but targets group `{}`",
                target.user_id, g.group_id, target.group_id
            )));
        }

        let situation = |field: &str, s: &SituationDoc| -> Result<ContextState> {
            let t = self.symbol(field, space.time_slots(), &s.time_slot)?;
            let c = self.symbol(field, space.cognitive_tags(), &s.cognitive_tag)?;
            space.state_at(t, target_group, c)
        };
        let event_sequence =
            doc.event_sequence.iter().map(|s| situation("event_sequence", s)).collect::<Result<Vec<_>>>()?;

        let trials = *doc.trials.get_ref();
        if trials == 0 {
            return self.err("trials", doc.trials.span(), "must be positive");
        }
        if trials > event_sequence.len() {
            return self.err(
                "trials",
                doc.trials.span(),
                format!("{trials} trials but event_sequence has only {} events", event_sequence.len()),
            );
        }
        let n_recommend = *doc.n_recommend.get_ref();
        if n_recommend == 0 || n_recommend > actions.len() {
            return self.err("n_recommend", doc.n_recommend.span(), format!("must be in 1..={}", actions.len()));
        }
        if doc.seeds.is_empty() {
            return Err(scenario_err("`seeds` is empty".into()));
        }
        let rho = self.probability("group_coherence_rho", &doc.group_coherence_rho)?;
        let position_discount = match &doc.position_discount {
            Some(p) => self.probability("position_discount", p)?,
            None => DEFAULT_POSITION_DISCOUNT,
        };

        let history_contexts = match &doc.history_contexts {
            Some(list) => list.iter().map(|s| situation("history_contexts", s)).collect::<Result<Vec<_>>>()?,
            None => {
                let mut seen = Vec::new();
                for s in &event_sequence {
                    if !seen.contains(s) {
                        seen.push(*s);
                    }
                }
                seen
            }
        };
        if history_contexts.is_empty() && doc.history_trials_per_colleague > 0 {
            return Err(scenario_err("`history_contexts` is empty but history is requested".into()));
        }

        // preference tables
        let colleagues: Vec<String> = {
            let mut v: Vec<String> =
                groups.iter().flat_map(|g| g.members.iter()).filter(|m| **m != target.user_id).cloned().collect();
            v.sort();
            v
        };
        let blank = AcceptTable::filled(space.time_slots().len(), space.cognitive_tags().len(), actions.len(), 0.0);
        let mut tables: Vec<(String, AcceptTable, bool)> =
            colleagues.iter().map(|c| (c.clone(), blank.clone(), false)).collect();
        for block in &doc.preference_model {
            let mut idx = Vec::new();
            for u in &block.users {
                if u.get_ref() == &target.user_id {
                    return self.err(
                        "preference_model.users",
                        u.span(),
                        "the target's preferences are derived from its group and cannot be declared",
                    );
                }
                match tables.iter().position(|(c, _, _)| c == u.get_ref()) {
                    Some(i) => idx.push(i),
                    None => {
                        return self.err(
                            "preference_model.users",
                            u.span(),
                            format!("`{}` is not a group member", u.get_ref()),
                        )
                    }
                }
            }
            let baseline =
                block.baseline.as_ref().map(|b| self.probability("preference_model.baseline", b)).transpose()?;
            let mut writes = Vec::new();
            for r in &block.rules {
                let item = actions.index_of(r.item.get_ref()).or_else(|_| {
                    self.err(
                        "preference_model.rules.item",
                        r.item.span(),
                        format!("unknown item `{}`", r.item.get_ref()),
                    )
                })?;
                let times = match &r.time_slot {
                    Some(t) => vec![self.symbol("preference_model.rules.time_slot", space.time_slots(), t)?],
                    None => (0..space.time_slots().len()).collect(),
                };
                let cogs = match &r.cognitive_tag {
                    Some(c) => vec![self.symbol("preference_model.rules.cognitive_tag", space.cognitive_tags(), c)?],
                    None => (0..space.cognitive_tags().len()).collect(),
                };
                let p = self.probability("preference_model.rules.p", &r.p)?;
                writes.push((item, times, cogs, p));
            }
            for i in idx {
                let (_, table, covered) = &mut tables[i];
                *covered = true;
                if let Some(b) = baseline {
                    table.p.iter_mut().for_each(|x| *x = b);
                }
                for (item, times, cogs, p) in &writes {
                    for &t in times {
                        for &c in cogs {
                            table.set(t, c, *item, *p);
                        }
                    }
                }
            }
        }
        if let Some((c, _, _)) = tables.iter().find(|(_, _, covered)| !covered) {
            return Err(scenario_err(format!("`preference_model` does not cover colleague `{c}`")));
        }
        let preference_model = tables.into_iter().map(|(c, t, _)| (c, t)).collect();

        let defaults = RlConfig::default();
        let rl = match &doc.rl {
            Some(r) => RlConfig {
                alpha: r.alpha.unwrap_or(defaults.alpha),
                gamma: r.gamma.unwrap_or(defaults.gamma),
                initial_q: r.initial_q.unwrap_or(defaults.initial_q),
            },
            None => defaults,
        };
        rl.validate().map_err(|e| scenario_err(format!("`rl`: {e}")))?;

        let policy = PolicySettings {
            epsilon_start: doc.policy.as_ref().and_then(|p| p.epsilon_start).unwrap_or(DEFAULT_EPSILON_START),
            epsilon_end: doc.policy.as_ref().and_then(|p| p.epsilon_end).unwrap_or(DEFAULT_EPSILON_END),
            decay_trials: doc.policy.as_ref().and_then(|p| p.decay_trials),
        };
        crate::policy::PolicyConfig::new(
            policy.epsilon_start,
            policy.epsilon_end,
            policy.decay_trials.unwrap_or(trials),
            crate::policy::Algorithm::Ql,
        )
        .map_err(|e| scenario_err(format!("`policy`: {e}")))?;

        let cf_defaults = CfConfig::default();
        let cf = CfConfig {
            neighborhood_size: doc
                .cf
                .as_ref()
                .and_then(|c| c.neighborhood_size)
                .unwrap_or(cf_defaults.neighborhood_size),
            group_restriction: doc
                .cf
                .as_ref()
                .and_then(|c| c.group_restriction)
                .unwrap_or(cf_defaults.group_restriction),
        };
        if cf.neighborhood_size == 0 {
            return Err(scenario_err("`cf.neighborhood_size` must be at least 1".into()));
        }

        Ok(Scenario {
            name: doc.name,
            actions,
            space,
            groups,
            target,
            preference_model,
            group_coherence_rho: rho,
            event_sequence,
            trials,
            n_recommend,
            seeds: doc.seeds,
            history_trials_per_colleague: doc.history_trials_per_colleague,
            history_contexts,
            position_discount,
            rl,
            policy,
            cf,
        })
    }
}
