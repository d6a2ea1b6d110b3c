//! Tabular Q-learning: the table, the one-step Watkins update and greedy selection.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::context::{read_json_lines, ActionSet, ContextSpace, ContextState, ItemIdx};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlConfig {
    /// Step size, in `[0, 1]`; zero freezes the table.
    pub alpha: f64,
    /// Discount, in `[0, 1)`.
    pub gamma: f64,
    /// Value read for entries never written.
    pub initial_q: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self { alpha: 0.3, gamma: 0.5, initial_q: 0.0 }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", format!("{} not in [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{} not in [0, 1)", self.gamma)));
        }
        if !self.initial_q.is_finite() {
            return Err(Error::invalid("initial_q", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: BTreeMap<(ContextState, ItemIdx), f64>,
    config: RlConfig,
}

impl QTable {
    pub fn new(config: RlConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { values: BTreeMap::new(), config })
    }

    pub fn config(&self) -> RlConfig {
        self.config
    }

    /// Stored entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = (ContextState, ItemIdx, f64)> + '_ {
        self.values.iter().map(|(&(s, a), &v)| (s, a, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every entry reads as `initial_q`.
    pub fn is_pristine(&self) -> bool {
        self.values.values().all(|&v| v == self.config.initial_q)
    }

    pub fn q_value(&self, s: ContextState, a: ItemIdx) -> f64 {
        self.values.get(&(s, a)).copied().unwrap_or(self.config.initial_q)
    }

    pub fn set(&mut self, s: ContextState, a: ItemIdx, value: f64) {
        self.values.insert((s, a), value);
    }

    pub fn max_q(&self, s: ContextState, actions: &ActionSet) -> Result<f64> {
        if actions.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        Ok(actions.indices().map(|a| self.q_value(s, a)).fold(f64::NEG_INFINITY, f64::max))
    }

    /// `Q(s,a) += α (r + γ max_a' Q(s',a') − Q(s,a))`. Returns the new value.
    pub fn update(
        &mut self,
        s: ContextState,
        a: ItemIdx,
        reward: f64,
        s_next: ContextState,
        actions: &ActionSet,
    ) -> Result<f64> {
        if !reward.is_finite() {
            return Err(Error::invalid("reward", format!("{reward} is not finite")));
        }
        if actions.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        if a.0 >= actions.len() {
            return Err(Error::UnknownItem(format!("#{}", a.0)));
        }
        let target = reward + self.config.gamma * self.max_q(s_next, actions)?;
        let old = self.q_value(s, a);
        let new = old + self.config.alpha * (target - old);
        self.values.insert((s, a), new);
        Ok(new)
    }

    /// Argmax over `actions`, lowest item on ties.
    pub fn greedy_action(&self, s: ContextState, actions: &ActionSet) -> Result<ItemIdx> {
        let mut best: Option<(ItemIdx, f64)> = None;
        for a in actions.indices() {
            let q = self.q_value(s, a);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((a, q));
            }
        }
        best.map(|(a, _)| a).ok_or(Error::EmptyActionSet)
    }

    /// All actions by descending value, ties on ascending item.
    pub fn ranked(&self, s: ContextState, actions: &ActionSet) -> Vec<ItemIdx> {
        let mut v: Vec<(ItemIdx, f64)> = actions.indices().map(|a| (a, self.q_value(s, a))).collect();
        v.sort_by(|x, y| y.1.total_cmp(&x.1));
        v.into_iter().map(|(a, _)| a).collect()
    }

    /// One JSON line per stored entry, in key order.
    pub fn save<W: Write>(&self, mut w: W, space: &ContextSpace, actions: &ActionSet) -> Result<()> {
        for (&(s, a), &value) in &self.values {
            let names = space.names(s);
            let rec = QRecord {
                time_slot: names.time_slot,
                social_group: names.social_group,
                cognitive_tag: names.cognitive_tag,
                item_id: actions.id(a).to_owned(),
                value,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R, space: &ContextSpace, actions: &ActionSet, config: RlConfig) -> Result<Self> {
        let mut table = Self::new(config)?;
        for rec in read_json_lines::<_, QRecord>(r)? {
            let s = space.state(&rec.time_slot, &rec.social_group, &rec.cognitive_tag)?;
            let a = actions.index_of(&rec.item_id)?;
            if !rec.value.is_finite() {
                return Err(Error::invalid("q value", format!("{} is not finite", rec.value)));
            }
            table.values.insert((s, a), rec.value);
        }
        Ok(table)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QRecord {
    time_slot: String,
    social_group: String,
    cognitive_tag: String,
    item_id: String,
    value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ContextSpace, ActionSet, ContextState, ContextState) {
        let space = ContextSpace::from_symbols(&["am", "pm"], &["g"], &["work"]).unwrap();
        let actions = ActionSet::from_ids(["a1", "a2", "a3"]).unwrap();
        let s1 = space.state("am", "g", "work").unwrap();
        let s2 = space.state("pm", "g", "work").unwrap();
        (space, actions, s1, s2)
    }

    fn watkins(q: f64, r: f64, max_next: f64, alpha: f64, gamma: f64) -> f64 {
        q + alpha * (r + gamma * max_next - q)
    }

    #[test]
    fn fresh_table_reads_initial() {
        let (_, _, s1, _) = setup();
        let t = QTable::new(RlConfig::default()).unwrap();
        assert_eq!(t.q_value(s1, ItemIdx(0)), 0.0);
    }

    #[test]
    fn read_back_and_untouched_key() {
        let (_, _, s1, _) = setup();
        let mut t = QTable::new(RlConfig::default()).unwrap();
        t.set(s1, ItemIdx(0), 0.5);
        assert_eq!(t.q_value(s1, ItemIdx(0)), 0.5);
        assert_eq!(t.q_value(s1, ItemIdx(1)), 0.0);
    }

    #[test]
    fn zero_reward_fixed_point() {
        let (_, actions, s1, s2) = setup();
        let mut t = QTable::new(RlConfig::default()).unwrap();
        t.update(s1, ItemIdx(0), 0.0, s2, &actions).unwrap();
        assert_eq!(t.q_value(s1, ItemIdx(0)), 0.0);
        assert!(t.is_pristine());
    }

    #[test]
    fn update_examples() {
        let (_, actions, s1, s2) = setup();
        let cfg = RlConfig { alpha: 0.5, gamma: 0.9, initial_q: 0.0 };
        let mut t = QTable::new(cfg).unwrap();
        let v = t.update(s1, ItemIdx(0), 1.0, s2, &actions).unwrap();
        assert_eq!(v, watkins(0.0, 1.0, 0.0, 0.5, 0.9));
        assert_eq!(v, 0.5);

        t.set(s2, ItemIdx(2), 0.5);
        let v = t.update(s1, ItemIdx(0), 1.0, s2, &actions).unwrap();
        assert_eq!(v, watkins(0.5, 1.0, 0.5, 0.5, 0.9));
        assert!((v - 0.975).abs() < 1e-12);
    }

    #[test]
    fn update_rejects_empty_actions_and_bad_reward() {
        let (_, actions, s1, s2) = setup();
        let mut t = QTable::new(RlConfig::default()).unwrap();
        let empty = ActionSet::from_ids(Vec::<String>::new()).unwrap();
        assert!(matches!(t.update(s1, ItemIdx(0), 1.0, s2, &empty), Err(Error::EmptyActionSet)));
        assert!(t.update(s1, ItemIdx(0), f64::NAN, s2, &actions).is_err());
        assert!(t.greedy_action(s1, &empty).is_err());
    }

    #[test]
    fn greedy_examples() {
        let (_, actions, s1, _) = setup();
        let mut t = QTable::new(RlConfig::default()).unwrap();
        assert_eq!(t.greedy_action(s1, &actions).unwrap(), ItemIdx(0));
        t.set(s1, ItemIdx(0), 0.1);
        t.set(s1, ItemIdx(1), 0.7);
        t.set(s1, ItemIdx(2), 0.3);
        assert_eq!(t.greedy_action(s1, &actions).unwrap(), ItemIdx(1));
        assert_eq!(t.ranked(s1, &actions), vec![ItemIdx(1), ItemIdx(2), ItemIdx(0)]);
        for a in actions.indices() {
            t.set(s1, a, 0.4);
        }
        assert_eq!(t.greedy_action(s1, &actions).unwrap(), ItemIdx(0));
    }

    #[test]
    fn config_validation() {
        assert!(QTable::new(RlConfig { alpha: -0.1, ..RlConfig::default() }).is_err());
        assert!(QTable::new(RlConfig { alpha: 1.5, ..RlConfig::default() }).is_err());
        assert!(QTable::new(RlConfig { alpha: f64::NAN, ..RlConfig::default() }).is_err());
        assert!(QTable::new(RlConfig { gamma: 1.0, ..RlConfig::default() }).is_err());
        assert!(QTable::new(RlConfig { alpha: 1.0, gamma: 0.0, initial_q: 0.0 }).is_ok());
    }

    #[test]
    fn snapshot_reloads_identically() {
        let (space, actions, s1, s2) = setup();
        let mut t = QTable::new(RlConfig::default()).unwrap();
        t.set(s1, ItemIdx(2), 1.0 / 3.0);
        t.set(s2, ItemIdx(0), 0.1 + 0.2);
        let mut buf = Vec::new();
        t.save(&mut buf, &space, &actions).unwrap();
        let back = QTable::load(buf.as_slice(), &space, &actions, RlConfig::default()).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.save(&mut again, &space, &actions).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn snapshot_rejects_unknown_symbols() {
        let (space, actions, _, _) = setup();
        let line = r#"{"time_slot":"night","social_group":"g","cognitive_tag":"work","item_id":"a1","value":1.0}"#;
        let err = QTable::load(line.as_bytes(), &space, &actions, RlConfig::default()).unwrap_err();
        assert!(err.to_string().contains("night"));
    }
}
