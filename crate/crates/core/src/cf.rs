//! Memory-based user-user collaborative filtering over implicit profiles.
//!
//! Neighbours are ranked by cosine similarity. Predictions are the
//! similarity-weighted mean of neighbour ratings; when every neighbour has
//! zero similarity (a cold-start target with an empty profile) the prediction
//! falls back to the plain mean over the neighbourhood, i.e. the popularity of
//! the item inside the target's social group.

use std::collections::{BTreeMap, BTreeSet};

use crate::context::{ItemIdx, UserProfile};
use crate::{Error, Result};

/// Cosine similarity of two rating vectors; 0 when either is all-zero.
pub fn cosine(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    let (mut dot, mut pp, mut qq) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        dot += a * b;
        pp += a * a;
        qq += b * b;
    }
    if pp == 0.0 || qq == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (pp * qq).sqrt()).clamp(0.0, 1.0))
}

pub fn similarity(p: &UserProfile, q: &UserProfile) -> Result<f64> {
    cosine(&p.ratings, &q.ratings)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfConfig {
    pub neighborhood_size: usize,
    pub group_restriction: bool,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self { neighborhood_size: 10, group_restriction: true }
    }
}

/// The stored transaction set in dense form plus the neighbourhood settings.
#[derive(Debug, Clone)]
pub struct CfModel {
    profiles: BTreeMap<String, UserProfile>,
    n_items: usize,
    config: CfConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub user_id: String,
    pub similarity: f64,
}

/// How a prediction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evidence {
    /// Similarity-weighted mean over neighbours.
    Weighted,
    /// All neighbour similarities were zero: unweighted neighbourhood mean.
    GroupMean,
    /// No neighbours at all. The value is 0 and carries no information.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub rating: f64,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recommendation {
    pub item: ItemIdx,
    pub predicted: f64,
    pub evidence: Evidence,
}

/// Top-N list, descending by prediction with ties on ascending item.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecommendationList {
    pub items: Vec<Recommendation>,
}

impl RecommendationList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> Vec<ItemIdx> {
        self.items.iter().map(|r| r.item).collect()
    }

    /// True when nothing in the list is backed by any neighbour.
    pub fn has_no_evidence(&self) -> bool {
        self.items.iter().all(|r| r.evidence == Evidence::None)
    }
}

impl CfModel {
    pub fn new(profiles: Vec<UserProfile>, n_items: usize, config: CfConfig) -> Result<Self> {
        if config.neighborhood_size == 0 {
            return Err(Error::invalid("neighborhood size", "must be at least 1"));
        }
        let mut map = BTreeMap::new();
        for p in profiles {
            if p.ratings.len() != n_items {
                return Err(Error::LengthMismatch { left: p.ratings.len(), right: n_items });
            }
            if map.contains_key(&p.user_id) {
                return Err(Error::Duplicate { what: "user_id", id: p.user_id });
            }
            map.insert(p.user_id.clone(), p);
        }
        Ok(Self { profiles: map, n_items, config })
    }

    /// A model without any stored users.
    pub fn empty(n_items: usize, config: CfConfig) -> Result<Self> {
        Self::new(Vec::new(), n_items, config)
    }

    pub fn config(&self) -> CfConfig {
        self.config
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profile(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles.get(user_id)
    }

    /// The `k` most similar stored users, excluding the target itself.
    ///
    /// Zero-similarity users stay eligible so an empty target profile still
    /// gets its group as neighbourhood.
    pub fn find_neighbors(&self, target: &UserProfile) -> Result<Vec<Neighbor>> {
        self.check_target(target)?;
        let mut pool = Vec::new();
        for p in self.profiles.values() {
            if p.user_id == target.user_id {
                continue;
            }
            if self.config.group_restriction && p.social_group != target.social_group {
                continue;
            }
            pool.push(Neighbor { user_id: p.user_id.clone(), similarity: similarity(target, p)? });
        }
        // BTreeMap iteration already yields ascending user_id; a stable sort keeps it for ties.
        pool.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        pool.truncate(self.config.neighborhood_size);
        Ok(pool)
    }

    pub fn predict(&self, target: &UserProfile, item: ItemIdx) -> Result<Prediction> {
        if item.0 >= self.n_items {
            return Err(Error::UnknownItem(format!("#{}", item.0)));
        }
        let neighbors = self.find_neighbors(target)?;
        Ok(self.combine(&neighbors, item))
    }

    /// Scores every item not in `exclude` and keeps the best `n`.
    pub fn top_n(&self, target: &UserProfile, n: usize, exclude: &BTreeSet<ItemIdx>) -> Result<RecommendationList> {
        if n == 0 {
            return Err(Error::invalid("n", "top-N needs n >= 1"));
        }
        let neighbors = self.find_neighbors(target)?;
        let mut scored: Vec<Recommendation> = (0..self.n_items)
            .map(ItemIdx)
            .filter(|i| !exclude.contains(i))
            .map(|item| {
                let p = self.combine(&neighbors, item);
                Recommendation { item, predicted: p.rating, evidence: p.evidence }
            })
            .collect();
        // items enter in ascending order, so a stable descending sort resolves ties by item
        scored.sort_by(|a, b| b.predicted.total_cmp(&a.predicted));
        scored.truncate(n);
        Ok(RecommendationList { items: scored })
    }

    fn combine(&self, neighbors: &[Neighbor], item: ItemIdx) -> Prediction {
        if neighbors.is_empty() {
            return Prediction { rating: 0.0, evidence: Evidence::None };
        }
        let rating_of = |n: &Neighbor| self.profiles[&n.user_id].rating(item);
        let weight: f64 = neighbors.iter().map(|n| n.similarity).sum();
        if weight > 0.0 {
            let acc: f64 = neighbors.iter().map(|n| n.similarity * rating_of(n)).sum();
            Prediction { rating: (acc / weight).clamp(0.0, 1.0), evidence: Evidence::Weighted }
        } else {
            let acc: f64 = neighbors.iter().map(rating_of).sum();
            Prediction { rating: acc / neighbors.len() as f64, evidence: Evidence::GroupMean }
        }
    }

    fn check_target(&self, target: &UserProfile) -> Result<()> {
        if target.ratings.len() != self.n_items {
            return Err(Error::LengthMismatch { left: target.ratings.len(), right: self.n_items });
        }
        Ok(())
    }
}
