use std::collections::BTreeMap;

use super::{GridMeta, Voxel, HEADING_COUNT};
use crate::error::{Error, Result};

pub const ACTION_COUNT: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TravKey {
    pub voxel: Voxel,
    pub heading_idx: u8,
    pub action_idx: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialCount {
    pub n_suc: u8,
    pub n_total: u8,
}

impl TrialCount {
    pub fn score(self) -> f64 {
        self.n_suc as f64 / self.n_total as f64
    }
}

/// Sparse traversability tensor: success counts per
/// `(voxel, heading, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TravTensor {
    pub meta: GridMeta,
    entries: BTreeMap<TravKey, TrialCount>,
}

impl TravTensor {
    pub fn new(meta: GridMeta) -> Self {
        Self {
            meta,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: TravKey, count: TrialCount) -> Result<()> {
        if !self.meta.contains(key.voxel) {
            return Err(Error::usage(format!(
                "trav voxel {:?} outside grid",
                key.voxel.as_array()
            )));
        }
        if key.heading_idx >= HEADING_COUNT || key.action_idx >= ACTION_COUNT {
            return Err(Error::usage(format!(
                "heading {} / action {} out of range",
                key.heading_idx, key.action_idx
            )));
        }
        if count.n_total == 0 || count.n_suc > count.n_total {
            return Err(Error::usage(format!(
                "invalid trial count {}/{}",
                count.n_suc, count.n_total
            )));
        }
        if self.entries.insert(key, count).is_some() {
            return Err(Error::usage(format!("duplicate trav key {key:?}")));
        }
        Ok(())
    }

    pub fn get(&self, key: &TravKey) -> Option<TrialCount> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in lexicographic key order.
    pub fn iter(&self) -> impl Iterator<Item = (&TravKey, &TrialCount)> {
        self.entries.iter()
    }

    /// Groups entries by voxel: `voxel -> [(heading, action, score)]`.
    pub fn by_voxel(&self) -> BTreeMap<Voxel, Vec<(u8, u8, f64)>> {
        let mut out: BTreeMap<Voxel, Vec<(u8, u8, f64)>> = BTreeMap::new();
        for (k, c) in &self.entries {
            out.entry(k.voxel)
                .or_default()
                .push((k.heading_idx, k.action_idx, c.score()));
        }
        out
    }

    /// Distinct `(voxel, heading)` start configurations, sorted.
    pub fn start_keys(&self) -> Vec<(Voxel, u8)> {
        let mut v: Vec<(Voxel, u8)> = self
            .entries
            .keys()
            .map(|k| (k.voxel, k.heading_idx))
            .collect();
        v.dedup();
        v
    }
}
