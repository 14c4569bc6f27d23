use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::ImageId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Strong,
    Weak,
    Unlabeled,
}

impl PoolKind {
    fn rank(self) -> u8 {
        match self {
            PoolKind::Unlabeled => 0,
            PoolKind::Weak => 1,
            PoolKind::Strong => 2,
        }
    }
}

/// Disjoint partition of the train split into strongly labeled (L), weakly
/// labeled (W) and unlabeled (U) images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    strong: BTreeSet<ImageId>,
    weak: BTreeSet<ImageId>,
    unlabeled: BTreeSet<ImageId>,
}

impl Pools {
    pub fn new(all: &BTreeSet<ImageId>, initial_strong: &BTreeSet<ImageId>) -> Result<Self> {
        if let Some(stray) = initial_strong.difference(all).next() {
            return Err(Error::PoolInvariant(format!("initial image {stray} not in train split")));
        }
        Ok(Self {
            strong: initial_strong.clone(),
            weak: BTreeSet::new(),
            unlabeled: all.difference(initial_strong).cloned().collect(),
        })
    }

    pub fn strong(&self) -> &BTreeSet<ImageId> {
        &self.strong
    }

    pub fn weak(&self) -> &BTreeSet<ImageId> {
        &self.weak
    }

    pub fn unlabeled(&self) -> &BTreeSet<ImageId> {
        &self.unlabeled
    }

    pub fn kind_of(&self, id: &ImageId) -> Option<PoolKind> {
        if self.strong.contains(id) {
            Some(PoolKind::Strong)
        } else if self.weak.contains(id) {
            Some(PoolKind::Weak)
        } else if self.unlabeled.contains(id) {
            Some(PoolKind::Unlabeled)
        } else {
            None
        }
    }

    /// Active-learning candidates `U ∪ W`, sorted by id.
    pub fn candidates(&self) -> Vec<ImageId> {
        self.unlabeled.union(&self.weak).cloned().collect()
    }

    /// Moves `id` to `to`. Supervision never weakens: only U→W, U→L and W→L
    /// are allowed (staying put is a no-op).
    pub fn promote(&mut self, id: &ImageId, to: PoolKind) -> Result<()> {
        let from = self
            .kind_of(id)
            .ok_or_else(|| Error::PoolInvariant(format!("image {id} is not in any pool")))?;
        if from == to {
            return Ok(());
        }
        if to.rank() < from.rank() {
            return Err(Error::PoolInvariant(format!(
                "image {id}: {from:?} -> {to:?} would weaken supervision"
            )));
        }
        self.set_mut(from).remove(id);
        self.set_mut(to).insert(id.clone());
        Ok(())
    }

    fn set_mut(&mut self, kind: PoolKind) -> &mut BTreeSet<ImageId> {
        match kind {
            PoolKind::Strong => &mut self.strong,
            PoolKind::Weak => &mut self.weak,
            PoolKind::Unlabeled => &mut self.unlabeled,
        }
    }

    pub fn check_partition(&self, all: &BTreeSet<ImageId>) -> Result<()> {
        let sets = [&self.strong, &self.weak, &self.unlabeled];
        let total: usize = sets.iter().map(|s| s.len()).sum();
        let union: BTreeSet<&ImageId> = sets.iter().flat_map(|s| s.iter()).collect();
        if union.len() != total {
            return Err(Error::PoolInvariant("pools overlap".into()));
        }
        if union.len() != all.len() || !all.iter().all(|id| union.contains(id)) {
            return Err(Error::PoolInvariant("pools do not cover the train split".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> BTreeSet<ImageId> {
        v.iter().map(|s| ImageId::new(*s)).collect()
    }

    #[test]
    fn transitions() {
        let all = ids(&["a", "b", "c", "d"]);
        let mut p = Pools::new(&all, &ids(&["a"])).unwrap();
        assert_eq!(p.candidates(), ids(&["b", "c", "d"]).into_iter().collect::<Vec<_>>());
        p.promote(&"b".into(), PoolKind::Weak).unwrap();
        p.promote(&"b".into(), PoolKind::Weak).unwrap();
        p.promote(&"b".into(), PoolKind::Strong).unwrap();
        p.promote(&"c".into(), PoolKind::Strong).unwrap();
        p.check_partition(&all).unwrap();
        assert!(p.promote(&"b".into(), PoolKind::Weak).is_err());
        assert!(p.promote(&"a".into(), PoolKind::Unlabeled).is_err());
        p.promote(&"d".into(), PoolKind::Weak).unwrap();
        assert!(p.promote(&"d".into(), PoolKind::Unlabeled).is_err());
        assert!(p.promote(&"zz".into(), PoolKind::Weak).is_err());
        p.check_partition(&all).unwrap();
        assert_eq!(p.strong().len(), 3);
    }

    #[test]
    fn partition_check_detects_missing() {
        let all = ids(&["a", "b"]);
        let p = Pools::new(&ids(&["a"]), &ids(&[])).unwrap();
        assert!(p.check_partition(&all).is_err());
    }
}
