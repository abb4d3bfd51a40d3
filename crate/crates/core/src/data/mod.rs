//! Interaction datasets, the warm/validation/cold item split, and negative
//! sampling.

mod io;
mod synthetic;

pub use io::{
    load_dataset_dir, load_id_map, load_interactions, save_dataset_dir, save_id_map,
    save_interactions, IdMap, LoadedDataset,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numerics::{Rng, SeedStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
}

/// Implicit-feedback interactions over dense user and item ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_users: usize,
    n_items: usize,
    interactions: Vec<Interaction>,
    by_user: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(n_users: usize, n_items: usize, interactions: Vec<Interaction>) -> Result<Self> {
        let mut by_user = vec![Vec::new(); n_users];
        for it in &interactions {
            if it.user >= n_users || it.item >= n_items {
                return Err(Error::Config(format!(
                    "interaction ({}, {}) out of range for {n_users} users / {n_items} items",
                    it.user, it.item
                )));
            }
            by_user[it.user].push(it.item);
        }
        for (u, items) in by_user.iter_mut().enumerate() {
            items.sort_unstable();
            if items.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("duplicate interaction for user {u}")));
            }
            if items.is_empty() {
                return Err(Error::Insufficient(format!("user {u} has no interactions")));
            }
        }
        Ok(Dataset {
            n_users,
            n_items,
            interactions,
            by_user,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Sorted items the user has interacted with.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    pub fn has_interaction(&self, user: usize, item: usize) -> bool {
        self.by_user[user].binary_search(&item).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItemSplit {
    Warm,
    Val,
    Cold,
}

impl ItemSplit {
    pub fn label(self) -> &'static str {
        match self {
            ItemSplit::Warm => "warm",
            ItemSplit::Val => "val",
            ItemSplit::Cold => "cold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "warm" => Some(ItemSplit::Warm),
            "val" => Some(ItemSplit::Val),
            "cold" => Some(ItemSplit::Cold),
            _ => None,
        }
    }
}

/// Items partitioned into warm/validation/cold sets with their interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub dataset: Dataset,
    pub assignment: Vec<ItemSplit>,
    pub warm_items: Vec<usize>,
    pub val_items: Vec<usize>,
    pub cold_items: Vec<usize>,
    pub train_interactions: Vec<Interaction>,
    pub val_interactions: Vec<Interaction>,
    pub test_interactions: Vec<Interaction>,
    train_by_user: Vec<Vec<usize>>,
    val_by_user: Vec<Vec<usize>>,
    test_by_user: Vec<Vec<usize>>,
}

impl SplitDataset {
    /// Builds the split from an explicit assignment of every item.
    pub fn from_assignment(dataset: Dataset, assignment: Vec<ItemSplit>) -> Result<Self> {
        if assignment.len() != dataset.n_items() {
            return Err(Error::Dimension(format!(
                "split assigns {} items, dataset has {}",
                assignment.len(),
                dataset.n_items()
            )));
        }
        let pick = |s: ItemSplit| -> Vec<usize> {
            (0..assignment.len()).filter(|&i| assignment[i] == s).collect()
        };
        let warm_items = pick(ItemSplit::Warm);
        let val_items = pick(ItemSplit::Val);
        let cold_items = pick(ItemSplit::Cold);
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        let n_users = dataset.n_users();
        let mut train_by_user = vec![Vec::new(); n_users];
        let mut val_by_user = vec![Vec::new(); n_users];
        let mut test_by_user = vec![Vec::new(); n_users];
        for it in dataset.interactions() {
            match assignment[it.item] {
                ItemSplit::Warm => {
                    train.push(*it);
                    train_by_user[it.user].push(it.item);
                }
                ItemSplit::Val => {
                    val.push(*it);
                    val_by_user[it.user].push(it.item);
                }
                ItemSplit::Cold => {
                    test.push(*it);
                    test_by_user[it.user].push(it.item);
                }
            }
        }
        for lists in [&mut train_by_user, &mut val_by_user, &mut test_by_user] {
            lists.iter_mut().for_each(|l| l.sort_unstable());
        }
        Ok(SplitDataset {
            dataset,
            assignment,
            warm_items,
            val_items,
            cold_items,
            train_interactions: train,
            val_interactions: val,
            test_interactions: test,
            train_by_user,
            val_by_user,
            test_by_user,
        })
    }

    pub fn train_items_of(&self, user: usize) -> &[usize] {
        &self.train_by_user[user]
    }

    pub fn val_items_of(&self, user: usize) -> &[usize] {
        &self.val_by_user[user]
    }

    pub fn test_items_of(&self, user: usize) -> &[usize] {
        &self.test_by_user[user]
    }

    pub fn n_users(&self) -> usize {
        self.dataset.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.dataset.n_items()
    }
}

/// The standard 6:1:3 warm/validation/cold ratio.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.1, 0.3);

/// Shuffles items by `seed` and splits them over items (not interactions).
///
/// Validation and cold counts are floored; the remainder goes to warm.
pub fn split_items(dataset: Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<SplitDataset> {
    let (rw, rv, rc) = ratios;
    if [rw, rv, rc].iter().any(|r| !(0.0..=1.0).contains(r)) || (rw + rv + rc - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = dataset.n_items();
    if n < 3 {
        return Err(Error::Insufficient(format!(
            "splitting needs at least 3 items, dataset has {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeedStream::root(seed).child(crate::numerics::rng::subsystem::DATA).child(0x5911).rng().shuffle(&mut order);
    // floor with a little slack for products like 100 × 0.29
    let n_val = ((n as f64) * rv + 1e-9).floor() as usize;
    let n_cold = ((n as f64) * rc + 1e-9).floor() as usize;
    let n_warm = n - n_val - n_cold;
    let mut assignment = vec![ItemSplit::Warm; n];
    for &i in &order[n_warm..n_warm + n_val] {
        assignment[i] = ItemSplit::Val;
    }
    for &i in &order[n_warm + n_val..] {
        assignment[i] = ItemSplit::Cold;
    }
    SplitDataset::from_assignment(dataset, assignment)
}

/// `k` distinct items from `pool` that are absent from the sorted `exclude`
/// list, uniformly over that complement.
pub fn sample_negatives_from(
    pool: &[usize],
    exclude: &[usize],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    if candidates.len() < k {
        return Err(Error::Insufficient(format!(
            "requested {k} negatives but only {} non-interacted items exist",
            candidates.len()
        )));
    }
    Ok(rng.choose_distinct(&candidates, k))
}

/// `k` distinct items the user has not interacted with.
pub fn sample_negatives(dataset: &Dataset, user: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let pool: Vec<usize> = (0..dataset.n_items()).collect();
    sample_negatives_from(&pool, dataset.user_items(user), k, rng)
}
