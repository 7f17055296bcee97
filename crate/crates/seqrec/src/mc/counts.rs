//! Transition counting, with and without fractional-count skipping.

use std::collections::BTreeMap;

use crate::domain::{state_from_history, ItemId, State};
use crate::ingest::SessionSet;

/// Per-order fractional transition counts plus sequence-end tallies.
#[derive(Debug, Clone)]
pub struct CountTable {
    order: usize,
    counts: BTreeMap<State, BTreeMap<ItemId, f64>>,
    end_counts: BTreeMap<State, u64>,
}

impl CountTable {
    pub(crate) fn empty(order: usize) -> Self {
        CountTable {
            order,
            counts: BTreeMap::new(),
            end_counts: BTreeMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn count(&self, state: &State, item: ItemId) -> f64 {
        self.counts
            .get(state)
            .and_then(|row| row.get(&item))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&State, &BTreeMap<ItemId, f64>)> {
        self.counts.iter()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub(crate) fn end_counts(&self) -> &BTreeMap<State, u64> {
        &self.end_counts
    }

    fn add(&mut self, state: State, item: ItemId, weight: f64) {
        *self
            .counts
            .entry(state)
            .or_default()
            .entry(item)
            .or_insert(0.0) += weight;
    }
}

/// Maximum-likelihood counting: for each sequence `x_1..x_n` and each
/// context end `q` in `1..=n-1`, adds 1 to the transition from the
/// (possibly MISSING-padded) state of the last `order` items of `x_1..x_q`
/// to `x_{q+1}`.
pub fn count_base(train: &SessionSet, order: usize) -> CountTable {
    count(train, order, false, false)
}

/// Base counts plus skipping: each context also credits every later item
/// `x_j` with the fractional count `1/2^(j-q-1)`, a diminishing weight per
/// skipped position. The direct successor `j = q+1` carries weight 1,
/// which is exactly the base count.
pub fn count_with_skipping(train: &SessionSet, order: usize) -> CountTable {
    count(train, order, true, false)
}

pub(crate) fn count(
    train: &SessionSet,
    order: usize,
    skipping: bool,
    unordered: bool,
) -> CountTable {
    let mut table = CountTable::empty(order);
    for seq in &train.sequences {
        let items = &seq.items;
        let n = items.len();
        for q in 1..n {
            let mut context = state_from_history(&items[..q], order);
            if unordered {
                context = context.canonical_unordered();
            }
            if skipping {
                for (skipped, &target) in items[q..].iter().enumerate() {
                    table.add(context.clone(), target, 0.5f64.powi(skipped as i32));
                }
            } else {
                table.add(context, items[q], 1.0);
            }
        }
        if n > 0 {
            let mut last = state_from_history(items, order);
            if unordered {
                last = last.canonical_unordered();
            }
            *table.end_counts.entry(last).or_insert(0) += 1;
        }
    }
    table
}
