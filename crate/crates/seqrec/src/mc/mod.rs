//! The enhanced Markov-chain predictive model: fractional-count skipping,
//! similarity clustering and mixture modeling over orders `1..=k`.

mod cluster;
mod counts;
mod mixture;

pub use cluster::{apply_clustering, similarity};
pub use counts::{count_base, count_with_skipping, CountTable};
pub use mixture::{build, rank_row, MixtureModel, ModelConfig};

use std::collections::BTreeMap;

use crate::domain::{ItemId, State};

/// Sparse probability row over next items, sorted by item id.
pub type Row = Vec<(ItemId, f64)>;

/// Looks up an item's probability in a sorted row.
pub fn row_prob(row: &Row, item: ItemId) -> f64 {
    match row.binary_search_by_key(&item, |&(x, _)| x) {
        Ok(i) => row[i].1,
        Err(_) => 0.0,
    }
}

pub(crate) fn row_sum(row: &Row) -> f64 {
    row.iter().map(|&(_, p)| p).sum()
}

/// Row-normalized transition probabilities of one order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    order: usize,
    rows: BTreeMap<State, Row>,
    /// Raw (fractional) count mass behind each row, kept for the optional
    /// absorbing-end estimate.
    totals: BTreeMap<State, f64>,
    /// How often each state was a sequence-final context.
    end_counts: BTreeMap<State, u64>,
}

impl TransitionModel {
    pub(crate) fn from_parts(
        order: usize,
        rows: BTreeMap<State, Row>,
        totals: BTreeMap<State, f64>,
        end_counts: BTreeMap<State, u64>,
    ) -> Self {
        TransitionModel {
            order,
            rows,
            totals,
            end_counts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, state: &State) -> Option<&Row> {
        self.rows.get(state)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&State, &Row)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total(&self, state: &State) -> f64 {
        self.totals.get(state).copied().unwrap_or(0.0)
    }

    pub fn end_count(&self, state: &State) -> u64 {
        self.end_counts.get(state).copied().unwrap_or(0)
    }

    /// Fraction of this state's observations that ended the sequence,
    /// `ends / (ends + count mass)`.
    pub fn end_fraction(&self, state: &State) -> f64 {
        let ends = self.end_count(state) as f64;
        let total = self.total(state);
        if ends + total > 0.0 {
            ends / (ends + total)
        } else {
            0.0
        }
    }
}

/// Divides each row of a count table by its own sum; rows with zero total
/// are dropped (the state is treated as unencountered).
pub fn normalize(counts: &CountTable) -> TransitionModel {
    let mut rows = BTreeMap::new();
    let mut totals = BTreeMap::new();
    for (state, row) in counts.rows() {
        let total: f64 = row.values().sum();
        if total <= 0.0 {
            continue;
        }
        let normalized: Row = row.iter().map(|(&item, &c)| (item, c / total)).collect();
        rows.insert(state.clone(), normalized);
        totals.insert(state.clone(), total);
    }
    TransitionModel {
        order: counts.order(),
        rows,
        totals,
        end_counts: counts.end_counts().clone(),
    }
}
