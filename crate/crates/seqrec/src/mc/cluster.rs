//! Similarity clustering: blends each state's transition row with the rows
//! of positionwise-similar states.

use std::collections::{BTreeMap, HashMap};

use super::{Row, TransitionModel};
use crate::domain::{ItemId, State};

/// Positionwise state similarity: slot position `m` (1-based) contributes
/// weight `m + 1` when both states hold the same item there. Matching
/// MISSING slots contribute nothing.
pub fn similarity(s1: &State, s2: &State) -> f64 {
    assert_eq!(s1.order(), s2.order(), "states must share an order");
    s1.slots()
        .iter()
        .zip(s2.slots())
        .enumerate()
        .map(|(idx, (a, b))| match (a, b) {
            (Some(x), Some(y)) if x == y => (idx + 2) as f64,
            _ => 0.0,
        })
        .sum()
}

/// Replaces every row with the even blend of itself and the normalized
/// similarity-weighted sum of all stored rows:
///
/// ```text
/// new(s, x) = 1/2 old(s, x) + 1/2 simcount(s, x) / sum_x simcount(s, x)
/// simcount(s, x) = sum_t sim(s, t) * old(t, x)
/// ```
///
/// The sum runs over every stored state `t`, including `s` itself. States
/// sharing no positionwise item with `s` have `sim = 0` and are skipped via
/// an inverted index on (position, item); a state with zero total simcount
/// keeps its old row.
pub fn apply_clustering(model: &TransitionModel) -> TransitionModel {
    apply_clustering_scaled(model, 1.0)
}

/// `sim` is defined up to a constant: any positive scale cancels in the
/// normalization. Exposed so tests can assert that invariance.
pub(crate) fn apply_clustering_scaled(model: &TransitionModel, sim_scale: f64) -> TransitionModel {
    let states: Vec<&State> = model.rows().map(|(s, _)| s).collect();
    let rows: Vec<&Row> = model.rows().map(|(_, r)| r).collect();

    // Inverted index: (slot position, item) -> states holding that item
    // there. Buckets are filled in ascending state order.
    let mut index: HashMap<(usize, ItemId), Vec<usize>> = HashMap::new();
    for (i, state) in states.iter().enumerate() {
        for (pos, slot) in state.slots().iter().enumerate() {
            if let Some(item) = slot {
                index.entry((pos, *item)).or_default().push(i);
            }
        }
    }

    let mut sim_weight = vec![0.0f64; states.len()];
    let mut new_rows = BTreeMap::new();
    for (i, state) in states.iter().enumerate() {
        let mut touched: Vec<usize> = Vec::new();
        for (pos, slot) in state.slots().iter().enumerate() {
            if let Some(item) = slot {
                for &t in &index[&(pos, *item)] {
                    if sim_weight[t] == 0.0 {
                        touched.push(t);
                    }
                    sim_weight[t] += (pos + 2) as f64 * sim_scale;
                }
            }
        }
        touched.sort_unstable();

        let mut simcount: BTreeMap<ItemId, f64> = BTreeMap::new();
        for &t in &touched {
            for &(item, p) in rows[t] {
                *simcount.entry(item).or_insert(0.0) += sim_weight[t] * p;
            }
        }
        let total: f64 = simcount.values().sum();

        let new_row: Row = if total > 0.0 {
            let mut blended: BTreeMap<ItemId, f64> = BTreeMap::new();
            for &(item, p) in rows[i] {
                *blended.entry(item).or_insert(0.0) += 0.5 * p;
            }
            for (&item, &c) in &simcount {
                *blended.entry(item).or_insert(0.0) += 0.5 * c / total;
            }
            blended.into_iter().collect()
        } else {
            rows[i].clone()
        };
        new_rows.insert((*state).clone(), new_row);

        for &t in &touched {
            sim_weight[t] = 0.0;
        }
    }

    let totals = states
        .iter()
        .map(|&s| (s.clone(), model.total(s)))
        .collect();
    let end_counts = states
        .iter()
        .filter_map(|&s| {
            let ends = model.end_count(s);
            (ends > 0).then(|| (s.clone(), ends))
        })
        .collect();
    TransitionModel::from_parts(model.order(), new_rows, totals, end_counts)
}
