//! Core vocabulary shared by every other module: interned items, the
//! fixed-order state encoding with leading MISSING padding, and the item
//! catalog with per-item rewards.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported chain order.
pub const MAX_ORDER: usize = 5;

/// Dense item identifier assigned at interning time.
///
/// Ids are consecutive integers `0..catalog.len()`; the MISSING slot
/// sentinel is *not* an `ItemId` (empty slots are `None` in a [`State`]).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(u32);

impl ItemId {
    pub(crate) fn new(index: u32) -> Self {
        ItemId(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Interned items plus the per-item reward (site profit) used by the MDP.
///
/// Interning is a bijection between distinct external keys and dense
/// indices; rewards default to 1.0 so a catalog without profit data makes
/// the MDP degenerate gracefully toward likelihood-driven recommendation.
#[derive(Debug, Clone, Default)]
pub struct ItemCatalog {
    keys: Vec<String>,
    rewards: Vec<f64>,
    by_key: HashMap<String, ItemId>,
}

impl ItemCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing id for a seen key, or assigns the next dense index.
    pub fn intern(&mut self, external_key: &str) -> ItemId {
        if let Some(&id) = self.by_key.get(external_key) {
            return id;
        }
        let id = ItemId::new(self.keys.len() as u32);
        self.keys.push(external_key.to_string());
        self.rewards.push(1.0);
        self.by_key.insert(external_key.to_string(), id);
        id
    }

    pub fn id_of(&self, external_key: &str) -> Option<ItemId> {
        self.by_key.get(external_key).copied()
    }

    pub fn key_of(&self, id: ItemId) -> &str {
        &self.keys[id.index()]
    }

    pub fn reward(&self, id: ItemId) -> f64 {
        self.rewards[id.index()]
    }

    pub fn set_reward(&mut self, id: ItemId, reward: f64) {
        self.rewards[id.index()] = reward;
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.keys.len() as u32).map(ItemId::new)
    }

    /// Scales every reward by `factor`.
    pub fn scale_rewards(&mut self, factor: f64) {
        for r in &mut self.rewards {
            *r *= factor;
        }
    }

    /// Reads a profit file (CSV with header `item,reward`) and assigns the
    /// rewards to matching catalog items. Items absent from the file keep
    /// their current reward; rows naming unknown items are ignored.
    pub fn load_rewards_csv(&mut self, path: &Path) -> Result<usize> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if headers.len() < 2 || &headers[0] != "item" || &headers[1] != "reward" {
            return Err(Error::parse(path, 1, "expected header `item,reward`"));
        }
        let mut assigned = 0;
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if record.len() < 2 {
                return Err(Error::parse(path, line, "expected two fields"));
            }
            let reward: f64 = record[1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad reward `{}`", &record[1])))?;
            if !reward.is_finite() {
                return Err(Error::parse(path, line, "reward must be finite"));
            }
            if let Some(id) = self.id_of(&record[0]) {
                self.set_reward(id, reward);
                assigned += 1;
            }
        }
        Ok(assigned)
    }
}

/// Ordered tuple of the user's last `k` selections, MISSING-padded on the
/// left when the history is shorter than `k`.
///
/// `None` is the MISSING sentinel; non-`None` entries always occupy a
/// contiguous suffix. The all-MISSING state is the unique initial state.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    slots: ArrayVec<Option<ItemId>, MAX_ORDER>,
}

impl State {
    /// The all-MISSING initial state of the given order.
    pub fn initial(k: usize) -> Self {
        assert!((1..=MAX_ORDER).contains(&k), "order must be in 1..={MAX_ORDER}");
        let mut slots = ArrayVec::new();
        for _ in 0..k {
            slots.push(None);
        }
        State { slots }
    }

    pub fn order(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Option<ItemId>] {
        &self.slots
    }

    /// Items in the non-MISSING suffix, oldest first.
    pub fn history(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.slots.iter().filter_map(|s| *s)
    }

    /// The most recent item, `None` for the initial state.
    pub fn last_item(&self) -> Option<ItemId> {
        self.slots.last().copied().flatten()
    }

    pub fn is_initial(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    /// Shifts the slots left one position and places `x` last.
    pub fn advance(&self, x: ItemId) -> State {
        let mut slots = ArrayVec::new();
        for s in &self.slots[1..] {
            slots.push(*s);
        }
        slots.push(Some(x));
        State { slots }
    }

    /// Canonical representative of this state's unordered equivalence
    /// class: the non-MISSING suffix sorted ascending, padding preserved.
    pub fn canonical_unordered(&self) -> State {
        let mut slots = self.slots.clone();
        let first = slots.iter().position(|s| s.is_some()).unwrap_or(slots.len());
        slots[first..].sort_unstable();
        State { slots }
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<")?;
        for (i, s) in self.slots.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match s {
                Some(id) => write!(f, "{}", id.0)?,
                None => write!(f, "_")?,
            }
        }
        write!(f, ">")
    }
}

/// The state whose slots are the last `min(|history|, k)` items of
/// `history`, right-aligned and MISSING-padded on the left.
pub fn state_from_history(history: &[ItemId], k: usize) -> State {
    assert!((1..=MAX_ORDER).contains(&k), "order must be in 1..={MAX_ORDER}");
    let take = history.len().min(k);
    let mut slots = ArrayVec::new();
    for _ in 0..k - take {
        slots.push(None);
    }
    for &x in &history[history.len() - take..] {
        slots.push(Some(x));
    }
    State { slots }
}

/// Canonically sorted bag of the non-MISSING slots of a [`State`]; two
/// states whose items are permutations of each other map to the same bag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnorderedState {
    bag: ArrayVec<ItemId, MAX_ORDER>,
}

impl UnorderedState {
    pub fn items(&self) -> &[ItemId] {
        &self.bag
    }
}

/// Sorted bag of the non-MISSING slots of `s`.
pub fn unorder(s: &State) -> UnorderedState {
    let mut bag: ArrayVec<ItemId, MAX_ORDER> = s.history().collect();
    bag.sort_unstable();
    UnorderedState { bag }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(raw: &[u32]) -> Vec<ItemId> {
        raw.iter().map(|&i| ItemId::new(i)).collect()
    }

    #[test]
    fn intern_assigns_dense_indices() {
        let mut cat = ItemCatalog::new();
        assert_eq!(cat.intern("book-42").index(), 0);
        assert_eq!(cat.intern("book-42").index(), 0);
        assert_eq!(cat.intern("book-7").index(), 1);
        assert_eq!(cat.key_of(ItemId::new(1)), "book-7");
        assert_eq!(cat.reward(ItemId::new(0)), 1.0);
    }

    #[test]
    fn state_from_history_pads_left() {
        let empty = state_from_history(&[], 3);
        assert!(empty.is_initial());
        assert_eq!(empty.slots(), &[None, None, None]);

        let one = state_from_history(&ids(&[4]), 3);
        assert_eq!(one.slots(), &[None, None, Some(ItemId::new(4))]);

        let long = state_from_history(&ids(&[0, 1, 2, 3]), 3);
        assert_eq!(
            long.slots(),
            &[Some(ItemId::new(1)), Some(ItemId::new(2)), Some(ItemId::new(3))]
        );
    }

    #[test]
    fn advance_shifts_left() {
        let s = state_from_history(&ids(&[0, 1, 2]), 3);
        let t = s.advance(ItemId::new(9));
        assert_eq!(t, state_from_history(&ids(&[1, 2, 9]), 3));

        let from_initial = State::initial(3).advance(ItemId::new(7));
        assert_eq!(from_initial, state_from_history(&ids(&[7]), 3));

        let padded = state_from_history(&ids(&[1, 2]), 3).advance(ItemId::new(3));
        assert_eq!(padded, state_from_history(&ids(&[1, 2, 3]), 3));
    }

    #[test]
    fn unorder_sorts_and_drops_padding() {
        let s1 = state_from_history(&ids(&[5, 9, 2]), 3);
        let s2 = state_from_history(&ids(&[9, 2, 5]), 3);
        assert_eq!(unorder(&s1), unorder(&s2));
        assert_eq!(unorder(&s1).items(), &ids(&[2, 5, 9])[..]);

        let padded = state_from_history(&ids(&[3]), 3);
        assert_eq!(unorder(&padded).items(), &ids(&[3])[..]);
    }

    #[test]
    fn canonical_unordered_keeps_padding_prefix() {
        let s = state_from_history(&ids(&[9, 2]), 3);
        let c = s.canonical_unordered();
        assert_eq!(c.slots(), &[None, Some(ItemId::new(2)), Some(ItemId::new(9))]);
    }

    #[test]
    fn rewards_csv_round_trip() {
        let mut cat = ItemCatalog::new();
        let a = cat.intern("a");
        cat.intern("b");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profit.csv");
        std::fs::write(&path, "item,reward\na,2.5\nzzz,9.0\n").unwrap();
        let assigned = cat.load_rewards_csv(&path).unwrap();
        assert_eq!(assigned, 1);
        assert_eq!(cat.reward(a), 2.5);

        std::fs::write(&path, "item,reward\na,not-a-number\n").unwrap();
        let err = cat.load_rewards_csv(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    proptest! {
        #[test]
        fn advance_matches_from_history(
            history in proptest::collection::vec(0u32..50, 0..12),
            x in 0u32..50,
            k in 1usize..=MAX_ORDER,
        ) {
            let history = ids(&history);
            let x = ItemId::new(x);
            let stepped = state_from_history(&history, k).advance(x);
            let mut extended = history.clone();
            extended.push(x);
            prop_assert_eq!(stepped, state_from_history(&extended, k));
        }

        #[test]
        fn unorder_is_permutation_invariant(
            mut items in proptest::collection::vec(0u32..50, 1..=MAX_ORDER),
            seed in 0u64..1000,
        ) {
            let k = items.len();
            let s1 = state_from_history(&ids(&items), k);
            // deterministic pseudo-shuffle
            let n = items.len();
            for i in 0..n {
                let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % n;
                items.swap(i, j);
            }
            let s2 = state_from_history(&ids(&items), k);
            prop_assert_eq!(unorder(&s1), unorder(&s2));
            prop_assert_eq!(s1.canonical_unordered(), s2.canonical_unordered());
        }
    }
}
