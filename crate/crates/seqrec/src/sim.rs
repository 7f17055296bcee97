//! A synthetic-user environment with a known behavior model, for
//! exercising the full recommend / respond / observe loop and comparing
//! the realized profit of policies.
//!
//! The simulated user follows the same proportionality assumptions the MDP
//! makes: a recommendation multiplies the recommended item's base
//! probability by `true_alpha` and the rest of the row is renormalized.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{state_from_history, ItemCatalog, ItemId, State, MAX_ORDER};
use crate::error::{Error, Result};
use crate::eval::Ranker;
use crate::ingest::{Session, SessionSet, SplitTag};
use crate::mc::{row_sum, Row};
use crate::mdp::boost_row;
use crate::seeds::indexed_seed;

/// A user behavior model: per-state next-item distributions (including the
/// all-MISSING initial state), the acceptance boost a recommendation gets,
/// and a per-step session-end probability.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    catalog: ItemCatalog,
    k: usize,
    rows: BTreeMap<State, Row>,
    pub true_alpha: f64,
    pub end_prob: f64,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthDoc {
    k: usize,
    true_alpha: f64,
    end_prob: f64,
    items: Vec<GtItem>,
    rows: Vec<GtRow>,
}

#[derive(Serialize, Deserialize)]
struct GtItem {
    key: String,
    reward: f64,
}

#[derive(Serialize, Deserialize)]
struct GtRow {
    /// Most recent items, oldest first; empty for the initial state.
    context: Vec<String>,
    next: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn new(
        catalog: ItemCatalog,
        k: usize,
        rows: Vec<(State, Row)>,
        true_alpha: f64,
        end_prob: f64,
    ) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&k) {
            return Err(Error::InvalidConfig(format!("k must be in 1..={MAX_ORDER}")));
        }
        if !(true_alpha >= 1.0) {
            return Err(Error::InvalidConfig("true_alpha must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&end_prob) {
            return Err(Error::InvalidConfig("end_prob must be in [0, 1)".into()));
        }
        let mut map = BTreeMap::new();
        for (state, mut row) in rows {
            if state.order() != k {
                return Err(Error::InvalidConfig("row context order mismatch".into()));
            }
            let sum = row_sum(&row);
            if row.iter().any(|&(_, p)| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "behavior row for {state:?} is not a distribution (sum {sum})"
                )));
            }
            for entry in &mut row {
                entry.1 /= sum;
            }
            if map.insert(state.clone(), row).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate row for {state:?}")));
            }
        }
        Ok(GroundTruth {
            catalog,
            k,
            rows: map,
            true_alpha,
            end_prob,
        })
    }

    /// Reads a ground-truth spec file (JSON).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: GroundTruthDoc = serde_json::from_str(&text).map_err(|e| Error::BadArtifact {
            path: path.into(),
            msg: e.to_string(),
        })?;
        let mut catalog = ItemCatalog::new();
        for item in &doc.items {
            let id = catalog.intern(&item.key);
            catalog.set_reward(id, item.reward);
        }
        let intern_or_err = |catalog: &ItemCatalog, key: &str| {
            catalog.id_of(key).ok_or_else(|| Error::BadArtifact {
                path: path.into(),
                msg: format!("row references unknown item `{key}`"),
            })
        };
        let mut rows = Vec::new();
        for row in &doc.rows {
            let mut history = Vec::new();
            for key in &row.context {
                history.push(intern_or_err(&catalog, key)?);
            }
            let state = state_from_history(&history, doc.k);
            let mut parsed: Row = Vec::new();
            for (key, &p) in &row.next {
                parsed.push((intern_or_err(&catalog, key)?, p));
            }
            parsed.sort_by_key(|&(i, _)| i);
            rows.push((state, parsed));
        }
        GroundTruth::new(catalog, doc.k, rows, doc.true_alpha, doc.end_prob)
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn row(&self, state: &State) -> Option<&Row> {
        self.rows.get(state)
    }

    pub fn reward(&self, item: ItemId) -> f64 {
        self.catalog.reward(item)
    }
}

fn sample_row(row: &Row, rng: &mut impl Rng) -> ItemId {
    let mut draw = rng.gen::<f64>() * row_sum(row);
    for &(item, p) in row {
        draw -= p;
        if draw <= 0.0 {
            return item;
        }
    }
    row.last().expect("non-empty row").0
}

/// Samples per-user sequences from the behavior model with no
/// recommendations (the pre-deployment regime): each step terminates the
/// session with `end_prob`, at `max_len`, or at a state with no stored
/// row. Deterministic per seed.
pub fn generate_corpus(gt: &GroundTruth, n_users: usize, max_len: usize, seed: u64) -> SessionSet {
    assert!(n_users >= 1, "need at least one user");
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut sequences = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(seed, "corpus-user", u as u64));
        let mut state = State::initial(gt.k);
        let mut items = Vec::new();
        while let Some(row) = gt.row(&state) {
            let item = sample_row(row, &mut rng);
            items.push(item);
            state = state.advance(item);
            if items.len() >= max_len || rng.gen::<f64>() < gt.end_prob {
                break;
            }
        }
        sequences.push(Session {
            user: format!("sim-u{u:06}"),
            items,
        });
    }
    SessionSet::new(sequences, SplitTag::Full)
}

/// Outcome of one simulated session.
#[derive(Debug, Clone)]
pub struct Episode {
    pub items: Vec<ItemId>,
    pub total_reward: f64,
    pub discounted_reward: f64,
    /// Steps where the user chose the recommended item.
    pub accepted: usize,
}

/// Runs one session: at each step the ranker recommends, the user samples
/// the `true_alpha`-adjusted behavior row, and the realized rewards
/// accumulate (discounted by `gamma` per step).
pub fn run_episode(
    gt: &GroundTruth,
    ranker: &dyn Ranker,
    steps: usize,
    gamma: f64,
    seed: u64,
) -> Episode {
    assert!(steps >= 1, "need at least one step");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = State::initial(gt.k);
    let mut history: Vec<ItemId> = Vec::new();
    let mut episode = Episode {
        items: Vec::new(),
        total_reward: 0.0,
        discounted_reward: 0.0,
        accepted: 0,
    };
    for t in 0..steps {
        let Some(row) = gt.row(&state) else { break };
        let recommended = ranker.recommend_one(&history);
        let adjusted = match recommended {
            Some(r) => boost_row(row, r, gt.true_alpha),
            None => row.clone(),
        };
        let chosen = sample_row(&adjusted, &mut rng);
        let reward = gt.reward(chosen);
        episode.total_reward += reward;
        episode.discounted_reward += gamma.powi(t as i32) * reward;
        if recommended == Some(chosen) {
            episode.accepted += 1;
        }
        episode.items.push(chosen);
        history.push(chosen);
        state = state.advance(chosen);
        if rng.gen::<f64>() < gt.end_prob {
            break;
        }
    }
    episode
}

/// Per-policy summary over paired episodes.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyStats {
    pub name: String,
    pub episodes: usize,
    pub mean_discounted: f64,
    pub stderr_discounted: f64,
    pub mean_total: f64,
    pub mean_accepted: f64,
}

/// Runs every policy on shared per-episode random streams and reports the
/// mean discounted reward with its standard error.
pub fn compare_policies(
    gt: &GroundTruth,
    policies: &[(String, &dyn Ranker)],
    episodes: usize,
    steps: usize,
    gamma: f64,
    seed: u64,
) -> Vec<PolicyStats> {
    assert!(episodes >= 1, "need at least one episode");
    let mut discounted: Vec<Vec<f64>> = vec![Vec::with_capacity(episodes); policies.len()];
    let mut totals = vec![0.0f64; policies.len()];
    let mut accepted = vec![0.0f64; policies.len()];
    for e in 0..episodes {
        let episode_seed = indexed_seed(seed, "episode", e as u64);
        for (i, (_, ranker)) in policies.iter().enumerate() {
            let outcome = run_episode(gt, *ranker, steps, gamma, episode_seed);
            discounted[i].push(outcome.discounted_reward);
            totals[i] += outcome.total_reward;
            accepted[i] += outcome.accepted as f64;
        }
    }
    policies
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let n = episodes as f64;
            let mean = discounted[i].iter().sum::<f64>() / n;
            let var = if episodes > 1 {
                discounted[i].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            PolicyStats {
                name: name.clone(),
                episodes,
                mean_discounted: mean,
                stderr_discounted: (var / n).sqrt(),
                mean_total: totals[i] / n,
                mean_accepted: accepted[i] / n,
            }
        })
        .collect()
}

/// Aligned-column rendering of a comparison.
pub fn comparison_table(stats: &[PolicyStats]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>10} {:>14} {:>10} {:>10} {:>10}\n",
        "policy", "episodes", "discounted", "stderr", "total", "accepted"
    ));
    for s in stats {
        out.push_str(&format!(
            "{:<10} {:>10} {:>14.4} {:>10.4} {:>10.4} {:>10.4}\n",
            s.name, s.episodes, s.mean_discounted, s.stderr_discounted, s.mean_total, s.mean_accepted
        ));
    }
    out
}
