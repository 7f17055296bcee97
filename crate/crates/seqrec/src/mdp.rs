//! The recommender MDP: α/β-boosted transition rows derived from the
//! predictive model, approximate policy iteration over encountered states,
//! top-m recommendation, ε-cutoff Boltzmann exploration and online count
//! updates.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{ItemId, State};
use crate::error::{Error, Result};
use crate::mc::{rank_row, row_prob, MixtureModel, Row};

/// Solver and transition-shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpParams {
    /// Recommendation boost factor applied to the recommended item's base
    /// probability. Must be >= 1; 1 makes recommendations inert.
    pub alpha: f64,
    /// Discount factor in [0, 1).
    pub gamma: f64,
    /// Pseudo-count mass of the initialized row when blending with online
    /// observations.
    pub prior_strength: f64,
    /// Estimate per-state session-end probabilities from training data and
    /// damp continuation values by them.
    pub end_state: bool,
}

impl Default for MdpParams {
    fn default() -> Self {
        MdpParams {
            alpha: 1.5,
            gamma: 0.95,
            prior_strength: 10.0,
            end_state: false,
        }
    }
}

impl MdpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.prior_strength >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "prior strength must be >= 0, got {}",
                self.prior_strength
            )));
        }
        Ok(())
    }
}

/// Applies the recommendation adjustment to a base probability row: the
/// recommended item's probability becomes `min(alpha * q, 1)` and every
/// other item is scaled by the `beta` forced by the sum-to-1 constraint,
/// `beta = (1 - min(alpha * q, 1)) / (1 - q)`. Boosting an item with zero
/// probability leaves the row unchanged (`beta = 1`).
pub fn boost_row(row: &Row, recommended: ItemId, alpha: f64) -> Row {
    let q = row_prob(row, recommended);
    if q == 0.0 {
        return row.clone();
    }
    if q >= 1.0 {
        return vec![(recommended, 1.0)];
    }
    let boosted = (alpha * q).min(1.0);
    let beta = (1.0 - boosted) / (1.0 - q);
    row.iter()
        .filter_map(|&(item, p)| {
            let adjusted = if item == recommended { boosted } else { beta * p };
            (adjusted > 0.0).then_some((item, adjusted))
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct OnlineCounts {
    counts: BTreeMap<ItemId, f64>,
    total: f64,
}

/// The recommender MDP built from a predictive model: encountered states
/// are the stored rows of the highest-order component, actions are the
/// known items, rewards come from the catalog, and transition rows are the
/// α/β-adjusted model predictions blended with any online observations.
#[derive(Debug, Clone)]
pub struct MdpModel {
    model: MixtureModel,
    params: MdpParams,
    states: Vec<State>,
    base_rows: Vec<Row>,
    end_fractions: Vec<f64>,
    actions: Vec<ItemId>,
    online: BTreeMap<State, BTreeMap<ItemId, OnlineCounts>>,
}

/// A solved policy: the greedy action and converged value per encountered
/// state, plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct Policy {
    pub actions: BTreeMap<State, ItemId>,
    pub values: BTreeMap<State, f64>,
    /// Improvement rounds performed (policy evaluations).
    pub improvement_rounds: usize,
    /// False when `max_iterations` elapsed before the policy stabilized.
    pub converged: bool,
    /// Final evaluation residual of each round.
    pub eval_residuals: Vec<f64>,
}

impl Policy {
    pub fn action(&self, state: &State) -> Option<ItemId> {
        self.actions.get(state).copied()
    }

    pub fn value(&self, state: &State) -> Option<f64> {
        self.values.get(state).copied()
    }
}

impl MdpModel {
    /// Lifts a predictive model into an MDP. Encountered states are the
    /// keys of the highest-order component; each base row is the mixture
    /// prediction for that state's history.
    pub fn from_model(model: MixtureModel, params: MdpParams) -> Result<Self> {
        params.validate()?;
        let top = model.top_component();
        let states: Vec<State> = top.rows().map(|(s, _)| s.clone()).collect();
        let end_fractions: Vec<f64> = states.iter().map(|s| top.end_fraction(s)).collect();
        let base_rows: Vec<Row> = states
            .iter()
            .map(|s| {
                let history: Vec<ItemId> = s.history().collect();
                model.predict(&history)
            })
            .collect();
        let actions = model.items().to_vec();
        Ok(MdpModel {
            model,
            params,
            states,
            base_rows,
            end_fractions,
            actions,
            online: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &MdpParams {
        &self.params
    }

    pub fn model(&self) -> &MixtureModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut MixtureModel {
        &mut self.model
    }

    /// Encountered states, ascending.
    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn actions(&self) -> &[ItemId] {
        &self.actions
    }

    /// Reward of reaching a state: the catalog reward of its most recent
    /// item, 0 for the all-MISSING initial state.
    pub fn state_reward(&self, state: &State) -> f64 {
        state
            .last_item()
            .map(|x| self.model.catalog().reward(x))
            .unwrap_or(0.0)
    }

    /// The MDP state for a history (canonicalized for unordered models).
    pub fn context_state(&self, history: &[ItemId]) -> State {
        self.model.context_state(history, self.model.config().k)
    }

    fn canon(&self, state: &State) -> State {
        if self.model.config().unordered {
            state.canonical_unordered()
        } else {
            state.clone()
        }
    }

    fn state_pos(&self, state: &State) -> Option<usize> {
        self.states.binary_search(state).ok()
    }

    /// The base (unboosted) prediction row for an encountered state.
    pub fn base_row(&self, state: &State) -> Option<&Row> {
        self.state_pos(&self.canon(state)).map(|i| &self.base_rows[i])
    }

    /// The effective transition row for recommending `recommended` in
    /// `state`: the α/β-adjusted base row when no online data exists,
    /// otherwise `(prior_strength * initialized + online counts) /
    /// (prior_strength + n)`. States with neither a base row nor online
    /// observations are unencountered.
    pub fn transition_row(&self, state: &State, recommended: ItemId) -> Result<Row> {
        let key = self.canon(state);
        let init = self
            .state_pos(&key)
            .map(|i| boost_row(&self.base_rows[i], recommended, self.params.alpha));
        let online = self.online.get(&key).and_then(|m| m.get(&recommended));
        match (init, online) {
            (None, None) => Err(Error::UnencounteredState(format!("{key:?}"))),
            (Some(row), None) => Ok(row),
            (init, Some(on)) => {
                let prior = if init.is_some() { self.params.prior_strength } else { 0.0 };
                let denom = prior + on.total;
                let mut blended: BTreeMap<ItemId, f64> = BTreeMap::new();
                if let Some(init) = init {
                    for (item, p) in init {
                        *blended.entry(item).or_insert(0.0) += prior * p;
                    }
                }
                for (&item, &c) in &on.counts {
                    *blended.entry(item).or_insert(0.0) += c;
                }
                Ok(blended.into_iter().map(|(i, v)| (i, v / denom)).collect())
            }
        }
    }

    /// Records one observed interaction: the user was in `state`, the
    /// system recommended `recommended`, and the user chose `chosen`.
    /// Entries for states or items outside the trained structure are
    /// created on first sight; re-solving is the caller's responsibility.
    pub fn observe(&mut self, state: &State, recommended: ItemId, chosen: ItemId) {
        let key = self.canon(state);
        let entry = self
            .online
            .entry(key)
            .or_default()
            .entry(recommended)
            .or_default();
        *entry.counts.entry(chosen).or_insert(0.0) += 1.0;
        entry.total += 1.0;
        for item in [recommended, chosen] {
            if let Err(pos) = self.actions.binary_search(&item) {
                self.actions.insert(pos, item);
            }
        }
    }

    /// Total number of online observations recorded.
    pub fn online_observations(&self) -> f64 {
        self.online
            .values()
            .flat_map(|m| m.values())
            .map(|on| on.total)
            .sum()
    }

    fn v_hat(&self, state: &State, values: &BTreeMap<State, f64>) -> f64 {
        values
            .get(state)
            .copied()
            .unwrap_or_else(|| self.state_reward(state))
    }

    fn continuation(&self, pos: Option<usize>) -> f64 {
        match (self.params.end_state, pos) {
            (true, Some(i)) => 1.0 - self.end_fractions[i],
            _ => 1.0,
        }
    }

    /// Q-values for every action at a state, given a value table for
    /// encountered states (unencountered successors are valued at their
    /// immediate reward). Errors for unencountered states.
    pub fn q_row(&self, state: &State, values: &BTreeMap<State, f64>) -> Result<Vec<(ItemId, f64)>> {
        let key = self.canon(state);
        let pos = self.state_pos(&key);
        let online = self.online.get(&key);
        if pos.is_none() && online.is_none() {
            return Err(Error::UnencounteredState(format!("{key:?}")));
        }
        let cont = self.continuation(pos);
        let gamma = self.params.gamma;
        let mut out = Vec::new();
        if let Some(i) = pos {
            let base = &self.base_rows[i];
            let w: Vec<f64> = base
                .iter()
                .map(|&(x, _)| {
                    let next = self.canon(&key.advance(x));
                    self.model.catalog().reward(x) + gamma * self.v_hat(&next, values)
                })
                .collect();
            let e0: f64 = base.iter().zip(&w).map(|(&(_, p), &wx)| p * wx).sum();
            for &a in &self.actions {
                let qa = if online.map_or(false, |m| m.contains_key(&a)) {
                    self.expected_backup(&key, a, values)?
                } else {
                    match base.binary_search_by_key(&a, |&(x, _)| x) {
                        Ok(idx) => {
                            let (q, wa) = (base[idx].1, w[idx]);
                            if q >= 1.0 {
                                wa
                            } else {
                                let boosted = (self.params.alpha * q).min(1.0);
                                let beta = (1.0 - boosted) / (1.0 - q);
                                boosted * wa + beta * (e0 - q * wa)
                            }
                        }
                        Err(_) => e0,
                    }
                };
                out.push((a, cont * qa));
            }
        } else {
            for &a in online.unwrap().keys() {
                let qa = self.expected_backup(&key, a, values)?;
                out.push((a, cont * qa));
            }
        }
        Ok(out)
    }

    /// Expected one-step backup through the full effective row.
    fn expected_backup(&self, key: &State, action: ItemId, values: &BTreeMap<State, f64>) -> Result<f64> {
        let row = self.transition_row(key, action)?;
        let gamma = self.params.gamma;
        Ok(row
            .iter()
            .map(|&(x, p)| {
                let next = self.canon(&key.advance(x));
                p * (self.model.catalog().reward(x) + gamma * self.v_hat(&next, values))
            })
            .sum())
    }

    /// Ranked recommendations: actions ordered by Q-value descending (ties
    /// by ascending item id), truncated to `m_top`. Unencountered states
    /// fall back to the predictive model's ranking.
    pub fn recommend(&self, policy: &Policy, history: &[ItemId], m_top: usize) -> Vec<ItemId> {
        assert!(m_top >= 1, "m_top must be at least 1");
        let state = self.context_state(history);
        let mut ranked = match self.q_row(&state, &policy.values) {
            Ok(q) => rank_row(&q),
            Err(_) => self.model.rank(history),
        };
        ranked.truncate(m_top);
        ranked
    }

    /// ε-cutoff Boltzmann exploration: among actions whose Q-value is
    /// within `epsilon` of the best, samples one with probability
    /// proportional to `exp(Q / temperature)`.
    pub fn explore(
        &self,
        policy: &Policy,
        state: &State,
        epsilon: f64,
        temperature: f64,
        seed: u64,
    ) -> Result<ItemId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.explore_rng(policy, state, epsilon, temperature, &mut rng)
    }

    pub fn explore_rng(
        &self,
        policy: &Policy,
        state: &State,
        epsilon: f64,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<ItemId> {
        assert!(epsilon >= 0.0, "epsilon must be nonnegative");
        assert!(temperature > 0.0, "temperature must be positive");
        let q = self.q_row(state, &policy.values)?;
        let q_max = q.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        let eligible: Vec<(ItemId, f64)> = q
            .into_iter()
            .filter(|&(_, v)| v >= q_max - epsilon)
            .collect();
        let weights: Vec<f64> = eligible
            .iter()
            .map(|&(_, v)| ((v - q_max) / temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        for (&(item, _), &w) in eligible.iter().zip(&weights) {
            draw -= w;
            if draw <= 0.0 {
                return Ok(item);
            }
        }
        Ok(eligible.last().expect("eligible set contains the argmax").0)
    }

    /// Policy iteration over encountered states. Evaluation is iterative
    /// (Gauss-Seidel sweeps to `tolerance`); improvement is a greedy argmax
    /// with ascending-id tie-break; terminates when the policy is stable or
    /// `max_iterations` rounds elapsed (returning best-so-far, flagged).
    pub fn solve(&self, tolerance: f64, max_iterations: usize) -> Policy {
        assert!(tolerance > 0.0, "tolerance must be positive");
        assert!(max_iterations >= 1, "need at least one round");
        let compiled = self.compile();
        let n = compiled.states.len();

        let mut values: Vec<f64> = compiled.state_rewards.clone();
        let mut policy = compiled.greedy(&values);
        let mut residuals = Vec::new();
        let mut converged = false;
        let mut rounds = 0;

        while rounds < max_iterations {
            rounds += 1;
            residuals.push(compiled.evaluate(&policy, &mut values, tolerance));
            let improved = compiled.greedy(&values);
            if improved == policy {
                converged = true;
                break;
            }
            policy = improved;
        }

        let mut actions = BTreeMap::new();
        let mut value_map = BTreeMap::new();
        for i in 0..n {
            actions.insert(compiled.states[i].clone(), policy[i]);
            value_map.insert(compiled.states[i].clone(), values[i]);
        }
        Policy {
            actions,
            values: value_map,
            improvement_rounds: rounds,
            converged,
            eval_residuals: residuals,
        }
    }

    /// Flattens the MDP into index-based rows for the solver: solve states
    /// are the encountered states plus any online-touched ones.
    fn compile(&self) -> CompiledMdp {
        let mut states: Vec<State> = self.states.clone();
        for s in self.online.keys() {
            if states.binary_search(s).is_err() {
                states.push(s.clone());
            }
        }
        states.sort();

        let index: BTreeMap<&State, u32> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s, i as u32))
            .collect();
        let compile_row = |origin: &State, row: &Row| -> CompiledRow {
            let entries = row
                .iter()
                .map(|&(item, p)| {
                    let next = self.canon(&origin.advance(item));
                    CompiledEntry {
                        item,
                        p,
                        reward: self.model.catalog().reward(item),
                        succ: index.get(&next).copied(),
                        succ_reward: self.state_reward(&next),
                    }
                })
                .collect();
            CompiledRow { entries }
        };

        let mut base = Vec::with_capacity(states.len());
        let mut online = Vec::with_capacity(states.len());
        let mut cont = Vec::with_capacity(states.len());
        let mut state_rewards = Vec::with_capacity(states.len());
        for s in &states {
            let pos = self.state_pos(s);
            base.push(pos.map(|i| compile_row(s, &self.base_rows[i])));
            let mut rows: Vec<(ItemId, CompiledRow)> = Vec::new();
            if let Some(by_action) = self.online.get(s) {
                for &a in by_action.keys() {
                    let row = self
                        .transition_row(s, a)
                        .expect("online entry implies a row");
                    rows.push((a, compile_row(s, &row)));
                }
            }
            online.push(rows);
            cont.push(self.continuation(pos));
            state_rewards.push(self.state_reward(s));
        }

        CompiledMdp {
            states,
            state_rewards,
            cont,
            base,
            online,
            actions: self.actions.clone(),
            alpha: self.params.alpha,
            gamma: self.params.gamma,
        }
    }
}

struct CompiledEntry {
    item: ItemId,
    p: f64,
    reward: f64,
    succ: Option<u32>,
    succ_reward: f64,
}

struct CompiledRow {
    entries: Vec<CompiledEntry>,
}

impl CompiledRow {
    fn w(&self, entry: &CompiledEntry, gamma: f64, values: &[f64]) -> f64 {
        let v = match entry.succ {
            Some(i) => values[i as usize],
            None => entry.succ_reward,
        };
        entry.reward + gamma * v
    }

    /// Expectation under the row as stored (already effective).
    fn expectation(&self, gamma: f64, values: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|e| e.p * self.w(e, gamma, values))
            .sum()
    }

    /// One-pass boosted backup for a single action over the base row.
    fn q_boosted(&self, action: ItemId, alpha: f64, gamma: f64, values: &[f64]) -> f64 {
        let mut e0 = 0.0;
        let mut q = 0.0;
        let mut wa = 0.0;
        for e in &self.entries {
            let w = self.w(e, gamma, values);
            e0 += e.p * w;
            if e.item == action {
                q = e.p;
                wa = w;
            }
        }
        if q >= 1.0 {
            return wa;
        }
        let boosted = (alpha * q).min(1.0);
        let beta = (1.0 - boosted) / (1.0 - q);
        boosted * wa + beta * (e0 - q * wa)
    }
}

struct CompiledMdp {
    states: Vec<State>,
    state_rewards: Vec<f64>,
    cont: Vec<f64>,
    base: Vec<Option<CompiledRow>>,
    online: Vec<Vec<(ItemId, CompiledRow)>>,
    actions: Vec<ItemId>,
    alpha: f64,
    gamma: f64,
}

impl CompiledMdp {
    fn q_value(&self, i: usize, action: ItemId, values: &[f64]) -> f64 {
        let q = if let Ok(idx) = self.online[i].binary_search_by_key(&action, |&(a, _)| a) {
            self.online[i][idx].1.expectation(self.gamma, values)
        } else if let Some(base) = &self.base[i] {
            base.q_boosted(action, self.alpha, self.gamma, values)
        } else {
            return f64::NEG_INFINITY;
        };
        self.cont[i] * q
    }

    /// Greedy argmax per state, ascending-id tie-break.
    fn greedy(&self, values: &[f64]) -> Vec<ItemId> {
        (0..self.states.len())
            .map(|i| {
                let candidates: Box<dyn Iterator<Item = ItemId> + '_> =
                    if self.base[i].is_some() {
                        Box::new(self.actions.iter().copied())
                    } else {
                        Box::new(self.online[i].iter().map(|&(a, _)| a))
                    };
                let mut best = None;
                let mut best_q = f64::NEG_INFINITY;
                for a in candidates {
                    let q = self.q_value(i, a, values);
                    if q > best_q {
                        best_q = q;
                        best = Some(a);
                    }
                }
                best.expect("every solve state has at least one action")
            })
            .collect()
    }

    /// Gauss-Seidel policy evaluation to `tolerance`; returns the final
    /// sweep residual.
    fn evaluate(&self, policy: &[ItemId], values: &mut [f64], tolerance: f64) -> f64 {
        const MAX_SWEEPS: usize = 10_000;
        let mut delta = f64::INFINITY;
        for _ in 0..MAX_SWEEPS {
            delta = 0.0;
            for i in 0..self.states.len() {
                let v = self.q_value(i, policy[i], values);
                delta = delta.max((v - values[i]).abs());
                values[i] = v;
            }
            if delta < tolerance {
                break;
            }
        }
        delta
    }
}
