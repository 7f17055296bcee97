//! Mixture of per-order transition models with uniform weights, plus the
//! popularity fallback for contexts no component has seen.

use std::collections::BTreeMap;

use super::{apply_clustering, counts, normalize, Row, TransitionModel};
use crate::domain::{state_from_history, ItemCatalog, ItemId, State, MAX_ORDER};
use crate::error::{Error, Result};
use crate::ingest::SessionSet;

/// Which enhancements a model uses and which component orders it mixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Highest order; the MDP state order. 1..=5.
    pub k: usize,
    /// Mixture component orders, ascending, each in `1..=k`.
    pub orders: Vec<usize>,
    pub skipping: bool,
    pub clustering: bool,
    pub unordered: bool,
}

impl ModelConfig {
    /// Components of every order `1..=k`, enhancements off.
    pub fn new(k: usize) -> Self {
        ModelConfig {
            k,
            orders: (1..=k).collect(),
            skipping: false,
            clustering: false,
            unordered: false,
        }
    }

    pub fn with_orders(mut self, orders: Vec<usize>) -> Self {
        self.orders = orders;
        self
    }

    pub fn with_skipping(mut self, on: bool) -> Self {
        self.skipping = on;
        self
    }

    pub fn with_clustering(mut self, on: bool) -> Self {
        self.clustering = on;
        self
    }

    pub fn with_unordered(mut self, on: bool) -> Self {
        self.unordered = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ORDER).contains(&self.k) {
            return Err(Error::InvalidConfig(format!(
                "order k must be in 1..={MAX_ORDER}, got {}",
                self.k
            )));
        }
        if self.orders.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if self.orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "mixture orders must be strictly ascending".into(),
            ));
        }
        if self.orders.iter().any(|&o| o < 1 || o > self.k) {
            return Err(Error::InvalidConfig(format!(
                "mixture orders must lie in 1..={}",
                self.k
            )));
        }
        Ok(())
    }

    /// Short variant label, e.g. `MC123-SK-SM` or `UMC12`.
    pub fn label(&self) -> String {
        let mut name = if self.unordered { "UMC".to_string() } else { "MC".to_string() };
        for o in &self.orders {
            name.push_str(&o.to_string());
        }
        if self.skipping {
            name.push_str("-SK");
        }
        if self.clustering {
            name.push_str("-SM");
        }
        name
    }
}

/// The trained predictive model: one [`TransitionModel`] per configured
/// order, mixed with uniform weights over the components whose context is
/// stored.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    config: ModelConfig,
    weights: Vec<f64>,
    components: Vec<TransitionModel>,
    /// Normalized global item frequencies over the training data; the
    /// prediction when no component knows the context.
    popularity: Row,
    items: Vec<ItemId>,
    catalog: ItemCatalog,
}

/// Estimates a model from training sequences: per order, count (with or
/// without skipping), normalize, optionally cluster; assemble with uniform
/// weights. The unordered variant keys every row by the canonically sorted
/// state.
pub fn build(train: &SessionSet, catalog: ItemCatalog, config: ModelConfig) -> Result<MixtureModel> {
    config.validate()?;
    if train.sequences.iter().all(|s| s.items.len() < 2) {
        return Err(Error::EmptyTrainingSet);
    }

    let mut components = Vec::with_capacity(config.orders.len());
    for &order in &config.orders {
        let table = counts::count(train, order, config.skipping, config.unordered);
        let mut model = normalize(&table);
        if config.clustering {
            model = apply_clustering(&model);
        }
        components.push(model);
    }

    let mut occurrence: BTreeMap<ItemId, f64> = BTreeMap::new();
    for seq in &train.sequences {
        for &item in &seq.items {
            *occurrence.entry(item).or_insert(0.0) += 1.0;
        }
    }
    let total: f64 = occurrence.values().sum();
    let popularity: Row = occurrence.iter().map(|(&i, &c)| (i, c / total)).collect();
    let items: Vec<ItemId> = occurrence.keys().copied().collect();

    let weight = 1.0 / config.orders.len() as f64;
    let weights = vec![weight; config.orders.len()];

    Ok(MixtureModel {
        config,
        weights,
        components,
        popularity,
        items,
        catalog,
    })
}

impl MixtureModel {
    pub(crate) fn from_parts(
        config: ModelConfig,
        weights: Vec<f64>,
        components: Vec<TransitionModel>,
        popularity: Row,
        catalog: ItemCatalog,
    ) -> Self {
        let items = popularity.iter().map(|&(i, _)| i).collect();
        MixtureModel {
            config,
            weights,
            components,
            popularity,
            items,
            catalog,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[TransitionModel] {
        &self.components
    }

    /// The highest-order component.
    pub fn top_component(&self) -> &TransitionModel {
        self.components.last().expect("at least one component")
    }

    pub fn popularity(&self) -> &Row {
        &self.popularity
    }

    /// Items observed in training, ascending.
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn catalog_mut(&mut self) -> &mut ItemCatalog {
        &mut self.catalog
    }

    /// The row key a component of `order` uses for this history.
    pub fn context_state(&self, history: &[ItemId], order: usize) -> State {
        let state = state_from_history(history, order);
        if self.config.unordered {
            state.canonical_unordered()
        } else {
            state
        }
    }

    /// Probability distribution over the next item given a history.
    ///
    /// Components whose context state is not stored contribute nothing and
    /// the remaining weights are renormalized; when no component knows the
    /// context the global popularity row is returned.
    pub fn predict(&self, history: &[ItemId]) -> Row {
        let live: Vec<(f64, &Row)> = self
            .components
            .iter()
            .zip(&self.weights)
            .filter_map(|(component, &w)| {
                let context = self.context_state(history, component.order());
                component.row(&context).map(|row| (w, row))
            })
            .collect();
        if live.is_empty() {
            return self.popularity.clone();
        }
        let weight_sum: f64 = live.iter().map(|&(w, _)| w).sum();
        let mut mixed: BTreeMap<ItemId, f64> = BTreeMap::new();
        for (w, row) in live {
            let scale = w / weight_sum;
            for &(item, p) in row {
                *mixed.entry(item).or_insert(0.0) += scale * p;
            }
        }
        mixed.into_iter().collect()
    }

    /// Items sorted by predicted probability descending, ties broken by
    /// ascending item id.
    pub fn rank(&self, history: &[ItemId]) -> Vec<ItemId> {
        rank_row(&self.predict(history))
    }
}

/// Descending-probability order with deterministic ascending-id tie-break.
pub fn rank_row(row: &Row) -> Vec<ItemId> {
    let mut scored: Vec<(ItemId, f64)> = row.clone();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(item, _)| item).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::tests::corpus;
    use crate::mc::{row_prob, row_sum};

    #[test]
    fn uniform_two_component_mixture_averages() {
        let mut catalog = ItemCatalog::new();
        // order-1 row(b): {c: 1/2, d: 1/2}; order-2 row(<a,b>): {c: 1}
        let train = corpus(&mut catalog, &[&["a", "b", "c"], &["b", "d"]]);
        let id = |k: &str| catalog.id_of(k).unwrap();
        let model = build(&train, catalog.clone(), ModelConfig::new(2)).unwrap();

        let p = model.predict(&[id("a"), id("b")]);
        // 0.5 * 0.5 + 0.5 * 1.0 = 0.75 for c; 0.5 * 0.5 = 0.25 for d
        assert!((row_prob(&p, id("c")) - 0.75).abs() < 1e-12);
        assert!((row_prob(&p, id("d")) - 0.25).abs() < 1e-12);
        assert!((row_sum(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dead_components_renormalize() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "b"], &["b", "c"]]);
        let id = |k: &str| catalog.id_of(k).unwrap();
        let model = build(&train, catalog.clone(), ModelConfig::new(3)).unwrap();

        // history <c, a>: order-1 context <a> stored, orders 2..3 contexts
        // <c,a> / <M,c,a> unseen -> pure order-1 row with weight 1
        let p = model.predict(&[id("c"), id("a")]);
        assert!((row_prob(&p, id("b")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_falls_back_to_popularity() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "b"], &["a", "c"]]);
        let id = |k: &str| catalog.id_of(k).unwrap();
        let model = build(&train, catalog.clone(), ModelConfig::new(2)).unwrap();

        // "c" never has successors: no component stores its context
        let p = model.predict(&[id("c")]);
        assert_eq!(p, *model.popularity());
        // popularity: a appears 2x, b 1x, c 1x of 4 occurrences
        assert!((row_prob(&p, id("a")) - 0.5).abs() < 1e-12);

        // empty history: all-MISSING context is never counted either
        let p0 = model.predict(&[]);
        assert_eq!(p0, *model.popularity());
    }

    #[test]
    fn rank_orders_by_probability_then_id() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "c"], &["a", "b"], &["a", "c"]]);
        let id = |k: &str| catalog.id_of(k).unwrap();
        let model = build(&train, catalog.clone(), ModelConfig::new(1)).unwrap();
        assert_eq!(model.rank(&[id("a")]), vec![id("c"), id("b")]);

        // tie: b and c each once -> ascending id (a < b interned first? a=0, c=1, b=2)
        let mut catalog2 = ItemCatalog::new();
        let train2 = corpus(&mut catalog2, &[&["a", "c"], &["a", "b"]]);
        let id2 = |k: &str| catalog2.id_of(k).unwrap();
        let model2 = build(&train2, catalog2.clone(), ModelConfig::new(1)).unwrap();
        assert_eq!(model2.rank(&[id2("a")]), vec![id2("c"), id2("b")]);
        assert!(id2("c") < id2("b"));
    }

    #[test]
    fn order_one_plain_model_is_mle() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "b"], &["a", "b"], &["a", "c"]]);
        let id = |k: &str| catalog.id_of(k).unwrap();
        let model = build(&train, catalog.clone(), ModelConfig::new(1)).unwrap();
        let p = model.predict(&[id("a")]);
        assert!((row_prob(&p, id("b")) - 2.0 / 3.0).abs() < 1e-12);
        assert!((row_prob(&p, id("c")) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unordered_variant_merges_permutations() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "b", "c"], &["b", "a", "d"]]);
        let id = |k: &str| catalog.id_of(k).unwrap();
        let config = ModelConfig::new(2).with_orders(vec![2]).with_unordered(true);
        let model = build(&train, catalog.clone(), config).unwrap();

        let p_ab = model.predict(&[id("a"), id("b")]);
        let p_ba = model.predict(&[id("b"), id("a")]);
        assert_eq!(p_ab, p_ba);
        assert!((row_prob(&p_ab, id("c")) - 0.5).abs() < 1e-12);
        assert!((row_prob(&p_ab, id("d")) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set_errors() {
        let catalog = ItemCatalog::new();
        let train = SessionSet::new(vec![], crate::ingest::SplitTag::Train);
        assert!(build(&train, catalog, ModelConfig::new(2)).is_err());
    }

    #[test]
    fn config_labels() {
        let c = ModelConfig::new(3).with_skipping(true).with_clustering(true);
        assert_eq!(c.label(), "MC123-SK-SM");
        let u = ModelConfig::new(2).with_unordered(true);
        assert_eq!(u.label(), "UMC12");
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(0).validate().is_err());
        assert!(ModelConfig::new(6).validate().is_err());
        assert!(ModelConfig::new(3).with_orders(vec![]).validate().is_err());
        assert!(ModelConfig::new(3).with_orders(vec![2, 2]).validate().is_err());
        assert!(ModelConfig::new(3).with_orders(vec![1, 4]).validate().is_err());
        assert!(ModelConfig::new(3).with_orders(vec![1, 3]).validate().is_ok());
    }
}
