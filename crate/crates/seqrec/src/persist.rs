//! Versioned JSON artifacts: trained models, solved policies and score
//! reports. Sparse rows serialize in sorted order so identical runs write
//! byte-identical files (apart from the `created_unix` stamp), and
//! probabilities survive a save/load round trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::domain::{ItemCatalog, ItemId, State, MAX_ORDER};
use crate::error::{Error, Result};
use crate::eval::ScoreReport;
use crate::mc::{MixtureModel, ModelConfig, Row, TransitionModel};
use crate::mdp::{MdpParams, Policy};

pub const MODEL_FORMAT: &str = "seqrec-model";
pub const POLICY_FORMAT: &str = "seqrec-policy";
pub const REPORT_FORMAT: &str = "seqrec-report";
pub const FORMAT_VERSION: u32 = 1;

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::BadArtifact {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn check_format(path: &Path, format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(Error::BadArtifact {
            path: path.into(),
            msg: format!("expected a `{expected}` document, found `{format}`"),
        });
    }
    if version != FORMAT_VERSION {
        return Err(Error::BadArtifact {
            path: path.into(),
            msg: format!("unsupported version {version}"),
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ItemEntry {
    key: String,
    reward: f64,
}

fn items_doc(catalog: &ItemCatalog) -> Vec<ItemEntry> {
    catalog
        .ids()
        .map(|id| ItemEntry {
            key: catalog.key_of(id).to_string(),
            reward: catalog.reward(id),
        })
        .collect()
}

fn catalog_from_doc(items: &[ItemEntry], path: &Path) -> Result<ItemCatalog> {
    let mut catalog = ItemCatalog::new();
    for (i, entry) in items.iter().enumerate() {
        let id = catalog.intern(&entry.key);
        if id.index() != i {
            return Err(Error::BadArtifact {
                path: path.into(),
                msg: format!("duplicate item key `{}`", entry.key),
            });
        }
        catalog.set_reward(id, entry.reward);
    }
    Ok(catalog)
}

fn slots_doc(state: &State) -> Vec<Option<u32>> {
    state
        .slots()
        .iter()
        .map(|s| s.map(|id| id.index() as u32))
        .collect()
}

fn state_from_doc(slots: &[Option<u32>], order: usize, path: &Path) -> Result<State> {
    if slots.len() != order || order > MAX_ORDER {
        return Err(Error::BadArtifact {
            path: path.into(),
            msg: "state slot count does not match its order".into(),
        });
    }
    let history: Vec<ItemId> = slots
        .iter()
        .filter_map(|s| s.map(ItemId::new))
        .collect();
    let state = crate::domain::state_from_history(&history, order);
    if slots_doc(&state) != slots {
        return Err(Error::BadArtifact {
            path: path.into(),
            msg: "MISSING slots must form a prefix".into(),
        });
    }
    Ok(state)
}

fn row_doc(row: &Row) -> Vec<(u32, f64)> {
    row.iter().map(|&(i, p)| (i.index() as u32, p)).collect()
}

fn row_from_doc(doc: &[(u32, f64)]) -> Row {
    doc.iter().map(|&(i, p)| (ItemId::new(i), p)).collect()
}

#[derive(Serialize, Deserialize)]
struct ComponentRow {
    state: Vec<Option<u32>>,
    total: f64,
    ends: u64,
    next: Vec<(u32, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    order: usize,
    rows: Vec<ComponentRow>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    created_unix: u64,
    k: usize,
    orders: Vec<usize>,
    weights: Vec<f64>,
    skipping: bool,
    clustering: bool,
    unordered: bool,
    items: Vec<ItemEntry>,
    popularity: Vec<(u32, f64)>,
    components: Vec<ComponentDoc>,
}

/// Writes a trained model as a versioned JSON document.
pub fn save_model(path: &Path, model: &MixtureModel) -> Result<()> {
    let config = model.config();
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        created_unix: now_unix(),
        k: config.k,
        orders: config.orders.clone(),
        weights: model.weights().to_vec(),
        skipping: config.skipping,
        clustering: config.clustering,
        unordered: config.unordered,
        items: items_doc(model.catalog()),
        popularity: row_doc(model.popularity()),
        components: model
            .components()
            .iter()
            .map(|component| ComponentDoc {
                order: component.order(),
                rows: component
                    .rows()
                    .map(|(state, row)| ComponentRow {
                        state: slots_doc(state),
                        total: component.total(state),
                        ends: component.end_count(state),
                        next: row_doc(row),
                    })
                    .collect(),
            })
            .collect(),
    };
    write_json(path, &doc)
}

/// Loads a model document back into a queryable [`MixtureModel`].
pub fn load_model(path: &Path) -> Result<MixtureModel> {
    let doc: ModelDoc = read_json(path)?;
    check_format(path, &doc.format, MODEL_FORMAT, doc.version)?;
    let config = ModelConfig {
        k: doc.k,
        orders: doc.orders.clone(),
        skipping: doc.skipping,
        clustering: doc.clustering,
        unordered: doc.unordered,
    };
    config.validate()?;
    if doc.components.len() != doc.orders.len() || doc.weights.len() != doc.orders.len() {
        return Err(Error::BadArtifact {
            path: path.into(),
            msg: "component, order and weight counts must agree".into(),
        });
    }
    let catalog = catalog_from_doc(&doc.items, path)?;
    let mut components = Vec::with_capacity(doc.components.len());
    for component in &doc.components {
        let mut rows = BTreeMap::new();
        let mut totals = BTreeMap::new();
        let mut ends = BTreeMap::new();
        for row in &component.rows {
            let state = state_from_doc(&row.state, component.order, path)?;
            totals.insert(state.clone(), row.total);
            if row.ends > 0 {
                ends.insert(state.clone(), row.ends);
            }
            rows.insert(state, row_from_doc(&row.next));
        }
        components.push(TransitionModel::from_parts(component.order, rows, totals, ends));
    }
    Ok(MixtureModel::from_parts(
        config,
        doc.weights,
        components,
        row_from_doc(&doc.popularity),
        catalog,
    ))
}

#[derive(Serialize, Deserialize)]
struct PolicyStateDoc {
    slots: Vec<Option<u32>>,
    action: u32,
    value: f64,
    top_q: Vec<(u32, f64)>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    format: String,
    version: u32,
    created_unix: u64,
    k: usize,
    alpha: f64,
    gamma: f64,
    prior_strength: f64,
    end_state: bool,
    tolerance: f64,
    improvement_rounds: usize,
    converged: bool,
    eval_residuals: Vec<f64>,
    items: Vec<ItemEntry>,
    states: Vec<PolicyStateDoc>,
}

/// Solved policy plus the parameters and rewards it was solved under.
pub struct PolicyArtifact {
    pub k: usize,
    pub params: MdpParams,
    pub tolerance: f64,
    pub catalog: ItemCatalog,
    pub policy: Policy,
}

/// Writes a solved policy: per state the chosen action, converged value
/// and the top-`top_m` Q-valued actions.
pub fn save_policy(
    path: &Path,
    mdp: &crate::mdp::MdpModel,
    policy: &Policy,
    tolerance: f64,
    top_m: usize,
) -> Result<()> {
    let params = mdp.params();
    let states = policy
        .actions
        .iter()
        .map(|(state, &action)| {
            let mut top_q = mdp
                .q_row(state, &policy.values)
                .unwrap_or_default();
            top_q.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            top_q.truncate(top_m);
            PolicyStateDoc {
                slots: slots_doc(state),
                action: action.index() as u32,
                value: policy.values[state],
                top_q: row_doc(&top_q),
            }
        })
        .collect();
    let doc = PolicyDoc {
        format: POLICY_FORMAT.into(),
        version: FORMAT_VERSION,
        created_unix: now_unix(),
        k: mdp.model().config().k,
        alpha: params.alpha,
        gamma: params.gamma,
        prior_strength: params.prior_strength,
        end_state: params.end_state,
        tolerance,
        improvement_rounds: policy.improvement_rounds,
        converged: policy.converged,
        eval_residuals: policy.eval_residuals.clone(),
        items: items_doc(mdp.model().catalog()),
        states,
    };
    write_json(path, &doc)
}

/// Loads a policy artifact; Q-values can be recomputed on demand from the
/// value table by rebuilding the MDP with the stored parameters.
pub fn load_policy(path: &Path) -> Result<PolicyArtifact> {
    let doc: PolicyDoc = read_json(path)?;
    check_format(path, &doc.format, POLICY_FORMAT, doc.version)?;
    let catalog = catalog_from_doc(&doc.items, path)?;
    let mut actions = BTreeMap::new();
    let mut values = BTreeMap::new();
    for entry in &doc.states {
        let state = state_from_doc(&entry.slots, doc.k, path)?;
        actions.insert(state.clone(), ItemId::new(entry.action));
        values.insert(state, entry.value);
    }
    Ok(PolicyArtifact {
        k: doc.k,
        params: MdpParams {
            alpha: doc.alpha,
            gamma: doc.gamma,
            prior_strength: doc.prior_strength,
            end_state: doc.end_state,
        },
        tolerance: doc.tolerance,
        catalog,
        policy: Policy {
            actions,
            values,
            improvement_rounds: doc.improvement_rounds,
            converged: doc.converged,
            eval_residuals: doc.eval_residuals,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    format: String,
    version: u32,
    created_unix: u64,
    ranker: String,
    #[serde(flatten)]
    report: ScoreReport,
}

pub fn save_report(path: &Path, ranker: &str, report: &ScoreReport) -> Result<()> {
    let doc = ReportDoc {
        format: REPORT_FORMAT.into(),
        version: FORMAT_VERSION,
        created_unix: now_unix(),
        ranker: ranker.into(),
        report: report.clone(),
    };
    write_json(path, &doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Session, SessionSet, SplitTag};
    use crate::mc::{build, row_prob};

    fn corpus(catalog: &mut ItemCatalog, seqs: &[&[&str]]) -> SessionSet {
        let sequences = seqs
            .iter()
            .enumerate()
            .map(|(i, items)| Session {
                user: format!("u{i}"),
                items: items.iter().map(|key| catalog.intern(key)).collect(),
            })
            .collect();
        SessionSet::new(sequences, SplitTag::Train)
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(
            &mut catalog,
            &[
                &["a", "b", "c", "a"],
                &["b", "c", "a", "d"],
                &["c", "a", "b"],
            ],
        );
        let config = ModelConfig::new(3).with_skipping(true).with_clustering(true);
        let model = build(&train, catalog, config).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();

        assert_eq!(loaded.config(), model.config());
        assert_eq!(loaded.weights(), model.weights());
        assert_eq!(loaded.popularity(), model.popularity());
        for (a, b) in model.components().iter().zip(loaded.components()) {
            assert_eq!(a.order(), b.order());
            assert_eq!(a.len(), b.len());
            for ((s1, r1), (s2, r2)) in a.rows().zip(b.rows()) {
                assert_eq!(s1, s2);
                assert_eq!(r1, r2, "probabilities must round-trip bit-exactly");
                assert_eq!(a.total(s1).to_bits(), b.total(s2).to_bits());
                assert_eq!(a.end_count(s1), b.end_count(s2));
            }
        }
        // predictions agree bit-exactly too
        let history: Vec<ItemId> = vec![ItemId::new(0), ItemId::new(1)];
        for (&(i1, p1), &(i2, p2)) in model.predict(&history).iter().zip(&loaded.predict(&history)) {
            assert_eq!(i1, i2);
            assert_eq!(p1.to_bits(), p2.to_bits());
        }
    }

    #[test]
    fn policy_round_trip_preserves_values_and_params() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "b", "a"], &["b", "a", "b"]]);
        catalog.set_reward(catalog.id_of("a").unwrap(), 3.0);
        let model = build(&train, catalog, ModelConfig::new(1)).unwrap();
        let params = MdpParams { alpha: 1.7, gamma: 0.8, ..Default::default() };
        let mdp = crate::mdp::MdpModel::from_model(model, params).unwrap();
        let policy = mdp.solve(1e-8, 50);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        save_policy(&path, &mdp, &policy, 1e-8, 5).unwrap();
        let artifact = load_policy(&path).unwrap();

        assert_eq!(artifact.k, 1);
        assert_eq!(artifact.params, params);
        assert_eq!(artifact.policy.actions, policy.actions);
        for (s, v) in &policy.values {
            assert_eq!(artifact.policy.values[s].to_bits(), v.to_bits());
        }
        assert_eq!(artifact.catalog.reward(artifact.catalog.id_of("a").unwrap()), 3.0);
    }

    #[test]
    fn wrong_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("m.json");
        std::fs::write(&model_path, r#"{"format": "other", "version": 1}"#).unwrap();
        assert!(load_model(&model_path).is_err());

        std::fs::write(&model_path, "not json").unwrap();
        assert!(matches!(
            load_model(&model_path),
            Err(Error::BadArtifact { .. })
        ));
    }

    #[test]
    fn model_weights_survive_with_full_precision() {
        let mut catalog = ItemCatalog::new();
        let train = corpus(&mut catalog, &[&["a", "b", "c"], &["b", "c", "a"]]);
        let model = build(&train, catalog, ModelConfig::new(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        // 1/3 is not dyadic; bit-exactness is the point
        assert_eq!(loaded.weights()[0].to_bits(), (1.0f64 / 3.0).to_bits());
        let a = catalog_id(&loaded, "a");
        assert!(row_prob(loaded.popularity(), a) > 0.0);
    }

    fn catalog_id(model: &MixtureModel, key: &str) -> ItemId {
        model.catalog().id_of(key).unwrap()
    }
}
