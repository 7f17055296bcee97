//! Offline evaluation: test-case expansion and the recommendation-score /
//! exponential-decay metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::ItemId;
use crate::error::{Error, Result};
use crate::ingest::SessionSet;
use crate::mc::MixtureModel;
use crate::mdp::{MdpModel, Policy};

/// Anything that can order the item universe for a given history, most
/// promising first.
pub trait Ranker {
    fn rank(&self, history: &[ItemId]) -> Vec<ItemId>;

    /// The single top recommendation, if any.
    fn recommend_one(&self, history: &[ItemId]) -> Option<ItemId> {
        self.rank(history).first().copied()
    }
}

impl Ranker for MixtureModel {
    fn rank(&self, history: &[ItemId]) -> Vec<ItemId> {
        MixtureModel::rank(self, history)
    }
}

/// Ranks by Q-value under a solved policy, falling back to the predictive
/// model for unencountered states.
pub struct MdpRanker<'a> {
    pub mdp: &'a MdpModel,
    pub policy: &'a Policy,
}

impl Ranker for MdpRanker<'_> {
    fn rank(&self, history: &[ItemId]) -> Vec<ItemId> {
        self.mdp.recommend(self.policy, history, usize::MAX)
    }
}

/// One prediction case: the items seen so far and the actual next one.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub context: Vec<ItemId>,
    pub observed: ItemId,
}

/// Expands every test sequence `t_1..t_n` into its `n - 1` prediction
/// cases; case `p` has the last `min(p, k)` items as context and `t_{p+1}`
/// as the observed next selection.
pub fn expand_cases(test: &SessionSet, k: usize) -> Vec<TestCase> {
    let mut cases = Vec::new();
    for seq in &test.sequences {
        for p in 1..seq.items.len() {
            let start = p.saturating_sub(k);
            cases.push(TestCase {
                context: seq.items[start..p].to_vec(),
                observed: seq.items[p],
            });
        }
    }
    cases
}

/// Percentage of cases whose observed item appears in the top `m` of the
/// ranked list.
pub fn recommendation_score(cases: &[TestCase], ranker: &dyn Ranker, m: usize) -> Result<f64> {
    assert!(m >= 1, "list length must be at least 1");
    if cases.is_empty() {
        return Err(Error::NoTestCases);
    }
    let hits = cases
        .iter()
        .filter(|case| {
            ranker
                .rank(&case.context)
                .iter()
                .take(m)
                .any(|&item| item == case.observed)
        })
        .count();
    Ok(100.0 * hits as f64 / cases.len() as f64)
}

/// Probability that a user sees position `m` (1-based) of a list under the
/// half-life assumption: `2^-((m - 1) / (half_life - 1))`.
pub fn position_probability(position: usize, half_life: f64) -> f64 {
    2f64.powf(-((position - 1) as f64) / (half_life - 1.0))
}

/// Position-weighted score: each case contributes the view probability of
/// the observed item's rank in the full list, 0 if it is absent; the score
/// is 100 times the mean.
pub fn exponential_decay_score(
    cases: &[TestCase],
    ranker: &dyn Ranker,
    half_life: f64,
) -> Result<f64> {
    assert!(half_life > 1.0, "half-life must exceed 1");
    if cases.is_empty() {
        return Err(Error::NoTestCases);
    }
    let total: f64 = cases
        .iter()
        .map(|case| case_decay(&ranker.rank(&case.context), case.observed, half_life))
        .sum();
    Ok(100.0 * total / cases.len() as f64)
}

fn case_decay(ranked: &[ItemId], observed: ItemId, half_life: f64) -> f64 {
    ranked
        .iter()
        .position(|&item| item == observed)
        .map(|idx| position_probability(idx + 1, half_life))
        .unwrap_or(0.0)
}

/// Both metrics over one expansion of the test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub case_count: usize,
    pub half_life: f64,
    /// Recommendation score per requested list length.
    pub rc_at_m: BTreeMap<usize, f64>,
    pub ed_score: f64,
}

impl ScoreReport {
    /// Aligned-column text rendering.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>10}\n", "metric", "value"));
        out.push_str(&format!("{:<12} {:>10}\n", "cases", self.case_count));
        for (&m, &score) in &self.rc_at_m {
            out.push_str(&format!("{:<12} {:>10.4}\n", format!("RC@{m}"), score));
        }
        out.push_str(&format!(
            "{:<12} {:>10.4}\n",
            format!("ED(hl={})", self.half_life),
            self.ed_score
        ));
        out
    }
}

/// Expands cases once, ranks each case once, and scores RC at every
/// requested list length plus ED at the given half-life.
pub fn evaluate(
    ranker: &dyn Ranker,
    test: &SessionSet,
    k: usize,
    m_values: &[usize],
    half_life: f64,
) -> Result<ScoreReport> {
    assert!(half_life > 1.0, "half-life must exceed 1");
    let cases = expand_cases(test, k);
    if cases.is_empty() {
        return Err(Error::NoTestCases);
    }
    let mut hit_counts: BTreeMap<usize, usize> = m_values.iter().map(|&m| (m, 0)).collect();
    let mut decay_total = 0.0;
    for case in &cases {
        let ranked = ranker.rank(&case.context);
        let position = ranked.iter().position(|&item| item == case.observed);
        if let Some(idx) = position {
            for (&m, count) in hit_counts.iter_mut() {
                if idx < m {
                    *count += 1;
                }
            }
            decay_total += position_probability(idx + 1, half_life);
        }
    }
    let n = cases.len() as f64;
    Ok(ScoreReport {
        case_count: cases.len(),
        half_life,
        rc_at_m: hit_counts
            .into_iter()
            .map(|(m, hits)| (m, 100.0 * hits as f64 / n))
            .collect(),
        ed_score: 100.0 * decay_total / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ItemId;
    use crate::ingest::{Session, SplitTag};

    fn id(i: u32) -> ItemId {
        ItemId::new(i)
    }

    fn set(seqs: &[&[u32]]) -> SessionSet {
        let sequences = seqs
            .iter()
            .enumerate()
            .map(|(n, items)| Session {
                user: format!("u{n}"),
                items: items.iter().map(|&i| id(i)).collect(),
            })
            .collect();
        SessionSet::new(sequences, SplitTag::Test)
    }

    /// Ranker with a fixed list for every context.
    struct Fixed(Vec<ItemId>);

    impl Ranker for Fixed {
        fn rank(&self, _history: &[ItemId]) -> Vec<ItemId> {
            self.0.clone()
        }
    }

    #[test]
    fn expand_emits_n_minus_one_cases() {
        let cases = expand_cases(&set(&[&[0, 1, 2]]), 3);
        assert_eq!(
            cases,
            vec![
                TestCase { context: vec![id(0)], observed: id(1) },
                TestCase { context: vec![id(0), id(1)], observed: id(2) },
            ]
        );

        assert_eq!(expand_cases(&set(&[&[0, 1]]), 5).len(), 1);

        // contexts truncate to the last k items
        let cases = expand_cases(&set(&[&[0, 1, 2, 3, 4]]), 2);
        assert_eq!(cases.len(), 4);
        assert_eq!(cases[3].context, vec![id(2), id(3)]);
        assert_eq!(cases[3].observed, id(4));
    }

    #[test]
    fn rc_counts_top_m_hits() {
        let ranker = Fixed(vec![id(9), id(1), id(8)]);
        let cases = vec![TestCase { context: vec![id(0)], observed: id(1) }];
        // observed ranked second
        assert_eq!(recommendation_score(&cases, &ranker, 2).unwrap(), 100.0);
        assert_eq!(recommendation_score(&cases, &ranker, 1).unwrap(), 0.0);

        let two = vec![
            TestCase { context: vec![id(0)], observed: id(9) }, // rank 1: hit
            TestCase { context: vec![id(0)], observed: id(8) }, // rank 3: miss at m=2
        ];
        assert_eq!(recommendation_score(&two, &ranker, 2).unwrap(), 50.0);
    }

    #[test]
    fn ed_follows_the_half_life_curve() {
        let ranked: Vec<ItemId> = (0..10).map(id).collect();
        let at = |pos: usize| {
            let ranker = Fixed(ranked.clone());
            let cases = vec![TestCase { context: vec![], observed: id(pos as u32 - 1) }];
            exponential_decay_score(&cases, &ranker, 5.0).unwrap()
        };
        assert_eq!(at(1), 100.0); // 2^0
        assert_eq!(at(5), 50.0); // 2^(-4/4)
        assert_eq!(at(9), 25.0); // 2^(-8/4)
    }

    #[test]
    fn absent_observed_scores_zero() {
        let ranker = Fixed(vec![id(1)]);
        let cases = vec![TestCase { context: vec![], observed: id(7) }];
        assert_eq!(exponential_decay_score(&cases, &ranker, 5.0).unwrap(), 0.0);
        assert_eq!(recommendation_score(&cases, &ranker, 3).unwrap(), 0.0);
    }

    #[test]
    fn zero_cases_is_an_error() {
        let ranker = Fixed(vec![id(1)]);
        assert!(matches!(
            recommendation_score(&[], &ranker, 1),
            Err(Error::NoTestCases)
        ));
        assert!(matches!(
            exponential_decay_score(&[], &ranker, 5.0),
            Err(Error::NoTestCases)
        ));
        assert!(matches!(
            evaluate(&ranker, &set(&[&[0]]), 3, &[1], 5.0),
            Err(Error::NoTestCases)
        ));
    }

    #[test]
    fn report_is_consistent_with_standalone_scores() {
        let ranker = Fixed((0..6).map(id).collect());
        let test = set(&[&[0, 1, 2, 3], &[5, 4, 2]]);
        let report = evaluate(&ranker, &test, 3, &[1, 3, 5], 5.0).unwrap();
        let cases = expand_cases(&test, 3);
        assert_eq!(report.case_count, cases.len());
        for (&m, &score) in &report.rc_at_m {
            assert_eq!(score, recommendation_score(&cases, &ranker, m).unwrap());
        }
        assert!(
            (report.ed_score - exponential_decay_score(&cases, &ranker, 5.0).unwrap()).abs()
                < 1e-12
        );
        // RC monotone in m
        let scores: Vec<f64> = report.rc_at_m.values().copied().collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn perfect_ranker_scores_100() {
        struct Oracle;
        impl Ranker for Oracle {
            fn rank(&self, history: &[ItemId]) -> Vec<ItemId> {
                // next item is always last context item + 1 in the fixture
                vec![id(history.last().unwrap().index() as u32 + 1)]
            }
        }
        let test = set(&[&[0, 1, 2, 3, 4]]);
        let report = evaluate(&Oracle, &test, 2, &[1, 5], 5.0).unwrap();
        assert_eq!(report.rc_at_m[&1], 100.0);
        assert_eq!(report.ed_score, 100.0);
    }
}
