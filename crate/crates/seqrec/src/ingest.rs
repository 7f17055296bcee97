//! Event-log ingestion: parsing, sessionization, frequency filtering and the
//! per-user train/test split.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ItemCatalog, ItemId};
use crate::error::{Error, Result};
use crate::seeds::stream_seed;

/// One interaction from a raw log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawEvent {
    pub user: String,
    pub ts: i64,
    pub item: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Jsonl,
}

/// A user's item sequence before interning.
#[derive(Debug, Clone)]
pub struct RawSequence {
    pub user: String,
    pub items: Vec<String>,
}

/// One interned per-user item sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user: String,
    pub items: Vec<ItemId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

/// Filtered collection of sequences, tagged with its split side.
#[derive(Debug, Clone)]
pub struct SessionSet {
    pub sequences: Vec<Session>,
    pub tag: SplitTag,
}

impl SessionSet {
    pub fn new(sequences: Vec<Session>, tag: SplitTag) -> Self {
        SessionSet { sequences, tag }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn user_count(&self) -> usize {
        let mut users: Vec<&str> = self.sequences.iter().map(|s| s.user.as_str()).collect();
        users.sort_unstable();
        users.dedup();
        users.len()
    }
}

/// Loads raw events, grouped by user (first-appearance order) with each
/// group stable-sorted by timestamp.
pub fn load_events(path: &Path, format: EventFormat) -> Result<Vec<RawEvent>> {
    let events = match format {
        EventFormat::Csv => load_csv(path)?,
        EventFormat::Jsonl => load_jsonl(path)?,
    };
    Ok(group_and_sort(events))
}

fn load_csv(path: &Path) -> Result<Vec<RawEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["user", "ts", "item"] {
        return Err(Error::parse(path, 1, "expected header `user,ts,item`"));
    }
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::parse(path, line, "expected three fields `user,ts,item`"));
        }
        let ts: i64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad timestamp `{}`", &record[1])))?;
        if record[0].is_empty() || record[2].is_empty() {
            return Err(Error::parse(path, line, "empty user or item field"));
        }
        events.push(RawEvent {
            user: record[0].to_string(),
            ts,
            item: record[2].to_string(),
        });
    }
    Ok(events)
}

fn load_jsonl(path: &Path) -> Result<Vec<RawEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: RawEvent = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if event.user.is_empty() || event.item.is_empty() {
            return Err(Error::parse(path, i + 1, "empty user or item field"));
        }
        events.push(event);
    }
    Ok(events)
}

fn group_and_sort(events: Vec<RawEvent>) -> Vec<RawEvent> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawEvent>> = HashMap::new();
    for event in events {
        if !groups.contains_key(&event.user) {
            order.push(event.user.clone());
        }
        groups.entry(event.user.clone()).or_default().push(event);
    }
    let mut out = Vec::new();
    for user in order {
        let mut group = groups.remove(&user).unwrap();
        group.sort_by_key(|e| e.ts); // stable: input order breaks ties
        out.extend(group);
    }
    out
}

/// Cuts each user's event stream into sequences wherever consecutive
/// timestamps differ by at least `gap_secs`. Item order is preserved.
pub fn sessionize(events: &[RawEvent], gap_secs: i64) -> Vec<RawSequence> {
    assert!(gap_secs > 0, "session gap must be positive");
    let mut out: Vec<RawSequence> = Vec::new();
    let mut current: Option<(String, i64, Vec<String>)> = None;
    for event in events {
        let cut = match &current {
            Some((user, last_ts, _)) => {
                user != &event.user || event.ts.saturating_sub(*last_ts) >= gap_secs
            }
            None => true,
        };
        if cut {
            if let Some((user, _, items)) = current.take() {
                out.push(RawSequence { user, items });
            }
            current = Some((event.user.clone(), event.ts, vec![event.item.clone()]));
        } else {
            let (_, last_ts, items) = current.as_mut().unwrap();
            *last_ts = event.ts;
            items.push(event.item.clone());
        }
    }
    if let Some((user, _, items)) = current {
        out.push(RawSequence { user, items });
    }
    out
}

/// Transactions mode: one sequence per user, no session cuts.
pub fn user_sequences(events: &[RawEvent]) -> Vec<RawSequence> {
    sessionize(events, i64::MAX)
}

/// Interns the item keys of raw sequences into the catalog.
pub fn intern_sequences(raw: &[RawSequence], catalog: &mut ItemCatalog) -> Vec<Session> {
    raw.iter()
        .map(|seq| Session {
            user: seq.user.clone(),
            items: seq.items.iter().map(|key| catalog.intern(key)).collect(),
        })
        .collect()
}

/// Applies the occurrence and length filters, iterating to a fixed point:
/// items occurring fewer than `min_item_count` times are deleted from every
/// sequence, sequences shorter than `min_seq_len` are dropped, and the pass
/// repeats because dropping sequences lowers the counts.
pub fn filter(
    mut sequences: Vec<Session>,
    min_item_count: usize,
    min_seq_len: usize,
) -> Result<Vec<Session>> {
    assert!(min_item_count >= 1);
    assert!(min_seq_len >= 2);
    loop {
        let mut counts: HashMap<ItemId, usize> = HashMap::new();
        for seq in &sequences {
            for &item in &seq.items {
                *counts.entry(item).or_insert(0) += 1;
            }
        }
        let mut changed = false;
        for seq in &mut sequences {
            let before = seq.items.len();
            seq.items.retain(|item| counts[item] >= min_item_count);
            changed |= seq.items.len() != before;
        }
        let before = sequences.len();
        sequences.retain(|seq| seq.items.len() >= min_seq_len);
        changed |= sequences.len() != before;
        if !changed {
            break;
        }
    }
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(sequences)
}

/// Splits sequences by user: every one of a user's sequences lands on one
/// side. The split is deterministic given the seed; the train side gets
/// `round(users * train_fraction)` users (ties toward train).
pub fn split(
    sequences: Vec<Session>,
    train_fraction: f64,
    seed: u64,
) -> Result<(SessionSet, SessionSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut users: Vec<String> = sequences.iter().map(|s| s.user.clone()).collect();
    users.sort_unstable();
    users.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "split"));
    users.shuffle(&mut rng);
    let n_train = ((users.len() as f64) * train_fraction).round() as usize;
    let train_users: std::collections::HashSet<&str> =
        users[..n_train].iter().map(|u| u.as_str()).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for seq in sequences {
        if train_users.contains(seq.user.as_str()) {
            train.push(seq);
        } else {
            test.push(seq);
        }
    }
    Ok((
        SessionSet::new(train, SplitTag::Train),
        SessionSet::new(test, SplitTag::Test),
    ))
}

/// Writes a session set as JSONL, one `{"user", "items"}` object per line.
pub fn write_sessions(path: &Path, set: &SessionSet, catalog: &ItemCatalog) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        user: &'a str,
        items: Vec<&'a str>,
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for seq in &set.sequences {
        let line = Line {
            user: &seq.user,
            items: seq.items.iter().map(|&id| catalog.key_of(id)).collect(),
        };
        serde_json::to_writer(&mut file, &line)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a session JSONL file, interning item keys into the catalog.
pub fn read_sessions(path: &Path, catalog: &mut ItemCatalog, tag: SplitTag) -> Result<SessionSet> {
    #[derive(Deserialize)]
    struct Line {
        user: String,
        items: Vec<String>,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sequences = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        sequences.push(Session {
            user: parsed.user,
            items: parsed.items.iter().map(|key| catalog.intern(key)).collect(),
        });
    }
    Ok(SessionSet::new(sequences, tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(user: &str, ts: i64, item: &str) -> RawEvent {
        RawEvent {
            user: user.to_string(),
            ts,
            item: item.to_string(),
        }
    }

    fn sessions(specs: &[(&str, &[u32])]) -> Vec<Session> {
        specs
            .iter()
            .map(|(user, items)| Session {
                user: user.to_string(),
                items: items.iter().map(|&i| ItemId::new(i)).collect(),
            })
            .collect()
    }

    #[test]
    fn load_csv_counts_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(&path, "user,ts,item\nu1,30,c\nu2,10,a\nu1,20,b\n").unwrap();
        let events = load_events(&path, EventFormat::Csv).unwrap();
        assert_eq!(events.len(), 3);
        // u1's events are contiguous and time-sorted
        assert_eq!(events[0].item, "b");
        assert_eq!(events[1].item, "c");
        assert_eq!(events[2].item, "a");
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(&path, "user,ts,item\nu1,10,a\nu1,oops,b\n").unwrap();
        let err = load_events(&path, EventFormat::Csv).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");

        let path = dir.path().join("events.jsonl");
        std::fs::write(&path, "{\"user\":\"u1\",\"ts\":10}\n").unwrap();
        let err = load_events(&path, EventFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(&path, "user,ts,item\n").unwrap();
        assert!(load_events(&path, EventFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn sessionize_cuts_at_gap() {
        let two_hours = 2 * 3600;
        let events = vec![
            event("u1", 0, "a"),
            event("u1", 1000, "b"),
            event("u1", 1000 + 3 * 3600, "c"),
        ];
        let seqs = sessionize(&events, two_hours);
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].items, vec!["a", "b"]);
        assert_eq!(seqs[1].items, vec!["c"]);

        // boundary: exactly the gap cuts
        let events = vec![event("u1", 0, "a"), event("u1", two_hours, "b")];
        assert_eq!(sessionize(&events, two_hours).len(), 2);
        // just under does not
        let events = vec![event("u1", 0, "a"), event("u1", two_hours - 1, "b")];
        assert_eq!(sessionize(&events, two_hours).len(), 1);
    }

    #[test]
    fn sessionize_never_mixes_users() {
        let events = group_and_sort(vec![
            event("u1", 0, "a"),
            event("u2", 1, "x"),
            event("u1", 2, "b"),
            event("u2", 3, "y"),
        ]);
        let seqs = sessionize(&events, 3600);
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].items, vec!["a", "b"]);
        assert_eq!(seqs[1].items, vec!["x", "y"]);
    }

    #[test]
    fn filter_removes_rare_items_and_short_users() {
        // item 1 appears once, below threshold 2; user u2 then has a single item
        let seqs = sessions(&[("u1", &[0, 1, 0]), ("u2", &[2, 0]), ("u3", &[2, 2])]);
        let filtered = filter(seqs, 2, 2).unwrap();
        assert_eq!(filtered.len(), 3);
        assert!(filtered.iter().all(|s| !s.items.contains(&ItemId::new(1))));

        // dropping a sequence lowers a count below threshold: fixed point
        let seqs = sessions(&[("u1", &[0]), ("u2", &[0, 1]), ("u3", &[1, 2, 2])]);
        // u1 dropped (len 1) -> item 0 count falls to 1 -> removed from u2 ->
        // u2 dropped -> item 1 count falls to 1 -> removed from u3 -> u3 = [2,2]
        let filtered = filter(seqs, 2, 2).unwrap();
        assert_eq!(filtered, sessions(&[("u3", &[2, 2])]));
    }

    #[test]
    fn filter_is_idempotent_above_thresholds() {
        let seqs = sessions(&[("u1", &[0, 1]), ("u2", &[1, 0])]);
        let filtered = filter(seqs.clone(), 2, 2).unwrap();
        assert_eq!(filtered, seqs);
    }

    #[test]
    fn filter_empty_corpus_errors() {
        let seqs = sessions(&[("u1", &[0, 1])]);
        assert!(matches!(filter(seqs, 100, 2), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn split_partitions_users_deterministically() {
        let mut seqs = Vec::new();
        for u in 0..10 {
            seqs.extend(sessions(&[(format!("user{u}").as_str(), &[0, 1][..])]));
        }
        let (train, test) = split(seqs.clone(), 0.9, 42).unwrap();
        assert_eq!(train.user_count(), 9);
        assert_eq!(test.user_count(), 1);

        let (train2, test2) = split(seqs.clone(), 0.9, 42).unwrap();
        assert_eq!(
            train.sequences.iter().map(|s| &s.user).collect::<Vec<_>>(),
            train2.sequences.iter().map(|s| &s.user).collect::<Vec<_>>()
        );
        assert_eq!(test.sequences[0].user, test2.sequences[0].user);

        let (train3, _) = split(seqs[..8].to_vec(), 0.5, 7).unwrap();
        assert_eq!(train3.user_count(), 4);
    }

    #[test]
    fn sessions_file_round_trip() {
        let mut catalog = ItemCatalog::new();
        let raw = vec![
            RawSequence {
                user: "u1".into(),
                items: vec!["a".into(), "b".into()],
            },
            RawSequence {
                user: "u2".into(),
                items: vec!["b".into(), "c".into()],
            },
        ];
        let set = SessionSet::new(intern_sequences(&raw, &mut catalog), SplitTag::Train);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        write_sessions(&path, &set, &catalog).unwrap();

        let mut catalog2 = ItemCatalog::new();
        let loaded = read_sessions(&path, &mut catalog2, SplitTag::Train).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.sequences[1].user, "u2");
        assert_eq!(
            loaded.sequences[1]
                .items
                .iter()
                .map(|&i| catalog2.key_of(i))
                .collect::<Vec<_>>(),
            vec!["b", "c"]
        );
    }
}
