//! Interaction-log ingestion, filtering, and leave-one-out splitting.
//!
//! Raw logs come in three formats (`csv-uit`, `amazon-ratings`,
//! `lastfm-log`). Filtering drops items with fewer than `min_count`
//! interactions first, then users with fewer than `min_count` remaining
//! interactions, applied once. Sequences are ordered by timestamp with ties
//! broken by file order, then truncated to the most recent `max_len` items.
//!
//! The canonical on-disk format is a header line plus one
//! `user<TAB>item<TAB>timestamp` triple per line with dense ids, alongside
//! an id-map sidecar and a split manifest.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Raw interaction event before indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// Input file formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogFormat {
    /// `user,item,timestamp`
    CsvUit,
    /// `user,item,rating,timestamp` (rating discarded)
    AmazonRatings,
    /// Tab-separated listening events; entity field selectable.
    LastfmLog,
}

impl LogFormat {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "csv-uit" => Ok(LogFormat::CsvUit),
            "amazon-ratings" => Ok(LogFormat::AmazonRatings),
            "lastfm-log" => Ok(LogFormat::LastfmLog),
            other => Err(Error::Config(format!(
                "unknown input format '{other}' (expected csv-uit, amazon-ratings, lastfm-log)"
            ))),
        }
    }
}

/// Which entity a LastFM listening event contributes as the item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LastfmField {
    Artist,
    Track,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub lastfm_field: LastfmField,
    /// Collapse immediately repeated plays of the same item per user.
    pub collapse_repeats: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            lastfm_field: LastfmField::Artist,
            collapse_repeats: false,
        }
    }
}

/// Result of ingesting one file.
#[derive(Debug)]
pub struct LoadedInteractions {
    pub records: Vec<InteractionRecord>,
    pub malformed: usize,
    /// Line numbers (1-based) of the first malformed lines, capped.
    pub malformed_lines: Vec<usize>,
    pub warnings: Vec<String>,
}

const MALFORMED_LINE_CAP: usize = 20;

/// Parse a raw interaction log. Lines that fail to parse are counted;
/// more than 1% malformed lines is a hard failure naming line numbers.
pub fn load_interactions(path: &Path, format: LogFormat, opts: &LoadOptions) -> Result<LoadedInteractions> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut malformed_lines = Vec::new();
    let mut total = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = match format {
            LogFormat::CsvUit => parse_csv_uit(line, total),
            LogFormat::AmazonRatings => parse_amazon(line, total),
            LogFormat::LastfmLog => parse_lastfm(line, total, opts.lastfm_field),
        };
        match parsed {
            Some(rec) => records.push(rec),
            None => {
                malformed += 1;
                if malformed_lines.len() < MALFORMED_LINE_CAP {
                    malformed_lines.push(lineno + 1);
                }
            }
        }
    }
    let mut warnings = Vec::new();
    if total == 0 {
        warnings.push(format!("{}: file contains no interaction lines", path.display()));
    }
    if malformed > 0 && (malformed as f64) > 0.01 * total as f64 {
        return Err(Error::Data(format!(
            "{}: {malformed} of {total} lines malformed (>1%), first bad lines: {:?}",
            path.display(),
            malformed_lines
        )));
    }
    if malformed > 0 {
        warnings.push(format!(
            "{}: skipped {malformed} malformed lines (lines {:?})",
            path.display(),
            malformed_lines
        ));
    }
    if opts.collapse_repeats {
        records = collapse_consecutive_repeats(records);
    }
    Ok(LoadedInteractions {
        records,
        malformed,
        malformed_lines,
        warnings,
    })
}

fn parse_csv_uit(line: &str, order: usize) -> Option<InteractionRecord> {
    let mut it = line.split(',');
    let user = it.next()?.trim();
    let item = it.next()?.trim();
    let ts = it.next().map(str::trim);
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp = match ts {
        Some(t) if !t.is_empty() => t.parse::<f64>().ok()? as i64,
        _ => order as i64,
    };
    Some(InteractionRecord {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

fn parse_amazon(line: &str, _order: usize) -> Option<InteractionRecord> {
    // user,item,rating,timestamp — rating discarded, every row counts as a
    // positive event
    let mut it = line.split(',');
    let user = it.next()?.trim();
    let item = it.next()?.trim();
    let _rating = it.next()?.trim();
    let ts = it.next()?.trim();
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp = ts.parse::<f64>().ok()? as i64;
    Some(InteractionRecord {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

fn parse_lastfm(line: &str, order: usize, field: LastfmField) -> Option<InteractionRecord> {
    // user \t iso-timestamp \t artist-id \t artist-name \t track-id \t track-name
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 4 {
        return None;
    }
    let user = cols[0].trim();
    if user.is_empty() {
        return None;
    }
    let (id_col, name_col) = match field {
        LastfmField::Artist => (2, 3),
        LastfmField::Track => (4, 5),
    };
    let item = cols
        .get(id_col)
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .or_else(|| cols.get(name_col).map(|s| s.trim()).filter(|s| !s.is_empty()))?;
    let timestamp = parse_iso8601(cols[1].trim()).unwrap_or(order as i64);
    Some(InteractionRecord {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

/// Parse `YYYY-MM-DDTHH:MM:SSZ` into epoch seconds.
fn parse_iso8601(s: &str) -> Option<i64> {
    let s = s.strip_suffix('Z').unwrap_or(s);
    let (date, time) = s.split_once('T')?;
    let mut d = date.split('-');
    let year: i64 = d.next()?.parse().ok()?;
    let month: i64 = d.next()?.parse().ok()?;
    let day: i64 = d.next()?.parse().ok()?;
    let mut t = time.split(':');
    let hour: i64 = t.next()?.parse().ok()?;
    let min: i64 = t.next()?.parse().ok()?;
    let sec: i64 = t.next()?.parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    // days-from-civil (Howard Hinnant's algorithm)
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146_097 + doe - 719_468;
    Some(days * 86_400 + hour * 3_600 + min * 60 + sec)
}

fn collapse_consecutive_repeats(records: Vec<InteractionRecord>) -> Vec<InteractionRecord> {
    let mut last_per_user: HashMap<String, String> = HashMap::new();
    records
        .into_iter()
        .filter(|r| {
            let prev = last_per_user.insert(r.user_id.clone(), r.item_id.clone());
            prev.as_deref() != Some(r.item_id.as_str())
        })
        .collect()
}

/// Corpus statistics matching the dataset-table convention
/// (density = interactions / (users * items), in percent).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density_percent: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} users, {} items, {} interactions, density {:.2}%",
            self.users, self.items, self.interactions, self.density_percent
        )
    }
}

/// Id-mapped per-user chronological item sequences.
#[derive(Clone, Debug)]
pub struct SequenceDataset {
    /// Raw user id per dense user id.
    pub user_ids: Vec<String>,
    /// Raw item id per dense item id.
    pub item_ids: Vec<String>,
    /// Per-user chronological item sequences (dense ids).
    pub sequences: Vec<Vec<usize>>,
    /// Per-user timestamps aligned with `sequences`.
    pub times: Vec<Vec<i64>>,
    pub stats: DatasetStats,
}

impl SequenceDataset {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Recompute stats from the stored sequences.
    pub fn recompute_stats(&self) -> DatasetStats {
        let interactions: usize = self.sequences.iter().map(Vec::len).sum();
        stats_from(self.user_ids.len(), self.item_ids.len(), interactions)
    }
}

fn stats_from(users: usize, items: usize, interactions: usize) -> DatasetStats {
    let density = if users == 0 || items == 0 {
        0.0
    } else {
        100.0 * interactions as f64 / (users as f64 * items as f64)
    };
    DatasetStats {
        users,
        items,
        interactions,
        density_percent: density,
    }
}

/// Apply min-count filtering, chronological ordering, and truncation.
pub fn build_dataset(records: &[InteractionRecord], min_count: usize, max_len: usize) -> Result<SequenceDataset> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be >= 1".into()));
    }
    if max_len < 3 {
        return Err(Error::Config("max_len must be >= 3".into()));
    }

    // pass 1: item interaction counts
    let mut item_counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *item_counts.entry(r.item_id.as_str()).or_insert(0) += 1;
    }
    // pass 2: user counts over surviving items
    let mut user_counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        if item_counts[r.item_id.as_str()] >= min_count {
            *user_counts.entry(r.user_id.as_str()).or_insert(0) += 1;
        }
    }

    // dense ids in first-appearance order over the filtered stream
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut events: Vec<(usize, usize, i64, usize)> = Vec::new(); // (user, item, ts, file order)
    for (order, r) in records.iter().enumerate() {
        if item_counts[r.item_id.as_str()] < min_count {
            continue;
        }
        if user_counts.get(r.user_id.as_str()).copied().unwrap_or(0) < min_count {
            continue;
        }
        let u = match user_index.get(r.user_id.as_str()) {
            Some(&u) => u,
            None => {
                user_ids.push(r.user_id.clone());
                let u = user_ids.len() - 1;
                user_index.insert(&records[order].user_id, u);
                u
            }
        };
        let i = match item_index.get(r.item_id.as_str()) {
            Some(&i) => i,
            None => {
                item_ids.push(r.item_id.clone());
                let i = item_ids.len() - 1;
                item_index.insert(&records[order].item_id, i);
                i
            }
        };
        events.push((u, i, r.timestamp, order));
    }

    if user_ids.len() < 2 {
        return Err(Error::Data(format!(
            "only {} users survive filtering (min_count {min_count}); need at least 2",
            user_ids.len()
        )));
    }

    let mut per_user: Vec<Vec<(i64, usize, usize)>> = vec![Vec::new(); user_ids.len()];
    for (u, i, ts, order) in events {
        per_user[u].push((ts, order, i));
    }
    let mut sequences = Vec::with_capacity(user_ids.len());
    let mut times = Vec::with_capacity(user_ids.len());
    for entries in &mut per_user {
        // timestamp order; ties broken by file order
        entries.sort_by_key(|&(ts, order, _)| (ts, order));
        let start = entries.len().saturating_sub(max_len);
        sequences.push(entries[start..].iter().map(|&(_, _, i)| i).collect::<Vec<_>>());
        times.push(entries[start..].iter().map(|&(ts, _, _)| ts).collect::<Vec<_>>());
    }

    let interactions: usize = sequences.iter().map(Vec::len).sum();
    let stats = stats_from(user_ids.len(), item_ids.len(), interactions);
    Ok(SequenceDataset {
        user_ids,
        item_ids,
        sequences,
        times,
        stats,
    })
}

/// Per-user leave-one-out assignment. The chronologically last item is the
/// test target, the second-to-last the validation target, everything before
/// is the training prefix. At test time the input includes the validation
/// item.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitEntry {
    pub train: Vec<usize>,
    pub valid_target: usize,
    pub test_target: usize,
}

#[derive(Clone, Debug)]
pub struct Split {
    /// One entry per dense user id; `None` for dropped users.
    pub users: Vec<Option<SplitEntry>>,
    pub dropped: usize,
}

impl Split {
    pub fn entry(&self, user: usize) -> Option<&SplitEntry> {
        self.users[user].as_ref()
    }

    /// The input sequence used when ranking the test target.
    pub fn test_input(&self, user: usize) -> Option<Vec<usize>> {
        self.users[user].as_ref().map(|e| {
            let mut input = e.train.clone();
            input.push(e.valid_target);
            input
        })
    }
}

/// Split every sequence; users shorter than 3 are dropped and counted.
pub fn leave_one_out_split(dataset: &SequenceDataset) -> Split {
    let mut users = Vec::with_capacity(dataset.sequences.len());
    let mut dropped = 0usize;
    for seq in &dataset.sequences {
        if seq.len() < 3 {
            users.push(None);
            dropped += 1;
            continue;
        }
        let n = seq.len();
        users.push(Some(SplitEntry {
            train: seq[..n - 2].to_vec(),
            valid_target: seq[n - 2],
            test_target: seq[n - 1],
        }));
    }
    Split { users, dropped }
}

/// One training sample: a history prefix and the next item to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSample {
    pub user: usize,
    /// History is `train[..prefix_len]`, target is `train[prefix_len]`.
    pub prefix_len: usize,
}

/// Expand every training prefix recurrently into (history, target) samples.
pub fn train_samples(split: &Split) -> Vec<TrainSample> {
    let mut samples = Vec::new();
    for (user, entry) in split.users.iter().enumerate() {
        let Some(entry) = entry else { continue };
        for prefix_len in 1..entry.train.len() {
            samples.push(TrainSample { user, prefix_len });
        }
    }
    samples
}

// ---- canonical on-disk format ---------------------------------------------

const DATASET_FILE: &str = "dataset.tsv";
const IDMAP_FILE: &str = "id_map.tsv";
const SPLIT_FILE: &str = "split.tsv";

/// Write dataset + id map + split manifest into `dir`.
pub fn save_canonical(dataset: &SequenceDataset, split: &Split, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stats = &dataset.stats;
    let mut data = format!(
        "# adasplit-dataset v1 users={} items={} interactions={} density={:.4}\n",
        stats.users, stats.items, stats.interactions, stats.density_percent
    );
    for (u, (seq, ts)) in dataset.sequences.iter().zip(dataset.times.iter()).enumerate() {
        for (i, t) in seq.iter().zip(ts.iter()) {
            data.push_str(&format!("{u}\t{i}\t{t}\n"));
        }
    }
    fs::write(dir.join(DATASET_FILE), data)?;

    let mut idmap = String::from("# adasplit-idmap v1\n");
    for (dense, raw) in dataset.user_ids.iter().enumerate() {
        idmap.push_str(&format!("user\t{dense}\t{raw}\n"));
    }
    for (dense, raw) in dataset.item_ids.iter().enumerate() {
        idmap.push_str(&format!("item\t{dense}\t{raw}\n"));
    }
    fs::write(dir.join(IDMAP_FILE), idmap)?;

    let mut manifest = String::from("# adasplit-split v1 user\ttrain_len\tvalid\ttest\n");
    for (u, entry) in split.users.iter().enumerate() {
        match entry {
            Some(e) => manifest.push_str(&format!(
                "{u}\t{}\t{}\t{}\n",
                e.train.len(),
                e.valid_target,
                e.test_target
            )),
            None => manifest.push_str(&format!("{u}\tdropped\t-\t-\n")),
        }
    }
    fs::write(dir.join(SPLIT_FILE), manifest)?;
    Ok(())
}

/// Read back a canonical dataset directory. No filtering is reapplied.
pub fn load_canonical(dir: &Path) -> Result<(SequenceDataset, Split)> {
    let data_path = dir.join(DATASET_FILE);
    let text = fs::read_to_string(&data_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", data_path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty canonical dataset".into()))?;
    if !header.starts_with("# adasplit-dataset v1") {
        return Err(Error::Data(format!("bad canonical header: {header}")));
    }

    let idmap_text = fs::read_to_string(dir.join(IDMAP_FILE))
        .map_err(|e| Error::Data(format!("cannot read id map: {e}")))?;
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    for line in idmap_text.lines().skip(1) {
        let mut it = line.split('\t');
        match (it.next(), it.next(), it.next()) {
            (Some("user"), Some(_), Some(raw)) => user_ids.push(raw.to_string()),
            (Some("item"), Some(_), Some(raw)) => item_ids.push(raw.to_string()),
            _ => return Err(Error::Data(format!("bad id map line: {line}"))),
        }
    }

    let mut sequences = vec![Vec::new(); user_ids.len()];
    let mut times = vec![Vec::new(); user_ids.len()];
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let u: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("bad dataset line: {line}")))?;
        let i: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("bad dataset line: {line}")))?;
        let t: i64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("bad dataset line: {line}")))?;
        if u >= user_ids.len() || i >= item_ids.len() {
            return Err(Error::Data(format!("dense id out of range: {line}")));
        }
        sequences[u].push(i);
        times[u].push(t);
    }
    let interactions: usize = sequences.iter().map(Vec::len).sum();
    let stats = stats_from(user_ids.len(), item_ids.len(), interactions);
    let dataset = SequenceDataset {
        user_ids,
        item_ids,
        sequences,
        times,
        stats,
    };
    let split = leave_one_out_split(&dataset);
    Ok((dataset, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpfile(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("adasplit_dataio_tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn rec(u: &str, i: &str, t: i64) -> InteractionRecord {
        InteractionRecord {
            user_id: u.to_string(),
            item_id: i.to_string(),
            timestamp: t,
        }
    }

    #[test]
    fn csv_uit_three_lines() {
        let path = tmpfile("three.csv", "u1,i1,1\nu1,i2,2\nu2,i1,3\n");
        let loaded = load_interactions(&path, LogFormat::CsvUit, &LoadOptions::default()).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.malformed, 0);
        assert_eq!(loaded.records[0], rec("u1", "i1", 1));
    }

    #[test]
    fn empty_file_warns() {
        let path = tmpfile("empty.csv", "");
        let loaded = load_interactions(&path, LogFormat::CsvUit, &LoadOptions::default()).unwrap();
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn malformed_over_one_percent_fails_with_line_numbers() {
        let mut contents = String::new();
        for k in 0..50 {
            contents.push_str(&format!("u{k},i{k},{k}\n"));
        }
        contents.push_str("garbage-line\n");
        let path = tmpfile("bad.csv", &contents);
        let err = load_interactions(&path, LogFormat::CsvUit, &LoadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("51"), "should name the bad line: {msg}");
    }

    #[test]
    fn amazon_rating_is_discarded() {
        let path = tmpfile("az.csv", "u1,i1,5.0,100\nu1,i2,1.0,200\n");
        let loaded = load_interactions(&path, LogFormat::AmazonRatings, &LoadOptions::default()).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.records[1].timestamp, 200);
    }

    #[test]
    fn lastfm_fields_and_iso_timestamps() {
        let line1 = "user_000001\t2009-05-04T23:08:57Z\tartid1\tArtist One\ttrackid1\tTrack One\n";
        let line2 = "user_000001\t2009-05-04T23:10:00Z\t\tArtist Two\t\tTrack Two\n";
        let path = tmpfile("lastfm.tsv", &format!("{line1}{line2}"));
        let loaded = load_interactions(&path, LogFormat::LastfmLog, &LoadOptions::default()).unwrap();
        assert_eq!(loaded.records[0].item_id, "artid1");
        // missing artist id falls back to the name column
        assert_eq!(loaded.records[1].item_id, "Artist Two");
        assert!(loaded.records[1].timestamp > loaded.records[0].timestamp);

        let opts = LoadOptions {
            lastfm_field: LastfmField::Track,
            ..LoadOptions::default()
        };
        let loaded = load_interactions(&path, LogFormat::LastfmLog, &opts).unwrap();
        assert_eq!(loaded.records[0].item_id, "trackid1");
    }

    #[test]
    fn iso8601_epoch_sanity() {
        assert_eq!(parse_iso8601("1970-01-01T00:00:00Z"), Some(0));
        assert_eq!(parse_iso8601("1970-01-02T00:00:01Z"), Some(86_401));
        // 2009-05-04T23:08:57Z, cross-checked externally
        assert_eq!(parse_iso8601("2009-05-04T23:08:57Z"), Some(1_241_478_537));
    }

    #[test]
    fn collapse_repeats_flag() {
        let recs = vec![rec("u", "a", 1), rec("u", "a", 2), rec("u", "b", 3), rec("u", "a", 4)];
        let collapsed = collapse_consecutive_repeats(recs);
        let items: Vec<&str> = collapsed.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(items, vec!["a", "b", "a"]);
    }

    fn synthetic_records() -> Vec<InteractionRecord> {
        // two solid users over three common items, one item below min_count
        let mut records = Vec::new();
        for t in 0..10 {
            records.push(rec("alice", &format!("i{}", t % 3), t));
        }
        for t in 0..10 {
            records.push(rec("bob", &format!("i{}", t % 3), 100 + t));
        }
        // item "rare" appears 4 times -> dropped at min_count 5
        for t in 0..4 {
            records.push(rec("alice", "rare", 200 + t));
        }
        records
    }

    #[test]
    fn item_below_min_count_is_dropped() {
        let dataset = build_dataset(&synthetic_records(), 5, 50).unwrap();
        assert!(!dataset.item_ids.iter().any(|i| i == "rare"));
        assert_eq!(dataset.stats.users, 2);
        assert_eq!(dataset.stats.items, 3);
        assert_eq!(dataset.stats.interactions, 20);
    }

    #[test]
    fn user_filter_counts_remaining_interactions() {
        let mut records = synthetic_records();
        for t in 0..5 {
            records.push(rec("carol", "rare2", 30 + t));
        }
        // rare2 appears 5 times, so it survives as an item and carol stays
        let dataset = build_dataset(&records, 5, 50).unwrap();
        assert_eq!(dataset.stats.users, 3);
        // but with min_count 6 the item goes and carol has no interactions
        let dataset = build_dataset(&records, 6, 50).unwrap();
        assert!(!dataset.user_ids.iter().any(|u| u == "carol"));
    }

    #[test]
    fn too_few_users_is_hard_failure() {
        let records: Vec<_> = (0..6).map(|t| rec("solo", "i0", t)).collect();
        let err = build_dataset(&records, 5, 50).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let records: Vec<_> = (0..8)
            .flat_map(|t| vec![rec("u1", &format!("i{t}"), t), rec("u2", &format!("i{t}"), t)])
            .collect();
        let dataset = build_dataset(&records, 1, 3).unwrap();
        let u1 = &dataset.sequences[0];
        assert_eq!(u1.len(), 3);
        let names: Vec<&str> = u1.iter().map(|&i| dataset.item_ids[i].as_str()).collect();
        assert_eq!(names, vec!["i5", "i6", "i7"]);
    }

    #[test]
    fn timestamp_ties_break_by_file_order() {
        let records = vec![
            rec("u1", "a", 5),
            rec("u1", "b", 5),
            rec("u1", "c", 5),
            rec("u2", "a", 1),
            rec("u2", "b", 1),
            rec("u2", "c", 1),
        ];
        let dataset = build_dataset(&records, 1, 10).unwrap();
        let names: Vec<&str> = dataset.sequences[0]
            .iter()
            .map(|&i| dataset.item_ids[i].as_str())
            .collect();
        assert_eq!(names, vec!["a", "b", "c"]);
    }

    #[test]
    fn split_protocol_matches_definition() {
        // sequence (a,b,c,d): train (a,b), valid c, test d (input a,b,c)
        let records: Vec<_> = ["a", "b", "c", "d"]
            .iter()
            .enumerate()
            .map(|(t, i)| rec("u1", i, t as i64))
            .chain(
                ["a", "b", "c"]
                    .iter()
                    .enumerate()
                    .map(|(t, i)| rec("u2", i, t as i64)),
            )
            .collect();
        let dataset = build_dataset(&records, 1, 10).unwrap();
        let split = leave_one_out_split(&dataset);
        let e1 = split.entry(0).unwrap();
        assert_eq!(e1.train.len(), 2);
        let name = |i: usize| dataset.item_ids[i].as_str();
        assert_eq!(name(e1.train[0]), "a");
        assert_eq!(name(e1.train[1]), "b");
        assert_eq!(name(e1.valid_target), "c");
        assert_eq!(name(e1.test_target), "d");
        let test_input = split.test_input(0).unwrap();
        assert_eq!(test_input.len(), 3);
        assert_eq!(name(test_input[2]), "c");

        // sequence (a,b,c): train (a), valid b, test c
        let e2 = split.entry(1).unwrap();
        assert_eq!(e2.train.len(), 1);
        assert_eq!(name(e2.valid_target), "b");
        assert_eq!(name(e2.test_target), "c");
    }

    #[test]
    fn short_sequences_are_dropped_with_count() {
        let records = vec![
            rec("u1", "a", 0),
            rec("u1", "b", 1),
            rec("u2", "a", 0),
            rec("u2", "b", 1),
            rec("u2", "c", 2),
        ];
        let dataset = build_dataset(&records, 1, 10).unwrap();
        let split = leave_one_out_split(&dataset);
        assert_eq!(split.dropped, 1);
        assert!(split.entry(0).is_none());
        assert!(split.entry(1).is_some());
    }

    #[test]
    fn train_sample_expansion() {
        // prefix (a,b,c) -> samples [(a)->b, (a,b)->c]
        let records: Vec<_> = ["a", "b", "c", "v", "t"]
            .iter()
            .enumerate()
            .flat_map(|(t, i)| vec![rec("u1", i, t as i64), rec("u2", i, t as i64)])
            .collect();
        let dataset = build_dataset(&records, 1, 10).unwrap();
        let split = leave_one_out_split(&dataset);
        let samples = train_samples(&split);
        let u1: Vec<_> = samples.iter().filter(|s| s.user == 0).collect();
        assert_eq!(u1.len(), 2);
        assert_eq!(u1[0].prefix_len, 1);
        assert_eq!(u1[1].prefix_len, 2);
    }

    #[test]
    fn no_temporal_leakage() {
        let records: Vec<_> = (0..2)
            .flat_map(|u| (0..7).map(move |t| rec(&format!("u{u}"), &format!("i{t}"), t)))
            .collect();
        let dataset = build_dataset(&records, 1, 10).unwrap();
        let split = leave_one_out_split(&dataset);
        for entry in split.users.iter().flatten() {
            // neither held-out target appears in the training prefix
            assert!(!entry.train.contains(&entry.valid_target));
            assert!(!entry.train.contains(&entry.test_target));
        }
    }

    #[test]
    fn canonical_round_trip_reproduces_stats_and_splits() {
        let dataset = build_dataset(&synthetic_records(), 1, 50).unwrap();
        let split = leave_one_out_split(&dataset);
        let dir = std::env::temp_dir().join("adasplit_canonical_test");
        save_canonical(&dataset, &split, &dir).unwrap();
        let (reloaded, resplit) = load_canonical(&dir).unwrap();
        assert_eq!(reloaded.stats, dataset.stats);
        assert_eq!(reloaded.sequences, dataset.sequences);
        for (a, b) in split.users.iter().zip(resplit.users.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stats_recomputed_equal_stored() {
        let dataset = build_dataset(&synthetic_records(), 5, 50).unwrap();
        assert_eq!(dataset.recompute_stats(), dataset.stats);
    }

    #[test]
    fn refiltering_unbounded_output_is_idempotent() {
        let dataset = build_dataset(&synthetic_records(), 5, usize::MAX).unwrap();
        // feed the retained interactions back through the same filter
        let mut replay = Vec::new();
        for (u, (seq, ts)) in dataset.sequences.iter().zip(dataset.times.iter()).enumerate() {
            for (i, t) in seq.iter().zip(ts.iter()) {
                replay.push(rec(&dataset.user_ids[u], &dataset.item_ids[*i], *t));
            }
        }
        let again = build_dataset(&replay, 5, usize::MAX).unwrap();
        assert_eq!(again.stats, dataset.stats);
    }
}
