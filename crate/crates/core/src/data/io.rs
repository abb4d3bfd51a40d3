use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;

use super::{Dataset, Interaction};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const USER_MAP_FILE: &str = "user_ids.csv";
pub const ITEM_MAP_FILE: &str = "item_ids.csv";

/// Bidirectional map between original ids and dense ids `0..n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    originals: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdMap {
    /// Dense ids assigned in ascending original-id order (numeric when every
    /// id parses as an unsigned integer, lexicographic otherwise).
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut unique: Vec<String> = ids
            .into_iter()
            .collect::<HashSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect();
        if unique.iter().all(|s| s.parse::<u64>().is_ok()) {
            unique.sort_by_key(|s| s.parse::<u64>().unwrap_or(0));
        } else {
            unique.sort();
        }
        Self::from_ordered(unique)
    }

    /// Identity map `"0".."n-1"`.
    pub fn identity(n: usize) -> Self {
        Self::from_ordered((0..n).map(|i| i.to_string()).collect())
    }

    fn from_ordered(originals: Vec<String>) -> Self {
        let lookup = originals.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        IdMap { originals, lookup }
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn dense(&self, original: &str) -> Option<usize> {
        self.lookup.get(original).copied()
    }

    pub fn original(&self, dense: usize) -> &str {
        &self.originals[dense]
    }
}

/// A dataset together with the id maps that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub users: IdMap,
    pub items: IdMap,
    pub duplicates_dropped: usize,
}

struct RawRow {
    line: usize,
    user: String,
    item: String,
    timestamp: Option<i64>,
}

fn looks_like_header(fields: &[&str]) -> bool {
    let first = fields[0].trim().to_ascii_lowercase();
    first.starts_with("user") || first == "uid"
}

fn parse_rows(text: &str, path: &Path) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if rows.is_empty() && idx == 0 && looks_like_header(&fields) {
            continue;
        }
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(
                path.display(),
                line_no,
                format!("expected `user_id,item_id[,timestamp]`, got {} fields", fields.len()),
            ));
        }
        let user = fields[0].trim();
        let item = fields[1].trim();
        if user.is_empty() || item.is_empty() {
            return Err(Error::parse(path.display(), line_no, "empty id"));
        }
        let timestamp = match fields.get(2).map(|s| s.trim()) {
            None | Some("") => None,
            Some(ts) => Some(ts.parse::<i64>().map_err(|_| {
                Error::parse(path.display(), line_no, format!("bad timestamp `{ts}`"))
            })?),
        };
        rows.push(RawRow {
            line: line_no,
            user: user.to_owned(),
            item: item.to_owned(),
            timestamp,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(path.display(), 0, "no interactions in file"));
    }
    Ok(rows)
}

fn build(rows: Vec<RawRow>, users: IdMap, items: IdMap, path: &Path) -> Result<LoadedDataset> {
    let mut seen = HashSet::new();
    let mut interactions = Vec::with_capacity(rows.len());
    let mut duplicates = 0;
    for row in rows {
        let user = users.dense(&row.user).ok_or_else(|| {
            Error::parse(path.display(), row.line, format!("user `{}` not in id map", row.user))
        })?;
        let item = items.dense(&row.item).ok_or_else(|| {
            Error::parse(path.display(), row.line, format!("item `{}` not in id map", row.item))
        })?;
        if !seen.insert((user, item)) {
            duplicates += 1;
            continue;
        }
        interactions.push(Interaction {
            user,
            item,
            timestamp: row.timestamp,
        });
    }
    if duplicates > 0 {
        warn!("{}: dropped {duplicates} duplicate interactions", path.display());
    }
    let dataset = Dataset::new(users.len(), items.len(), interactions)?;
    Ok(LoadedDataset {
        dataset,
        users,
        items,
        duplicates_dropped: duplicates,
    })
}

/// Reads `user_id,item_id[,timestamp]` rows and densifies the ids.
pub fn load_interactions(path: &Path) -> Result<LoadedDataset> {
    let text = read_to_string(path)?;
    let rows = parse_rows(&text, path)?;
    let users = IdMap::from_ids(rows.iter().map(|r| r.user.as_str()));
    let items = IdMap::from_ids(rows.iter().map(|r| r.item.as_str()));
    build(rows, users, items, path)
}

pub fn save_interactions(
    path: &Path,
    dataset: &Dataset,
    users: &IdMap,
    items: &IdMap,
) -> Result<()> {
    let mut out = String::from("user_id,item_id\n");
    for it in dataset.interactions() {
        out.push_str(users.original(it.user));
        out.push(',');
        out.push_str(items.original(it.item));
        if let Some(ts) = it.timestamp {
            out.push(',');
            out.push_str(&ts.to_string());
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes `original_id,dense_id` rows.
pub fn save_id_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut out = String::from("original_id,dense_id\n");
    for i in 0..map.len() {
        out.push_str(&format!("{},{i}\n", map.original(i)));
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_id_map(path: &Path) -> Result<IdMap> {
    let text = read_to_string(path)?;
    let mut entries: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || (idx == 0 && line.starts_with("original_id")) {
            continue;
        }
        let (orig, dense) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::parse(path.display(), idx + 1, "expected `original_id,dense_id`"))?;
        let dense: usize = dense
            .trim()
            .parse()
            .map_err(|_| Error::parse(path.display(), idx + 1, format!("bad dense id `{dense}`")))?;
        entries.push((dense, orig.trim().to_owned()));
    }
    entries.sort_by_key(|(d, _)| *d);
    if entries.iter().enumerate().any(|(i, (d, _))| *d != i) {
        return Err(Error::parse(path.display(), 0, "dense ids must cover 0..n exactly once"));
    }
    Ok(IdMap::from_ordered(entries.into_iter().map(|(_, o)| o).collect()))
}

/// Writes interactions plus both id maps into `dir`.
pub fn save_dataset_dir(dir: &Path, loaded: &LoadedDataset) -> Result<()> {
    save_interactions(&dir.join(INTERACTIONS_FILE), &loaded.dataset, &loaded.users, &loaded.items)?;
    save_id_map(&dir.join(USER_MAP_FILE), &loaded.users)?;
    save_id_map(&dir.join(ITEM_MAP_FILE), &loaded.items)
}

/// Loads `dir/interactions.csv`, using persisted id maps when present so
/// that items without interactions keep their dense ids.
pub fn load_dataset_dir(dir: &Path) -> Result<LoadedDataset> {
    let path = dir.join(INTERACTIONS_FILE);
    let user_map = dir.join(USER_MAP_FILE);
    let item_map = dir.join(ITEM_MAP_FILE);
    if !(user_map.exists() && item_map.exists()) {
        return load_interactions(&path);
    }
    let text = read_to_string(&path)?;
    let rows = parse_rows(&text, &path)?;
    build(rows, load_id_map(&user_map)?, load_id_map(&item_map)?, &path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn parses_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        std::fs::write(&p, "0,0\n0,1\n1,0").unwrap();
        let d = load_interactions(&p).unwrap();
        assert_eq!(d.dataset.n_users(), 2);
        assert_eq!(d.dataset.n_items(), 2);
        assert_eq!(d.dataset.interactions().len(), 3);
    }

    #[test]
    fn header_crlf_and_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        std::fs::write(&p, "user_id,item_id,timestamp\r\nalice,x,10\r\nbob,y,\r\n").unwrap();
        let d = load_interactions(&p).unwrap();
        assert_eq!(d.dataset.n_users(), 2);
        assert_eq!(d.dataset.interactions()[0].timestamp, Some(10));
        assert_eq!(d.users.original(0), "alice");
    }

    #[test]
    fn duplicates_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        std::fs::write(&p, "0,0\n0,0\n").unwrap();
        let d = load_interactions(&p).unwrap();
        assert_eq!(d.dataset.interactions().len(), 1);
        assert_eq!(d.duplicates_dropped, 1);
    }

    #[test]
    fn malformed_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        std::fs::write(&p, "0,0\n0\n").unwrap();
        match load_interactions(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "").unwrap();
        assert!(load_interactions(&p).is_err());
        std::fs::write(&p, "0,0,abc\n").unwrap();
        assert!(load_interactions(&p).is_err());
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        let m = IdMap::from_ids(["10", "9", "100"]);
        assert_eq!(m.original(0), "9");
        assert_eq!(m.dense("100"), Some(2));
    }

    #[test]
    fn food_scale_counts() {
        // same shape as a mid-sized catalogue: 6549 users, 1579 items, 39740 rows
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("food.csv");
        let (users, items, rows) = (6549usize, 1579usize, 39740usize);
        let mut text = String::new();
        let mut n = 0;
        'outer: for round in 0.. {
            for u in 0..users {
                let i = (u * 7 + round * 13) % items;
                text.push_str(&format!("{u},{i}\n"));
                n += 1;
                if n == rows {
                    break 'outer;
                }
            }
        }
        // make sure every item shows up at least once
        assert!(rows > items);
        std::fs::write(&p, text).unwrap();
        let d = load_interactions(&p).unwrap();
        assert_eq!(d.dataset.n_users(), users);
        assert_eq!(d.dataset.n_items(), items);
        assert_eq!(d.dataset.interactions().len(), rows);
    }

    #[test]
    fn dataset_dir_round_trips() {
        let spec = SyntheticSpec {
            n_users: 30,
            n_items: 25,
            n_clusters: 3,
            p_in: 0.2,
            p_out: 0.0,
            feature_dim: 4,
            feature_noise: 0.1,
            seed: 3,
        };
        let syn = generate_synthetic(&spec).unwrap();
        let loaded = LoadedDataset {
            dataset: syn.dataset.clone(),
            users: IdMap::identity(30),
            items: IdMap::identity(25),
            duplicates_dropped: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset_dir(dir.path(), &loaded).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.dataset, syn.dataset);
        assert_eq!(back.items, loaded.items);
    }
}
