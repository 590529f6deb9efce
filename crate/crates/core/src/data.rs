//! Rating files, index remapping, train/test split and dataset statistics.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f64,
    pub split: Split,
}

/// Parse options for delimited rating files.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Column separator. Any whitespace character means "split on runs of whitespace".
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: ',',
            has_header: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserProfile {
    pub user_index: u32,
    pub train_rating_count: usize,
}

/// Sparse user/item/rating triples with dense 0-based indices.
///
/// Raw ids are kept in first-appearance order so that `user_ids()[u]` is the
/// external id of internal user `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    ratings: Vec<Rating>,
    score_min: f64,
    score_max: f64,
}

pub fn load_ratings(path: impl AsRef<Path>, options: &LoadOptions) -> Result<RatingsDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    RatingsDataset::from_reader(BufReader::new(file), options).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn split_fields(line: &str, delimiter: char) -> Vec<&str> {
    if delimiter.is_whitespace() {
        line.split_whitespace().collect()
    } else {
        line.split(delimiter).map(str::trim).collect()
    }
}

impl RatingsDataset {
    pub fn from_reader<R: BufRead>(reader: R, options: &LoadOptions) -> Result<Self> {
        let mut user_map: HashMap<String, u32> = HashMap::new();
        let mut item_map: HashMap<String, u32> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut ratings: Vec<Rating> = Vec::new();
        let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
        let mut duplicates = 0usize;

        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<input>", e))?;
            let line_no = lineno + 1;
            if lineno == 0 && options.has_header {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields = split_fields(&line, options.delimiter);
            if fields.len() < 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected at least 3 columns, found {}", fields.len()),
                });
            }
            let value: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse rating {:?}", fields[2]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite rating {:?}", fields[2]),
                });
            }
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty user or item id".to_string(),
                });
            }
            let user = intern(&mut user_map, &mut user_ids, fields[0]);
            let item = intern(&mut item_map, &mut item_ids, fields[1]);
            match seen.get(&(user, item)) {
                Some(&pos) => {
                    duplicates += 1;
                    ratings[pos].value = value;
                }
                None => {
                    seen.insert((user, item), ratings.len());
                    ratings.push(Rating {
                        user,
                        item,
                        value,
                        split: Split::Train,
                    });
                }
            }
        }
        if duplicates > 0 {
            warn!("{duplicates} duplicate (user, item) rows; kept the last occurrence of each");
        }
        Self::from_parts(user_ids, item_ids, ratings)
    }

    /// Builds a dataset from already-indexed triples; raw ids become the decimal indices.
    pub fn from_triples(
        users: usize,
        items: usize,
        triples: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut seen = HashMap::new();
        let mut ratings = Vec::with_capacity(triples.len());
        for &(u, i, value) in triples {
            if u >= users {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: u,
                    len: users,
                });
            }
            if i >= items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: i,
                    len: items,
                });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("rating for ({u}, {i})")));
            }
            let rating = Rating {
                user: u as u32,
                item: i as u32,
                value,
                split: Split::Train,
            };
            match seen.get(&(u, i)) {
                Some(&pos) => ratings[pos] = rating,
                None => {
                    seen.insert((u, i), ratings.len());
                    ratings.push(rating);
                }
            }
        }
        let user_ids = (0..users).map(|u| u.to_string()).collect();
        let item_ids = (0..items).map(|i| i.to_string()).collect();
        Self::from_parts(user_ids, item_ids, ratings)
    }

    fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        ratings: Vec<Rating>,
    ) -> Result<Self> {
        if ratings.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (score_min, score_max) = ratings
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.value), hi.max(r.value))
            });
        Ok(RatingsDataset {
            user_ids,
            item_ids,
            ratings,
            score_min,
            score_max,
        })
    }

    pub fn users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn score_min(&self) -> f64 {
        self.score_min
    }

    pub fn score_max(&self) -> f64 {
        self.score_max
    }

    pub fn train(&self) -> impl Iterator<Item = &Rating> + '_ {
        self.ratings.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Rating> + '_ {
        self.ratings.iter().filter(|r| r.split == Split::Test)
    }

    pub fn has_test_split(&self) -> bool {
        self.ratings.iter().any(|r| r.split == Split::Test)
    }

    /// Per-user random split.
    ///
    /// Each user's ratings are shuffled with one seeded stream (users visited
    /// in index order) and the last `ceil(test_fraction * n)` are tagged test.
    /// At least one rating per user always stays in train.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<RatingsDataset> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); self.users()];
        for (pos, r) in self.ratings.iter().enumerate() {
            by_user[r.user as usize].push(pos);
        }
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for positions in &mut by_user {
            positions.shuffle(&mut rng);
            let n = positions.len();
            let n_test = if n <= 1 {
                0
            } else {
                // the epsilon absorbs products like 0.2 * 15 = 3.0000000000000004
                ((test_fraction * n as f64 - 1e-9).ceil() as usize).min(n - 1)
            };
            for (k, &pos) in positions.iter().enumerate() {
                out.ratings[pos].split = if k >= n - n_test {
                    Split::Test
                } else {
                    Split::Train
                };
            }
        }
        Ok(out)
    }

    /// Copy with an explicit split: ratings matching `is_test` go to test, the rest to train.
    pub fn with_test<F: Fn(&Rating) -> bool>(&self, is_test: F) -> RatingsDataset {
        let mut out = self.clone();
        for r in &mut out.ratings {
            r.split = if is_test(r) {
                Split::Test
            } else {
                Split::Train
            };
        }
        out
    }

    /// Percentage of the user x item matrix without a rating.
    pub fn sparsity(&self) -> f64 {
        let cells = self.users() as f64 * self.items() as f64;
        100.0 * (1.0 - self.ratings.len() as f64 / cells)
    }

    pub fn train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.users()];
        for r in self.train() {
            counts[r.user as usize] += 1;
        }
        counts
    }

    pub fn user_profiles(&self) -> Vec<UserProfile> {
        self.train_counts()
            .into_iter()
            .enumerate()
            .map(|(u, c)| UserProfile {
                user_index: u as u32,
                train_rating_count: c,
            })
            .collect()
    }

    pub fn mean_train_rating(&self) -> Option<f64> {
        let (sum, n) = self
            .train()
            .fold((0.0, 0usize), |(s, n), r| (s + r.value, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn stats(&self) -> DatasetStats {
        let test = self.test().count();
        DatasetStats {
            users: self.users(),
            items: self.items(),
            ratings: self.ratings.len(),
            train: self.ratings.len() - test,
            test,
            score_min: self.score_min,
            score_max: self.score_max,
            sparsity: self.sparsity(),
        }
    }

    /// User/item counts plus a digest over every rating and its split tag.
    pub fn fingerprint(&self) -> DatasetFingerprint {
        let mut hasher = Sha256::new();
        for r in &self.ratings {
            hasher.update(r.user.to_le_bytes());
            hasher.update(r.item.to_le_bytes());
            hasher.update(r.value.to_bits().to_le_bytes());
            hasher.update([matches!(r.split, Split::Test) as u8]);
        }
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        DatasetFingerprint {
            users: self.users(),
            items: self.items(),
            checksum: u64::from_le_bytes(word),
        }
    }

    /// Writes `user<delim>item<delim>rating` lines with the original raw ids.
    pub fn write_ratings<W: Write>(&self, mut out: W, delimiter: char) -> std::io::Result<()> {
        for r in &self.ratings {
            writeln!(
                out,
                "{}{delimiter}{}{delimiter}{}",
                self.user_ids[r.user as usize], self.item_ids[r.item as usize], r.value
            )?;
        }
        Ok(())
    }

    pub fn test_index(&self) -> TestIndex {
        TestIndex::new(self)
    }
}

fn intern(map: &mut HashMap<String, u32>, ids: &mut Vec<String>, raw: &str) -> u32 {
    if let Some(&idx) = map.get(raw) {
        return idx;
    }
    let idx = ids.len() as u32;
    map.insert(raw.to_string(), idx);
    ids.push(raw.to_string());
    idx
}

/// Lookup structure over the test split.
#[derive(Debug, Clone)]
pub struct TestIndex {
    raters: Vec<Vec<u32>>,
    values: HashMap<(u32, u32), f64>,
}

impl TestIndex {
    fn new(dataset: &RatingsDataset) -> Self {
        let mut raters = vec![Vec::new(); dataset.items()];
        let mut values = HashMap::new();
        for r in dataset.test() {
            raters[r.item as usize].push(r.user);
            values.insert((r.user, r.item), r.value);
        }
        for list in &mut raters {
            list.sort_unstable();
        }
        TestIndex { raters, values }
    }

    /// Users with a test rating for `item`, ascending.
    pub fn raters(&self, item: u32) -> &[u32] {
        self.raters
            .get(item as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn rating(&self, user: u32, item: u32) -> Option<f64> {
        self.values.get(&(user, item)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DatasetFingerprint {
    pub users: usize,
    pub items: usize,
    pub checksum: u64,
}

impl fmt::Display for DatasetFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} items={} checksum={:016x}",
            self.users, self.items, self.checksum
        )
    }
}

impl std::str::FromStr for DatasetFingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut users = None;
        let mut items = None;
        let mut checksum = None;
        for part in s.split_whitespace() {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::GroupsFile(format!("bad fingerprint field {part:?}")))?;
            let bad = || Error::GroupsFile(format!("bad fingerprint value {part:?}"));
            match key {
                "users" => users = Some(value.parse().map_err(|_| bad())?),
                "items" => items = Some(value.parse().map_err(|_| bad())?),
                "checksum" => checksum = Some(u64::from_str_radix(value, 16).map_err(|_| bad())?),
                _ => {}
            }
        }
        match (users, items, checksum) {
            (Some(users), Some(items), Some(checksum)) => Ok(DatasetFingerprint {
                users,
                items,
                checksum,
            }),
            _ => Err(Error::GroupsFile(format!("incomplete fingerprint {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub train: usize,
    pub test: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub sparsity: f64,
}

impl DatasetStats {
    /// Aligned human-readable block followed by `key=value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("users", self.users.to_string()),
            ("items", self.items.to_string()),
            ("ratings", self.ratings.to_string()),
            (
                "scores",
                format!("{} to {}", self.score_min, self.score_max),
            ),
            ("sparsity", format!("{:.2}%", self.sparsity)),
        ];
        for (k, v) in rows {
            s.push_str(&format!("{k:<10}{v:>16}\n"));
        }
        s.push_str(&format!("users={}\n", self.users));
        s.push_str(&format!("items={}\n", self.items));
        s.push_str(&format!("ratings={}\n", self.ratings));
        s.push_str(&format!("train={}\n", self.train));
        s.push_str(&format!("test={}\n", self.test));
        s.push_str(&format!("score_min={}\n", self.score_min));
        s.push_str(&format!("score_max={}\n", self.score_max));
        s.push_str(&format!("sparsity={:.4}\n", self.sparsity));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RatingsDataset> {
        RatingsDataset::from_reader(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn three_rows() {
        let ds = parse("1,10,4.0\n1,11,3.0\n2,10,5.0\n").unwrap();
        assert_eq!(ds.users(), 2);
        assert_eq!(ds.items(), 2);
        assert_eq!(ds.ratings().len(), 3);
        assert_eq!(ds.ratings()[2].value, 5.0);
        assert_eq!(ds.user_ids(), &["1".to_string(), "2".to_string()]);
        assert_eq!(ds.sparsity(), 25.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(Error::EmptyDataset)));
        assert!(matches!(parse("\n\n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn bad_row_reports_line_number() {
        match parse("1,10,4.0\n1,11,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse("1,10\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_and_extra_columns() {
        let opts = LoadOptions {
            delimiter: ',',
            has_header: true,
        };
        let ds =
            RatingsDataset::from_reader("user,item,rating,ts\n7,3,2.5,9999\n".as_bytes(), &opts)
                .unwrap();
        assert_eq!(ds.ratings().len(), 1);
        assert_eq!(ds.ratings()[0].value, 2.5);
    }

    #[test]
    fn whitespace_delimiter() {
        let opts = LoadOptions {
            delimiter: ' ',
            has_header: false,
        };
        let ds = RatingsDataset::from_reader("1  1 2.0\n1\t2   4\n".as_bytes(), &opts).unwrap();
        assert_eq!(ds.ratings().len(), 2);
        assert_eq!(ds.score_min(), 2.0);
        assert_eq!(ds.score_max(), 4.0);
    }

    #[test]
    fn duplicate_keeps_last() {
        let ds = parse("1,10,4.0\n1,10,2.0\n").unwrap();
        assert_eq!(ds.ratings().len(), 1);
        assert_eq!(ds.ratings()[0].value, 2.0);
    }

    #[test]
    fn dense_sparsity_is_zero() {
        let ds = parse("a,b,1\n").unwrap();
        assert_eq!(ds.sparsity(), 0.0);
    }

    #[test]
    fn split_ten_ratings() {
        let triples: Vec<_> = (0..10).map(|i| (0, i, 1.0 + i as f64)).collect();
        let ds = RatingsDataset::from_triples(1, 10, &triples).unwrap();
        let a = ds.split(0.2, 17).unwrap();
        assert_eq!(a.test().count(), 2);
        assert_eq!(a.train().count(), 8);
        let b = ds.split(0.2, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_fifteen_uses_exact_ceiling() {
        let triples: Vec<_> = (0..15).map(|i| (0, i, 1.0)).collect();
        let ds = RatingsDataset::from_triples(1, 15, &triples).unwrap();
        assert_eq!(ds.split(0.2, 1).unwrap().test().count(), 3);
    }

    #[test]
    fn single_rating_user_stays_in_train() {
        let ds = RatingsDataset::from_triples(
            2,
            3,
            &[(0, 0, 1.0), (1, 0, 2.0), (1, 1, 3.0), (1, 2, 4.0)],
        )
        .unwrap();
        let s = ds.split(0.5, 3).unwrap();
        let user0: Vec<_> = s.ratings().iter().filter(|r| r.user == 0).collect();
        assert_eq!(user0[0].split, Split::Train);
        assert_eq!(s.train_counts()[1], 1);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = parse("1,1,1\n").unwrap();
        assert!(ds.split(0.0, 1).is_err());
        assert!(ds.split(1.0, 1).is_err());
    }

    #[test]
    fn fingerprint_roundtrip_and_sensitivity() {
        let ds = parse("1,10,4.0\n1,11,3.0\n2,10,5.0\n").unwrap();
        let fp = ds.fingerprint();
        let parsed: DatasetFingerprint = fp.to_string().parse().unwrap();
        assert_eq!(fp, parsed);
        let split = ds.split(0.5, 0).unwrap();
        assert_ne!(split.fingerprint(), fp);
    }

    #[test]
    fn stats_render_has_key_values() {
        let ds = parse("1,10,4.0\n1,11,3.0\n2,10,5.0\n").unwrap();
        let text = ds.stats().render();
        assert!(text.contains("users=2\n"));
        assert!(text.contains("ratings=3\n"));
        assert!(text.contains("sparsity=25.0000\n"));
    }
}
