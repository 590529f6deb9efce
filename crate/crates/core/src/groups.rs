//! Synthetic groups whose members all rated the same test items.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetFingerprint, RatingsDataset, TestIndex};
use crate::error::{Error, Result};

/// Items every group is evaluated on.
pub const EVAL_ITEMS: usize = 5;

pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

const FILE_MAGIC: &str = "# grouprec groups v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupSpec {
    members: Vec<u32>,
    eval_items: Vec<u32>,
}

impl GroupSpec {
    /// Sorts both lists; rejects duplicates, empty groups and a wrong item count.
    pub fn new(mut members: Vec<u32>, mut eval_items: Vec<u32>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyGroup);
        }
        members.sort_unstable();
        eval_items.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Protocol(format!(
                "repeated member in group {members:?}"
            )));
        }
        if eval_items.len() != EVAL_ITEMS {
            return Err(Error::Protocol(format!(
                "group needs {EVAL_ITEMS} eval items, got {}",
                eval_items.len()
            )));
        }
        if eval_items.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Protocol(format!(
                "repeated eval item in {eval_items:?}"
            )));
        }
        Ok(GroupSpec {
            members,
            eval_items,
        })
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn eval_items(&self) -> &[u32] {
        &self.eval_items
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Every member must hold a test rating for every eval item.
    pub fn validate(&self, index: &TestIndex) -> Result<()> {
        for &u in &self.members {
            for &i in &self.eval_items {
                if index.rating(u, i).is_none() {
                    return Err(Error::Protocol(format!(
                        "user {u} has no test rating for item {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeReport {
    pub size: usize,
    pub requested: usize,
    pub produced: usize,
    /// Items rated in test by at least `size` users.
    pub qualifying_items: usize,
    pub attempts: usize,
    pub duplicates: usize,
}

impl SizeReport {
    pub fn shortfall(&self) -> usize {
        self.requested - self.produced
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub groups: Vec<GroupSpec>,
    pub reports: Vec<SizeReport>,
}

/// Samples `per_size` groups for each size in `sizes`, in the given order.
///
/// For each group: five distinct items are drawn from those rated in test by
/// at least `S` users, their test raters are intersected, and `S` members are
/// drawn from the intersection. A draw whose intersection is too small is
/// retried up to `max_attempts` times. Once a group exhausts its attempts the
/// size is abandoned and the shortfall reported.
pub fn generate_groups(
    dataset: &RatingsDataset,
    sizes: &[usize],
    per_size: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<Generated> {
    if !dataset.has_test_split() {
        return Err(Error::Config("dataset has no test split".into()));
    }
    if max_attempts == 0 {
        return Err(Error::Config("max_attempts must be positive".into()));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0) {
        return Err(Error::Config(format!(
            "group size {bad} must be at least 1"
        )));
    }
    let index = dataset.test_index();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    let mut reports = Vec::with_capacity(sizes.len());

    for &size in sizes {
        let qualifying: Vec<u32> = (0..dataset.items() as u32)
            .filter(|&i| index.raters(i).len() >= size)
            .collect();
        let mut report = SizeReport {
            size,
            requested: per_size,
            produced: 0,
            qualifying_items: qualifying.len(),
            attempts: 0,
            duplicates: 0,
        };
        if qualifying.len() < EVAL_ITEMS {
            warn!(
                "size {size}: only {} items rated in test by {size}+ users, no groups generated",
                qualifying.len()
            );
            reports.push(report);
            continue;
        }

        let mut seen = HashSet::new();
        'groups: for _ in 0..per_size {
            for _ in 0..max_attempts {
                report.attempts += 1;
                if let Some(group) = draw_group(&index, &qualifying, size, &mut rng) {
                    if !seen.insert(group.clone()) {
                        report.duplicates += 1;
                    }
                    groups.push(group);
                    report.produced += 1;
                    continue 'groups;
                }
            }
            warn!(
                "size {size}: no valid group within {max_attempts} attempts, stopping at {} of {per_size}",
                report.produced
            );
            break;
        }
        reports.push(report);
    }

    for g in &groups {
        g.validate(&index)?;
    }
    Ok(Generated { groups, reports })
}

fn draw_group<R: Rng + ?Sized>(
    index: &TestIndex,
    qualifying: &[u32],
    size: usize,
    rng: &mut R,
) -> Option<GroupSpec> {
    let mut items: Vec<u32> = index::sample(rng, qualifying.len(), EVAL_ITEMS)
        .into_iter()
        .map(|k| qualifying[k])
        .collect();
    items.sort_unstable();
    let mut common: Vec<u32> = index.raters(items[0]).to_vec();
    for &i in &items[1..] {
        common = intersect_sorted(&common, index.raters(i));
        if common.len() < size {
            return None;
        }
    }
    let members: Vec<u32> = index::sample(rng, common.len(), size)
        .into_iter()
        .map(|k| common[k])
        .collect();
    GroupSpec::new(members, items).ok()
}

fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}

/// Groups plus the fingerprint of the dataset they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupsFile {
    pub dataset: DatasetFingerprint,
    pub config: Option<String>,
    pub groups: Vec<GroupSpec>,
}

impl GroupsFile {
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{FILE_MAGIC}")?;
        writeln!(out, "# dataset {}", self.dataset)?;
        if let Some(config) = &self.config {
            writeln!(out, "# config {config}")?;
        }
        for g in &self.groups {
            writeln!(
                out,
                "{}\t{}\t{}",
                g.size(),
                join(&g.members),
                join(&g.eval_items)
            )?;
        }
        out.flush()
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut dataset = None;
        let mut config = None;
        let mut groups = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::GroupsFile(format!("line {line_no}: {e}")))?;
            let line = line.trim_end();
            if n == 0 {
                if line != FILE_MAGIC {
                    return Err(Error::GroupsFile(format!("missing header {FILE_MAGIC:?}")));
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("# dataset ") {
                dataset = Some(rest.parse::<DatasetFingerprint>()?);
                continue;
            }
            if let Some(rest) = line.strip_prefix("# config ") {
                config = Some(rest.to_string());
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            groups.push(
                parse_record(line)
                    .map_err(|m| Error::GroupsFile(format!("line {line_no}: {m}")))?,
            );
        }
        let dataset =
            dataset.ok_or_else(|| Error::GroupsFile("missing dataset fingerprint".into()))?;
        Ok(GroupsFile {
            dataset,
            config,
            groups,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Rejects a dataset other than the one the groups were drawn from, then
    /// re-checks every group against its test split.
    pub fn check_against(&self, dataset: &RatingsDataset) -> Result<()> {
        let found = dataset.fingerprint();
        if found != self.dataset {
            return Err(Error::FingerprintMismatch {
                expected: self.dataset.to_string(),
                found: found.to_string(),
            });
        }
        let index = dataset.test_index();
        self.groups.iter().try_for_each(|g| g.validate(&index))
    }
}

fn join(values: &[u32]) -> String {
    values
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_record(line: &str) -> std::result::Result<GroupSpec, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!(
            "expected 3 tab-separated fields, got {}",
            fields.len()
        ));
    }
    let size: usize = fields[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad size {:?}", fields[0]))?;
    let list = |s: &str| -> std::result::Result<Vec<u32>, String> {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<u32>()
                    .map_err(|_| format!("bad index {v:?}"))
            })
            .collect()
    };
    let members = list(fields[1])?;
    if members.len() != size {
        return Err(format!("size {size} but {} members", members.len()));
    }
    GroupSpec::new(members, list(fields[2])?).map_err(|e| e.to_string())
}
