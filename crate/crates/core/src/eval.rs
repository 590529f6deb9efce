//! Group metrics (MAE, MSE, maximum error, NDCG@N) and the per-size report.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rayon::prelude::*;

use crate::aggregation::{GroupInput, Strategy};
use crate::data::{RatingsDataset, TestIndex};
use crate::error::{Error, Result};
use crate::groups::{GroupSpec, GroupsFile};
use crate::model::{ModelParams, ModelType};

/// Member x item matrix of true ratings for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Truths {
    members: usize,
    items: usize,
    values: Vec<f64>,
}

impl Truths {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let items = rows.first().map(Vec::len).ok_or(Error::EmptyGroup)?;
        if items == 0 {
            return Err(Error::Protocol("group has no eval items".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != items) {
            return Err(Error::Shape(format!(
                "truth row of length {} vs {items}",
                r.len()
            )));
        }
        let values: Vec<f64> = rows.concat();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("truth rating".into()));
        }
        Ok(Truths {
            members: rows.len(),
            items,
            values,
        })
    }

    /// Test ratings of every member for every eval item of `group`.
    pub fn gather(group: &GroupSpec, index: &TestIndex) -> Result<Self> {
        let rows = group
            .members()
            .iter()
            .map(|&u| {
                group
                    .eval_items()
                    .iter()
                    .map(|&i| {
                        index.rating(u, i).ok_or_else(|| {
                            Error::Protocol(format!("missing test rating for user {u}, item {i}"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn get(&self, member: usize, item: usize) -> f64 {
        self.values[member * self.items + item]
    }

    /// Mean member rating of each item, summed in sorted order.
    pub fn relevance(&self) -> Vec<f64> {
        (0..self.items)
            .map(|i| {
                let column: Vec<f64> = (0..self.members).map(|m| self.get(m, i)).collect();
                sorted_sum(column) / self.members as f64
            })
            .collect()
    }

    fn check(&self, predictions: &[f64]) -> Result<()> {
        if predictions.len() != self.items {
            return Err(Error::Shape(format!(
                "{} predictions for {} eval items",
                predictions.len(),
                self.items
            )));
        }
        if predictions.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("group prediction".into()));
        }
        Ok(())
    }

    fn deviations(&self, predictions: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let predictions = predictions.to_vec();
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &t)| (predictions[k % self.items] - t).abs())
    }
}

/// Summation in ascending order, so the result does not depend on how members
/// or items were ordered.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub fn group_mae(predictions: &[f64], truths: &Truths) -> Result<f64> {
    truths.check(predictions)?;
    Ok(sorted_sum(truths.deviations(predictions).collect()) / truths.values.len() as f64)
}

/// Mean squared deviation. `group_scaled` divides once more by the group size.
pub fn group_mse(predictions: &[f64], truths: &Truths, group_scaled: bool) -> Result<f64> {
    truths.check(predictions)?;
    let mse = sorted_sum(truths.deviations(predictions).map(|d| d * d).collect())
        / truths.values.len() as f64;
    Ok(if group_scaled {
        mse / truths.members as f64
    } else {
        mse
    })
}

pub fn group_max(predictions: &[f64], truths: &Truths) -> Result<f64> {
    truths.check(predictions)?;
    Ok(truths.deviations(predictions).fold(0.0, f64::max))
}

/// NDCG of the top `n` items, relevance being the mean member rating.
///
/// Both rankings sort descending and break ties by ascending item id. An
/// all-zero relevance vector scores 1.
pub fn group_ndcg(items: &[u32], predictions: &[f64], truths: &Truths, n: usize) -> Result<f64> {
    truths.check(predictions)?;
    if items.len() != truths.items {
        return Err(Error::Shape(format!(
            "{} item ids for {} eval items",
            items.len(),
            truths.items
        )));
    }
    if n == 0 || n > items.len() {
        return Err(Error::Config(format!(
            "NDCG cutoff {n} outside 1..={}",
            items.len()
        )));
    }
    let relevance = truths.relevance();
    let dcg = discounted_gain(items, predictions, &relevance, n);
    let idcg = discounted_gain(items, &relevance, &relevance, n);
    if idcg == 0.0 {
        warn!("all relevances are zero; NDCG taken as 1");
        return Ok(1.0);
    }
    Ok(dcg / idcg)
}

fn discounted_gain(items: &[u32], scores: &[f64], relevance: &[f64], n: usize) -> f64 {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(items[a].cmp(&items[b]))
    });
    order
        .iter()
        .take(n)
        .enumerate()
        .map(|(rank, &k)| relevance[k] / ((rank + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub mae: f64,
    pub mse: f64,
    pub max: f64,
    pub ndcg: f64,
}

pub fn group_metrics(
    items: &[u32],
    predictions: &[f64],
    truths: &Truths,
    ndcg_n: usize,
    mse_group_scaled: bool,
) -> Result<GroupMetrics> {
    Ok(GroupMetrics {
        mae: group_mae(predictions, truths)?,
        mse: group_mse(predictions, truths, mse_group_scaled)?,
        max: group_max(predictions, truths)?,
        ndcg: group_ndcg(items, predictions, truths, ndcg_n)?,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: ModelType,
    pub strategy: Strategy,
    pub size: usize,
    pub n_groups: usize,
    pub mae: Summary,
    pub mse: Summary,
    pub max: Summary,
    pub ndcg: Summary,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "model",
    "strategy",
    "size",
    "n_groups",
    "mae_mean",
    "mae_std",
    "mse_mean",
    "mse_std",
    "max_mean",
    "max_std",
    "ndcg_mean",
    "ndcg_std",
];

impl MetricsReport {
    pub fn row(&self, model: ModelType, strategy: Strategy, size: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.strategy == strategy && r.size == size)
    }

    /// Tab-separated table, preceded by a `# config` line when given.
    pub fn write_tsv<W: Write>(&self, mut out: W, config: Option<&str>) -> std::io::Result<()> {
        if let Some(config) = config {
            writeln!(out, "# config {config}")?;
        }
        writeln!(out, "{}", REPORT_COLUMNS.join("\t"))?;
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}",
                r.model,
                r.strategy,
                r.size,
                r.n_groups,
                r.mae.mean,
                r.mae.std,
                r.mse.mean,
                r.mse.std,
                r.max.mean,
                r.max.std,
                r.ndcg.mean,
                r.ndcg.std
            )?;
        }
        out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub ndcg_n: usize,
    pub mse_group_scaled: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ndcg_n: 5,
            mse_group_scaled: false,
            threads: None,
        }
    }
}

/// Predictions of `model` for the eval items of each group, in group order.
pub fn group_predictions(
    model: &ModelParams,
    counts: &[usize],
    group: &GroupSpec,
    strategy: Strategy,
) -> Result<Vec<f64>> {
    let input = GroupInput::new(strategy, group.members(), counts)?;
    group
        .eval_items()
        .iter()
        .map(|&i| input.predict(model, i))
        .collect()
}

/// Scores every group under one strategy; one row per group size, sizes ascending.
///
/// Groups are scored in parallel, then reduced sequentially in file order, so
/// the report does not depend on the thread count.
pub fn evaluate(
    model: &ModelParams,
    dataset: &RatingsDataset,
    groups: &GroupsFile,
    strategy: Strategy,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if groups.groups.is_empty() {
        return Err(Error::Protocol("no groups to evaluate".into()));
    }
    groups.check_against(dataset)?;
    if model.users() != dataset.users() || model.items() != dataset.items() {
        return Err(Error::Shape(format!(
            "model has {} users x {} items, dataset {} x {}",
            model.users(),
            model.items(),
            dataset.users(),
            dataset.items()
        )));
    }
    let index = dataset.test_index();
    let counts = dataset.train_counts();
    let score = |g: &GroupSpec| -> Result<GroupMetrics> {
        let predictions = group_predictions(model, &counts, g, strategy)?;
        let truths = Truths::gather(g, &index)?;
        group_metrics(
            g.eval_items(),
            &predictions,
            &truths,
            options.ndcg_n,
            options.mse_group_scaled,
        )
    };
    let per_group: Vec<GroupMetrics> = match options.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| groups.groups.par_iter().map(score).collect::<Result<_>>())?,
        None => groups.groups.par_iter().map(score).collect::<Result<_>>()?,
    };

    let mut buckets: BTreeMap<usize, Vec<GroupMetrics>> = BTreeMap::new();
    for (g, m) in groups.groups.iter().zip(per_group) {
        buckets.entry(g.size()).or_default().push(m);
    }
    let rows = buckets
        .into_iter()
        .map(|(size, ms)| {
            let column =
                |f: fn(&GroupMetrics) -> f64| Summary::of(&ms.iter().map(f).collect::<Vec<_>>());
            ReportRow {
                model: model.model_type(),
                strategy,
                size,
                n_groups: ms.len(),
                mae: column(|m| m.mae),
                mse: column(|m| m.mse),
                max: column(|m| m.max),
                ndcg: column(|m| m.ndcg),
            }
        })
        .collect();
    Ok(MetricsReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truths(rows: &[&[f64]]) -> Truths {
        Truths::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_members_one_item() {
        let t = truths(&[&[3.0], &[5.0]]);
        assert_eq!(group_mae(&[4.0], &t).unwrap(), 1.0);
        assert_eq!(group_mse(&[4.0], &t, false).unwrap(), 1.0);
        assert_eq!(group_mse(&[4.0], &t, true).unwrap(), 0.5);
        assert_eq!(group_max(&[4.0], &t).unwrap(), 1.0);
    }

    #[test]
    fn exact_predictions_score_zero() {
        let t = truths(&[&[1.0, 2.0, 3.0]]);
        let p = [1.0, 2.0, 3.0];
        assert_eq!(group_mae(&p, &t).unwrap(), 0.0);
        assert_eq!(group_mse(&p, &t, false).unwrap(), 0.0);
        assert_eq!(group_max(&p, &t).unwrap(), 0.0);
        assert_eq!(group_ndcg(&[0, 1, 2], &p, &t, 3).unwrap(), 1.0);
    }

    #[test]
    fn max_picks_largest_deviation() {
        let t = truths(&[&[1.2, 3.0], &[2.7, 1.5]]);
        assert!((group_max(&[1.0, 1.0], &t).unwrap() - 2.0).abs() < 1e-15);
        let t = truths(&[&[0.2], &[1.7], &[0.5]]);
        assert_eq!(group_max(&[0.0], &t).unwrap(), 1.7);
    }

    #[test]
    fn ndcg_reversed_ranking() {
        let t = truths(&[&[5.0, 4.0, 3.0, 2.0, 1.0]]);
        let ndcg = group_ndcg(&[0, 1, 2, 3, 4], &[1.0, 2.0, 3.0, 4.0, 5.0], &t, 5).unwrap();
        let dcg = 1.0 + 2.0 / 3f64.log2() + 3.0 / 2.0 + 4.0 / 5f64.log2() + 5.0 / 6f64.log2();
        let idcg = 5.0 + 4.0 / 3f64.log2() + 3.0 / 2.0 + 2.0 / 5f64.log2() + 1.0 / 6f64.log2();
        assert!((ndcg - dcg / idcg).abs() < 1e-12);
    }

    #[test]
    fn ndcg_top_one() {
        let t = truths(&[&[2.0, 4.5, 1.0]]);
        assert_eq!(
            group_ndcg(&[7, 8, 9], &[0.0, 9.0, 1.0], &t, 1).unwrap(),
            1.0
        );
        assert_eq!(
            group_ndcg(&[7, 8, 9], &[3.0, 2.0, 1.0], &t, 1).unwrap(),
            2.0 / 4.5
        );
    }

    #[test]
    fn ndcg_ties_break_by_item_id() {
        let t = truths(&[&[1.0, 3.0]]);
        // equal predictions: item 4 ranks ahead of item 9
        let a = group_ndcg(&[9, 4], &[2.0, 2.0], &t, 1).unwrap();
        assert_eq!(a, 1.0);
        let b = group_ndcg(&[4, 9], &[2.0, 2.0], &t, 1).unwrap();
        assert_eq!(b, 1.0 / 3.0);
    }

    #[test]
    fn ndcg_zero_relevance_is_one() {
        let t = truths(&[&[0.0, 0.0]]);
        assert_eq!(group_ndcg(&[0, 1], &[1.0, 2.0], &t, 2).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_cutoff_checked() {
        let t = truths(&[&[1.0, 2.0]]);
        assert!(group_ndcg(&[0, 1], &[1.0, 2.0], &t, 3).is_err());
        assert!(group_ndcg(&[0, 1], &[1.0, 2.0], &t, 0).is_err());
    }

    #[test]
    fn shape_errors() {
        let t = truths(&[&[1.0, 2.0]]);
        assert!(matches!(group_mae(&[1.0], &t), Err(Error::Shape(_))));
        assert!(matches!(
            group_mae(&[1.0, f64::NAN], &t),
            Err(Error::NonFinite(_))
        ));
        assert!(Truths::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(matches!(Truths::from_rows(&[]), Err(Error::EmptyGroup)));
    }

    #[test]
    fn member_mean_minimizes_mse() {
        let t = truths(&[&[1.0, 4.0], &[3.0, 5.0], &[5.0, 3.0]]);
        let best = group_mse(&t.relevance(), &t, false).unwrap();
        for dp in [-0.3, -0.01, 0.01, 0.2] {
            let shifted: Vec<f64> = t.relevance().iter().map(|r| r + dp).collect();
            assert!(group_mse(&shifted, &t, false).unwrap() > best);
        }
        assert!(group_mae(&t.relevance(), &t).unwrap() > 0.0);
    }

    #[test]
    fn summary_is_population_form() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }
}
