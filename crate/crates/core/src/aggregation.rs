//! Group weights for the multi-hot user input, and group prediction.
//!
//! A group is turned into a probability vector over its members. Feeding that
//! vector to the user embedding yields the weighted mean of member latent
//! factors (GPA). IPA instead averages one prediction per member.
//!
//! Weights are always stored with member indices strictly ascending, so any
//! ordering of the same member set produces bitwise-identical weights and
//! predictions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::data::UserProfile;
use crate::error::{Error, Result};
use crate::model::ModelParams;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Weighting {
    Average,
    Expertise,
    Softmax,
}

/// Group prediction strategy as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Ipa,
    Gpa(Weighting),
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Ipa,
        Strategy::Gpa(Weighting::Average),
        Strategy::Gpa(Weighting::Expertise),
        Strategy::Gpa(Weighting::Softmax),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ipa => "ipa",
            Strategy::Gpa(Weighting::Average) => "average",
            Strategy::Gpa(Weighting::Expertise) => "expertise",
            Strategy::Gpa(Weighting::Softmax) => "softmax",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?} (expected ipa, average, expertise or softmax)"
                ))
            })
    }
}

/// Train-split rating count per user.
pub trait RatingCounts {
    fn rating_count(&self, user: u32) -> Option<usize>;
}

impl RatingCounts for [usize] {
    fn rating_count(&self, user: u32) -> Option<usize> {
        self.get(user as usize).copied()
    }
}

impl RatingCounts for Vec<usize> {
    fn rating_count(&self, user: u32) -> Option<usize> {
        self.as_slice().rating_count(user)
    }
}

impl RatingCounts for [UserProfile] {
    fn rating_count(&self, user: u32) -> Option<usize> {
        // profiles from `RatingsDataset::user_profiles` are indexed by user
        match self.get(user as usize) {
            Some(p) if p.user_index == user => Some(p.train_rating_count),
            _ => self
                .iter()
                .find(|p| p.user_index == user)
                .map(|p| p.train_rating_count),
        }
    }
}

impl RatingCounts for HashMap<u32, usize> {
    fn rating_count(&self, user: u32) -> Option<usize> {
        self.get(&user).copied()
    }
}

/// Per-member weights of the multi-hot embedding input.
///
/// Invariants: members strictly ascending, every weight finite and `>= 0`,
/// weights sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    entries: Vec<(u32, f64)>,
    weighting: Weighting,
}

impl AggregationWeights {
    /// Validates and canonicalizes arbitrary `(user, weight)` entries.
    pub fn from_entries(mut entries: Vec<(u32, f64)>, weighting: Weighting) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyGroup);
        }
        entries.sort_by_key(|&(u, _)| u);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidWeights("duplicate member".into()));
        }
        if let Some(&(u, w)) = entries.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {w} for user {u}")));
        }
        let total: f64 = entries.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(AggregationWeights { entries, weighting })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, w)| w)
    }
}

fn canonical_members(members: &[u32]) -> Result<Vec<u32>> {
    if members.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidWeights("duplicate member".into()));
    }
    Ok(sorted)
}

fn counts_for<C: RatingCounts + ?Sized>(members: &[u32], counts: &C) -> Result<Vec<usize>> {
    members
        .iter()
        .map(|&u| {
            counts.rating_count(u).ok_or(Error::IndexOutOfRange {
                what: "user profile",
                index: u as usize,
                len: 0,
            })
        })
        .collect()
}

/// Uniform weights `1/|G|`.
pub fn weights_average(members: &[u32]) -> Result<AggregationWeights> {
    let members = canonical_members(members)?;
    let w = 1.0 / members.len() as f64;
    Ok(AggregationWeights {
        entries: members.into_iter().map(|u| (u, w)).collect(),
        weighting: Weighting::Average,
    })
}

/// Weights proportional to each member's train rating count.
///
/// A member with zero ratings gets weight exactly 0. If every member has zero
/// ratings the result falls back to uniform weights.
pub fn weights_expertise<C: RatingCounts + ?Sized>(
    members: &[u32],
    counts: &C,
) -> Result<AggregationWeights> {
    let members = canonical_members(members)?;
    let counts = counts_for(&members, counts)?;
    let total: usize = counts.iter().sum();
    if total == 0 {
        warn!("every member of group {members:?} has zero ratings; using average weights");
        return weights_average(&members);
    }
    let total = total as f64;
    Ok(AggregationWeights {
        entries: members
            .into_iter()
            .zip(counts)
            .map(|(u, c)| (u, c as f64 / total))
            .collect(),
        weighting: Weighting::Expertise,
    })
}

/// Softmax over raw rating counts, computed relative to the largest count.
///
/// Counts that differ by more than a few dozen saturate to an almost one-hot
/// vector; this is the literal behavior of the exponential weighting.
pub fn weights_softmax<C: RatingCounts + ?Sized>(
    members: &[u32],
    counts: &C,
) -> Result<AggregationWeights> {
    let members = canonical_members(members)?;
    let counts = counts_for(&members, counts)?;
    let max = *counts.iter().max().expect("non-empty group");
    let exps: Vec<f64> = counts
        .iter()
        .map(|&c| (-((max - c) as f64)).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(AggregationWeights {
        entries: members
            .into_iter()
            .zip(exps)
            .map(|(u, e)| (u, e / total))
            .collect(),
        weighting: Weighting::Softmax,
    })
}

pub fn weights_for<C: RatingCounts + ?Sized>(
    weighting: Weighting,
    members: &[u32],
    counts: &C,
) -> Result<AggregationWeights> {
    match weighting {
        Weighting::Average => weights_average(members),
        Weighting::Expertise => weights_expertise(members, counts),
        Weighting::Softmax => weights_softmax(members, counts),
    }
}

/// GPA prediction before clamping to the score range.
pub fn predict_group_gpa_raw(
    model: &ModelParams,
    weights: &AggregationWeights,
    item: u32,
) -> Result<f64> {
    let latent = model.user_embeddings().embed_weighted(weights)?;
    model.forward_raw(&latent, item)
}

/// One forward pass on the weighted group latent factor.
pub fn predict_group_gpa(
    model: &ModelParams,
    weights: &AggregationWeights,
    item: u32,
) -> Result<f64> {
    predict_group_gpa_raw(model, weights, item).map(|r| model.clamp(r))
}

/// Mean of the members' individual raw predictions.
pub fn predict_group_ipa_raw(model: &ModelParams, members: &[u32], item: u32) -> Result<f64> {
    let members = canonical_members(members)?;
    let mut sum = 0.0;
    for &u in &members {
        sum += model.predict_raw(u, item)?;
    }
    Ok(sum / members.len() as f64)
}

/// IPA prediction: the mean of raw member predictions, clamped once.
pub fn predict_group_ipa(model: &ModelParams, members: &[u32], item: u32) -> Result<f64> {
    predict_group_ipa_raw(model, members, item).map(|r| model.clamp(r))
}

/// Prepares a group for repeated prediction under one strategy.
#[derive(Debug, Clone)]
pub enum GroupInput {
    Members(Vec<u32>),
    Weighted(AggregationWeights),
}

impl GroupInput {
    pub fn new<C: RatingCounts + ?Sized>(
        strategy: Strategy,
        members: &[u32],
        counts: &C,
    ) -> Result<Self> {
        Ok(match strategy {
            Strategy::Ipa => GroupInput::Members(canonical_members(members)?),
            Strategy::Gpa(w) => GroupInput::Weighted(weights_for(w, members, counts)?),
        })
    }

    pub fn predict(&self, model: &ModelParams, item: u32) -> Result<f64> {
        match self {
            GroupInput::Members(m) => predict_group_ipa(model, m, item),
            GroupInput::Weighted(w) => predict_group_gpa(model, w, item),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2_counts() -> HashMap<u32, usize> {
        HashMap::from([(13, 2), (24, 5), (30, 6), (42, 3)])
    }

    #[test]
    fn average_weights() {
        let w = weights_average(&[42, 13, 30, 24]).unwrap();
        assert_eq!(
            w.entries(),
            &[(13, 0.25), (24, 0.25), (30, 0.25), (42, 0.25)]
        );
        assert_eq!(weights_average(&[7]).unwrap().entries(), &[(7, 1.0)]);
        let ten: Vec<u32> = (0..10).collect();
        assert!(weights_average(&ten).unwrap().weights().all(|w| w == 0.1));
    }

    #[test]
    fn expertise_weights_table2() {
        let w = weights_expertise(&[13, 24, 30, 42], &table2_counts()).unwrap();
        let got: Vec<f64> = w.weights().collect();
        assert_eq!(got, vec![0.125, 0.3125, 0.375, 0.1875]);
    }

    #[test]
    fn softmax_weights_table2() {
        let w = weights_softmax(&[13, 24, 30, 42], &table2_counts()).unwrap();
        let got: Vec<f64> = w.weights().collect();
        // e^c / sum e^c for c = (2, 5, 6, 3), evaluated without shifting
        let raw: Vec<f64> = [2.0f64, 5.0, 6.0, 3.0].iter().map(|c| c.exp()).collect();
        let total: f64 = raw.iter().sum();
        for (g, r) in got.iter().zip(&raw) {
            assert!((g - r / total).abs() < 1e-15);
        }
        for (g, e) in got.iter().zip([0.01276, 0.25620, 0.69638, 0.03466]) {
            assert!((g - e).abs() < 5e-4, "{g} vs {e}");
        }
    }

    #[test]
    fn softmax_large_counts_do_not_overflow() {
        let counts = vec![1000usize, 10];
        let w = weights_softmax(&[0, 1], &counts).unwrap();
        let ws: Vec<f64> = w.weights().collect();
        assert!(ws.iter().all(|v| v.is_finite()));
        assert_eq!(ws[0] + ws[1], 1.0);
        assert_eq!(ws[0], 1.0);
        assert!(ws[1] < 1e-300);
    }

    #[test]
    fn equal_counts_collapse_to_average() {
        let counts = vec![4usize; 6];
        let members = [5, 1, 3];
        let avg = weights_average(&members).unwrap();
        let exp = weights_expertise(&members, &counts).unwrap();
        let soft = weights_softmax(&members, &counts).unwrap();
        assert_eq!(avg.entries(), exp.entries());
        assert_eq!(avg.entries(), soft.entries());
    }

    #[test]
    fn zero_count_member_gets_zero_expertise_weight() {
        let counts = vec![0usize, 3, 1];
        let w = weights_expertise(&[0, 1, 2], &counts).unwrap();
        assert_eq!(w.entries(), &[(0, 0.0), (1, 0.75), (2, 0.25)]);
        let s = weights_softmax(&[0, 1, 2], &counts).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.weights().all(|v| v > 0.0));
    }

    #[test]
    fn all_zero_counts_fall_back_to_average() {
        let counts = vec![0usize, 0];
        let w = weights_expertise(&[1, 0], &counts).unwrap();
        assert_eq!(w.entries(), &[(0, 0.5), (1, 0.5)]);
        assert_eq!(w.weighting(), Weighting::Average);
    }

    #[test]
    fn empty_and_duplicate_groups_are_rejected() {
        assert!(matches!(weights_average(&[]), Err(Error::EmptyGroup)));
        assert!(matches!(
            weights_average(&[3, 3]),
            Err(Error::InvalidWeights(_))
        ));
        let counts = vec![1usize];
        assert!(weights_expertise(&[0, 5], &counts).is_err());
    }

    #[test]
    fn from_entries_validates() {
        assert!(
            AggregationWeights::from_entries(vec![(1, 0.5), (0, 0.4)], Weighting::Average).is_err()
        );
        assert!(
            AggregationWeights::from_entries(vec![(1, 1.5), (0, -0.5)], Weighting::Average)
                .is_err()
        );
        let w = AggregationWeights::from_entries(vec![(9, 0.75), (2, 0.25)], Weighting::Expertise)
            .unwrap();
        assert_eq!(w.entries(), &[(2, 0.25), (9, 0.75)]);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("median".parse::<Strategy>().is_err());
    }
}
