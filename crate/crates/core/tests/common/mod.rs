#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;

use grouprec::data::{load_ratings, LoadOptions, RatingsDataset};
use grouprec::model::{EmbeddingMatrix, Example, ModelParams, ModelType};
use grouprec::nn::{grad_check, Activation, DenseLayer};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noiseless rank-`k` ratings: factors drawn from U(0, 1), each cell observed
/// with probability `density`.
pub fn low_rank(users: usize, items: usize, k: usize, density: f64, seed: u64) -> RatingsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<f64> = (0..users * k).map(|_| rng.gen::<f64>()).collect();
    let q: Vec<f64> = (0..items * k).map(|_| rng.gen::<f64>()).collect();
    let mut triples = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.gen_bool(density) {
                let r = (0..k).map(|f| p[u * k + f] * q[i * k + f]).sum();
                triples.push((u, i, r));
            }
        }
    }
    RatingsDataset::from_triples(users, items, &triples).unwrap()
}

pub const FT_USERS: usize = 1508;
pub const FT_ITEMS: usize = 2071;
pub const FT_RATINGS: usize = 35_497;

/// Synthetic stand-in with FilmTrust's shape: same user, item and rating
/// counts, 0.5..4 scale in half steps, heavy-tailed user activity and item
/// popularity, ratings from a noisy rank-3 model.
pub fn filmtrust_proxy(seed: u64) -> RatingsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let activity: Vec<f64> = (0..FT_USERS).map(|r| (r as f64 + 1.0).powf(-0.6)).collect();
    let popularity: Vec<f64> = (0..FT_ITEMS).map(|r| (r as f64 + 1.0).powf(-1.0)).collect();
    let pick_user = WeightedIndex::new(&activity).unwrap();
    let pick_item = WeightedIndex::new(&popularity).unwrap();

    let mut cells = HashSet::new();
    let mut order = Vec::with_capacity(FT_RATINGS);
    let mut add = |u: usize, i: usize, order: &mut Vec<(usize, usize)>| {
        if cells.insert((u, i)) {
            order.push((u, i));
        }
    };
    for u in 0..FT_USERS {
        let i = pick_item.sample(&mut rng);
        add(u, i, &mut order);
    }
    for i in 0..FT_ITEMS {
        let u = pick_user.sample(&mut rng);
        add(u, i, &mut order);
    }
    while order.len() < FT_RATINGS {
        let (u, i) = (pick_user.sample(&mut rng), pick_item.sample(&mut rng));
        add(u, i, &mut order);
    }

    let k = 3;
    let p: Vec<f64> = (0..FT_USERS * k)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let q: Vec<f64> = (0..FT_ITEMS * k)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let bias: Vec<f64> = (0..FT_USERS).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let triples: Vec<(usize, usize, f64)> = order
        .into_iter()
        .map(|(u, i)| {
            let dot: f64 = (0..k).map(|f| p[u * k + f] * q[i * k + f]).sum();
            let raw = 2.9 + bias[u] + 0.8 * dot + rng.gen_range(-0.6..0.6);
            (u, i, ((raw * 2.0).round() / 2.0).clamp(0.5, 4.0))
        })
        .collect();
    RatingsDataset::from_triples(FT_USERS, FT_ITEMS, &triples).unwrap()
}

/// FilmTrust `ratings.txt` (whitespace-separated `user item rating`), from
/// `GREC_FILMTRUST` or `data/filmtrust/ratings.txt` under the workspace root.
pub fn filmtrust_path() -> PathBuf {
    match std::env::var_os("GREC_FILMTRUST") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/filmtrust/ratings.txt"),
    }
}

pub fn load_filmtrust() -> Result<RatingsDataset, String> {
    let path = filmtrust_path();
    if !path.exists() {
        return Err(format!(
            "dataset not found at {} (set GREC_FILMTRUST to the FilmTrust ratings file)",
            path.display()
        ));
    }
    let opts = LoadOptions {
        delimiter: ' ',
        has_header: false,
    };
    load_ratings(&path, &opts).map_err(|e| e.to_string())
}

/// Model with embeddings in U(-1, 1) and randomized biases, so gradients are
/// not dwarfed by the small training initialization.
pub fn random_model<R: Rng>(
    model_type: ModelType,
    users: usize,
    items: usize,
    k: usize,
    hidden: &[usize],
    rng: &mut R,
) -> ModelParams {
    let ue = EmbeddingMatrix::uniform(users, k, 1.0, rng);
    let ie = EmbeddingMatrix::uniform(items, k, 1.0, rng);
    let mut head = Vec::new();
    match model_type {
        ModelType::Gmf => head.push(DenseLayer::he_uniform(k, 1, Activation::Identity, rng)),
        ModelType::Mlp => {
            let mut width = 2 * k;
            for &w in hidden {
                head.push(DenseLayer::he_uniform(width, w, Activation::Relu, rng));
                width = w;
            }
            head.push(DenseLayer::he_uniform(width, 1, Activation::Identity, rng));
        }
    }
    for layer in &mut head {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    ModelParams::new(model_type, ue, ie, head, 0.5, 5.0).unwrap()
}

/// Distinct members with random positive weights summing to one.
pub fn random_multi_hot<R: Rng>(users: usize, max_members: usize, rng: &mut R) -> Vec<(u32, f64)> {
    let n = rng.gen_range(1..=max_members.min(users));
    let members = rand::seq::index::sample(rng, users, n);
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    members
        .iter()
        .zip(raw)
        .map(|(u, w)| (u as u32, w / total))
        .collect()
}

/// Max relative error between analytic and central-difference gradients of
/// the batch loss, for one random model and batch drawn from `seed`.
pub fn gradient_error(model_type: ModelType, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.gen_range(2..8);
    let items = rng.gen_range(2..8);
    let k = rng.gen_range(1..6);
    let hidden: Vec<usize> = (0..rng.gen_range(1..4))
        .map(|_| rng.gen_range(1..7))
        .collect();
    let model = random_model(model_type, users, items, k, &hidden, &mut rng);
    let batch: Vec<Example> = (0..rng.gen_range(1..7))
        .map(|_| Example {
            users: random_multi_hot(users, 4, &mut rng),
            item: rng.gen_range(0..items as u32),
            target: rng.gen_range(0.5..5.0),
        })
        .collect();
    let (_, grads) = model.batch_loss_and_grads(&batch).unwrap();
    let analytic = model.grads_flat(&grads);
    let params = model.params_flat();
    let mut probe = model.clone();
    let loss = |p: &[f64]| {
        probe.set_params_flat(p).unwrap();
        probe.batch_loss(&batch).unwrap()
    };
    grad_check(loss, &params, &analytic, 1e-6).unwrap()
}

/// Straight double-loop metrics: (mae, mse, max, ndcg@n). Ranks are found by
/// counting items that beat each item, not by sorting.
pub fn naive_metrics(
    items: &[u32],
    predictions: &[f64],
    truths: &[Vec<f64>],
    n: usize,
) -> (f64, f64, f64, f64) {
    let (mut abs, mut sq, mut max) = (0.0, 0.0, 0.0f64);
    for row in truths {
        for (p, t) in predictions.iter().zip(row) {
            let d = (p - t).abs();
            abs += d;
            sq += d * d;
            max = max.max(d);
        }
    }
    let cells = (truths.len() * items.len()) as f64;
    let mean: Vec<f64> = (0..items.len())
        .map(|i| truths.iter().map(|row| row[i]).sum::<f64>() / truths.len() as f64)
        .collect();
    let rank = |scores: &[f64], i: usize| -> usize {
        1 + (0..items.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && items[j] < items[i]))
            .count()
    };
    let gain = |scores: &[f64]| -> f64 {
        let mut total = 0.0;
        for (i, m) in mean.iter().enumerate() {
            let pos = rank(scores, i);
            if pos <= n {
                total += m / ((pos + 1) as f64).log2();
            }
        }
        total
    };
    let idcg = gain(&mean);
    let ndcg = if idcg == 0.0 {
        1.0
    } else {
        gain(predictions) / idcg
    };
    (abs / cells, sq / cells, max, ndcg)
}
