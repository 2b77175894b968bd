//! Semi-synthetic training data with controllable popularity skew.
//!
//! An unbiased interaction pool is split per user into validation, test and a
//! sampling pool. Training clicks are then drawn from each user's pool items
//! with probability proportional to a Zipf law over the items' global
//! popularity rank, so the severity exponent `s` dials the skew from uniform
//! (`s = 0`) to head-dominated.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::Interaction;

/// Zipf law over popularity ranks `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipfDistribution {
    probabilities: Vec<f64>,
    severity: f64,
}

impl ZipfDistribution {
    pub fn severity(&self) -> f64 {
        self.severity
    }

    /// Entry `r - 1` is the probability of rank `r`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn rank_probability(&self, rank: usize) -> f64 {
        self.probabilities[rank - 1]
    }
}

/// `P(r) = r^-s / sum_n n^-s`
pub fn zipf_probabilities(num_items: usize, severity: f64) -> Result<ZipfDistribution> {
    if num_items == 0 {
        return Err(Error::param("num_items", "must be >= 1"));
    }
    if !(severity >= 0.0) || !severity.is_finite() {
        return Err(Error::param("severity", "must be finite and >= 0"));
    }
    let raw: Vec<f64> = (1..=num_items).map(|r| zipf_weight(r, severity)).collect();
    let total: f64 = raw.iter().sum();
    Ok(ZipfDistribution {
        probabilities: raw.into_iter().map(|w| w / total).collect(),
        severity,
    })
}

fn zipf_weight(rank: usize, severity: f64) -> f64 {
    libm::pow(rank as f64, -severity)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub pool_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// 10% validation, 20% test, 70% sampling pool.
    pub fn standard(seed: u64) -> Self {
        Self {
            validation_fraction: 0.1,
            test_fraction: 0.2,
            pool_fraction: 0.7,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.validation_fraction, self.test_fraction, self.pool_fraction];
        if f.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::param("split", "fractions must be positive"));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("split", "fractions must sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoolSplit {
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub pool: Vec<Interaction>,
}

/// Independent generator stream for one user.
fn user_rng(seed: u64, user: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);
    rng
}

/// Groups sorted, deduplicated interactions into per-user runs.
fn by_user(interactions: &[Interaction]) -> Vec<(u32, Vec<u32>)> {
    let mut sorted = interactions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out: Vec<(u32, Vec<u32>)> = Vec::new();
    for it in sorted {
        match out.last_mut() {
            Some((u, items)) if *u == it.user => items.push(it.item),
            _ => out.push((it.user, vec![it.item])),
        }
    }
    out
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Per-user stratified split.
///
/// Each user's items are shuffled, then cut into validation, test and pool
/// blocks. Block sizes use cumulative rounding across users so the global
/// sizes equal the rounded global fractions and every user is within one
/// interaction of its own proportional share.
pub fn split_pool(unbiased: &[Interaction], spec: &SplitSpec) -> Result<PoolSplit> {
    spec.validate()?;
    if unbiased.is_empty() {
        return Err(Error::Empty("unbiased interactions"));
    }
    let mut out = PoolSplit::default();
    let mut seen = 0usize;
    for (user, mut items) in by_user(unbiased) {
        let mut rng = user_rng(spec.seed, user);
        shuffle(&mut items, &mut rng);
        let before = seen as f64;
        seen += items.len();
        let after = seen as f64;
        let n_valid = round_half_up(after * spec.validation_fraction) - round_half_up(before * spec.validation_fraction);
        let n_test = round_half_up(after * spec.test_fraction) - round_half_up(before * spec.test_fraction);
        let n_test = n_test.min(items.len() - n_valid);
        for (k, item) in items.into_iter().enumerate() {
            let it = Interaction::new(user, item);
            if k < n_valid {
                out.validation.push(it);
            } else if k < n_valid + n_test {
                out.test.push(it);
            } else {
                out.pool.push(it);
            }
        }
    }
    if out.validation.is_empty() || out.test.is_empty() || out.pool.is_empty() {
        return Err(Error::Empty("a split fraction produced an empty subset"));
    }
    Ok(out)
}

fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// How many training interactions each user receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// `ceil(fraction * pool count)`, at least 1.
    PoolFraction(f64),
    /// The same count for everyone.
    Fixed(usize),
}

impl Budget {
    fn for_user(self, pool_count: usize) -> usize {
        match self {
            Budget::PoolFraction(f) => (libm::ceil(f * pool_count as f64) as usize).max(1),
            Budget::Fixed(n) => n,
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::PoolFraction(0.5)
    }
}

/// Global popularity ranks (1-based) by descending pool frequency, ties to the
/// lower item id. Items absent from the pool get rank 0.
pub fn popularity_ranks(pool: &[Interaction]) -> Vec<usize> {
    let num_items = pool.iter().map(|it| it.item as usize + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; num_items];
    for it in pool {
        counts[it.item as usize] += 1;
    }
    let mut order: Vec<usize> = (0..num_items).filter(|&i| counts[i] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut ranks = vec![0usize; num_items];
    for (pos, item) in order.into_iter().enumerate() {
        ranks[item] = pos + 1;
    }
    ranks
}

/// Weighted sampling without replacement (successive draws proportional to
/// the remaining weights), via exponential keys `ln(u) / w`.
pub fn weighted_sample<R: Rng + ?Sized>(items: &[u32], weights: &[f64], k: usize, rng: &mut R) -> Vec<u32> {
    debug_assert_eq!(items.len(), weights.len());
    if k >= items.len() {
        return items.to_vec();
    }
    let mut keyed: Vec<(f64, u32)> = items
        .iter()
        .zip(weights)
        .map(|(&item, &w)| {
            // u in (0, 1]
            let u = 1.0 - rng.random::<f64>();
            (libm::log(u) / w, item)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    keyed.truncate(k);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Popularity-skewed training interactions drawn from `pool`.
///
/// 1. Minimum exposure: every pool item keeps one interaction with a uniformly
///    chosen user among those who have it in their pool.
/// 2. Each user then receives draws without replacement from their remaining
///    pool items with probability proportional to `rank^-s`, until the user's
///    budget (counting the exposure interactions) is met or candidates run out.
pub fn generate_biased_training(pool: &[Interaction], severity: f64, seed: u64, budget: Budget) -> Result<Vec<Interaction>> {
    if pool.is_empty() {
        return Err(Error::Empty("sampling pool"));
    }
    if !(severity >= 0.0) || !severity.is_finite() {
        return Err(Error::param("severity", "must be finite and >= 0"));
    }
    if let Budget::PoolFraction(f) = budget {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::param("budget", "pool fraction must lie in (0, 1]"));
        }
    }
    let users = by_user(pool);
    let ranks = popularity_ranks(pool);

    let mut item_users: Vec<Vec<u32>> = vec![Vec::new(); ranks.len()];
    for (user, items) in &users {
        for &i in items {
            item_users[i as usize].push(*user);
        }
    }
    let mut chosen: Vec<Interaction> = Vec::new();
    let mut exposure_rng = ChaCha8Rng::seed_from_u64(seed);
    for (item, holders) in item_users.iter().enumerate() {
        if holders.is_empty() {
            continue;
        }
        let u = holders[exposure_rng.random_range(0..holders.len())];
        chosen.push(Interaction::new(u, item as u32));
    }
    chosen.sort_unstable();

    let mut out = Vec::with_capacity(pool.len());
    for (user, items) in &users {
        let lo = chosen.partition_point(|it| it.user < *user);
        let hi = chosen.partition_point(|it| it.user <= *user);
        let exposed = &chosen[lo..hi];
        out.extend_from_slice(exposed);
        let want = budget.for_user(items.len()).saturating_sub(exposed.len());
        if want == 0 {
            continue;
        }
        let candidates: Vec<u32> = items
            .iter()
            .copied()
            .filter(|&i| exposed.binary_search(&Interaction::new(*user, i)).is_err())
            .collect();
        let weights: Vec<f64> = candidates.iter().map(|&i| zipf_weight(ranks[i as usize], severity)).collect();
        let mut rng = user_rng(seed, *user);
        out.extend(
            weighted_sample(&candidates, &weights, want, &mut rng)
                .into_iter()
                .map(|i| Interaction::new(*user, i)),
        );
    }
    out.sort_unstable();
    Ok(out)
}

/// Each user's candidate items with their Zipf weights renormalized over
/// that user's candidate set.
pub fn per_user_distributions(pool: &[Interaction], severity: f64) -> Vec<(u32, Vec<(u32, f64)>)> {
    let ranks = popularity_ranks(pool);
    by_user(pool)
        .into_iter()
        .map(|(user, items)| {
            let w: Vec<f64> = items.iter().map(|&i| zipf_weight(ranks[i as usize], severity)).collect();
            let total: f64 = w.iter().sum();
            (user, items.into_iter().zip(w).map(|(i, x)| (i, x / total)).collect())
        })
        .collect()
}

/// Unbiased preference pool from a latent factor model.
///
/// Users and items get Gaussian latent vectors; each user keeps
/// `per_user` distinct items sampled without replacement with weight
/// `exp(affinity / temperature) * (i + 1)^-popularity`. The second factor
/// gives items a shared appeal skew; item ids are exchangeable so id order
/// serves as the appeal order. No exposure effect is involved.
pub fn latent_preference_pool(
    num_users: usize,
    num_items: usize,
    per_user: usize,
    latent_dim: usize,
    temperature: f64,
    popularity: f64,
    seed: u64,
) -> Result<Vec<Interaction>> {
    if num_users == 0 || num_items == 0 || latent_dim == 0 {
        return Err(Error::param("pool", "users, items and latent_dim must be >= 1"));
    }
    if per_user == 0 || per_user > num_items {
        return Err(Error::param("per_user", "must lie in [1, num_items]"));
    }
    if !(temperature > 0.0) {
        return Err(Error::param("temperature", "must be > 0"));
    }
    if !(popularity >= 0.0) || !popularity.is_finite() {
        return Err(Error::param("popularity", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / libm::sqrt(latent_dim as f64)).expect("positive std");
    let users: Vec<f64> = (0..num_users * latent_dim).map(|_| normal.sample(&mut rng)).collect();
    let items: Vec<f64> = (0..num_items * latent_dim).map(|_| normal.sample(&mut rng)).collect();
    let ids: Vec<u32> = (0..num_items as u32).collect();
    let mut out = Vec::with_capacity(num_users * per_user);
    for u in 0..num_users {
        let pu = &users[u * latent_dim..(u + 1) * latent_dim];
        let logits: Vec<f64> = (0..num_items)
            .map(|i| {
                let qi = &items[i * latent_dim..(i + 1) * latent_dim];
                pu.iter().zip(qi).map(|(a, b)| a * b).sum::<f64>() / temperature
                    - popularity * libm::log((i + 1) as f64)
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
        let mut picked = weighted_sample(&ids, &weights, per_user, &mut rng);
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| Interaction::new(u as u32, i)));
    }
    Ok(out)
}
