//! Statistical checks on the biased click generator.

use dpaa_core::datagen::{
    generate_biased_training, latent_preference_pool, per_user_distributions, popularity_ranks, split_pool,
    weighted_sample, Budget, SplitSpec,
};
use dpaa_core::Interaction;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_pool() -> Vec<Interaction> {
    // 5 users x 10 items, uneven per-user pools
    let lists: [&[u32]; 5] = [&[0, 1, 2, 3, 4, 5], &[0, 1, 6, 7], &[0, 2, 4, 6, 8, 9], &[1, 3, 5, 7, 9], &[0, 1, 2, 8]];
    lists
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| Interaction::new(u as u32, i)))
        .collect()
}

/// Independent s = 0 oracle: one uniformly chosen holder per item, then a
/// uniform random subset of each user's remaining candidates.
fn uniform_oracle(pool: &[Interaction], budget_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Interaction> {
    let mut chosen = Vec::new();
    for item in 0..10u32 {
        let holders: Vec<u32> = pool.iter().filter(|it| it.item == item).map(|it| it.user).collect();
        if !holders.is_empty() {
            chosen.push(Interaction::new(holders[rng.random_range(0..holders.len())], item));
        }
    }
    let mut out = chosen.clone();
    for u in 0..5u32 {
        let mine: Vec<u32> = pool.iter().filter(|it| it.user == u).map(|it| it.item).collect();
        let budget = (budget_fraction * mine.len() as f64).ceil() as usize;
        let exposed = chosen.iter().filter(|it| it.user == u).count();
        let mut rest: Vec<u32> = mine.into_iter().filter(|&i| !chosen.contains(&Interaction::new(u, i))).collect();
        rest.shuffle(rng);
        rest.truncate(budget.saturating_sub(exposed));
        out.extend(rest.into_iter().map(|i| Interaction::new(u, i)));
    }
    out
}

#[test]
fn uniform_severity_matches_uniform_oracle() {
    let pool = small_pool();
    let mut freq = [0f64; 10];
    let mut oracle = [0f64; 10];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..20_000 {
        for it in generate_biased_training(&pool, 0.0, seed, Budget::PoolFraction(0.75)).unwrap() {
            freq[it.item as usize] += 1.0;
        }
        for it in uniform_oracle(&pool, 0.75, &mut rng) {
            oracle[it.item as usize] += 1.0;
        }
    }
    let total: f64 = freq.iter().sum();
    let oracle_total: f64 = oracle.iter().sum();
    let l1: f64 = freq.iter().zip(&oracle).map(|(f, o)| (f / total - o / oracle_total).abs()).sum();
    assert!(l1 < 0.01, "L1 {l1}");
}

#[test]
fn severe_skew_concentrates_on_top_rank() {
    // Item 0 is held by every user, the rest by a random 40%.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<Interaction> = (0..60u32)
        .flat_map(|u| (0..100u32).map(move |i| (u, i)))
        .filter(|&(_, i)| i == 0 || rng.random_bool(0.4))
        .map(|(u, i)| Interaction::new(u, i))
        .collect();
    let ranks = popularity_ranks(&pool);
    let top = ranks.iter().position(|&r| r == 1).unwrap();
    let mut counts = vec![0usize; 100];
    let mut draws = 0;
    for seed in 0..200 {
        for it in generate_biased_training(&pool, 9.0, seed, Budget::PoolFraction(0.3)).unwrap() {
            counts[it.item as usize] += 1;
            draws += 1;
        }
    }
    assert!(draws >= 100_000 / 2, "{draws}");
    let best = counts[top];
    assert!(counts.iter().enumerate().all(|(i, &c)| i == top || c < best));
}

#[test]
fn single_draws_follow_per_user_mixture() {
    let pool = small_pool();
    let s = 1.5;
    let dists = per_user_distributions(&pool, s);
    let ranks = popularity_ranks(&pool);
    let mut mixture = [0f64; 10];
    for (_, d) in &dists {
        for &(i, p) in d {
            mixture[i as usize] += p / dists.len() as f64;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut freq = [0f64; 10];
    let draws = 1_000_000;
    for k in 0..draws {
        let (_, d) = &dists[k % dists.len()];
        let items: Vec<u32> = d.iter().map(|&(i, _)| i).collect();
        let weights: Vec<f64> = items.iter().map(|&i| (ranks[i as usize] as f64).powf(-s)).collect();
        freq[weighted_sample(&items, &weights, 1, &mut rng)[0] as usize] += 1.0;
    }
    let l1: f64 = freq.iter().zip(&mixture).map(|(f, m)| (f / draws as f64 - m).abs()).sum();
    assert!(l1 < 0.02, "L1 {l1}");
}

#[test]
fn split_is_disjoint_for_any_seed() {
    let pool = latent_preference_pool(30, 50, 12, 4, 1.0, 1.0, 1).unwrap();
    for seed in 0..10 {
        let s = split_pool(&pool, &SplitSpec::standard(seed)).unwrap();
        let mut all: Vec<_> = s.validation.iter().chain(&s.test).chain(&s.pool).copied().collect();
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, pool.len());
        assert_eq!(s.validation.len(), 36);
        assert_eq!(s.test.len(), 72);
    }
}

#[test]
fn pool_appeal_skew_favours_low_ids() {
    let count = |popularity: f64| {
        let pool = latent_preference_pool(200, 100, 20, 8, 0.5, popularity, 3).unwrap();
        let mut c = [0usize; 100];
        pool.iter().for_each(|it| c[it.item as usize] += 1);
        let head: usize = c[..10].iter().sum();
        let tail: usize = c[90..].iter().sum();
        (head, tail, pool.len())
    };
    let (head, tail, len) = count(1.5);
    assert_eq!(len, 200 * 20);
    assert!(head > 4 * tail, "head {head} tail {tail}");
    let (head, tail, _) = count(0.0);
    assert!(head < 2 * tail && tail < 2 * head, "head {head} tail {tail}");
    assert!(latent_preference_pool(5, 10, 2, 2, 1.0, -1.0, 0).is_err());
}
