//! All-ranking top-k evaluation.
//!
//! For each user every candidate item is scored, the user's training positives
//! are removed, and the top `k` are compared against the held-out relevant set.
//! Metrics are macro-averaged over users with a non-empty relevant set.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::{Interaction, InteractionGraph, PopularitySplit};
use crate::model::{dot, EmbeddingTable};

/// Per-user relevant and masked items plus an optional global candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTask {
    num_users: usize,
    num_items: usize,
    relevant: Vec<Vec<u32>>,
    masked: Vec<Vec<u32>>,
    candidates: Option<Vec<u32>>,
}

impl RankingTask {
    /// `held_out` supplies the relevant items; `masked_by` (typically the
    /// training graph) supplies the items removed from each user's pool.
    pub fn new(
        num_users: usize,
        num_items: usize,
        held_out: &[Interaction],
        masked_by: &InteractionGraph,
        candidates: Option<Vec<u32>>,
    ) -> Result<Self> {
        if masked_by.num_users() != num_users || masked_by.num_items() != num_items {
            return Err(Error::Config("masking graph shape differs from the ranking task"));
        }
        let mut relevant = vec![Vec::new(); num_users];
        for it in held_out {
            if it.user as usize >= num_users || it.item as usize >= num_items {
                return Err(Error::OutOfBounds {
                    user: it.user,
                    item: it.item,
                    num_users,
                    num_items,
                });
            }
            relevant[it.user as usize].push(it.item);
        }
        for r in &mut relevant {
            r.sort_unstable();
            r.dedup();
        }
        let masked = (0..num_users).map(|u| masked_by.user_items(u).to_vec()).collect();
        let candidates = match candidates {
            Some(mut c) => {
                if let Some(&bad) = c.iter().find(|&&i| i as usize >= num_items) {
                    return Err(Error::OutOfBounds {
                        user: 0,
                        item: bad,
                        num_users,
                        num_items,
                    });
                }
                c.sort_unstable();
                c.dedup();
                Some(c)
            }
            None => None,
        };
        Ok(Self {
            num_users,
            num_items,
            relevant,
            masked,
            candidates,
        })
    }

    /// Builds a task from explicit per-user lists (sorted internally).
    pub fn from_lists(
        num_items: usize,
        mut relevant: Vec<Vec<u32>>,
        mut masked: Vec<Vec<u32>>,
        candidates: Option<Vec<u32>>,
    ) -> Result<Self> {
        if relevant.len() != masked.len() {
            return Err(Error::Shape {
                expected: relevant.len(),
                actual: masked.len(),
            });
        }
        for list in relevant.iter_mut().chain(masked.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let candidates = candidates.map(|mut c| {
            c.sort_unstable();
            c.dedup();
            c
        });
        Ok(Self {
            num_users: relevant.len(),
            num_items,
            relevant,
            masked,
            candidates,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn relevant(&self, user: usize) -> &[u32] {
        &self.relevant[user]
    }

    pub fn masked(&self, user: usize) -> &[u32] {
        &self.masked[user]
    }

    pub fn candidates(&self) -> Option<&[u32]> {
        self.candidates.as_deref()
    }

    /// Candidate pool of `user`: restriction (if any) minus masked items.
    pub fn pool(&self, user: usize) -> Vec<u32> {
        let masked = &self.masked[user];
        let keep = |i: &u32| masked.binary_search(i).is_err();
        match &self.candidates {
            Some(c) => c.iter().copied().filter(keep).collect(),
            None => (0..self.num_items as u32).filter(keep).collect(),
        }
    }
}

/// Descending score, then ascending item id.
fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Top-`k` of `(score, item)` pairs; ties go to the lower item id.
pub fn top_k_of(mut scored: Vec<(f64, u32)>, k: usize) -> Vec<u32> {
    if k == 0 || scored.is_empty() {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Top-`k` items for `user` from final embeddings. Empty when the pool is empty.
pub fn rank_topk(final_emb: &EmbeddingTable, task: &RankingTask, user: usize, k: usize) -> Vec<u32> {
    let m = task.num_users;
    let eu = final_emb.row(user);
    let scored = task
        .pool(user)
        .into_iter()
        .map(|i| (dot(eu, final_emb.row(m + i as usize)), i))
        .collect();
    top_k_of(scored, k)
}

fn hits(ranked: &[u32], relevant: &[u32], k: usize) -> usize {
    ranked.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count()
}

/// `|top-k ∩ relevant| / |relevant|`; `relevant` must be sorted and non-empty.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    hits(ranked, relevant, k) as f64 / relevant.len() as f64
}

/// 1 if any of the top `k` is relevant.
pub fn hr_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    if hits(ranked, relevant, k) > 0 {
        1.0
    } else {
        0.0
    }
}

/// Binary-gain NDCG with `log2(p + 1)` discounts.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(p, _)| 1.0 / libm::log2(p as f64 + 2.0))
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(|p| 1.0 / libm::log2(p as f64 + 2.0)).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    All,
    Popular,
    Niche,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::All, Group::Popular, Group::Niche];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Popular => "popular",
            Group::Niche => "niche",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub hit_ratio: f64,
    pub num_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub all: GroupMetrics,
    pub popular: GroupMetrics,
    pub niche: GroupMetrics,
    /// Users whose candidate pool was empty.
    pub skipped_users: Vec<u32>,
}

impl EvalReport {
    pub fn group(&self, g: Group) -> &GroupMetrics {
        match g {
            Group::All => &self.all,
            Group::Popular => &self.popular,
            Group::Niche => &self.niche,
        }
    }
}

#[derive(Default)]
struct Acc {
    recall: f64,
    ndcg: f64,
    hr: f64,
    users: usize,
}

impl Acc {
    fn add(&mut self, ranked: &[u32], relevant: &[u32], k: usize) {
        if relevant.is_empty() {
            return;
        }
        self.recall += recall_at_k(ranked, relevant, k);
        self.ndcg += ndcg_at_k(ranked, relevant, k);
        self.hr += hr_at_k(ranked, relevant, k);
        self.users += 1;
    }

    fn finish(self) -> GroupMetrics {
        if self.users == 0 {
            return GroupMetrics::default();
        }
        let n = self.users as f64;
        GroupMetrics {
            recall: self.recall / n,
            ndcg: self.ndcg / n,
            hit_ratio: self.hr / n,
            num_users: self.users,
        }
    }
}

/// Full report. Group rows restrict each user's relevant set to the group's
/// items but rank over the same pool as the `all` row.
pub fn evaluate(final_emb: &EmbeddingTable, task: &RankingTask, split: Option<&PopularitySplit>, k: usize) -> EvalReport {
    let mut all = Acc::default();
    let mut popular = Acc::default();
    let mut niche = Acc::default();
    let mut skipped = Vec::new();
    for user in 0..task.num_users {
        let relevant = task.relevant(user);
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_topk(final_emb, task, user, k);
        if ranked.is_empty() {
            skipped.push(user as u32);
            continue;
        }
        all.add(&ranked, relevant, k);
        if let Some(split) = split {
            let (p, n): (Vec<u32>, Vec<u32>) = relevant.iter().partition(|&&i| split.is_popular(i));
            popular.add(&ranked, &p, k);
            niche.add(&ranked, &n, k);
        }
    }
    EvalReport {
        k,
        all: all.finish(),
        popular: popular.finish(),
        niche: niche.finish(),
        skipped_users: skipped,
    }
}

/// Macro Recall@k over all users with relevant items; the training-time metric.
pub fn recall_only(final_emb: &EmbeddingTable, task: &RankingTask, k: usize) -> f64 {
    evaluate(final_emb, task, None, k).all.recall
}
