//! Bipartite user-item interaction graph in compressed sparse form.
//!
//! Edges are indexed in `(user, item)` order, so the user-side adjacency
//! position of an edge *is* its stable edge index. The item-side adjacency
//! carries an explicit edge-index array pointing back into that order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One implicit-feedback observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
}

impl Interaction {
    pub const fn new(user: u32, item: u32) -> Self {
        Self { user, item }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<u32>,
    item_offsets: Vec<usize>,
    item_users: Vec<u32>,
    item_edges: Vec<u32>,
    edge_users: Vec<u32>,
}

impl InteractionGraph {
    /// Builds the graph, collapsing duplicate pairs into one edge.
    pub fn build(interactions: &[Interaction], num_users: usize, num_items: usize) -> Result<Self> {
        for it in interactions {
            if it.user as usize >= num_users || it.item as usize >= num_items {
                return Err(Error::OutOfBounds {
                    user: it.user,
                    item: it.item,
                    num_users,
                    num_items,
                });
            }
        }
        let mut edges = interactions.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let edge_count = edges.len();

        let mut user_offsets = vec![0usize; num_users + 1];
        let mut item_offsets = vec![0usize; num_items + 1];
        for e in &edges {
            user_offsets[e.user as usize + 1] += 1;
            item_offsets[e.item as usize + 1] += 1;
        }
        for k in 0..num_users {
            user_offsets[k + 1] += user_offsets[k];
        }
        for k in 0..num_items {
            item_offsets[k + 1] += item_offsets[k];
        }

        let user_items: Vec<u32> = edges.iter().map(|e| e.item).collect();
        let edge_users: Vec<u32> = edges.iter().map(|e| e.user).collect();

        // Edges are visited in ascending user order, so each item's user list
        // comes out sorted without a second pass.
        let mut cursor = item_offsets.clone();
        let mut item_users = vec![0u32; edge_count];
        let mut item_edges = vec![0u32; edge_count];
        for (idx, e) in edges.iter().enumerate() {
            let slot = &mut cursor[e.item as usize];
            item_users[*slot] = e.user;
            item_edges[*slot] = idx as u32;
            *slot += 1;
        }

        Ok(Self {
            num_users,
            num_items,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
            item_edges,
            edge_users,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// `M + N`; users occupy node rows `[0, M)`, items `[M, M + N)`.
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn edge_count(&self) -> usize {
        self.user_items.len()
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_offsets[user + 1] - self.user_offsets[user]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_offsets[item + 1] - self.item_offsets[item]
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        (0..self.num_users).map(|u| self.user_degree(u)).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        (0..self.num_items).map(|i| self.item_degree(i)).collect()
    }

    /// Items of `user`, ascending.
    pub fn user_items(&self, user: usize) -> &[u32] {
        &self.user_items[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    /// Edge indices of `user`'s edges, parallel to [`Self::user_items`].
    pub fn user_edge_range(&self, user: usize) -> core::ops::Range<usize> {
        self.user_offsets[user]..self.user_offsets[user + 1]
    }

    /// Users of `item`, ascending.
    pub fn item_users(&self, item: usize) -> &[u32] {
        &self.item_users[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    /// Edge indices of `item`'s edges, parallel to [`Self::item_users`].
    pub fn item_edges(&self, item: usize) -> &[u32] {
        &self.item_edges[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    /// Endpoints of edge `edge`.
    pub fn edge(&self, edge: usize) -> Interaction {
        Interaction::new(self.edge_users[edge], self.user_items[edge])
    }

    pub fn edges(&self) -> impl Iterator<Item = Interaction> + '_ {
        self.edge_users
            .iter()
            .zip(&self.user_items)
            .map(|(&u, &i)| Interaction::new(u, i))
    }

    pub fn has_edge(&self, user: usize, item: u32) -> bool {
        self.user_items(user).binary_search(&item).is_ok()
    }

    /// Stable index of `(user, item)`, if the edge exists.
    pub fn edge_index(&self, user: usize, item: u32) -> Option<usize> {
        self.user_items(user)
            .binary_search(&item)
            .ok()
            .map(|pos| self.user_offsets[user] + pos)
    }

    /// Same lookup through the item-side adjacency.
    pub fn edge_index_from_item(&self, item: usize, user: u32) -> Option<usize> {
        self.item_users(item)
            .binary_search(&user)
            .ok()
            .map(|pos| self.item_edges[self.item_offsets[item] + pos] as usize)
    }
}

/// Popular (head) vs. niche (tail) item partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularitySplit {
    is_popular: Vec<bool>,
    coverage: f64,
}

impl PopularitySplit {
    /// Builds a split directly from a membership mask.
    pub fn from_mask(is_popular: Vec<bool>, coverage: f64) -> Self {
        Self { is_popular, coverage }
    }

    pub fn is_popular(&self, item: u32) -> bool {
        self.is_popular[item as usize]
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn num_items(&self) -> usize {
        self.is_popular.len()
    }

    pub fn popular(&self) -> Vec<u32> {
        (0..self.is_popular.len() as u32).filter(|&i| self.is_popular[i as usize]).collect()
    }

    pub fn niche(&self) -> Vec<u32> {
        (0..self.is_popular.len() as u32).filter(|&i| !self.is_popular[i as usize]).collect()
    }
}

/// Smallest descending-frequency prefix of items whose interaction count
/// reaches `threshold` of all training interactions.
///
/// Counts come from `train` as given (duplicates count). Equal counts sort by
/// ascending item id; zero-count items are always niche.
pub fn popularity_split(
    graph: &InteractionGraph,
    train: &[Interaction],
    threshold: f64,
) -> Result<PopularitySplit> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::param("threshold", "must lie in (0, 1]"));
    }
    if train.is_empty() {
        return Err(Error::Empty("training interactions"));
    }
    let num_items = graph.num_items();
    let mut counts = vec![0u64; num_items];
    for it in train {
        let item = it.item as usize;
        if item >= num_items {
            return Err(Error::OutOfBounds {
                user: it.user,
                item: it.item,
                num_users: graph.num_users(),
                num_items,
            });
        }
        counts[item] += 1;
    }
    let total = train.len() as u64;
    let mut order: Vec<u32> = (0..num_items as u32).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));

    let mut is_popular = vec![false; num_items];
    let mut covered = 0u64;
    for &item in &order {
        // Integer comparison avoids 0.8 * 10 landing a hair below 8.
        if reaches(covered, total, threshold) {
            break;
        }
        if counts[item as usize] == 0 {
            break;
        }
        covered += counts[item as usize];
        is_popular[item as usize] = true;
    }
    Ok(PopularitySplit {
        is_popular,
        coverage: covered as f64 / total as f64,
    })
}

fn reaches(covered: u64, total: u64, threshold: f64) -> bool {
    let frac = covered as f64 / total as f64;
    frac >= threshold || (threshold - frac).abs() <= 1e-12
}
