//! Undirected, unweighted networks stored as compressed neighbor lists.

use crate::error::{Error, Result};

/// Sparse symmetric 0/1 adjacency with sorted neighbor lists.
///
/// Node indices are 0-based. Networks built with [`Network::from_edges`] are
/// symmetric and loop-free by construction; [`Network::from_neighbor_lists`]
/// accepts arbitrary lists so that [`crate::validate`] can report violations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Network {
    /// Network with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            targets: Vec::new(),
        }
    }

    /// Builds a network from unordered pairs. Duplicates (in either
    /// orientation) collapse to a single edge.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, j) in edges {
            if i >= n {
                return Err(Error::NodeOutOfRange { index: i, n });
            }
            if j >= n {
                return Err(Error::NodeOutOfRange { index: j, n });
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            lists[i].push(j as u32);
            lists[j].push(i as u32);
        }
        Ok(Self::from_sorted_lists(lists))
    }

    /// Builds a network from raw per-node neighbor lists without checking
    /// symmetry or self-loops. Lists are sorted and deduplicated.
    pub fn from_neighbor_lists(lists: Vec<Vec<usize>>) -> Self {
        Self::from_sorted_lists(
            lists
                .into_iter()
                .map(|l| l.into_iter().map(|j| j as u32).collect())
                .collect(),
        )
    }

    fn from_sorted_lists(mut lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Sorted neighbors of `i`.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Position of `i`'s neighbor list inside the flat target array.
    pub(crate) fn neighbor_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub(crate) fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    /// Number of undirected edges (assumes symmetric storage).
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .map(|&j| j as usize)
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// Mean degree `2|E| / n`.
    pub fn average_degree(&self) -> f64 {
        if self.n() == 0 {
            0.0
        } else {
            self.targets.len() as f64 / self.n() as f64
        }
    }

    /// Subgraph induced by `nodes`; node `u` of the result is `nodes[u]`.
    /// `nodes` must not contain duplicates.
    pub fn induced(&self, nodes: &[usize]) -> Network {
        let mut position = vec![u32::MAX; self.n()];
        for (u, &v) in nodes.iter().enumerate() {
            position[v] = u as u32;
        }
        let lists = nodes
            .iter()
            .map(|&v| {
                self.neighbors(v)
                    .iter()
                    .filter_map(|&w| {
                        let p = position[w as usize];
                        (p != u32::MAX).then_some(p)
                    })
                    .collect()
            })
            .collect();
        Self::from_sorted_lists(lists)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle() {
        let net = Network::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(net.edge_count(), 3);
        assert_eq!(net.neighbors(1), &[0, 2]);
        assert!(net.has_edge(2, 0));
        assert_eq!(net.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(net.average_degree(), 2.0);
    }

    #[test]
    fn duplicates_collapse() {
        let net = Network::from_edges(2, [(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(net.edge_count(), 1);
    }

    #[test]
    fn rejects_loops_and_range() {
        assert!(matches!(
            Network::from_edges(2, [(1, 1)]),
            Err(Error::SelfLoop(1))
        ));
        assert!(matches!(
            Network::from_edges(2, [(0, 2)]),
            Err(Error::NodeOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn induced_subgraph() {
        let net = Network::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let sub = net.induced(&[1, 2, 3]);
        assert_eq!(sub.n(), 3);
        assert_eq!(sub.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }
}
