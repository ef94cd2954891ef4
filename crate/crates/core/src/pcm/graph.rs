use super::bitset::BitSet;
use super::PcmError;

/// Undirected graph with bitset rows, vertices labelled by strictly
/// increasing ids. Vertices pushed since the last [`clear_frontier`]
/// form the frontier.
///
/// [`clear_frontier`]: AdjacencyGraph::clear_frontier
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjacencyGraph {
    ids: Vec<u64>,
    rows: Vec<BitSet>,
    degree: Vec<usize>,
    frontier: Vec<usize>,
}

impl AdjacencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph on vertices `0..n` (ids equal to indices) with the given edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                adj[hi].push(lo);
            }
        }
        let mut g = Self::new();
        for (i, nb) in adj.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            g.push_vertex(i as u64, nb).expect("increasing ids");
        }
        g
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degree[v]
    }

    pub fn neighbors(&self, v: usize) -> &BitSet {
        &self.rows[v]
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.rows[a].contains(b)
    }

    pub fn edge_count(&self) -> usize {
        self.degree.iter().sum::<usize>() / 2
    }

    /// Indices of vertices added since the frontier was last cleared.
    pub fn frontier(&self) -> &[usize] {
        &self.frontier
    }

    pub fn clear_frontier(&mut self) {
        self.frontier.clear();
    }

    /// Appends a vertex adjacent to the given existing vertices.
    pub fn push_vertex(&mut self, id: u64, neighbors: &[usize]) -> Result<usize, PcmError> {
        if self.ids.last().is_some_and(|&last| id <= last) {
            return Err(PcmError::NonIncreasingId { id, last: *self.ids.last().unwrap() });
        }
        let v = self.ids.len();
        let bits = v + 1;
        for row in &mut self.rows {
            row.grow(bits);
        }
        let mut row = BitSet::with_capacity(bits);
        for &u in neighbors {
            assert!(u < v, "neighbor {u} does not exist yet");
            if !row.contains(u) {
                row.insert(u);
                self.rows[u].insert(v);
                self.degree[u] += 1;
            }
        }
        self.degree.push(row.count());
        self.rows.push(row);
        self.ids.push(id);
        self.frontier.push(v);
        Ok(v)
    }

    pub fn is_clique(&self, members: &[usize]) -> bool {
        members.iter().enumerate().all(|(k, &a)| a < self.len() && members[k + 1..].iter().all(|&b| a != b && self.adjacent(a, b)))
    }

    pub(crate) fn full_set(&self) -> BitSet {
        let mut s = BitSet::with_capacity(self.len());
        for v in 0..self.len() {
            s.insert(v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_without_self_edges() {
        let g = AdjacencyGraph::from_edges(4, &[(0, 1), (1, 0), (2, 2), (3, 1)]);
        assert_eq!(g.edge_count(), 2);
        for a in 0..4 {
            assert!(!g.adjacent(a, a));
            for b in 0..4 {
                assert_eq!(g.adjacent(a, b), g.adjacent(b, a));
            }
        }
        assert_eq!(g.degree(1), 2);
        assert!(g.is_clique(&[0, 1]));
        assert!(!g.is_clique(&[0, 1, 3]));
        assert_eq!(g.frontier(), &[0, 1, 2, 3]);
    }

    #[test]
    fn ids_must_increase() {
        let mut g = AdjacencyGraph::new();
        g.push_vertex(5, &[]).unwrap();
        assert!(g.push_vertex(5, &[]).is_err());
        assert!(g.push_vertex(3, &[]).is_err());
        g.push_vertex(9, &[0]).unwrap();
        assert_eq!(g.index_of(9), Some(1));
    }
}
