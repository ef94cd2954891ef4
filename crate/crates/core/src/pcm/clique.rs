use super::bitset::BitSet;
use super::graph::AdjacencyGraph;
use super::PcmError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CliqueMethod {
    /// Greedy degree-ordered search with pruning; fast, approximate.
    #[default]
    Heuristic,
    /// Branch and bound; exact unless the budget runs out.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub method: CliqueMethod,
    /// Maximum number of search nodes to expand; `None` is unlimited.
    pub budget: Option<u64>,
}

impl SearchOptions {
    pub fn exact() -> Self {
        Self { method: CliqueMethod::Exact, budget: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CliqueResult {
    /// Vertex ids, ascending.
    pub members: Vec<u64>,
    pub size: usize,
    pub is_exact: bool,
    pub explored_nodes: u64,
    pub budget_exhausted: bool,
}

impl CliqueResult {
    pub fn empty() -> Self {
        Self { is_exact: true, ..Default::default() }
    }

    fn from_indices(g: &AdjacencyGraph, idx: &[usize], is_exact: bool, explored: u64, exhausted: bool) -> Self {
        Self {
            members: idx.iter().map(|&i| g.ids()[i]).collect(),
            size: idx.len(),
            is_exact: is_exact && !exhausted,
            explored_nodes: explored,
            budget_exhausted: exhausted,
        }
    }

    /// Checks the result against `g`: members exist and are pairwise adjacent.
    pub fn verify(&self, g: &AdjacencyGraph) -> Result<Vec<usize>, PcmError> {
        let idx = self.members.iter().map(|&id| g.index_of(id).ok_or(PcmError::UnknownId(id))).collect::<Result<Vec<_>, _>>()?;
        if idx.len() != self.size || !g.is_clique(&idx) {
            return Err(PcmError::NotAClique);
        }
        Ok(idx)
    }
}

/// Below this many candidates the greedy descent ranks candidates by their
/// degree inside the candidate set instead of their degree in the graph.
const INDUCED_LIMIT: usize = 64;

struct Search<'a> {
    g: &'a AdjacencyGraph,
    best: Vec<usize>,
    /// Only cliques strictly larger than this are recorded.
    bound: usize,
    explored: u64,
    budget: Option<u64>,
    exhausted: bool,
    eligible_for: usize,
    eligible: BitSet,
}

impl<'a> Search<'a> {
    fn new(g: &'a AdjacencyGraph, lower_bound: usize, budget: Option<u64>) -> Self {
        let mut s = Self {
            g,
            best: Vec::new(),
            bound: lower_bound,
            explored: 0,
            budget,
            exhausted: false,
            eligible_for: usize::MAX,
            eligible: BitSet::default(),
        };
        s.refresh_eligible();
        s
    }

    /// Vertices with degree ≥ bound; only these can be in a clique larger
    /// than `bound`.
    fn refresh_eligible(&mut self) {
        if self.eligible_for == self.bound {
            return;
        }
        self.eligible = BitSet::with_capacity(self.g.len());
        for v in 0..self.g.len() {
            if self.g.degree(v) >= self.bound {
                self.eligible.insert(v);
            }
        }
        self.eligible_for = self.bound;
    }

    fn tick(&mut self) -> bool {
        self.explored += 1;
        if self.budget.is_some_and(|b| self.explored > b) {
            self.exhausted = true;
        }
        !self.exhausted
    }

    fn record(&mut self, clique: &[usize]) {
        if clique.len() > self.bound {
            let mut c = clique.to_vec();
            c.sort_unstable();
            self.best = c;
            self.bound = clique.len();
            self.refresh_eligible();
        }
    }

    fn greedy_from(&mut self, start: usize) {
        if self.g.degree(start) < self.bound {
            return;
        }
        let mut cand = self.g.neighbors(start).clone();
        cand.intersect_with(&self.eligible);
        let mut clique = vec![start];
        loop {
            if !self.tick() {
                break;
            }
            let left = cand.count();
            if left == 0 || clique.len() + left <= self.bound {
                break;
            }
            let small = left <= INDUCED_LIMIT;
            let mut pick = usize::MAX;
            let mut pick_key = (0, 0);
            for w in cand.iter() {
                let inner = if small { self.g.neighbors(w).intersection_count(&cand) } else { 0 };
                let key = (inner, self.g.degree(w));
                if pick == usize::MAX || key > pick_key {
                    pick = w;
                    pick_key = key;
                }
            }
            clique.push(pick);
            cand.remove(pick);
            cand.intersect_with(self.g.neighbors(pick));
        }
        self.record(&clique);
    }

    /// Same descent as [`greedy_from`](Self::greedy_from) on a graph
    /// relabelled by degree rank: the highest-degree candidate is the first
    /// set bit and the degree filter is a prefix.
    fn greedy_ranked(&mut self, r: &Ranked, start: usize) {
        if self.g.degree(start) < self.bound {
            return;
        }
        let mut cand = r.rows[r.rank_of[start]].clone();
        cand.truncate(r.eligible_prefix(self.g, self.bound));
        let mut clique = vec![start];
        loop {
            if !self.tick() {
                break;
            }
            let left = cand.count();
            if left == 0 || clique.len() + left <= self.bound {
                break;
            }
            let pick = if left <= INDUCED_LIMIT {
                let mut best = (0, usize::MAX);
                for w in cand.iter() {
                    let inner = r.rows[w].intersection_count(&cand);
                    if best.1 == usize::MAX || inner > best.0 {
                        best = (inner, w);
                    }
                }
                best.1
            } else {
                cand.first().expect("non-empty")
            };
            clique.push(r.order[pick]);
            cand.remove(pick);
            cand.intersect_with(&r.rows[pick]);
        }
        self.record(&clique);
    }

    fn branch(&mut self, mut cand: BitSet, clique: &mut Vec<usize>) {
        if !self.tick() {
            return;
        }
        if cand.is_empty() {
            self.record(clique);
            return;
        }
        while let Some(u) = cand.first() {
            if clique.len() + cand.count() <= self.bound || self.exhausted {
                return;
            }
            cand.remove(u);
            let mut next = cand.clone();
            next.intersect_with(self.g.neighbors(u));
            next.intersect_with(&self.eligible);
            clique.push(u);
            self.branch(next, clique);
            clique.pop();
        }
    }

    fn exact_from(&mut self, start: usize, allowed: &BitSet) {
        if self.exhausted || self.g.degree(start) < self.bound {
            return;
        }
        let mut cand = self.g.neighbors(start).clone();
        cand.intersect_with(allowed);
        cand.intersect_with(&self.eligible);
        let mut clique = vec![start];
        self.branch(cand, &mut clique);
    }
}

fn by_degree(g: &AdjacencyGraph, mut v: Vec<usize>) -> Vec<usize> {
    v.sort_by(|&a, &b| g.degree(b).cmp(&g.degree(a)).then(a.cmp(&b)));
    v
}

/// Adjacency relabelled so that rank 0 is the highest-degree vertex (ties
/// by index).
struct Ranked {
    order: Vec<usize>,
    rank_of: Vec<usize>,
    rows: Vec<BitSet>,
}

impl Ranked {
    fn new(g: &AdjacencyGraph) -> Self {
        let order = by_degree(g, (0..g.len()).collect());
        let mut rank_of = vec![0; g.len()];
        for (r, &v) in order.iter().enumerate() {
            rank_of[v] = r;
        }
        let rows = order
            .iter()
            .map(|&v| {
                let mut row = BitSet::with_capacity(g.len());
                for u in g.neighbors(v).iter() {
                    row.insert(rank_of[u]);
                }
                row
            })
            .collect();
        Self { order, rank_of, rows }
    }

    /// Number of leading ranks whose degree is at least `bound`.
    fn eligible_prefix(&self, g: &AdjacencyGraph, bound: usize) -> usize {
        self.order.partition_point(|&v| g.degree(v) >= bound)
    }
}

/// Relabelling pays off once many descents share it.
const RANKED_MIN_STARTS: usize = 32;

fn heuristic(s: &mut Search, starts: Vec<usize>, ranked: bool) {
    let starts = by_degree(s.g, starts);
    let r = ranked.then(|| Ranked::new(s.g));
    for v in starts {
        if s.exhausted {
            break;
        }
        match &r {
            Some(r) => s.greedy_ranked(r, v),
            None => s.greedy_from(v),
        }
    }
}

/// Maximum clique of the whole graph.
///
/// The heuristic starts a greedy descent from every vertex in order of
/// decreasing degree, skipping vertices whose degree cannot beat the
/// incumbent. Each step extends the clique with the highest-degree remaining
/// candidate; once at most 64 candidates remain, degree is counted inside the
/// candidate set, with graph degree and then index breaking ties.
/// The exact search is a depth-first branch and bound over ascending vertex
/// order, so among maximum cliques it returns the lexicographically smallest.
pub fn max_clique_batch(g: &AdjacencyGraph, opts: &SearchOptions) -> CliqueResult {
    let mut s = Search::new(g, 0, opts.budget);
    let all: Vec<usize> = (0..g.len()).collect();
    match opts.method {
        CliqueMethod::Heuristic => {
            let ranked = all.len() >= RANKED_MIN_STARTS;
            heuristic(&mut s, all, ranked);
        }
        CliqueMethod::Exact => {
            let mut later = g.full_set();
            for v in all {
                later.remove(v);
                s.exact_from(v, &later);
            }
        }
    }
    let (explored, exhausted) = (s.explored, s.exhausted);
    CliqueResult::from_indices(g, &s.best, opts.method == CliqueMethod::Exact, explored, exhausted)
}

/// Updates `prev` after new vertices arrived: searches only cliques that
/// contain at least one frontier vertex and are larger than `prev`, then
/// clears the frontier. Returns `prev` unchanged when no larger clique is
/// found.
pub fn max_clique_incremental(
    g: &mut AdjacencyGraph,
    prev: &CliqueResult,
    opts: &SearchOptions,
) -> Result<CliqueResult, PcmError> {
    prev.verify(g)?;
    let frontier = g.frontier().to_vec();
    let result = {
        let g: &AdjacencyGraph = g;
        let mut s = Search::new(g, prev.size, opts.budget);
        match opts.method {
            CliqueMethod::Heuristic => {
                let ranked = frontier.len() >= RANKED_MIN_STARTS;
                heuristic(&mut s, frontier, ranked);
            }
            CliqueMethod::Exact => {
                // Each clique is explored from its smallest frontier vertex.
                let mut allowed = g.full_set();
                let mut sorted = frontier;
                sorted.sort_unstable();
                for v in sorted {
                    allowed.remove(v);
                    s.exact_from(v, &allowed);
                }
            }
        }
        let exact = opts.method == CliqueMethod::Exact && prev.is_exact;
        if s.best.is_empty() {
            CliqueResult {
                explored_nodes: s.explored,
                budget_exhausted: s.exhausted,
                is_exact: exact && !s.exhausted,
                ..prev.clone()
            }
        } else {
            CliqueResult::from_indices(g, &s.best, exact, s.explored, s.exhausted)
        }
    };
    g.clear_frontier();
    Ok(result)
}

/// Largest vertex count accepted by [`brute_force_max_clique`].
pub const BRUTE_FORCE_LIMIT: usize = 30;

/// Exhaustive include/exclude enumeration, for testing on small graphs.
/// Among maximum cliques the lexicographically smallest is returned.
pub fn brute_force_max_clique(g: &AdjacencyGraph) -> Result<CliqueResult, PcmError> {
    let n = g.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(PcmError::TooLarge { vertices: n, limit: BRUTE_FORCE_LIMIT });
    }
    fn rec(g: &AdjacencyGraph, i: usize, cur: &mut Vec<usize>, best: &mut Vec<usize>, nodes: &mut u64) {
        *nodes += 1;
        if cur.len() + (g.len() - i) < best.len() {
            return;
        }
        if i == g.len() {
            if cur.len() > best.len() || (cur.len() == best.len() && *cur < *best) {
                *best = cur.clone();
            }
            return;
        }
        if cur.iter().all(|&c| g.adjacent(c, i)) {
            cur.push(i);
            rec(g, i + 1, cur, best, nodes);
            cur.pop();
        }
        rec(g, i + 1, cur, best, nodes);
    }
    let mut best = Vec::new();
    let mut nodes = 0;
    rec(g, 0, &mut Vec::new(), &mut best, &mut nodes);
    Ok(CliqueResult::from_indices(g, &best, true, nodes, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize, offset: usize) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                e.push((a + offset, b + offset));
            }
        }
        e
    }

    #[test]
    fn triangle_and_disjoint_cliques() {
        let tri = AdjacencyGraph::from_edges(3, &complete(3, 0));
        for opts in [SearchOptions::default(), SearchOptions::exact()] {
            assert_eq!(max_clique_batch(&tri, &opts).size, 3);
        }
        let mut e = complete(4, 0);
        e.extend(complete(7, 4));
        let g = AdjacencyGraph::from_edges(11, &e);
        for opts in [SearchOptions::default(), SearchOptions::exact()] {
            let r = max_clique_batch(&g, &opts);
            assert_eq!(r.size, 7);
            assert_eq!(r.members, (4..11).collect::<Vec<u64>>());
        }
        assert_eq!(brute_force_max_clique(&g).unwrap().size, 7);
    }

    #[test]
    fn empty_and_complete() {
        let g = AdjacencyGraph::new();
        assert_eq!(max_clique_batch(&g, &SearchOptions::default()).size, 0);
        assert_eq!(brute_force_max_clique(&g).unwrap().size, 0);
        let k10 = AdjacencyGraph::from_edges(10, &complete(10, 0));
        assert_eq!(brute_force_max_clique(&k10).unwrap().size, 10);
        let big = AdjacencyGraph::from_edges(31, &[]);
        assert!(matches!(brute_force_max_clique(&big), Err(PcmError::TooLarge { .. })));
    }

    #[test]
    fn exact_breaks_ties_lexicographically() {
        // Two triangles {0,3,4} and {1,2,5}; {0,3,4} is lexicographically smaller.
        let g = AdjacencyGraph::from_edges(6, &[(1, 2), (2, 5), (1, 5), (0, 3), (3, 4), (0, 4)]);
        assert_eq!(max_clique_batch(&g, &SearchOptions::exact()).members, vec![0, 3, 4]);
        assert_eq!(brute_force_max_clique(&g).unwrap().members, vec![0, 3, 4]);
    }

    #[test]
    fn incremental_forced_growth_and_isolated_vertex() {
        let mut g = AdjacencyGraph::from_edges(4, &complete(4, 0));
        let prev = max_clique_batch(&g, &SearchOptions::default());
        g.clear_frontier();
        g.push_vertex(10, &[0, 1, 2, 3]).unwrap();
        let r = max_clique_incremental(&mut g, &prev, &SearchOptions::default()).unwrap();
        assert_eq!(r.size, 5);
        assert!(r.members.contains(&10));
        assert!(g.frontier().is_empty());
        g.push_vertex(11, &[]).unwrap();
        let r2 = max_clique_incremental(&mut g, &r, &SearchOptions::default()).unwrap();
        assert_eq!(r2.members, r.members);
    }

    #[test]
    fn incremental_rejects_invalid_prev() {
        let mut g = AdjacencyGraph::from_edges(3, &[(0, 1)]);
        let bogus = CliqueResult { members: vec![0, 2], size: 2, ..Default::default() };
        assert_eq!(max_clique_incremental(&mut g, &bogus, &SearchOptions::default()), Err(PcmError::NotAClique));
        let unknown = CliqueResult { members: vec![7], size: 1, ..Default::default() };
        assert_eq!(max_clique_incremental(&mut g, &unknown, &SearchOptions::default()), Err(PcmError::UnknownId(7)));
    }

    #[test]
    fn ranked_and_scanning_descents_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(1..120);
            let p = rng.random_range(0.1..0.95);
            let mut e = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random::<f64>() < p {
                        e.push((a, b));
                    }
                }
            }
            let g = AdjacencyGraph::from_edges(n, &e);
            let run = |ranked| {
                let mut s = Search::new(&g, 0, None);
                heuristic(&mut s, (0..n).collect(), ranked);
                (s.best, s.explored)
            };
            assert_eq!(run(true), run(false));
        }
    }

    #[test]
    fn budget_is_reported() {
        let g = AdjacencyGraph::from_edges(12, &complete(12, 0));
        let r = max_clique_batch(&g, &SearchOptions { method: CliqueMethod::Exact, budget: Some(3) });
        assert!(r.budget_exhausted);
        assert!(!r.is_exact);
        assert!(r.explored_nodes <= 4);
    }
}
