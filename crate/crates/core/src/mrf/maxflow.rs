//! Boykov-Kolmogorov augmenting-path max-flow.
//!
//! Two search trees grow from the terminals; an arc joining them closes an
//! augmenting path. Saturated tree arcs create orphans, which are re-attached
//! to a valid parent or released. Nodes are activated in ascending index
//! order and the active set is processed first-in first-out, so the result is
//! deterministic.

use std::collections::VecDeque;

/// Directed capacitated graph with per-node terminal capacities.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    source_cap: Vec<f64>,
    sink_cap: Vec<f64>,
    // (from, to, forward capacity, reverse capacity)
    arcs: Vec<(usize, usize, f64, f64)>,
}

impl FlowNetwork {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            source_cap: vec![0.0; num_nodes],
            sink_cap: vec![0.0; num_nodes],
            arcs: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.source_cap.len()
    }

    pub fn add_node(&mut self) -> usize {
        self.source_cap.push(0.0);
        self.sink_cap.push(0.0);
        self.source_cap.len() - 1
    }

    /// Adds to the capacities of `source -> i` and `i -> sink`.
    pub fn add_terminal(&mut self, i: usize, source_cap: f64, sink_cap: f64) {
        debug_assert!(source_cap >= 0.0 && sink_cap >= 0.0);
        self.source_cap[i] += source_cap;
        self.sink_cap[i] += sink_cap;
    }

    /// Directed arc `from -> to`.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: f64) {
        self.add_edge(from, to, cap, 0.0);
    }

    /// Arc pair `i -> j` with `cap` and `j -> i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        assert!(i < self.num_nodes() && j < self.num_nodes(), "arc endpoint out of range");
        debug_assert!(cap >= 0.0 && rev_cap >= 0.0 && cap.is_finite() && rev_cap.is_finite());
        if i != j && (cap > 0.0 || rev_cap > 0.0) {
            self.arcs.push((i, j, cap, rev_cap));
        }
    }

    pub fn source_cap(&self, i: usize) -> f64 {
        self.source_cap[i]
    }

    pub fn sink_cap(&self, i: usize) -> f64 {
        self.sink_cap[i]
    }

    /// Iterates directed arcs with positive capacity as `(from, to, cap)`.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.arcs.iter().flat_map(|&(i, j, c, r)| {
            [(i, j, c), (j, i, r)].into_iter().filter(|a| a.2 > 0.0)
        })
    }
}

/// Minimum s-t cut: `source_side[i]` is true for nodes reachable from the
/// source in the final residual graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MinCut {
    pub source_side: Vec<bool>,
    pub value: f64,
}

pub fn min_cut(g: &FlowNetwork) -> MinCut {
    let mut solver = Solver::new(g);
    solver.run();
    let source_side = solver.reachable_from_source();
    MinCut {
        source_side,
        value: solver.flow,
    }
}

const NONE: usize = usize::MAX;
const TERMINAL: usize = usize::MAX - 1;
const ORPHAN: usize = usize::MAX - 2;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tree {
    Free,
    Source,
    Sink,
}

struct Solver {
    first: Vec<usize>,
    next: Vec<usize>,
    head: Vec<usize>,
    rcap: Vec<f64>,
    tr: Vec<f64>,
    parent: Vec<usize>,
    tree: Vec<Tree>,
    ts: Vec<u64>,
    dist: Vec<u32>,
    active: VecDeque<usize>,
    in_active: Vec<bool>,
    orphans: VecDeque<usize>,
    time: u64,
    flow: f64,
}

impl Solver {
    fn new(g: &FlowNetwork) -> Self {
        let n = g.num_nodes();
        let m = g.arcs.len() * 2;
        let mut s = Solver {
            first: vec![NONE; n],
            next: vec![NONE; m],
            head: vec![0; m],
            rcap: vec![0.0; m],
            tr: vec![0.0; n],
            parent: vec![NONE; n],
            tree: vec![Tree::Free; n],
            ts: vec![0; n],
            dist: vec![0; n],
            active: VecDeque::new(),
            in_active: vec![false; n],
            orphans: VecDeque::new(),
            time: 0,
            flow: 0.0,
        };
        // Insert in reverse so adjacency lists iterate in insertion order.
        for (k, &(i, j, c, r)) in g.arcs.iter().enumerate().rev() {
            let a = 2 * k;
            s.head[a] = j;
            s.rcap[a] = c;
            s.next[a] = s.first[i];
            s.first[i] = a;
            s.head[a + 1] = i;
            s.rcap[a + 1] = r;
            s.next[a + 1] = s.first[j];
            s.first[j] = a + 1;
        }
        for i in 0..n {
            let (src, snk) = (g.source_cap[i], g.sink_cap[i]);
            s.flow += src.min(snk);
            s.tr[i] = src - snk;
            if s.tr[i] > 0.0 {
                s.tree[i] = Tree::Source;
            } else if s.tr[i] < 0.0 {
                s.tree[i] = Tree::Sink;
            } else {
                continue;
            }
            s.parent[i] = TERMINAL;
            s.dist[i] = 1;
            s.activate(i);
        }
        s
    }

    fn activate(&mut self, i: usize) {
        if !self.in_active[i] {
            self.in_active[i] = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<usize> {
        while let Some(i) = self.active.pop_front() {
            self.in_active[i] = false;
            if self.parent[i] != NONE {
                return Some(i);
            }
        }
        None
    }

    fn arcs_of(&self, i: usize) -> ArcIter<'_> {
        ArcIter {
            next: &self.next,
            a: self.first[i],
        }
    }

    fn run(&mut self) {
        while let Some(i) = self.next_active() {
            let meet = self.grow(i);
            self.time += 1;
            if let Some(a) = meet {
                // Keep expanding from `i` before anything else.
                if !self.in_active[i] {
                    self.in_active[i] = true;
                    self.active.push_front(i);
                }
                self.augment(a);
                self.adopt();
            }
        }
    }

    /// Grows the tree containing `i`; returns an arc from the source tree to
    /// the sink tree when the trees touch.
    fn grow(&mut self, i: usize) -> Option<usize> {
        let mut a = self.first[i];
        while a != NONE {
            let j = self.head[a];
            match self.tree[i] {
                Tree::Source if self.rcap[a] > 0.0 => match self.tree[j] {
                    Tree::Free => self.attach(j, a ^ 1, i, Tree::Source),
                    Tree::Sink => return Some(a),
                    Tree::Source => self.shorten(j, a ^ 1, i),
                },
                Tree::Sink if self.rcap[a ^ 1] > 0.0 => match self.tree[j] {
                    Tree::Free => self.attach(j, a ^ 1, i, Tree::Sink),
                    Tree::Source => return Some(a ^ 1),
                    Tree::Sink => self.shorten(j, a ^ 1, i),
                },
                _ => {}
            }
            a = self.next[a];
        }
        None
    }

    fn attach(&mut self, j: usize, arc_to_parent: usize, i: usize, tree: Tree) {
        self.tree[j] = tree;
        self.parent[j] = arc_to_parent;
        self.ts[j] = self.ts[i];
        self.dist[j] = self.dist[i] + 1;
        self.activate(j);
    }

    fn shorten(&mut self, j: usize, arc_to_parent: usize, i: usize) {
        if self.parent[j] != ORPHAN && self.ts[j] <= self.ts[i] && self.dist[j] > self.dist[i] {
            self.parent[j] = arc_to_parent;
            self.ts[j] = self.ts[i];
            self.dist[j] = self.dist[i] + 1;
        }
    }

    fn set_orphan(&mut self, i: usize) {
        self.parent[i] = ORPHAN;
        self.orphans.push_back(i);
    }

    fn augment(&mut self, mid: usize) {
        let mut bottleneck = self.rcap[mid];
        let mut i = self.head[mid ^ 1];
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                bottleneck = bottleneck.min(self.tr[i]);
                break;
            }
            bottleneck = bottleneck.min(self.rcap[a ^ 1]);
            i = self.head[a];
        }
        let mut i = self.head[mid];
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                bottleneck = bottleneck.min(-self.tr[i]);
                break;
            }
            bottleneck = bottleneck.min(self.rcap[a]);
            i = self.head[a];
        }

        self.rcap[mid ^ 1] += bottleneck;
        self.rcap[mid] -= bottleneck;

        let mut i = self.head[mid ^ 1];
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                self.tr[i] -= bottleneck;
                if self.tr[i] <= 0.0 {
                    self.tr[i] = 0.0;
                    self.set_orphan(i);
                }
                break;
            }
            self.rcap[a] += bottleneck;
            self.rcap[a ^ 1] -= bottleneck;
            let up = self.head[a];
            if self.rcap[a ^ 1] <= 0.0 {
                self.set_orphan(i);
            }
            i = up;
        }
        let mut i = self.head[mid];
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                self.tr[i] += bottleneck;
                if self.tr[i] >= 0.0 {
                    self.tr[i] = 0.0;
                    self.set_orphan(i);
                }
                break;
            }
            self.rcap[a ^ 1] += bottleneck;
            self.rcap[a] -= bottleneck;
            let up = self.head[a];
            if self.rcap[a] <= 0.0 {
                self.set_orphan(i);
            }
            i = up;
        }
        self.flow += bottleneck;
    }

    fn adopt(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            self.process_orphan(i);
        }
    }

    /// Distance from `j` to its terminal, or `None` when the chain ends in an
    /// orphan. Caches the result along the path.
    fn origin_distance(&mut self, j: usize) -> Option<u32> {
        let mut d = 0u32;
        let mut k = j;
        loop {
            if self.ts[k] == self.time {
                d += self.dist[k];
                break;
            }
            let a = self.parent[k];
            d += 1;
            if a == TERMINAL {
                self.ts[k] = self.time;
                self.dist[k] = 1;
                break;
            }
            if a == ORPHAN || a == NONE {
                return None;
            }
            k = self.head[a];
        }
        let found = d;
        let mut k = j;
        while self.ts[k] != self.time {
            self.ts[k] = self.time;
            self.dist[k] = d;
            d -= 1;
            k = self.head[self.parent[k]];
        }
        Some(found)
    }

    fn process_orphan(&mut self, i: usize) {
        let tree = self.tree[i];
        let mut best = NONE;
        let mut best_d = u32::MAX;
        let mut a = self.first[i];
        while a != NONE {
            let j = self.head[a];
            // Source orphans need capacity j -> i, sink orphans i -> j.
            let cap = if tree == Tree::Source {
                self.rcap[a ^ 1]
            } else {
                self.rcap[a]
            };
            if cap > 0.0 && self.tree[j] == tree && self.parent[j] != NONE {
                if let Some(d) = self.origin_distance(j) {
                    if d < best_d {
                        best = a;
                        best_d = d;
                    }
                }
            }
            a = self.next[a];
        }

        if best != NONE {
            self.parent[i] = best;
            self.ts[i] = self.time;
            self.dist[i] = best_d + 1;
            return;
        }

        let mut a = self.first[i];
        while a != NONE {
            let j = self.head[a];
            if self.tree[j] == tree && self.parent[j] != NONE {
                let cap = if tree == Tree::Source {
                    self.rcap[a ^ 1]
                } else {
                    self.rcap[a]
                };
                if cap > 0.0 {
                    self.activate(j);
                }
                let pj = self.parent[j];
                if pj != TERMINAL && pj != ORPHAN && self.head[pj] == i {
                    self.set_orphan(j);
                }
            }
            a = self.next[a];
        }
        self.parent[i] = NONE;
        self.tree[i] = Tree::Free;
    }

    fn reachable_from_source(&self) -> Vec<bool> {
        let n = self.tr.len();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.tr[i] > 0.0).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            for a in self.arcs_of(i) {
                let j = self.head[a];
                if !seen[j] && self.rcap[a] > 0.0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }
}

struct ArcIter<'a> {
    next: &'a [usize],
    a: usize,
}

impl Iterator for ArcIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.a == NONE {
            return None;
        }
        let a = self.a;
        self.a = self.next[a];
        Some(a)
    }
}
