//! Earliest-time solver for systems of difference constraints and the
//! branch-and-bound search over disjunctive pairs of them.
//!
//! Constraints are stored as edges `u -> v` with gain `g`, meaning
//! `x[v] >= x[u] + g`. Node 0 is the time origin and is pinned to 0: any
//! constraint that would push it up proves the system inconsistent. Upper
//! bounds become edges back into the origin.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Increases smaller than this are treated as no change.
const RELAX_EPS: f64 = 1e-12;
/// Slack tolerated when deciding that a constraint holds.
pub const SLACK_TOL: f64 = 1e-9;

pub const ORIGIN: usize = 0;

/// Which side of a disjunctive pair is enforced. `After` is the binary value
/// 0 (the later-queued vehicle yields), `Before` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    After,
    Before,
}

impl Order {
    pub fn binary(self) -> u8 {
        match self {
            Order::After => 0,
            Order::Before => 1,
        }
    }

    fn index(self) -> usize {
        self.binary() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub gain: f64,
}

impl Edge {
    pub fn new(from: usize, to: usize, gain: f64) -> Self {
        Self { from, to, gain }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        x[self.to] - x[self.from] - self.gain
    }
}

/// Two alternative constraint sets, indexed by [`Order`].
#[derive(Debug, Clone, PartialEq)]
pub struct Disjunction {
    pub sides: [Vec<Edge>; 2],
    pub fixed: Option<Order>,
}

impl Disjunction {
    pub fn side(&self, order: Order) -> &[Edge] {
        &self.sides[order.index()]
    }

    /// Largest constraint violation of one side under `x` (0 if it holds).
    pub fn violation(&self, order: Order, x: &[f64]) -> f64 {
        self.side(order)
            .iter()
            .map(|e| (-e.slack(x)).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn satisfied_by(&self, x: &[f64]) -> Option<Order> {
        [Order::After, Order::Before]
            .into_iter()
            .find(|o| self.violation(*o, x) <= SLACK_TOL)
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn push(&mut self, e: Edge) {
        self.adj[e.from].push((e.to, e.gain));
    }

    /// Removes the most recent edge leaving `e.from`; must mirror `push`.
    fn pop(&mut self, e: Edge) {
        let last = self.adj[e.from].pop();
        debug_assert_eq!(last, Some((e.to, e.gain)));
    }

    /// Raises `x` to the least fixpoint above it, starting from `seeds`.
    /// Returns false if the system is inconsistent.
    pub fn propagate(&self, x: &mut [f64], seeds: impl IntoIterator<Item = usize>) -> bool {
        let n = self.adj.len();
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut queued = vec![false; n];
        let mut count = vec![0usize; n];
        for s in seeds {
            if !queued[s] {
                queued[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            let xu = x[u];
            if xu == f64::NEG_INFINITY {
                continue;
            }
            for &(v, g) in &self.adj[u] {
                let cand = xu + g;
                if cand > x[v] + RELAX_EPS {
                    if v == ORIGIN {
                        if cand > SLACK_TOL {
                            return false;
                        }
                        continue;
                    }
                    x[v] = cand;
                    if !queued[v] {
                        // A node entering the queue n times lies on a positive cycle.
                        count[v] += 1;
                        if count[v] > n {
                            return false;
                        }
                        queued[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        true
    }

    /// Earliest solution from scratch, or `None` if inconsistent.
    pub fn earliest(&self) -> Option<Vec<f64>> {
        let mut x = vec![f64::NEG_INFINITY; self.adj.len()];
        x[ORIGIN] = 0.0;
        self.propagate(&mut x, [ORIGIN]).then_some(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub orders: Vec<Order>,
    pub nodes: u64,
    pub leaves: u64,
    /// False when the node budget ran out before the search finished.
    pub complete: bool,
}

/// Minimizes the sum of `x[k]` over `objective` subject to the base edges
/// and exactly one side of every disjunction.
///
/// Branching is lazy: a node's relaxation drops every undecided
/// disjunction, and only a disjunction that the relaxed earliest solution
/// breaks is branched on. The earliest solution is componentwise minimal,
/// so it is optimal for any objective that is a sum of times.
pub fn branch_and_bound(
    base: &[Edge],
    nodes: usize,
    disjunctions: &[Disjunction],
    objective: &[usize],
    incumbent: Option<(f64, Vec<f64>, Vec<Order>)>,
    node_budget: Option<u64>,
) -> Option<SearchOutcome> {
    let mut graph = Graph::new(nodes);
    for e in base {
        graph.push(*e);
    }
    let mut state: Vec<Option<Order>> = disjunctions.iter().map(|d| d.fixed).collect();
    for d in disjunctions {
        if let Some(o) = d.fixed {
            for e in d.side(o) {
                graph.push(*e);
            }
        }
    }
    let root = graph.earliest();
    let mut search = Search {
        graph,
        disjunctions,
        objective,
        best: incumbent,
        nodes: 0,
        leaves: 0,
        budget: node_budget.unwrap_or(u64::MAX),
        complete: true,
    };
    if let Some(x) = root {
        search.visit(x, &mut state);
    }
    let complete = search.complete;
    search.best.map(|(objective, x, orders)| SearchOutcome {
        x,
        objective,
        orders,
        nodes: search.nodes,
        leaves: search.leaves,
        complete,
    })
}

struct Search<'a> {
    graph: Graph,
    disjunctions: &'a [Disjunction],
    objective: &'a [usize],
    best: Option<(f64, Vec<f64>, Vec<Order>)>,
    nodes: u64,
    leaves: u64,
    budget: u64,
    complete: bool,
}

impl Search<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&k| x[k]).sum()
    }

    fn visit(&mut self, x: Vec<f64>, state: &mut [Option<Order>]) {
        self.nodes += 1;
        let value = self.value(&x);
        if let Some((best, _, _)) = &self.best {
            if value >= best - SLACK_TOL {
                return;
            }
        }
        let broken = state
            .iter()
            .zip(self.disjunctions)
            .position(|(s, d)| s.is_none() && d.satisfied_by(&x).is_none());
        let Some(k) = broken else {
            self.leaves += 1;
            let orders = state
                .iter()
                .zip(self.disjunctions)
                .map(|(s, d)| s.or_else(|| d.satisfied_by(&x)).unwrap_or(Order::After))
                .collect();
            self.best = Some((value, x, orders));
            return;
        };
        let d = &self.disjunctions[k];
        let first = if d.violation(Order::After, &x) <= d.violation(Order::Before, &x) {
            Order::After
        } else {
            Order::Before
        };
        let second = match first {
            Order::After => Order::Before,
            Order::Before => Order::After,
        };
        for order in [first, second] {
            if self.nodes >= self.budget {
                self.complete = false;
                return;
            }
            let edges = d.side(order);
            for e in edges {
                self.graph.push(*e);
            }
            let mut child = x.clone();
            let ok = self
                .graph
                .propagate(&mut child, edges.iter().map(|e| e.from));
            state[k] = Some(order);
            if ok {
                self.visit(child, state);
            }
            state[k] = None;
            for e in edges.iter().rev() {
                self.graph.pop(*e);
            }
        }
    }
}
