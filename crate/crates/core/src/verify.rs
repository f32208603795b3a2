//! Executable deadlock and livelock checks: channel dependency graph,
//! cycle search, connectivity, bounded termination and turn extraction.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::routing::{trace_route, RoutingAlgorithm, RoutingError, RoutingFunction, Variant};
use crate::topology::{Address, Arc, Direction, Hop, RouterId, TopologyGraph};

/// Largest grid verified exhaustively, in routers (6×6×4).
pub const EXHAUSTIVE_ROUTER_LIMIT: usize = 6 * 6 * 4;
/// Number of sampled pairs above that limit.
pub const SAMPLED_PAIRS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("route from {src} to {dst} did not terminate: {source}")]
    Routing { src: Address, dst: Address, source: RoutingError },
    #[error("hop bound {bound} is smaller than the router count {routers}")]
    HopBoundTooSmall { bound: usize, routers: usize },
}

/// Which (source, destination) pairs are walked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    /// All ordered pairs, or a deterministic sample on grids above
    /// [`EXHAUSTIVE_ROUTER_LIMIT`].
    Auto,
    All,
    Sampled { pairs: usize, seed: u64 },
}

fn pairs(g: &TopologyGraph, coverage: Coverage) -> Vec<(RouterId, RouterId)> {
    let n = g.router_count() as u32;
    let all = || (0..n).flat_map(|s| (0..n).map(move |d| (RouterId(s), RouterId(d)))).collect::<Vec<_>>();
    match coverage {
        Coverage::All => all(),
        Coverage::Auto if g.router_count() <= EXHAUSTIVE_ROUTER_LIMIT => all(),
        Coverage::Auto => {
            log::warn!(
                "{} routers exceed the exhaustive limit of {}; checking {} sampled pairs",
                g.router_count(),
                EXHAUSTIVE_ROUTER_LIMIT,
                SAMPLED_PAIRS
            );
            sample(all(), SAMPLED_PAIRS, 0)
        }
        Coverage::Sampled { pairs, seed } => sample(all(), pairs, seed),
    }
}

fn sample(mut all: Vec<(RouterId, RouterId)>, k: usize, seed: u64) -> Vec<(RouterId, RouterId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(k);
    all.sort();
    all
}

struct Walk {
    src: RouterId,
    dst: RouterId,
    result: Result<Vec<Hop>, RoutingError>,
}

fn walk_all(g: &TopologyGraph, r: &dyn RoutingFunction, coverage: Coverage, bound: usize) -> Vec<Walk> {
    pairs(g, coverage)
        .into_par_iter()
        .map(|(src, dst)| Walk { src, dst, result: trace_route(g, r, src, dst, bound) })
        .collect()
}

/// Default hop bound: a deterministic route longer than the router count
/// revisits a router with the same destination and never ends.
fn default_bound(g: &TopologyGraph) -> usize {
    g.router_count()
}

/// Arc indices traversed by a route, in order.
fn route_arcs(g: &TopologyGraph, hops: &[Hop]) -> Vec<usize> {
    hops.windows(2)
        .map(|w| g.arc_index(Arc { src: w[0].router, dst: w[1].router }).expect("route follows links"))
        .collect()
}

/// Dependencies between the arcs of the topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelDependencyGraph {
    /// Vertices: arcs of the topology, indexed like [`TopologyGraph::arcs`].
    pub arcs: Vec<(Arc, Direction)>,
    /// Sorted successor lists.
    pub edges: Vec<Vec<usize>>,
}

impl ChannelDependencyGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges[a].binary_search(&b).is_ok()
    }

    /// Graph with explicit vertices and edges.
    pub fn from_edges(arcs: Vec<(Arc, Direction)>, edge_list: &[(usize, usize)]) -> Self {
        let mut edges = vec![Vec::new(); arcs.len()];
        for &(a, b) in edge_list {
            edges[a].push(b);
        }
        for e in &mut edges {
            e.sort_unstable();
            e.dedup();
        }
        ChannelDependencyGraph { arcs, edges }
    }
}

/// Builds the dependency graph by walking every route of `r`.
pub fn build_cdg(g: &TopologyGraph, r: &dyn RoutingFunction) -> Result<ChannelDependencyGraph, VerifyError> {
    build_cdg_with(g, r, Coverage::Auto)
}

pub fn build_cdg_with(
    g: &TopologyGraph,
    r: &dyn RoutingFunction,
    coverage: Coverage,
) -> Result<ChannelDependencyGraph, VerifyError> {
    let mut list = Vec::new();
    for walk in walk_all(g, r, coverage, default_bound(g)) {
        let hops = walk.result.map_err(|source| VerifyError::Routing {
            src: g.addr(walk.src),
            dst: g.addr(walk.dst),
            source,
        })?;
        let arcs = route_arcs(g, &hops);
        list.extend(arcs.windows(2).map(|w| (w[0], w[1])));
    }
    Ok(ChannelDependencyGraph::from_edges(g.arcs().to_vec(), &list))
}

/// A dependency cycle, as arc indices; the last arc depends back on the first.
pub fn find_cycle(cdg: &ChannelDependencyGraph) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = cdg.arcs.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // Iterative DFS; the stack holds (vertex, next successor position).
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = cdg.edges[v].get(*next) {
                *next += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Open;
                        stack.push((w, 0));
                    }
                    Mark::Open => {
                        let start = stack.iter().position(|&(u, _)| u == w).expect("open vertex is on the stack");
                        return Some(stack[start..].iter().map(|&(u, _)| u).collect());
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Checks that `cycle` is a closed walk of dependencies in `cdg`, each
/// consecutive pair of arcs meeting at a shared router.
pub fn replay_cycle(cdg: &ChannelDependencyGraph, cycle: &[usize]) -> bool {
    if cycle.is_empty() {
        return false;
    }
    (0..cycle.len()).all(|i| {
        let (a, b) = (cycle[i], cycle[(i + 1) % cycle.len()]);
        cdg.has_edge(a, b) && cdg.arcs[a].0.dst == cdg.arcs[b].0.src
    })
}

/// Writes a cycle witness as CSV (step, src_id, dst_id, direction).
pub fn write_cycle_csv<W: Write>(cdg: &ChannelDependencyGraph, cycle: &[usize], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "src_id", "dst_id", "direction"])?;
    for (i, &a) in cycle.iter().enumerate() {
        let (arc, dir) = cdg.arcs[a];
        w.write_record([i.to_string(), arc.src.0.to_string(), arc.dst.0.to_string(), dir.name().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityVerdict {
    pub connected: bool,
    pub pairs_checked: usize,
    pub counterexample: Option<(RouterId, RouterId)>,
}

/// Every checked pair reaches its destination by following `r`.
pub fn check_connected(g: &TopologyGraph, r: &dyn RoutingFunction) -> ConnectivityVerdict {
    check_connected_with(g, r, Coverage::Auto)
}

pub fn check_connected_with(g: &TopologyGraph, r: &dyn RoutingFunction, coverage: Coverage) -> ConnectivityVerdict {
    let walks = walk_all(g, r, coverage, default_bound(g));
    let counterexample = walks.iter().find(|w| w.result.is_err()).map(|w| (w.src, w.dst));
    ConnectivityVerdict { connected: counterexample.is_none(), pairs_checked: walks.len(), counterexample }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LivelockVerdict {
    pub livelock_free: bool,
    pub max_route_hops: usize,
    pub witness: Option<(RouterId, RouterId)>,
}

/// Every checked route ends within `hop_bound` hops.
pub fn check_livelock_free(
    g: &TopologyGraph,
    r: &dyn RoutingFunction,
    hop_bound: usize,
) -> Result<LivelockVerdict, VerifyError> {
    check_livelock_free_with(g, r, hop_bound, Coverage::Auto)
}

pub fn check_livelock_free_with(
    g: &TopologyGraph,
    r: &dyn RoutingFunction,
    hop_bound: usize,
    coverage: Coverage,
) -> Result<LivelockVerdict, VerifyError> {
    if hop_bound < g.router_count() {
        return Err(VerifyError::HopBoundTooSmall { bound: hop_bound, routers: g.router_count() });
    }
    let walks = walk_all(g, r, coverage, hop_bound);
    let mut verdict = LivelockVerdict { livelock_free: true, max_route_hops: 0, witness: None };
    for w in &walks {
        match &w.result {
            Ok(hops) => verdict.max_route_hops = verdict.max_route_hops.max(hops.len() - 1),
            Err(RoutingError::NoTermination { .. }) => {
                if verdict.witness.is_none() {
                    verdict.witness = Some((w.src, w.dst));
                }
                verdict.livelock_free = false;
            }
            // Routes that stop or leave the network terminate; connectivity
            // reports them.
            Err(_) => {}
        }
    }
    Ok(verdict)
}

/// Which consecutive direction pairs (f, g) occur on routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TurnMatrix(pub [[bool; 6]; 6]);

const fn rows(bits: [[u8; 6]; 6]) -> TurnMatrix {
    let mut m = [[false; 6]; 6];
    let mut i = 0;
    while i < 6 {
        let mut j = 0;
        while j < 6 {
            m[i][j] = bits[i][j] == 1;
            j += 1;
        }
        i += 1;
    }
    TurnMatrix(m)
}

impl TurnMatrix {
    /// Turns that "stay in / go through faster layers" routing may take.
    /// Rows and columns are ordered n, e, s, w, u, d.
    pub const LAYERED: TurnMatrix = rows([
        [1, 0, 0, 0, 1, 0],
        [1, 1, 1, 0, 1, 0],
        [0, 0, 1, 0, 1, 0],
        [1, 0, 1, 1, 1, 0],
        [0, 0, 0, 0, 1, 0],
        [1, 1, 1, 1, 0, 1],
    ]);

    /// Turns of X-then-Y-then-Z dimension-order routing.
    pub const DIMENSION_ORDER: TurnMatrix = rows([
        [1, 0, 0, 0, 1, 1],
        [1, 1, 1, 0, 1, 1],
        [0, 0, 1, 0, 1, 1],
        [1, 0, 1, 1, 1, 1],
        [0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 1],
    ]);

    pub fn get(&self, f: Direction, g: Direction) -> bool {
        self.0[f.index()][g.index()]
    }

    pub fn set(&mut self, f: Direction, g: Direction) {
        self.0[f.index()][g.index()] = true;
    }

    pub fn union(&self, other: &TurnMatrix) -> TurnMatrix {
        let mut m = *self;
        for f in Direction::ALL {
            for g in Direction::ALL {
                if other.get(f, g) {
                    m.set(f, g);
                }
            }
        }
        m
    }

    pub fn is_subset_of(&self, other: &TurnMatrix) -> bool {
        self.deltas(other).iter().all(|d| !d.observed || d.reference)
    }

    /// Entries where this matrix and `reference` differ.
    pub fn deltas(&self, reference: &TurnMatrix) -> Vec<TurnDelta> {
        let mut out = Vec::new();
        for f in Direction::ALL {
            for g in Direction::ALL {
                if self.get(f, g) != reference.get(f, g) {
                    out.push(TurnDelta { from: f, to: g, observed: self.get(f, g), reference: reference.get(f, g) });
                }
            }
        }
        out
    }
}

impl fmt::Display for TurnMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "  ")?;
        for g in Direction::ALL {
            write!(f, " {}", g.letter())?;
        }
        for r in Direction::ALL {
            write!(f, "\n{} ", r.letter())?;
            for c in Direction::ALL {
                write!(f, " {}", u8::from(self.get(r, c)))?;
            }
        }
        Ok(())
    }
}

/// One entry where observed turns differ from a reference table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TurnDelta {
    pub from: Direction,
    pub to: Direction,
    pub observed: bool,
    pub reference: bool,
}

/// Turns taken by the routes of `r`.
pub fn extract_turn_matrix(g: &TopologyGraph, r: &dyn RoutingFunction) -> TurnMatrix {
    extract_turn_matrix_with(g, r, Coverage::Auto)
}

pub fn extract_turn_matrix_with(g: &TopologyGraph, r: &dyn RoutingFunction, coverage: Coverage) -> TurnMatrix {
    let mut m = TurnMatrix::default();
    for walk in walk_all(g, r, coverage, default_bound(g)) {
        if let Ok(hops) = walk.result {
            let dirs: Vec<_> = hops.iter().filter_map(|h| h.out).collect();
            for w in dirs.windows(2) {
                m.set(w[0], w[1]);
            }
        }
    }
    m
}

/// The turn table an algorithm is checked against.
pub fn reference_turns(alg: &RoutingAlgorithm) -> TurnMatrix {
    match alg.variant {
        Variant::Xyz => dimension_order_turns(alg),
        Variant::R1 | Variant::R2 if alg.has_dimension_order_ties() => TurnMatrix::LAYERED.union(&dimension_order_turns(alg)),
        _ => TurnMatrix::LAYERED,
    }
}

/// Dimension-order turns, plus horizontal moves after descending when a
/// coarse layer leaves part of the offset to the layer below.
fn dimension_order_turns(alg: &RoutingAlgorithm) -> TurnMatrix {
    let mut m = TurnMatrix::DIMENSION_ORDER;
    if alg.has_coarse_layers() {
        for g in [Direction::North, Direction::East, Direction::South, Direction::West] {
            m.set(Direction::Down, g);
        }
    }
    m
}

/// All checks for one routing on one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub routing: String,
    pub sampled: bool,
    pub connectivity: ConnectivityVerdict,
    pub livelock: LivelockVerdict,
    /// `None` if the dependency graph could not be built.
    pub cycle: Option<Vec<usize>>,
    pub cdg: Option<ChannelDependencyGraph>,
    pub cdg_error: Option<String>,
    pub turns: TurnMatrix,
    pub reference: TurnMatrix,
}

impl VerificationReport {
    pub fn cdg_acyclic(&self) -> bool {
        self.cdg.is_some() && self.cycle.is_none()
    }

    pub fn turns_within_reference(&self) -> bool {
        self.turns.is_subset_of(&self.reference)
    }

    pub fn deadlock_free(&self) -> bool {
        self.connectivity.connected && self.cdg_acyclic()
    }

    pub fn all_pass(&self) -> bool {
        self.deadlock_free() && self.livelock.livelock_free && self.turns_within_reference()
    }

    /// `(check, pass, detail)` rows.
    pub fn rows(&self, g: &TopologyGraph) -> Vec<(&'static str, bool, String)> {
        let pair = |p: Option<(RouterId, RouterId)>| {
            p.map(|(s, d)| format!("{} -> {}", g.addr(s), g.addr(d))).unwrap_or_default()
        };
        let cycle_detail = match (&self.cdg_error, &self.cycle) {
            (Some(e), _) => e.clone(),
            (None, Some(c)) => format!("cycle of {} arcs", c.len()),
            (None, None) => String::new(),
        };
        let deltas = self.turns.deltas(&self.reference);
        let extra: Vec<_> = deltas.iter().filter(|d| d.observed).map(|d| format!("{}{}", d.from.letter(), d.to.letter())).collect();
        let unseen = deltas.iter().filter(|d| !d.observed).count();
        vec![
            ("connected", self.connectivity.connected, pair(self.connectivity.counterexample)),
            ("cdg_acyclic", self.cdg_acyclic(), cycle_detail),
            (
                "livelock_free",
                self.livelock.livelock_free,
                format!("max_route_hops={} {}", self.livelock.max_route_hops, pair(self.livelock.witness)).trim().to_string(),
            ),
            (
                "turns_within_reference",
                self.turns_within_reference(),
                if extra.is_empty() {
                    format!("{unseen} reference turns not exercised")
                } else {
                    format!("unexpected turns: {}", extra.join(" "))
                },
            ),
        ]
    }
}

/// Runs every check of `r` against `reference`.
pub fn verify_routing(
    g: &TopologyGraph,
    r: &dyn RoutingFunction,
    reference: TurnMatrix,
    coverage: Coverage,
) -> VerificationReport {
    let sampled = !matches!(coverage, Coverage::All)
        && (matches!(coverage, Coverage::Sampled { .. }) || g.router_count() > EXHAUSTIVE_ROUTER_LIMIT);
    let (cdg, cdg_error) = match build_cdg_with(g, r, coverage) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let cycle = cdg.as_ref().and_then(find_cycle);
    VerificationReport {
        routing: r.name().to_string(),
        sampled,
        connectivity: check_connected_with(g, r, coverage),
        livelock: check_livelock_free_with(g, r, default_bound(g), coverage).expect("bound equals router count"),
        cycle,
        cdg,
        cdg_error,
        turns: extract_turn_matrix_with(g, r, coverage),
        reference,
    }
}
