//! Deterministic routing functions on the layered mesh.
//!
//! All functions work on logical addresses. Layer 1 is the top (coarsest)
//! layer, so `Down` moves towards higher layer indices and faster routers.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perfmodel::{hop_thresholds, propagation_speed, LayerTiming, HOP_SENTINEL};
use crate::topology::{hop_distance, Address, Direction, Hop, RouterId, StackConfig, TopologyGraph};

/// A set of output directions; empty means "deliver locally".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RoutingDecision(u8);

impl RoutingDecision {
    pub const LOCAL: RoutingDecision = RoutingDecision(0);

    pub fn one(dir: Direction) -> Self {
        RoutingDecision(1 << dir.index())
    }

    pub fn from_dirs(dirs: &[Direction]) -> Self {
        RoutingDecision(dirs.iter().fold(0, |acc, d| acc | 1 << d.index()))
    }

    pub fn is_local(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.is_local()
    }

    pub fn contains(&self, dir: Direction) -> bool {
        self.0 & (1 << dir.index()) != 0
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        Direction::ALL.into_iter().filter(|d| self.contains(*d))
    }
}

impl fmt::Display for RoutingDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_local() {
            return write!(f, "local");
        }
        let names: Vec<_> = self.directions().map(|d| d.name()).collect();
        write!(f, "{}", names.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("routing returned {0} directions where exactly one was expected")]
    Ambiguous(usize),
    #[error("routing from {from} towards {dst} chose {dir}, but there is no such link")]
    MissingLink { from: Address, dst: Address, dir: Direction },
    #[error("route from {src} to {dst} did not terminate within {bound} hops")]
    NoTermination { src: Address, dst: Address, bound: usize },
    #[error("route from {src} to {dst} stopped early at {at}")]
    StoppedEarly { src: Address, dst: Address, at: Address },
    #[error("target layer {0} is outside the stack")]
    BadTargetLayer(u32),
    #[error("threshold table has {got} entries for a stack of {want} layers")]
    BadThresholds { got: usize, want: usize },
}

/// Picks the single output of a deterministic decision.
pub fn select(decision: RoutingDecision) -> Result<Option<Direction>, RoutingError> {
    match decision.len() {
        0 => Ok(None),
        1 => Ok(decision.directions().next()),
        n => Err(RoutingError::Ambiguous(n)),
    }
}

/// Anything that maps (current router, destination) to output directions.
pub trait RoutingFunction: Sync {
    fn name(&self) -> &str;
    fn route(&self, g: &TopologyGraph, v: RouterId, d: RouterId) -> RoutingDecision;
}

/// Dimension order: X, then Y, then Z.
pub fn route_xyz(v: Address, d: Address) -> RoutingDecision {
    use std::cmp::Ordering::*;
    let dir = match (v.x.cmp(&d.x), v.y.cmp(&d.y), v.z.cmp(&d.z)) {
        (Less, _, _) => Direction::East,
        (Greater, _, _) => Direction::West,
        (Equal, Greater, _) => Direction::North,
        (Equal, Less, _) => Direction::South,
        (Equal, Equal, Less) => Direction::Down,
        (Equal, Equal, Greater) => Direction::Up,
        (Equal, Equal, Equal) => return RoutingDecision::LOCAL,
    };
    RoutingDecision::one(dir)
}

/// Dimension order on a layer whose routers sit `stride` grid units apart:
/// X and Y are resolved as far as this layer's grid allows, then the packet
/// changes layer and continues on the next layer's grid. With `stride = 1`
/// this is [`route_xyz`].
pub fn route_xyz_strided(v: Address, d: Address, stride: u32) -> RoutingDecision {
    let dir = if d.x >= v.x + stride {
        Direction::East
    } else if v.x >= d.x + stride {
        Direction::West
    } else if v.y >= d.y + stride {
        Direction::North
    } else if d.y >= v.y + stride {
        Direction::South
    } else if v.z < d.z {
        Direction::Down
    } else if v.z > d.z {
        Direction::Up
    } else {
        return RoutingDecision::LOCAL;
    };
    RoutingDecision::one(dir)
}

/// "Stay in faster layers": descend first when the destination is lower,
/// travel horizontally in the lower of the two layers, then climb.
pub fn route_r1(v: Address, d: Address) -> RoutingDecision {
    if v == d {
        RoutingDecision::LOCAL
    } else if v.z < d.z {
        RoutingDecision::one(Direction::Down)
    } else {
        // Same layer or below the destination: X, Y, then up.
        route_xyz(v, d)
    }
}

/// "Go through faster layers": descend while the remaining horizontal
/// distance exceeds the current layer's threshold, otherwise as
/// [`route_r1`] (with the algorithm's tie handling).
pub fn route_r2(v: Address, d: Address, alg: &RoutingAlgorithm) -> RoutingDecision {
    if v == d {
        return RoutingDecision::LOCAL;
    }
    if v.z >= d.z && hop_distance(v, d) > alg.threshold(v.z) {
        return RoutingDecision::one(Direction::Down);
    }
    alg.r1_decision(v, d)
}

/// How R1 treats a packet whose source and destination layers have the
/// same propagation speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Travel in the current layer, as dimension-order routing does.
    #[default]
    Stay,
    /// Descend first, exactly as when the lower layer is faster.
    Descend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Xyz,
    R1,
    R2,
    /// Quadrant-dependent turn order that closes a counter-clockwise turn
    /// cycle; deliberately not deadlock-free.
    Adversarial,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Xyz => "xyz",
            Variant::R1 => "r1",
            Variant::R2 => "r2",
            Variant::Adversarial => "adversarial",
        }
    }
}

/// A configured routing algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingAlgorithm {
    pub variant: Variant,
    /// Layer that rerouted packets descend to.
    pub target_layer: u32,
    /// Hop threshold per layer, index `z − 1`.
    pub thresholds: Vec<u32>,
    pub tie_break: TieBreak,
    /// Propagation speed per layer, index `z − 1`.
    speeds: Vec<f64>,
    /// Grid stride per layer, index `z − 1`.
    strides: Vec<u32>,
}

impl RoutingAlgorithm {
    /// Algorithm with thresholds derived from the stack's timing, targeting
    /// the bottom layer.
    pub fn new(variant: Variant, stack: &StackConfig) -> Self {
        let depth = stack.depth();
        RoutingAlgorithm {
            variant,
            target_layer: depth,
            thresholds: hop_thresholds(stack, depth),
            tie_break: TieBreak::default(),
            speeds: (1..=depth).map(|z| propagation_speed(&LayerTiming::of(stack, z))).collect(),
            strides: stack.layers.iter().map(|l| l.grid_stride).collect(),
        }
    }

    pub fn with_target_layer(mut self, stack: &StackConfig, target: u32) -> Result<Self, RoutingError> {
        if target == 0 || target > stack.depth() {
            return Err(RoutingError::BadTargetLayer(target));
        }
        self.target_layer = target;
        self.thresholds = hop_thresholds(stack, target);
        Ok(self)
    }

    /// Overrides the threshold of every layer above the target layer.
    pub fn with_uniform_threshold(mut self, hops: u32) -> Self {
        for (i, t) in self.thresholds.iter_mut().enumerate() {
            if (i as u32 + 1) < self.target_layer {
                *t = hops;
            }
        }
        self
    }

    pub fn with_thresholds(mut self, thresholds: Vec<u32>) -> Result<Self, RoutingError> {
        if thresholds.len() != self.thresholds.len() {
            return Err(RoutingError::BadThresholds { got: thresholds.len(), want: self.thresholds.len() });
        }
        self.thresholds = thresholds;
        Ok(self)
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    /// Threshold of layer `z`; layers at or below the target never descend.
    pub fn threshold(&self, z: u32) -> u32 {
        if z >= self.target_layer {
            HOP_SENTINEL
        } else {
            self.thresholds[(z - 1) as usize]
        }
    }

    pub fn speed(&self, z: u32) -> f64 {
        self.speeds[(z - 1) as usize]
    }

    fn same_speed(&self, a: u32, b: u32) -> bool {
        let (x, y) = (self.speed(a), self.speed(b));
        (x - y).abs() <= 1e-12 * x.abs().max(y.abs())
    }

    /// True if some pair of layers is routed in dimension order because of
    /// the tie rule.
    pub fn has_dimension_order_ties(&self) -> bool {
        if self.tie_break != TieBreak::Stay || !matches!(self.variant, Variant::R1 | Variant::R2) {
            return false;
        }
        let n = self.speeds.len() as u32;
        (1..=n).any(|a| (a + 1..=n).any(|b| self.same_speed(a, b)))
    }

    /// True if some layer is coarser than the one below it, so that
    /// dimension-order routes may move horizontally after descending.
    pub fn has_coarse_layers(&self) -> bool {
        self.strides.windows(2).any(|w| w[0] != w[1])
    }

    fn xyz(&self, v: Address, d: Address) -> RoutingDecision {
        route_xyz_strided(v, d, self.strides[(v.z - 1) as usize])
    }

    fn r1_decision(&self, v: Address, d: Address) -> RoutingDecision {
        if self.tie_break == TieBreak::Stay && v.z < d.z && self.same_speed(v.z, d.z) {
            return self.xyz(v, d);
        }
        route_r1(v, d)
    }

    pub fn decide(&self, v: Address, d: Address) -> RoutingDecision {
        match self.variant {
            Variant::Xyz => self.xyz(v, d),
            Variant::R1 => self.r1_decision(v, d),
            Variant::R2 => route_r2(v, d, self),
            Variant::Adversarial => route_adversarial(v, d, self.strides[(v.z - 1) as usize]),
        }
    }
}

impl RoutingFunction for RoutingAlgorithm {
    fn name(&self) -> &str {
        self.variant.name()
    }

    fn route(&self, g: &TopologyGraph, v: RouterId, d: RouterId) -> RoutingDecision {
        self.decide(g.addr(v), g.addr(d))
    }
}

/// Quadrant routing whose four first-leg/second-leg pairs form the turns
/// east→north, north→west, west→south and south→east.
fn route_adversarial(v: Address, d: Address, stride: u32) -> RoutingDecision {
    use Direction::*;
    // Offsets smaller than the layer's stride are left to lower layers.
    let reachable = |delta: i64| if delta.unsigned_abs() < stride as u64 { 0 } else { delta };
    let dx = reachable(d.x as i64 - v.x as i64);
    // North is towards smaller y.
    let dy = reachable(v.y as i64 - d.y as i64);
    let dir = match (dx.signum(), dy.signum()) {
        (0, 0) => return route_xyz_strided(v, d, stride),
        (1, 1) | (1, 0) => East,
        (-1, 1) | (0, 1) => North,
        (-1, -1) | (-1, 0) => West,
        (1, -1) | (0, -1) => South,
        _ => unreachable!(),
    };
    RoutingDecision::one(dir)
}

/// Follows `r` from `s` to `d`, returning every router visited with the
/// direction taken there.
pub fn trace_route(
    g: &TopologyGraph,
    r: &dyn RoutingFunction,
    s: RouterId,
    d: RouterId,
    bound: usize,
) -> Result<Vec<Hop>, RoutingError> {
    let mut hops = Vec::new();
    let mut v = s;
    loop {
        if hops.len() > bound {
            return Err(RoutingError::NoTermination { src: g.addr(s), dst: g.addr(d), bound });
        }
        let out = select(r.route(g, v, d))?;
        hops.push(Hop { router: v, out });
        match out {
            None if v == d => return Ok(hops),
            None => return Err(RoutingError::StoppedEarly { src: g.addr(s), dst: g.addr(d), at: g.addr(v) }),
            Some(dir) => {
                v = g.neighbor(v, dir).ok_or(RoutingError::MissingLink { from: g.addr(v), dst: g.addr(d), dir })?;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::tests::{layer, tech};
    use crate::topology::{build_topology, LayerSpec};
    use proptest::prelude::*;
    use Direction::*;

    fn a(x: u32, y: u32, z: u32) -> Address {
        Address::new(x, y, z)
    }

    /// Three layers with strictly increasing speed downwards.
    fn graded(rows: u32, cols: u32) -> StackConfig {
        let mk = |clk| LayerSpec { rows, cols, grid_stride: 1, tech: tech(90.0, clk, 1000.0) };
        let mut layers = vec![mk(4000), mk(2000), mk(1000)];
        layers[1].tech.feature_size_nm = 45.0;
        layers[2].tech.feature_size_nm = 22.0;
        StackConfig { layers }
    }

    #[test]
    fn decision_and_select() {
        assert_eq!(select(RoutingDecision::one(East)).unwrap(), Some(East));
        assert_eq!(select(RoutingDecision::LOCAL).unwrap(), None);
        assert_eq!(select(RoutingDecision::from_dirs(&[East, North])), Err(RoutingError::Ambiguous(2)));
        assert_eq!(RoutingDecision::from_dirs(&[East, North]).to_string(), "north|east");
    }

    #[test]
    fn xyz_examples() {
        assert_eq!(route_xyz(a(1, 1, 1), a(1, 1, 1)), RoutingDecision::LOCAL);
        assert_eq!(route_xyz(a(0, 0, 1), a(2, 0, 3)), RoutingDecision::one(East));
        assert_eq!(route_xyz(a(2, 0, 1), a(2, 0, 3)), RoutingDecision::one(Down));
        assert_eq!(route_xyz(a(2, 3, 1), a(2, 0, 1)), RoutingDecision::one(North));
    }

    #[test]
    fn r1_examples() {
        assert_eq!(route_r1(a(2, 3, 1), a(2, 3, 3)), RoutingDecision::one(Down));
        assert_eq!(route_r1(a(0, 0, 3), a(2, 0, 1)), RoutingDecision::one(East));
        assert_eq!(route_r1(a(2, 0, 3), a(2, 0, 1)), RoutingDecision::one(Up));
        assert_eq!(route_r1(a(0, 0, 1), a(2, 0, 3)), RoutingDecision::one(Down));
        assert_eq!(route_r1(a(3, 3, 2), a(3, 1, 2)), RoutingDecision::one(North));
    }

    #[test]
    fn r2_examples() {
        let stack = graded(6, 6);
        let alg = RoutingAlgorithm::new(Variant::R2, &stack).with_uniform_threshold(3);
        assert_eq!(route_r2(a(0, 0, 1), a(3, 2, 1), &alg), RoutingDecision::one(Down));
        assert_eq!(route_r2(a(0, 0, 1), a(2, 0, 1), &alg), route_r1(a(0, 0, 1), a(2, 0, 1)));
        assert_eq!(route_r2(a(4, 4, 2), a(4, 4, 2), &alg), RoutingDecision::LOCAL);
        // The target layer never descends further.
        assert_eq!(route_r2(a(0, 0, 3), a(5, 5, 1), &alg), RoutingDecision::one(East));
    }

    #[test]
    fn derived_thresholds() {
        // φ between a 4000 ps and a 1000 ps layer, both δ=3, ρ=1000 µm:
        // (12000 + 3000 + 4000)·10⁶ / (12000·1000 − 3000·1000) ≈ 2111 µm → 3 hops.
        let alg = RoutingAlgorithm::new(Variant::R2, &graded(4, 4));
        assert_eq!(alg.threshold(1), 3);
        // (6000 + 3000 + 2000)·10⁶ / (3000·1000) ≈ 3667 µm → 4 hops.
        assert_eq!(alg.threshold(2), 4);
        assert_eq!(alg.threshold(3), HOP_SENTINEL);
        let to_middle = RoutingAlgorithm::new(Variant::R2, &graded(4, 4)).with_target_layer(&graded(4, 4), 2).unwrap();
        assert_eq!(to_middle.threshold(2), HOP_SENTINEL);
        assert!(RoutingAlgorithm::new(Variant::R2, &graded(4, 4)).with_target_layer(&graded(4, 4), 4).is_err());
    }

    #[test]
    fn ties_follow_the_configured_rule() {
        let even = StackConfig { layers: vec![layer(4, 4, 1, tech(90.0, 1000, 1000.0)), layer(4, 4, 1, tech(45.0, 1000, 1000.0))] };
        let stay = RoutingAlgorithm::new(Variant::R1, &even);
        assert!(stay.has_dimension_order_ties());
        assert_eq!(stay.decide(a(0, 0, 1), a(2, 0, 2)), RoutingDecision::one(East));
        let descend = stay.clone().with_tie_break(TieBreak::Descend);
        assert!(!descend.has_dimension_order_ties());
        assert_eq!(descend.decide(a(0, 0, 1), a(2, 0, 2)), RoutingDecision::one(Down));
        assert!(!RoutingAlgorithm::new(Variant::R1, &graded(4, 4)).has_dimension_order_ties());
    }

    #[test]
    fn traces_follow_links() {
        let stack = graded(4, 4);
        let g = build_topology(&stack).unwrap();
        let id = |w| g.id_of(w).unwrap();
        let r1 = RoutingAlgorithm::new(Variant::R1, &stack);
        let hops = trace_route(&g, &r1, id(a(0, 0, 1)), id(a(3, 1, 2)), 100).unwrap();
        let dirs: Vec<_> = hops.iter().map(|h| h.out).collect();
        assert_eq!(dirs, vec![Some(Down), Some(East), Some(East), Some(East), Some(South), None]);
        let back = trace_route(&g, &r1, id(a(3, 1, 2)), id(a(0, 0, 1)), 100).unwrap();
        let dirs: Vec<_> = back.iter().map(|h| h.out).collect();
        assert_eq!(dirs, vec![Some(West), Some(West), Some(West), Some(North), Some(Up), None]);
    }

    struct StopsShort;
    impl RoutingFunction for StopsShort {
        fn name(&self) -> &str {
            "stops-short"
        }
        fn route(&self, g: &TopologyGraph, v: RouterId, d: RouterId) -> RoutingDecision {
            let (va, da) = (g.addr(v), g.addr(d));
            if hop_distance(va, da) == 1 && va.z == da.z {
                RoutingDecision::LOCAL
            } else {
                route_xyz(va, da)
            }
        }
    }

    #[test]
    fn broken_routing_is_reported() {
        let g = build_topology(&graded(3, 3)).unwrap();
        let id = |w| g.id_of(w).unwrap();
        let err = trace_route(&g, &StopsShort, id(a(0, 0, 1)), id(a(2, 0, 1)), 50).unwrap_err();
        assert!(matches!(err, RoutingError::StoppedEarly { .. }));
    }

    /// Potential that every R1/R2 step strictly decreases.
    fn potential(v: Address, d: Address, depth: u32) -> (u32, u32, u32) {
        let below = d.z.saturating_sub(v.z);
        let xy = v.x.abs_diff(d.x) + v.y.abs_diff(d.y);
        // R2 may descend past the destination layer while horizontal
        // distance remains; count the descents still available.
        let horizontal = if xy > 0 { xy + depth - v.z } else { 0 };
        (below, horizontal, v.z.saturating_sub(d.z))
    }

    fn step(w: Address, dir: Direction, g: &TopologyGraph) -> Address {
        g.addr(g.neighbor(g.id_of(w).unwrap(), dir).unwrap())
    }

    #[test]
    fn every_step_makes_progress() {
        for (rows, cols) in [(3, 3), (5, 5), (4, 5)] {
            let stack = graded(rows, cols);
            let g = build_topology(&stack).unwrap();
            let algs = [
                RoutingAlgorithm::new(Variant::Xyz, &stack),
                RoutingAlgorithm::new(Variant::R1, &stack),
                RoutingAlgorithm::new(Variant::R2, &stack),
                RoutingAlgorithm::new(Variant::R2, &stack).with_uniform_threshold(0),
            ];
            for alg in &algs {
                for s in g.routers() {
                    for d in g.routers() {
                        let (v, t) = (s.addr, d.addr);
                        if let Some(dir) = select(alg.decide(v, t)).unwrap() {
                            let w = step(v, dir, &g);
                            if alg.variant == Variant::Xyz {
                                let p = |u: Address| (u.x.abs_diff(t.x) + u.y.abs_diff(t.y), u.z.abs_diff(t.z));
                                assert!(p(w) < p(v));
                            } else {
                                assert!(potential(w, t, 3) < potential(v, t, 3), "{v} -> {w} towards {t}");
                            }
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn r2_with_sentinel_equals_r1(x1 in 0u32..5, y1 in 0u32..5, z1 in 1u32..4, x2 in 0u32..5, y2 in 0u32..5, z2 in 1u32..4) {
            let stack = graded(5, 5);
            let r2 = RoutingAlgorithm::new(Variant::R2, &stack).with_uniform_threshold(HOP_SENTINEL);
            let r1 = RoutingAlgorithm::new(Variant::R1, &stack);
            prop_assert_eq!(r2.decide(a(x1, y1, z1), a(x2, y2, z2)), r1.decide(a(x1, y1, z1), a(x2, y2, z2)));
        }

        #[test]
        fn r1_and_xyz_agree_in_one_layer(x1 in 0u32..5, y1 in 0u32..5, x2 in 0u32..5, y2 in 0u32..5, z in 1u32..4) {
            prop_assert_eq!(route_r1(a(x1, y1, z), a(x2, y2, z)), route_xyz(a(x1, y1, z), a(x2, y2, z)));
        }

        #[test]
        fn r1_descends_where_xyz_moves_horizontally(x1 in 0u32..5, y1 in 0u32..5, x2 in 0u32..5, y2 in 0u32..5, z1 in 1u32..3) {
            prop_assume!(x1 != x2);
            let (v, d) = (a(x1, y1, z1), a(x2, y2, 3));
            prop_assert_eq!(route_r1(v, d), RoutingDecision::one(Down));
            prop_assert!(!route_xyz(v, d).contains(Down));
        }
    }
}
