//! Layer stacks, router addressing and the 3D mesh digraph.
//!
//! Every layer lives on the logical grid of the bottom (finest) layer. A
//! layer with `grid_stride = k` occupies the logical positions
//! `(x·k, y·k)` for `x < cols`, `y < rows`. Addresses are always expressed in
//! logical coordinates, so comparisons such as `v_x < d_x` are meaningful
//! across layers and Manhattan distances are counted in bottom-layer hops.
//!
//! Layer indices are 1-based: layer 1 is the topmost, coarsest technology and
//! layer `ℓ` the bottom-most, finest one. "Down" therefore means towards a
//! larger layer index.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-layer technology parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologyNode {
    /// Feature size in nm.
    pub feature_size_nm: f64,
    /// Router clock period in ps.
    pub clk_period_ps: u64,
    /// Cycles a head flit spends in a router before it can leave.
    pub head_delay: u32,
    /// Cycles of head processing that may overlap the previous packet.
    pub pipeline_depth: u32,
    /// Average distance between neighbouring routers in µm.
    pub router_pitch_um: f64,
}

impl TechnologyNode {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.feature_size_nm > 0.0) {
            return Err("feature size must be positive".into());
        }
        if self.clk_period_ps == 0 {
            return Err("clock period must be positive".into());
        }
        if self.head_delay < 1 {
            return Err("head delay must be at least one cycle".into());
        }
        if self.pipeline_depth > self.head_delay {
            return Err(format!(
                "pipeline depth {} exceeds head delay {}",
                self.pipeline_depth, self.head_delay
            ));
        }
        if !(self.router_pitch_um > 0.0) {
            return Err("router pitch must be positive".into());
        }
        Ok(())
    }
}

/// One layer of the stack: a `rows × cols` mesh placed at `grid_stride` on
/// the shared logical grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub rows: u32,
    pub cols: u32,
    pub tech: TechnologyNode,
    pub grid_stride: u32,
}

impl LayerSpec {
    /// Largest logical x coordinate occupied by this layer.
    pub fn max_x(&self) -> u32 {
        (self.cols - 1) * self.grid_stride
    }

    /// Largest logical y coordinate occupied by this layer.
    pub fn max_y(&self) -> u32 {
        (self.rows - 1) * self.grid_stride
    }

    pub fn router_count(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    /// Whether logical `(x, y)` hosts a router of this layer.
    pub fn occupies(&self, x: u32, y: u32) -> bool {
        x % self.grid_stride == 0
            && y % self.grid_stride == 0
            && x <= self.max_x()
            && y <= self.max_y()
    }
}

/// Ordered layer list; index 0 of `layers` is layer 1 (top).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("a stack needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: u32, reason: String },
    #[error("layer {upper} is not nested in layer {lower}: upper router at ({x},{y}) has no router below")]
    NotNested { upper: u32, lower: u32, x: u32, y: u32 },
    #[error("layer {layer}: clock period {period_ps} ps is not an integer multiple of the fastest period {fastest_ps} ps")]
    NonIntegerClockRatio { layer: u32, period_ps: u64, fastest_ps: u64 },
    #[error("layer {layer}: feature size {tau} nm is larger than the {above} nm of the layer above")]
    FeatureSizeOrder { layer: u32, tau: f64, above: f64 },
    #[error("address {0} is not a router of this stack")]
    BadAddress(Address),
    #[error("({0}, {1}) is not an arc of the topology")]
    NotAnArc(RouterId, RouterId),
}

impl StackConfig {
    /// Number of layers ℓ.
    pub fn depth(&self) -> u32 {
        self.layers.len() as u32
    }

    /// Layer `z` (1-based).
    pub fn layer(&self, z: u32) -> &LayerSpec {
        &self.layers[(z - 1) as usize]
    }

    /// Pitch of the bottom layer; one logical grid unit in µm.
    pub fn grid_unit_um(&self) -> f64 {
        self.layers.last().expect("non-empty stack").tech.router_pitch_um
    }

    /// Smallest clock period of all layers (one global tick).
    pub fn fastest_period_ps(&self) -> u64 {
        self.layers.iter().map(|l| l.tech.clk_period_ps).min().unwrap_or(1)
    }

    /// Clock period of layer `z` in global ticks.
    pub fn period_ticks(&self, z: u32) -> u64 {
        self.layer(z).tech.clk_period_ps / self.fastest_period_ps()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.layers.len() < 2 {
            return Err(TopologyError::TooFewLayers(self.layers.len()));
        }
        let fastest = self.fastest_period_ps();
        for (i, l) in self.layers.iter().enumerate() {
            let layer = i as u32 + 1;
            l.tech
                .validate()
                .map_err(|reason| TopologyError::InvalidLayer { layer, reason })?;
            if l.rows < 2 || l.cols < 2 {
                return Err(TopologyError::InvalidLayer {
                    layer,
                    reason: format!("mesh must be at least 2x2, got {}x{}", l.cols, l.rows),
                });
            }
            if l.grid_stride < 1 {
                return Err(TopologyError::InvalidLayer {
                    layer,
                    reason: "grid stride must be at least 1".into(),
                });
            }
            if l.tech.clk_period_ps % fastest != 0 {
                return Err(TopologyError::NonIntegerClockRatio {
                    layer,
                    period_ps: l.tech.clk_period_ps,
                    fastest_ps: fastest,
                });
            }
            if i > 0 {
                let above = &self.layers[i - 1];
                if l.tech.feature_size_nm > above.tech.feature_size_nm {
                    return Err(TopologyError::FeatureSizeOrder {
                        layer,
                        tau: l.tech.feature_size_nm,
                        above: above.tech.feature_size_nm,
                    });
                }
                for y in 0..above.rows {
                    for x in 0..above.cols {
                        let (lx, ly) = (x * above.grid_stride, y * above.grid_stride);
                        if !l.occupies(lx, ly) {
                            return Err(TopologyError::NotNested {
                                upper: layer - 1,
                                lower: layer,
                                x: lx,
                                y: ly,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Router address in logical grid coordinates; `z` is the 1-based layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Address {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Address { x, y, z }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.z)
    }
}

/// Physical router location: µm in the plane plus the layer index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x_um: f64,
    pub y_um: f64,
    pub z: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouterId(pub u32);

impl RouterId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The six link directions. The discriminant order (n, e, s, w, u, d) is the
/// row/column order used by turn matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    East,
    South,
    West,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
        Direction::Up,
        Direction::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Up | Direction::Down)
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::East => "east",
            Direction::South => "south",
            Direction::West => "west",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    /// One-letter tag (`n e s w u d`).
    pub fn letter(self) -> char {
        self.name().chars().next().unwrap()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arc {
    pub src: RouterId,
    pub dst: RouterId,
}

/// One step of a route: the router visited and the direction it forwards
/// to (`None` on the last router, where the packet is delivered locally).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub router: RouterId,
    pub out: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Router {
    pub id: RouterId,
    pub addr: Address,
    pub pos: Position,
}

/// The router digraph `T = (V, A)` with direction-classified arcs.
#[derive(Debug, Clone)]
pub struct TopologyGraph {
    stack: StackConfig,
    routers: Vec<Router>,
    arcs: Vec<(Arc, Direction)>,
    neighbors: Vec<[Option<RouterId>; 6]>,
    layer_offset: Vec<u32>,
    arc_index: HashMap<Arc, usize>,
}

/// Build the heterogeneous mesh for a validated stack.
pub fn build_topology(cfg: &StackConfig) -> Result<TopologyGraph, TopologyError> {
    cfg.validate()?;
    let mut routers = Vec::new();
    let mut layer_offset = Vec::with_capacity(cfg.layers.len() + 1);
    for (i, l) in cfg.layers.iter().enumerate() {
        layer_offset.push(routers.len() as u32);
        let z = i as u32 + 1;
        for row in 0..l.rows {
            for col in 0..l.cols {
                let addr = Address::new(col * l.grid_stride, row * l.grid_stride, z);
                let id = RouterId(routers.len() as u32);
                routers.push(Router { id, addr, pos: position_of(cfg, addr) });
            }
        }
    }
    layer_offset.push(routers.len() as u32);

    let mut g = TopologyGraph {
        stack: cfg.clone(),
        routers,
        arcs: Vec::new(),
        neighbors: Vec::new(),
        layer_offset,
        arc_index: HashMap::new(),
    };
    let mut neighbors = vec![[None; 6]; g.routers.len()];
    for r in &g.routers {
        let a = r.addr;
        let l = cfg.layer(a.z);
        let k = l.grid_stride;
        let cand = [
            (Direction::North, (a.y >= k).then(|| Address::new(a.x, a.y - k, a.z))),
            (Direction::East, (a.x + k <= l.max_x()).then(|| Address::new(a.x + k, a.y, a.z))),
            (Direction::South, (a.y + k <= l.max_y()).then(|| Address::new(a.x, a.y + k, a.z))),
            (Direction::West, (a.x >= k).then(|| Address::new(a.x - k, a.y, a.z))),
            (Direction::Up, (a.z > 1 && cfg.layer(a.z - 1).occupies(a.x, a.y)).then(|| Address::new(a.x, a.y, a.z - 1))),
            (Direction::Down, (a.z < cfg.depth()).then(|| Address::new(a.x, a.y, a.z + 1))),
        ];
        for (dir, w) in cand {
            if let Some(w) = w {
                let wid = g.id_of(w).expect("nesting guarantees the neighbour exists");
                neighbors[r.id.index()][dir.index()] = Some(wid);
            }
        }
    }
    for (v, row) in neighbors.iter().enumerate() {
        for dir in Direction::ALL {
            if let Some(w) = row[dir.index()] {
                let arc = Arc { src: RouterId(v as u32), dst: w };
                g.arc_index.insert(arc, g.arcs.len());
                g.arcs.push((arc, dir));
            }
        }
    }
    g.neighbors = neighbors;
    Ok(g)
}

fn position_of(cfg: &StackConfig, w: Address) -> Position {
    let unit = cfg.grid_unit_um();
    Position { x_um: w.x as f64 * unit, y_um: w.y as f64 * unit, z: w.z }
}

/// Physical position of an address: logical coordinates times the bottom
/// layer's pitch.
pub fn address_to_position(cfg: &StackConfig, w: Address) -> Result<Position, TopologyError> {
    if w.z == 0 || w.z > cfg.depth() || !cfg.layer(w.z).occupies(w.x, w.y) {
        return Err(TopologyError::BadAddress(w));
    }
    Ok(position_of(cfg, w))
}

/// Manhattan distance in the xy-plane, in logical grid units.
pub fn hop_distance(v: Address, d: Address) -> u32 {
    v.x.abs_diff(d.x) + v.y.abs_diff(d.y)
}

impl TopologyGraph {
    pub fn stack(&self) -> &StackConfig {
        &self.stack
    }

    pub fn routers(&self) -> &[Router] {
        &self.routers
    }

    pub fn router_count(&self) -> usize {
        self.routers.len()
    }

    pub fn router(&self, id: RouterId) -> &Router {
        &self.routers[id.index()]
    }

    pub fn addr(&self, id: RouterId) -> Address {
        self.routers[id.index()].addr
    }

    /// All arcs with their direction, in (source id, direction) order.
    pub fn arcs(&self) -> &[(Arc, Direction)] {
        &self.arcs
    }

    /// Dense index of an arc in [`arcs`](Self::arcs).
    pub fn arc_index(&self, a: Arc) -> Option<usize> {
        self.arc_index.get(&a).copied()
    }

    /// Router ids of layer `z`, in row-major order.
    pub fn layer_routers(&self, z: u32) -> impl Iterator<Item = RouterId> {
        let lo = self.layer_offset[(z - 1) as usize];
        let hi = self.layer_offset[z as usize];
        (lo..hi).map(RouterId)
    }

    pub fn id_of(&self, w: Address) -> Option<RouterId> {
        if w.z == 0 || w.z > self.stack.depth() {
            return None;
        }
        let l = self.stack.layer(w.z);
        if !l.occupies(w.x, w.y) {
            return None;
        }
        let k = l.grid_stride;
        let local = (w.y / k) * l.cols + w.x / k;
        Some(RouterId(self.layer_offset[(w.z - 1) as usize] + local))
    }

    /// The neighbour of `v` in direction `dir`, or `None` at a border.
    pub fn neighbor(&self, v: RouterId, dir: Direction) -> Option<RouterId> {
        self.neighbors[v.index()][dir.index()]
    }

    /// Direction of an arc from the coordinate comparison of its endpoints.
    pub fn classify_arc(&self, a: Arc) -> Result<Direction, TopologyError> {
        if !self.arc_index.contains_key(&a) {
            return Err(TopologyError::NotAnArc(a.src, a.dst));
        }
        let (v, w) = (self.addr(a.src), self.addr(a.dst));
        let dir = if v.z > w.z {
            Direction::Up
        } else if v.z < w.z {
            Direction::Down
        } else if v.x == w.x && v.y > w.y {
            Direction::North
        } else if v.x == w.x && v.y < w.y {
            Direction::South
        } else if v.x < w.x {
            Direction::East
        } else {
            Direction::West
        };
        Ok(dir)
    }

    /// Write the adjacency list as CSV (`src_id,dst_id,direction`).
    pub fn write_adjacency_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src_id", "dst_id", "direction"])?;
        for (a, dir) in &self.arcs {
            w.write_record([a.src.to_string(), a.dst.to_string(), dir.name().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
