//! Quadtree meshes on unions of unit root boxes.
//!
//! Coordinates are stored as integers on a dyadic lattice with
//! `2^ROOT_BITS` units per root side, so node matching never compares
//! floating point values.

mod topology;

pub use topology::{
    build_polygon_view, classify_nodes, irregularity, MeshTopology, NodeClassification, NodeKind,
    PolygonView, Side, SubEdge, SubEdgeId,
};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type CellId = usize;
pub type NodeId = usize;

/// Lattice units per root side, as a power of two.
pub const ROOT_BITS: u32 = 56;
/// Deepest admissible refinement level (cell sides stay ≥ 2 lattice units,
/// so cell centers are lattice points).
pub const MAX_LEVEL: u32 = ROOT_BITS - 1;

const ROOT_UNITS: i64 = 1 << ROOT_BITS;
const UNIT: f64 = 1.0 / ROOT_UNITS as f64;

/// Children are stored counterclockwise from the lower-left quadrant.
pub const SW: usize = 0;
pub const SE: usize = 1;
pub const NE: usize = 2;
pub const NW: usize = 3;

/// The four sides of a cell in counterclockwise order starting at the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    South,
    East,
    North,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::South,
        Direction::East,
        Direction::North,
        Direction::West,
    ];

    fn offset(self) -> [i64; 2] {
        match self {
            Direction::South => [0, -1],
            Direction::East => [1, 0],
            Direction::North => [0, 1],
            Direction::West => [-1, 0],
        }
    }

    /// True for sides lying on a line `x = const`.
    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::East | Direction::West)
    }
}

/// Integer lattice point.
pub type Lattice = [i64; 2];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 4]>,
    pub level: u32,
    /// Lower-left corner on the lattice.
    pub origin: Lattice,
    /// Generation vertices in the order SW, SE, NE, NW.
    pub corners: [NodeId; 4],
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Side length in lattice units.
    pub fn size_units(&self) -> i64 {
        ROOT_UNITS >> self.level
    }

    /// Side length in domain units.
    pub fn size(&self) -> f64 {
        (0.5f64).powi(self.level as i32)
    }

    pub fn center_lattice(&self) -> Lattice {
        let half = self.size_units() / 2;
        [self.origin[0] + half, self.origin[1] + half]
    }

    fn contains_box(&self, origin: Lattice, size: i64) -> bool {
        let s = self.size_units();
        origin[0] >= self.origin[0]
            && origin[1] >= self.origin[1]
            && origin[0] + size <= self.origin[0] + s
            && origin[1] + size <= self.origin[1] + s
    }
}

/// Hierarchical cell tree whose leaves tile the domain.
#[derive(Debug, Clone)]
pub struct QuadtreeMesh {
    roots: Vec<CellId>,
    root_index: HashMap<[i64; 2], CellId>,
    cells: Vec<Cell>,
    nodes: Vec<Lattice>,
    node_index: HashMap<Lattice, NodeId>,
}

/// Converts a lattice coordinate to domain units.
pub fn lattice_to_f64(v: i64) -> f64 {
    v as f64 * UNIT
}

/// Converts a lattice length or offset to domain units.
pub fn units_to_f64(v: i64) -> f64 {
    v as f64 * UNIT
}

impl QuadtreeMesh {
    /// Builds a mesh from unit root boxes given by the integer coordinates of
    /// their lower-left corners.
    pub fn from_roots(roots: &[[i64; 2]]) -> Result<Self> {
        if roots.is_empty() {
            return Err(Error::InvalidConfig(
                "mesh needs at least one root box".into(),
            ));
        }
        let mut mesh = QuadtreeMesh {
            roots: Vec::with_capacity(roots.len()),
            root_index: HashMap::new(),
            cells: Vec::new(),
            nodes: Vec::new(),
            node_index: HashMap::new(),
        };
        for &r in roots {
            if mesh.root_index.contains_key(&r) {
                return Err(Error::InvalidConfig(format!("duplicate root box {r:?}")));
            }
            let origin = [r[0] * ROOT_UNITS, r[1] * ROOT_UNITS];
            let id = mesh.push_cell(None, 0, origin);
            mesh.roots.push(id);
            mesh.root_index.insert(r, id);
        }
        Ok(mesh)
    }

    /// The unit square `(0,1)^2` as one root.
    pub fn unit_square() -> Self {
        Self::from_roots(&[[0, 0]]).expect("single root")
    }

    /// `(0,1)^2` refined uniformly `levels` times.
    pub fn uniform_unit_square(levels: u32) -> Self {
        let mut mesh = Self::unit_square();
        for _ in 0..levels {
            let leaves = mesh.leaves();
            mesh.refine(&leaves, None).expect("uniform refinement");
        }
        mesh
    }

    /// `(-1,1)^2` without the closed lower-right quadrant, as three roots.
    pub fn lshape() -> Self {
        Self::from_roots(&[[-1, 0], [-1, -1], [0, 0]]).expect("three roots")
    }

    /// `(-1,1)^2` as a 2×2 array of roots aligned with the axes.
    pub fn square_2x2_centered() -> Self {
        Self::from_roots(&[[-1, -1], [0, -1], [0, 0], [-1, 0]]).expect("four roots")
    }

    fn push_cell(&mut self, parent: Option<CellId>, level: u32, origin: Lattice) -> CellId {
        let s = ROOT_UNITS >> level;
        let corners = [
            self.node_at(origin),
            self.node_at([origin[0] + s, origin[1]]),
            self.node_at([origin[0] + s, origin[1] + s]),
            self.node_at([origin[0], origin[1] + s]),
        ];
        let id = self.cells.len();
        self.cells.push(Cell {
            parent,
            children: None,
            level,
            origin,
            corners,
        });
        id
    }

    fn node_at(&mut self, p: Lattice) -> NodeId {
        if let Some(&id) = self.node_index.get(&p) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(p);
        self.node_index.insert(p, id);
        id
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn roots(&self) -> &[CellId] {
        &self.roots
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_lattice(&self, id: NodeId) -> Lattice {
        self.nodes[id]
    }

    pub fn node_coords(&self, id: NodeId) -> [f64; 2] {
        let p = self.nodes[id];
        [lattice_to_f64(p[0]), lattice_to_f64(p[1])]
    }

    pub fn find_node(&self, p: Lattice) -> Option<NodeId> {
        self.node_index.get(&p).copied()
    }

    /// Leaf ids in ascending order.
    pub fn leaves(&self) -> Vec<CellId> {
        (0..self.cells.len())
            .filter(|&c| self.cells[c].is_leaf())
            .collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.cells.iter().filter(|c| c.is_leaf()).count()
    }

    /// Domain area (number of unit roots).
    pub fn domain_area(&self) -> f64 {
        self.roots.len() as f64
    }

    pub fn max_level(&self) -> u32 {
        self.cells.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// Domain coordinates of the lower-left corner of a cell.
    pub fn cell_origin(&self, id: CellId) -> [f64; 2] {
        let o = self.cells[id].origin;
        [lattice_to_f64(o[0]), lattice_to_f64(o[1])]
    }

    pub fn cell_centroid(&self, id: CellId) -> [f64; 2] {
        let c = self.cells[id].center_lattice();
        [lattice_to_f64(c[0]), lattice_to_f64(c[1])]
    }

    /// Offset of a node from the center of a cell, exact up to the final
    /// rounding of one integer difference.
    pub fn offset_from_center(&self, node: NodeId, cell: CellId) -> [f64; 2] {
        let p = self.nodes[node];
        let c = self.cells[cell].center_lattice();
        [units_to_f64(p[0] - c[0]), units_to_f64(p[1] - c[1])]
    }

    /// Quadsects one leaf. Existing nodes are reused by lattice position.
    fn quadsect(&mut self, id: CellId) -> Result<()> {
        let cell = &self.cells[id];
        if !cell.is_leaf() {
            return Err(Error::NotALeaf(id));
        }
        let level = cell.level + 1;
        if level > MAX_LEVEL {
            return Err(Error::LevelBudget(MAX_LEVEL));
        }
        let o = cell.origin;
        let h = ROOT_UNITS >> level;
        // Midpoints and center first so node numbering is independent of
        // which child touches them first.
        for p in [
            [o[0] + h, o[1]],
            [o[0] + 2 * h, o[1] + h],
            [o[0] + h, o[1] + 2 * h],
            [o[0], o[1] + h],
            [o[0] + h, o[1] + h],
        ] {
            self.node_at(p);
        }
        let kids = [
            self.push_cell(Some(id), level, o),
            self.push_cell(Some(id), level, [o[0] + h, o[1]]),
            self.push_cell(Some(id), level, [o[0] + h, o[1] + h]),
            self.push_cell(Some(id), level, [o[0], o[1] + h]),
        ];
        self.cells[id].children = Some(kids);
        Ok(())
    }

    /// Quadsects every marked leaf. With `cap = Some(l)`, further leaves are
    /// quadsected until no element edge carries more than `l` hanging nodes.
    pub fn refine(&mut self, marked: &[CellId], cap: Option<usize>) -> Result<()> {
        if cap == Some(0) {
            return Err(Error::InvalidConfig(
                "irregularity cap must be a positive integer".into(),
            ));
        }
        let mut ids: Vec<CellId> = marked.to_vec();
        ids.sort_unstable();
        ids.dedup();
        for &id in &ids {
            match self.cells.get(id) {
                None => return Err(Error::UnknownCell(id)),
                Some(c) if !c.is_leaf() => return Err(Error::NotALeaf(id)),
                _ => {}
            }
        }
        for id in ids {
            self.quadsect(id)?;
        }
        if let Some(limit) = cap {
            self.close(limit)?;
        }
        Ok(())
    }

    fn close(&mut self, limit: usize) -> Result<()> {
        loop {
            let over: Vec<CellId> = self
                .leaves()
                .into_iter()
                .filter(|&k| {
                    Direction::ALL
                        .iter()
                        .any(|&d| self.hanging_on_side(k, d) > limit)
                })
                .collect();
            if over.is_empty() {
                return Ok(());
            }
            for id in over {
                self.quadsect(id)?;
            }
        }
    }

    /// Number of nodes strictly inside one side of a leaf.
    pub fn hanging_on_side(&self, leaf: CellId, dir: Direction) -> usize {
        match self.side_neighbors(leaf, dir) {
            Neighbors::Finer(v) => v.len() - 1,
            _ => 0,
        }
    }

    /// The cell at most as deep as `level` containing the lattice box, if the
    /// box lies inside the domain.
    fn locate(&self, origin: Lattice, level: u32) -> Option<CellId> {
        let key = [
            origin[0].div_euclid(ROOT_UNITS),
            origin[1].div_euclid(ROOT_UNITS),
        ];
        let mut cur = *self.root_index.get(&key)?;
        let size = ROOT_UNITS >> level;
        loop {
            let cell = &self.cells[cur];
            if cell.level >= level {
                return Some(cur);
            }
            match cell.children {
                None => return Some(cur),
                Some(kids) => {
                    cur = *kids
                        .iter()
                        .find(|&&k| self.cells[k].contains_box(origin, size))
                        .expect("dyadic box lies in exactly one child");
                }
            }
        }
    }

    /// Leaves across one side of a leaf.
    pub fn side_neighbors(&self, leaf: CellId, dir: Direction) -> Neighbors {
        let cell = &self.cells[leaf];
        let s = cell.size_units();
        let off = dir.offset();
        let target = [cell.origin[0] + off[0] * s, cell.origin[1] + off[1] * s];
        let Some(found) = self.locate(target, cell.level) else {
            return Neighbors::Boundary;
        };
        if self.cells[found].is_leaf() {
            return Neighbors::Single(found);
        }
        let mut out = Vec::new();
        self.collect_adjacent(found, dir, &mut out);
        Neighbors::Finer(out)
    }

    /// Leaves of the subtree of `cell` touching its side opposite to `dir`,
    /// ordered by increasing coordinate along that side.
    fn collect_adjacent(&self, cell: CellId, dir: Direction, out: &mut Vec<CellId>) {
        match self.cells[cell].children {
            None => out.push(cell),
            Some(k) => {
                let pair = match dir {
                    Direction::East => [k[SW], k[NW]],
                    Direction::North => [k[SW], k[SE]],
                    Direction::West => [k[SE], k[NE]],
                    Direction::South => [k[NW], k[NE]],
                };
                for c in pair {
                    self.collect_adjacent(c, dir, out);
                }
            }
        }
    }
}

/// Result of a neighbor query across one side of a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Neighbors {
    /// The side lies on the domain boundary.
    Boundary,
    /// One leaf of the same or a coarser level covers the side.
    Single(CellId),
    /// Several finer leaves, ordered along the side.
    Finer(Vec<CellId>),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> QuadtreeMesh {
        QuadtreeMesh::uniform_unit_square(1)
    }

    fn child(mesh: &QuadtreeMesh, cell: CellId, q: usize) -> CellId {
        mesh.cell(cell).children.unwrap()[q]
    }

    #[test]
    fn single_refinement_gives_four_leaves_and_nine_nodes() {
        let m = two_by_two();
        assert_eq!(m.num_leaves(), 4);
        assert_eq!(m.num_nodes(), 9);
        let topo = MeshTopology::build(&m);
        assert_eq!(topo.classification.num_hanging(), 0);
    }

    #[test]
    fn area_is_conserved() {
        let mut m = QuadtreeMesh::lshape();
        for _ in 0..4 {
            let leaves = m.leaves();
            let pick: Vec<_> = leaves.iter().copied().step_by(3).collect();
            m.refine(&pick, None).unwrap();
            let area: f64 = m.leaves().iter().map(|&k| m.cell(k).size().powi(2)).sum();
            assert!((area - m.domain_area()).abs() <= 1e-12 * m.domain_area());
        }
    }

    #[test]
    fn refining_a_non_leaf_is_rejected() {
        let mut m = two_by_two();
        assert_eq!(m.refine(&[0], None), Err(Error::NotALeaf(0)));
        assert_eq!(m.refine(&[999], None), Err(Error::UnknownCell(999)));
        assert!(matches!(
            m.refine(&[1], Some(0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn neighbors_across_sides() {
        let mut m = two_by_two();
        let root = m.roots()[0];
        let sw = child(&m, root, SW);
        let se = child(&m, root, SE);
        assert_eq!(m.side_neighbors(sw, Direction::East), Neighbors::Single(se));
        assert_eq!(m.side_neighbors(sw, Direction::West), Neighbors::Boundary);
        m.refine(&[sw], None).unwrap();
        match m.side_neighbors(se, Direction::West) {
            Neighbors::Finer(v) => {
                assert_eq!(v, vec![child(&m, sw, SE), child(&m, sw, NE)]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let fine = child(&m, sw, SE);
        assert_eq!(
            m.side_neighbors(fine, Direction::East),
            Neighbors::Single(se)
        );
    }

    #[test]
    fn cap_one_closure_refines_coarse_neighbors() {
        let mut m = two_by_two();
        let root = m.roots()[0];
        let sw = child(&m, root, SW);
        m.refine(&[sw], Some(1)).unwrap();
        assert_eq!(m.num_leaves(), 7);
        let inner = child(&m, sw, NE);
        m.refine(&[inner], Some(1)).unwrap();
        let se = child(&m, root, SE);
        let nw = child(&m, root, NW);
        let ne = child(&m, root, NE);
        assert!(!m.cell(se).is_leaf());
        assert!(!m.cell(nw).is_leaf());
        assert!(m.cell(ne).is_leaf());
        assert!(irregularity(&m) <= 1);
        assert_eq!(m.num_leaves(), 7 + 3 + 3 + 3);
    }

    #[test]
    fn level_budget_is_enforced() {
        let mut m = QuadtreeMesh::unit_square();
        let mut cur = m.roots()[0];
        let mut hit = None;
        for _ in 0..=MAX_LEVEL {
            match m.refine(&[cur], None) {
                Ok(()) => cur = child(&m, cur, SW),
                Err(e) => {
                    hit = Some(e);
                    break;
                }
            }
        }
        assert_eq!(hit, Some(Error::LevelBudget(MAX_LEVEL)));
        assert_eq!(m.max_level(), MAX_LEVEL);
    }
}
