use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{lattice_to_f64, CellId, Direction, Neighbors, NodeId, QuadtreeMesh, NE, NW, SE, SW};

pub type SubEdgeId = usize;

/// One side of a sub-edge: a leaf or the outside of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Leaf(CellId),
    Boundary,
}

impl Side {
    pub fn leaf(self) -> Option<CellId> {
        match self {
            Side::Leaf(k) => Some(k),
            Side::Boundary => None,
        }
    }
}

/// An edge of the polygonal embedding.
///
/// The normal is fixed globally: `(1, 0)` on vertical and `(0, 1)` on
/// horizontal sub-edges. It points from `minus` into `plus`. Endpoints are
/// ordered along the tangent `(0, 1)` resp. `(1, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubEdge {
    pub id: SubEdgeId,
    pub start: NodeId,
    pub end: NodeId,
    pub vertical: bool,
    pub length: f64,
    pub minus: Side,
    pub plus: Side,
}

impl SubEdge {
    pub fn normal(&self) -> [f64; 2] {
        if self.vertical {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    }

    pub fn tangent(&self) -> [f64; 2] {
        if self.vertical {
            [0.0, 1.0]
        } else {
            [1.0, 0.0]
        }
    }

    pub fn is_boundary(&self) -> bool {
        self.minus == Side::Boundary || self.plus == Side::Boundary
    }

    /// The side across from `leaf`.
    pub fn across(&self, leaf: CellId) -> Side {
        if self.minus == Side::Leaf(leaf) {
            self.plus
        } else {
            self.minus
        }
    }

    /// `+1` if `leaf` is the minus side (its outward normal equals `n_e`).
    pub fn sign_for(&self, leaf: CellId) -> f64 {
        if self.minus == Side::Leaf(leaf) {
            1.0
        } else {
            -1.0
        }
    }
}

/// A leaf seen as a polygon whose vertex cycle includes its hanging nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonView {
    pub leaf: CellId,
    /// Counterclockwise, starting at the lower-left corner.
    pub nodes: Vec<NodeId>,
    /// `edges[i]` joins `nodes[i]` and `nodes[i + 1]` (cyclically).
    pub edges: Vec<SubEdgeId>,
    pub signs: Vec<f64>,
    /// Side length of the square leaf.
    pub side: f64,
    /// Corner-to-corner diameter.
    pub diameter: f64,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Regular,
    /// Midpoint of the segment joining the two masters.
    Hanging {
        masters: [NodeId; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeClassification {
    pub kinds: Vec<NodeKind>,
}

impl NodeClassification {
    pub fn is_hanging(&self, n: NodeId) -> bool {
        matches!(self.kinds[n], NodeKind::Hanging { .. })
    }

    pub fn num_hanging(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| matches!(k, NodeKind::Hanging { .. }))
            .count()
    }

    pub fn num_regular(&self) -> usize {
        self.kinds.len() - self.num_hanging()
    }
}

/// Immutable analysis of one mesh snapshot.
#[derive(Debug, Clone)]
pub struct MeshTopology {
    /// Leaf ids, ascending.
    pub leaves: Vec<CellId>,
    leaf_pos: Vec<usize>,
    pub sub_edges: Vec<SubEdge>,
    /// Indexed like `leaves`.
    pub polygons: Vec<PolygonView>,
    pub classification: NodeClassification,
    pub boundary_nodes: Vec<bool>,
}

fn side_nodes(corners: [NodeId; 4], dir: Direction) -> (NodeId, NodeId) {
    match dir {
        Direction::South => (corners[SW], corners[SE]),
        Direction::East => (corners[SE], corners[NE]),
        Direction::North => (corners[NW], corners[NE]),
        Direction::West => (corners[SW], corners[NW]),
    }
}

fn opposite(dir: Direction) -> Direction {
    match dir {
        Direction::South => Direction::North,
        Direction::East => Direction::West,
        Direction::North => Direction::South,
        Direction::West => Direction::East,
    }
}

impl MeshTopology {
    pub fn build(mesh: &QuadtreeMesh) -> Self {
        let leaves = mesh.leaves();
        let mut leaf_pos = vec![usize::MAX; mesh.cells().len()];
        for (i, &k) in leaves.iter().enumerate() {
            leaf_pos[k] = i;
        }
        let neighbors: Vec<[Neighbors; 4]> = leaves
            .iter()
            .map(|&k| Direction::ALL.map(|d| mesh.side_neighbors(k, d)))
            .collect();

        let mut sub_edges = Vec::new();
        let mut by_ends: HashMap<(NodeId, NodeId), SubEdgeId> = HashMap::new();
        for (i, &k) in leaves.iter().enumerate() {
            let cell = mesh.cell(k);
            for (j, &dir) in Direction::ALL.iter().enumerate() {
                let other = match &neighbors[i][j] {
                    Neighbors::Boundary => Side::Boundary,
                    Neighbors::Single(n) => {
                        let nl = mesh.cell(*n).level;
                        let owner = nl < cell.level
                            || (nl == cell.level
                                && matches!(dir, Direction::East | Direction::North));
                        if !owner {
                            continue;
                        }
                        Side::Leaf(*n)
                    }
                    Neighbors::Finer(_) => continue,
                };
                let (start, end) = side_nodes(cell.corners, dir);
                let (minus, plus) = match dir {
                    Direction::East | Direction::North => (Side::Leaf(k), other),
                    Direction::West | Direction::South => (other, Side::Leaf(k)),
                };
                let id = sub_edges.len();
                sub_edges.push(SubEdge {
                    id,
                    start,
                    end,
                    vertical: dir.is_vertical(),
                    length: cell.size(),
                    minus,
                    plus,
                });
                by_ends.insert((start, end), id);
            }
        }

        let mut kinds = vec![NodeKind::Regular; mesh.num_nodes()];
        let mut polygons = Vec::with_capacity(leaves.len());
        for (i, &k) in leaves.iter().enumerate() {
            let cell = mesh.cell(k);
            let mut nodes = Vec::new();
            let mut edges = Vec::new();
            let mut signs = Vec::new();
            for (j, &dir) in Direction::ALL.iter().enumerate() {
                let mut along: Vec<SubEdgeId> = match &neighbors[i][j] {
                    Neighbors::Finer(fine) => {
                        for w in fine.windows(2) {
                            let (_, mid) = side_nodes(mesh.cell(w[0]).corners, opposite(dir));
                            kinds[mid] = NodeKind::Hanging {
                                masters: masters_of(mesh, mid, dir),
                            };
                        }
                        fine.iter()
                            .map(|&f| by_ends[&side_nodes(mesh.cell(f).corners, opposite(dir))])
                            .collect()
                    }
                    _ => vec![by_ends[&side_nodes(cell.corners, dir)]],
                };
                let forward = matches!(dir, Direction::South | Direction::East);
                if !forward {
                    along.reverse();
                }
                for e in along {
                    let se = &sub_edges[e];
                    nodes.push(if forward { se.start } else { se.end });
                    edges.push(e);
                    signs.push(se.sign_for(k));
                }
            }
            let side = cell.size();
            polygons.push(PolygonView {
                leaf: k,
                nodes,
                edges,
                signs,
                side,
                diameter: side * std::f64::consts::SQRT_2,
                area: side * side,
            });
        }

        let mut boundary_nodes = vec![false; mesh.num_nodes()];
        for e in sub_edges.iter().filter(|e| e.is_boundary()) {
            boundary_nodes[e.start] = true;
            boundary_nodes[e.end] = true;
        }

        MeshTopology {
            leaves,
            leaf_pos,
            sub_edges,
            polygons,
            classification: NodeClassification { kinds },
            boundary_nodes,
        }
    }

    /// Position of a leaf in `leaves`/`polygons`.
    pub fn position(&self, leaf: CellId) -> Option<usize> {
        self.leaf_pos
            .get(leaf)
            .copied()
            .filter(|&p| p != usize::MAX)
    }

    pub fn polygon(&self, leaf: CellId) -> &PolygonView {
        &self.polygons[self.position(leaf).expect("leaf of this snapshot")]
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Coordinates of the point at parameter `t ∈ [0, 1]` along a sub-edge.
    pub fn point_on(&self, mesh: &QuadtreeMesh, e: SubEdgeId, t: f64) -> [f64; 2] {
        let se = &self.sub_edges[e];
        let a = mesh.node_lattice(se.start);
        let b = mesh.node_lattice(se.end);
        [
            lattice_to_f64(a[0]) + t * lattice_to_f64(b[0] - a[0]),
            lattice_to_f64(a[1]) + t * lattice_to_f64(b[1] - a[1]),
        ]
    }
}

/// Endpoints of the dyadic segment having `node` as its midpoint, along the
/// side direction `dir`.
fn masters_of(mesh: &QuadtreeMesh, node: NodeId, dir: Direction) -> [NodeId; 2] {
    let p = mesh.node_lattice(node);
    let axis = if dir.is_vertical() { 1 } else { 0 };
    let step = 1i64 << p[axis].trailing_zeros();
    let mut lo = p;
    let mut hi = p;
    lo[axis] -= step;
    hi[axis] += step;
    let find = |q| {
        mesh.find_node(q)
            .expect("master of a hanging node is a mesh node")
    };
    [find(lo), find(hi)]
}

/// Labels every node as regular or hanging.
pub fn classify_nodes(mesh: &QuadtreeMesh) -> NodeClassification {
    MeshTopology::build(mesh).classification
}

/// Polygonal embedding: the global sub-edge table and one polygon per leaf.
pub fn build_polygon_view(mesh: &QuadtreeMesh) -> (Vec<SubEdge>, Vec<PolygonView>) {
    let t = MeshTopology::build(mesh);
    (t.sub_edges, t.polygons)
}

/// Maximum number of hanging nodes on any element edge.
pub fn irregularity(mesh: &QuadtreeMesh) -> usize {
    mesh.leaves()
        .into_iter()
        .flat_map(|k| Direction::ALL.map(|d| mesh.hanging_on_side(k, d)))
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn child(mesh: &QuadtreeMesh, cell: CellId, q: usize) -> CellId {
        mesh.cell(cell).children.unwrap()[q]
    }

    /// 2×2 mesh with its lower-left cell quadsected.
    fn seven_leaf() -> (QuadtreeMesh, CellId) {
        let mut m = QuadtreeMesh::uniform_unit_square(1);
        let sw = child(&m, m.roots()[0], SW);
        m.refine(&[sw], None).unwrap();
        (m, sw)
    }

    fn node(m: &QuadtreeMesh, x: f64, y: f64) -> NodeId {
        let s = (1i64 << super::super::ROOT_BITS) as f64;
        m.find_node([(x * s) as i64, (y * s) as i64]).unwrap()
    }

    #[test]
    fn uniform_meshes_are_conforming() {
        let m = QuadtreeMesh::uniform_unit_square(2);
        let c = classify_nodes(&m);
        assert_eq!(c.kinds.len(), 25);
        assert_eq!(c.num_regular(), 25);
        assert_eq!(irregularity(&m), 0);
    }

    #[test]
    fn two_by_two_polygons() {
        let m = QuadtreeMesh::uniform_unit_square(1);
        let (edges, polys) = build_polygon_view(&m);
        assert_eq!(edges.len(), 12);
        assert_eq!(edges.iter().filter(|e| e.is_boundary()).count(), 8);
        assert!(polys.iter().all(|p| p.nodes.len() == 4));
    }

    #[test]
    fn seven_leaf_mesh_hand_enumeration() {
        let (m, _) = seven_leaf();
        assert_eq!(m.num_leaves(), 7);
        let c = classify_nodes(&m);
        assert_eq!(c.num_hanging(), 2);
        let h1 = node(&m, 0.5, 0.25);
        let h2 = node(&m, 0.25, 0.5);
        assert_eq!(
            c.kinds[h1],
            NodeKind::Hanging {
                masters: [node(&m, 0.5, 0.0), node(&m, 0.5, 0.5)]
            }
        );
        assert_eq!(
            c.kinds[h2],
            NodeKind::Hanging {
                masters: [node(&m, 0.0, 0.5), node(&m, 0.5, 0.5)]
            }
        );
        assert_eq!(irregularity(&m), 1);

        let topo = MeshTopology::build(&m);
        let root = m.roots()[0];
        for q in [SE, NW] {
            let p = topo.polygon(child(&m, root, q));
            assert_eq!(p.nodes.len(), 5);
        }
        assert_eq!(topo.polygon(child(&m, root, NE)).nodes.len(), 4);
        // The SE leaf's cycle starts at its lower-left corner and passes the
        // hanging node on its west side last.
        let se = topo.polygon(child(&m, root, SE));
        assert_eq!(se.nodes[0], node(&m, 0.5, 0.0));
        assert_eq!(se.nodes[4], h1);
    }

    #[test]
    fn cascade_masters_are_immediate_parents() {
        let (mut m, sw) = seven_leaf();
        let inner = child(&m, sw, NE);
        m.refine(&[inner], None).unwrap();
        let c = classify_nodes(&m);
        let z = node(&m, 0.5, 0.375);
        let up = node(&m, 0.5, 0.25);
        assert_eq!(
            c.kinds[z],
            NodeKind::Hanging {
                masters: [up, node(&m, 0.5, 0.5)]
            }
        );
        assert!(c.is_hanging(up));
        assert_eq!(irregularity(&m), 2);
    }

    #[test]
    fn orientation_and_two_sidedness() {
        let (mut m, sw) = seven_leaf();
        m.refine(&[child(&m, sw, NE)], None).unwrap();
        let topo = MeshTopology::build(&m);
        let mut seen = vec![Vec::new(); topo.sub_edges.len()];
        for p in &topo.polygons {
            assert_eq!(p.nodes.len(), p.edges.len());
            for (i, (&e, &s)) in p.edges.iter().zip(&p.signs).enumerate() {
                let se = &topo.sub_edges[e];
                let a = p.nodes[i];
                let b = p.nodes[(i + 1) % p.nodes.len()];
                assert!((se.start, se.end) == (a, b) || (se.start, se.end) == (b, a));
                seen[e].push((p.leaf, s));
            }
        }
        for (e, who) in seen.iter().enumerate() {
            let se = &topo.sub_edges[e];
            if se.is_boundary() {
                assert_eq!(who.len(), 1);
            } else {
                assert_eq!(who.len(), 2);
                assert_eq!(who[0].1, -who[1].1);
                // K_- lies on the side opposite to n_e.
                let minus = se.minus.leaf().unwrap();
                let cm = m.cell_centroid(minus);
                let a = m.node_coords(se.start);
                let n = se.normal();
                assert!((cm[0] - a[0]) * n[0] + (cm[1] - a[1]) * n[1] < 0.0);
            }
        }
    }
}
