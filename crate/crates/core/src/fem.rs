//! Conforming bilinear elements on quadtrees through the prolongation
//! formulation `P^T A P u = P^T f`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{CellId, MeshTopology, NodeId, NodeKind, QuadtreeMesh};
use crate::quadrature::{GAUSS3, GAUSS5};
use crate::sparse::{pcg, CsrMatrix};

pub type Point = [f64; 2];
pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Relative residual demanded from the linear solver.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// The exact solution is `r^degree · μ(θ)` about `point`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singularity {
    pub point: Point,
    pub degree: f64,
}

#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarFn,
    pub grad: VectorFn,
    pub singularity: Option<Singularity>,
}

/// Coefficient, data and (optionally) the exact solution of
/// `-div(β ∇u) = f` in Ω, `u = g` on ∂Ω.
#[derive(Clone)]
pub struct ProblemData {
    pub beta: ScalarFn,
    pub source: ScalarFn,
    pub dirichlet: ScalarFn,
    pub exact: Option<ExactSolution>,
}

impl ProblemData {
    /// Problem whose exact solution `u` is used as Dirichlet data.
    pub fn with_exact(beta: ScalarFn, source: ScalarFn, exact: ExactSolution) -> Self {
        ProblemData {
            beta,
            source,
            dirichlet: exact.u.clone(),
            exact: Some(exact),
        }
    }

    /// Same problem with `β`, `f` multiplied by `c`; `g` and `u` unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        let beta = self.beta.clone();
        let source = self.source.clone();
        ProblemData {
            beta: Arc::new(move |p| c * beta(p)),
            source: Arc::new(move |p| c * source(p)),
            dirichlet: self.dirichlet.clone(),
            exact: self.exact.clone(),
        }
    }

    /// `β_K`, sampled at the leaf centroid.
    pub fn beta_on(&self, mesh: &QuadtreeMesh, leaf: CellId) -> Result<f64> {
        let b = (self.beta)(mesh.cell_centroid(leaf));
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Domain(format!(
                "coefficient {b} on leaf {leaf} is not positive"
            )));
        }
        Ok(b)
    }

    pub fn betas(&self, mesh: &QuadtreeMesh, topo: &MeshTopology) -> Result<Vec<f64>> {
        topo.leaves.iter().map(|&k| self.beta_on(mesh, k)).collect()
    }
}

/// Stiffness of `β ∇φ_i · ∇φ_j` on a `hx × hy` rectangle, vertices ordered
/// SW, SE, NE, NW.
pub fn local_stiffness(hx: f64, hy: f64, beta: f64) -> [[f64; 4]; 4] {
    const KX: [[f64; 4]; 4] = [
        [2.0, -2.0, -1.0, 1.0],
        [-2.0, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 2.0, -2.0],
        [1.0, -1.0, -2.0, 2.0],
    ];
    const KY: [[f64; 4]; 4] = [
        [2.0, 1.0, -1.0, -2.0],
        [1.0, 2.0, -2.0, -1.0],
        [-1.0, -2.0, 2.0, 1.0],
        [-2.0, -1.0, 1.0, 2.0],
    ];
    let (ax, ay) = (beta * hy / hx / 6.0, beta * hx / hy / 6.0);
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let v = ax * KX[i][j] + ay * KY[i][j];
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Bilinear shape functions at local `(ξ, η) ∈ [0,1]²`.
pub fn shape_values(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        xi * eta,
        (1.0 - xi) * eta,
    ]
}

/// Gradient of the bilinear interpolant of `v` on a square of side `h`.
pub fn bilinear_gradient(v: [f64; 4], h: f64, xi: f64, eta: f64) -> [f64; 2] {
    [
        ((v[1] - v[0]) * (1.0 - eta) + (v[2] - v[3]) * eta) / h,
        ((v[3] - v[0]) * (1.0 - xi) + (v[2] - v[1]) * xi) / h,
    ]
}

/// Maps conforming values on regular nodes to all nodes.
#[derive(Debug, Clone)]
pub struct Prolongation {
    /// `n_nodes × n_regular`.
    pub matrix: CsrMatrix,
    /// Regular node ids, ascending.
    pub regular: Vec<NodeId>,
    pub regular_index: Vec<Option<usize>>,
}

impl Prolongation {
    /// Row of `P` for one node as `(regular index, weight)` pairs.
    pub fn weights(&self, node: NodeId) -> Vec<(usize, f64)> {
        self.matrix.row(node).collect()
    }

    pub fn apply(&self, regular_values: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(regular_values)
    }
}

/// Builds `P`: unit rows on regular nodes, and on hanging nodes the weights
/// obtained from `½·master₁ + ½·master₂` by substituting hanging masters
/// recursively.
pub fn build_prolongation(topo: &MeshTopology) -> Result<Prolongation> {
    let kinds = &topo.classification.kinds;
    let n = kinds.len();
    let mut regular_index = vec![None; n];
    let mut regular = Vec::new();
    for (id, k) in kinds.iter().enumerate() {
        if *k == NodeKind::Regular {
            regular_index[id] = Some(regular.len());
            regular.push(id);
        }
    }
    let mut memo: Vec<Option<BTreeMap<usize, f64>>> = vec![None; n];
    let mut trip = Vec::new();
    let mut on_stack = vec![false; n];
    for id in 0..n {
        let row = resolve(id, kinds, &regular_index, &mut memo, &mut on_stack)?;
        for (r, w) in row {
            trip.push((id, r, w));
        }
    }
    Ok(Prolongation {
        matrix: CsrMatrix::from_triplets(n, regular.len(), trip),
        regular,
        regular_index,
    })
}

fn resolve(
    id: NodeId,
    kinds: &[NodeKind],
    regular_index: &[Option<usize>],
    memo: &mut [Option<BTreeMap<usize, f64>>],
    stack: &mut [bool],
) -> Result<BTreeMap<usize, f64>> {
    if let Some(r) = &memo[id] {
        return Ok(r.clone());
    }
    let row = match kinds[id] {
        NodeKind::Regular => BTreeMap::from([(regular_index[id].unwrap(), 1.0)]),
        NodeKind::Hanging { masters } => {
            if stack[id] {
                return Err(Error::Internal(format!(
                    "cyclic hanging-node dependency at node {id}"
                )));
            }
            stack[id] = true;
            let mut row = BTreeMap::new();
            for m in masters {
                for (r, w) in resolve(m, kinds, regular_index, memo, stack)? {
                    *row.entry(r).or_insert(0.0) += 0.5 * w;
                }
            }
            stack[id] = false;
            row
        }
    };
    memo[id] = Some(row.clone());
    Ok(row)
}

/// Stiffness and load over all nodes together with `P`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub load: Vec<f64>,
    pub prolongation: Prolongation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSolution {
    /// Coefficients at every mesh node.
    pub values: Vec<f64>,
    pub ndof_free: usize,
    pub residual: f64,
    pub iterations: usize,
}

impl DiscreteSolution {
    pub fn zeros(n_nodes: usize) -> Self {
        DiscreteSolution {
            values: vec![0.0; n_nodes],
            ndof_free: 0,
            residual: 0.0,
            iterations: 0,
        }
    }

    /// Nodal values on the generation vertices of a leaf.
    pub fn leaf_values(&self, mesh: &QuadtreeMesh, leaf: CellId) -> [f64; 4] {
        mesh.cell(leaf).corners.map(|n| self.values[n])
    }

    /// `∇u_T` on a leaf at local coordinates.
    pub fn gradient(&self, mesh: &QuadtreeMesh, leaf: CellId, xi: f64, eta: f64) -> [f64; 2] {
        bilinear_gradient(
            self.leaf_values(mesh, leaf),
            mesh.cell(leaf).size(),
            xi,
            eta,
        )
    }
}

/// Corner nodes, stiffness and load of one leaf.
type LeafBlock = ([NodeId; 4], [[f64; 4]; 4], [f64; 4]);

pub fn assemble(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    problem: &ProblemData,
) -> Result<LinearSystem> {
    let prolongation = build_prolongation(topo)?;
    let n = mesh.num_nodes();
    let blocks: Vec<LeafBlock> = topo
        .leaves
        .par_iter()
        .map(|&k| {
            let beta = problem.beta_on(mesh, k)?;
            let cell = mesh.cell(k);
            let h = cell.size();
            let o = mesh.cell_origin(k);
            let mut f = [0.0; 4];
            for (xi, eta, w) in GAUSS3.tensor() {
                let fx = (problem.source)([o[0] + xi * h, o[1] + eta * h]);
                let phi = shape_values(xi, eta);
                for i in 0..4 {
                    f[i] += w * h * h * fx * phi[i];
                }
            }
            Ok((cell.corners, local_stiffness(h, h, beta), f))
        })
        .collect::<Result<_>>()?;
    let mut trip = Vec::with_capacity(16 * blocks.len());
    let mut load = vec![0.0; n];
    for (nodes, k, f) in &blocks {
        for i in 0..4 {
            load[nodes[i]] += f[i];
            for j in 0..4 {
                trip.push((nodes[i], nodes[j], k[i][j]));
            }
        }
    }
    Ok(LinearSystem {
        matrix: CsrMatrix::from_triplets(n, n, trip),
        load,
        prolongation,
    })
}

/// Assembles `A`, eliminates Dirichlet nodes by nodal interpolation of `g`,
/// solves the reduced SPD system and prolongs to hanging nodes.
pub fn assemble_and_solve(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    problem: &ProblemData,
) -> Result<DiscreteSolution> {
    let system = assemble(mesh, topo, problem)?;
    solve_system(mesh, topo, problem, &system)
}

pub fn solve_system(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    problem: &ProblemData,
    system: &LinearSystem,
) -> Result<DiscreteSolution> {
    let p = &system.prolongation;
    let pt = p.matrix.transpose();
    let reduced = pt.mul(&system.matrix.mul(&p.matrix)).symmetrized();
    let rhs_reg = pt.mul_vec(&system.load);

    let nreg = p.regular.len();
    let mut free_index = vec![None; nreg];
    let mut free = Vec::new();
    let mut u_reg = vec![0.0; nreg];
    for (r, &node) in p.regular.iter().enumerate() {
        if topo.boundary_nodes[node] {
            u_reg[r] = (problem.dirichlet)(mesh.node_coords(node));
        } else {
            free_index[r] = Some(free.len());
            free.push(r);
        }
    }
    let nfree = free.len();
    let k = reduced.submatrix(&free, &free_index, nfree);
    let lifted = reduced.mul_vec(&u_reg);
    let rhs: Vec<f64> = free.iter().map(|&r| rhs_reg[r] - lifted[r]).collect();

    let mut x = vec![0.0; nfree];
    let stats = pcg(&k, &rhs, &mut x, SOLVER_TOLERANCE, 20 * nfree + 200)?;
    for (i, &r) in free.iter().enumerate() {
        u_reg[r] = x[i];
    }
    Ok(DiscreteSolution {
        values: p.apply(&u_reg),
        ndof_free: nfree,
        residual: stats.relative_residual,
        iterations: stats.iterations,
    })
}

/// Max-norm of `P^T (f - A u)` on free regular nodes.
pub fn galerkin_residual(
    topo: &MeshTopology,
    system: &LinearSystem,
    solution: &DiscreteSolution,
) -> f64 {
    let au = system.matrix.mul_vec(&solution.values);
    let r: Vec<f64> = system.load.iter().zip(&au).map(|(f, a)| f - a).collect();
    let pr = system.prolongation.matrix.transpose().mul_vec(&r);
    system
        .prolongation
        .regular
        .iter()
        .zip(&pr)
        .filter(|(&n, _)| !topo.boundary_nodes[n])
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
}

/// Largest `|u(z) - Σ w_i u(m_i)|` over hanging nodes.
pub fn conformity_defect(
    topo: &MeshTopology,
    system: &LinearSystem,
    solution: &DiscreteSolution,
) -> f64 {
    let p = &system.prolongation;
    let mut worst = 0.0f64;
    for (n, kind) in topo.classification.kinds.iter().enumerate() {
        if let NodeKind::Hanging { .. } = kind {
            let s: f64 = p
                .weights(n)
                .iter()
                .map(|&(r, w)| w * solution.values[p.regular[r]])
                .sum();
            worst = worst.max((solution.values[n] - s).abs());
        }
    }
    worst
}

/// Rings of graded subdivision towards a singular corner before the
/// remaining square is summed as a geometric tail.
const SINGULAR_RINGS: usize = 60;

/// Per-leaf squared energy errors `∫_K β_K |∇u − ∇u_T|²`, ordered like
/// `topo.leaves`.
pub fn energy_error_contributions(
    solution: &DiscreteSolution,
    problem: &ProblemData,
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
) -> Result<Vec<f64>> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Unsupported("energy error needs the exact gradient".into()))?;
    topo.leaves
        .par_iter()
        .map(|&k| {
            let beta = problem.beta_on(mesh, k)?;
            let vals = solution.leaf_values(mesh, k);
            let h = mesh.cell(k).size();
            let o = mesh.cell_origin(k);
            let integrand = |xi: f64, eta: f64, with_fe: bool| {
                let g = (exact.grad)([o[0] + xi * h, o[1] + eta * h]);
                let gh = if with_fe {
                    bilinear_gradient(vals, h, xi, eta)
                } else {
                    [0.0; 2]
                };
                beta * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2))
            };
            let corner = exact.singularity.and_then(|sg| {
                (0..4)
                    .find(|&c| mesh.node_coords(mesh.cell(k).corners[c]) == sg.point)
                    .map(|c| (c, sg))
            });
            let Some((c, sg)) = corner else {
                return Ok(GAUSS5
                    .tensor()
                    .map(|(a, b, w)| w * integrand(a, b, true))
                    .sum::<f64>()
                    * h
                    * h);
            };
            // Offsets (a, b) are measured from the singular vertex into the
            // leaf, in units of h, so tiny rings keep full precision.
            let (cx, cy, dx, dy) = match c {
                0 => (0.0, 0.0, 1.0, 1.0),
                1 => (1.0, 0.0, -1.0, 1.0),
                2 => (1.0, 1.0, -1.0, -1.0),
                _ => (0.0, 1.0, 1.0, -1.0),
            };
            let at = |a: f64, b: f64, with_fe: bool| {
                let g = (exact.grad)([sg.point[0] + dx * a * h, sg.point[1] + dy * b * h]);
                let gh = if with_fe {
                    bilinear_gradient(vals, h, cx + dx * a, cy + dy * b)
                } else {
                    [0.0; 2]
                };
                beta * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2))
            };
            let square = |a0: f64, b0: f64, s: f64, with_fe: bool| -> f64 {
                GAUSS5
                    .tensor()
                    .map(|(p, q, w)| w * at(a0 + p * s, b0 + q * s, with_fe))
                    .sum::<f64>()
                    * s
                    * s
                    * h
                    * h
            };
            let mut total = 0.0;
            let mut last_ring_pure = 0.0;
            let mut s = 1.0;
            for _ in 0..SINGULAR_RINGS {
                let half = 0.5 * s;
                let mut ring_pure = 0.0;
                for (a0, b0) in [(half, 0.0), (half, half), (0.0, half)] {
                    total += square(a0, b0, half, true);
                    ring_pure += square(a0, b0, half, false);
                }
                last_ring_pure = ring_pure;
                s = half;
            }
            // The remaining square carries a geometric tail of the exact
            // energy: each ring holds 2^{-2·degree} of the previous one.
            let q = 2f64.powf(-2.0 * sg.degree);
            Ok(total + last_ring_pure * q / (1.0 - q))
        })
        .collect()
}

/// `(Σ_K ∫_K β_K |∇u − ∇u_T|²)^{1/2}`, summed in leaf order.
pub fn energy_error(
    solution: &DiscreteSolution,
    problem: &ProblemData,
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
) -> Result<f64> {
    Ok(energy_error_contributions(solution, problem, mesh, topo)?
        .iter()
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{NE, SW};

    fn constant(c: f64) -> ScalarFn {
        Arc::new(move |_| c)
    }

    fn linear_x() -> ProblemData {
        ProblemData::with_exact(
            constant(1.0),
            constant(0.0),
            ExactSolution {
                u: Arc::new(|p| p[0]),
                grad: Arc::new(|_| [1.0, 0.0]),
                singularity: None,
            },
        )
    }

    fn cascade_mesh() -> QuadtreeMesh {
        let mut m = QuadtreeMesh::uniform_unit_square(1);
        let sw = m.cell(m.roots()[0]).children.unwrap()[SW];
        m.refine(&[sw], None).unwrap();
        let inner = m.cell(sw).children.unwrap()[NE];
        m.refine(&[inner], None).unwrap();
        m
    }

    #[test]
    fn unit_square_stiffness() {
        let k = local_stiffness(1.0, 1.0, 1.0);
        for (i, row) in k.iter().enumerate() {
            assert!((row[i] - 2.0 / 3.0).abs() < 1e-15);
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        assert!((k[0][2] + 1.0 / 3.0).abs() < 1e-15);
        assert!((k[1][3] + 1.0 / 3.0).abs() < 1e-15);
        assert!((k[0][1] + 1.0 / 6.0).abs() < 1e-15);
        let k2 = local_stiffness(1.0, 1.0, 2.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k2[i][j], 2.0 * k[i][j]);
            }
        }
    }

    #[test]
    fn rectangle_stiffness_matches_quadrature() {
        let (hx, hy, beta) = (0.5, 0.125, 3.0);
        let k = local_stiffness(hx, hy, beta);
        for i in 0..4 {
            for j in 0..4 {
                let mut q = 0.0;
                for (xi, eta, w) in GAUSS3.tensor() {
                    let mut ei = [0.0; 4];
                    ei[i] = 1.0;
                    let mut ej = [0.0; 4];
                    ej[j] = 1.0;
                    let gi = [
                        ((ei[1] - ei[0]) * (1.0 - eta) + (ei[2] - ei[3]) * eta) / hx,
                        ((ei[3] - ei[0]) * (1.0 - xi) + (ei[2] - ei[1]) * xi) / hy,
                    ];
                    let gj = [
                        ((ej[1] - ej[0]) * (1.0 - eta) + (ej[2] - ej[3]) * eta) / hx,
                        ((ej[3] - ej[0]) * (1.0 - xi) + (ej[2] - ej[1]) * xi) / hy,
                    ];
                    q += w * hx * hy * beta * (gi[0] * gj[0] + gi[1] * gj[1]);
                }
                assert!((q - k[i][j]).abs() < 1e-13, "{i},{j}: {q} vs {}", k[i][j]);
            }
        }
    }

    #[test]
    fn prolongation_weights() {
        let m = QuadtreeMesh::uniform_unit_square(2);
        let topo = MeshTopology::build(&m);
        let p = build_prolongation(&topo).unwrap();
        assert_eq!(p.matrix, CsrMatrix::identity(25));

        let m = cascade_mesh();
        let topo = MeshTopology::build(&m);
        let p = build_prolongation(&topo).unwrap();
        let s = (1i64 << crate::mesh::ROOT_BITS) as f64;
        let at = |x: f64, y: f64| m.find_node([(x * s) as i64, (y * s) as i64]).unwrap();
        let reg = |n: NodeId| p.regular_index[n].unwrap();
        let mut w = p.weights(at(0.5, 0.25));
        w.sort_by_key(|e| e.0);
        let mut expect = vec![(reg(at(0.5, 0.0)), 0.5), (reg(at(0.5, 0.5)), 0.5)];
        expect.sort_by_key(|e| e.0);
        assert_eq!(w, expect);
        let w = p.weights(at(0.5, 0.375));
        let get = |n| w.iter().find(|e| e.0 == reg(n)).unwrap().1;
        assert_eq!(w.len(), 2);
        assert_eq!(get(at(0.5, 0.5)), 0.75);
        assert_eq!(get(at(0.5, 0.0)), 0.25);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let m = cascade_mesh();
        let topo = MeshTopology::build(&m);
        let prob = ProblemData {
            beta: constant(1.0),
            source: constant(0.0),
            dirichlet: constant(0.0),
            exact: None,
        };
        let sol = assemble_and_solve(&m, &topo, &prob).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_test_on_cascade_mesh() {
        let m = cascade_mesh();
        let topo = MeshTopology::build(&m);
        let prob = linear_x();
        let system = assemble(&m, &topo, &prob).unwrap();
        assert_eq!(system.matrix.asymmetry(), 0.0);
        let sol = solve_system(&m, &topo, &prob, &system).unwrap();
        for n in 0..m.num_nodes() {
            assert!((sol.values[n] - m.node_coords(n)[0]).abs() < 1e-10);
        }
        assert!(conformity_defect(&topo, &system, &sol) <= 1e-12);
        assert!(energy_error(&sol, &prob, &m, &topo).unwrap() <= 1e-9);
        let zero = DiscreteSolution::zeros(m.num_nodes());
        assert!((energy_error(&zero, &prob, &m, &topo).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_error_requires_exact_gradient() {
        let m = QuadtreeMesh::unit_square();
        let topo = MeshTopology::build(&m);
        let prob = ProblemData {
            beta: constant(1.0),
            source: constant(0.0),
            dirichlet: constant(0.0),
            exact: None,
        };
        let zero = DiscreteSolution::zeros(m.num_nodes());
        assert!(matches!(
            energy_error(&zero, &prob, &m, &topo),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn nonpositive_coefficient_is_rejected() {
        let m = QuadtreeMesh::unit_square();
        let topo = MeshTopology::build(&m);
        let prob = ProblemData {
            beta: constant(-1.0),
            source: constant(0.0),
            dirichlet: constant(0.0),
            exact: None,
        };
        assert!(matches!(
            assemble_and_solve(&m, &topo, &prob),
            Err(Error::Domain(_))
        ));
    }
}
