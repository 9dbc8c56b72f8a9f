//! Property suite behind the `verify` subcommand.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::afem::dorfler_mark;
use crate::benchmarks::{audit_exact_solution, Benchmark, KelloggParams};
use crate::error::Result;
use crate::estimators::{aggregate, estimate};
use crate::fem::{assemble_and_solve, energy_error, ExactSolution, Point, ProblemData};
use crate::flux::{
    audit, element_divergence, project_from_dofs, project_polynomial, recover_flux,
    stability_seminorm, EdgeFluxTrace,
};
use crate::mesh::{
    irregularity, Direction, MeshTopology, Neighbors, PolygonView, QuadtreeMesh, SE,
};
use crate::quadrature::GAUSS3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// The measured quantity the verdict is based on.
    pub value: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, value: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            value,
            detail,
        }
    }
}

/// Uniform mesh of `levels` levels on the unit square followed by `steps`
/// refinements of randomly chosen leaves.
pub fn random_mesh(rng: &mut ChaCha8Rng, levels: u32, steps: usize) -> QuadtreeMesh {
    let mut m = QuadtreeMesh::uniform_unit_square(levels);
    for _ in 0..steps {
        let leaves = m.leaves();
        let k = leaves[rng.gen_range(0..leaves.len())];
        m.refine(&[k], None).expect("leaf refinement");
    }
    m
}

/// Uniform level-3 mesh on the unit square in which a chain of three
/// refinements towards `x = 1/4` leaves three hanging nodes on one edge.
pub fn three_irregular_mesh() -> QuadtreeMesh {
    let mut m = QuadtreeMesh::uniform_unit_square(3);
    let mut target = m
        .leaves()
        .into_iter()
        .find(|&k| m.cell_origin(k) == [0.125, 0.0])
        .expect("leaf at (1/8, 0)");
    for _ in 0..3 {
        m.refine(&[target], None).expect("leaf refinement");
        target = m.cell(target).children.expect("just refined")[SE];
    }
    m
}

/// Problem with exact solution `a·x + b·y`, `β ≡ 1`, `f ≡ 0`.
pub fn linear_problem(a: f64, b: f64) -> ProblemData {
    ProblemData::with_exact(
        Arc::new(|_| 1.0),
        Arc::new(|_| 0.0),
        ExactSolution {
            u: Arc::new(move |p| a * p[0] + b * p[1]),
            grad: Arc::new(move |_| [a, b]),
            singularity: None,
        },
    )
}

/// Normal traces of a vector field on the sub-edges of `poly`, in cycle
/// order.
pub fn field_traces(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    poly: &PolygonView,
    field: impl Fn(Point) -> [f64; 2],
) -> Vec<EdgeFluxTrace> {
    poly.edges
        .iter()
        .map(|&e| {
            let n = topo.sub_edges[e].normal();
            EdgeFluxTrace::from_moments(|r| {
                let v = field(topo.point_on(mesh, e, r));
                v[0] * n[0] + v[1] * n[1]
            })
        })
        .collect()
}

/// `(a, b)` minus the constant `c`, as traces.
fn subtract_constant(
    topo: &MeshTopology,
    poly: &PolygonView,
    traces: &[EdgeFluxTrace],
    c: [f64; 2],
) -> Vec<EdgeFluxTrace> {
    poly.edges
        .iter()
        .zip(traces)
        .map(|(&e, t)| {
            let n = topo.sub_edges[e].normal();
            t.plus(EdgeFluxTrace::constant(-(c[0] * n[0] + c[1] * n[1])))
        })
        .collect()
}

pub fn patch_tests() -> Result<Vec<CheckResult>> {
    let mesh = three_irregular_mesh();
    let topo = MeshTopology::build(&mesh);
    let irr = irregularity(&mesh);
    let mut out = vec![CheckResult::new(
        "patch mesh is 3-irregular with at least 50 leaves",
        irr == 3 && topo.num_leaves() >= 50,
        irr as f64,
        format!("{} leaves, irregularity {irr}", topo.num_leaves()),
    )];
    for (name, a, b) in [("u = x", 1.0, 0.0), ("u = y", 0.0, 1.0)] {
        let p = linear_problem(a, b);
        let sol = assemble_and_solve(&mesh, &topo, &p)?;
        let betas = p.betas(&mesh, &topo)?;
        let flux = recover_flux(&mesh, &topo, &sol, &betas)?;
        let g = aggregate(&estimate(&mesh, &topo, &sol, &flux, &p, &betas));
        let err = energy_error(&sol, &p, &mesh, &topo)?;
        let worst = err.max(g.eta_hat).max(g.eta_res);
        out.push(CheckResult::new(
            &format!("patch test {name}"),
            worst <= 1e-9,
            worst,
            format!(
                "energy error {err:.2e}, eta_hat {:.2e}, eta_res {:.2e}",
                g.eta_hat, g.eta_res
            ),
        ));
    }
    Ok(out)
}

/// Trace conformity and the divergence identity on random meshes with a
/// smooth and an interface problem.
pub fn divergence_identities(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut mismatch = 0.0f64;
    let mut defect = 0.0f64;
    for trial in 0..6 {
        let (mesh, problem) = if trial % 2 == 0 {
            (random_mesh(rng, 2, 30), Benchmark::Manufactured.problem())
        } else {
            let mut m = Benchmark::Kellogg.initial_mesh();
            for _ in 0..30 {
                let leaves = m.leaves();
                let k = leaves[rng.gen_range(0..leaves.len())];
                m.refine(&[k], None)?;
            }
            (m, Benchmark::Kellogg.problem())
        };
        let topo = MeshTopology::build(&mesh);
        let sol = assemble_and_solve(&mesh, &topo, &problem)?;
        let betas = problem.betas(&mesh, &topo)?;
        let flux = recover_flux(&mesh, &topo, &sol, &betas)?;
        let a = audit(&mesh, &topo, &sol, &betas, &flux)?;
        mismatch = mismatch.max(a.trace_mismatch);
        defect = defect.max(a.divergence_defect);
    }
    Ok(vec![
        CheckResult::new(
            "interior traces single-valued",
            mismatch <= 1e-12,
            mismatch,
            format!("max mismatch {mismatch:.2e}"),
        ),
        CheckResult::new(
            "divergence identity",
            defect <= 1e-12,
            defect,
            format!("max defect {defect:.2e}"),
        ),
    ])
}

/// Constant reproduction and idempotency of `Π` on random leaves, and
/// agreement of the two projection routes on linear fields.
pub fn projection_checks(rng: &mut ChaCha8Rng, leaves: usize) -> Result<Vec<CheckResult>> {
    let mesh = random_mesh(rng, 2, 60);
    let topo = MeshTopology::build(&mesh);
    let mut repro = 0.0f64;
    let mut idem = 0.0f64;
    let mut routes = 0.0f64;
    for _ in 0..leaves {
        let poly = &topo.polygons[rng.gen_range(0..topo.num_leaves())];
        let c = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let tr = field_traces(&mesh, &topo, poly, |_| c);
        let d = element_divergence_local(&topo, poly, &tr);
        let pc = project_from_dofs(&mesh, &topo, poly, &tr, d)?;
        repro = repro.max(
            (pc[0] - c[0]).abs().max((pc[1] - c[1]).abs()) / (1.0 + c[0].abs().max(c[1].abs())),
        );

        let m: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
        let field = |p: Point| {
            [
                m[0] + m[1] * p[0] + m[2] * p[1],
                m[3] + m[4] * p[0] + m[5] * p[1],
            ]
        };
        let tr = field_traces(&mesh, &topo, poly, field);
        let d = element_divergence_local(&topo, poly, &tr);
        let once = project_from_dofs(&mesh, &topo, poly, &tr, d)?;
        let tr2 = field_traces(&mesh, &topo, poly, |_| once);
        let d2 = element_divergence_local(&topo, poly, &tr2);
        let twice = project_from_dofs(&mesh, &topo, poly, &tr2, d2)?;
        let scale = 1.0 + once[0].abs().max(once[1].abs());
        idem = idem.max((twice[0] - once[0]).abs().max((twice[1] - once[1]).abs()) / scale);

        // A gradient field lies in both representations.
        let o = mesh.cell_origin(poly.leaf);
        let h = poly.side;
        let grad = |p: Point| {
            [
                m[0] + 2.0 * m[1] * p[0] + m[2] * p[1],
                m[3] + m[2] * p[0] + 2.0 * m[4] * p[1],
            ]
        };
        let tr = field_traces(&mesh, &topo, poly, grad);
        let d = element_divergence_local(&topo, poly, &tr);
        let a = project_from_dofs(&mesh, &topo, poly, &tr, d)?;
        let b = project_polynomial(|xi, eta| grad([o[0] + xi * h, o[1] + eta * h]));
        routes = routes
            .max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()) / (1.0 + b[0].abs().max(b[1].abs())));
    }
    Ok(vec![
        CheckResult::new(
            "projection reproduces constants",
            repro <= 1e-12,
            repro,
            format!("{leaves} leaves, max {repro:.2e}"),
        ),
        CheckResult::new(
            "projection is idempotent",
            idem <= 1e-12,
            idem,
            format!("{leaves} leaves, max {idem:.2e}"),
        ),
        CheckResult::new(
            "projection routes agree on gradients",
            routes <= 1e-12,
            routes,
            format!("max {routes:.2e}"),
        ),
    ])
}

fn element_divergence_local(
    topo: &MeshTopology,
    poly: &PolygonView,
    traces: &[EdgeFluxTrace],
) -> f64 {
    let mut all = vec![EdgeFluxTrace::default(); topo.sub_edges.len()];
    for (&e, t) in poly.edges.iter().zip(traces) {
        all[e] = *t;
    }
    element_divergence(&all, topo, poly)
}

/// A leaf of side `2^{-level}` whose four neighbors are refined once, so
/// its polygon has eight sub-edges.
fn octagon_leaf(level: u32) -> Result<(QuadtreeMesh, usize)> {
    let mut m = QuadtreeMesh::uniform_unit_square(level);
    let h = 0.5f64.powi(level as i32);
    let k = m
        .leaves()
        .into_iter()
        .find(|&k| m.cell_origin(k) == [h, h])
        .expect("interior leaf");
    let mut nb = Vec::new();
    for dir in Direction::ALL {
        if let Neighbors::Single(n) = m.side_neighbors(k, dir) {
            nb.push(n);
        }
    }
    m.refine(&nb, None)?;
    Ok((m, k))
}

/// Norm-equivalence and inverse-estimate ratios for gradients of quadratics
/// on the octagonal leaf at three levels.
pub fn norm_equivalence(rng: &mut ChaCha8Rng, samples: usize) -> Result<Vec<CheckResult>> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut inverse = Vec::new();
    let family: Vec<[f64; 5]> = (0..samples)
        .map(|i| {
            if i < 5 {
                std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 })
            } else {
                std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
            }
        })
        .collect();
    for level in 2..5 {
        let (mesh, leaf) = octagon_leaf(level)?;
        let topo = MeshTopology::build(&mesh);
        let poly = topo.polygon(leaf).clone();
        let c = mesh.cell_centroid(leaf);
        let s = poly.side;
        let mut cinv = 0.0f64;
        for a in &family {
            let grad = |p: Point| {
                let x = (p[0] - c[0]) / s;
                let y = (p[1] - c[1]) / s;
                [
                    (a[0] + 2.0 * a[2] * x + a[3] * y) / s,
                    (a[1] + a[3] * x + 2.0 * a[4] * y) / s,
                ]
            };
            let tr = field_traces(&mesh, &topo, &poly, grad);
            let d = element_divergence_local(&topo, &poly, &tr);
            let pi = project_from_dofs(&mesh, &topo, &poly, &tr, d)?;
            let rest = subtract_constant(&topo, &poly, &tr, pi);
            let stab = stability_seminorm(&topo, &poly, &rest);
            let o = mesh.cell_origin(leaf);
            let l2 = GAUSS3
                .tensor()
                .map(|(xi, eta, w)| {
                    let g = grad([o[0] + xi * s, o[1] + eta * s]);
                    w * (g[0] * g[0] + g[1] * g[1])
                })
                .sum::<f64>()
                .sqrt()
                * s;
            let top = (poly.area * (pi[0] * pi[0] + pi[1] * pi[1]) + stab * stab).sqrt();
            let r = top / l2;
            lo = lo.min(r);
            hi = hi.max(r);
            cinv = cinv.max(poly.diameter * d.abs() * poly.area.sqrt() / l2);
        }
        inverse.push(cinv);
    }
    let imin = inverse.iter().cloned().fold(f64::INFINITY, f64::min);
    let imax = inverse.iter().cloned().fold(0.0, f64::max);
    let spread = (imax - imin) / imin;
    Ok(vec![
        CheckResult::new(
            "norm equivalence on gradients of quadratics",
            lo >= 1.0 / 20.0 && hi <= 20.0,
            hi.max(1.0 / lo),
            format!("ratio in [{lo:.4}, {hi:.4}] over 3 levels"),
        ),
        CheckResult::new(
            "inverse estimate constant is level independent",
            spread < 0.05,
            spread,
            format!(
                "constants {:?}",
                inverse
                    .iter()
                    .map(|c| format!("{c:.6}"))
                    .collect::<Vec<_>>()
            ),
        ),
    ])
}

/// Smallest subset size whose squared sum reaches `θ` of the total, by
/// enumeration.
fn brute_force_min(sq: &[f64], theta: f64) -> usize {
    let total: f64 = sq.iter().sum();
    let n = sq.len();
    let mut best = n;
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k >= best {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| sq[i]).sum();
        if s >= theta * total {
            best = k;
        }
    }
    best
}

pub fn dorfler_minimality(rng: &mut ChaCha8Rng, sets: usize) -> Result<Vec<CheckResult>> {
    let mut failures = 0;
    let mut first = String::new();
    for t in 0..sets {
        let n = rng.gen_range(1..=12);
        // Draw from a few levels now and then to exercise ties.
        let coarse = t % 4 == 0;
        let ind: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                let v = if coarse {
                    rng.gen_range(1..4) as f64
                } else {
                    rng.gen_range(0.0..1.0)
                };
                (i * 7 % 13, v)
            })
            .collect();
        let theta = rng.gen_range(0.05..0.95);
        let m = dorfler_mark(&ind, theta)?;
        let sq: Vec<f64> = ind.iter().map(|&(_, e)| e * e).collect();
        let total: f64 = sq.iter().sum();
        let value = |ids: &[usize]| -> f64 {
            ids.iter()
                .map(|id| sq[ind.iter().position(|&(k, _)| k == *id).unwrap()])
                .sum()
        };
        let ok = if total == 0.0 {
            m.converged
        } else {
            let reaches = value(&m.marked) >= theta * total;
            let minimal = value(&m.marked[..m.marked.len() - 1]) < theta * total;
            reaches && minimal && m.marked.len() == brute_force_min(&sq, theta)
        };
        if !ok {
            failures += 1;
            if first.is_empty() {
                first = format!("; first failure {ind:?} theta {theta}");
            }
        }
    }
    Ok(vec![CheckResult::new(
        "Dörfler marking is minimal",
        failures == 0,
        failures as f64,
        format!("{sets} random sets, {failures} failures{first}"),
    )])
}

/// Effectivities of `η̂` and `η_Res` for a problem on a mesh.
fn effectivities(mesh: &QuadtreeMesh, problem: &ProblemData) -> Result<(f64, f64)> {
    let topo = MeshTopology::build(mesh);
    let sol = assemble_and_solve(mesh, &topo, problem)?;
    let betas = problem.betas(mesh, &topo)?;
    let flux = recover_flux(mesh, &topo, &sol, &betas)?;
    let g = aggregate(&estimate(mesh, &topo, &sol, &flux, problem, &betas));
    let err = energy_error(&sol, problem, mesh, &topo)?;
    Ok((g.eta_hat / err, g.eta_res / err))
}

pub fn beta_scaling(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut worst = 0.0f64;
    for b in [Benchmark::Manufactured, Benchmark::Kellogg] {
        let mut mesh = b.initial_mesh();
        for _ in 0..20 {
            let leaves = mesh.leaves();
            let k = leaves[rng.gen_range(0..leaves.len())];
            mesh.refine(&[k], None)?;
        }
        let p = b.problem();
        let (h0, r0) = effectivities(&mesh, &p)?;
        for c in [1e-3, 7.3, 250.0] {
            let (h, r) = effectivities(&mesh, &p.scaled(c))?;
            worst = worst.max(((h - h0) / h0).abs()).max(((r - r0) / r0).abs());
        }
    }
    Ok(vec![CheckResult::new(
        "effectivity invariant under β scaling",
        worst <= 1e-8,
        worst,
        format!("max relative change {worst:.2e}"),
    )])
}

pub fn exact_solution_audits() -> Vec<CheckResult> {
    let mut out: Vec<CheckResult> = Benchmark::ALL
        .iter()
        .map(|&b| {
            let a = audit_exact_solution(b, 1000, 1e-3);
            let worst = a.max_pde_residual.max(a.max_gradient_defect);
            CheckResult::new(
                &format!("{b} exact data satisfies the PDE"),
                a.points == 1000 && a.passes(1e-6),
                worst,
                format!(
                    "{} points, PDE residual {:.2e}, gradient {:.2e}",
                    a.points, a.max_pde_residual, a.max_gradient_defect
                ),
            )
        })
        .collect();
    let (du, df) = KelloggParams::default().continuity_defect();
    out.push(CheckResult::new(
        "kellogg angular factor is continuous",
        du <= 1e-10,
        du,
        format!("jump of mu {du:.2e}, jump of beta mu' {df:.2e}"),
    ));
    out
}

/// Runs every check with a fixed seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = patch_tests()?;
    out.extend(divergence_identities(&mut rng)?);
    out.extend(projection_checks(&mut rng, 100)?);
    out.extend(norm_equivalence(&mut rng, 200)?);
    out.extend(dorfler_minimality(&mut rng, 1000)?);
    out.extend(beta_scaling(&mut rng)?);
    out.extend(exact_solution_audits());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_irregular_mesh_shape() {
        let m = three_irregular_mesh();
        assert_eq!(irregularity(&m), 3);
        assert_eq!(m.num_leaves(), 73);
    }

    #[test]
    fn octagon_has_eight_sub_edges() {
        let (m, k) = octagon_leaf(2).unwrap();
        let t = MeshTopology::build(&m);
        assert_eq!(t.polygon(k).edges.len(), 8);
    }

    #[test]
    fn brute_force_agrees_with_examples() {
        assert_eq!(brute_force_min(&[9.0, 4.0, 1.0], 0.3), 1);
        assert_eq!(brute_force_min(&[1.0; 4], 0.3), 2);
    }
}
