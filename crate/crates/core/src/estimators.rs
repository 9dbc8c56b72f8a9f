//! Recovery-based indicators, the residual indicator used for comparison,
//! data oscillation and effectivity indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{DiscreteSolution, ProblemData};
use crate::flux::{
    one_sided_flux, polygon_traces, project_polynomial, stability_seminorm, EdgeFluxTrace,
    RecoveredFlux,
};
use crate::mesh::{CellId, MeshTopology, PolygonView, QuadtreeMesh, Side};
use crate::quadrature::GAUSS3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElementIndicators {
    pub leaf: CellId,
    pub eta_f_hat: f64,
    pub eta_s_hat: f64,
    pub eta_hat_sq: f64,
    /// `β_K^{-1} h_K² ‖f + div(β∇u_T)‖²_K`.
    pub res_bulk_sq: f64,
    /// `½ Σ_e h_e/(β_K + β_{K_e}) ‖[β∇u_T·n_e]‖²_e` over interior sub-edges.
    pub res_jump_sq: f64,
    pub eta_res_sq: f64,
    pub osc: f64,
}

impl ElementIndicators {
    pub fn eta_hat(&self) -> f64 {
        self.eta_hat_sq.sqrt()
    }

    /// Jump part without the ½ sharing factor.
    pub fn eta_jump(&self) -> f64 {
        (2.0 * self.res_jump_sq).sqrt()
    }

    /// `η̂_K / (osc + η_R + η_J)`, `None` when both vanish.
    pub fn efficiency_ratio(&self) -> Option<f64> {
        let den = self.osc + self.res_bulk_sq.sqrt() + self.eta_jump();
        let num = self.eta_hat();
        if den == 0.0 {
            if num == 0.0 {
                None
            } else {
                Some(f64::INFINITY)
            }
        } else {
            Some(num / den)
        }
    }
}

/// `β^{-1/2} |K|^{1/2} |Πσ_T + Π(β∇u_T)|`.
pub fn eta_f_from_projections(beta: f64, area: f64, pi_sigma: [f64; 2], pi_grad: [f64; 2]) -> f64 {
    let c = [pi_sigma[0] + pi_grad[0], pi_sigma[1] + pi_grad[1]];
    (area / beta).sqrt() * c[0].hypot(c[1])
}

/// `β^{-1/2} |·|_{S,K}` of a field given by its normal traces on the
/// sub-edges of `K` (already with its projection removed).
pub fn eta_s_from_traces(
    topo: &MeshTopology,
    poly: &PolygonView,
    beta: f64,
    traces: &[EdgeFluxTrace],
) -> f64 {
    stability_seminorm(topo, poly, traces) / beta.sqrt()
}

/// `Π(β_K ∇u_T)` on one leaf: the area mean of the polynomial field.
pub fn projected_gradient(
    mesh: &QuadtreeMesh,
    solution: &DiscreteSolution,
    leaf: CellId,
    beta: f64,
) -> [f64; 2] {
    let g = project_polynomial(|xi, eta| solution.gradient(mesh, leaf, xi, eta));
    [beta * g[0], beta * g[1]]
}

/// Normal traces of `(I − Π)(σ_T + β_K∇u_T)` on the sub-edges of `K`.
pub fn stabilized_traces(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    flux: &RecoveredFlux,
    poly: &PolygonView,
    beta: f64,
    projection: [f64; 2],
) -> Vec<EdgeFluxTrace> {
    polygon_traces(&flux.traces, poly)
        .into_iter()
        .zip(&poly.edges)
        .map(|(sigma, &e)| {
            let n = topo.sub_edges[e].normal();
            let grad = one_sided_flux(mesh, topo, solution, beta, poly.leaf, e).scale(-1.0);
            let pi = EdgeFluxTrace::constant(projection[0] * n[0] + projection[1] * n[1]);
            sigma.plus(grad).plus(pi.scale(-1.0))
        })
        .collect()
}

pub fn eta_f_hat(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    flux: &RecoveredFlux,
    leaf: CellId,
    beta: f64,
) -> f64 {
    let pos = topo.position(leaf).expect("leaf");
    let pg = projected_gradient(mesh, solution, leaf, beta);
    eta_f_from_projections(beta, topo.polygons[pos].area, flux.projected[pos], pg)
}

pub fn eta_s_hat(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    flux: &RecoveredFlux,
    leaf: CellId,
    beta: f64,
) -> f64 {
    let pos = topo.position(leaf).expect("leaf");
    let pg = projected_gradient(mesh, solution, leaf, beta);
    let ps = flux.projected[pos];
    let poly = &topo.polygons[pos];
    let tr = stabilized_traces(
        mesh,
        topo,
        solution,
        flux,
        poly,
        beta,
        [ps[0] + pg[0], ps[1] + pg[1]],
    );
    eta_s_from_traces(topo, poly, beta, &tr)
}

/// `(bulk², jump²)` of the residual indicator. On rectangles
/// `div(β_K ∇u_T) = 0` for bilinear `u_T`, so the bulk part is `f` alone.
pub fn eta_res(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    problem: &ProblemData,
    betas: &[f64],
    leaf: CellId,
) -> (f64, f64) {
    let pos = topo.position(leaf).expect("leaf");
    let poly = &topo.polygons[pos];
    let beta = betas[pos];
    let o = mesh.cell_origin(leaf);
    let h = poly.side;
    let f_sq: f64 = GAUSS3
        .tensor()
        .map(|(xi, eta, w)| w * (problem.source)([o[0] + xi * h, o[1] + eta * h]).powi(2))
        .sum::<f64>()
        * poly.area;
    let bulk = poly.diameter.powi(2) * f_sq / beta;
    let mut jump = 0.0;
    for &e in &poly.edges {
        let se = &topo.sub_edges[e];
        let Side::Leaf(other) = se.across(leaf) else {
            continue;
        };
        let b_other = betas[topo.position(other).expect("leaf")];
        let mine = one_sided_flux(mesh, topo, solution, beta, leaf, e);
        let theirs = one_sided_flux(mesh, topo, solution, b_other, other, e);
        let diff = mine.plus(theirs.scale(-1.0));
        jump += se.length / (beta + b_other) * diff.integrate_against(se.length, |r| diff.at(r));
    }
    (bulk, 0.5 * jump)
}

/// `β_K^{-1/2} h_K ‖f − mean_K f‖_K`.
pub fn oscillation(
    mesh: &QuadtreeMesh,
    poly: &PolygonView,
    problem: &ProblemData,
    beta: f64,
) -> f64 {
    let o = mesh.cell_origin(poly.leaf);
    let h = poly.side;
    let vals: Vec<(f64, f64)> = GAUSS3
        .tensor()
        .map(|(xi, eta, w)| (w, (problem.source)([o[0] + xi * h, o[1] + eta * h])))
        .collect();
    let mean: f64 = vals.iter().map(|(w, f)| w * f).sum();
    let var: f64 = vals
        .iter()
        .map(|(w, f)| w * (f - mean).powi(2))
        .sum::<f64>()
        * poly.area;
    poly.diameter * var.sqrt() / beta.sqrt()
}

/// All indicators, leaf-parallel, ordered like `topo.leaves`.
pub fn estimate(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    flux: &RecoveredFlux,
    problem: &ProblemData,
    betas: &[f64],
) -> Vec<ElementIndicators> {
    topo.polygons
        .par_iter()
        .enumerate()
        .map(|(pos, poly)| {
            let leaf = poly.leaf;
            let beta = betas[pos];
            let pg = projected_gradient(mesh, solution, leaf, beta);
            let ps = flux.projected[pos];
            let c = [ps[0] + pg[0], ps[1] + pg[1]];
            let f = eta_f_from_projections(beta, poly.area, ps, pg);
            let tr = stabilized_traces(mesh, topo, solution, flux, poly, beta, c);
            let s = eta_s_from_traces(topo, poly, beta, &tr);
            let (bulk, jump) = eta_res(mesh, topo, solution, problem, betas, leaf);
            ElementIndicators {
                leaf,
                eta_f_hat: f,
                eta_s_hat: s,
                eta_hat_sq: f * f + s * s,
                res_bulk_sq: bulk,
                res_jump_sq: jump,
                eta_res_sq: bulk + jump,
                osc: oscillation(mesh, poly, problem, beta),
            }
        })
        .collect()
}

/// Global estimators summed in the given leaf order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalEstimate {
    pub eta_hat: f64,
    pub eta_res: f64,
    pub osc: f64,
}

/// `(η̂, η_Res)` as square roots of sums of squares. Leaves are summed in
/// ascending id order regardless of the input order.
pub fn aggregate(indicators: &[ElementIndicators]) -> GlobalEstimate {
    let mut sorted: Vec<&ElementIndicators> = indicators.iter().collect();
    sorted.sort_by_key(|i| i.leaf);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for i in sorted {
        a += i.eta_hat_sq;
        b += i.eta_res_sq;
        c += i.osc * i.osc;
    }
    GlobalEstimate {
        eta_hat: a.sqrt(),
        eta_res: b.sqrt(),
        osc: c.sqrt(),
    }
}

pub fn effectivity(eta: f64, energy_error: f64) -> Result<f64> {
    if !(energy_error > 0.0) {
        return Err(Error::UndefinedEffectivity);
    }
    Ok(eta / energy_error)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{assemble_and_solve, ExactSolution};
    use crate::flux::recover_flux;

    fn constant(c: f64) -> crate::fem::ScalarFn {
        Arc::new(move |_| c)
    }

    fn simple_problem(f: crate::fem::ScalarFn) -> ProblemData {
        ProblemData {
            beta: constant(1.0),
            source: f,
            dirichlet: constant(0.0),
            exact: None,
        }
    }

    #[test]
    fn projection_formula_examples() {
        assert_eq!(
            eta_f_from_projections(1.0, 1.0, [1.0, 0.0], [0.0, 0.0]),
            1.0
        );
        assert_eq!(
            eta_f_from_projections(4.0, 1.0, [1.0, 0.0], [0.0, 0.0]),
            0.5
        );
    }

    #[test]
    fn stabilization_of_linear_moments() {
        let m = QuadtreeMesh::unit_square();
        let t = MeshTopology::build(&m);
        let p = &t.polygons[0];
        let tr = vec![EdgeFluxTrace { c0: 0.0, c1: 1.0 }; 4];
        assert!((eta_s_from_traces(&t, p, 1.0, &tr).powi(2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn patch_state_has_zero_indicators() {
        let mut m = QuadtreeMesh::uniform_unit_square(1);
        let sw = m.cell(m.roots()[0]).children.unwrap()[0];
        m.refine(&[sw], None).unwrap();
        let t = MeshTopology::build(&m);
        let prob = ProblemData::with_exact(
            constant(1.0),
            constant(0.0),
            ExactSolution {
                u: Arc::new(|p| p[0]),
                grad: Arc::new(|_| [1.0, 0.0]),
                singularity: None,
            },
        );
        let sol = assemble_and_solve(&m, &t, &prob).unwrap();
        let betas = prob.betas(&m, &t).unwrap();
        let flux = recover_flux(&m, &t, &sol, &betas).unwrap();
        for (pos, poly) in t.polygons.iter().enumerate() {
            assert!(flux.divergence[pos].abs() < 1e-12);
            assert!(
                (flux.projected[pos][0] + 1.0).abs() < 1e-12
                    && flux.projected[pos][1].abs() < 1e-12
            );
            for &e in &poly.edges {
                let se = &t.sub_edges[e];
                let tr = flux.traces[e];
                let expect = if se.vertical { -1.0 } else { 0.0 };
                assert!((tr.c0 - expect).abs() < 1e-12 && tr.c1.abs() < 1e-12);
            }
        }
        let ind = estimate(&m, &t, &sol, &flux, &prob, &betas);
        let g = aggregate(&ind);
        assert!(g.eta_hat < 1e-12 && g.eta_res < 1e-12);
        for i in &ind {
            assert_eq!(eta_f_hat(&m, &t, &sol, &flux, i.leaf, 1.0), i.eta_f_hat);
            assert_eq!(eta_s_hat(&m, &t, &sol, &flux, i.leaf, 1.0), i.eta_s_hat);
        }
    }

    #[test]
    fn residual_examples() {
        let m = QuadtreeMesh::unit_square();
        let t = MeshTopology::build(&m);
        let zero = DiscreteSolution::zeros(m.num_nodes());
        let (bulk, jump) = eta_res(
            &m,
            &t,
            &zero,
            &simple_problem(constant(1.0)),
            &[1.0],
            m.roots()[0],
        );
        assert!((bulk - 2.0).abs() < 1e-14);
        assert_eq!(jump, 0.0);

        // Two unit leaves sharing x = 0 with gradients (1,0) and (2,0).
        let m = QuadtreeMesh::from_roots(&[[-1, 0], [0, 0]]).unwrap();
        let t = MeshTopology::build(&m);
        let mut sol = DiscreteSolution::zeros(m.num_nodes());
        for n in 0..m.num_nodes() {
            let x = m.node_coords(n)[0];
            sol.values[n] = if x <= 0.0 { x } else { 2.0 * x };
        }
        let prob = simple_problem(constant(0.0));
        for &leaf in &t.leaves {
            let (bulk, jump) = eta_res(&m, &t, &sol, &prob, &[1.0, 1.0], leaf);
            assert_eq!(bulk, 0.0);
            assert!((jump - 0.25).abs() < 1e-14, "{jump}");
        }
    }

    #[test]
    fn oscillation_examples() {
        let m = QuadtreeMesh::unit_square();
        let t = MeshTopology::build(&m);
        let p = &t.polygons[0];
        assert!(oscillation(&m, p, &simple_problem(constant(3.0)), 1.0) < 1e-14);
        let lin = simple_problem(Arc::new(|x| x[0]));
        let o = oscillation(&m, p, &lin, 1.0);
        assert!((o - 2f64.sqrt() * (1.0f64 / 12.0).sqrt()).abs() < 1e-14);
        let lin3 = simple_problem(Arc::new(|x| 3.0 * x[0]));
        assert!((oscillation(&m, p, &lin3, 1.0) - 3.0 * o).abs() < 1e-14);
    }

    #[test]
    fn aggregation_and_effectivity() {
        let zero = [ElementIndicators::default(); 3];
        let g = aggregate(&zero);
        assert_eq!((g.eta_hat, g.eta_res), (0.0, 0.0));
        let a = ElementIndicators {
            leaf: 1,
            eta_hat_sq: 9.0,
            ..Default::default()
        };
        let b = ElementIndicators {
            leaf: 2,
            eta_hat_sq: 16.0,
            ..Default::default()
        };
        assert_eq!(aggregate(&[a, b]).eta_hat, 5.0);
        assert_eq!(aggregate(&[a, b]), aggregate(&[b, a]));
        assert_eq!(effectivity(0.7, 0.7).unwrap(), 1.0);
        assert_eq!(effectivity(1.0, 0.0), Err(Error::UndefinedEffectivity));
    }
}
