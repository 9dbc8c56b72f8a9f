//! H(div)-conforming flux recovery in the lowest-order virtual element
//! space on the polygonal view of the mesh.
//!
//! A recovered flux is known only through its degrees of freedom: on every
//! sub-edge the normal trace `c0 + c1·(s − m_e)/h_e`, and per leaf the
//! constant divergence obtained from those traces. Projections and the
//! stabilization are computed from these alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{bilinear_gradient, DiscreteSolution};
use crate::mesh::{CellId, MeshTopology, NodeId, PolygonView, QuadtreeMesh, Side, SubEdgeId};
use crate::quadrature::{GAUSS2, GAUSS3};

/// Normal trace `c0 + c1·t` on a sub-edge, `t = (s − m_e)/h_e ∈ [−½, ½]`,
/// with `s` the arc length along the global tangent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeFluxTrace {
    pub c0: f64,
    pub c1: f64,
}

impl EdgeFluxTrace {
    pub fn constant(c0: f64) -> Self {
        EdgeFluxTrace { c0, c1: 0.0 }
    }

    /// Value at the relative position `r = s/h_e ∈ [0, 1]`.
    pub fn at(&self, r: f64) -> f64 {
        self.c0 + self.c1 * (r - 0.5)
    }

    /// Fits the trace from its moments against `{1, t}`, evaluated with the
    /// two-point Gauss rule on values `v(r)`.
    pub fn from_moments(v: impl Fn(f64) -> f64) -> Self {
        let m0 = GAUSS2.integrate(&v);
        let m1 = GAUSS2.integrate(|r| v(r) * (r - 0.5));
        // ∫ t² dr = 1/12 on [0, 1].
        EdgeFluxTrace {
            c0: m0,
            c1: 12.0 * m1,
        }
    }

    /// Linear trace through the endpoint values.
    pub fn from_endpoints(a: f64, b: f64) -> Self {
        Self::from_moments(|r| a + (b - a) * r)
    }

    /// `∫_e trace · q ds` for `q` given as a function of `r = s/h_e`.
    pub fn integrate_against(&self, length: f64, q: impl Fn(f64) -> f64) -> f64 {
        length * GAUSS2.integrate(|r| self.at(r) * q(r))
    }

    pub fn plus(self, o: Self) -> Self {
        EdgeFluxTrace {
            c0: self.c0 + o.c0,
            c1: self.c1 + o.c1,
        }
    }

    pub fn scale(self, a: f64) -> Self {
        EdgeFluxTrace {
            c0: a * self.c0,
            c1: a * self.c1,
        }
    }
}

/// `γ_e = β₊^{1/2} / (β₊^{1/2} + β₋^{1/2})`, the weight of the minus side.
pub fn gamma_weight(beta_minus: f64, beta_plus: f64) -> Result<f64> {
    if !(beta_minus > 0.0 && beta_plus > 0.0) {
        return Err(Error::Domain(format!(
            "weights need positive coefficients, got ({beta_minus}, {beta_plus})"
        )));
    }
    let (sm, sp) = (beta_minus.sqrt(), beta_plus.sqrt());
    Ok(sp / (sp + sm))
}

/// Local coordinates of a node with respect to a leaf.
pub fn local_coords(mesh: &QuadtreeMesh, node: NodeId, leaf: CellId) -> [f64; 2] {
    let off = mesh.offset_from_center(node, leaf);
    let h = mesh.cell(leaf).size();
    [off[0] / h + 0.5, off[1] / h + 0.5]
}

/// `−β_K ∇u_T|_K · n_e` on sub-edge `e`, from the polynomial on `leaf`.
pub fn one_sided_flux(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    beta: f64,
    leaf: CellId,
    e: SubEdgeId,
) -> EdgeFluxTrace {
    let se = &topo.sub_edges[e];
    let vals = solution.leaf_values(mesh, leaf);
    let h = mesh.cell(leaf).size();
    let n = se.normal();
    let value_at = |node| {
        let [xi, eta] = local_coords(mesh, node, leaf);
        let g = bilinear_gradient(vals, h, xi, eta);
        -beta * (g[0] * n[0] + g[1] * n[1])
    };
    EdgeFluxTrace::from_endpoints(value_at(se.start), value_at(se.end))
}

/// The DoFs of a recovered flux `σ_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredFlux {
    /// Indexed by sub-edge id.
    pub traces: Vec<EdgeFluxTrace>,
    /// `γ_e` on interior sub-edges, `None` on the boundary.
    pub gamma: Vec<Option<f64>>,
    /// Constant divergence per leaf, ordered like `topo.leaves`.
    pub divergence: Vec<f64>,
    /// `Πσ_T` per leaf.
    pub projected: Vec<[f64; 2]>,
}

fn beta_of(topo: &MeshTopology, betas: &[f64], leaf: CellId) -> f64 {
    betas[topo.position(leaf).expect("leaf")]
}

/// Weighted average of the two one-sided fluxes on an interior sub-edge,
/// computed from the point of view of `leaf`. Both incident leaves obtain
/// the same trace.
pub fn trace_seen_from(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    betas: &[f64],
    leaf: CellId,
    e: SubEdgeId,
) -> Result<EdgeFluxTrace> {
    let se = &topo.sub_edges[e];
    let own = one_sided_flux(mesh, topo, solution, beta_of(topo, betas, leaf), leaf, e);
    let Side::Leaf(other) = se.across(leaf) else {
        return Ok(own);
    };
    let theirs = one_sided_flux(mesh, topo, solution, beta_of(topo, betas, other), other, e);
    let (minus, plus, bm, bp) = if se.minus == Side::Leaf(leaf) {
        (
            own,
            theirs,
            beta_of(topo, betas, leaf),
            beta_of(topo, betas, other),
        )
    } else {
        (
            theirs,
            own,
            beta_of(topo, betas, other),
            beta_of(topo, betas, leaf),
        )
    };
    let g = gamma_weight(bm, bp)?;
    Ok(EdgeFluxTrace::from_moments(|r| {
        g * minus.at(r) + (1.0 - g) * plus.at(r)
    }))
}

/// Normal traces of `σ_T` on every sub-edge with their weights.
pub fn recover_edge_traces(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    betas: &[f64],
) -> Result<(Vec<EdgeFluxTrace>, Vec<Option<f64>>)> {
    let pairs: Vec<(EdgeFluxTrace, Option<f64>)> = topo
        .sub_edges
        .par_iter()
        .map(|se| {
            let anchor = se
                .minus
                .leaf()
                .or(se.plus.leaf())
                .expect("sub-edge touches a leaf");
            let t = trace_seen_from(mesh, topo, solution, betas, anchor, se.id)?;
            let g = match (se.minus, se.plus) {
                (Side::Leaf(m), Side::Leaf(p)) => Some(gamma_weight(
                    beta_of(topo, betas, m),
                    beta_of(topo, betas, p),
                )?),
                _ => None,
            };
            Ok((t, g))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// `d_K = |K|^{-1} Σ_e sign·c0·h_e`; the linear moments integrate to zero.
pub fn element_divergence(
    traces: &[EdgeFluxTrace],
    topo: &MeshTopology,
    poly: &PolygonView,
) -> f64 {
    let flux: f64 = poly
        .edges
        .iter()
        .zip(&poly.signs)
        .map(|(&e, &s)| s * traces[e].c0 * topo.sub_edges[e].length)
        .sum();
    flux / poly.area
}

/// `| |K| d_K − Σ_e sign ∫_e σ·n_e ds |` with the edge integrals taken by
/// quadrature rather than from `c0`.
pub fn divergence_defect(
    traces: &[EdgeFluxTrace],
    topo: &MeshTopology,
    poly: &PolygonView,
    d: f64,
) -> f64 {
    let boundary: f64 = poly
        .edges
        .iter()
        .zip(&poly.signs)
        .map(|(&e, &s)| s * traces[e].integrate_against(topo.sub_edges[e].length, |_| 1.0))
        .sum();
    (poly.area * d - boundary).abs()
}

/// Oblique projection onto `∇P1(K)` (constant vectors) of a field known by
/// its normal traces on the sub-edges of `K` (`traces[i]` on `poly.edges[i]`,
/// oriented along the global `n_e`) and its constant divergence `d`.
///
/// Tests against `p = (x − x_K)/h_K` and `(y − y_K)/h_K`:
/// `(Πτ, ∇p)_K = −(d, p)_K + Σ_e sign (τ·n_e, p)_e`.
pub fn project_from_dofs(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    poly: &PolygonView,
    traces: &[EdgeFluxTrace],
    d: f64,
) -> Result<[f64; 2]> {
    if !(poly.area > 0.0) {
        return Err(Error::Internal(format!("degenerate leaf {}", poly.leaf)));
    }
    let hk = poly.diameter;
    let side = poly.side;
    let mut c = [0.0; 2];
    for axis in 0..2 {
        // (d, p)_K with p centered at the centroid; vanishes up to rounding.
        let bulk = d
            * GAUSS3
                .tensor()
                .map(|(a, b, w)| w * ([a, b][axis] - 0.5) * side / hk)
                .sum::<f64>()
            * poly.area;
        let mut boundary = 0.0;
        for (i, &e) in poly.edges.iter().enumerate() {
            let se = &topo.sub_edges[e];
            let a = mesh.offset_from_center(se.start, poly.leaf)[axis];
            let b = mesh.offset_from_center(se.end, poly.leaf)[axis];
            boundary +=
                poly.signs[i] * traces[i].integrate_against(se.length, |r| (a + (b - a) * r) / hk);
        }
        // (c, ∇p)_K = c_axis |K| / h_K.
        c[axis] = (boundary - bulk) * hk / poly.area;
    }
    Ok(c)
}

/// Oblique projection of a polynomial field: its mean over `K`, with the
/// field given in local coordinates `(ξ, η) ∈ [0,1]²`.
pub fn project_polynomial(field: impl Fn(f64, f64) -> [f64; 2]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for (xi, eta, w) in GAUSS3.tensor() {
        let v = field(xi, eta);
        c[0] += w * v[0];
        c[1] += w * v[1];
    }
    c
}

/// `(Σ_e h_e ‖v·n_e‖²_e)^{1/2}` over the sub-edges of `K`.
pub fn stability_seminorm(
    topo: &MeshTopology,
    poly: &PolygonView,
    traces: &[EdgeFluxTrace],
) -> f64 {
    poly.edges
        .iter()
        .zip(traces)
        .map(|(&e, t)| {
            let h = topo.sub_edges[e].length;
            h * t.integrate_against(h, |r| t.at(r))
        })
        .sum::<f64>()
        .sqrt()
}

/// Traces on the sub-edges of one polygon, in cycle order.
pub fn polygon_traces(traces: &[EdgeFluxTrace], poly: &PolygonView) -> Vec<EdgeFluxTrace> {
    poly.edges.iter().map(|&e| traces[e]).collect()
}

/// Builds `σ_T`: weighted-average edge traces, elementwise divergence and
/// the projection `Πσ_T`.
pub fn recover_flux(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    betas: &[f64],
) -> Result<RecoveredFlux> {
    let (traces, gamma) = recover_edge_traces(mesh, topo, solution, betas)?;
    let divergence: Vec<f64> = topo
        .polygons
        .iter()
        .map(|p| element_divergence(&traces, topo, p))
        .collect();
    let projected = topo
        .polygons
        .par_iter()
        .zip(&divergence)
        .map(|(p, &d)| project_from_dofs(mesh, topo, p, &polygon_traces(&traces, p), d))
        .collect::<Result<_>>()?;
    Ok(RecoveredFlux {
        traces,
        gamma,
        divergence,
        projected,
    })
}

/// Conformity and compatibility audit of a recovered flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxAudit {
    /// Largest difference between the traces recomputed from either side of
    /// an interior sub-edge, and between those and the stored trace.
    pub trace_mismatch: f64,
    /// Largest `| |K| d_K − ∫_∂K σ·n |`.
    pub divergence_defect: f64,
}

pub fn audit(
    mesh: &QuadtreeMesh,
    topo: &MeshTopology,
    solution: &DiscreteSolution,
    betas: &[f64],
    flux: &RecoveredFlux,
) -> Result<FluxAudit> {
    let mismatch = topo
        .sub_edges
        .par_iter()
        .filter(|se| !se.is_boundary())
        .map(|se| {
            let a = trace_seen_from(mesh, topo, solution, betas, se.minus.leaf().unwrap(), se.id)?;
            let b = trace_seen_from(mesh, topo, solution, betas, se.plus.leaf().unwrap(), se.id)?;
            let s = flux.traces[se.id];
            Ok([a.c0 - b.c0, a.c1 - b.c1, a.c0 - s.c0, a.c1 - s.c1]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let defect = topo
        .polygons
        .iter()
        .zip(&flux.divergence)
        .map(|(p, &d)| divergence_defect(&flux.traces, topo, p, d))
        .fold(0.0, f64::max);
    Ok(FluxAudit {
        trace_mismatch: mismatch,
        divergence_defect: defect,
    })
}
