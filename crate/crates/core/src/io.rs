//! File output: VTK meshes, JSON dumps and CSV tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afem::{AfemConfig, ConvergenceRecord, StopReason};
use crate::error::Result;
use crate::estimators::ElementIndicators;
use crate::flux::RecoveredFlux;
use crate::mesh::{MeshTopology, NodeKind, PolygonView, QuadtreeMesh, SubEdge};

const VTK_QUAD: u8 = 9;

/// Legacy ASCII unstructured grid of the leaves, one quad per leaf on its
/// four generation vertices. Every mesh node is a point, so hanging nodes
/// appear unused. `u` is written as point data when given.
pub fn write_vtk<W: Write>(mut w: W, mesh: &QuadtreeMesh, u: Option<&[f64]>) -> Result<()> {
    let leaves = mesh.leaves();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "quadflux mesh")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_nodes())?;
    for n in 0..mesh.num_nodes() {
        let p = mesh.node_coords(n);
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {} {}", leaves.len(), 5 * leaves.len())?;
    for &k in &leaves {
        let c = mesh.cell(k).corners;
        writeln!(w, "4 {} {} {} {}", c[0], c[1], c[2], c[3])?;
    }
    writeln!(w, "CELL_TYPES {}", leaves.len())?;
    for _ in &leaves {
        writeln!(w, "{VTK_QUAD}")?;
    }
    writeln!(w, "CELL_DATA {}", leaves.len())?;
    writeln!(w, "SCALARS level int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for &k in &leaves {
        writeln!(w, "{}", mesh.cell(k).level)?;
    }
    if let Some(u) = u {
        writeln!(w, "POINT_DATA {}", mesh.num_nodes())?;
        writeln!(w, "SCALARS u double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in u {
            writeln!(w, "{v}")?;
        }
    }
    Ok(())
}

pub fn write_vtk_file(path: &Path, mesh: &QuadtreeMesh, u: Option<&[f64]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vtk(&mut w, mesh, u)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub hanging: bool,
    /// Endpoints of the segment a hanging node bisects.
    pub masters: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDump {
    pub nodes: Vec<NodeDump>,
    pub leaves: Vec<usize>,
    pub sub_edges: Vec<SubEdge>,
    /// Indexed like `leaves`.
    pub polygons: Vec<PolygonView>,
}

pub fn topology_dump(mesh: &QuadtreeMesh, topo: &MeshTopology) -> TopologyDump {
    let nodes = (0..mesh.num_nodes())
        .map(|n| {
            let p = mesh.node_coords(n);
            let masters = match topo.classification.kinds[n] {
                NodeKind::Hanging { masters } => Some(masters),
                NodeKind::Regular => None,
            };
            NodeDump {
                id: n,
                x: p[0],
                y: p[1],
                hanging: masters.is_some(),
                masters,
            }
        })
        .collect();
    TopologyDump {
        nodes,
        leaves: topo.leaves.clone(),
        sub_edges: topo.sub_edges.clone(),
        polygons: topo.polygons.clone(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub ndof_free: usize,
    pub residual: f64,
    pub energy_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFluxRow {
    pub sub_edge: usize,
    pub c0: f64,
    pub c1: f64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafFluxRow {
    pub leaf: usize,
    pub divergence: f64,
    pub pi_x: f64,
    pub pi_y: f64,
}

pub fn flux_rows(
    topo: &MeshTopology,
    flux: &RecoveredFlux,
) -> (Vec<EdgeFluxRow>, Vec<LeafFluxRow>) {
    let edges = flux
        .traces
        .iter()
        .zip(&flux.gamma)
        .enumerate()
        .map(|(e, (t, &g))| EdgeFluxRow {
            sub_edge: e,
            c0: t.c0,
            c1: t.c1,
            gamma: g,
        })
        .collect();
    let leaves = topo
        .leaves
        .iter()
        .zip(&flux.divergence)
        .zip(&flux.projected)
        .map(|((&k, &d), p)| LeafFluxRow {
            leaf: k,
            divergence: d,
            pi_x: p[0],
            pi_y: p[1],
        })
        .collect();
    (edges, leaves)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub leaf: usize,
    pub eta_f_hat: f64,
    pub eta_s_hat: f64,
    pub res_bulk_sq: f64,
    pub res_jump_sq: f64,
    pub osc: f64,
}

impl From<&ElementIndicators> for IndicatorRow {
    fn from(i: &ElementIndicators) -> Self {
        IndicatorRow {
            leaf: i.leaf,
            eta_f_hat: i.eta_f_hat,
            eta_s_hat: i.eta_s_hat,
            res_bulk_sq: i.res_bulk_sq,
            res_jump_sq: i.res_jump_sq,
            osc: i.osc,
        }
    }
}

/// One line of `convergence.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub iter: usize,
    pub ndof: usize,
    pub energy_error: Option<f64>,
    pub eta_hat: f64,
    pub eta_res: f64,
    pub eff_hat: Option<f64>,
    pub eff_res: Option<f64>,
    pub n_marked: usize,
    pub max_irregularity: usize,
}

impl From<&ConvergenceRecord> for ConvergenceRow {
    fn from(r: &ConvergenceRecord) -> Self {
        ConvergenceRow {
            iter: r.iter,
            ndof: r.ndof,
            energy_error: r.energy_error,
            eta_hat: r.eta_hat,
            eta_res: r.eta_res,
            eff_hat: r.eff_hat,
            eff_res: r.eff_res,
            n_marked: r.n_marked,
            max_irregularity: r.max_irregularity,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_convergence_csv(path: &Path, records: &[ConvergenceRecord]) -> Result<()> {
    write_csv(path, records.iter().map(ConvergenceRow::from))
}

pub fn read_convergence_csv(path: &Path) -> Result<Vec<ConvergenceRow>> {
    read_csv(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub energy_error: Option<f64>,
    pub eta_hat: Option<f64>,
    pub eta_res: Option<f64>,
}

/// Contents of `run_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub benchmark: String,
    pub config: AfemConfig,
    pub stop: Option<StopReason>,
    /// Set when the loop aborted.
    pub error: Option<String>,
    pub energy_norm: Option<f64>,
    pub iterations: usize,
    pub final_ndof: usize,
    pub final_relative_error: Option<f64>,
    pub rates: Rates,
    pub final_eff_hat: Option<f64>,
    pub final_eff_res: Option<f64>,
    pub max_efficiency_ratio: f64,
    pub records: Vec<ConvergenceRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SW;

    #[test]
    fn vtk_lists_every_node_and_leaf() {
        let mut m = QuadtreeMesh::uniform_unit_square(1);
        let sw = m.cell(m.roots()[0]).children.unwrap()[SW];
        m.refine(&[sw], None).unwrap();
        let mut buf = Vec::new();
        let u: Vec<f64> = (0..m.num_nodes()).map(|n| n as f64 + 0.5).collect();
        write_vtk(&mut buf, &m, Some(&u)).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("DATASET UNSTRUCTURED_GRID"));
        assert!(s.contains(&format!("POINTS {} double", m.num_nodes())));
        assert!(s.contains("CELLS 7 35"));
        assert!(s.contains("SCALARS u double 1"));
        assert_eq!(s.lines().filter(|l| *l == "9").count(), 7);
    }

    #[test]
    fn topology_dump_flags_hanging_nodes() {
        let mut m = QuadtreeMesh::uniform_unit_square(1);
        let sw = m.cell(m.roots()[0]).children.unwrap()[SW];
        m.refine(&[sw], None).unwrap();
        let t = MeshTopology::build(&m);
        let d = topology_dump(&m, &t);
        assert_eq!(d.nodes.iter().filter(|n| n.hanging).count(), 2);
        let back: TopologyDump = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
