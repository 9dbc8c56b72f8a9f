//! The SOLVE, ESTIMATE, MARK, REFINE loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{aggregate, effectivity, estimate, ElementIndicators};
use crate::fem::{assemble, energy_error, solve_system, DiscreteSolution, ProblemData};
use crate::flux::{audit, recover_flux, RecoveredFlux};
use crate::mesh::{irregularity, CellId, MeshTopology, QuadtreeMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfemConfig {
    pub theta: f64,
    /// Stop once the relative energy error (or `η̂/η̂_0` without an exact
    /// solution) drops to this value.
    pub stop_relative_error: f64,
    pub max_iterations: usize,
    /// Stop after the first iteration with at least this many free DoFs.
    pub max_dofs: usize,
    /// Largest number of hanging nodes per edge, `None` for unbounded.
    pub cap: Option<usize>,
    /// `‖β^{1/2}∇u‖` used for the relative error; computed from the exact
    /// solution when absent.
    pub energy_norm: Option<f64>,
}

impl Default for AfemConfig {
    fn default() -> Self {
        AfemConfig {
            theta: 0.3,
            stop_relative_error: 0.05,
            max_iterations: 200,
            max_dofs: 30_000,
            cap: None,
            energy_norm: None,
        }
    }
}

impl AfemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        if !(self.stop_relative_error > 0.0 && self.stop_relative_error.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "stopping tolerance must be positive, got {}",
                self.stop_relative_error
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.cap == Some(0) {
            return Err(Error::InvalidConfig(
                "irregularity cap must be at least 1".into(),
            ));
        }
        if let Some(n) = self.energy_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "energy norm must be positive, got {n}"
                )));
            }
        }
        Ok(())
    }
}

/// One AFEM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iter: usize,
    /// Free regular nodes.
    pub ndof: usize,
    pub num_leaves: usize,
    /// `NaN`-free: `None` when no exact solution is known.
    pub energy_error: Option<f64>,
    pub eta_hat: f64,
    pub eta_res: f64,
    pub osc: f64,
    pub eff_hat: Option<f64>,
    pub eff_res: Option<f64>,
    pub n_marked: usize,
    pub max_irregularity: usize,
    pub trace_mismatch: f64,
    pub divergence_defect: f64,
    /// Largest per-leaf `η̂_K / (osc_K + η_R,K + η_J,K)`.
    pub max_efficiency_ratio: f64,
    /// `‖β^{1/2}∇ε‖ / (η̂ + osc)`.
    pub reliability_constant: Option<f64>,
    pub solver_iterations: usize,
    pub wall_ms: f64,
}

impl ConvergenceRecord {
    pub fn relative_error(&self, energy_norm: f64) -> Option<f64> {
        self.energy_error.map(|e| e / energy_norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIterations,
    MaxDofs,
    /// Every indicator vanished.
    Exact,
}

#[derive(Debug, Clone)]
pub struct AfemRun {
    pub records: Vec<ConvergenceRecord>,
    pub stop: StopReason,
    pub energy_norm: Option<f64>,
    pub mesh: QuadtreeMesh,
}

/// A loop aborted by a numerical failure, with the iterations completed
/// before it.
#[derive(Debug, Clone)]
pub struct AfemFailure {
    pub records: Vec<ConvergenceRecord>,
    pub error: Error,
}

impl std::fmt::Display for AfemFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} iterations)",
            self.error,
            self.records.len()
        )
    }
}

impl std::error::Error for AfemFailure {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marking {
    pub marked: Vec<CellId>,
    /// All indicators are zero.
    pub converged: bool,
}

/// Dörfler marking on `(leaf, η_K)` pairs: the shortest prefix of the
/// leaves sorted by `η_K²` (descending, ties by ascending id) whose squares
/// reach `θ Σ η_K²`.
pub fn dorfler_mark(indicators: &[(CellId, f64)], theta: f64) -> Result<Marking> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let mut sq: Vec<(CellId, f64)> = indicators.iter().map(|&(k, e)| (k, e * e)).collect();
    if sq.iter().any(|&(_, s)| !s.is_finite()) {
        return Err(Error::Domain("indicator is not finite".into()));
    }
    sq.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = sq.iter().map(|&(_, s)| s).sum();
    if total == 0.0 {
        return Ok(Marking {
            marked: Vec::new(),
            converged: true,
        });
    }
    let target = theta * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for &(k, s) in &sq {
        if acc >= target || s == 0.0 {
            break;
        }
        acc += s;
        marked.push(k);
    }
    Ok(Marking {
        marked,
        converged: false,
    })
}

/// `‖β^{1/2}∇u‖` on `mesh` after `levels` uniform refinements.
pub fn exact_energy_norm(problem: &ProblemData, mesh: &QuadtreeMesh, levels: u32) -> Result<f64> {
    let mut m = mesh.clone();
    for _ in 0..levels {
        let leaves = m.leaves();
        m.refine(&leaves, None)?;
    }
    let topo = MeshTopology::build(&m);
    let zero = DiscreteSolution::zeros(m.num_nodes());
    energy_error(&zero, problem, &m, &topo)
}

/// Uniform refinements used for `exact_energy_norm` when the configuration
/// does not provide the norm.
pub const NORM_LEVELS: u32 = 7;

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

/// Everything computed in one iteration, handed to an observer before the
/// mesh is refined.
pub struct IterationState<'a> {
    pub mesh: &'a QuadtreeMesh,
    pub topology: &'a MeshTopology,
    pub solution: &'a DiscreteSolution,
    pub flux: &'a RecoveredFlux,
    pub indicators: &'a [ElementIndicators],
    pub record: &'a ConvergenceRecord,
}

/// Runs the adaptive loop from `mesh`.
pub fn run_afem(
    problem: &ProblemData,
    mesh: QuadtreeMesh,
    config: &AfemConfig,
) -> std::result::Result<AfemRun, AfemFailure> {
    run_afem_with(problem, mesh, config, |_| Ok(()))
}

/// `run_afem` calling `observe` once per iteration. The record it sees has
/// `n_marked` and `wall_ms` still unset.
pub fn run_afem_with(
    problem: &ProblemData,
    mesh: QuadtreeMesh,
    config: &AfemConfig,
    mut observe: impl FnMut(&IterationState) -> Result<()>,
) -> std::result::Result<AfemRun, AfemFailure> {
    let mut records = Vec::new();
    let fail = |records: &Vec<ConvergenceRecord>, error: Error| AfemFailure {
        records: records.clone(),
        error,
    };
    config.validate().map_err(|e| fail(&records, e))?;
    let energy_norm = match (config.energy_norm, &problem.exact) {
        (Some(n), _) => Some(n),
        (None, Some(_)) => {
            Some(exact_energy_norm(problem, &mesh, NORM_LEVELS).map_err(|e| fail(&records, e))?)
        }
        (None, None) => None,
    };
    let mut mesh = mesh;
    let mut eta0: Option<f64> = None;
    for iter in 0..config.max_iterations {
        let start = Instant::now();
        let mut step = || -> Result<(ConvergenceRecord, Vec<(CellId, f64)>)> {
            let topo = MeshTopology::build(&mesh);
            let system = assemble(&mesh, &topo, problem)?;
            let solution = solve_system(&mesh, &topo, problem, &system)?;
            let betas = problem.betas(&mesh, &topo)?;
            let flux = recover_flux(&mesh, &topo, &solution, &betas)?;
            let fa = audit(&mesh, &topo, &solution, &betas, &flux)?;
            let ind = estimate(&mesh, &topo, &solution, &flux, problem, &betas);
            let global = aggregate(&ind);
            let err = match problem.exact {
                Some(_) => Some(energy_error(&solution, problem, &mesh, &topo)?),
                None => None,
            };
            let eff = |eta: f64| err.and_then(|e| effectivity(eta, e).ok());
            let max_ratio = ind
                .iter()
                .filter_map(|i| i.efficiency_ratio())
                .fold(0.0, f64::max);
            let record = ConvergenceRecord {
                iter,
                ndof: solution.ndof_free,
                num_leaves: topo.num_leaves(),
                energy_error: err,
                eta_hat: global.eta_hat,
                eta_res: global.eta_res,
                osc: global.osc,
                eff_hat: eff(global.eta_hat),
                eff_res: eff(global.eta_res),
                n_marked: 0,
                max_irregularity: irregularity(&mesh),
                trace_mismatch: fa.trace_mismatch,
                divergence_defect: fa.divergence_defect,
                max_efficiency_ratio: max_ratio,
                reliability_constant: ratio(err, Some(global.eta_hat + global.osc)),
                solver_iterations: solution.iterations,
                wall_ms: 0.0,
            };
            observe(&IterationState {
                mesh: &mesh,
                topology: &topo,
                solution: &solution,
                flux: &flux,
                indicators: &ind,
                record: &record,
            })?;
            Ok((record, ind.iter().map(|i| (i.leaf, i.eta_hat())).collect()))
        };
        let (mut record, indicators) = step().map_err(|e| fail(&records, e))?;
        let eta0 = *eta0.get_or_insert(record.eta_hat);

        let relative = match energy_norm {
            Some(n) => record.relative_error(n),
            None => ratio(Some(record.eta_hat), Some(eta0)).or(Some(0.0)),
        };
        let stop = if relative.is_some_and(|r| r <= config.stop_relative_error) {
            Some(StopReason::Tolerance)
        } else if record.ndof >= config.max_dofs {
            Some(StopReason::MaxDofs)
        } else if iter + 1 == config.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(stop) = stop {
            record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            records.push(record);
            return Ok(AfemRun {
                records,
                stop,
                energy_norm,
                mesh,
            });
        }
        let marking = dorfler_mark(&indicators, config.theta).map_err(|e| fail(&records, e))?;
        if marking.converged {
            record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            records.push(record);
            return Ok(AfemRun {
                records,
                stop: StopReason::Exact,
                energy_norm,
                mesh,
            });
        }
        record.n_marked = marking.marked.len();
        mesh.refine(&marking.marked, config.cap)
            .map_err(|e| fail(&records, e))?;
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        records.push(record);
    }
    unreachable!("the last iteration always stops")
}

/// Quantities a rate can be fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateQuantity {
    EnergyError,
    EtaHat,
    EtaRes,
}

impl RateQuantity {
    pub fn of(self, r: &ConvergenceRecord) -> Option<f64> {
        match self {
            RateQuantity::EnergyError => r.energy_error,
            RateQuantity::EtaHat => Some(r.eta_hat),
            RateQuantity::EtaRes => Some(r.eta_res),
        }
    }
}

/// Points used by `fit_rate`: the second half of the records, at least 4.
pub fn rate_window(n: usize) -> usize {
    n.div_ceil(2).max(4).min(n)
}

/// Negated least-squares slope of `ln q` against `ln N` over the last
/// `rate_window` records.
pub fn fit_rate(records: &[ConvergenceRecord], quantity: RateQuantity) -> Result<f64> {
    if records.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} records, need at least 4",
            records.len()
        )));
    }
    let tail = &records[records.len() - rate_window(records.len())..];
    let mut pts = Vec::with_capacity(tail.len());
    for r in tail {
        let q = quantity.of(r).ok_or_else(|| {
            Error::InsufficientData(format!("{quantity:?} missing in iteration {}", r.iter))
        })?;
        if !(q > 0.0) || r.ndof == 0 {
            return Err(Error::InsufficientData(format!(
                "{quantity:?} not positive in iteration {}",
                r.iter
            )));
        }
        pts.push(((r.ndof as f64).ln(), q.ln()));
    }
    Ok(-least_squares_slope(&pts)?)
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Result<f64> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "all records share one DoF count".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Relative error at `ndof` free DoFs, interpolated linearly in log-log
/// scale between the records bracketing it. `None` outside their range.
pub fn relative_error_at(
    records: &[ConvergenceRecord],
    energy_norm: f64,
    ndof: usize,
) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some(((r.ndof as f64).ln(), (r.energy_error? / energy_norm).ln())))
        .collect();
    let x = (ndof as f64).ln();
    pts.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 <= x && x <= x1 && x1 > x0 {
            Some((y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp())
        } else if x == x0 {
            Some(y0.exp())
        } else {
            None
        }
    })
}
