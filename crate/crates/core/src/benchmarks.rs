//! Benchmark problems with known solutions: the L-shaped domain, a steep
//! circular wave front, the Kellogg interface problem and a smooth
//! manufactured solution.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::afem::exact_energy_norm;
use crate::error::{Error, Result};
use crate::fem::{ExactSolution, Point, ProblemData, Singularity};
use crate::mesh::QuadtreeMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    LShape,
    Wavefront,
    Kellogg,
    Manufactured,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::LShape,
        Benchmark::Wavefront,
        Benchmark::Kellogg,
        Benchmark::Manufactured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::LShape => "lshape",
            Benchmark::Wavefront => "wavefront",
            Benchmark::Kellogg => "kellogg",
            Benchmark::Manufactured => "manufactured",
        }
    }

    pub fn stop_relative_error(self) -> f64 {
        match self {
            Benchmark::LShape => 0.01,
            _ => 0.05,
        }
    }

    /// Root boxes before the initial uniform refinement.
    pub fn domain(self) -> QuadtreeMesh {
        match self {
            Benchmark::LShape => QuadtreeMesh::lshape(),
            Benchmark::Kellogg => QuadtreeMesh::square_2x2_centered(),
            Benchmark::Wavefront | Benchmark::Manufactured => QuadtreeMesh::unit_square(),
        }
    }

    pub fn initial_refinements(self) -> u32 {
        match self {
            Benchmark::LShape | Benchmark::Kellogg => 1,
            Benchmark::Wavefront | Benchmark::Manufactured => 2,
        }
    }

    /// Starting mesh of the adaptive loop.
    pub fn initial_mesh(self) -> QuadtreeMesh {
        let mut m = self.domain();
        for _ in 0..self.initial_refinements() {
            let leaves = m.leaves();
            m.refine(&leaves, None)
                .expect("uniform refinement of a root mesh");
        }
        m
    }

    pub fn singularity(self) -> Option<Singularity> {
        match self {
            Benchmark::LShape => Some(Singularity {
                point: [0.0, 0.0],
                degree: 2.0 / 3.0,
            }),
            Benchmark::Kellogg => Some(Singularity {
                point: [0.0, 0.0],
                degree: KelloggParams::default().gamma,
            }),
            _ => None,
        }
    }

    pub fn beta(self, p: Point) -> f64 {
        match self {
            Benchmark::Kellogg => KelloggParams::default().beta(p),
            _ => 1.0,
        }
    }

    pub fn exact_u(self, p: Point) -> f64 {
        match self {
            Benchmark::LShape => {
                let (r, t) = polar(p);
                r.powf(2.0 / 3.0) * (2.0 * t / 3.0).sin()
            }
            Benchmark::Wavefront => {
                let w = Wavefront::default();
                (w.alpha * (w.radius(p) - w.r0)).atan()
            }
            Benchmark::Kellogg => {
                let k = KelloggParams::default();
                let (r, t) = polar(p);
                r.powf(k.gamma) * k.mu(t)
            }
            Benchmark::Manufactured => (PI * p[0]).sin() * (PI * p[1]).sin(),
        }
    }

    /// `∇u`; undefined at the singular point.
    pub fn exact_grad(self, p: Point) -> Result<[f64; 2]> {
        if let Some(s) = self.singularity() {
            if p == s.point {
                return Err(Error::SingularPoint(p[0], p[1]));
            }
        }
        Ok(match self {
            Benchmark::LShape => {
                let (r, t) = polar(p);
                let l = 2.0 / 3.0;
                let a = l * r.powf(l - 1.0);
                [a * ((l - 1.0) * t).sin(), a * ((l - 1.0) * t).cos()]
            }
            Benchmark::Wavefront => {
                let w = Wavefront::default();
                let r = w.radius(p);
                let t = w.alpha * (r - w.r0);
                let d = w.alpha / (1.0 + t * t) / r;
                [d * (p[0] - w.center[0]), d * (p[1] - w.center[1])]
            }
            Benchmark::Kellogg => {
                let k = KelloggParams::default();
                let (r, t) = polar(p);
                let rg = r.powf(k.gamma - 1.0);
                let (ur, ut) = (k.gamma * rg * k.mu(t), rg * k.mu_prime(t));
                let (c, s) = (t.cos(), t.sin());
                [ur * c - ut * s, ur * s + ut * c]
            }
            Benchmark::Manufactured => {
                let (sx, cx) = (PI * p[0]).sin_cos();
                let (sy, cy) = (PI * p[1]).sin_cos();
                [PI * cx * sy, PI * sx * cy]
            }
        })
    }

    /// `f = −div(β∇u)`.
    pub fn source(self, p: Point) -> f64 {
        match self {
            Benchmark::LShape | Benchmark::Kellogg => 0.0,
            Benchmark::Wavefront => {
                let w = Wavefront::default();
                let r = w.radius(p);
                let t = w.alpha * (r - w.r0);
                let q = 1.0 + t * t;
                2.0 * w.alpha * w.alpha * t / (q * q) - w.alpha / (r * q)
            }
            Benchmark::Manufactured => 2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin(),
        }
    }

    pub fn problem(self) -> ProblemData {
        let grad = move |p: Point| self.exact_grad(p).unwrap_or([f64::NAN; 2]);
        ProblemData::with_exact(
            Arc::new(move |p| self.beta(p)),
            Arc::new(move |p| self.source(p)),
            ExactSolution {
                u: Arc::new(move |p| self.exact_u(p)),
                grad: Arc::new(grad),
                singularity: self.singularity(),
            },
        )
    }

    /// Uniform refinements of `domain()` used to integrate the exact energy.
    pub fn norm_levels(self) -> u32 {
        match self {
            Benchmark::Wavefront => 8,
            _ => 7,
        }
    }

    /// `‖β^{1/2}∇u‖` over the domain, computed once per process.
    pub fn energy_norm(self) -> Result<f64> {
        static CACHE: [OnceLock<std::result::Result<f64, Error>>; 4] = [
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
        ];
        let slot = &CACHE[self as usize];
        slot.get_or_init(|| {
            if self == Benchmark::Manufactured {
                return Ok(PI / 2f64.sqrt());
            }
            exact_energy_norm(&self.problem(), &self.domain(), self.norm_levels())
        })
        .clone()
    }

    /// Lines (as `(axis, value)`, axis 0 for `x = value`) across which `β`
    /// jumps.
    pub fn interfaces(self) -> &'static [(usize, f64)] {
        match self {
            Benchmark::Kellogg => &[(0, 0.0), (1, 0.0)],
            _ => &[],
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown benchmark '{s}' (expected lshape, wavefront, kellogg or manufactured)"
                ))
            })
    }
}

/// Radius and angle with the angle in `[0, 2π)`.
pub fn polar(p: Point) -> (f64, f64) {
    let r = p[0].hypot(p[1]);
    let mut t = p[1].atan2(p[0]);
    if t < 0.0 {
        t += 2.0 * PI;
    }
    (r, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavefront {
    pub center: Point,
    pub alpha: f64,
    pub r0: f64,
}

impl Default for Wavefront {
    fn default() -> Self {
        Wavefront {
            center: [-0.05, -0.05],
            alpha: 100.0,
            r0: 0.7,
        }
    }
}

impl Wavefront {
    pub fn radius(&self, p: Point) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }
}

/// `u = r^γ μ(θ)`, harmonic in each quadrant, with `β = R` in the first and
/// third quadrants and `β = 1` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KelloggParams {
    pub gamma: f64,
    pub r: f64,
    pub rho: f64,
    pub delta: f64,
}

impl Default for KelloggParams {
    fn default() -> Self {
        KelloggParams {
            gamma: 0.1,
            r: 161.4476387975881,
            rho: PI / 4.0,
            delta: -14.92256510455152,
        }
    }
}

impl KelloggParams {
    pub fn beta(&self, p: Point) -> f64 {
        if (p[0] > 0.0 && p[1] > 0.0) || (p[0] < 0.0 && p[1] < 0.0) {
            self.r
        } else {
            1.0
        }
    }

    /// `(amplitude, phase)` of the branch `μ = a cos((θ − phase) γ)` on the
    /// quadrant holding `θ`.
    fn branch(&self, quadrant: usize) -> (f64, f64) {
        let (g, rho, s) = (self.gamma, self.rho, self.delta);
        match quadrant {
            0 => (((PI / 2.0 - s) * g).cos(), PI / 2.0 - rho),
            1 => ((rho * g).cos(), PI - s),
            2 => ((s * g).cos(), PI + rho),
            _ => (((PI / 2.0 - rho) * g).cos(), 3.0 * PI / 2.0 + s),
        }
    }

    /// Evaluates the branch of quadrant `q` at `θ`, which may lie outside
    /// that quadrant.
    pub fn mu_branch(&self, q: usize, theta: f64) -> f64 {
        let (a, ph) = self.branch(q);
        a * ((theta - ph) * self.gamma).cos()
    }

    fn quadrant(theta: f64) -> usize {
        ((theta / (PI / 2.0)).floor() as usize).min(3)
    }

    pub fn mu(&self, theta: f64) -> f64 {
        self.mu_branch(Self::quadrant(theta), theta)
    }

    pub fn mu_prime(&self, theta: f64) -> f64 {
        let (a, ph) = self.branch(Self::quadrant(theta));
        -a * self.gamma * ((theta - ph) * self.gamma).sin()
    }

    /// `β μ'` of the branch of quadrant `q` at `θ`; the normal flux across
    /// the ray at angle `θ` up to the factor `r^{γ-1}`.
    pub fn flux_branch(&self, q: usize, theta: f64) -> f64 {
        let (a, ph) = self.branch(q);
        let beta = if q.is_multiple_of(2) { self.r } else { 1.0 };
        -beta * a * self.gamma * ((theta - ph) * self.gamma).sin()
    }

    /// Largest jump of `μ` and of `β μ'` between adjacent branches at the
    /// four quadrant boundaries.
    pub fn continuity_defect(&self) -> (f64, f64) {
        let mut du = 0.0f64;
        let mut df = 0.0f64;
        for q in 0..4 {
            let t = (q + 1) as f64 * PI / 2.0;
            let next = (q + 1) % 4;
            let tn = if next == 0 { 0.0 } else { t };
            du = du.max((self.mu_branch(q, t) - self.mu_branch(next, tn)).abs());
            df = df.max((self.flux_branch(q, t) - self.flux_branch(next, tn)).abs());
        }
        (du, df)
    }
}

/// Halton point `i` in bases 2 and 3, in `[0,1)²`.
pub fn halton(i: usize) -> [f64; 2] {
    let radical = |mut n: usize, b: usize| {
        let mut f = 1.0;
        let mut r = 0.0;
        while n > 0 {
            f /= b as f64;
            r += f * (n % b) as f64;
            n /= b;
        }
        r
    };
    [radical(i, 2), radical(i, 3)]
}

/// Finite-difference check of `−div(β∇u) = f` and of the exact gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeAudit {
    pub points: usize,
    /// Largest `|Δ_h u + f/β| / scale`.
    pub max_pde_residual: f64,
    /// Largest relative difference between the difference quotient of `u`
    /// and the exact gradient.
    pub max_gradient_defect: f64,
}

impl PdeAudit {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_pde_residual <= tol && self.max_gradient_defect <= tol
    }
}

/// Audits the exact data at `n` quasi-random interior points, skipping
/// points within `exclusion` of the singular point, of an interface or of
/// the boundary.
pub fn audit_exact_solution(b: Benchmark, n: usize, exclusion: f64) -> PdeAudit {
    let mesh = b.domain();
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    let boxes: Vec<[f64; 2]> = mesh.roots().iter().map(|&r| mesh.cell_origin(r)).collect();
    for o in &boxes {
        for a in 0..2 {
            lo[a] = lo[a].min(o[a]);
            hi[a] = hi[a].max(o[a] + 1.0);
        }
    }
    // Distance to the boundary of the union of unit root boxes.
    let inside = |p: Point, d: f64| {
        let probes = [
            [p[0] - d, p[1] - d],
            [p[0] + d, p[1] - d],
            [p[0] + d, p[1] + d],
            [p[0] - d, p[1] + d],
            p,
        ];
        probes.iter().all(|q| {
            boxes
                .iter()
                .any(|o| q[0] > o[0] && q[0] < o[0] + 1.0 && q[1] > o[1] && q[1] < o[1] + 1.0)
        })
    };
    let mut worst_pde = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut used = 0;
    let mut i = 1;
    while used < n {
        let s = halton(i);
        i += 1;
        let p = [
            lo[0] + s[0] * (hi[0] - lo[0]),
            lo[1] + s[1] * (hi[1] - lo[1]),
        ];
        let mut dist = f64::INFINITY;
        if let Some(sg) = b.singularity() {
            dist = dist.min((p[0] - sg.point[0]).hypot(p[1] - sg.point[1]));
        }
        for &(axis, v) in b.interfaces() {
            dist = dist.min((p[axis] - v).abs());
        }
        if dist < exclusion || !inside(p, exclusion) {
            continue;
        }
        used += 1;
        // Fourth-order differences with a step small against the distance
        // to the nearest singular feature.
        let h = 1e-4f64.min(0.01 * dist);
        let u = |q: Point| b.exact_u(q);
        let mut lap = 0.0;
        let mut grad = [0.0; 2];
        for a in 0..2 {
            let at = |k: f64| {
                let mut q = p;
                q[a] += k * h;
                u(q)
            };
            lap += (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0))
                / (12.0 * h * h);
            grad[a] = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
        }
        let beta = b.beta(p);
        let f = b.source(p);
        let ue = u(p);
        let d2 = if dist.is_finite() { dist * dist } else { 1.0 };
        let scale = 1f64.max((f / beta).abs()).max(ue.abs() / d2);
        worst_pde = worst_pde.max((lap + f / beta).abs() / scale);
        let g = b.exact_grad(p).expect("sample avoids the singular point");
        let gs = 1f64.max(g[0].hypot(g[1]));
        worst_grad = worst_grad.max((grad[0] - g[0]).hypot(grad[1] - g[1]) / gs);
    }
    PdeAudit {
        points: used,
        max_pde_residual: worst_pde,
        max_gradient_defect: worst_grad,
    }
}
