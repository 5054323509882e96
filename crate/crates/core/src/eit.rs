//! Linearized electrical impedance tomography on the unit square.
//!
//! Background potentials solve `∇·(σ*∇ρ) = 0` with Dirichlet data given by a
//! discrete delta at one boundary node, discretized with bilinear elements.
//! The linearized data satisfy `∫ ∇ρ1·∇ρ2 σ dx = data`, and with a cellwise
//! constant `σ` and a gradient quadrature rule the system matrix is a sum of
//! Khatri-Rao products of gradient banks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{residual_sq_full, solve_ls, DEFAULT_RCOND};
use crate::rng::{gaussian_vector, stream, stream_rng, trial_seed};
use crate::sketch::{Rhs, Sketch, SketchRows, Strategy};
use crate::synthbench::{sketched_trial, SweepRecord};
use crate::tensor_core::{KhatriRaoOperator, DEFAULT_MATERIALIZE_CAP};

pub const DEFAULT_NX: usize = 20;
pub const DEFAULT_SIGMA_STAR: f64 = 10.0;
pub const DEFAULT_NOISE_SD: f64 = 1e-8;
/// Sketch sizes `26², 38², 50², 62², 74²`.
pub const EIT_R_GRID: [usize; 5] = [676, 1444, 2500, 3844, 5476];

/// Uniform mesh of `nx × nx` square cells on `[0, 1]²`.
///
/// Node `(i, j)` sits at `(i/nx, j/nx)` with index `i + (nx+1)·j`; cell
/// `(ci, cj)` has index `ci + nx·cj`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh2D {
    nx: usize,
    boundary: Vec<usize>,
}

impl Mesh2D {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 2 {
            return Err(Error::InvalidArgument(format!("mesh needs nx ≥ 2 cells per side, got {nx}")));
        }
        let m = nx + 1;
        let mut boundary = Vec::with_capacity(4 * nx);
        // counterclockwise from the origin
        boundary.extend((0..nx).map(|i| i));
        boundary.extend((0..nx).map(|j| nx + m * j));
        boundary.extend((1..=nx).rev().map(|i| i + m * nx));
        boundary.extend((1..=nx).rev().map(|j| m * j));
        Ok(Self { nx, boundary })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.nx + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.nx
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let m = self.nx + 1;
        ((node % m) as f64 * self.h(), (node / m) as f64 * self.h())
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (ci, cj) = (cell % self.nx, cell / self.nx);
        ((ci as f64 + 0.5) * self.h(), (cj as f64 + 0.5) * self.h())
    }

    /// Corner nodes of a cell, counterclockwise from the lower left.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (ci, cj) = (cell % self.nx, cell / self.nx);
        [
            self.node_index(ci, cj),
            self.node_index(ci + 1, cj),
            self.node_index(ci + 1, cj + 1),
            self.node_index(ci, cj + 1),
        ]
    }

    /// Boundary nodes, counterclockwise starting at `(0, 0)`.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let m = self.nx + 1;
        let (i, j) = (node % m, node / m);
        i == 0 || j == 0 || i == self.nx || j == self.nx
    }

    pub fn is_corner(&self, node: usize) -> bool {
        let m = self.nx + 1;
        let (i, j) = (node % m, node / m);
        (i == 0 || i == self.nx) && (j == 0 || j == self.nx)
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| !self.is_boundary(n)).collect()
    }
}

pub fn build_mesh(nx: usize) -> Result<Mesh2D> {
    Mesh2D::new(nx)
}

/// Bilinear element stiffness for unit conductivity on a square cell, in
/// the counterclockwise node order of [`Mesh2D::cell_nodes`].
const Q1_STIFFNESS: [[f64; 4]; 4] = [
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
];

/// Global stiffness matrix for constant conductivity `sigma`.
pub fn stiffness(mesh: &Mesh2D, sigma: f64) -> DMatrix<f64> {
    let n = mesh.n_nodes();
    let mut k = DMatrix::zeros(n, n);
    for cell in 0..mesh.n_cells() {
        let nodes = mesh.cell_nodes(cell);
        for (a, &na) in nodes.iter().enumerate() {
            for (b, &nb) in nodes.iter().enumerate() {
                k[(na, nb)] += sigma / 6.0 * Q1_STIFFNESS[a][b];
            }
        }
    }
    k
}

/// Dirichlet solver with the interior block factored once.
#[derive(Clone, Debug)]
pub struct BackgroundSolver {
    mesh: Mesh2D,
    sigma_star: f64,
    interior: Vec<usize>,
    /// Position of each node within `interior`, or `None` on the boundary.
    interior_pos: Vec<Option<usize>>,
    k_full: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl BackgroundSolver {
    pub fn new(mesh: &Mesh2D, sigma_star: f64) -> Result<Self> {
        if !(sigma_star > 0.0 && sigma_star.is_finite()) {
            return Err(Error::InvalidArgument(format!("background conductivity must be positive, got {sigma_star}")));
        }
        let k_full = stiffness(mesh, sigma_star);
        let interior = mesh.interior_nodes();
        let mut interior_pos = vec![None; mesh.n_nodes()];
        for (pos, &n) in interior.iter().enumerate() {
            interior_pos[n] = Some(pos);
        }
        let k_ii = DMatrix::from_fn(interior.len(), interior.len(), |a, b| k_full[(interior[a], interior[b])]);
        let chol = nalgebra::Cholesky::new(k_ii)
            .ok_or_else(|| Error::Numerical("interior stiffness matrix is not positive definite".into()))?;
        Ok(Self {
            mesh: mesh.clone(),
            sigma_star,
            interior,
            interior_pos,
            k_full,
            chol,
        })
    }

    pub fn sigma_star(&self) -> f64 {
        self.sigma_star
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.k_full
    }

    /// Solves for several Dirichlet data sets at once. `boundary_values` has
    /// one row per boundary node (in [`Mesh2D::boundary_nodes`] order) and
    /// one column per data set; the result has one row per mesh node.
    pub fn solve_many(&self, boundary_values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let bnodes = self.mesh.boundary_nodes();
        crate::error::check_dim("boundary data rows", bnodes.len(), boundary_values.nrows())?;
        let ncols = boundary_values.ncols();
        let mut load = DMatrix::zeros(self.interior.len(), ncols);
        for (bi, &bn) in bnodes.iter().enumerate() {
            for (a, &inode) in self.interior.iter().enumerate() {
                let kab = self.k_full[(inode, bn)];
                if kab != 0.0 {
                    for c in 0..ncols {
                        load[(a, c)] -= kab * boundary_values[(bi, c)];
                    }
                }
            }
        }
        let u_int = self.chol.solve(&load);
        let mut out = DMatrix::zeros(self.mesh.n_nodes(), ncols);
        for (bi, &bn) in bnodes.iter().enumerate() {
            out.row_mut(bn).copy_from(&boundary_values.row(bi));
        }
        for node in 0..self.mesh.n_nodes() {
            if let Some(pos) = self.interior_pos[node] {
                out.row_mut(node).copy_from(&u_int.row(pos));
            }
        }
        Ok(out)
    }

    /// Nodal solution for a single set of boundary values.
    pub fn solve(&self, boundary_values: &[f64]) -> Result<DVector<f64>> {
        let data = DMatrix::from_column_slice(boundary_values.len(), 1, boundary_values);
        Ok(self.solve_many(&data)?.column(0).into_owned())
    }

    /// `‖K_II u_I + K_IB u_B‖` and the norm of the load `K_IB u_B`.
    pub fn interior_residual(&self, u: &DVector<f64>) -> (f64, f64) {
        let (mut res, mut load) = (0.0f64, 0.0f64);
        for &a in &self.interior {
            let (mut r, mut l) = (0.0, 0.0);
            for n in 0..self.mesh.n_nodes() {
                let v = self.k_full[(a, n)] * u[n];
                r += v;
                if self.interior_pos[n].is_none() {
                    l += v;
                }
            }
            res += r * r;
            load += l * l;
        }
        (res.sqrt(), load.sqrt())
    }
}

pub fn solve_background(mesh: &Mesh2D, sigma_star: f64, boundary_values: &[f64]) -> Result<DVector<f64>> {
    BackgroundSolver::new(mesh, sigma_star)?.solve(boundary_values)
}

/// Which boundary nodes carry a source (and a measurement).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceSet {
    AllBoundary,
    ExcludeCorners,
    /// Positions into [`Mesh2D::boundary_nodes`].
    Subset(Vec<usize>),
}

impl SourceSet {
    /// Positions into the boundary node list.
    pub fn positions(&self, mesh: &Mesh2D) -> Result<Vec<usize>> {
        let nb = mesh.boundary_nodes().len();
        let pos: Vec<usize> = match self {
            SourceSet::AllBoundary => (0..nb).collect(),
            SourceSet::ExcludeCorners => (0..nb).filter(|&b| !mesh.is_corner(mesh.boundary_nodes()[b])).collect(),
            SourceSet::Subset(v) => v.clone(),
        };
        if pos.is_empty() {
            return Err(Error::InvalidArgument("source set is empty".into()));
        }
        if let Some(&bad) = pos.iter().find(|&&b| b >= nb) {
            return Err(Error::InvalidArgument(format!("source position {bad} out of range for {nb} boundary nodes")));
        }
        Ok(pos)
    }
}

/// Nodal solutions, one column per source.
pub fn forward_bank(solver: &BackgroundSolver, sources: &[usize], scale: f64) -> Result<DMatrix<f64>> {
    let nb = solver.mesh.boundary_nodes().len();
    if sources.is_empty() {
        return Err(Error::InvalidArgument("forward bank needs at least one source".into()));
    }
    if let Some(&bad) = sources.iter().find(|&&b| b >= nb) {
        return Err(Error::InvalidArgument(format!("source position {bad} out of range for {nb} boundary nodes")));
    }
    let chunk = sources.len().div_ceil(rayon::current_num_threads().max(1));
    let blocks: Vec<DMatrix<f64>> = sources
        .par_chunks(chunk.max(1))
        .map(|srcs| {
            let mut data = DMatrix::zeros(nb, srcs.len());
            for (c, &s) in srcs.iter().enumerate() {
                data[(s, c)] = scale;
            }
            solver.solve_many(&data)
        })
        .collect::<Result<_>>()?;
    let mut bank = DMatrix::zeros(solver.mesh.n_nodes(), sources.len());
    let mut col = 0;
    for b in blocks {
        bank.columns_mut(col, b.ncols()).copy_from(&b);
        col += b.ncols();
    }
    Ok(bank)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Cell-center gradients, two Khatri-Rao terms.
    #[default]
    OnePoint,
    /// 2×2 Gauss points, eight Khatri-Rao terms.
    FourPoint,
}

impl Quadrature {
    /// Points in local cell coordinates `[0, 1]²` and weights summing to 1.
    pub fn points(self) -> Vec<(f64, f64, f64)> {
        match self {
            Quadrature::OnePoint => vec![(0.5, 0.5, 1.0)],
            Quadrature::FourPoint => {
                let d = 0.5 / 3f64.sqrt();
                let g = [0.5 - d, 0.5 + d];
                g.iter()
                    .flat_map(|&eta| g.iter().map(move |&xi| (xi, eta, 0.25)))
                    .collect()
            }
        }
    }
}

impl std::str::FromStr for Quadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-point" | "one_point" => Ok(Quadrature::OnePoint),
            "four-point" | "four_point" => Ok(Quadrature::FourPoint),
            _ => Err(Error::InvalidArgument(format!("unknown quadrature `{s}`"))),
        }
    }
}

/// Gradient of a bilinear cell function at local point `(xi, eta)`, given
/// nodal values in counterclockwise order.
fn cell_gradient(u: [f64; 4], xi: f64, eta: f64, h: f64) -> (f64, f64) {
    let gx = ((u[1] - u[0]) * (1.0 - eta) + (u[2] - u[3]) * eta) / h;
    let gy = ((u[3] - u[0]) * (1.0 - xi) + (u[2] - u[1]) * xi) / h;
    (gx, gy)
}

/// Gradient banks at one quadrature point: `(∂x, ∂y)`, each `n_src × n_cells`.
fn gradient_banks(mesh: &Mesh2D, bank: &DMatrix<f64>, xi: f64, eta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (ns, p, h) = (bank.ncols(), mesh.n_cells(), mesh.h());
    let mut gx = DMatrix::zeros(ns, p);
    let mut gy = DMatrix::zeros(ns, p);
    for k in 0..p {
        let nodes = mesh.cell_nodes(k);
        for s in 0..ns {
            let u = nodes.map(|n| bank[(n, s)]);
            let (a, b) = cell_gradient(u, xi, eta, h);
            gx[(s, k)] = a;
            gy[(s, k)] = b;
        }
    }
    (gx, gy)
}

/// The linearized operator: entry `((i1, i2), k)` approximates
/// `∫_cell_k ∇ρ^(i1)·∇ρ^(i2) dx`. The quadrature weight sits on the left factor.
pub fn assemble_system(mesh: &Mesh2D, bank: &DMatrix<f64>, quadrature: Quadrature) -> Result<KhatriRaoOperator<f64>> {
    if bank.ncols() == 0 {
        return Err(Error::InvalidArgument("bank must hold at least one solution".into()));
    }
    crate::error::check_dim("bank rows", mesh.n_nodes(), bank.nrows())?;
    let area = mesh.cell_area();
    let mut terms = Vec::new();
    for (xi, eta, w) in quadrature.points() {
        let (gx, gy) = gradient_banks(mesh, bank, xi, eta);
        terms.push((&gx * (w * area), gx));
        terms.push((&gy * (w * area), gy));
    }
    KhatriRaoOperator::new(terms)
}

/// Axis-aligned square `[x0, x0+side] × [y0, y0+side]` with constant amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    pub amplitude: f64,
}

impl Inclusion {
    fn validate(&self) -> Result<()> {
        let tol = 1e-12;
        let ok = self.side > 0.0
            && self.x0 >= -tol
            && self.y0 >= -tol
            && self.x0 + self.side <= 1.0 + tol
            && self.y0 + self.side <= 1.0 + tol
            && self.amplitude.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inclusion {self:?} is not a square inside [0, 1]²")))
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x0 + self.side && y >= self.y0 && y <= self.y0 + self.side
    }
}

/// Two squares of side 0.2 and amplitude 1 at the top-left and bottom-right corners.
pub fn default_inclusions() -> Vec<Inclusion> {
    vec![
        Inclusion { x0: 0.0, y0: 0.8, side: 0.2, amplitude: 1.0 },
        Inclusion { x0: 0.8, y0: 0.0, side: 0.2, amplitude: 1.0 },
    ]
}

/// Cellwise constant perturbation `σ` on top of the background `σ*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductivityField {
    pub nx: usize,
    pub sigma_star: f64,
    /// Perturbation per cell, index `ci + nx·cj`.
    pub values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(nx: usize, sigma_star: f64, values: Vec<f64>) -> Result<Self> {
        crate::error::check_dim("conductivity cells", nx * nx, values.len())?;
        if !(sigma_star > 0.0) {
            return Err(Error::InvalidArgument(format!("background conductivity must be positive, got {sigma_star}")));
        }
        Ok(Self { nx, sigma_star, values })
    }

    /// Sum of inclusion amplitudes at each cell center; overlaps add up.
    pub fn from_inclusions(mesh: &Mesh2D, sigma_star: f64, inclusions: &[Inclusion]) -> Result<Self> {
        for inc in inclusions {
            inc.validate()?;
        }
        let values = (0..mesh.n_cells())
            .map(|k| {
                let (x, y) = mesh.cell_center(k);
                inclusions.iter().filter(|i| i.contains(x, y)).map(|i| i.amplitude).sum()
            })
            .collect();
        Self::new(mesh.nx(), sigma_star, values)
    }

    pub fn get(&self, ci: usize, cj: usize) -> f64 {
        self.values[ci + self.nx * cj]
    }
}

/// Settings for building an EIT problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EitConfig {
    pub nx: usize,
    pub sigma_star: f64,
    pub inclusions: Vec<Inclusion>,
    pub noise_sd: f64,
    pub quadrature: Quadrature,
    pub sources: SourceSet,
    /// Value of the discrete delta at its boundary node.
    pub source_scale: f64,
}

impl Default for EitConfig {
    fn default() -> Self {
        Self {
            nx: DEFAULT_NX,
            sigma_star: DEFAULT_SIGMA_STAR,
            inclusions: default_inclusions(),
            noise_sd: DEFAULT_NOISE_SD,
            quadrature: Quadrature::OnePoint,
            sources: SourceSet::AllBoundary,
            source_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EitSystem {
    pub mesh: Mesh2D,
    pub op: KhatriRaoOperator<f64>,
    pub data: DVector<f64>,
    pub sigma_true: ConductivityField,
    pub noise_sd: f64,
    /// Boundary positions of the sources.
    pub sources: Vec<usize>,
}

impl EitSystem {
    pub fn rhs(&self) -> Rhs<f64> {
        Rhs::Dense(self.data.clone())
    }
}

pub fn make_eit_problem(cfg: &EitConfig, seed: u64) -> Result<EitSystem> {
    if !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {}", cfg.noise_sd)));
    }
    if !(cfg.source_scale != 0.0 && cfg.source_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("source scale must be nonzero, got {}", cfg.source_scale)));
    }
    let mesh = Mesh2D::new(cfg.nx)?;
    let sigma_true = ConductivityField::from_inclusions(&mesh, cfg.sigma_star, &cfg.inclusions)?;
    let solver = BackgroundSolver::new(&mesh, cfg.sigma_star)?;
    let sources = cfg.sources.positions(&mesh)?;
    let bank = forward_bank(&solver, &sources, cfg.source_scale)?;
    let op = assemble_system(&mesh, &bank, cfg.quadrature)?;
    let mut data = op.apply(&sigma_true.values)?;
    if cfg.noise_sd > 0.0 {
        data += gaussian_vector::<f64, _>(&mut stream_rng(seed, stream::NOISE), data.len()) * cfg.noise_sd;
    }
    Ok(EitSystem {
        mesh,
        op,
        data,
        sigma_true,
        noise_sd: cfg.noise_sd,
        sources,
    })
}

/// Full least-squares solution of an EIT system.
#[derive(Clone, Debug)]
pub struct EitBaseline {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub rank_used: usize,
}

pub fn full_baseline(system: &EitSystem, rcond: f64) -> Result<EitBaseline> {
    let a = system.op.materialize(DEFAULT_MATERIALIZE_CAP)?;
    let sol = solve_ls(&a, &system.data, rcond)?;
    let f_star = residual_sq_full(&system.op, &sol.x, &system.rhs())?;
    Ok(EitBaseline {
        x_star: sol.x,
        f_star,
        rank_used: sol.rank_used,
    })
}

/// A sweep record with the EIT configuration attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EitRecord {
    pub strategy: Strategy,
    pub r: usize,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub n1: usize,
    pub n2: usize,
    pub p: usize,
    pub trial: usize,
    pub rel_error: f64,
    pub wall_time_ms: f64,
    pub nx: usize,
    pub sigma_star: f64,
    pub noise_sd: f64,
}

pub const EIT_CSV_HEADER: &str = "strategy,r,r1,r2,n1,n2,p,trial,rel_error,wall_time_ms,nx,sigma_star,noise_sd";

impl EitRecord {
    pub fn from_sweep(rec: SweepRecord, system: &EitSystem) -> Self {
        Self {
            strategy: rec.strategy,
            r: rec.r,
            r1: rec.r1,
            r2: rec.r2,
            n1: rec.n1,
            n2: rec.n2,
            p: rec.p,
            trial: rec.trial,
            rel_error: rec.rel_error,
            wall_time_ms: rec.wall_time_ms,
            nx: system.mesh.nx(),
            sigma_star: system.sigma_true.sigma_star,
            noise_sd: system.noise_sd,
        }
    }

    pub fn to_sweep(&self) -> SweepRecord {
        SweepRecord {
            strategy: self.strategy,
            r: self.r,
            r1: self.r1,
            r2: self.r2,
            n1: self.n1,
            n2: self.n2,
            p: self.p,
            trial: self.trial,
            rel_error: self.rel_error,
            wall_time_ms: self.wall_time_ms,
        }
    }
}

/// Sketched reconstruction with a given sketch; `strategy` labels the record.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_with(
    system: &EitSystem,
    baseline: &EitBaseline,
    sketch: &Sketch<f64>,
    strategy: Strategy,
    r_label: usize,
    trial: usize,
    rcond: f64,
    record_timing: bool,
) -> Result<(ConductivityField, SweepRecord)> {
    let out = sketched_trial(
        &system.op,
        &system.rhs(),
        baseline.f_star,
        sketch,
        strategy,
        r_label,
        trial,
        rcond,
        record_timing,
    )?;
    let field = ConductivityField::new(system.mesh.nx(), system.sigma_true.sigma_star, out.x_s.iter().cloned().collect())?;
    Ok((field, out.record))
}

/// Draws a sketch of the given strategy and reconstructs.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    system: &EitSystem,
    baseline: &EitBaseline,
    strategy: Strategy,
    rows: SketchRows,
    trial: usize,
    seed: u64,
    rcond: f64,
    record_timing: bool,
) -> Result<(ConductivityField, EitRecord)> {
    let p = system.op.ncols();
    if rows.total() < p {
        return Err(Error::InvalidArgument(format!(
            "sketch rows r = {} below the number of unknowns p = {p}",
            rows.total()
        )));
    }
    let sketch = Sketch::generate(strategy, rows, system.op.n1(), system.op.n2(), seed)?;
    let (field, rec) = reconstruct_with(system, baseline, &sketch, strategy, rows.total(), trial, rcond, record_timing)?;
    Ok((field, EitRecord::from_sweep(rec, system)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EitSweepConfig {
    pub problem: EitConfig,
    pub strategies: Vec<Strategy>,
    pub r_grid: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub rcond: f64,
    pub record_timing: bool,
}

impl Default for EitSweepConfig {
    fn default() -> Self {
        Self {
            problem: EitConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            r_grid: EIT_R_GRID.to_vec(),
            trials: crate::synthbench::DEFAULT_TRIALS,
            master_seed: 0,
            rcond: DEFAULT_RCOND,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EitSweepOutput {
    pub system: EitSystem,
    pub baseline: EitBaseline,
    /// Ordered by strategy, then `r`, then trial.
    pub records: Vec<EitRecord>,
    /// Trial-0 reconstruction at the largest grid value, per strategy.
    pub reconstructions: Vec<(Strategy, ConductivityField)>,
}

pub fn eit_sweep(cfg: &EitSweepConfig) -> Result<EitSweepOutput> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trial count must be at least 1".into()));
    }
    if cfg.strategies.is_empty() || cfg.r_grid.is_empty() {
        return Err(Error::InvalidArgument("strategies and r grid must be nonempty".into()));
    }
    let system = make_eit_problem(&cfg.problem, cfg.master_seed)?;
    let baseline = full_baseline(&system, cfg.rcond)?;
    let r_final = *cfg.r_grid.iter().max().expect("grid is nonempty");
    let jobs: Vec<(Strategy, usize, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.r_grid.iter().flat_map(move |&r| (0..cfg.trials).map(move |t| (s, r, t))))
        .collect();
    let results: Vec<(EitRecord, Option<ConductivityField>)> = jobs
        .par_iter()
        .map(|&(strategy, r, t)| {
            let (field, rec) = reconstruct(
                &system,
                &baseline,
                strategy,
                SketchRows::Total(r),
                t,
                trial_seed(cfg.master_seed, t),
                cfg.rcond,
                cfg.record_timing,
            )?;
            if t + 1 == cfg.trials {
                log::info!("eit {strategy} r={r} done");
            }
            let keep = (r == r_final && t == 0).then_some(field);
            Ok((rec, keep))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(results.len());
    let mut reconstructions = Vec::new();
    for (rec, field) in results {
        if let Some(f) = field {
            if !reconstructions.iter().any(|(s, _)| *s == rec.strategy) {
                reconstructions.push((rec.strategy, f));
            }
        }
        records.push(rec);
    }
    Ok(EitSweepOutput {
        system,
        baseline,
        records,
        reconstructions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_counts() {
        let m = Mesh2D::new(20).unwrap();
        assert_eq!((m.n_nodes(), m.n_cells(), m.boundary_nodes().len()), (441, 400, 80));
        let m = Mesh2D::new(2).unwrap();
        assert_eq!((m.n_nodes(), m.n_cells(), m.boundary_nodes().len()), (9, 4, 8));
        assert_eq!(m.boundary_nodes(), &[0, 1, 2, 5, 8, 7, 6, 3]);
        assert_eq!(m.interior_nodes(), vec![4]);
        let total: f64 = (0..m.n_cells()).map(|_| m.cell_area()).sum();
        assert_eq!(total, 1.0);
        assert!(Mesh2D::new(1).is_err());
    }

    #[test]
    fn boundary_is_unique_and_complete() {
        let m = Mesh2D::new(7).unwrap();
        let mut b = m.boundary_nodes().to_vec();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 28);
        assert!(b.iter().all(|&n| m.is_boundary(n)));
        assert_eq!((0..m.n_nodes()).filter(|&n| m.is_corner(n)).count(), 4);
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_symmetric() {
        let m = Mesh2D::new(4).unwrap();
        let k = stiffness(&m, 3.0);
        assert!((&k - k.transpose()).amax() == 0.0);
        for i in 0..k.nrows() {
            assert!(k.row(i).sum().abs() < 1e-13);
        }
    }

    #[test]
    fn constants_and_linears_are_reproduced() {
        let m = Mesh2D::new(6).unwrap();
        let s = BackgroundSolver::new(&m, 10.0).unwrap();
        let ones = vec![1.0; m.boundary_nodes().len()];
        let u = s.solve(&ones).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() <= 1e-12));
        let lin: Vec<f64> = m.boundary_nodes().iter().map(|&n| {
            let (x, y) = m.node_coords(n);
            x + y
        }).collect();
        let u = s.solve(&lin).unwrap();
        for n in 0..m.n_nodes() {
            let (x, y) = m.node_coords(n);
            assert!((u[n] - x - y).abs() <= 1e-12);
        }
        let (res, load) = s.interior_residual(&u);
        assert!(res <= 1e-10 * load);
    }

    #[test]
    fn delta_obeys_maximum_principle() {
        let m = Mesh2D::new(8).unwrap();
        let s = BackgroundSolver::new(&m, 10.0).unwrap();
        for b in [0, 3, 13] {
            let mut data = vec![0.0; m.boundary_nodes().len()];
            data[b] = 1.0;
            let u = s.solve(&data).unwrap();
            for n in 0..m.n_nodes() {
                assert!(u[n] >= -1e-12 && u[n] <= 1.0 + 1e-12);
                if n != m.boundary_nodes()[b] {
                    assert!(u[n] < 1.0);
                }
            }
        }
        assert!(BackgroundSolver::new(&m, 0.0).is_err());
    }

    #[test]
    fn bank_respects_rotation() {
        let nx = 6;
        let m = Mesh2D::new(nx).unwrap();
        let s = BackgroundSolver::new(&m, 10.0).unwrap();
        let all: Vec<usize> = (0..m.boundary_nodes().len()).collect();
        let bank = forward_bank(&s, &all, 1.0).unwrap();
        // 90° rotation (x, y) -> (1 − y, x)
        let rot = |n: usize| {
            let (i, j) = (n % (nx + 1), n / (nx + 1));
            m.node_index(nx - j, i)
        };
        let bpos = |n: usize| m.boundary_nodes().iter().position(|&b| b == n).unwrap();
        for src in 0..all.len() {
            let rsrc = bpos(rot(m.boundary_nodes()[src]));
            for n in 0..m.n_nodes() {
                assert!((bank[(n, src)] - bank[(rot(n), rsrc)]).abs() <= 1e-10);
            }
        }
        let dup = forward_bank(&s, &[2, 2], 1.0).unwrap();
        assert_eq!(dup.column(0), dup.column(1));
        assert!(forward_bank(&s, &[], 1.0).is_err());
        assert!(forward_bank(&s, &[99], 1.0).is_err());
    }

    #[test]
    fn constant_bank_gives_zero_operator() {
        let m = Mesh2D::new(3).unwrap();
        let bank = DMatrix::from_element(m.n_nodes(), 2, 1.0);
        let op = assemble_system(&m, &bank, Quadrature::FourPoint).unwrap();
        assert_eq!(op.terms().len(), 8);
        assert_eq!(op.materialize(10_000).unwrap().amax(), 0.0);
    }

    #[test]
    fn orthogonal_linear_gradients() {
        let m = Mesh2D::new(2).unwrap();
        let bank = DMatrix::from_fn(m.n_nodes(), 2, |n, c| {
            let (x, y) = m.node_coords(n);
            if c == 0 { x } else { y }
        });
        for q in [Quadrature::OnePoint, Quadrature::FourPoint] {
            let a = assemble_system(&m, &bank, q).unwrap().materialize(1000).unwrap();
            // rows: (x,x), (x,y), (y,x), (y,y)
            for k in 0..4 {
                assert!((a[(0, k)] - 0.25).abs() < 1e-14);
                assert!(a[(1, k)].abs() < 1e-14 && a[(2, k)].abs() < 1e-14);
                assert!((a[(3, k)] - 0.25).abs() < 1e-14);
            }
        }
    }

    /// Per-entry quadrature using shape-function derivatives, with a
    /// `n_gauss × n_gauss` Gauss-Legendre rule on each cell.
    fn oracle_entry(m: &Mesh2D, u1: &[f64], u2: &[f64], k: usize, pts: &[(f64, f64, f64)]) -> f64 {
        let h = m.h();
        let nodes = m.cell_nodes(k);
        // dN/dξ, dN/dη for N0 = (1−ξ)(1−η), N1 = ξ(1−η), N2 = ξη, N3 = (1−ξ)η
        let dn = |xi: f64, eta: f64| -> [(f64, f64); 4] {
            [(-(1.0 - eta), -(1.0 - xi)), (1.0 - eta, -xi), (eta, xi), (-eta, 1.0 - xi)]
        };
        pts.iter()
            .map(|&(xi, eta, w)| {
                let d = dn(xi, eta);
                let grad = |u: &[f64]| {
                    d.iter().zip(nodes).fold((0.0, 0.0), |(gx, gy), (&(a, b), n)| (gx + a * u[n] / h, gy + b * u[n] / h))
                };
                let (g1, g2) = (grad(u1), grad(u2));
                w * h * h * (g1.0 * g2.0 + g1.1 * g2.1)
            })
            .sum()
    }

    #[test]
    fn assembly_matches_brute_force_quadrature() {
        let m = Mesh2D::new(4).unwrap();
        let s = BackgroundSolver::new(&m, 10.0).unwrap();
        let src: Vec<usize> = (0..m.boundary_nodes().len()).collect();
        let bank = forward_bank(&s, &src, 1.0).unwrap();
        let ns = src.len();
        let gl3 = {
            let a = (0.6f64).sqrt() / 2.0;
            let x = [(0.5 - a, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + a, 5.0 / 18.0)];
            x.iter().flat_map(|&(e, we)| x.iter().map(move |&(xi, wx)| (xi, e, wx * we))).collect::<Vec<_>>()
        };
        for (q, rule) in [(Quadrature::OnePoint, vec![(0.5, 0.5, 1.0)]), (Quadrature::FourPoint, gl3)] {
            let a = assemble_system(&m, &bank, q).unwrap().materialize(1_000_000).unwrap();
            let scale = a.amax();
            let cols: Vec<Vec<f64>> = (0..ns).map(|c| bank.column(c).iter().cloned().collect()).collect();
            for i1 in 0..ns {
                for i2 in 0..ns {
                    for k in 0..m.n_cells() {
                        let o = oracle_entry(&m, &cols[i1], &cols[i2], k, &rule);
                        assert!((a[(i1 * ns + i2, k)] - o).abs() <= 1e-10 * scale, "{q:?} ({i1},{i2},{k})");
                    }
                }
            }
        }
    }

    #[test]
    fn system_is_symmetric_in_source_pairs() {
        let cfg = EitConfig { nx: 5, ..EitConfig::default() };
        let sys = make_eit_problem(&cfg, 1).unwrap();
        let a = sys.op.materialize(1_000_000).unwrap();
        let ns = sys.op.n1();
        for i1 in 0..ns {
            for i2 in 0..ns {
                for k in 0..sys.op.ncols() {
                    assert!((a[(i1 * ns + i2, k)] - a[(i2 * ns + i1, k)]).abs() <= 1e-12 * a.amax());
                }
            }
        }
    }

    #[test]
    fn default_inclusions_cover_corner_blocks() {
        let m = Mesh2D::new(20).unwrap();
        let f = ConductivityField::from_inclusions(&m, 10.0, &default_inclusions()).unwrap();
        assert_eq!(f.values.iter().filter(|&&v| v == 1.0).count(), 32);
        assert_eq!(f.get(0, 19), 1.0);
        assert_eq!(f.get(19, 0), 1.0);
        assert_eq!(f.get(3, 16), 1.0);
        assert_eq!(f.get(4, 16), 0.0);
        assert_eq!(f.get(0, 0), 0.0);
        let bad = [Inclusion { x0: 0.9, y0: 0.0, side: 0.2, amplitude: 1.0 }];
        assert!(ConductivityField::from_inclusions(&m, 10.0, &bad).is_err());
    }

    #[test]
    fn data_scale_quadratically_with_amplitude() {
        let base = EitConfig { nx: 5, noise_sd: 0.0, ..EitConfig::default() };
        let doubled = EitConfig {
            inclusions: default_inclusions().into_iter().map(|i| Inclusion { amplitude: 2.0, ..i }).collect(),
            ..base.clone()
        };
        let e1 = make_eit_problem(&base, 0).unwrap().data.norm_squared();
        let e2 = make_eit_problem(&doubled, 0).unwrap().data.norm_squared();
        assert!((e2 / e1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_full_solve_is_consistent() {
        let cfg = EitConfig { nx: 6, noise_sd: 0.0, ..EitConfig::default() };
        let sys = make_eit_problem(&cfg, 0).unwrap();
        let base = full_baseline(&sys, DEFAULT_RCOND).unwrap();
        assert!(base.f_star <= 1e-10 * sys.data.norm_squared());
    }

    #[test]
    fn identity_sketch_reproduces_baseline() {
        let cfg = EitConfig { nx: 4, ..EitConfig::default() };
        let sys = make_eit_problem(&cfg, 3).unwrap();
        let base = full_baseline(&sys, DEFAULT_RCOND).unwrap();
        let n = sys.op.n1();
        let (field, rec) =
            reconstruct_with(&sys, &base, &Sketch::identity(n, n), Strategy::DenseGaussian, n * n, 0, DEFAULT_RCOND, false)
                .unwrap();
        assert!(rec.rel_error.abs() <= 1e-10, "{}", rec.rel_error);
        let diff = DVector::from_vec(field.values) - &base.x_star;
        assert!(diff.norm() <= 1e-8 * base.x_star.norm());
    }

    #[test]
    fn structured_sketch_matches_dense_form() {
        let cfg = EitConfig { nx: 5, ..EitConfig::default() };
        let sys = make_eit_problem(&cfg, 0).unwrap();
        let a = sys.op.materialize(1_000_000).unwrap();
        let n = sys.op.n1();
        for strategy in Strategy::ALL {
            let sk = Sketch::<f64>::generate(strategy, SketchRows::Total(100), n, n, 9).unwrap();
            let structured = sk.apply_to_operator(&sys.op).unwrap();
            let dense = sk.to_dense(10_000_000).unwrap() * &a;
            assert!((&structured - &dense).amax() <= 1e-10 * dense.amax(), "{strategy}");
        }
    }

    #[test]
    fn small_sweep_is_deterministic() {
        let cfg = EitSweepConfig {
            problem: EitConfig { nx: 4, ..EitConfig::default() },
            r_grid: vec![36, 64],
            trials: 2,
            master_seed: 11,
            ..EitSweepConfig::default()
        };
        let a = eit_sweep(&cfg).unwrap();
        let b = eit_sweep(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 3 * 2 * 2);
        assert_eq!(a.reconstructions.len(), 3);
        assert!(a.records.iter().all(|r| r.nx == 4 && r.p == 16 && r.n1 == 16));
        assert!(a.reconstructions.iter().all(|(_, f)| f.values.len() == 16));
    }
}
