//! Space-time Petrov-Galerkin solver for `∂^α u - Δu = f` with homogeneous
//! Dirichlet data and `u(0) = 0`.
//!
//! The trial space is the differenced fractional basis in time tensored with
//! P1 in space, the test space piecewise constants in time tensored with P1.
//! The system is block lower triangular and is solved by time stepping:
//!
//! `(τΓ(α+1) M_h + β A_h) U_n = F_n - β A_h Σ_{k<n} g_{n-k} U_k`,
//! with `β = τ^{α+1}/(α+1)` and `g` the Toeplitz column of the temporal stiffness.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{domain, numeric, Error, Result};
use crate::fem::{assemble, build_mesh, eigendecompose, load_vector, SolverKind, SparseSpd, SpatialMesh, SpdSolver};
use crate::frac_ode::{slab_loads, solve_with_loads, TimeNorm};
use crate::frac_time::{
    assemble_temporal_system, basis_at_foreign_node, coarse_cell_of_fine_cell, BasisVariant, TemporalMesh,
};
use crate::quadrature::gauss_legendre;
use crate::source::{SeparableSource, SpatialFn};

/// Default tolerance of the per-step linear solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;

/// A spatial mesh together with its interior mass and stiffness matrices.
#[derive(Debug, Clone)]
pub struct SpatialSetup {
    pub mesh: SpatialMesh,
    pub mass: SparseSpd,
    pub stiffness: SparseSpd,
}

impl SpatialSetup {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        let mesh = build_mesh(dim, m)?;
        let (mass, stiffness) = assemble(&mesh);
        Ok(SpatialSetup { mesh, mass, stiffness })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }
}

/// Right-hand side `F[n][i] = ∫_{cell n} (f(t), φ_i) dt`.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadTensor {
    /// `Σ_terms slab[n] · space[i]`.
    Separable { slabs: Vec<Vec<f64>>, spaces: Vec<Vec<f64>> },
    /// Row-major `K × N`.
    Dense { cells: usize, n: usize, data: Vec<f64> },
}

impl LoadTensor {
    pub fn cells(&self) -> usize {
        match self {
            LoadTensor::Separable { slabs, .. } => slabs[0].len(),
            LoadTensor::Dense { cells, .. } => *cells,
        }
    }

    pub fn n_dofs(&self) -> usize {
        match self {
            LoadTensor::Separable { spaces, .. } => spaces[0].len(),
            LoadTensor::Dense { n, .. } => *n,
        }
    }

    /// Write row `k` (0-based cell) into `out`.
    pub fn row_into(&self, k: usize, out: &mut [f64]) {
        match self {
            LoadTensor::Separable { slabs, spaces } => {
                out.fill(0.0);
                for (slab, space) in slabs.iter().zip(spaces) {
                    let s = slab[k];
                    for (o, w) in out.iter_mut().zip(space) {
                        *o += s * w;
                    }
                }
            }
            LoadTensor::Dense { n, data, .. } => out.copy_from_slice(&data[k * n..(k + 1) * n]),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let (k, n) = (self.cells(), self.n_dofs());
        let mut data = vec![0.0; k * n];
        for (r, chunk) in data.chunks_mut(n.max(1)).enumerate().take(k) {
            self.row_into(r, chunk);
        }
        data
    }
}

/// Load tensor of a separable source: closed-form slab integrals in time and
/// element quadrature in space.
pub fn assemble_load(source: &SeparableSource, tmesh: &TemporalMesh, smesh: &SpatialMesh) -> Result<LoadTensor> {
    let mut slabs = Vec::new();
    let mut spaces = Vec::new();
    for (g, w) in source.terms() {
        slabs.push(slab_loads(tmesh, g)?.values);
        spaces.push(match w {
            SpatialFn::Zero => vec![0.0; smesh.n_dofs()],
            _ => load_vector(smesh, |x| w.eval(x)),
        });
    }
    Ok(LoadTensor::Separable { slabs, spaces })
}

/// Coefficients of `u_{hτ}` in the differenced temporal basis, row `k` holding
/// the spatial vector of `φ_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSolution {
    pub tmesh: TemporalMesh,
    n: usize,
    coeffs: Vec<f64>,
}

impl SpaceTimeSolution {
    pub fn new(tmesh: TemporalMesh, n: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != tmesh.cells() * n {
            return Err(domain(format!(
                "expected {}×{n} coefficients, got {}",
                tmesh.cells(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(numeric("non-finite solution coefficient"));
        }
        Ok(SpaceTimeSolution { tmesh, n, coeffs })
    }

    pub fn cells(&self) -> usize {
        self.tmesh.cells()
    }

    pub fn n_dofs(&self) -> usize {
        self.n
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.n..(k + 1) * self.n]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn max_abs_diff(&self, other: &SpaceTimeSolution) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Spatial nodal vector at time `t`.
    pub fn at_time(&self, t: f64) -> Result<Vec<f64>> {
        let w = differenced_weights(&self.tmesh, t)?;
        let mut v = vec![0.0; self.n];
        for (k, wk) in w.iter().enumerate() {
            axpy(*wk, self.row(k), &mut v);
        }
        Ok(v)
    }

    /// Spatial nodal vectors at `t_1, ..., t_K`, computed without cancellation
    /// from the increments `(m+1)^α - m^α`.
    pub fn nodal_values(&self) -> Vec<f64> {
        let mut out = self.coeffs.clone();
        nodal_in_place(&self.tmesh, self.n, &mut out);
        out
    }
}

/// `φ_k(t)` for all cells, differenced basis.
fn differenced_weights(tmesh: &TemporalMesh, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=tmesh.final_time()).contains(&t) {
        return Err(domain(format!("time {t} outside [0, {}]", tmesh.final_time())));
    }
    let alpha = tmesh.alpha();
    let psi: Vec<f64> = (0..tmesh.cells())
        .map(|k| {
            let s = tmesh.node(k);
            if t > s { (t - s).powf(alpha) } else { 0.0 }
        })
        .collect();
    Ok((0..psi.len())
        .map(|k| psi[k] - psi.get(k + 1).copied().unwrap_or(0.0))
        .collect())
}

fn nodal_in_place(tmesh: &TemporalMesh, n: usize, data: &mut [f64]) {
    let k_cells = tmesh.cells();
    let alpha = tmesh.alpha();
    let ta = tmesh.tau().powf(alpha);
    let delta: Vec<f64> = (0..k_cells)
        .map(|m| ta * (((m + 1) as f64).powf(alpha) - (m as f64).powf(alpha)))
        .collect();
    let mut buf = vec![0.0; n];
    // u(t_i) uses rows 0..i only, so rows can be overwritten from the top
    for i in (1..=k_cells).rev() {
        buf.fill(0.0);
        for k in 0..i {
            axpy(delta[i - 1 - k], &data[k * n..(k + 1) * n], &mut buf);
        }
        data[(i - 1) * n..i * n].copy_from_slice(&buf);
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Time stepping for the block lower triangular space-time system.
pub fn step_solve(
    loads: &LoadTensor,
    tmesh: &TemporalMesh,
    mass: &SparseSpd,
    stiffness: &SparseSpd,
    tol: f64,
) -> Result<SpaceTimeSolution> {
    let n = mass.dim();
    let k_cells = tmesh.cells();
    if stiffness.dim() != n || loads.n_dofs() != n || loads.cells() != k_cells {
        return Err(domain("load tensor, grid and matrices do not match"));
    }
    let sys = assemble_temporal_system(tmesh, BasisVariant::Differenced);
    let beta = sys.stiffness_scale;
    let g = &sys.column;
    let step = mass.lin_comb(sys.mass_scale, stiffness, beta * g[0])?;
    let solver = SpdSolver::new(&step, tol, SolverKind::Auto)?;
    let mut coeffs = vec![0.0; k_cells * n];
    let mut rhs = vec![0.0; n];
    let mut hist = vec![0.0; n];
    let mut ahist = vec![0.0; n];
    for k in 0..k_cells {
        loads.row_into(k, &mut rhs);
        if k > 0 {
            hist.fill(0.0);
            for l in 0..k {
                axpy(g[k - l], &coeffs[l * n..(l + 1) * n], &mut hist);
            }
            stiffness.mul_vec_into(&hist, &mut ahist);
            axpy(-beta, &ahist, &mut rhs);
        }
        let u = solver
            .solve(&rhs)
            .map_err(|e| numeric(format!("time step {}: {e}", k + 1)))?;
        coeffs[k * n..(k + 1) * n].copy_from_slice(&u);
    }
    SpaceTimeSolution::new(*tmesh, n, coeffs)
}

/// The space-time operator applied to a coefficient array; the inverse of [`step_solve`].
pub fn apply_operator(sol: &SpaceTimeSolution, mass: &SparseSpd, stiffness: &SparseSpd) -> LoadTensor {
    let (k_cells, n) = (sol.cells(), sol.n_dofs());
    let sys = assemble_temporal_system(&sol.tmesh, BasisVariant::Differenced);
    let mut data = vec![0.0; k_cells * n];
    let mut hist = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for k in 0..k_cells {
        hist.fill(0.0);
        for l in 0..=k {
            axpy(sys.column[k - l], sol.row(l), &mut hist);
        }
        stiffness.mul_vec_into(&hist, &mut tmp);
        let out = &mut data[k * n..(k + 1) * n];
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o = sys.stiffness_scale * t;
        }
        mass.mul_vec_into(sol.row(k), &mut tmp);
        axpy(sys.mass_scale, &tmp, out);
    }
    LoadTensor::Dense { cells: k_cells, n, data }
}

/// Modal solve: expand in the generalized eigenvectors of `(A_h, M_h)` and
/// solve one scalar problem per mode.
pub fn spectral_oracle_solve(loads: &LoadTensor, tmesh: &TemporalMesh, mass: &SparseSpd, stiffness: &SparseSpd) -> Result<SpaceTimeSolution> {
    let n = mass.dim();
    let k_cells = tmesh.cells();
    if loads.n_dofs() != n || loads.cells() != k_cells {
        return Err(domain("load tensor, grid and matrices do not match"));
    }
    let eig = eigendecompose(mass, stiffness, n)?;
    let f = loads.to_dense();
    let mut coeffs = vec![0.0; k_cells * n];
    for j in 0..n {
        let psi = eig.vectors.column(j);
        let modal: Vec<f64> = (0..k_cells)
            .map(|k| f[k * n..(k + 1) * n].iter().zip(psi.iter()).map(|(a, b)| a * b).sum())
            .collect();
        let xi = solve_with_loads(tmesh, eig.values[j], &modal)?;
        for (k, x) in xi.coeffs.iter().enumerate() {
            for (c, p) in coeffs[k * n..(k + 1) * n].iter_mut().zip(psi.iter()) {
                *c += x * p;
            }
        }
    }
    SpaceTimeSolution::new(*tmesh, n, coeffs)
}

/// Point value `u_{hτ}(x, t)`.
pub fn eval_solution(sol: &SpaceTimeSolution, mesh: &SpatialMesh, x: &[f64], t: f64) -> Result<f64> {
    if mesh.n_dofs() != sol.n_dofs() {
        return Err(domain("solution does not live on this mesh"));
    }
    mesh.interpolate(&sol.at_time(t)?, x)
}

/// Nodal values `u_ref(s_i)`, `s_i = iT/K_ref`, of a reference solution,
/// kept for repeated error evaluation.
#[derive(Debug, Clone)]
pub struct ReferenceSamples {
    pub tmesh: TemporalMesh,
    n: usize,
    values: Vec<f64>,
    norm_sq: f64,
    final_norm_sq: f64,
}

impl ReferenceSamples {
    pub fn from_solution(sol: SpaceTimeSolution, mass: &SparseSpd) -> Result<Self> {
        let SpaceTimeSolution { tmesh, n, mut coeffs } = sol;
        if mass.dim() != n {
            return Err(domain("mass matrix does not match the reference"));
        }
        nodal_in_place(&tmesh, n, &mut coeffs);
        let norms: Vec<f64> = coeffs.chunks(n.max(1)).map(|v| mass.quad_form(v)).collect();
        let final_norm_sq = *norms.last().unwrap_or(&0.0);
        Ok(ReferenceSamples { tmesh, n, values: coeffs, norm_sq: norms.iter().sum(), final_norm_sq })
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[(i - 1) * self.n..i * self.n]
    }

    /// Relative `(L²(Q_T), L²(Ω) at t = T)` errors of `sol`, the former as the
    /// discrete `l²` over the reference nodes.
    pub fn errors(&self, sol: &SpaceTimeSolution, mass: &SparseSpd) -> Result<(f64, f64)> {
        check_compatible(sol, &self.tmesh, self.n)?;
        let fine = self.tmesh.cells();
        let mut psi = Vec::new();
        let mut u = vec![0.0; self.n];
        let mut err = 0.0;
        let mut final_err = 0.0;
        for i in 1..=fine {
            basis_at_foreign_node(&sol.tmesh, fine, i, &mut psi);
            u.fill(0.0);
            for k in 0..psi.len() {
                let w = psi[k] - psi.get(k + 1).copied().unwrap_or(0.0);
                axpy(w, sol.row(k), &mut u);
            }
            for (ui, ri) in u.iter_mut().zip(self.sample(i)) {
                *ui -= ri;
            }
            let e = mass.quad_form(&u);
            err += e;
            if i == fine {
                final_err = e;
            }
        }
        Ok((ratio(err, self.norm_sq), ratio(final_err, self.final_norm_sq)))
    }
}

fn ratio(err: f64, base: f64) -> f64 {
    if base == 0.0 { err.sqrt() } else { (err / base).sqrt() }
}

fn check_compatible(sol: &SpaceTimeSolution, reference: &TemporalMesh, n: usize) -> Result<()> {
    if sol.n_dofs() != n {
        return Err(domain("solution and reference use different spatial meshes"));
    }
    let t = &sol.tmesh;
    if t.final_time() != reference.final_time() || t.alpha() != reference.alpha() {
        return Err(domain("solution and reference use different time intervals or orders"));
    }
    Ok(())
}

/// Relative `(L²(Q_T), L²(Ω) at T)` errors against a reference solution on a
/// finer grid with the same spatial mesh.
pub fn spacetime_error(
    sol: &SpaceTimeSolution,
    reference: &SpaceTimeSolution,
    mass: &SparseSpd,
    norm: TimeNorm,
) -> Result<(f64, f64)> {
    check_compatible(sol, &reference.tmesh, reference.n_dofs())?;
    let t_end = sol.tmesh.final_time();
    let (ue, re) = (sol.at_time(t_end)?, reference.at_time(t_end)?);
    let diff: Vec<f64> = ue.iter().zip(&re).map(|(a, b)| a - b).collect();
    let final_rel = ratio(mass.quad_form(&diff), mass.quad_form(&re));
    match norm {
        TimeNorm::Nodal => {
            let samples = ReferenceSamples::from_solution(reference.clone(), mass)?;
            let (l2, _) = samples.errors(sol, mass)?;
            Ok((l2, final_rel))
        }
        TimeNorm::Gauss(order) => {
            let rule = gauss_legendre(order.max(1));
            let (mut err, mut base) = (0.0, 0.0);
            for (a, b) in crate::frac_ode::union_segments(&sol.tmesh, &reference.tmesh) {
                for (t, w) in rule.mapped(a, b) {
                    let mut u = sol.at_time(t)?;
                    let r = reference.at_time(t)?;
                    base += w * mass.quad_form(&r);
                    for (ui, ri) in u.iter_mut().zip(&r) {
                        *ui -= ri;
                    }
                    err += w * mass.quad_form(&u);
                }
            }
            Ok((ratio(err, base), final_rel))
        }
    }
}

/// Relative error of `∂^α u` in `L²(Q_T)`, normalized by `‖u_ref‖` in the
/// nodal norm; the fractional derivative is piecewise constant in time.
pub fn frac_deriv_error(sol: &SpaceTimeSolution, reference: &SpaceTimeSolution, mass: &SparseSpd) -> Result<f64> {
    check_compatible(sol, &reference.tmesh, reference.n_dofs())?;
    let g = sol.tmesh.gamma_alpha1();
    let fine = reference.cells();
    let tau = reference.tmesh.tau();
    let mut err = 0.0;
    let mut d = vec![0.0; sol.n_dofs()];
    for i in 1..=fine {
        let c = coarse_cell_of_fine_cell(sol.cells(), fine, i);
        for ((di, a), b) in d.iter_mut().zip(reference.row(i - 1)).zip(sol.row(c)) {
            *di = g * (a - b);
        }
        err += tau * mass.quad_form(&d);
    }
    let nodal = reference.nodal_values();
    let base: f64 = nodal.chunks(sol.n_dofs().max(1)).map(|v| tau * mass.quad_form(v)).sum();
    Ok(ratio(err, base))
}

/// Plain-text dump: a header line `K N alpha T`, then one row per cell with
/// 17 significant digits.
pub fn write_dump<W: Write>(sol: &SpaceTimeSolution, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "{} {} {:.16e} {:.16e}",
        sol.cells(),
        sol.n_dofs(),
        sol.tmesh.alpha(),
        sol.tmesh.final_time()
    )?;
    let mut line = String::new();
    for k in 0..sol.cells() {
        line.clear();
        for (i, v) in sol.row(k).iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v:.16e}").expect("writing to a String");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(input: R) -> Result<SpaceTimeSolution> {
    let bad = |m: String| Error::Parse { what: "solution dump", path: Default::default(), message: m };
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty input".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 {
        return Err(bad(format!("bad header '{header}'")));
    }
    let k: usize = h[0].parse().map_err(|_| bad(format!("bad K '{}'", h[0])))?;
    let n: usize = h[1].parse().map_err(|_| bad(format!("bad N '{}'", h[1])))?;
    let alpha: f64 = h[2].parse().map_err(|_| bad(format!("bad alpha '{}'", h[2])))?;
    let t: f64 = h[3].parse().map_err(|_| bad(format!("bad T '{}'", h[3])))?;
    let mut coeffs = Vec::with_capacity(k * n);
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = coeffs.len();
        for tok in line.split_whitespace() {
            coeffs.push(tok.parse::<f64>().map_err(|_| bad(format!("row {}: bad number '{tok}'", row + 1)))?);
        }
        if coeffs.len() - before != n {
            return Err(bad(format!("row {} has {} entries, expected {n}", row + 1, coeffs.len() - before)));
        }
    }
    SpaceTimeSolution::new(TemporalMesh::new(t, k, alpha)?, n, coeffs)
}

pub fn save_dump(sol: &SpaceTimeSolution, path: &Path) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    write_dump(sol, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_dump(path: &Path) -> Result<SpaceTimeSolution> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_dump(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { what, message, .. } => Error::Parse { what, path: path.to_path_buf(), message },
        other => other,
    })
}
