//! Petrov-Galerkin solver for `∂^α u + λu = f`, `u(0) = 0`.
//!
//! With the differenced basis the Galerkin system is lower triangular
//! Toeplitz, `(τΓ(α+1) I + λ τ^{α+1}/(α+1) T(1, e_1, e_2, ...)) c = F`, and is
//! solved by forward substitution.

use crate::error::{domain, Result};
use crate::frac_time::{
    assemble_temporal_system, basis_at_foreign_node, coarse_cell_of_fine_cell, eval_trial,
    frac_deriv_trial, BasisVariant, PiecewiseConstant, TemporalMesh, TrialCoeffs,
};
use crate::quadrature::gauss_legendre;
use crate::source::TimeSource;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeProblem {
    pub mesh: TemporalMesh,
    pub lambda: f64,
    pub source: TimeSource,
}

impl OdeProblem {
    pub fn new(mesh: TemporalMesh, lambda: f64, source: TimeSource) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(domain(format!("λ must be a nonnegative number, got {lambda}")));
        }
        source.validate()?;
        Ok(OdeProblem { mesh, lambda, source })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub mesh: TemporalMesh,
    pub lambda: f64,
    /// Differenced-basis coefficients.
    pub coeffs: TrialCoeffs,
}

impl OdeSolution {
    pub fn eval(&self, t: f64) -> Result<f64> {
        eval_trial(&self.mesh, &self.coeffs, t)
    }

    /// Values at the grid points `t_1, ..., t_K`.
    pub fn nodal_values(&self) -> Vec<f64> {
        let k_cells = self.mesh.cells();
        let alpha = self.mesh.alpha();
        let delta: Vec<f64> = (0..k_cells)
            .map(|m| ((m + 1) as f64).powf(alpha) - (m as f64).powf(alpha))
            .collect();
        let ta = self.mesh.tau().powf(alpha);
        let c = &self.coeffs.to_variant(BasisVariant::Differenced).coeffs;
        (1..=k_cells)
            .map(|i| ta * (0..i).map(|k| c[k] * delta[i - 1 - k]).sum::<f64>())
            .collect()
    }
}

/// `∫_{t_{l-1}}^{t_l} f dt` for each cell.
pub fn slab_loads(mesh: &TemporalMesh, source: &TimeSource) -> Result<PiecewiseConstant> {
    let values = (0..mesh.cells())
        .map(|l| source.slab_integral(mesh.node(l), mesh.node(l + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PiecewiseConstant::new(values))
}

/// Forward substitution for given cell loads; returns differenced coefficients.
pub fn solve_with_loads(mesh: &TemporalMesh, lambda: f64, loads: &[f64]) -> Result<TrialCoeffs> {
    if loads.len() != mesh.cells() {
        return Err(domain("load vector does not match the grid"));
    }
    let sys = assemble_temporal_system(mesh, BasisVariant::Differenced);
    let beta = lambda * sys.stiffness_scale;
    let diag = sys.mass_scale + beta * sys.column[0];
    let mut c = Vec::with_capacity(loads.len());
    for (n, &f) in loads.iter().enumerate() {
        let history: f64 = (0..n).map(|k| sys.column[n - k] * c[k]).sum();
        c.push((f - beta * history) / diag);
    }
    Ok(TrialCoeffs::new(c, BasisVariant::Differenced))
}

pub fn solve_ode(problem: &OdeProblem) -> Result<OdeSolution> {
    let loads = slab_loads(&problem.mesh, &problem.source)?;
    let coeffs = solve_with_loads(&problem.mesh, problem.lambda, &loads.values)?;
    Ok(OdeSolution { mesh: problem.mesh, lambda: problem.lambda, coeffs })
}

/// How the time integrals in the error norms are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeNorm {
    /// Discrete `l²` over the nodes of the reference grid. This is the
    /// convention that reproduces the published tables.
    #[default]
    Nodal,
    /// Composite Gauss-Legendre of the given order on the union of both grids.
    Gauss(usize),
}

/// Relative errors `(‖u - u_τ‖ / ‖u‖, ‖∂^α(u - u_τ)‖ / ‖u‖)` against a solution
/// on a finer grid of the same interval.
pub fn ode_error_norms(sol: &OdeSolution, reference: &OdeSolution, norm: TimeNorm) -> Result<(f64, f64)> {
    let (cm, fm) = (&sol.mesh, &reference.mesh);
    if cm.final_time() != fm.final_time() || cm.alpha() != fm.alpha() {
        return Err(domain("solution and reference live on different time intervals or orders"));
    }
    let coarse = sol.coeffs.to_variant(BasisVariant::Cumulative).coeffs;
    let dc = frac_deriv_trial(cm, &sol.coeffs).values;
    let df = frac_deriv_trial(fm, &reference.coeffs).values;
    match norm {
        TimeNorm::Nodal => {
            let fine_cells = fm.cells();
            let u_ref = reference.nodal_values();
            let mut w = Vec::new();
            let (mut err, mut base, mut derr) = (0.0, 0.0, 0.0);
            for i in 1..=fine_cells {
                basis_at_foreign_node(cm, fine_cells, i, &mut w);
                let uc: f64 = w.iter().zip(&coarse).map(|(a, b)| a * b).sum();
                let ur = u_ref[i - 1];
                err += (uc - ur).powi(2);
                base += ur * ur;
                let d = df[i - 1] - dc[coarse_cell_of_fine_cell(cm.cells(), fine_cells, i)];
                derr += d * d;
            }
            if base == 0.0 {
                return Ok((0.0, 0.0));
            }
            Ok(((err / base).sqrt(), (derr / base).sqrt()))
        }
        TimeNorm::Gauss(order) => {
            let rule = gauss_legendre(order.max(1));
            let (mut err, mut base, mut derr) = (0.0, 0.0, 0.0);
            for (a, b) in union_segments(cm, fm) {
                let mid = 0.5 * (a + b);
                let d = df[fm.cell_of(mid)] - dc[cm.cell_of(mid)];
                derr += d * d * (b - a);
                for (t, wt) in rule.mapped(a, b) {
                    let ur = reference.eval(t)?;
                    let uc = sol.eval(t)?;
                    err += wt * (uc - ur).powi(2);
                    base += wt * ur * ur;
                }
            }
            if base == 0.0 {
                return Ok((0.0, 0.0));
            }
            Ok(((err / base).sqrt(), (derr / base).sqrt()))
        }
    }
}

/// Segments of the union of two uniform grids on `[0, T]`.
pub(crate) fn union_segments(a: &TemporalMesh, b: &TemporalMesh) -> Vec<(f64, f64)> {
    let (ka, kb) = (a.cells() as u64, b.cells() as u64);
    // grid points as multiples of T / (ka kb)
    let mut pts: Vec<u64> = (0..=ka).map(|k| k * kb).chain((0..=kb).map(|k| k * ka)).collect();
    pts.sort_unstable();
    pts.dedup();
    let denom = (ka * kb) as f64;
    let t = a.final_time();
    pts.windows(2)
        .map(|w| (t * (w[0] as f64 / denom), t * (w[1] as f64 / denom)))
        .collect()
}

/// Mean of the pairwise `log₂(e_i / e_{i+1})`, for error sequences under grid doubling.
pub fn pairwise_rates(errors: &[f64]) -> Result<(Vec<f64>, Option<f64>)> {
    if let Some(bad) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(domain(format!("rates need positive errors, got {bad}")));
    }
    let rates: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let mean = if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    };
    Ok((rates, mean))
}
