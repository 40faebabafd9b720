//! Temporal kernels on a uniform grid.
//!
//! The trial space is spanned by "fractionalized" piecewise constants
//! `ψ_k(t) = (t - t_{k-1})_+^α`, whose Riemann-Liouville derivative of
//! order α is `Γ(α+1)` times the indicator of `[t_{k-1}, T]`. The test space
//! is the piecewise constants on the same grid. Two bases of the trial space
//! are supported:
//!
//! * [`BasisVariant::Cumulative`]: `φ_k = ψ_k`;
//! * [`BasisVariant::Differenced`]: `φ_k = ψ_k - ψ_{k+1}`, whose derivative is
//!   `Γ(α+1)` times the indicator of the single cell `[t_{k-1}, t_k]`.
//!
//! Every operation here is closed form except the off-diagonal Gram entries
//! and the projection of general (non trial-space) functions.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{domain, numeric, Result};
use crate::gamma::gamma;
use crate::quadrature::{
    gauss_jacobi, gauss_legendre, integrate_adaptive, integrate_left_singular, AdaptiveTol,
    GaussRule,
};

/// Above this order the inf-sup constant is tiny (see the 0.98 row of the
/// stability table); still allowed, but logged.
const ALPHA_WARN: f64 = 0.95;

/// Uniform time grid on `[0, T]` with `K` cells, plus the fractional order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalMesh {
    final_time: f64,
    cells: usize,
    alpha: f64,
}

impl TemporalMesh {
    pub fn new(final_time: f64, cells: usize, alpha: f64) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(domain(format!("final time must be positive, got {final_time}")));
        }
        if cells == 0 {
            return Err(domain("the time grid needs at least one cell"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!("fractional order must lie in (0, 1), got {alpha}")));
        }
        if alpha > ALPHA_WARN {
            log::warn!("fractional order {alpha} is close to 1; the inf-sup constant degenerates");
        }
        Ok(TemporalMesh { final_time, cells, alpha })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.cells as f64
    }

    /// Grid point `t_k = k T / K`, `k = 0..=K`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.cells {
            return self.final_time;
        }
        self.final_time * (k as f64 / self.cells as f64)
    }

    /// Index (0-based) of the cell containing `t`; `T` belongs to the last cell.
    pub fn cell_of(&self, t: f64) -> usize {
        let k = (t / self.tau()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.cells - 1)
        }
    }

    pub fn gamma_alpha1(&self) -> f64 {
        gamma(self.alpha + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum BasisVariant {
    Cumulative,
    #[default]
    Differenced,
}

/// Coefficients of a trial function in one of the two bases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCoeffs {
    pub coeffs: Vec<f64>,
    pub variant: BasisVariant,
}

impl TrialCoeffs {
    pub fn new(coeffs: Vec<f64>, variant: BasisVariant) -> Self {
        TrialCoeffs { coeffs, variant }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Same function expressed in the other basis.
    ///
    /// With `φ_k = ψ_k - ψ_{k+1}` we have `Σ c_k φ_k = Σ (c_k - c_{k-1}) ψ_k`.
    pub fn to_variant(&self, variant: BasisVariant) -> TrialCoeffs {
        if variant == self.variant {
            return self.clone();
        }
        let coeffs = match variant {
            BasisVariant::Cumulative => differenced_to_cumulative(&self.coeffs),
            BasisVariant::Differenced => cumulative_to_differenced(&self.coeffs),
        };
        TrialCoeffs { coeffs, variant }
    }

    fn check(&self, mesh: &TemporalMesh) -> Result<()> {
        if self.coeffs.len() != mesh.cells() {
            return Err(domain(format!(
                "{} coefficients for a grid with {} cells",
                self.coeffs.len(),
                mesh.cells()
            )));
        }
        Ok(())
    }
}

pub(crate) fn differenced_to_cumulative(c: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    c.iter()
        .map(|&v| {
            let b = v - prev;
            prev = v;
            b
        })
        .collect()
}

pub(crate) fn cumulative_to_differenced(b: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    b.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

/// Cell values of a piecewise constant function; value `l` lives on
/// `[t_{l}, t_{l+1})` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(values: Vec<f64>) -> Self {
        PiecewiseConstant { values }
    }

    pub fn l2_norm_sq(&self, mesh: &TemporalMesh) -> f64 {
        mesh.tau() * self.values.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `d_k = k^{α+1} - (k-1)^{α+1}`, `k = 1..=K`.
pub fn d_sequence(alpha: f64, count: usize) -> Vec<f64> {
    let p = alpha + 1.0;
    (1..=count)
        .map(|k| {
            if k == 1 {
                1.0
            } else {
                let kf = k as f64;
                // k^p (1 - (1 - 1/k)^p) without cancellation
                -kf.powf(p) * (p * (-1.0 / kf).ln_1p()).exp_m1()
            }
        })
        .collect()
}

/// Second differences `e_k = d_{k+1} - d_k = (k+1)^{α+1} - 2k^{α+1} + (k-1)^{α+1}`,
/// `k = 1..=count`.
pub fn e_sequence(alpha: f64, count: usize) -> Vec<f64> {
    let p = alpha + 1.0;
    (1..=count)
        .map(|k| {
            let kf = k as f64;
            if k < 8 {
                (kf + 1.0).powf(p) - 2.0 * kf.powf(p) + (kf - 1.0).powf(p)
            } else {
                // k^p [(1+x)^p + (1-x)^p - 2] = 2 k^p Σ_j C(p, 2j) x^{2j}, x = 1/k
                let x = 1.0 / kf;
                let x2 = x * x;
                let mut binom = p * (p - 1.0) / 2.0;
                let mut pow = x2;
                let mut sum = binom * pow;
                let mut j = 1.0;
                loop {
                    // C(p, 2j+2) = C(p, 2j) (p-2j)(p-2j-1) / ((2j+1)(2j+2))
                    binom *= (p - 2.0 * j) * (p - 2.0 * j - 1.0) / ((2.0 * j + 1.0) * (2.0 * j + 2.0));
                    pow *= x2;
                    let term = binom * pow;
                    sum += term;
                    if term.abs() <= 1e-18 * sum.abs() {
                        break;
                    }
                    j += 1.0;
                }
                2.0 * kf.powf(p) * sum
            }
        })
        .collect()
}

/// First column of the (unscaled) temporal stiffness Toeplitz matrix.
///
/// Cumulative basis: `(d_1, ..., d_K)`. Differenced basis: the diagonal entry
/// is `(φ_k, χ_k) (α+1)/τ^{α+1} = 1` and the sub-diagonals are
/// `d_{m+1} - d_m = e_m`, i.e. `(1, e_1, ..., e_{K-1})`.
pub fn stiffness_sequence(alpha: f64, cells: usize, variant: BasisVariant) -> Vec<f64> {
    match variant {
        BasisVariant::Cumulative => d_sequence(alpha, cells),
        BasisVariant::Differenced => {
            let mut g = Vec::with_capacity(cells);
            g.push(1.0);
            g.extend(e_sequence(alpha, cells.saturating_sub(1)));
            g
        }
    }
}

/// The temporal matrices `M_τ = {(φ_k, χ_l)}` and `M_τ^α = {(∂^α φ_k, χ_l)}`.
///
/// Both are lower triangular Toeplitz: `M_τ = stiffness_scale · T(column)`,
/// and `M_τ^α = mass_scale · L` with `L` the all-ones lower triangle for the
/// cumulative basis or the identity for the differenced basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSystem {
    pub variant: BasisVariant,
    pub column: Vec<f64>,
    /// `τ^{α+1} / (α+1)`
    pub stiffness_scale: f64,
    /// `τ Γ(α+1)`
    pub mass_scale: f64,
}

impl TemporalSystem {
    pub fn cells(&self) -> usize {
        self.column.len()
    }

    /// `(M_τ)_{l,k}`, 0-based row `l` (test function) and column `k` (trial function).
    pub fn stiffness_entry(&self, l: usize, k: usize) -> f64 {
        if l < k {
            0.0
        } else {
            self.stiffness_scale * self.column[l - k]
        }
    }

    pub fn mass_entry(&self, l: usize, k: usize) -> f64 {
        match self.variant {
            BasisVariant::Cumulative if l >= k => self.mass_scale,
            BasisVariant::Differenced if l == k => self.mass_scale,
            _ => 0.0,
        }
    }

    pub fn stiffness_dense(&self) -> DMatrix<f64> {
        let n = self.cells();
        DMatrix::from_fn(n, n, |l, k| self.stiffness_entry(l, k))
    }

    pub fn mass_dense(&self) -> DMatrix<f64> {
        let n = self.cells();
        DMatrix::from_fn(n, n, |l, k| self.mass_entry(l, k))
    }
}

pub fn assemble_temporal_system(mesh: &TemporalMesh, variant: BasisVariant) -> TemporalSystem {
    let alpha = mesh.alpha();
    let tau = mesh.tau();
    TemporalSystem {
        variant,
        column: stiffness_sequence(alpha, mesh.cells(), variant),
        stiffness_scale: tau.powf(alpha + 1.0) / (alpha + 1.0),
        mass_scale: tau * gamma(alpha + 1.0),
    }
}

/// Values `ψ_k(s_i)` of the cumulative basis of `mesh` at the node
/// `s_i = i T / fine_cells` of another uniform grid on `[0, T]`. Only the
/// nonzero leading entries are written. Offsets are formed in integer
/// arithmetic, so the two grids need not be nested.
pub fn basis_at_foreign_node(mesh: &TemporalMesh, fine_cells: usize, i: usize, out: &mut Vec<f64>) {
    out.clear();
    let k_cells = mesh.cells() as u64;
    let f = fine_cells as u64;
    let num_i = i as u64 * k_cells;
    let scale = mesh.final_time() / (k_cells * f) as f64;
    let alpha = mesh.alpha();
    for k in 0..k_cells {
        let start = k * f;
        if start >= num_i {
            break;
        }
        out.push(((num_i - start) as f64 * scale).powf(alpha));
    }
}

/// Coarse cell (0-based) containing the midpoint of fine cell `i` (1-based).
pub fn coarse_cell_of_fine_cell(coarse_cells: usize, fine_cells: usize, i: usize) -> usize {
    (((2 * i - 1) * coarse_cells) / (2 * fine_cells)).min(coarse_cells - 1)
}

/// Point value of a trial function, exact up to rounding.
pub fn eval_trial(mesh: &TemporalMesh, coeffs: &TrialCoeffs, t: f64) -> Result<f64> {
    coeffs.check(mesh)?;
    if !(0.0..=mesh.final_time()).contains(&t) {
        return Err(domain(format!(
            "time {t} outside [0, {}]",
            mesh.final_time()
        )));
    }
    let alpha = mesh.alpha();
    let b = coeffs.to_variant(BasisVariant::Cumulative).coeffs;
    let mut acc = 0.0;
    for (k, &bk) in b.iter().enumerate() {
        let start = mesh.node(k);
        if t <= start {
            break;
        }
        acc += bk * (t - start).powf(alpha);
    }
    Ok(acc)
}

/// Exact Riemann-Liouville derivative of order α of a trial function.
pub fn frac_deriv_trial(mesh: &TemporalMesh, coeffs: &TrialCoeffs) -> PiecewiseConstant {
    let g = mesh.gamma_alpha1();
    let values = match coeffs.variant {
        BasisVariant::Differenced => coeffs.coeffs.iter().map(|c| g * c).collect(),
        BasisVariant::Cumulative => cumulative_to_differenced(&coeffs.coeffs)
            .into_iter()
            .map(|c| g * c)
            .collect(),
    };
    PiecewiseConstant { values }
}

/// Riemann-Liouville integral of order α of a piecewise constant, which is a
/// trial function: `I^α χ_{[t_{l-1}, t_l]} = φ_l / Γ(α+1)` in the differenced basis.
pub fn rl_integral(mesh: &TemporalMesh, pc: &PiecewiseConstant) -> TrialCoeffs {
    let g = mesh.gamma_alpha1();
    TrialCoeffs::new(
        pc.values.iter().map(|v| v / g).collect(),
        BasisVariant::Differenced,
    )
}

/// A time function handed to [`project_pi_tau`].
pub enum TimeFunction<'a> {
    Piecewise(&'a PiecewiseConstant),
    Trial(&'a TrialCoeffs),
    General(&'a dyn Fn(f64) -> f64),
}

/// Cell averages of `ψ_k`-combinations: cell `n` (1-based) receives
/// `τ^α/(α+1) Σ_{k≤n} b_k d_{n-k+1}`.
pub fn trial_cell_averages(mesh: &TemporalMesh, coeffs: &TrialCoeffs) -> Vec<f64> {
    let alpha = mesh.alpha();
    let k_cells = mesh.cells();
    let b = coeffs.to_variant(BasisVariant::Cumulative).coeffs;
    let d = d_sequence(alpha, k_cells);
    let scale = mesh.tau().powf(alpha) / (alpha + 1.0);
    (0..k_cells)
        .map(|n| scale * (0..=n).map(|k| b[k] * d[n - k]).sum::<f64>())
        .collect()
}

/// The L² projection onto piecewise constants: cell averages.
pub fn project_pi_tau(mesh: &TemporalMesh, f: TimeFunction<'_>) -> Result<PiecewiseConstant> {
    match f {
        TimeFunction::Piecewise(pc) => {
            if pc.values.len() != mesh.cells() {
                return Err(domain("piecewise constant does not match the grid"));
            }
            Ok(pc.clone())
        }
        TimeFunction::Trial(c) => {
            c.check(mesh)?;
            Ok(PiecewiseConstant::new(trial_cell_averages(mesh, c)))
        }
        TimeFunction::General(func) => {
            let tau = mesh.tau();
            let tol = AdaptiveTol { abs: 1e-15, rel: 1e-12, max_segments: 2000 };
            let mut values = Vec::with_capacity(mesh.cells());
            for l in 0..mesh.cells() {
                let v = integrate_adaptive(func, mesh.node(l), mesh.node(l + 1), tol)
                    .map_err(|e| numeric(format!("projection on cell {}: {e}", l + 1)))?;
                values.push(v / tau);
            }
            Ok(PiecewiseConstant::new(values))
        }
    }
}

const GRAM_ORDER_TOL: f64 = 1e-13;

/// Smallest Gauss order, doubling from 8, at which two successive orders
/// agree to `GRAM_ORDER_TOL` relative on the hardest cell of each kind.
fn gram_rules(alpha: f64) -> Result<(GaussRule, GaussRule)> {
    let mut n = 8;
    let jac_cell = |rule: &GaussRule| integrate_left_singular(rule, alpha, 1.0, |s| (s + 1.0).powf(alpha));
    let leg_cell = |rule: &GaussRule| rule.integrate(1.0, 2.0, |s| (s * (s + 1.0)).powf(alpha));
    let mut prev_j = jac_cell(&gauss_jacobi(n, 0.0, alpha));
    let mut prev_l = leg_cell(&gauss_legendre(n));
    while n <= 256 {
        let nj = gauss_jacobi(2 * n, 0.0, alpha);
        let nl = gauss_legendre(2 * n);
        let vj = jac_cell(&nj);
        let vl = leg_cell(&nl);
        if (vj - prev_j).abs() <= GRAM_ORDER_TOL * vj.abs()
            && (vl - prev_l).abs() <= GRAM_ORDER_TOL * vl.abs()
        {
            return Ok((nj, nl));
        }
        prev_j = vj;
        prev_l = vl;
        n *= 2;
    }
    Err(numeric("Gram quadrature order did not settle below 512 nodes"))
}

/// Gram matrix of the cumulative basis for `τ = 1`:
/// `G_{kl} = ∫_0^{K-l+1} s^α (s + l - k)^α ds` for `k ≤ l` (1-based).
///
/// Each integral is split into unit cells; the first cell carries the
/// algebraic singularity and uses a Gauss-Jacobi rule, the rest are smooth.
fn unit_gram(alpha: f64, cells: usize) -> Result<DMatrix<f64>> {
    let (jac, leg) = gram_rules(alpha)?;
    let jac_nodes: Vec<(f64, f64)> = {
        // Jacobi rule with weight (1+x)^α mapped to [0,1]: s = (1+x)/2
        let scale = 0.5f64.powf(alpha) * 0.5;
        jac.nodes
            .iter()
            .zip(&jac.weights)
            .map(|(&x, &w)| (0.5 * (1.0 + x), w * scale))
            .collect()
    };
    let leg_nodes: Vec<(f64, f64)> = leg.mapped(0.0, 1.0).collect();

    let k_cells = cells;
    let mut g = DMatrix::<f64>::zeros(k_cells, k_cells);
    // offset j = l - k >= 1; prefix[m] = ∫_0^m s^α (s+j)^α ds
    for j in 1..k_cells {
        let jf = j as f64;
        let max_len = k_cells - j; // K - l + 1 with l = k + j, k >= 1
        let mut acc = 0.0;
        let mut prefix = Vec::with_capacity(max_len);
        for i in 0..max_len {
            let cell = if i == 0 {
                jac_nodes.iter().map(|&(s, w)| w * (s + jf).powf(alpha)).sum::<f64>()
            } else {
                let base = i as f64;
                leg_nodes
                    .iter()
                    .map(|&(s, w)| {
                        let x = base + s;
                        w * (x * (x + jf)).powf(alpha)
                    })
                    .sum::<f64>()
            };
            acc += cell;
            prefix.push(acc);
        }
        for k in 0..(k_cells - j) {
            let l = k + j;
            let len = k_cells - l; // number of unit cells from t_{l} (0-based l) to T
            let v = prefix[len - 1];
            g[(k, l)] = v;
            g[(l, k)] = v;
        }
    }
    let p = 2.0 * alpha + 1.0;
    for k in 0..k_cells {
        g[(k, k)] = ((k_cells - k) as f64).powf(p) / p;
    }
    Ok(g)
}

/// `∫ φ_k φ_l dt` over `[0, T]`, cumulative basis.
pub fn trial_gram(mesh: &TemporalMesh) -> Result<DMatrix<f64>> {
    let scale = mesh.tau().powf(2.0 * mesh.alpha() + 1.0);
    Ok(unit_gram(mesh.alpha(), mesh.cells())? * scale)
}

/// `(Π_τ ψ_k, Π_τ ψ_l)` for the cumulative basis.
pub fn projected_gram(mesh: &TemporalMesh) -> DMatrix<f64> {
    let alpha = mesh.alpha();
    let k_cells = mesh.cells();
    let d = d_sequence(alpha, k_cells);
    let tau = mesh.tau();
    let scale = tau * (tau.powf(alpha) / (alpha + 1.0)).powi(2);
    let mut a = DMatrix::<f64>::zeros(k_cells, k_cells);
    for k in 0..k_cells {
        for l in k..k_cells {
            // Σ_{n ≥ l} d_{n-k+1} d_{n-l+1}
            let s: f64 = (l..k_cells).map(|n| d[n - k] * d[n - l]).sum();
            a[(k, l)] = scale * s;
            a[(l, k)] = scale * s;
        }
    }
    a
}

/// Smallest eigenvalue of `A x = μ G x`: the best constant in
/// `c ‖v‖² ≤ ‖Π_τ v‖²` over the trial space.
pub fn stability_constant_on(mesh: &TemporalMesh) -> Result<f64> {
    let g = trial_gram(mesh)?;
    let a = projected_gram(mesh);
    min_generalized_eigenvalue(a, g)
}

/// [`stability_constant_on`] for `T = 1`.
pub fn stability_constant(alpha: f64, cells: usize) -> Result<f64> {
    stability_constant_on(&TemporalMesh::new(1.0, cells, alpha)?)
}

fn min_generalized_eigenvalue(a: DMatrix<f64>, g: DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(g).ok_or_else(|| numeric("Gram matrix is not positive definite"))?;
    let l = chol.l();
    // C = L^{-1} A L^{-T}
    let y = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| numeric("singular Cholesky factor"))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| numeric("singular Cholesky factor"))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigenvalues();
    eig.iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
        .filter(|v| v.is_finite())
        .ok_or_else(|| numeric("eigensolver returned no finite eigenvalue"))
}

/// Trial function whose derivative is the L² projection of the given data
/// onto piecewise constants. `dalpha_averages` are the cell averages of `∂^α v`.
pub fn fractional_ritz_project(
    mesh: &TemporalMesh,
    dalpha_averages: &PiecewiseConstant,
) -> Result<TrialCoeffs> {
    if dalpha_averages.values.len() != mesh.cells() {
        return Err(domain("derivative data does not match the grid"));
    }
    let g = mesh.gamma_alpha1();
    Ok(TrialCoeffs::new(
        dalpha_averages.values.iter().map(|v| v / g).collect(),
        BasisVariant::Differenced,
    ))
}
