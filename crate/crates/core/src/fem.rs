//! Piecewise linear finite elements on the unit interval and the unit square.
//!
//! The square is split into `M²` cells, each cut into two triangles by the
//! diagonal from its lower-left to its upper-right corner. Nodes are numbered
//! lexicographically, node `(i, j)` sitting at `(i/M, j/M)`; Dirichlet nodes
//! are eliminated and the interior nodes renumbered in the same order.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{domain, numeric, Result};
use crate::quadrature::{gauss_legendre, triangle_rule};

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    dim: usize,
    m: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
    interior: Vec<Option<usize>>,
    n_interior: usize,
}

pub fn build_mesh(dim: usize, m: usize) -> Result<SpatialMesh> {
    if m < 2 {
        return Err(domain(format!("need at least 2 subdivisions per side, got {m}")));
    }
    let h = 1.0 / m as f64;
    let coord = |i: usize| if i == m { 1.0 } else { i as f64 * h };
    match dim {
        1 => {
            let nodes = (0..=m).map(|i| [coord(i), 0.0]).collect();
            let elements = (0..m).map(|i| vec![i, i + 1]).collect();
            let interior = (0..=m).map(|i| (i > 0 && i < m).then(|| i - 1)).collect();
            Ok(SpatialMesh { dim, m, nodes, elements, interior, n_interior: m - 1 })
        }
        2 => {
            let side = m + 1;
            let mut nodes = Vec::with_capacity(side * side);
            let mut interior = Vec::with_capacity(side * side);
            let mut next = 0;
            for i in 0..=m {
                for j in 0..=m {
                    nodes.push([coord(i), coord(j)]);
                    if i > 0 && i < m && j > 0 && j < m {
                        interior.push(Some(next));
                        next += 1;
                    } else {
                        interior.push(None);
                    }
                }
            }
            let id = |i: usize, j: usize| i * side + j;
            let mut elements = Vec::with_capacity(2 * m * m);
            for i in 0..m {
                for j in 0..m {
                    let (ll, lr, ur, ul) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    elements.push(vec![ll, lr, ur]);
                    elements.push(vec![ll, ur, ul]);
                }
            }
            Ok(SpatialMesh { dim, m, nodes, elements, interior, n_interior: next })
        }
        _ => Err(domain(format!("dimension must be 1 or 2, got {dim}"))),
    }
}

impl SpatialMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subdivisions(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    /// Interior unknown index of a node, `None` on the boundary.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior[node]
    }

    /// Number of interior unknowns `N`.
    pub fn n_dofs(&self) -> usize {
        self.n_interior
    }

    /// Coordinates of the interior nodes in unknown order.
    pub fn dof_coords(&self) -> Vec<[f64; 2]> {
        self.nodes
            .iter()
            .zip(&self.interior)
            .filter_map(|(x, d)| d.map(|_| *x))
            .collect()
    }

    /// Signed measure of an element (length or area).
    pub fn element_measure(&self, e: usize) -> f64 {
        let v = &self.elements[e];
        if self.dim == 1 {
            self.nodes[v[1]][0] - self.nodes[v[0]][0]
        } else {
            let (a, b, c) = (self.nodes[v[0]], self.nodes[v[1]], self.nodes[v[2]]);
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
    }

    /// Interpolate interior nodal values at `x` (boundary values are zero).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        if values.len() != self.n_interior {
            return Err(domain("nodal vector does not match the mesh"));
        }
        if x.len() < self.dim || x[..self.dim].iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(domain(format!("point {x:?} outside the domain")));
        }
        let m = self.m as f64;
        let cell = |c: f64| ((c * m).floor() as usize).min(self.m - 1);
        let val = |node: usize| self.interior[node].map_or(0.0, |d| values[d]);
        if self.dim == 1 {
            let i = cell(x[0]);
            let s = x[0] * m - i as f64;
            return Ok((1.0 - s) * val(i) + s * val(i + 1));
        }
        let (i, j) = (cell(x[0]), cell(x[1]));
        let (s, t) = (x[0] * m - i as f64, x[1] * m - j as f64);
        let side = self.m + 1;
        let id = |a: usize, b: usize| a * side + b;
        Ok(if t <= s {
            // triangle (ll, lr, ur)
            (1.0 - s) * val(id(i, j)) + (s - t) * val(id(i + 1, j)) + t * val(id(i + 1, j + 1))
        } else {
            // triangle (ll, ur, ul)
            (1.0 - t) * val(id(i, j)) + s * val(id(i + 1, j + 1)) + (t - s) * val(id(i, j + 1))
        })
    }
}

/// Symmetric sparse matrix in compressed sparse row form (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Build from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().expect("entry exists") += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseSpd { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        SparseSpd {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = S x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    /// `a S + b other`.
    pub fn lin_comb(&self, a: f64, other: &SparseSpd, b: f64) -> Result<SparseSpd> {
        if self.n != other.n {
            return Err(domain("matrix dimensions differ"));
        }
        if self.row_ptr == other.row_ptr && self.col_idx == other.col_idx {
            let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
            return Ok(SparseSpd { values, ..self.clone() });
        }
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, a * v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, b * v)));
        }
        Ok(Self::from_triplets(self.n, &t))
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }
}

fn local_matrices(mesh: &SpatialMesh, e: usize) -> (Vec<f64>, Vec<f64>) {
    let v = &mesh.elements[e];
    let meas = mesh.element_measure(e);
    if mesh.dim == 1 {
        let (m0, m1) = (meas / 3.0, meas / 6.0);
        let k = 1.0 / meas;
        (vec![m0, m1, m1, m0], vec![k, -k, -k, k])
    } else {
        let p: Vec<[f64; 2]> = v.iter().map(|&n| mesh.nodes[n]).collect();
        // gradients of barycentric coordinates: ∇λ_i = (y_j - y_k, x_k - x_j) / (2A)
        let grads: Vec<[f64; 2]> = (0..3)
            .map(|i| {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                [(p[j][1] - p[k][1]) / (2.0 * meas), (p[k][0] - p[j][0]) / (2.0 * meas)]
            })
            .collect();
        let mut mass = vec![0.0; 9];
        let mut stiff = vec![0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                mass[3 * a + b] = meas / 12.0 * if a == b { 2.0 } else { 1.0 };
                stiff[3 * a + b] = meas * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
            }
        }
        (mass, stiff)
    }
}

fn assemble_with(mesh: &SpatialMesh, index: impl Fn(usize) -> Option<usize>, n: usize) -> (SparseSpd, SparseSpd) {
    let mut tm = Vec::new();
    let mut ta = Vec::new();
    for e in 0..mesh.elements.len() {
        let v = &mesh.elements[e];
        let nv = v.len();
        let (mass, stiff) = local_matrices(mesh, e);
        for a in 0..nv {
            let Some(i) = index(v[a]) else { continue };
            for b in 0..nv {
                let Some(j) = index(v[b]) else { continue };
                tm.push((i, j, mass[nv * a + b]));
                ta.push((i, j, stiff[nv * a + b]));
            }
        }
    }
    (SparseSpd::from_triplets(n, &tm), SparseSpd::from_triplets(n, &ta))
}

/// Mass and stiffness matrices on the interior unknowns.
pub fn assemble(mesh: &SpatialMesh) -> (SparseSpd, SparseSpd) {
    assemble_with(mesh, |node| mesh.interior[node], mesh.n_interior)
}

/// Mass and stiffness matrices on all nodes, boundary included.
pub fn assemble_full(mesh: &SpatialMesh) -> (SparseSpd, SparseSpd) {
    assemble_with(mesh, Some, mesh.nodes.len())
}

/// `(w, φ_i)` for the interior basis functions; exact for polynomials of
/// degree 5 on each element.
pub fn load_vector<W: Fn(&[f64]) -> f64>(mesh: &SpatialMesh, w: W) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_interior];
    if mesh.dim == 1 {
        let rule = gauss_legendre(3);
        for v in &mesh.elements {
            let (a, b) = (mesh.nodes[v[0]][0], mesh.nodes[v[1]][0]);
            for (x, wt) in rule.mapped(a, b) {
                let s = (x - a) / (b - a);
                let val = w(&[x]) * wt;
                if let Some(i) = mesh.interior[v[0]] {
                    f[i] += val * (1.0 - s);
                }
                if let Some(i) = mesh.interior[v[1]] {
                    f[i] += val * s;
                }
            }
        }
    } else {
        let rule = triangle_rule();
        for (e, v) in mesh.elements.iter().enumerate() {
            let area = mesh.element_measure(e);
            let p: Vec<[f64; 2]> = v.iter().map(|&n| mesh.nodes[n]).collect();
            for (bary, wt) in rule.iter() {
                let x = [
                    bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                    bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
                ];
                let val = w(&x) * wt * area;
                for a in 0..3 {
                    if let Some(i) = mesh.interior[v[a]] {
                        f[i] += val * bary[a];
                    }
                }
            }
        }
    }
    f
}

/// Generalized eigenpairs `A ψ = λ M ψ`, ascending, with `ψ^T M ψ = 1`.
#[derive(Debug, Clone)]
pub struct SpatialEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors.
    pub vectors: DMatrix<f64>,
}

const DENSE_EIGEN_LIMIT: usize = 4000;

pub fn eigendecompose(mass: &SparseSpd, stiffness: &SparseSpd, count: usize) -> Result<SpatialEigen> {
    let n = mass.dim();
    if stiffness.dim() != n {
        return Err(domain("mass and stiffness dimensions differ"));
    }
    if count > n {
        return Err(domain(format!("asked for {count} eigenpairs of a {n}-dimensional problem")));
    }
    if n > DENSE_EIGEN_LIMIT {
        return Err(domain(format!("dense eigensolver limited to {DENSE_EIGEN_LIMIT} unknowns, got {n}")));
    }
    let chol = Cholesky::new(mass.to_dense()).ok_or_else(|| numeric("mass matrix is not positive definite"))?;
    let l = chol.l();
    let a = stiffness.to_dense();
    let y = l.solve_lower_triangular(&a).ok_or_else(|| numeric("singular mass factor"))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| numeric("singular mass factor"))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order.truncate(count);
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(numeric("eigensolver produced non-finite eigenvalues"));
    }
    let z = DMatrix::from_fn(n, count, |r, c| eig.eigenvectors[(r, order[c])]);
    // ψ = L^{-T} z
    let vectors = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| numeric("singular mass factor"))?;
    Ok(SpatialEigen { values, vectors })
}

/// Which algorithm [`SpdSolver`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Banded Cholesky when the band fits in memory comfortably, otherwise CG.
    #[default]
    Auto,
    Direct,
    Cg,
}

/// Banded direct factorization is used while `N · (bandwidth+1)` stays below this.
const BAND_STORAGE_LIMIT: usize = 50_000_000;

/// A factorization (or CG setup) of an SPD matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    matrix: SparseSpd,
    norm: f64,
    tol: f64,
    method: Method,
}

#[derive(Debug, Clone)]
enum Method {
    /// Row `i` holds `L[i, i-bw..=i]`.
    Banded { bw: usize, l: Vec<f64> },
    Cg { inv_diag: Vec<f64> },
}

impl SpdSolver {
    pub fn new(matrix: &SparseSpd, tol: f64, kind: SolverKind) -> Result<Self> {
        let n = matrix.dim();
        let bw = matrix.bandwidth();
        let direct = match kind {
            SolverKind::Direct => true,
            SolverKind::Cg => false,
            SolverKind::Auto => n * (bw + 1) <= BAND_STORAGE_LIMIT,
        };
        let method = if direct {
            Method::Banded { bw, l: banded_cholesky(matrix, bw)? }
        } else {
            let diag = matrix.diagonal();
            if diag.iter().any(|d| !(*d > 0.0)) {
                return Err(numeric("matrix has a nonpositive diagonal entry"));
            }
            Method::Cg { inv_diag: diag.iter().map(|d| 1.0 / d).collect() }
        };
        Ok(SpdSolver { matrix: matrix.clone(), norm: matrix.norm_inf(), tol, method })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.method, Method::Banded { .. })
    }

    /// Solve `S x = b`; the result satisfies
    /// `‖b - Sx‖∞ <= tol (‖S‖∞ ‖x‖∞ + ‖b‖∞)`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(domain("right-hand side does not match the matrix"));
        }
        match &self.method {
            Method::Banded { bw, l } => {
                let mut x = b.to_vec();
                banded_solve(l, *bw, &mut x);
                let mut r = vec![0.0; n];
                for _ in 0..4 {
                    self.matrix.mul_vec_into(&x, &mut r);
                    for (ri, bi) in r.iter_mut().zip(b) {
                        *ri = bi - *ri;
                    }
                    if self.accepts(&r, &x, b) {
                        return Ok(x);
                    }
                    banded_solve(l, *bw, &mut r);
                    for (xi, di) in x.iter_mut().zip(&r) {
                        *xi += di;
                    }
                }
                self.matrix.mul_vec_into(&x, &mut r);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri = bi - *ri;
                }
                if self.accepts(&r, &x, b) {
                    Ok(x)
                } else {
                    Err(numeric(format!(
                        "direct solve residual {:.3e} above tolerance after refinement",
                        max_abs(&r)
                    )))
                }
            }
            Method::Cg { inv_diag } => self.pcg(b, inv_diag),
        }
    }

    fn accepts(&self, r: &[f64], x: &[f64], b: &[f64]) -> bool {
        max_abs(r) <= self.tol * (self.norm * max_abs(x) + max_abs(b))
    }

    fn pcg(&self, b: &[f64], inv_diag: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        if max_abs(b) == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut q = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let cap = 10 * n.max(1);
        for _ in 0..cap {
            self.matrix.mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(numeric("conjugate gradients met a nonpositive curvature"));
            }
            let step = rz / pq;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * q[i];
            }
            // true residual check guards against drift in the recursion
            if max_abs(&r) <= 0.5 * self.tol * (self.norm * max_abs(&x) + max_abs(b)) {
                let mut true_r = self.matrix.mul_vec(&x);
                for (ri, bi) in true_r.iter_mut().zip(b) {
                    *ri = bi - *ri;
                }
                if self.accepts(&true_r, &x, b) {
                    return Ok(x);
                }
                r = true_r;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(numeric(format!("conjugate gradients did not converge in {cap} iterations")))
    }
}

/// One-shot solve; see [`SpdSolver::solve`].
pub fn spd_solve(matrix: &SparseSpd, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    SpdSolver::new(matrix, tol, SolverKind::Auto)?.solve(rhs)
}

fn banded_cholesky(a: &SparseSpd, bw: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let w = bw + 1;
    let mut l = vec![0.0; n * w];
    // entry (i, j), j in [i-bw, i], lives at i*w + (j + bw - i)
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j <= i {
                l[i * w + (j + bw - i)] = v;
            }
        }
    }
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        for j in lo..=i {
            let jlo = j.saturating_sub(bw).max(lo);
            let mut s = l[i * w + (j + bw - i)];
            for k in jlo..j {
                s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
            }
            if j == i {
                if !(s > 0.0) {
                    return Err(numeric(format!("matrix is not positive definite (pivot {i})")));
                }
                l[i * w + bw] = s.sqrt();
            } else {
                l[i * w + (j + bw - i)] = s / l[j * w + bw];
            }
        }
    }
    Ok(l)
}

fn banded_solve(l: &[f64], bw: usize, x: &mut [f64]) {
    let n = x.len();
    let w = bw + 1;
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let mut s = x[i];
        for k in lo..i {
            s -= l[i * w + (k + bw - i)] * x[k];
        }
        x[i] = s / l[i * w + bw];
    }
    for i in (0..n).rev() {
        let hi = (i + bw).min(n - 1);
        let mut s = x[i];
        for k in i + 1..=hi {
            s -= l[k * w + (i + bw - k)] * x[k];
        }
        x[i] = s / l[i * w + bw];
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `L²` projection of `w` onto the interior P1 space.
pub fn l2_project_space<W: Fn(&[f64]) -> f64>(mesh: &SpatialMesh, mass: &SparseSpd, w: W) -> Result<Vec<f64>> {
    spd_solve(mass, &load_vector(mesh, w), 1e-13)
}

/// `‖v‖²_{M}` helper for nodal vectors.
pub fn mass_norm_sq(mass: &SparseSpd, v: &[f64]) -> f64 {
    mass.quad_form(v)
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn mesh_counts() {
        let m = build_mesh(1, 4).unwrap();
        assert_eq!(m.n_dofs(), 3);
        let xs: Vec<f64> = m.dof_coords().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);
        let m = build_mesh(2, 2).unwrap();
        assert_eq!(m.n_dofs(), 1);
        assert_eq!(m.elements().len(), 8);
        let m = build_mesh(2, 16).unwrap();
        assert_eq!(m.n_dofs(), 225);
        assert_eq!(m.elements().len(), 512);
        for e in 0..512 {
            assert!((m.element_measure(e) - 0.5 / 256.0).abs() < 1e-16);
        }
        assert!(build_mesh(1, 1).is_err());
        assert!(build_mesh(3, 4).is_err());
    }

    #[test]
    fn nested_refinement() {
        for dim in [1, 2] {
            let coarse = build_mesh(dim, 6).unwrap();
            let fine = build_mesh(dim, 12).unwrap();
            for p in coarse.nodes() {
                assert!(fine.nodes().iter().any(|q| q == p), "{p:?}");
            }
        }
    }

    #[test]
    fn one_dimensional_matrices() {
        let (mass, stiff) = assemble(&build_mesh(1, 4).unwrap());
        for i in 0..3 {
            assert!((stiff.get(i, i) - 8.0).abs() < 1e-14);
            assert!((mass.get(i, i) - 1.0 / 6.0).abs() < 1e-15);
        }
        for i in 0..2 {
            assert!((stiff.get(i, i + 1) + 4.0).abs() < 1e-14);
            assert!((mass.get(i, i + 1) - 1.0 / 24.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_dimensional_solve_by_hand() {
        // 4 tridiag(-1, 2, -1) x = e_1  ⇒  x = (3, 2, 1) / 16
        let (_, stiff) = assemble(&build_mesh(1, 4).unwrap());
        let x = spd_solve(&stiff, &[1.0, 0.0, 0.0], 1e-12).unwrap();
        for (a, b) in x.iter().zip(&[3.0 / 16.0, 0.125, 1.0 / 16.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_interior_node_in_two_dimensions() {
        // node (1/2, 1/2) touches six triangles of area 1/8: A = 4, M = 6 · (1/8) · (2/12) = 1/8
        let (mass, stiff) = assemble(&build_mesh(2, 2).unwrap());
        assert!((stiff.get(0, 0) - 4.0).abs() < 1e-14);
        assert!((mass.get(0, 0) - 0.125).abs() < 1e-15);
        let eig = eigendecompose(&mass, &stiff, 1).unwrap();
        assert!((eig.values[0] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_and_symmetry_before_elimination() {
        for dim in [1, 2] {
            let (mass, stiff) = assemble_full(&build_mesh(dim, 7).unwrap());
            let ones = vec![1.0; stiff.dim()];
            assert!(max_abs(&stiff.mul_vec(&ones)) < 1e-12);
            assert!(stiff.max_asymmetry() < 1e-14 && mass.max_asymmetry() < 1e-14);
            // the full mass matrix integrates the partition of unity to |Ω| = 1
            assert!((mass.quad_form(&ones) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn interior_mass_of_partition_of_unity() {
        // ∫(Σ φ_i)² over the interior basis: 1 - 2h + 2h/3
        for m in [4usize, 10, 33] {
            let h = 1.0 / m as f64;
            let (mass, _) = assemble(&build_mesh(1, m).unwrap());
            let ones = vec![1.0; mass.dim()];
            assert!((mass.quad_form(&ones) - (1.0 - 4.0 * h / 3.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenvalues_approximate_the_laplacian() {
        let mesh = build_mesh(1, 100).unwrap();
        let (mass, stiff) = assemble(&mesh);
        let eig = eigendecompose(&mass, &stiff, 3).unwrap();
        assert!((eig.values[0] / (PI * PI) - 1.0).abs() < 5e-3);
        assert!((eig.values[1] / (4.0 * PI * PI) - 1.0).abs() < 1e-2);
        let mesh = build_mesh(2, 16).unwrap();
        let (mass, stiff) = assemble(&mesh);
        let eig = eigendecompose(&mass, &stiff, 2).unwrap();
        assert!((eig.values[0] / (2.0 * PI * PI) - 1.0).abs() < 2e-2);
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal() {
        let mesh = build_mesh(2, 8).unwrap();
        let (mass, stiff) = assemble(&mesh);
        let n = mass.dim();
        let eig = eigendecompose(&mass, &stiff, n).unwrap();
        let m = mass.to_dense();
        let a = stiff.to_dense();
        let gram = eig.vectors.transpose() * &m * &eig.vectors;
        assert!((gram - DMatrix::identity(n, n)).abs().max() < 1e-10);
        for j in 0..n {
            let v = eig.vectors.column(j);
            let r = &a * v - &m * v * eig.values[j];
            assert!(r.abs().max() < 1e-9 * eig.values[j].max(1.0));
        }
        for w in eig.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(eigendecompose(&mass, &stiff, n + 1).is_err());
    }

    #[test]
    fn identity_and_random_spd_solves() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(spd_solve(&SparseSpd::identity(3), &b, 1e-12).unwrap(), b);
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let g = DMatrix::from_fn(50, 50, |_, _| rng.gen_range(-1.0..1.0));
        let s = g.transpose() * &g + DMatrix::identity(50, 50) * 5.0;
        let sp = SparseSpd::from_dense(&s);
        let rhs: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for kind in [SolverKind::Direct, SolverKind::Cg] {
            let x = SpdSolver::new(&sp, 1e-13, kind).unwrap().solve(&rhs).unwrap();
            let r: Vec<f64> = sp.mul_vec(&x).iter().zip(&rhs).map(|(a, b)| a - b).collect();
            let rel = dot(&r, &r).sqrt() / dot(&rhs, &rhs).sqrt();
            assert!(rel <= 1e-12, "{kind:?}: {rel}");
        }
    }

    #[test]
    fn cg_and_banded_agree_on_a_step_matrix() {
        let mesh = build_mesh(2, 20).unwrap();
        let (mass, stiff) = assemble(&mesh);
        let s = mass.lin_comb(0.0886, &stiff, 0.0316).unwrap();
        let f = load_vector(&mesh, |x| x[0] * (1.0 - x[1]).exp());
        let a = SpdSolver::new(&s, 1e-13, SolverKind::Direct).unwrap();
        let b = SpdSolver::new(&s, 1e-13, SolverKind::Cg).unwrap();
        assert!(a.is_direct() && !b.is_direct());
        let xa = a.solve(&f).unwrap();
        let xb = b.solve(&f).unwrap();
        let diff = xa.iter().zip(&xb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10 * max_abs(&xa));
    }

    #[test]
    fn cg_iteration_cap_is_reported() {
        // indefinite matrix: CG must fail rather than return garbage
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let s = SparseSpd::from_dense(&d);
        assert!(SpdSolver::new(&s, 1e-12, SolverKind::Cg).unwrap().solve(&[1.0, 0.0]).is_err());
        assert!(SpdSolver::new(&s, 1e-12, SolverKind::Direct).is_err());
    }

    #[test]
    fn projection_reproduces_p1_functions() {
        for dim in [1, 2] {
            let mesh = build_mesh(dim, 8).unwrap();
            let (mass, _) = assemble(&mesh);
            // interior P1 member: the hat at one interior node
            let hat = |x: &[f64]| {
                let mut v = vec![0.0; mesh.n_dofs()];
                v[mesh.n_dofs() / 2] = 1.0;
                mesh.interpolate(&v, x).unwrap()
            };
            let p = l2_project_space(&mesh, &mass, hat).unwrap();
            for (i, v) in p.iter().enumerate() {
                let want = if i == mesh.n_dofs() / 2 { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "dim {dim}");
            }
        }
    }

    #[test]
    fn projection_error_is_second_order() {
        let mut errs = Vec::new();
        for m in [16usize, 32, 64] {
            let mesh = build_mesh(1, m).unwrap();
            let (mass, _) = assemble(&mesh);
            let p = l2_project_space(&mesh, &mass, |x| x[0] * (1.0 - x[0])).unwrap();
            let rule = gauss_legendre(6);
            let mut e = 0.0;
            for k in 0..m {
                let (a, b) = (k as f64 / m as f64, (k + 1) as f64 / m as f64);
                for (x, w) in rule.mapped(a, b) {
                    e += w * (mesh.interpolate(&p, &[x]).unwrap() - x * (1.0 - x)).powi(2);
                }
            }
            errs.push(e.sqrt());
        }
        for w in errs.windows(2) {
            assert!(((w[0] / w[1]).log2() - 2.0).abs() < 0.1, "{errs:?}");
        }
    }

    #[test]
    fn projection_of_constant_small_oracle() {
        // M c = (h, h, h) for w ≡ 1 on M = 4; dense oracle
        let mesh = build_mesh(1, 4).unwrap();
        let (mass, _) = assemble(&mesh);
        let p = l2_project_space(&mesh, &mass, |_| 1.0).unwrap();
        let dense = mass.to_dense();
        let oracle = dense.cholesky().unwrap().solve(&DVector::from_element(3, 0.25));
        for i in 0..3 {
            assert!((p[i] - oracle[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn load_vector_examples() {
        let mesh = build_mesh(1, 8).unwrap();
        let h = 0.125;
        let ones = load_vector(&mesh, |_| 1.0);
        assert!(ones.iter().all(|v| (v - h).abs() < 1e-15));
        let bubble = load_vector(&mesh, |x| x[0] * (1.0 - x[0]));
        for (i, v) in bubble.iter().enumerate() {
            let x = (i + 1) as f64 * h;
            assert!((v - h * (x * (1.0 - x) - h * h / 6.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolation_matches_nodes_and_vanishes_on_boundary() {
        let mesh = build_mesh(2, 5).unwrap();
        let vals: Vec<f64> = (0..mesh.n_dofs()).map(|i| (i as f64).sin()).collect();
        for (i, p) in mesh.dof_coords().iter().enumerate() {
            assert!((mesh.interpolate(&vals, p).unwrap() - vals[i]).abs() < 1e-14);
        }
        assert_eq!(mesh.interpolate(&vals, &[0.0, 0.3]).unwrap(), 0.0);
        assert_eq!(mesh.interpolate(&vals, &[0.7, 1.0]).unwrap(), 0.0);
        assert!(mesh.interpolate(&vals, &[1.1, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn mass_is_positive_on_random_vectors(v in proptest::collection::vec(-1.0f64..1.0, 49)) {
            let mesh = build_mesh(2, 8).unwrap();
            let (mass, stiff) = assemble(&mesh);
            prop_assume!(v.iter().any(|x| *x != 0.0));
            prop_assert!(mass.quad_form(&v) > 0.0);
            prop_assert!(stiff.quad_form(&v) > 0.0);
        }
    }
}
