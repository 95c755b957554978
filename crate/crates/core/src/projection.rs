//! Euclidean projection onto polyhedra.
//!
//! A polyhedron is `{v : a_iᵀv ≥ b_i, e_jᵀv = d_j}`. The projection of `p`
//! is found by a primal active-set method on the dual problem
//!
//! ```text
//!   min_w  ½ wᵀ M w − cᵀw   s.t.  w_i ≥ 0 for inequality rows,
//! ```
//!
//! with `N = [A | E]`, `M = NᵀN`, `c = [b − Aᵀp ; d − Eᵀp]`, and the primal
//! point recovered as `v = p + N w`. This is Lawson–Hanson NNLS with the
//! equality multipliers kept permanently free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Added to the diagonal of the working Gram matrix before factorization.
pub const GRAM_REGULARIZATION: f64 = 1e-12;

/// `{v | normalsᵀv ≥ offsets, eq_normalsᵀv = eq_offsets}`; columns are rows of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
    pub eq_normals: DMatrix<f64>,
    pub eq_offsets: DVector<f64>,
}

impl Polyhedron {
    /// All of ℝⁿ.
    pub fn whole_space(dim: usize) -> Self {
        Self {
            normals: DMatrix::zeros(dim, 0),
            offsets: DVector::zeros(0),
            eq_normals: DMatrix::zeros(dim, 0),
            eq_offsets: DVector::zeros(0),
        }
    }

    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        let dim = normals.nrows();
        Self::with_equalities(normals, offsets, DMatrix::zeros(dim, 0), DVector::zeros(0))
    }

    pub fn with_equalities(
        normals: DMatrix<f64>,
        offsets: DVector<f64>,
        eq_normals: DMatrix<f64>,
        eq_offsets: DVector<f64>,
    ) -> Result<Self> {
        if offsets.len() != normals.ncols() {
            return Err(Error::DimensionMismatch {
                what: "inequality offsets",
                expected: normals.ncols(),
                found: offsets.len(),
            });
        }
        if eq_normals.nrows() != normals.nrows() {
            return Err(Error::DimensionMismatch {
                what: "equality normals",
                expected: normals.nrows(),
                found: eq_normals.nrows(),
            });
        }
        if eq_offsets.len() != eq_normals.ncols() {
            return Err(Error::DimensionMismatch {
                what: "equality offsets",
                expected: eq_normals.ncols(),
                found: eq_offsets.len(),
            });
        }
        if normals.iter().chain(eq_normals.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "polyhedron normals must be finite".into(),
            ));
        }
        Ok(Self {
            normals,
            offsets,
            eq_normals,
            eq_offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.normals.nrows()
    }

    pub fn num_inequalities(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_normals.ncols()
    }

    /// Total number of rows handed to the solver.
    pub fn num_rows(&self) -> usize {
        self.num_inequalities() + self.num_equalities()
    }

    pub fn push_inequality(&mut self, normal: &DVector<f64>, offset: f64) {
        let k = self.normals.ncols();
        let normals = std::mem::replace(&mut self.normals, DMatrix::zeros(0, 0));
        self.normals = normals.insert_column(k, 0.0);
        self.normals.set_column(k, normal);
        let offsets = std::mem::replace(&mut self.offsets, DVector::zeros(0));
        self.offsets = offsets.push(offset);
    }

    pub fn push_equality(&mut self, normal: &DVector<f64>, offset: f64) {
        let q = self.eq_normals.ncols();
        let normals = std::mem::replace(&mut self.eq_normals, DMatrix::zeros(0, 0));
        self.eq_normals = normals.insert_column(q, 0.0);
        self.eq_normals.set_column(q, normal);
        let offsets = std::mem::replace(&mut self.eq_offsets, DVector::zeros(0));
        self.eq_offsets = offsets.push(offset);
    }

    /// Inequality slacks `a_iᵀv − b_i`.
    pub fn slacks(&self, v: &DVector<f64>) -> DVector<f64> {
        self.normals.tr_mul(v) - &self.offsets
    }

    /// Largest violation of any row at `v` (zero when `v` is inside).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        let ineq = self.slacks(v).iter().fold(0.0_f64, |m, &s| m.max(-s));
        let eq = (self.eq_normals.tr_mul(v) - &self.eq_offsets)
            .iter()
            .fold(0.0_f64, |m, &s| m.max(s.abs()));
        ineq.max(eq)
    }

    /// Columns of `[A | E]`.
    fn stacked_normals(&self) -> DMatrix<f64> {
        let (n, k, q) = (self.dim(), self.num_inequalities(), self.num_equalities());
        let mut stacked = DMatrix::zeros(n, k + q);
        stacked.columns_mut(0, k).copy_from(&self.normals);
        stacked.columns_mut(k, q).copy_from(&self.eq_normals);
        stacked
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// The projected point.
    pub v: DVector<f64>,
    /// `v − p`; equals `Σ λ_i a_i + Σ μ_j e_j`.
    pub r: DVector<f64>,
    /// Inequality multipliers first, then equality multipliers.
    pub multipliers: DVector<f64>,
    /// Inequalities tight at `v`, ascending.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub tol: f64,
    /// Defaults to `50·(k+q+1)` when unset.
    pub max_iter: Option<usize>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_iter: None,
        }
    }
}

impl ProjectionOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            max_iter: None,
        }
    }
}

/// Closed-form projection onto `{v | aᵀv ≥ b}`.
pub fn halfspace_projection(p: &DVector<f64>, a: &DVector<f64>, b: f64) -> Result<DVector<f64>> {
    let norm_sq = a.norm_squared();
    if !(norm_sq > 0.0) {
        return Err(Error::DegenerateNormal);
    }
    let value = a.dot(p);
    if value >= b {
        Ok(p.clone())
    } else {
        Ok(p + a * ((b - value) / norm_sq))
    }
}

pub fn project_onto_polyhedron(
    p: &DVector<f64>,
    poly: &Polyhedron,
    tol: f64,
) -> Result<ProjectionResult> {
    project_warm(p, poly, &ProjectionOptions::with_tol(tol), &[])
}

/// Projection warm-started from a guess of the active inequality rows.
///
/// Indices in `warm` outside `0..k` are ignored.
pub fn project_warm(
    p: &DVector<f64>,
    poly: &Polyhedron,
    options: &ProjectionOptions,
    warm: &[usize],
) -> Result<ProjectionResult> {
    if p.len() != poly.dim() {
        return Err(Error::DimensionMismatch {
            what: "projection point",
            expected: poly.dim(),
            found: p.len(),
        });
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let k = poly.num_inequalities();
    let q = poly.num_equalities();
    if k + q == 0 {
        return Ok(ProjectionResult {
            v: p.clone(),
            r: DVector::zeros(p.len()),
            multipliers: DVector::zeros(0),
            active_set: Vec::new(),
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    DualActiveSet::new(p, poly, options).solve(warm)
}

struct DualActiveSet<'a> {
    p: &'a DVector<f64>,
    poly: &'a Polyhedron,
    stacked: DMatrix<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    k: usize,
    tol: f64,
    max_iter: usize,
    regularization: f64,
}

impl<'a> DualActiveSet<'a> {
    fn new(p: &'a DVector<f64>, poly: &'a Polyhedron, options: &ProjectionOptions) -> Self {
        let k = poly.num_inequalities();
        let q = poly.num_equalities();
        let stacked = poly.stacked_normals();
        let gram = stacked.tr_mul(&stacked);
        let mut rhs = DVector::zeros(k + q);
        let ap = stacked.tr_mul(p);
        for j in 0..k {
            rhs[j] = poly.offsets[j] - ap[j];
        }
        for j in 0..q {
            rhs[k + j] = poly.eq_offsets[j] - ap[k + j];
        }
        let diag_scale = gram.diagonal().iter().fold(1.0_f64, |m, &d| m.max(d));
        Self {
            p,
            poly,
            stacked,
            gram,
            rhs,
            k,
            tol: options.tol,
            max_iter: options.max_iter.unwrap_or(50 * (k + q + 1)),
            regularization: GRAM_REGULARIZATION * diag_scale,
        }
    }

    fn rows(&self) -> usize {
        self.rhs.len()
    }

    /// Solve the regularized normal equations restricted to `passive`.
    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let size = passive.len();
        let mut full = DVector::zeros(self.rows());
        if size == 0 {
            return full;
        }
        let mut sub = DMatrix::zeros(size, size);
        let mut sub_rhs = DVector::zeros(size);
        for (a, &i) in passive.iter().enumerate() {
            sub_rhs[a] = self.rhs[i];
            for (b, &j) in passive.iter().enumerate() {
                sub[(a, b)] = self.gram[(i, j)];
            }
            sub[(a, a)] += self.regularization;
        }
        let mut unregularized = sub.clone();
        for a in 0..size {
            unregularized[(a, a)] -= self.regularization;
        }
        let z = match sub.clone().cholesky() {
            Some(chol) => {
                // Two refinement sweeps remove most of the regularization bias.
                let mut z = chol.solve(&sub_rhs);
                for _ in 0..2 {
                    let residual = &sub_rhs - &unregularized * &z;
                    z += chol.solve(&residual);
                }
                z
            }
            None => sub
                .lu()
                .solve(&sub_rhs)
                .unwrap_or_else(|| DVector::from_element(size, f64::INFINITY)),
        };
        for (a, &i) in passive.iter().enumerate() {
            full[i] = z[a];
        }
        full
    }

    /// Dual gradient `M w − c`; for inequality rows this is the primal slack.
    fn dual_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.gram * w - &self.rhs
    }

    fn scale(&self) -> f64 {
        1.0 + self.rhs.amax()
    }

    fn passive_inconsistent(&self, w: &DVector<f64>, passive: &[usize]) -> bool {
        if w.iter().any(|x| !x.is_finite()) {
            return true;
        }
        let grad = self.dual_gradient(w);
        let threshold = 1e-6 * self.scale();
        passive.iter().any(|&i| grad[i].abs() > threshold)
    }

    /// Direction `d` with `M_PP d = 0` and `c_Pᵀd > 0`, if the restricted dual
    /// problem is unbounded (the tight rows of `passive` are inconsistent).
    fn unbounded_direction(&self, passive: &[usize]) -> Option<DVector<f64>> {
        let size = passive.len();
        let sub = DMatrix::from_fn(size, size, |a, b| self.gram[(passive[a], passive[b])]);
        let sub_rhs = DVector::from_fn(size, |a, _| self.rhs[passive[a]]);
        let eig = sub.symmetric_eigen();
        let top = eig.eigenvalues.amax().max(1.0);
        let mut d = DVector::zeros(size);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() <= 1e-10 * top {
                let u = eig.eigenvectors.column(i);
                d += u * u.dot(&sub_rhs);
            }
        }
        if d.amax() <= 1e-12 * self.scale() {
            return None;
        }
        let mut full = DVector::zeros(self.rows());
        for (a, &i) in passive.iter().enumerate() {
            full[i] = d[a];
        }
        Some(full)
    }

    fn solve(&self, warm: &[usize]) -> Result<ProjectionResult> {
        let k = self.k;
        let mut in_passive = vec![false; self.rows()];
        for flag in in_passive.iter_mut().skip(k) {
            *flag = true;
        }
        for &j in warm {
            if j < k {
                in_passive[j] = true;
            }
        }
        let collect = |flags: &[bool]| -> Vec<usize> {
            flags
                .iter()
                .enumerate()
                .filter_map(|(i, &f)| f.then_some(i))
                .collect()
        };

        let mut iterations = 0usize;
        // Feasible dual start: drop warm rows until their multipliers are
        // nonnegative, or all of them if they are mutually inconsistent.
        let mut w = loop {
            let passive = collect(&in_passive);
            let z = self.solve_passive(&passive);
            if self.passive_inconsistent(&z, &passive) {
                if passive.iter().any(|&i| i < k) {
                    in_passive[..k].fill(false);
                    iterations += 1;
                    continue;
                }
                return Err(Error::EmptyPolyhedron);
            }
            let negative: Vec<usize> = passive
                .iter()
                .copied()
                .filter(|&i| i < k && !(z[i] > 0.0))
                .collect();
            if negative.is_empty() {
                break z;
            }
            for i in negative {
                in_passive[i] = false;
            }
            iterations += 1;
        };

        loop {
            if iterations >= self.max_iter {
                return Err(self.iteration_limit(&w));
            }
            let grad = self.dual_gradient(&w);
            // Most violated inactive inequality; lowest index on ties.
            let mut entering: Option<usize> = None;
            let mut worst = -self.tol;
            for j in 0..k {
                if !in_passive[j] && grad[j] < worst {
                    worst = grad[j];
                    entering = Some(j);
                }
            }
            let Some(_) = entering.map(|j| in_passive[j] = true) else {
                break;
            };
            iterations += 1;

            loop {
                let passive = collect(&in_passive);
                let z = self.solve_passive(&passive);
                let (target, ray) = if self.passive_inconsistent(&z, &passive) {
                    match self.unbounded_direction(&passive) {
                        Some(d) => (d, true),
                        None => return Err(Error::EmptyPolyhedron),
                    }
                } else {
                    (z, false)
                };
                // Ratio test along the segment w → z, or along the ray w + θd.
                let mut theta = if ray { f64::INFINITY } else { 1.0 };
                let mut leaving: Option<usize> = None;
                for &i in &passive {
                    if i >= k {
                        continue;
                    }
                    let (blocks, ratio) = if ray {
                        (target[i] < 0.0, w[i] / -target[i])
                    } else {
                        let denom = w[i] - target[i];
                        (!(target[i] > 0.0), if denom > 0.0 { w[i] / denom } else { 0.0 })
                    };
                    if blocks && (leaving.is_none() || ratio < theta) {
                        theta = ratio;
                        leaving = Some(i);
                    }
                }
                let Some(leaving) = leaving else {
                    if ray {
                        // Nonnegative ray with N d = 0 and cᵀd > 0: Farkas certificate.
                        return Err(Error::EmptyPolyhedron);
                    }
                    w = target;
                    break;
                };
                if ray {
                    w += &target * theta;
                } else {
                    w += (&target - &w) * theta;
                }
                w[leaving] = 0.0;
                for &i in &passive {
                    if i < k && w[i] <= 0.0 {
                        w[i] = 0.0;
                        in_passive[i] = false;
                    }
                }
                iterations += 1;
                if iterations >= self.max_iter {
                    return Err(self.iteration_limit(&w));
                }
            }
        }

        let r = &self.stacked * &w;
        let v = self.p + &r;
        let kkt = kkt_residual(self.p, self.poly, &v, &w);
        // Relative to the magnitude of the data; far-away points lose absolute digits.
        let magnitude = 1.0 + self.p.amax().max(self.rhs.amax());
        if kkt > self.tol * magnitude {
            return Err(Error::IterationLimit {
                best: v.iter().copied().collect(),
                kkt_residual: kkt,
            });
        }
        let slacks = self.poly.slacks(&v);
        let active_set = (0..k)
            .filter(|&i| {
                let tight = self.tol * (1.0 + self.poly.offsets[i].abs());
                slacks[i].abs() <= tight || w[i] > 0.0
            })
            .collect();
        Ok(ProjectionResult {
            v,
            r,
            multipliers: w,
            active_set,
            kkt_residual: kkt,
            iterations,
        })
    }

    fn iteration_limit(&self, w: &DVector<f64>) -> Error {
        let v = self.p + &self.stacked * w;
        // Diverging multipliers certify an empty feasible region.
        if !(w.amax() < 1e8 * self.scale()) {
            return Error::EmptyPolyhedron;
        }
        Error::IterationLimit {
            kkt_residual: kkt_residual(self.p, self.poly, &v, w),
            best: v.iter().copied().collect(),
        }
    }
}

/// Largest violation of the projection optimality conditions at `(v, λ, μ)`.
///
/// Stationarity is `v − p − Σλ_i a_i − Σμ_j e_j = 0` for rows `a_iᵀv ≥ b_i`.
pub fn kkt_residual(
    p: &DVector<f64>,
    poly: &Polyhedron,
    v: &DVector<f64>,
    multipliers: &DVector<f64>,
) -> f64 {
    let k = poly.num_inequalities();
    let q = poly.num_equalities();
    debug_assert_eq!(multipliers.len(), k + q);
    let lambda = multipliers.rows(0, k);
    let mu = multipliers.rows(k, q);
    let stationarity = v - p - &poly.normals * lambda - &poly.eq_normals * mu;
    let mut residual = stationarity.amax();
    let slacks = poly.slacks(v);
    for i in 0..k {
        residual = residual
            .max(-slacks[i])
            .max(-lambda[i])
            .max((lambda[i] * slacks[i]).abs());
    }
    let eq = poly.eq_normals.tr_mul(v) - &poly.eq_offsets;
    residual.max(eq.amax())
}

/// Exhaustive active-set enumeration; ground truth for small instances.
pub mod oracle {
    use super::*;

    pub const MAX_DIM: usize = 8;
    pub const MAX_ROWS: usize = 8;

    /// Solves the equality-constrained least-squares problem for every subset of
    /// inequalities and keeps the closest candidate satisfying all KKT sign
    /// conditions. Uses an SVD pseudo-inverse, independent of the solver path.
    pub fn enumerate_active_sets_oracle(
        p: &DVector<f64>,
        poly: &Polyhedron,
    ) -> Result<DVector<f64>> {
        let n = poly.dim();
        let k = poly.num_inequalities();
        let q = poly.num_equalities();
        if n > MAX_DIM || k + q > MAX_ROWS {
            return Err(Error::OracleTooLarge);
        }
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                what: "projection point",
                expected: n,
                found: p.len(),
            });
        }
        const SIGN_TOL: f64 = 1e-9;
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1u32 << k) {
            let rows: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let size = rows.len() + q;
            let mut basis = DMatrix::zeros(n, size);
            let mut target = DVector::zeros(size);
            for (c, &i) in rows.iter().enumerate() {
                basis.set_column(c, &poly.normals.column(i));
                target[c] = poly.offsets[i];
            }
            for j in 0..q {
                basis.set_column(rows.len() + j, &poly.eq_normals.column(j));
                target[rows.len() + j] = poly.eq_offsets[j];
            }
            let candidate = if size == 0 {
                Some((p.clone(), DVector::zeros(0)))
            } else {
                solve_equality_projection(p, &basis, &target)
            };
            let Some((v, w)) = candidate else {
                continue;
            };
            if w.iter().take(rows.len()).any(|&l| l < -SIGN_TOL) {
                continue;
            }
            if poly.max_violation(&v) > SIGN_TOL * (1.0 + target.amax()) {
                continue;
            }
            let dist = (&v - p).norm_squared();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, v));
            }
        }
        best.map(|(_, v)| v).ok_or(Error::EmptyPolyhedron)
    }

    /// Project `p` onto `{v | basisᵀv = target}`; `None` if inconsistent.
    ///
    /// With `basis = UΣVᵀ`, `v = p + UΣ⁻¹Vᵀ(target − basisᵀp)` and the
    /// multipliers are `VΣ⁻²Vᵀ(target − basisᵀp)`.
    fn solve_equality_projection(
        p: &DVector<f64>,
        basis: &DMatrix<f64>,
        target: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let svd = basis.clone().svd(true, true);
        let u = svd.u.as_ref()?;
        let v_t = svd.v_t.as_ref()?;
        let top = svd.singular_values.amax();
        let mut v = p.clone();
        let mut w = DVector::zeros(basis.ncols());
        // The SVD alone is only accurate to ~1e-9 on some inputs.
        for _ in 0..3 {
            let projected = v_t * (target - basis.tr_mul(&v));
            let mut scaled_once = DVector::zeros(projected.len());
            let mut scaled_twice = DVector::zeros(projected.len());
            for (i, &sigma) in svd.singular_values.iter().enumerate() {
                if sigma > 1e-12 * top.max(1.0) {
                    scaled_once[i] = projected[i] / sigma;
                    scaled_twice[i] = projected[i] / (sigma * sigma);
                }
            }
            v += u * scaled_once;
            w += v_t.tr_mul(&scaled_twice);
        }
        let residual = (basis.tr_mul(&v) - target).amax();
        (residual <= 1e-9 * (1.0 + target.amax())).then_some((v, w))
    }
}
