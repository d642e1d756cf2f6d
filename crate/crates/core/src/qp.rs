//! Convex quadratic programming by a primal-dual interior-point method with
//! Mehrotra predictor-corrector steps.
//!
//! Solves `min 1/2 z'Qz + q'z` subject to `A z = b`, `G z >= h` and variable
//! bounds. The reduced normal matrix `Q + G'WG` is factorized either densely
//! or, when the program declares a block-arrow layout (a border of shared
//! variables followed by independent blocks), block by block with a Schur
//! complement on the border and a low-rank update for rows that couple
//! several blocks.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("quadratic program is unbounded below")]
    Unbounded,
    #[error("interior-point method stopped after {iterations} iterations (KKT residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("objective matrix is not positive semidefinite")]
    NotConvex,
    #[error("normal equations could not be factorized")]
    Singular,
    #[error("invalid quadratic program: {0}")]
    Invalid(String),
}

/// Sparse linear form `sum_j val[j] * z[idx[j]]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new(entries: &[(usize, f64)]) -> Self {
        let mut e: Vec<(usize, f64)> = entries.to_vec();
        e.sort_by_key(|p| p.0);
        let mut row = SparseRow::default();
        for (i, v) in e {
            if row.idx.last() == Some(&i) {
                *row.val.last_mut().expect("paired") += v;
            } else {
                row.idx.push(i);
                row.val.push(v);
            }
        }
        row
    }

    pub fn dot(&self, z: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * z[i]).sum()
    }

    fn axpy(&self, alpha: f64, out: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += alpha * v;
        }
    }

    fn negated(&self) -> Self {
        SparseRow {
            idx: self.idx.clone(),
            val: self.val.iter().map(|v| -v).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BlockLayout {
    border: usize,
    blocks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadProgram {
    n: usize,
    /// Upper-triangle entries `(i, j, v)` with `i <= j`; duplicates add up.
    quad: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    eq_rows: Vec<SparseRow>,
    eq_rhs: Vec<f64>,
    in_rows: Vec<SparseRow>,
    in_rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    layout: Option<BlockLayout>,
}

impl QuadProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            quad: Vec::new(),
            linear: vec![0.0; n],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            in_rows: Vec::new(),
            in_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            layout: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` to `Q[i][j]` and `Q[j][i]` (once on the diagonal).
    pub fn add_quadratic(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.quad.push((i.min(j), i.max(j), v));
        }
    }

    /// Replaces `Q` by a dense symmetric matrix.
    pub fn set_quadratic(&mut self, q: &DMatrix<f64>) -> Result<(), QpError> {
        if q.nrows() != self.n || q.ncols() != self.n {
            return Err(QpError::Invalid(format!(
                "Q is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols(),
                n = self.n
            )));
        }
        let scale = q.amax().max(f64::MIN_POSITIVE);
        self.quad.clear();
        for j in 0..self.n {
            for i in 0..=j {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * scale {
                    return Err(QpError::Invalid("Q is not symmetric".into()));
                }
                self.add_quadratic(i, j, 0.5 * (q[(i, j)] + q[(j, i)]));
            }
        }
        Ok(())
    }

    pub fn set_linear(&mut self, q: Vec<f64>) -> Result<(), QpError> {
        if q.len() != self.n {
            return Err(QpError::Invalid(format!("q has {} entries, expected {}", q.len(), self.n)));
        }
        self.linear = q;
        Ok(())
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// `row . z = rhs`
    pub fn add_equality(&mut self, row: &[(usize, f64)], rhs: f64) {
        self.eq_rows.push(SparseRow::new(row));
        self.eq_rhs.push(rhs);
    }

    /// `row . z >= rhs`
    pub fn add_inequality(&mut self, row: &[(usize, f64)], rhs: f64) {
        self.in_rows.push(SparseRow::new(row));
        self.in_rhs.push(rhs);
    }

    /// `row . z <= rhs`
    pub fn add_upper_inequality(&mut self, row: &[(usize, f64)], rhs: f64) {
        self.in_rows.push(SparseRow::new(row).negated());
        self.in_rhs.push(-rhs);
    }

    pub fn set_lower_bound(&mut self, i: usize, lo: f64) {
        self.lower[i] = lo;
    }

    pub fn set_upper_bound(&mut self, i: usize, hi: f64) {
        self.upper[i] = hi;
    }

    pub fn equality_count(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn inequality_count(&self) -> usize {
        self.in_rows.len()
    }

    /// Declares that variables `0..border` are shared and the rest split into
    /// consecutive independent blocks of the given sizes. `Q` must not couple
    /// different blocks.
    pub fn set_block_layout(&mut self, border: usize, blocks: Vec<usize>) -> Result<(), QpError> {
        if border + blocks.iter().sum::<usize>() != self.n {
            return Err(QpError::Invalid("block layout does not cover all variables".into()));
        }
        self.layout = Some(BlockLayout { border, blocks });
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let mut qz = vec![0.0; self.n];
        quad_mul(&self.quad, z, &mut qz);
        0.5 * dot(z, &qz) + dot(&self.linear, z)
    }

    /// Dense copy of `Q`.
    pub fn quadratic_dense(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.quad {
            q[(i, j)] += v;
            if i != j {
                q[(j, i)] += v;
            }
        }
        q
    }

    /// Largest violation of any constraint or bound at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (r, b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((r.dot(z) - b).abs());
        }
        for (r, h) in self.in_rows.iter().zip(&self.in_rhs) {
            worst = worst.max(h - r.dot(z));
        }
        for ((&zi, lo), hi) in z.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - zi).max(zi - hi);
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn quad_mul(quad: &[(usize, usize, f64)], z: &[f64], out: &mut [f64]) {
    for &(i, j, v) in quad {
        out[i] += v * z[j];
        if i != j {
            out[j] += v * z[i];
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum NormalSolver {
    /// Block-arrow when the program declares a layout, dense otherwise.
    #[default]
    Auto,
    Dense,
    BlockArrow,
}

#[derive(Clone, Debug)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub solver: NormalSolver,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            solver: NormalSolver::Auto,
        }
    }
}

/// Infinity-norm KKT residuals at the returned point.
#[derive(Clone, Debug, Default, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_equality: f64,
    pub primal_inequality: f64,
    pub complementarity: f64,
    /// `tol * max(1 + |q|, |Q z|, |A'y|, |G'lambda|)`, the acceptance threshold.
    pub threshold: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_equality)
            .max(self.primal_inequality)
            .max(self.complementarity)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows (`Q z + q = A'y + G'lambda`).
    pub eq_duals: Vec<f64>,
    /// Multipliers of the inequality rows, in insertion order (nonnegative).
    pub ineq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub warnings: Vec<String>,
}

pub fn solve_qp(p: &QuadProgram, tol: f64) -> Result<QpSolution, QpError> {
    solve_qp_with(
        p,
        &QpOptions {
            tol,
            ..QpOptions::default()
        },
    )
}

/// Interior-point data: all inequalities including bounds as `G z >= h`.
struct Prepared<'a> {
    p: &'a QuadProgram,
    quad: Vec<(usize, usize, f64)>,
    rows: Vec<SparseRow>,
    h: Vec<f64>,
    lower_idx: Vec<usize>,
    upper_idx: Vec<usize>,
    arrow: Option<ArrowLayout>,
}

impl Prepared<'_> {
    fn n(&self) -> usize {
        self.p.n
    }

    /// `M v = Q v + delta v + G' diag(w) G v`
    fn apply_normal(&self, w: &[f64], delta: f64, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| delta * x).collect();
        quad_mul(&self.quad, v, &mut out);
        for (r, &wr) in self.rows.iter().zip(w) {
            let t = wr * r.dot(v);
            if t != 0.0 {
                r.axpy(t, &mut out);
            }
        }
        out
    }
}

fn check_convex(p: &QuadProgram, warnings: &mut Vec<String>) -> Result<Vec<(usize, usize, f64)>, QpError> {
    let mut quad = p.quad.clone();
    if quad.is_empty() {
        return Ok(quad);
    }
    let n = p.n;
    let diagonal = quad.iter().all(|&(i, j, _)| i == j);
    let mut diag = vec![0.0; n];
    for &(i, j, v) in &quad {
        if i == j {
            diag[i] += v;
        }
    }
    let trace: f64 = diag.iter().sum();
    let shift = 1e-8 * (trace.abs() / n as f64).max(f64::MIN_POSITIVE);
    let psd = |quad: &[(usize, usize, f64)], extra: f64| -> bool {
        if diagonal {
            let mut d = vec![extra; n];
            for &(i, _, v) in quad {
                d[i] += v;
            }
            d.iter().all(|&x| x >= 0.0)
        } else {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for &(i, j, v) in quad {
                m[(i, j)] += v;
                if i != j {
                    m[(j, i)] += v;
                }
            }
            for i in 0..n {
                m[(i, i)] += extra;
            }
            Cholesky::new(m).is_some()
        }
    };
    if psd(&quad, shift) {
        return Ok(quad);
    }
    let mu = 1e-10 * trace / n as f64;
    if mu > 0.0 {
        for i in 0..n {
            quad.push((i, i, mu));
        }
        if psd(&quad, shift) {
            let msg = format!("Q numerically indefinite; added {mu:e} to the diagonal");
            warn!("{msg}");
            warnings.push(msg);
            return Ok(quad);
        }
    }
    Err(QpError::NotConvex)
}

pub fn solve_qp_with(p: &QuadProgram, opts: &QpOptions) -> Result<QpSolution, QpError> {
    let n = p.n;
    if p.linear.len() != n || p.lower.len() != n || p.upper.len() != n {
        return Err(QpError::Invalid("inconsistent dimensions".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(QpError::Invalid("tolerance must be positive".into()));
    }
    let entries_ok = p.quad.iter().all(|&(i, j, v)| i < n && j < n && v.is_finite())
        && p.eq_rows.iter().chain(&p.in_rows).all(|r| r.idx.iter().all(|&i| i < n) && r.val.iter().all(|v| v.is_finite()))
        && p.linear.iter().chain(&p.eq_rhs).chain(&p.in_rhs).all(|v| v.is_finite());
    if !entries_ok {
        return Err(QpError::Invalid("index out of range or non-finite coefficient".into()));
    }
    for i in 0..n {
        if p.lower[i] > p.upper[i] {
            return Err(QpError::Infeasible);
        }
    }
    let mut warnings = Vec::new();
    let quad = check_convex(p, &mut warnings)?;

    let mut rows = p.in_rows.clone();
    let mut h = p.in_rhs.clone();
    let mut lower_idx = Vec::new();
    let mut upper_idx = Vec::new();
    for i in 0..n {
        if p.lower[i].is_finite() {
            rows.push(SparseRow { idx: vec![i], val: vec![1.0] });
            h.push(p.lower[i]);
            lower_idx.push(i);
        }
    }
    for i in 0..n {
        if p.upper[i].is_finite() {
            rows.push(SparseRow { idx: vec![i], val: vec![-1.0] });
            h.push(-p.upper[i]);
            upper_idx.push(i);
        }
    }
    let arrow = match (opts.solver, &p.layout) {
        (NormalSolver::Dense, _) | (NormalSolver::Auto, None) => None,
        (NormalSolver::BlockArrow, None) => {
            return Err(QpError::Invalid("block-arrow solver needs a block layout".into()))
        }
        (_, Some(layout)) => match ArrowLayout::new(layout, n, &quad, &rows) {
            Some(a) => Some(a),
            None if opts.solver == NormalSolver::BlockArrow => {
                return Err(QpError::Invalid("Q couples different blocks".into()))
            }
            None => None,
        },
    };
    let prep = Prepared {
        p,
        quad,
        rows,
        h,
        lower_idx,
        upper_idx,
        arrow,
    };
    interior_point(&prep, opts, warnings)
}

/// Factorized Newton system for one iteration.
struct KktFactor<'a> {
    prep: &'a Prepared<'a>,
    w: &'a [f64],
    delta: f64,
    normal: Normal,
    /// `M^-1 A'` and the Cholesky factor of `A M^-1 A'`.
    eq: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

impl KktFactor<'_> {
    fn solve_normal(&self, r: &[f64]) -> Vec<f64> {
        let mut v = self.normal.solve(r);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let mv = self.prep.apply_normal(self.w, self.delta, &v);
            let res: Vec<f64> = r.iter().zip(&mv).map(|(a, b)| a - b).collect();
            let size = inf_norm(&res);
            if size <= 1e-15 * inf_norm(r) || size >= 0.5 * last {
                break;
            }
            last = size;
            let corr = self.normal.solve(&res);
            for (vi, ci) in v.iter_mut().zip(&corr) {
                *vi += ci;
            }
        }
        v
    }

    /// Solves `M dz - A'dy = r1`, `A dz = r2`.
    fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.solve_normal(r1);
        match &self.eq {
            None => (t, Vec::new()),
            Some((za, e)) => {
                let rhs: Vec<f64> = self
                    .prep
                    .p
                    .eq_rows
                    .iter()
                    .zip(r2)
                    .map(|(row, r)| r - row.dot(&t))
                    .collect();
                let dy = e.solve(&DVector::from_vec(rhs));
                let corr = za * &dy;
                let dz = t.iter().zip(corr.iter()).map(|(a, b)| a + b).collect();
                (dz, dy.as_slice().to_vec())
            }
        }
    }
}

fn factorize<'a>(prep: &'a Prepared<'a>, w: &'a [f64], base_delta: f64) -> Result<KktFactor<'a>, QpError> {
    let mut delta = base_delta;
    for _ in 0..12 {
        let normal = match &prep.arrow {
            Some(layout) => ArrowFactor::new(prep, layout, w, delta).map(Normal::Arrow),
            None => dense_normal(prep, w, delta).map(Normal::Dense),
        };
        if let Some(normal) = normal {
            let mut f = KktFactor {
                prep,
                w,
                delta,
                normal,
                eq: None,
            };
            let me = prep.p.eq_rows.len();
            if me > 0 {
                let n = prep.n();
                let mut za = DMatrix::zeros(n, me);
                for (k, row) in prep.p.eq_rows.iter().enumerate() {
                    let mut col = vec![0.0; n];
                    row.axpy(1.0, &mut col);
                    let v = f.solve_normal(&col);
                    za.set_column(k, &DVector::from_vec(v));
                }
                let mut e = DMatrix::zeros(me, me);
                for (i, row) in prep.p.eq_rows.iter().enumerate() {
                    for k in 0..me {
                        e[(i, k)] = row.idx.iter().zip(&row.val).map(|(&j, &v)| v * za[(j, k)]).sum();
                    }
                }
                let e = (&e + e.transpose()) * 0.5;
                let scale = (0..me).map(|i| e[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
                let mut eq = None;
                for reg in [0.0, 1e-14, 1e-12, 1e-10] {
                    let mut er = e.clone();
                    for i in 0..me {
                        er[(i, i)] += reg * scale;
                    }
                    if let Some(c) = Cholesky::new(er) {
                        eq = Some(c);
                        break;
                    }
                }
                f.eq = Some((za, eq.ok_or(QpError::Singular)?));
            }
            return Ok(f);
        }
        delta = if delta == 0.0 { 1e-14 } else { delta * 100.0 };
    }
    Err(QpError::Singular)
}

enum Normal {
    Dense(Cholesky<f64, Dyn>),
    Arrow(ArrowFactor),
}

impl Normal {
    fn solve(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Normal::Dense(c) => c.solve(&DVector::from_column_slice(r)).as_slice().to_vec(),
            Normal::Arrow(a) => a.solve(r),
        }
    }
}

fn dense_normal(prep: &Prepared, w: &[f64], delta: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = prep.n();
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, v) in &prep.quad {
        m[(i, j)] += v;
        if i != j {
            m[(j, i)] += v;
        }
    }
    // measured on Q alone: the barrier weights grow without bound near the end
    let scale = (0..n).map(|i| m[(i, i)]).fold(0.0, f64::max).max(1.0);
    for (r, &wr) in prep.rows.iter().zip(w) {
        for (&i, &vi) in r.idx.iter().zip(&r.val) {
            for (&j, &vj) in r.idx.iter().zip(&r.val) {
                m[(i, j)] += wr * vi * vj;
            }
        }
    }
    for i in 0..n {
        m[(i, i)] += delta * scale;
    }
    Cholesky::new(m)
}

const BORDER: usize = usize::MAX;

struct ArrowLayout {
    border: usize,
    starts: Vec<usize>,
    lens: Vec<usize>,
    owner: Vec<usize>,
    local_rows: Vec<usize>,
    coupling_rows: Vec<usize>,
}

impl ArrowLayout {
    fn new(layout: &BlockLayout, n: usize, quad: &[(usize, usize, f64)], rows: &[SparseRow]) -> Option<Self> {
        let mut owner = vec![BORDER; n];
        let mut starts = Vec::with_capacity(layout.blocks.len());
        let mut at = layout.border;
        for (k, &len) in layout.blocks.iter().enumerate() {
            starts.push(at);
            owner[at..at + len].iter_mut().for_each(|o| *o = k);
            at += len;
        }
        for &(i, j, _) in quad {
            if owner[i] != BORDER && owner[j] != BORDER && owner[i] != owner[j] {
                return None;
            }
        }
        let mut local_rows = Vec::new();
        let mut coupling_rows = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let mut block = BORDER;
            let mut coupling = false;
            for &i in &row.idx {
                let o = owner[i];
                if o != BORDER {
                    if block == BORDER {
                        block = o;
                    } else if block != o {
                        coupling = true;
                        break;
                    }
                }
            }
            if coupling {
                coupling_rows.push(r);
            } else {
                local_rows.push(r);
            }
        }
        Some(Self {
            border: layout.border,
            starts,
            lens: layout.blocks.clone(),
            owner,
            local_rows,
            coupling_rows,
        })
    }
}

struct ArrowFactor {
    border: usize,
    starts: Vec<usize>,
    blocks: Vec<Cholesky<f64, Dyn>>,
    /// Border-block coupling `C_k` (border x block).
    couple: Vec<DMatrix<f64>>,
    /// `D_k^-1 C_k'`
    x: Vec<DMatrix<f64>>,
    schur: Option<Cholesky<f64, Dyn>>,
    /// `(V, M_l^-1 V, chol(I + V' M_l^-1 V))` for the coupling rows.
    update: Option<(DMatrix<f64>, DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

impl ArrowFactor {
    fn new(prep: &Prepared, layout: &ArrowLayout, w: &[f64], delta: f64) -> Option<Self> {
        let nb = layout.border;
        let mut border = DMatrix::<f64>::zeros(nb, nb);
        let mut blocks: Vec<DMatrix<f64>> = layout.lens.iter().map(|&l| DMatrix::zeros(l, l)).collect();
        let mut couple: Vec<DMatrix<f64>> = layout.lens.iter().map(|&l| DMatrix::zeros(nb, l)).collect();
        let owner = &layout.owner;
        let starts = &layout.starts;
        let mut place = |i: usize, j: usize, v: f64| match (owner[i], owner[j]) {
            (BORDER, BORDER) => border[(i, j)] += v,
            (BORDER, k) => couple[k][(i, j - starts[k])] += v,
            (_, BORDER) => {}
            (k, _) => blocks[k][(i - starts[k], j - starts[k])] += v,
        };
        let mut scale = 1.0f64;
        for &(i, j, v) in &prep.quad {
            if i == j {
                scale = scale.max(v);
            }
            place(i, j, v);
            if i != j {
                place(j, i, v);
            }
        }
        for &r in &layout.local_rows {
            let row = &prep.rows[r];
            let wr = w[r];
            for (&i, &vi) in row.idx.iter().zip(&row.val) {
                for (&j, &vj) in row.idx.iter().zip(&row.val) {
                    place(i, j, wr * vi * vj);
                }
            }
        }
        for i in 0..nb {
            border[(i, i)] += delta * scale;
        }
        let mut chols = Vec::with_capacity(blocks.len());
        let mut xs = Vec::with_capacity(blocks.len());
        let mut schur = border;
        for (mut d, c) in blocks.into_iter().zip(&couple) {
            for i in 0..d.nrows() {
                d[(i, i)] += delta * scale;
            }
            let chol = Cholesky::new(d)?;
            let x = chol.solve(&c.transpose());
            schur -= c * &x;
            chols.push(chol);
            xs.push(x);
        }
        let schur = if nb > 0 {
            let s = (&schur + schur.transpose()) * 0.5;
            Some(Cholesky::new(s)?)
        } else {
            None
        };
        let mut f = Self {
            border: nb,
            starts: layout.starts.clone(),
            blocks: chols,
            couple,
            x: xs,
            schur,
            update: None,
        };
        let nc = layout.coupling_rows.len();
        if nc > 0 {
            let n = prep.n();
            let mut v = DMatrix::zeros(n, nc);
            for (c, &r) in layout.coupling_rows.iter().enumerate() {
                let s = w[r].sqrt();
                let row = &prep.rows[r];
                for (&i, &vi) in row.idx.iter().zip(&row.val) {
                    v[(i, c)] += s * vi;
                }
            }
            let mut z = DMatrix::zeros(n, nc);
            for c in 0..nc {
                let col: Vec<f64> = v.column(c).iter().copied().collect();
                z.set_column(c, &DVector::from_vec(f.solve_local(&col)));
            }
            let mut hm = v.transpose() * &z;
            hm = (&hm + hm.transpose()) * 0.5;
            for i in 0..nc {
                hm[(i, i)] += 1.0;
            }
            f.update = Some((v, z, Cholesky::new(hm)?));
        }
        Some(f)
    }

    fn solve_local(&self, r: &[f64]) -> Vec<f64> {
        let nb = self.border;
        let mut out = vec![0.0; r.len()];
        let mut rb = DVector::from_column_slice(&r[..nb]);
        let mut hats = Vec::with_capacity(self.blocks.len());
        for (k, chol) in self.blocks.iter().enumerate() {
            let s = self.starts[k];
            let len = chol.l_dirty().nrows();
            let hat = chol.solve(&DVector::from_column_slice(&r[s..s + len]));
            if nb > 0 {
                rb -= &self.couple[k] * &hat;
            }
            hats.push(hat);
        }
        let vb = match &self.schur {
            Some(c) => c.solve(&rb),
            None => DVector::zeros(0),
        };
        out[..nb].copy_from_slice(vb.as_slice());
        for (k, hat) in hats.into_iter().enumerate() {
            let s = self.starts[k];
            let vk = if nb > 0 { hat - &self.x[k] * &vb } else { hat };
            out[s..s + vk.len()].copy_from_slice(vk.as_slice());
        }
        out
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let base = self.solve_local(r);
        match &self.update {
            None => base,
            Some((v, z, h)) => {
                let t = v.transpose() * DVector::from_column_slice(&base);
                let u = h.solve(&t);
                let corr = z * u;
                base.iter().zip(corr.iter()).map(|(a, b)| a - b).collect()
            }
        }
    }
}

struct Residuals {
    rd: Vec<f64>,
    re: Vec<f64>,
    ri: Vec<f64>,
    /// Largest entry of `Q z`, `A'y` and `G'lambda`.
    terms: f64,
}

fn residuals(prep: &Prepared, z: &[f64], y: &[f64], lam: &[f64], s: &[f64]) -> Residuals {
    let p = prep.p;
    let n = p.n;
    let mut qz = vec![0.0; n];
    quad_mul(&prep.quad, z, &mut qz);
    let mut ay = vec![0.0; n];
    for (row, &yi) in p.eq_rows.iter().zip(y) {
        row.axpy(yi, &mut ay);
    }
    let mut gl = vec![0.0; n];
    for (row, &li) in prep.rows.iter().zip(lam) {
        row.axpy(li, &mut gl);
    }
    let terms = inf_norm(&qz).max(inf_norm(&ay)).max(inf_norm(&gl));
    let rd = (0..n).map(|i| p.linear[i] + qz[i] - ay[i] - gl[i]).collect();
    let re = p.eq_rows.iter().zip(&p.eq_rhs).map(|(r, b)| r.dot(z) - b).collect();
    let ri = prep
        .rows
        .iter()
        .zip(&prep.h)
        .zip(s)
        .map(|((r, h), si)| r.dot(z) - si - h)
        .collect();
    Residuals { rd, re, ri, terms }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn interior_point(prep: &Prepared, opts: &QpOptions, mut warnings: Vec<String>) -> Result<QpSolution, QpError> {
    let p = prep.p;
    let n = prep.n();
    let m = prep.rows.len();
    let me = p.eq_rows.len();
    let scale = 1.0 + dot(&p.linear, &p.linear).sqrt();
    let base_threshold = opts.tol * scale;
    let data_scale = 1.0
        + inf_norm(&p.linear)
            .max(inf_norm(&prep.h))
            .max(inf_norm(&p.eq_rhs))
            .max(prep.quad.iter().fold(0.0, |a, e| a.max(e.2.abs())));
    let divergence = 1e12 * data_scale;
    let delta = 1e-13;

    let ones = vec![1.0; m];
    let (mut z, mut y) = {
        let f = factorize(prep, &ones, delta)?;
        let mut r1 = vec![0.0; n];
        for (row, hi) in prep.rows.iter().zip(&prep.h) {
            row.axpy(*hi, &mut r1);
        }
        for (a, c) in r1.iter_mut().zip(&p.linear) {
            *a -= c;
        }
        let (z, y) = f.solve(&r1, &p.eq_rhs);
        (z, y)
    };
    let mut s: Vec<f64> = prep.rows.iter().zip(&prep.h).map(|(r, h)| r.dot(&z) - h).collect();
    let mut lam = vec![1.0; m];
    if m > 0 {
        let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = (-1.5 * smin).max(0.0);
        s.iter_mut().for_each(|v| *v += shift);
        let sl = dot(&s, &lam);
        let ssum: f64 = s.iter().sum();
        let lsum: f64 = lam.iter().sum();
        let ds = 0.5 * sl / lsum;
        let dl = if ssum > 0.0 { 0.5 * sl / ssum } else { 0.0 };
        s.iter_mut().for_each(|v| *v += ds);
        lam.iter_mut().for_each(|v| *v += dl);
        if s.iter().any(|&v| !(v > 0.0)) {
            s.iter_mut().for_each(|v| *v = v.max(1.0));
        }
    }

    let mut best_res = f64::INFINITY;
    let mut best: Option<Iterate> = None;
    // accepted with a warning once progress stops: roundoff in an
    // ill-conditioned Newton system can hold the residual just above `tol`
    let near = opts.tol.sqrt() * scale;
    let mut small_steps = 0;
    for iter in 0..=opts.max_iter {
        let r = residuals(prep, &z, &y, &lam, &s);
        // float cancellation in Q z - G'lambda is relative to the terms themselves
        let threshold = base_threshold.max(opts.tol * r.terms);
        let comp = s.iter().zip(&lam).map(|(a, b)| a * b).fold(0.0, f64::max);
        let res = KktResiduals {
            stationarity: inf_norm(&r.rd),
            primal_equality: inf_norm(&r.re),
            primal_inequality: prep
                .rows
                .iter()
                .zip(&prep.h)
                .map(|(row, h)| (h - row.dot(&z)).max(0.0))
                .fold(inf_norm(&r.ri), f64::max),
            complementarity: comp,
            threshold,
        };
        if res.max() <= threshold {
            return Ok(finish(prep, z, y, lam, iter, res, warnings));
        }
        if res.max() < best_res {
            best_res = res.max();
            best = Some(Iterate {
                z: z.clone(),
                y: y.clone(),
                lam: lam.clone(),
                iter,
                res,
            });
        }
        let stalled = best.as_ref().is_some_and(|b| iter >= b.iter + STALL_ITERATIONS);
        if iter == opts.max_iter || stalled {
            break;
        }
        if z.iter().chain(&lam).chain(&s).chain(&y).any(|v| !v.is_finite()) {
            return Err(QpError::Singular);
        }
        if inf_norm(&z) > divergence {
            return Err(QpError::Unbounded);
        }
        if inf_norm(&lam) > divergence || inf_norm(&y) > divergence {
            return Err(QpError::Infeasible);
        }

        let mu = if m > 0 { dot(&s, &lam) / m as f64 } else { 0.0 };
        let w: Vec<f64> = lam.iter().zip(&s).map(|(l, s)| l / s).collect();
        let f = factorize(prep, &w, delta)?;
        let direction = |rc: &[f64]| {
            let mut r1: Vec<f64> = r.rd.iter().map(|v| -v).collect();
            for (k, row) in prep.rows.iter().enumerate() {
                let t = w[k] * r.ri[k] + rc[k] / s[k];
                if t != 0.0 {
                    row.axpy(-t, &mut r1);
                }
            }
            let r2: Vec<f64> = r.re.iter().map(|v| -v).collect();
            let (dz, dy) = f.solve(&r1, &r2);
            let dl: Vec<f64> = (0..m)
                .map(|k| -w[k] * (r.ri[k] + prep.rows[k].dot(&dz)) - rc[k] / s[k])
                .collect();
            let ds: Vec<f64> = (0..m).map(|k| -(rc[k] + s[k] * dl[k]) / lam[k]).collect();
            (dz, dy, dl, ds)
        };

        let rc_aff: Vec<f64> = s.iter().zip(&lam).map(|(a, b)| a * b).collect();
        let (dz, dy, dl, ds) = direction(&rc_aff);
        let (dz, dy, dl, ds) = if m > 0 {
            let a_aff = max_step(&s, &ds).min(max_step(&lam, &dl)).min(1.0);
            let mu_aff = (0..m)
                .map(|k| (s[k] + a_aff * ds[k]) * (lam[k] + a_aff * dl[k]))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            // pushing complementarity far below the threshold only blows up w
            let target = (sigma * mu).max(1e-3 * base_threshold / m as f64);
            let rc: Vec<f64> = (0..m)
                .map(|k| s[k] * lam[k] + ds[k] * dl[k] - target)
                .collect();
            direction(&rc)
        } else {
            (dz, dy, dl, ds)
        };
        let alpha = if m > 0 {
            let amax = max_step(&s, &ds).min(max_step(&lam, &dl));
            (0.995 * amax).min(1.0)
        } else {
            1.0
        };
        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps >= 5 {
                let primal = inf_norm(&r.ri).max(inf_norm(&r.re));
                return Err(if primal > base_threshold {
                    QpError::Infeasible
                } else {
                    QpError::MaxIterations {
                        iterations: iter + 1,
                        residual: best_res,
                    }
                });
            }
        } else {
            small_steps = 0;
        }
        for i in 0..n {
            z[i] += alpha * dz[i];
        }
        for i in 0..me {
            y[i] += alpha * dy[i];
        }
        for k in 0..m {
            s[k] = (s[k] + alpha * ds[k]).max(f64::MIN_POSITIVE);
            lam[k] = (lam[k] + alpha * dl[k]).max(f64::MIN_POSITIVE);
        }
    }
    match best {
        Some(Iterate { z, y, lam, iter, res }) if res.max() <= near => {
            warnings.push(format!(
                "interior-point method stalled at KKT residual {:e}, above the tolerance {:e}",
                res.max(),
                res.threshold
            ));
            Ok(finish(prep, z, y, lam, iter, res, warnings))
        }
        _ => Err(QpError::MaxIterations {
            iterations: opts.max_iter,
            residual: best_res,
        }),
    }
}

const STALL_ITERATIONS: usize = 25;

struct Iterate {
    z: Vec<f64>,
    y: Vec<f64>,
    lam: Vec<f64>,
    iter: usize,
    res: KktResiduals,
}

fn finish(
    prep: &Prepared,
    z: Vec<f64>,
    y: Vec<f64>,
    lam: Vec<f64>,
    iterations: usize,
    residuals: KktResiduals,
    warnings: Vec<String>,
) -> QpSolution {
    let p = prep.p;
    let mi = p.in_rows.len();
    let nl = prep.lower_idx.len();
    let mut lower_duals = vec![0.0; p.n];
    let mut upper_duals = vec![0.0; p.n];
    for (k, &i) in prep.lower_idx.iter().enumerate() {
        lower_duals[i] = lam[mi + k];
    }
    for (k, &i) in prep.upper_idx.iter().enumerate() {
        upper_duals[i] = lam[mi + nl + k];
    }
    QpSolution {
        objective: p.objective(&z),
        z,
        eq_duals: y,
        ineq_duals: lam[..mi].to_vec(),
        lower_duals,
        upper_duals,
        iterations,
        residuals,
        warnings,
    }
}
