//! Reverse-mode differentiation over dense matrix operations.
//!
//! Every value is a `DMatrix<f64>`; scalars are `1 × 1`. A [`Graph`] records
//! operations as they are evaluated, and [`Graph::backward`] returns the
//! gradient of a scalar node with respect to every node.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Matrix times a `1 × 1` node.
    ScaleBy(Var, Var),
    MulScalar(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Cos(Var),
    Sqrt(Var),
    Softplus(Var),
    ClampMin(Var, f64),
    Cholesky(Var),
    SolveLower(Var, Var),
    SolveLowerT(Var, Var),
    SumAll(Var),
    ColSums(Var),
    LogSumExpRows(Var),
    PickPerRow(Var, Vec<usize>),
    Column(Var, usize),
    HConcat(Vec<Var>),
    Element(Var, usize, usize),
    StrictLower(Var),
    DiagPart(Var),
    DiagEmbed(Var),
    PairwiseDistance(Var, Var),
    MulRowBroadcast(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of softplus, for initializing positive parameters.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn tril(mut m: DMatrix<f64>, strict: bool) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows().min(j + usize::from(strict)) {
            m[(i, j)] = 0.0;
        }
    }
    m
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op)
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(DMatrix::from_element(1, 1, x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let v = self.value(a) * self.scalar(s);
        self.push(v, Op::ScaleBy(a, s))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::MulScalar(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.map(a, f64::cos, Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x.max(c), Op::ClampMin(a, c))
    }

    /// Lower Cholesky factor; fails if the matrix is not positive definite.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let l = linalg::cholesky(self.value(a)).ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
        Ok(self.push(l, Op::Cholesky(a)))
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Var {
        let v = self
            .value(l)
            .solve_lower_triangular(self.value(b))
            .expect("nonsingular triangular factor");
        self.push(v, Op::SolveLower(l, b))
    }

    /// `L⁻ᵀ B`.
    pub fn solve_lower_t(&mut self, l: Var, b: Var) -> Var {
        let v = self
            .value(l)
            .tr_solve_lower_triangular(self.value(b))
            .expect("nonsingular triangular factor");
        self.push(v, Op::SolveLowerT(l, b))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// `1 × ncols` column sums.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let v = self.value(a).row_sum();
        let v = DMatrix::from_row_slice(1, v.len(), v.as_slice());
        self.push(v, Op::ColSums(a))
    }

    /// `nrows × 1`, `log Σ_j exp(a_ij)` computed stably.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_fn(m.nrows(), 1, |i, _| {
            let row = m.row(i);
            let mx = row.max();
            mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
        });
        self.push(v, Op::LogSumExpRows(a))
    }

    /// `nrows × 1`, entry `a[i, idx[i]]`.
    pub fn pick_per_row(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let m = self.value(a);
        let v = DMatrix::from_fn(m.nrows(), 1, |i, _| m[(i, idx[i])]);
        self.push(v, Op::PickPerRow(a, idx))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let v = self.value(a).column(j).into_owned();
        let v = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.push(v, Op::Column(a, j))
    }

    pub fn hconcat(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for &p in &parts {
            let m = self.value(p);
            v.columns_mut(at, m.ncols()).copy_from(m);
            at += m.ncols();
        }
        self.push(v, Op::HConcat(parts))
    }

    pub fn element(&mut self, a: Var, i: usize, j: usize) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a)[(i, j)]);
        self.push(v, Op::Element(a, i, j))
    }

    pub fn strict_lower(&mut self, a: Var) -> Var {
        let v = tril(self.value(a).clone(), true);
        self.push(v, Op::StrictLower(a))
    }

    /// Diagonal of a square matrix as an `n × 1` column.
    pub fn diag_part(&mut self, a: Var) -> Var {
        let v = self.value(a).diagonal();
        let v = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.push(v, Op::DiagPart(a))
    }

    /// `n × n` diagonal matrix from an `n × 1` column.
    pub fn diag_embed(&mut self, a: Var) -> Var {
        let d = self.value(a);
        let v = DMatrix::from_fn(d.nrows(), d.nrows(), |i, j| if i == j { d[(i, 0)] } else { 0.0 });
        self.push(v, Op::DiagEmbed(a))
    }

    /// `‖x_i − z_j‖` for rows of `x` (`n × d`) and `z` (`m × d`).
    pub fn pairwise_distance(&mut self, x: Var, z: Var) -> Var {
        let (xv, zv) = (self.value(x), self.value(z));
        let v = DMatrix::from_fn(xv.nrows(), zv.nrows(), |i, j| (xv.row(i) - zv.row(j)).norm());
        self.push(v, Op::PairwiseDistance(x, z))
    }

    /// Each row of `a` (`n × d`) multiplied elementwise by `v` (`1 × d`).
    pub fn mul_row_broadcast(&mut self, a: Var, v: Var) -> Var {
        let (av, vv) = (self.value(a), self.value(v));
        let out = DMatrix::from_fn(av.nrows(), av.ncols(), |i, j| av[(i, j)] * vv[(0, j)]);
        self.push(out, Op::MulRowBroadcast(a, v))
    }

    /// Gradients of the scalar `out` with respect to every node; `None` for
    /// nodes `out` does not depend on.
    pub fn backward(&self, out: Var) -> Vec<Option<DMatrix<f64>>> {
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(DMatrix::from_element(1, 1, 1.0));
        for k in (0..=out.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            self.propagate(k, &g, &mut grads);
            grads[k] = Some(g);
        }
        grads
    }

    fn propagate(&self, k: usize, g: &DMatrix<f64>, grads: &mut [Option<DMatrix<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &self.nodes[k].value;
        let mut acc = |v: Var, d: DMatrix<f64>| match &mut grads[v.0] {
            Some(x) => *x += d,
            slot => *slot = Some(d),
        };
        match &self.nodes[k].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                acc(a, g * val(b).transpose());
                acc(b, val(a).transpose() * g);
            }
            &Op::Transpose(a) => acc(a, g.transpose()),
            &Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            &Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, -g);
            }
            &Op::Mul(a, b) => {
                acc(a, g.component_mul(val(b)));
                acc(b, g.component_mul(val(a)));
            }
            &Op::ScaleBy(a, s) => {
                let sv = val(s)[(0, 0)];
                acc(s, DMatrix::from_element(1, 1, g.dot(val(a))));
                acc(a, g * sv);
            }
            &Op::MulScalar(a, c) => acc(a, g * c),
            &Op::Offset(a) => acc(a, g.clone()),
            &Op::Exp(a) => acc(a, g.component_mul(y)),
            &Op::Log(a) => acc(a, g.component_div(val(a))),
            &Op::Cos(a) => acc(a, -g.component_mul(&val(a).map(f64::sin))),
            &Op::Sqrt(a) => acc(a, g.zip_map(y, |gi, yi| gi / (2.0 * yi))),
            &Op::Softplus(a) => acc(a, g.zip_map(val(a), |gi, x| gi * sigmoid(x))),
            &Op::ClampMin(a, c) => acc(a, g.zip_map(val(a), |gi, x| if x > c { gi } else { 0.0 })),
            &Op::Cholesky(a) => {
                // Σ̄ = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹), Φ = lower triangle with halved diagonal.
                let l = y;
                let mut p = tril(l.transpose() * tril(g.clone(), false), false);
                for i in 0..p.nrows() {
                    p[(i, i)] *= 0.5;
                }
                let x = l.tr_solve_lower_triangular(&p).expect("nonsingular factor");
                let s = l
                    .tr_solve_lower_triangular(&x.transpose())
                    .expect("nonsingular factor")
                    .transpose();
                acc(a, (&s + s.transpose()) * 0.5);
            }
            &Op::SolveLower(l, b) => {
                let lv = val(l);
                let bbar = lv.tr_solve_lower_triangular(g).expect("nonsingular factor");
                acc(l, -tril(&bbar * y.transpose(), false));
                acc(b, bbar);
            }
            &Op::SolveLowerT(l, b) => {
                let lv = val(l);
                let bbar = lv.solve_lower_triangular(g).expect("nonsingular factor");
                acc(l, -tril(y * bbar.transpose(), false));
                acc(b, bbar);
            }
            &Op::SumAll(a) => {
                let s = val(a);
                acc(a, DMatrix::from_element(s.nrows(), s.ncols(), g[(0, 0)]));
            }
            &Op::ColSums(a) => {
                let s = val(a);
                acc(a, DMatrix::from_fn(s.nrows(), s.ncols(), |_, j| g[(0, j)]));
            }
            &Op::LogSumExpRows(a) => {
                let s = val(a);
                acc(a, DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| g[(i, 0)] * (s[(i, j)] - y[(i, 0)]).exp()));
            }
            Op::PickPerRow(a, idx) => {
                let s = val(*a);
                let mut d = DMatrix::zeros(s.nrows(), s.ncols());
                for (i, &c) in idx.iter().enumerate() {
                    d[(i, c)] = g[(i, 0)];
                }
                acc(*a, d);
            }
            &Op::Column(a, j) => {
                let s = val(a);
                let mut d = DMatrix::zeros(s.nrows(), s.ncols());
                d.column_mut(j).copy_from(&g.column(0));
                acc(a, d);
            }
            Op::HConcat(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(p, g.columns(at, w).into_owned());
                    at += w;
                }
            }
            &Op::Element(a, i, j) => {
                let s = val(a);
                let mut d = DMatrix::zeros(s.nrows(), s.ncols());
                d[(i, j)] = g[(0, 0)];
                acc(a, d);
            }
            &Op::StrictLower(a) => acc(a, tril(g.clone(), true)),
            &Op::DiagPart(a) => {
                let n = val(a).nrows();
                acc(a, DMatrix::from_fn(n, n, |i, j| if i == j { g[(i, 0)] } else { 0.0 }));
            }
            &Op::DiagEmbed(a) => {
                let d = g.diagonal();
                acc(a, DMatrix::from_column_slice(d.len(), 1, d.as_slice()));
            }
            &Op::PairwiseDistance(x, z) => {
                let (xv, zv) = (val(x), val(z));
                let mut dx = DMatrix::zeros(xv.nrows(), xv.ncols());
                let mut dz = DMatrix::zeros(zv.nrows(), zv.ncols());
                for i in 0..xv.nrows() {
                    for j in 0..zv.nrows() {
                        let r = y[(i, j)];
                        if r > 0.0 {
                            let u = (xv.row(i) - zv.row(j)) * (g[(i, j)] / r);
                            let mut rx = dx.row_mut(i);
                            rx += &u;
                            let mut rz = dz.row_mut(j);
                            rz -= &u;
                        }
                    }
                }
                acc(x, dx);
                acc(z, dz);
            }
            &Op::MulRowBroadcast(a, v) => {
                let (av, vv) = (val(a), val(v));
                acc(a, DMatrix::from_fn(av.nrows(), av.ncols(), |i, j| g[(i, j)] * vv[(0, j)]));
                let gv = g.component_mul(av).row_sum();
                acc(v, DMatrix::from_row_slice(1, gv.len(), gv.as_slice()));
            }
        }
    }
}
