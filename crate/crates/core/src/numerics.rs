//! Dense matrices, the layer primitives used by the rankers, their
//! hand-derived backward passes, and a finite-difference gradient checker.

use std::fmt;

use indexmap::IndexMap;
use rand::Rng;

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim(
                    "Matrix::from_rows",
                    format!("row 0 has {cols} columns"),
                    format!("row {i} has {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::dim(
                "matvec",
                format!("{}x{}", self.rows, self.cols),
                format!("vector of length {}", x.len()),
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named parameter slots, kept in insertion order so that serialization and
/// gradient checks visit them deterministically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a slot with a zero gradient. Replaces an existing slot of the same name.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.slots.insert(name.into(), Param { value, grad });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.slots.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.slots.get_mut(name)
    }

    /// Returns the slot or a state error naming it.
    pub fn slot(&self, name: &str) -> Result<&Param> {
        self.slots
            .get(name)
            .ok_or_else(|| Error::State(format!("missing parameter slot {name:?}")))
    }

    pub fn slot_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.slots
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("missing parameter slot {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.slots.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.slots.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.slots.values_mut() {
            p.grad.fill(0.0);
        }
    }
}

/// Anything owning one or more parameter stores.
pub trait Differentiable {
    fn param_stores(&self) -> Vec<&ParamStore>;
    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore>;

    fn zero_grads(&mut self) {
        for store in self.param_stores_mut() {
            store.zero_grads();
        }
    }
}

impl Differentiable for ParamStore {
    fn param_stores(&self) -> Vec<&ParamStore> {
        vec![self]
    }

    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![self]
    }
}

/// Wide (full) 1-D convolution of a sentence matrix with an `m x d` filter.
///
/// `s` is treated as padded with `m - 1` zero rows above and below, so the
/// output has `N + m - 1` entries. Entry `i` covers padded rows `i..i + m`,
/// that is rows `i + 1 - m ..= i` of `s`.
pub fn conv1d_wide(s: &Matrix, filter: &Matrix, bias: f64) -> Result<Vec<f64>> {
    check_conv_shapes(s, filter)?;
    let (n, m) = (s.rows(), filter.rows());
    let mut out = vec![bias; n + m - 1];
    for (i, o) in out.iter_mut().enumerate() {
        for k in 0..m {
            if let Some(r) = source_row(i, k, m, n) {
                *o += dot(filter.row(k), s.row(r));
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv1d_wide`]: accumulates `dL/dfilter`, `dL/dbias`
/// and optionally `dL/ds` given `upstream = dL/dout`.
pub fn conv1d_wide_backward(
    s: &Matrix,
    filter: &Matrix,
    upstream: &[f64],
    grad_filter: &mut [f64],
    grad_bias: &mut f64,
    mut grad_input: Option<&mut Matrix>,
) -> Result<()> {
    check_conv_shapes(s, filter)?;
    let (n, m, d) = (s.rows(), filter.rows(), filter.cols());
    if upstream.len() != n + m - 1 {
        return Err(Error::dim(
            "conv1d_wide_backward",
            format!("output length {}", n + m - 1),
            format!("upstream length {}", upstream.len()),
        ));
    }
    if grad_filter.len() != m * d {
        return Err(Error::dim(
            "conv1d_wide_backward",
            format!("filter {m}x{d}"),
            format!("gradient buffer of {}", grad_filter.len()),
        ));
    }
    for (i, &g) in upstream.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        *grad_bias += g;
        for k in 0..m {
            let Some(r) = source_row(i, k, m, n) else {
                continue;
            };
            let gf = &mut grad_filter[k * d..(k + 1) * d];
            for (a, &x) in gf.iter_mut().zip(s.row(r)) {
                *a += g * x;
            }
            if let Some(gi) = grad_input.as_deref_mut() {
                for (a, &w) in gi.row_mut(r).iter_mut().zip(filter.row(k)) {
                    *a += g * w;
                }
            }
        }
    }
    Ok(())
}

fn check_conv_shapes(s: &Matrix, filter: &Matrix) -> Result<()> {
    if filter.rows() == 0 || filter.cols() != s.cols() {
        return Err(Error::dim(
            "conv1d_wide",
            format!("filter {}x{}", filter.rows(), filter.cols()),
            format!("sentence matrix {}x{}", s.rows(), s.cols()),
        ));
    }
    Ok(())
}

/// Row of the unpadded input read by filter row `k` at output position `i`.
#[inline]
fn source_row(i: usize, k: usize, m: usize, n: usize) -> Option<usize> {
    (i + k).checked_sub(m - 1).filter(|&r| r < n)
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// `relu'(0) = 0`.
pub fn relu_backward(input: &[f64], upstream: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Maximum entry and its position; ties go to the lowest index.
/// Returns `(0.0, 0)` for an empty slice.
pub fn max_pool(v: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &x) in v.iter().enumerate() {
        if x > best.0 {
            best = (x, i);
        }
    }
    if v.is_empty() {
        (0.0, 0)
    } else {
        best
    }
}

pub fn max_pool_backward(len: usize, argmax: usize, upstream: f64) -> Vec<f64> {
    let mut g = vec![0.0; len];
    if len > 0 {
        g[argmax] = upstream;
    }
    g
}

/// Inverted dropout. Returns the output and the per-entry multiplier
/// (`0` or `1 / (1 - p)`), which is also the local derivative.
/// In eval mode the multiplier is all ones and the output equals the input.
pub fn dropout<R: Rng + ?Sized>(
    v: &[f64],
    p: f64,
    rng: &mut R,
    train_mode: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !train_mode || p == 0.0 {
        return Ok((v.to_vec(), vec![1.0; v.len()]));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = v
        .iter()
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let out = v.iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((out, mask))
}

/// Plain SGD update on every slot, then clears the gradients.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name:?}; training aborted"
            )));
        }
    }
    for (_, p) in params.iter_mut() {
        for (w, g) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_slice()) {
            *w -= lr * g;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

/// Worst disagreement found for one parameter slot.
#[derive(Clone, Debug)]
pub struct SlotCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub slots: Vec<SlotCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.slots
            .iter()
            .map(|s| s.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn failing(&self) -> impl Iterator<Item = &SlotCheck> {
        self.slots.iter().filter(|s| s.max_rel_error >= self.tol)
    }
}

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the gradients written by `backward` against central differences
/// of `loss` with step `h`, for every value of every parameter slot.
///
/// `backward` is called once on zeroed gradients and must accumulate the
/// analytic gradient of the same loss. The loss must be deterministic.
pub fn grad_check<M, L, B>(
    model: &mut M,
    mut loss: L,
    backward: B,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    M: Differentiable,
    L: FnMut(&M) -> Result<f64>,
    B: FnOnce(&mut M) -> Result<()>,
{
    model.zero_grads();
    backward(model)?;
    let analytic: Vec<Vec<(String, Vec<f64>)>> = model
        .param_stores()
        .iter()
        .map(|s| {
            s.iter()
                .map(|(n, p)| (n.to_string(), p.grad.as_slice().to_vec()))
                .collect()
        })
        .collect();

    let base = loss(model)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss is {base} at the check point")));
    }

    let mut slots = Vec::new();
    for (si, store_grads) in analytic.iter().enumerate() {
        for (name, grads) in store_grads {
            let mut check = SlotCheck {
                name: name.clone(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for (idx, &a) in grads.iter().enumerate() {
                let orig = value_at(model, si, name, idx);
                set_value(model, si, name, idx, orig + h);
                let plus = loss(model)?;
                set_value(model, si, name, idx, orig - h);
                let minus = loss(model)?;
                set_value(model, si, name, idx, orig);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss while perturbing {name}[{idx}]: {plus} / {minus}"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * h);
                let err = relative_error(a, numeric);
                if idx == 0 || err > check.max_rel_error {
                    check.max_rel_error = err;
                    check.worst_index = idx;
                    check.analytic = a;
                    check.numeric = numeric;
                }
            }
            slots.push(check);
        }
    }
    Ok(GradCheckReport { slots, tol })
}

fn value_at<M: Differentiable>(model: &M, store: usize, name: &str, idx: usize) -> f64 {
    model.param_stores()[store]
        .get(name)
        .expect("slot disappeared during gradient check")
        .value
        .as_slice()[idx]
}

fn set_value<M: Differentiable>(model: &mut M, store: usize, name: &str, idx: usize, v: f64) {
    model.param_stores_mut()[store]
        .get_mut(name)
        .expect("slot disappeared during gradient check")
        .value
        .as_mut_slice()[idx] = v;
}
