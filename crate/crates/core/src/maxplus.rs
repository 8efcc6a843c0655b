//! Max-plus algebra, adjacency reachability and dual-extrema consensus.
//!
//! Scalars live in `R ∪ {-inf}` with `a ⊕ b = max(a, b)` and `a ⊗ b = a + b`.
//! The additive identity ε is `f64::NEG_INFINITY` itself, so ⊕ and ⊗ are the
//! native `max` and `+` and ε absorbs under ⊗ without special cases.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::network::NetworkGraph;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MaxPlus(pub f64);

impl MaxPlus {
    /// ε, the additive identity.
    pub const EPSILON: MaxPlus = MaxPlus(f64::NEG_INFINITY);
    /// e, the multiplicative identity.
    pub const E: MaxPlus = MaxPlus(0.0);

    pub fn is_epsilon(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn oplus(self, rhs: MaxPlus) -> MaxPlus {
        MaxPlus(self.0.max(rhs.0))
    }

    pub fn otimes(self, rhs: MaxPlus) -> MaxPlus {
        MaxPlus(self.0 + rhs.0)
    }
}

impl fmt::Display for MaxPlus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_epsilon() {
            write!(f, "-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

pub fn mp_add(a: MaxPlus, b: MaxPlus) -> MaxPlus {
    a.oplus(b)
}

pub fn mp_mul(a: MaxPlus, b: MaxPlus) -> MaxPlus {
    a.otimes(b)
}

/// Dense row-major matrix over the max-plus semiring.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPlusMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<MaxPlus>,
}

impl MaxPlusMatrix {
    pub fn filled(rows: usize, cols: usize, value: MaxPlus) -> Self {
        MaxPlusMatrix {
            rows,
            cols,
            entries: vec![value; rows * cols],
        }
    }

    /// Ē: every entry is e.
    pub fn all_e(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, MaxPlus::E)
    }

    /// e on the diagonal, ε elsewhere.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::filled(n, n, MaxPlus::EPSILON);
        for i in 0..n {
            m.set(i, i, MaxPlus::E);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> MaxPlus) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        MaxPlusMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        Ok(Self::from_fn(rows.len(), cols, |i, j| MaxPlus(rows[i][j])))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> MaxPlus {
        self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: MaxPlus) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn is_all_e(&self) -> bool {
        self.entries.iter().all(|&v| v == MaxPlus::E)
    }

    /// Entry-wise ⊕.
    pub fn oplus(&self, other: &MaxPlusMatrix) -> Result<MaxPlusMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(invalid("max-plus addition needs equal shapes"));
        }
        Ok(MaxPlusMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a.oplus(*b))
                .collect(),
        })
    }
}

/// `(A ⊗ B)_ij = max_n (a_in + b_nj)`.
pub fn mp_mat_mul(a: &MaxPlusMatrix, b: &MaxPlusMatrix) -> Result<MaxPlusMatrix> {
    if a.cols != b.rows {
        return Err(invalid(format!(
            "max-plus product of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(MaxPlusMatrix::from_fn(a.rows, b.cols, |i, j| {
        (0..a.cols).fold(MaxPlus::EPSILON, |acc, n| {
            acc.oplus(a.get(i, n).otimes(b.get(n, j)))
        })
    }))
}

/// `A^t`; `t = 0` gives the max-plus identity.
pub fn mp_mat_pow(a: &MaxPlusMatrix, t: usize) -> Result<MaxPlusMatrix> {
    if a.rows != a.cols {
        return Err(invalid("matrix power needs a square matrix"));
    }
    let mut acc = MaxPlusMatrix::identity(a.rows);
    for _ in 0..t {
        acc = mp_mat_mul(&acc, a)?;
    }
    Ok(acc)
}

/// `a_ij = e` iff `i == j` or `(i, j)` is an edge, else ε. Self-loops encode
/// that every sensor includes its own matrix in the consensus max.
pub fn build_adjacency(graph: &NetworkGraph) -> MaxPlusMatrix {
    let n = graph.len();
    MaxPlusMatrix::from_fn(n, n, |i, j| {
        if i == j || graph.has_edge(i, j) {
            MaxPlus::E
        } else {
            MaxPlus::EPSILON
        }
    })
}

/// Smallest `t` with `A^t = Ē`, or `None` if no power up to `n` reaches it
/// (the graph is disconnected).
pub fn min_power_to_all_e(a: &MaxPlusMatrix) -> Result<Option<usize>> {
    if a.rows != a.cols {
        return Err(invalid("matrix power needs a square matrix"));
    }
    let mut acc = MaxPlusMatrix::identity(a.rows);
    for t in 0..=a.rows {
        if acc.is_all_e() {
            return Ok(Some(t));
        }
        acc = mp_mat_mul(&acc, a)?;
    }
    Ok(None)
}

/// Depth-wise stack of equally shaped real matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageStack {
    layers: Vec<DMatrix<f64>>,
}

impl MessageStack {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(first) = layers.first() {
            let shape = first.shape();
            if layers.iter().any(|l| l.shape() != shape) {
                return Err(invalid("stacked matrices must share one shape"));
            }
        }
        Ok(MessageStack { layers })
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Every depth line holds values that are either zero or one common
    /// nonzero value.
    pub fn satisfies_identical_or_zero(&self) -> bool {
        let Some(first) = self.layers.first() else {
            return true;
        };
        let (rows, cols) = first.shape();
        (0..rows).all(|i| {
            (0..cols).all(|j| {
                let mut seen: Option<f64> = None;
                self.layers.iter().all(|l| {
                    let v = l[(i, j)];
                    if v == 0.0 {
                        return true;
                    }
                    match seen {
                        None => {
                            seen = Some(v);
                            true
                        }
                        Some(s) => s == v,
                    }
                })
            })
        })
    }

    /// Entry-wise sum over depth.
    pub fn sum(&self) -> Option<DMatrix<f64>> {
        let first = self.layers.first()?;
        Some(
            self.layers
                .iter()
                .skip(1)
                .fold(first.clone(), |acc, l| acc + l),
        )
    }
}

/// `Q+ = max{stack | Ē}` and `Q- = -max{-stack | Ē}`, entry-wise.
pub fn extrema_split(stack: &MessageStack) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let first = stack.layers.first()?;
    let (rows, cols) = first.shape();
    let mut q_plus = DMatrix::zeros(rows, cols);
    let mut q_minus = DMatrix::zeros(rows, cols);
    for layer in &stack.layers {
        q_plus.zip_apply(layer, |q: &mut f64, v: f64| *q = q.max(v));
        q_minus.zip_apply(layer, |q: &mut f64, v: f64| *q = q.min(v));
    }
    Some((q_plus, q_minus))
}

/// One dual-extrema round for a single sensor: `Q+ + Q-` over its own
/// matrix and every received one. The own matrix is always part of the
/// stack, so an empty inbox leaves it unchanged under the identical-or-zero
/// structure.
pub fn dual_extrema_combine(own: &DMatrix<f64>, inbox: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let shape = own.shape();
    if inbox.iter().any(|m| m.shape() != shape) {
        return Err(invalid("dual-extrema inbox message has a different shape"));
    }
    let mut q_plus = own.map(|v| v.max(0.0));
    let mut q_minus = own.map(|v| v.min(0.0));
    for m in inbox {
        q_plus.zip_apply(*m, |q, v| *q = q.max(v));
        q_minus.zip_apply(*m, |q, v| *q = q.min(v));
    }
    Ok(q_plus + q_minus)
}

/// Collective round over all sensors at once via the max-plus product of
/// the adjacency matrix with the stack:
/// `Ĥ(t+1) = A ⊗ {Ĥ(t)|Ē} - [A ⊗ {-Ĥ(t)|Ē}]`.
pub fn stack_consensus_step(
    adjacency: &MaxPlusMatrix,
    stack: &MessageStack,
) -> Result<MessageStack> {
    let n = stack.depth();
    if adjacency.rows() != n || adjacency.cols() != n {
        return Err(invalid("adjacency size does not match stack depth"));
    }
    let layers = (0..n)
        .map(|i| {
            let shape = stack.layers[0].shape();
            // Ē participates with weight e, so both maxima start at zero.
            let mut pos = DMatrix::zeros(shape.0, shape.1);
            let mut neg = DMatrix::zeros(shape.0, shape.1);
            for (r, layer) in stack.layers.iter().enumerate() {
                let a = adjacency.get(i, r);
                if a.is_epsilon() {
                    continue;
                }
                pos.zip_apply(layer, |q: &mut f64, v: f64| *q = q.max(a.0 + v));
                neg.zip_apply(layer, |q: &mut f64, v: f64| *q = q.max(a.0 - v));
            }
            pos - neg
        })
        .collect();
    MessageStack::new(layers)
}

/// `Q+(0) + Q-(0)` of a stack: the value every sensor holds once
/// dual-extrema consensus is reached.
pub fn consensus_target(stack: &MessageStack) -> Option<DMatrix<f64>> {
    extrema_split(stack).map(|(p, n)| p + n)
}

pub fn rmse_between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    (a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64)
        .sqrt()
}

/// Element-wise RMSE between consecutive iterates below `theta_th`.
pub fn consensus_converged(
    prev: &DMatrix<f64>,
    curr: &DMatrix<f64>,
    theta_th: f64,
) -> Result<bool> {
    if prev.shape() != curr.shape() {
        return Err(invalid("consensus check needs equal shapes"));
    }
    Ok(rmse_between(prev, curr) < theta_th)
}
