//! Dense and structured tensors, the rank-one map `U(p_1, …, p_d) = p_1 ⊗ ⋯ ⊗ p_d`,
//! the objective and the contraction kernels.
//!
//! Storage is lexicographic with the last index varying fastest. All
//! contractions are sequences of tensor-times-vector products, so applying
//! any of the multilinear maps costs `O(∏ n_μ)`.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::BadDims(format!(
            "tensor order must be at least 2, got {}",
            dims.len()
        )));
    }
    if let Some(pos) = dims.iter().position(|&n| n == 0) {
        return Err(Error::BadDims(format!("mode {pos} has size 0")));
    }
    Ok(())
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if values.len() != len {
            return Err(Error::DimMismatch(format!(
                "dims {dims:?} need {len} values, got {}",
                values.len()
            )));
        }
        Ok(DenseTensor { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        DenseTensor::new(dims, vec![0.0; len])
    }

    /// Fills entries from a function of the multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut idx = vec![0; dims.len()];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Ok(DenseTensor { dims, values })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.dims.len());
        let offset = idx
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i);
        self.values[offset]
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::norm_sq(&self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            values: linalg::scaled(&self.values, s),
        }
    }

    /// `self + s · other`.
    pub fn add_scaled(&self, other: &DenseTensor, s: f64) -> Result<DenseTensor> {
        same_dims(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        Ok(DenseTensor {
            dims: self.dims.clone(),
            values,
        })
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.add_scaled(other, -1.0)
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        same_dims(self, other)?;
        Ok(linalg::max_abs_diff(&self.values, &other.values))
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for m in (0..dims.len()).rev() {
        idx[m] += 1;
        if idx[m] < dims[m] {
            return;
        }
        idx[m] = 0;
    }
}

fn same_dims(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

/// Euclidean inner product of two tensors of equal shape.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    same_dims(a, b)?;
    Ok(linalg::dot(&a.values, &b.values))
}

/// A representation system `(p_1, …, p_d)` of a rank-one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneRep {
    factors: Vec<Vec<f64>>,
}

impl RankOneRep {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        let dims: Vec<usize> = factors.iter().map(Vec::len).collect();
        check_dims(&dims)?;
        for (mode, p) in factors.iter().enumerate() {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "factor of mode {mode} has non-finite entries"
                )));
            }
            if linalg::norm_sq(p) == 0.0 {
                return Err(Error::DegenerateFactor { mode });
            }
        }
        Ok(RankOneRep { factors })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    pub fn factor(&self, mode: usize) -> &[f64] {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<Vec<f64>> {
        self.factors
    }

    pub fn norms_sq(&self) -> Vec<f64> {
        self.factors.iter().map(|p| linalg::norm_sq(p)).collect()
    }

    /// `‖U(p)‖ = ∏ ‖p_μ‖`.
    pub fn tensor_norm(&self) -> f64 {
        self.factors.iter().map(|p| linalg::norm(p)).product()
    }

    /// Same directions, unit-norm factors.
    pub fn normalized(&self) -> RankOneRep {
        RankOneRep {
            factors: self
                .factors
                .iter()
                .map(|p| linalg::normalized(p).expect("factors are nonzero"))
                .collect(),
        }
    }

    /// Equal factor norms, product (and hence `U(p)`) preserved.
    pub fn rebalanced(&self) -> RankOneRep {
        let norms: Vec<f64> = self.factors.iter().map(|p| linalg::norm(p)).collect();
        let log_mean = norms.iter().map(|n| n.ln()).sum::<f64>() / norms.len() as f64;
        let target = log_mean.exp();
        RankOneRep {
            factors: self
                .factors
                .iter()
                .zip(&norms)
                .map(|(p, n)| linalg::scaled(p, target / n))
                .collect(),
        }
    }

    pub fn evaluate(&self) -> DenseTensor {
        evaluate_rank_one(self)
    }

    pub(crate) fn set_factor(&mut self, mode: usize, value: Vec<f64>) {
        debug_assert_eq!(value.len(), self.factors[mode].len());
        self.factors[mode] = value;
    }
}

fn outer_product(factors: &[&[f64]]) -> Vec<f64> {
    let mut values = vec![1.0];
    for p in factors {
        let mut next = Vec::with_capacity(values.len() * p.len());
        for &a in &values {
            next.extend(p.iter().map(|&x| a * x));
        }
        values = next;
    }
    values
}

/// `U(p) = p_1 ⊗ ⋯ ⊗ p_d` as a dense tensor.
pub fn evaluate_rank_one(p: &RankOneRep) -> DenseTensor {
    let refs: Vec<&[f64]> = p.factors.iter().map(Vec::as_slice).collect();
    DenseTensor {
        dims: p.dims(),
        values: outer_product(&refs),
    }
}

/// Contracts every mode `m` with `vecs[m]` when it is `Some`, keeping the
/// `None` modes in their original order.
pub(crate) fn contract_modes(
    dims: &[usize],
    values: &[f64],
    vecs: &[Option<&[f64]>],
) -> (Vec<usize>, Vec<f64>) {
    debug_assert_eq!(dims.len(), vecs.len());
    let mut dims = dims.to_vec();
    let mut cur: Vec<f64> = values.to_vec();
    for m in (0..dims.len()).rev() {
        let Some(v) = vecs[m] else { continue };
        debug_assert_eq!(v.len(), dims[m]);
        let n = dims[m];
        let right: usize = dims[m + 1..].iter().product();
        let left: usize = dims[..m].iter().product();
        let mut out = vec![0.0; left * right];
        for l in 0..left {
            let block = &cur[l * n * right..(l + 1) * n * right];
            let dst = &mut out[l * right..(l + 1) * right];
            for (i, &vi) in v.iter().enumerate() {
                if vi == 0.0 {
                    continue;
                }
                let row = &block[i * right..(i + 1) * right];
                for (o, &x) in dst.iter_mut().zip(row) {
                    *o += x * vi;
                }
            }
        }
        cur = out;
        dims.remove(m);
    }
    (dims, cur)
}

/// Mode-`mode` product `T ×_mode A` with `A` of shape `r × dims[mode]`.
pub(crate) fn mode_product(
    dims: &[usize],
    values: &[f64],
    mode: usize,
    a: &Matrix,
) -> (Vec<usize>, Vec<f64>) {
    let n = dims[mode];
    assert_eq!(a.cols(), n, "mode product dimension");
    let r = a.rows();
    let right: usize = dims[mode + 1..].iter().product();
    let left: usize = dims[..mode].iter().product();
    let mut out = vec![0.0; left * r * right];
    for l in 0..left {
        for row in 0..r {
            let dst = &mut out[(l * r + row) * right..(l * r + row + 1) * right];
            for i in 0..n {
                let w = a[(row, i)];
                if w == 0.0 {
                    continue;
                }
                let src = &values[(l * n + i) * right..(l * n + i + 1) * right];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims[mode] = r;
    (new_dims, out)
}

fn check_rep_dims(b: &DenseTensor, p: &RankOneRep) -> Result<()> {
    if b.dims() != p.dims().as_slice() {
        return Err(Error::DimMismatch(format!(
            "tensor dims {:?} vs representation dims {:?}",
            b.dims(),
            p.dims()
        )));
    }
    Ok(())
}

pub(crate) fn contract_except(b: &DenseTensor, factors: &[Vec<f64>], mode: usize) -> Vec<f64> {
    let vecs: Vec<Option<&[f64]>> = factors
        .iter()
        .enumerate()
        .map(|(m, p)| (m != mode).then_some(p.as_slice()))
        .collect();
    contract_modes(&b.dims, &b.values, &vecs).1
}

/// `(p_1 ⊗ ⋯ ⊗ Id ⊗ ⋯ ⊗ p_d)ᵀ b` with the identity in slot `mode`.
///
/// With `normalized` each fixed factor enters as `p_ν / ‖p_ν‖²`, which is the
/// least-squares update of a micro step.
pub fn contract_all_but_one(
    b: &DenseTensor,
    p: &RankOneRep,
    mode: usize,
    normalized: bool,
) -> Result<Vec<f64>> {
    check_rep_dims(b, p)?;
    if mode >= p.order() {
        return Err(Error::DimMismatch(format!(
            "mode {mode} out of range for order {}",
            p.order()
        )));
    }
    let mut out = contract_except(b, &p.factors, mode);
    if normalized {
        let denom: f64 = p
            .factors
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != mode)
            .map(|(_, f)| linalg::norm_sq(f))
            .product();
        if denom == 0.0 {
            return Err(Error::DegenerateFactor { mode });
        }
        out.iter_mut().for_each(|x| *x /= denom);
    }
    Ok(out)
}

/// Matrix `M` of shape `n_mode × n_nu` with
/// `M g = (p_1 ⊗ ⋯ ⊗ g ⊗ ⋯ ⊗ Id ⊗ ⋯ ⊗ p_d)ᵀ b`, where `g` sits in slot `nu`
/// and the identity in slot `mode`. `partial` holds the remaining `d − 2`
/// vectors in mode order.
pub fn contraction_matrix(
    b: &DenseTensor,
    partial: &[Vec<f64>],
    nu: usize,
    mode: usize,
) -> Result<Matrix> {
    let d = b.order();
    if nu == mode || nu >= d || mode >= d {
        return Err(Error::DimMismatch(format!(
            "need two distinct modes below {d}, got {nu} and {mode}"
        )));
    }
    if partial.len() != d - 2 {
        return Err(Error::DimMismatch(format!(
            "expected {} fixed vectors, got {}",
            d - 2,
            partial.len()
        )));
    }
    let mut it = partial.iter();
    let mut vecs: Vec<Option<&[f64]>> = Vec::with_capacity(d);
    for m in 0..d {
        if m == nu || m == mode {
            vecs.push(None);
        } else {
            let v = it.next().expect("length checked");
            if v.len() != b.dims[m] {
                return Err(Error::DimMismatch(format!(
                    "vector for mode {m} has length {}, expected {}",
                    v.len(),
                    b.dims[m]
                )));
            }
            vecs.push(Some(v));
        }
    }
    let (kept, vals) = contract_modes(&b.dims, &b.values, &vecs);
    let first = Matrix::from_row_major(kept[0], kept[1], vals)?;
    // `first` is indexed (lower mode, higher mode).
    Ok(if mode < nu { first } else { first.transpose() })
}

/// [`contraction_matrix`] with the fixed vectors taken from `p`.
pub fn contraction_matrix_at(
    b: &DenseTensor,
    p: &RankOneRep,
    nu: usize,
    mode: usize,
) -> Result<Matrix> {
    check_rep_dims(b, p)?;
    let partial: Vec<Vec<f64>> = p
        .factors
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != nu && m != mode)
        .map(|(_, f)| f.clone())
        .collect();
    contraction_matrix(b, &partial, nu, mode)
}

/// `⟨b, U(p)⟩` through a full contraction (no dense `U(p)`).
pub fn inner_rank_one(b: &DenseTensor, p: &RankOneRep) -> Result<f64> {
    check_rep_dims(b, p)?;
    let c = contract_except(b, &p.factors, 0);
    Ok(linalg::dot(&c, &p.factors[0]))
}

/// `½⟨v,v⟩ − ⟨b,v⟩`.
pub fn raw_objective(v: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    Ok(0.5 * v.norm_sq() - inner(b, v)?)
}

/// `f(v) = (½⟨v,v⟩ − ⟨b,v⟩) / ‖b‖²`, bounded below by `−½`.
pub fn objective_f(v: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    let bb = b.norm_sq();
    if bb == 0.0 {
        return Err(Error::ZeroTarget);
    }
    Ok(raw_objective(v, b)? / bb)
}

/// Gradient of `F = f ∘ U` with respect to each factor.
pub fn gradient_f(p: &RankOneRep, b: &DenseTensor) -> Result<Vec<Vec<f64>>> {
    check_rep_dims(b, p)?;
    let bb = b.norm_sq();
    if bb == 0.0 {
        return Err(Error::ZeroTarget);
    }
    let norms = p.norms_sq();
    (0..p.order())
        .map(|mode| {
            let g: f64 = norms
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != mode)
                .map(|(_, n)| n)
                .product();
            let c = contract_except(b, &p.factors, mode);
            Ok(p.factors[mode]
                .iter()
                .zip(&c)
                .map(|(x, y)| (g * x - y) / bb)
                .collect())
        })
        .collect()
}

/// Largest Euclidean norm among the per-mode gradient blocks.
pub fn gradient_norm(p: &RankOneRep, b: &DenseTensor) -> Result<f64> {
    Ok(gradient_f(p, b)?
        .iter()
        .map(|g| linalg::norm(g))
        .fold(0.0, f64::max))
}

const UNIT_TOL: f64 = 1e-12;

/// `Σ_j λ_j ⊗_μ B_μ[:, j]` with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor {
    weights: Vec<f64>,
    factors: Vec<Matrix>,
    orthonormal: bool,
}

impl CpTensor {
    pub fn new(weights: Vec<f64>, factors: Vec<Matrix>, orthonormal: bool) -> Result<Self> {
        let r = weights.len();
        if r == 0 {
            return Err(Error::BadDims("CP tensor needs at least one term".into()));
        }
        let dims: Vec<usize> = factors.iter().map(Matrix::rows).collect();
        check_dims(&dims)?;
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("CP weights must be positive".into()));
        }
        if weights.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "CP weights must be in descending order".into(),
            ));
        }
        for (mode, f) in factors.iter().enumerate() {
            if f.cols() != r {
                return Err(Error::DimMismatch(format!(
                    "factor {mode} has {} columns, expected {r}",
                    f.cols()
                )));
            }
            for j in 0..r {
                let n = linalg::norm(&f.column(j));
                if (n - 1.0).abs() > UNIT_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "column {j} of factor {mode} has norm {n}, expected 1"
                    )));
                }
            }
            if orthonormal {
                let g = f.transpose().matmul(f);
                if g.max_abs_diff(&Matrix::identity(r)) > UNIT_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "factor {mode} is flagged orthonormal but BᵀB ≠ Id"
                    )));
                }
            }
        }
        Ok(CpTensor {
            weights,
            factors,
            orthonormal,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// Unit vector `b_{jμ}`.
    pub fn column(&self, term: usize, mode: usize) -> Vec<f64> {
        self.factors[mode].column(term)
    }

    /// The term `λ_j ⊗ b_{jμ}` as a representation system (weight folded into mode 0).
    pub fn term(&self, term: usize) -> RankOneRep {
        let mut factors: Vec<Vec<f64>> =
            (0..self.order()).map(|m| self.column(term, m)).collect();
        factors[0] = linalg::scaled(&factors[0], self.weights[term]);
        RankOneRep::new(factors).expect("unit columns are nonzero")
    }

    /// `⟨b, U(p)⟩ = Σ_j λ_j ∏_μ ⟨b_{jμ}, p_μ⟩`.
    pub fn inner_rank_one(&self, p: &RankOneRep) -> Result<f64> {
        if p.dims() != self.dims() {
            return Err(Error::DimMismatch("CP tensor vs representation".into()));
        }
        Ok((0..self.rank())
            .map(|j| {
                self.weights[j]
                    * (0..self.order())
                        .map(|m| linalg::dot(&self.column(j, m), p.factor(m)))
                        .product::<f64>()
            })
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        let r = self.rank();
        let mut total = 0.0;
        for j in 0..r {
            for l in 0..r {
                let prod: f64 = self
                    .factors
                    .iter()
                    .map(|f| linalg::dot(&f.column(j), &f.column(l)))
                    .product();
                total += self.weights[j] * self.weights[l] * prod;
            }
        }
        total
    }
}

pub fn cp_to_dense(t: &CpTensor) -> DenseTensor {
    let dims = t.dims();
    let len = dims.iter().product();
    let mut values = vec![0.0; len];
    for j in 0..t.rank() {
        let cols: Vec<Vec<f64>> = (0..t.order()).map(|m| t.column(j, m)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        for (v, x) in values.iter_mut().zip(outer_product(&refs)) {
            *v += t.weights[j] * x;
        }
    }
    DenseTensor { dims, values }
}

/// `Σ β_{i_1…i_d} ⊗_μ B_μ[:, i_μ]` with a dense coefficient core.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    core: DenseTensor,
    factors: Vec<Matrix>,
}

impl TuckerTensor {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::DimMismatch(format!(
                "core of order {} with {} factor matrices",
                core.order(),
                factors.len()
            )));
        }
        for (mode, (f, &t)) in factors.iter().zip(core.dims()).enumerate() {
            if f.cols() != t {
                return Err(Error::DimMismatch(format!(
                    "factor {mode} has {} columns, core mode size is {t}",
                    f.cols()
                )));
            }
            if t > f.rows() {
                return Err(Error::BadDims(format!(
                    "core size {t} exceeds mode size {} in mode {mode}",
                    f.rows()
                )));
            }
        }
        Ok(TuckerTensor { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn order(&self) -> usize {
        self.core.order()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// `⟨b, U(p)⟩` via the projected vectors `B_μᵀ p_μ`.
    pub fn inner_rank_one(&self, p: &RankOneRep) -> Result<f64> {
        if p.dims() != self.dims() {
            return Err(Error::DimMismatch("Tucker tensor vs representation".into()));
        }
        let projected: Vec<Vec<f64>> = self
            .factors
            .iter()
            .zip(p.factors())
            .map(|(f, x)| f.tr_matvec(x))
            .collect();
        let vecs: Vec<Option<&[f64]>> = projected.iter().map(|v| Some(v.as_slice())).collect();
        let (_, vals) = contract_modes(self.core.dims(), self.core.values(), &vecs);
        Ok(vals[0])
    }

    /// `⟨β, (G_1 ⊗ ⋯ ⊗ G_d) β⟩` with the Gram matrices `G_μ = B_μᵀ B_μ`.
    pub fn norm_sq(&self) -> f64 {
        let mut dims = self.core.dims().to_vec();
        let mut vals = self.core.values().to_vec();
        for (m, f) in self.factors.iter().enumerate() {
            let g = f.transpose().matmul(f);
            (dims, vals) = mode_product(&dims, &vals, m, &g);
        }
        linalg::dot(&vals, self.core.values())
    }
}

pub fn tucker_to_dense(t: &TuckerTensor) -> DenseTensor {
    let mut dims = t.core.dims().to_vec();
    let mut vals = t.core.values().to_vec();
    for (m, f) in t.factors.iter().enumerate() {
        (dims, vals) = mode_product(&dims, &vals, m, f);
    }
    DenseTensor { dims, values: vals }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn mohlenkamp_dense() -> DenseTensor {
        DenseTensor::from_fn(vec![2, 2, 2], |i| match i {
            [0, 0, 0] => 2.0,
            [1, 1, 1] => 1.0,
            _ => 0.0,
        })
        .unwrap()
    }

    /// Entry-by-entry sum over all multi-indices, independent of the storage order helpers.
    fn brute_inner(a: &DenseTensor, b: &DenseTensor) -> f64 {
        let dims = a.dims().to_vec();
        let mut idx = vec![0; dims.len()];
        let mut s = 0.0;
        for _ in 0..a.len() {
            s += a.get(&idx) * b.get(&idx);
            increment(&mut idx, &dims);
        }
        s
    }

    #[test]
    fn inner_of_mohlenkamp_with_itself_is_five() {
        let b = mohlenkamp_dense();
        assert_eq!(brute_inner(&b, &b), 5.0);
        assert_eq!(inner(&b, &b).unwrap(), 5.0);
        let z = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert_eq!(inner(&b, &z).unwrap(), 0.0);
    }

    #[test]
    fn inner_rejects_shape_mismatch() {
        let a = DenseTensor::zeros(vec![2, 2]).unwrap();
        let b = DenseTensor::zeros(vec![2, 3]).unwrap();
        assert!(matches!(inner(&a, &b), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn construction_invariants() {
        assert!(DenseTensor::new(vec![2], vec![0.0; 2]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            RankOneRep::new(vec![vec![1.0], vec![0.0, 0.0]]),
            Err(Error::DegenerateFactor { mode: 1 })
        ));
    }

    #[test]
    fn evaluate_unit_and_tau_vectors() {
        let p = RankOneRep::new(vec![e(2, 0), e(2, 0), e(2, 0)]).unwrap();
        let v = evaluate_rank_one(&p);
        assert_eq!(v.get(&[0, 0, 0]), 1.0);
        assert_eq!(v.norm_sq(), 1.0);

        let tau = 0.37;
        let p = RankOneRep::new(vec![vec![tau, 1.0]; 3]).unwrap();
        let v = evaluate_rank_one(&p);
        assert!((v.get(&[0, 0, 0]) - tau * tau * tau).abs() < 1e-16);
        assert_eq!(v.get(&[1, 1, 1]), 1.0);
        assert!((v.get(&[0, 1, 1]) - tau).abs() < 1e-16);

        let p2 = RankOneRep::new(vec![vec![2.0 * tau, 2.0], vec![tau, 1.0], vec![tau, 1.0]]).unwrap();
        let diff = evaluate_rank_one(&p2).max_abs_diff(&v.scale(2.0)).unwrap();
        assert!(diff < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let b = mohlenkamp_dense();
        let v = RankOneRep::new(vec![vec![2.0, 0.0], e(2, 0), e(2, 0)])
            .unwrap()
            .evaluate();
        // (1/5)(½·4 − 4)
        assert!((objective_f(&v, &b).unwrap() + 0.4).abs() < 1e-15);
        let z = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert_eq!(objective_f(&z, &b).unwrap(), 0.0);
        assert_eq!(objective_f(&b, &b).unwrap(), -0.5);
        assert_eq!(objective_f(&b, &z), Err(Error::ZeroTarget));
        assert_eq!(raw_objective(&v, &b).unwrap(), -2.0);
    }

    #[test]
    fn contraction_examples() {
        let b = mohlenkamp_dense();
        assert!(contract_all_but_one(&b, &RankOneRep::new(vec![vec![1.0; 3]; 3]).unwrap(), 0, true).is_err());
        let ones = RankOneRep::new(vec![vec![1.0, 1.0]; 3]).unwrap();
        // Σ over (i2,i3) of b[:,i2,i3] = (2, 1), divided by ‖(1,1)‖⁴ = 4.
        assert_eq!(contract_all_but_one(&b, &ones, 0, true).unwrap(), vec![0.5, 0.25]);
        assert_eq!(contract_all_but_one(&b, &ones, 0, false).unwrap(), vec![2.0, 1.0]);

        // exact rank-one target returns the factor itself
        let q = RankOneRep::new(vec![vec![0.3, -1.2], vec![2.0, 0.5, 1.0], vec![-0.7, 0.4]]).unwrap();
        let bq = q.evaluate();
        for mode in 0..3 {
            let c = contract_all_but_one(&bq, &q, mode, true).unwrap();
            assert!(linalg::max_abs_diff(&c, q.factor(mode)) < 1e-14);
        }

        // unnormalized output scales with the fixed factors
        let (alpha, beta) = (1.7, -0.3);
        let scaled = RankOneRep::new(vec![
            q.factor(0).to_vec(),
            linalg::scaled(q.factor(1), alpha),
            linalg::scaled(q.factor(2), beta),
        ])
        .unwrap();
        let c0 = contract_all_but_one(&bq, &q, 0, false).unwrap();
        let c1 = contract_all_but_one(&bq, &scaled, 0, false).unwrap();
        assert!(linalg::max_abs_diff(&c1, &linalg::scaled(&c0, alpha * beta)) < 1e-14);
    }

    #[test]
    fn contraction_matrix_examples() {
        let b = mohlenkamp_dense();
        let m = contraction_matrix(&b, &[vec![1.0, 1.0]], 0, 2).unwrap();
        assert_eq!(m, Matrix::from_row_major(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap());
        let z = DenseTensor::zeros(vec![2, 3, 4]).unwrap();
        let m = contraction_matrix(&z, &[vec![1.0; 3]], 0, 2).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 2));
        assert_eq!(m.max_abs(), 0.0);
        assert!(contraction_matrix(&b, &[vec![1.0; 3]], 0, 2).is_err());
        assert!(contraction_matrix(&b, &[vec![1.0; 2]], 1, 1).is_err());
    }

    #[test]
    fn gradient_vanishes_at_mohlenkamp_minimizer() {
        let b = mohlenkamp_dense();
        let p = RankOneRep::new(vec![vec![2.0, 0.0], e(2, 0), e(2, 0)]).unwrap();
        for g in gradient_f(&p, &b).unwrap() {
            assert!(g.iter().all(|x| x.abs() < 1e-16));
        }
    }

    #[test]
    fn structured_expansions() {
        let cp = CpTensor::new(
            vec![2.0, 1.0],
            vec![Matrix::identity(2); 3],
            true,
        )
        .unwrap();
        let dense = cp_to_dense(&cp);
        assert_eq!(dense, mohlenkamp_dense());
        let nonzero: Vec<f64> = dense.values().iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero, vec![2.0, 1.0]);
        assert_eq!(cp.norm_sq(), 5.0);

        let core = DenseTensor::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as f64 - 2.5).unwrap();
        let t = TuckerTensor::new(core.clone(), vec![Matrix::identity(2), Matrix::identity(3)]).unwrap();
        assert_eq!(tucker_to_dense(&t), core);
    }

    #[test]
    fn cp_validation() {
        let bad = Matrix::from_row_major(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(CpTensor::new(vec![1.0], vec![bad.clone(), bad], false).is_err());
        assert!(CpTensor::new(vec![1.0, 2.0], vec![Matrix::identity(2); 3], true).is_err());
        let skew = Matrix::from_row_major(2, 2, vec![1.0, 0.6, 0.0, 0.8]).unwrap();
        assert!(CpTensor::new(vec![1.0, 1.0], vec![skew.clone(), skew.clone()], true).is_err());
        assert!(CpTensor::new(vec![1.0, 1.0], vec![skew.clone(), skew], false).is_ok());
    }

    #[test]
    fn single_term_cp_is_scaled_rank_one() {
        let col = Matrix::from_row_major(3, 1, vec![0.6, 0.0, 0.8]).unwrap();
        let col2 = Matrix::from_row_major(2, 1, vec![0.0, 1.0]).unwrap();
        let cp = CpTensor::new(vec![3.0], vec![col, col2], false).unwrap();
        let rep = RankOneRep::new(vec![vec![0.6, 0.0, 0.8], vec![0.0, 1.0]]).unwrap();
        let diff = cp_to_dense(&cp).max_abs_diff(&rep.evaluate().scale(3.0)).unwrap();
        assert!(diff < 1e-15);
    }
}
