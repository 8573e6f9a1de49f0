//! Constructors for the tensor families and initial guesses used by the
//! experiments. Every seeded generator draws from `Xoshiro256PlusPlus`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::tensor::{CpTensor, DenseTensor, RankOneRep, TuckerTensor};

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// `n × r` matrix with orthonormal columns from uniform samples.
fn random_orthonormal(n: usize, r: usize, rng: &mut impl Rng) -> Result<Matrix> {
    // resample on the (measure-zero) event of a dependent draw
    for _ in 0..16 {
        let data = (0..n * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(q) = linalg::orthonormalize_columns(&Matrix::from_row_major(n, r, data)?) {
            return Ok(q);
        }
    }
    Err(Error::BadDims(format!("could not draw {r} independent vectors in R^{n}")))
}

/// `2 e1⊗e1⊗e1 + e2⊗e2⊗e2`.
pub fn gen_mohlenkamp() -> CpTensor {
    CpTensor::new(vec![2.0, 1.0], vec![Matrix::identity(2); 3], true)
        .expect("identity factors are orthonormal")
}

/// Every factor equal to `(τ, 1)`.
pub fn gen_initial_tau(tau: f64, d: usize) -> Result<RankOneRep> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::OutOfRange(format!("τ must be a finite non-negative number, got {tau}")));
    }
    RankOneRep::new(vec![vec![tau, 1.0]; d])
}

#[derive(Debug, Clone)]
pub struct BLambda {
    pub tensor: DenseTensor,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl BLambda {
    /// The rank-one tensor `p ⊗ ⋯ ⊗ p`.
    pub fn p_power(&self) -> RankOneRep {
        RankOneRep::new(vec![self.p.clone(); self.tensor.order()]).expect("p is a unit vector")
    }
}

/// `⊗^d p + λ Σ_i (q ⊗ ⋯ ⊗ p ⊗ ⋯ ⊗ q)` with `p` in slot `i`, for random
/// orthonormal `p, q ∈ R^n`.
pub fn gen_b_lambda(lambda: f64, d: usize, n: usize, seed: u64) -> Result<BLambda> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::NegativeLambda(lambda));
    }
    if n < 2 {
        return Err(Error::BadDims(format!("need n ≥ 2 for two orthonormal vectors, got {n}")));
    }
    if d < 3 {
        return Err(Error::BadDims(format!("need order d ≥ 3, got {d}")));
    }
    let basis = random_orthonormal(n, 2, &mut rng(seed))?;
    let (p, q) = (basis.column(0), basis.column(1));
    let tensor = DenseTensor::from_fn(vec![n; d], |idx| {
        let all_p: f64 = idx.iter().map(|&i| p[i]).product();
        let mixed: f64 = (0..d)
            .map(|slot| {
                idx.iter()
                    .enumerate()
                    .map(|(m, &i)| if m == slot { p[i] } else { q[i] })
                    .product::<f64>()
            })
            .sum();
        all_p + lambda * mixed
    })?;
    Ok(BLambda { tensor, p, q })
}

/// Orthogonally decomposable CP tensor with the given descending weights.
pub fn gen_orthogonal_cp(weights: &[f64], dims: &[usize], seed: u64) -> Result<CpTensor> {
    let r = weights.len();
    let max = dims.iter().copied().min().unwrap_or(0);
    if r > max {
        return Err(Error::RankTooLarge { r, max });
    }
    let mut g = rng(seed);
    let factors = dims
        .iter()
        .map(|&n| random_orthonormal(n, r, &mut g))
        .collect::<Result<Vec<_>>>()?;
    CpTensor::new(weights.to_vec(), factors, true)
}

/// Two-term example on which the sweep order decides the limit:
/// `b = e1⊗e1⊗e1 + λ e2⊗e2⊗e2` with initial factors `e1 + α_μ e2`, `α_1 = 1`.
pub fn gen_ordering_example(lambda: f64, alpha2: f64, alpha3: f64) -> Result<(CpTensor, RankOneRep)> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::ConstraintViolated(format!("need 0 < λ < 1, got {lambda}")));
    }
    if !(alpha2 >= 1.0 && 1.0 >= alpha3 && alpha3 > 0.0) {
        return Err(Error::ConstraintViolated(format!(
            "need α2 ≥ 1 ≥ α3 > 0, got α2 = {alpha2}, α3 = {alpha3}"
        )));
    }
    let upper = alpha2.powi(3) * alpha3.powi(2);
    let mid = lambda.powi(-5);
    let lower = alpha2.powi(2) * alpha3.powi(3);
    if !(upper >= mid && mid >= lower) {
        return Err(Error::ConstraintViolated(format!(
            "need α2³α3² ≥ λ⁻⁵ ≥ α2²α3³, got {upper} ≥ {mid} ≥ {lower}"
        )));
    }
    let cp = CpTensor::new(vec![1.0, lambda], vec![Matrix::identity(2); 3], true)?;
    let init = RankOneRep::new(vec![vec![1.0, 1.0], vec![1.0, alpha2], vec![1.0, alpha3]])?;
    Ok((cp, init))
}

/// Random Tucker tensor with uniform core entries and orthonormal factors.
pub fn gen_synthetic_order4(seed: u64, dims: &[usize], ranks: &[usize]) -> Result<TuckerTensor> {
    if dims.len() != ranks.len() {
        return Err(Error::BadDims(format!(
            "{} mode sizes but {} ranks",
            dims.len(),
            ranks.len()
        )));
    }
    if let Some(m) = (0..dims.len()).find(|&m| ranks[m] == 0 || ranks[m] > dims[m]) {
        return Err(Error::BadDims(format!(
            "rank {} in mode {} must lie in 1..={}",
            ranks[m],
            m + 1,
            dims[m]
        )));
    }
    let mut g = rng(seed);
    let len: usize = ranks.iter().product();
    let core_vals: Vec<f64> = (0..len).map(|_| g.random_range(-1.0..1.0)).collect();
    let core = DenseTensor::new(ranks.to_vec(), core_vals)?;
    let factors = dims
        .iter()
        .zip(ranks)
        .map(|(&n, &t)| random_orthonormal(n, t, &mut g))
        .collect::<Result<Vec<_>>>()?;
    TuckerTensor::new(core, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{cp_to_dense, tucker_to_dense};

    #[test]
    fn mohlenkamp_shape() {
        let cp = gen_mohlenkamp();
        assert_eq!(cp.weights(), &[2.0, 1.0]);
        assert_eq!(cp_to_dense(&cp).norm_sq(), 5.0);
    }

    #[test]
    fn tau_initial_guesses() {
        let p = gen_initial_tau(0.0, 3).unwrap();
        assert!(p.factors().iter().all(|f| f == &[0.0, 1.0]));
        let v = gen_initial_tau(1.0, 3).unwrap().evaluate();
        assert!(v.values().iter().all(|&x| x == 1.0));
        assert!(gen_initial_tau(-0.1, 3).is_err());
    }

    #[test]
    fn b_lambda_structure() {
        let b0 = gen_b_lambda(0.0, 3, 3, 5).unwrap();
        let diff = b0.p_power().evaluate().max_abs_diff(&b0.tensor).unwrap();
        assert!(diff < 1e-15);
        for d in [3, 4] {
            let bl = gen_b_lambda(0.3, d, 3, 11).unwrap();
            let expected = 1.0 + d as f64 * 0.09;
            assert!((bl.tensor.norm_sq() - expected).abs() < 1e-12);
            let qq = RankOneRep::new(vec![bl.q.clone(); d]).unwrap();
            let ip = crate::tensor::inner_rank_one(&bl.tensor, &qq).unwrap();
            assert!(ip.abs() < 1e-14);
        }
        assert!(matches!(gen_b_lambda(0.2, 3, 1, 0), Err(Error::BadDims(_))));
        assert!(matches!(gen_b_lambda(0.2, 2, 3, 0), Err(Error::BadDims(_))));
    }

    #[test]
    fn orthogonal_cp_properties() {
        let cp = gen_orthogonal_cp(&[3.0, 2.0, 0.5], &[3, 4, 5], 9).unwrap();
        for f in cp.factors() {
            let g = f.transpose().matmul(f);
            assert!(g.max_abs_diff(&Matrix::identity(3)) <= 1e-12);
        }
        assert!((cp_to_dense(&cp).norm_sq() - (9.0 + 4.0 + 0.25)).abs() < 1e-12);
        assert_eq!(
            gen_orthogonal_cp(&[2.0, 1.0, 0.5], &[2, 4, 4], 0).unwrap_err(),
            Error::RankTooLarge { r: 3, max: 2 }
        );
    }

    #[test]
    fn ordering_constraints() {
        assert!(matches!(
            gen_ordering_example(0.9, 1.9, 0.85),
            Err(Error::ConstraintViolated(_))
        ));
        let (cp, init) = gen_ordering_example(0.9, 2.0, 0.72).unwrap();
        assert_eq!(cp.weights(), &[1.0, 0.9]);
        assert_eq!(init.factor(1), &[1.0, 2.0]);
    }

    #[test]
    fn synthetic_tucker() {
        let a = gen_synthetic_order4(3, &[4, 4, 3, 3], &[2, 3, 2, 2]).unwrap();
        let b = gen_synthetic_order4(3, &[4, 4, 3, 3], &[2, 3, 2, 2]).unwrap();
        assert_eq!(a, b);
        let dense = tucker_to_dense(&a);
        assert!((dense.norm_sq() - a.norm_sq()).abs() < 1e-12);
        assert!(gen_synthetic_order4(3, &[4, 4], &[5, 1]).is_err());
        let r1 = gen_synthetic_order4(1, &[3, 3, 3, 3], &[1, 1, 1, 1]).unwrap();
        assert!(crate::diagnostics::Reference::from_tensor(tucker_to_dense(&r1))
            .unwrap()
            .factors
            .is_some());
    }
}
