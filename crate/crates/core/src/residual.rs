//! Bellman residuals, kernel ridge regression of the residual operator, and
//! the closed forms used by both uncertainty sets.
//!
//! Ridge convention: the regression objective averages the squared loss over
//! the `n` transitions, so its stationarity condition is
//! `(K/n + zeta I) a' = Y/n`. We store `alpha = (K + n zeta I)^{-1} Y`, which
//! defines the same function, and every quantity below uses the effective
//! ridge `n * zeta`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Transition;
use crate::error::{check_dim, Error, Result};
use crate::funcapprox::{Policy, QFunction};
use crate::kernel::{self, GramMatrix, KernelSpec};
use crate::linalg::SpdFactor;

/// Residuals `Y_it = r_it + gamma Q(s'_it, pi(s'_it)) - Q(s_it, a_it)`, in the
/// transition order of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    pub values: Vec<f64>,
    pub policy_id: Option<String>,
    pub q_id: Option<String>,
}

impl ResidualVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, policy_id: None, q_id: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub(crate) fn check_discount(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("discount must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

pub fn residual_vector<'a, I, P, Q>(transitions: I, policy: &P, q: &Q, gamma: f64) -> Result<ResidualVector>
where
    I: IntoIterator<Item = &'a Transition>,
    P: Policy + ?Sized,
    Q: QFunction + ?Sized,
{
    check_discount(gamma)?;
    check_dim(q.action_dim(), policy.action_dim())?;
    check_dim(q.state_dim(), policy.state_dim())?;
    let mut values = Vec::new();
    for tr in transitions {
        check_dim(q.state_dim(), tr.state.len())?;
        check_dim(q.action_dim(), tr.action.len())?;
        let next = if gamma == 0.0 {
            0.0
        } else {
            let a_next = policy.act(&tr.next_state);
            gamma * q.value(&tr.next_state, &a_next)
        };
        values.push(tr.reward + next - q.value(&tr.state, &tr.action));
    }
    if values.is_empty() {
        return Err(Error::Empty("no transitions".into()));
    }
    Ok(ResidualVector::new(values))
}

/// Concatenated `(s, a)` points in transition order.
pub fn state_action_points<'a>(transitions: impl IntoIterator<Item = &'a Transition>) -> Vec<Vec<f64>> {
    transitions
        .into_iter()
        .map(|t| {
            let mut z = t.state.clone();
            z.extend_from_slice(&t.action);
            z
        })
        .collect()
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta.is_finite() && zeta > 0.0) {
        return Err(Error::InvalidParameter(format!("ridge parameter must be positive, got {zeta}")));
    }
    Ok(())
}

/// Kernel ridge fit of the residual vector.
#[derive(Debug, Clone)]
pub struct KrrFit {
    pub alpha: DVector<f64>,
    pub zeta: f64,
    pub points: Vec<Vec<f64>>,
    pub spec: KernelSpec,
}

impl KrrFit {
    /// Squared RKHS norm of the fitted function, `alpha^T K alpha`.
    pub fn norm_sq(&self, gram: &GramMatrix) -> f64 {
        self.alpha.dot(&(&gram.entries * &self.alpha)).max(0.0)
    }
}

fn ridge_factor(gram: &GramMatrix, zeta: f64) -> Result<(SpdFactor, f64)> {
    check_zeta(zeta)?;
    let n = gram.dim();
    let ridge = n as f64 * zeta;
    let mut shifted = gram.entries.clone();
    for i in 0..n {
        shifted[(i, i)] += ridge;
    }
    Ok((SpdFactor::new(&shifted)?, ridge))
}

pub fn krr_fit(gram: &GramMatrix, y: &ResidualVector, zeta: f64) -> Result<KrrFit> {
    check_dim(gram.dim(), y.len())?;
    let (factor, _) = ridge_factor(gram, zeta)?;
    let alpha = factor.solve(&y.as_dvector());
    Ok(KrrFit { alpha, zeta, points: gram.points.clone(), spec: gram.spec })
}

pub fn krr_eval(fit: &KrrFit, z: &[f64]) -> Result<f64> {
    check_dim(fit.points[0].len(), z.len())?;
    Ok(fit.points.iter().zip(fit.alpha.iter()).map(|(p, a)| a * fit.spec.eval_unchecked(p, z)).sum())
}

/// `Y^T (K + n zeta I)^{-1} K (K + n zeta I)^{-1} Y`.
pub fn rkhs_norm_sq(gram: &GramMatrix, y: &ResidualVector, zeta: f64) -> Result<f64> {
    check_dim(gram.dim(), y.len())?;
    let (factor, _) = ridge_factor(gram, zeta)?;
    let yv = y.as_dvector();
    let u = factor.solve(&yv);
    let w = factor.solve(&(&gram.entries * u));
    Ok(yv.dot(&w).max(0.0))
}

/// Supremum over the RKHS ball of radius `C` of the empirical weighted
/// residual mean: `(C / n) sqrt(Y^T K Y)`.
pub fn wball_sup(gram: &GramMatrix, y: &ResidualVector, c: f64) -> Result<f64> {
    check_dim(gram.dim(), y.len())?;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("ball radius must be positive, got {c}")));
    }
    let yv = y.as_dvector();
    let yky = yv.dot(&(&gram.entries * &yv)).max(0.0);
    Ok(c / gram.dim() as f64 * yky.sqrt())
}

/// Upper bound on the policy-value estimation error:
/// `supW + lambda2Mass * mmd * rkhsNorm`.
pub fn ope_error_bound(sup_w: f64, lambda2_mass: f64, mmd: f64, rkhs_norm: f64) -> Result<f64> {
    if [sup_w, lambda2_mass, mmd, rkhs_norm].iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter("error bound inputs must be finite and nonnegative".into()));
    }
    if lambda2_mass > 1.0 {
        return Err(Error::InvalidParameter(format!("singular mass must be at most 1, got {lambda2_mass}")));
    }
    Ok(sup_w + lambda2_mass * mmd * rkhs_norm)
}

/// Gram matrix, ridge factorization and cached shrinkage operator for one
/// fixed set of state-action points.
#[derive(Debug)]
pub struct KernelContext {
    gram: GramMatrix,
    zeta: f64,
    ridge: f64,
    factor: SpdFactor,
    shrinkage: OnceLock<DMatrix<f64>>,
}

impl KernelContext {
    pub fn new(points: &[Vec<f64>], spec: KernelSpec, zeta: f64) -> Result<Self> {
        let gram = kernel::gram(&spec, points)?;
        Self::from_gram(gram, zeta)
    }

    pub fn from_gram(gram: GramMatrix, zeta: f64) -> Result<Self> {
        let (factor, ridge) = ridge_factor(&gram, zeta)?;
        Ok(Self { gram, zeta, ridge, factor, shrinkage: OnceLock::new() })
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.gram.spec
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Effective diagonal shift `n * zeta`.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    pub fn k_apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.gram.entries * y
    }

    /// `M = A K A` with `A = (K + n zeta I)^{-1}`, formed as `A - s A^2` where
    /// `s` is the total diagonal shift of the factorized matrix.
    pub fn shrinkage(&self) -> &DMatrix<f64> {
        self.shrinkage.get_or_init(|| {
            let a = self.factor.inverse();
            let shift = self.ridge + self.factor.jitter();
            let mut m = &a * &a;
            m *= -shift;
            m += a;
            // symmetrize round-off
            let mt = m.transpose();
            (m + mt) * 0.5
        })
    }

    pub fn krr_fit(&self, y: &ResidualVector) -> Result<KrrFit> {
        check_dim(self.dim(), y.len())?;
        Ok(KrrFit {
            alpha: self.factor.solve(&y.as_dvector()),
            zeta: self.zeta,
            points: self.gram.points.clone(),
            spec: self.gram.spec,
        })
    }

    pub fn yky(&self, y: &DVector<f64>) -> f64 {
        y.dot(&self.k_apply(y)).max(0.0)
    }

    pub fn rkhs_norm_sq(&self, y: &DVector<f64>) -> f64 {
        let u = self.factor.solve(y);
        u.dot(&self.k_apply(&u)).max(0.0)
    }

    pub fn wball_sup(&self, y: &DVector<f64>, c: f64) -> f64 {
        c / self.dim() as f64 * self.yky(y).sqrt()
    }
}
