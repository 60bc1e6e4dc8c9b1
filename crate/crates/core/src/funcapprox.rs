//! Linear-in-features Q-functions and box-constrained deterministic policies.
//!
//! Both classes share [`FeatureMap`]; a Q-function reads features of the
//! concatenated `(s, a)` and a policy reads features of `s`. All gradients are
//! analytic.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    /// All monomials of total degree at most `degree`, constant first.
    Polynomial { degree: u32 },
    /// `sqrt(2/m) cos(w.x + b)` with `w ~ N(0, I / bandwidth^2)` and
    /// `b ~ U[0, 2 pi)` drawn once from `seed`.
    RandomFourier { features: usize, bandwidth: f64, seed: u64 },
}

#[derive(Debug, Clone)]
enum Basis {
    Monomials(Vec<Vec<u32>>),
    Fourier { freq: Vec<Vec<f64>>, phase: Vec<f64>, scale: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureMapDoc {
    kind: FeatureKind,
    input_dim: usize,
}

/// Deterministic feature map; equal `(kind, input_dim)` give bit-identical
/// features.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapDoc", into = "FeatureMapDoc")]
pub struct FeatureMap {
    kind: FeatureKind,
    input_dim: usize,
    basis: Basis,
}

impl PartialEq for FeatureMap {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.input_dim == other.input_dim
    }
}

impl TryFrom<FeatureMapDoc> for FeatureMap {
    type Error = Error;
    fn try_from(doc: FeatureMapDoc) -> Result<Self> {
        FeatureMap::new(doc.kind, doc.input_dim)
    }
}

impl From<FeatureMap> for FeatureMapDoc {
    fn from(map: FeatureMap) -> Self {
        FeatureMapDoc { kind: map.kind, input_dim: map.input_dim }
    }
}

fn monomials(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn fill(dim: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == dim {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for e in (0..=left).rev() {
            cur[pos] = e;
            fill(dim, pos + 1, left - e, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = vec![0; dim];
        fill(dim, 0, total, &mut cur, &mut out);
    }
    out
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParameter("feature map needs a positive input dimension".into()));
        }
        let basis = match &kind {
            FeatureKind::Polynomial { degree } => Basis::Monomials(monomials(input_dim, *degree)),
            FeatureKind::RandomFourier { features, bandwidth, seed } => {
                if *features == 0 || !(bandwidth.is_finite() && *bandwidth > 0.0) {
                    return Err(Error::InvalidParameter(
                        "random Fourier features need m > 0 and a positive bandwidth".into(),
                    ));
                }
                let mut r = rng::seeded(*seed);
                let freq = (0..*features)
                    .map(|_| (0..input_dim).map(|_| r.sample::<f64, _>(StandardNormal) / bandwidth).collect())
                    .collect();
                let phase = (0..*features).map(|_| r.random::<f64>() * std::f64::consts::TAU).collect();
                Basis::Fourier { freq, phase, scale: (2.0 / *features as f64).sqrt() }
            }
        };
        Ok(Self { kind, input_dim, basis })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of features `p`.
    pub fn dim(&self) -> usize {
        match &self.basis {
            Basis::Monomials(m) => m.len(),
            Basis::Fourier { phase, .. } => phase.len(),
        }
    }

    /// Frozen random frequencies, one row per feature (empty for polynomials).
    pub fn fourier_frequencies(&self) -> &[Vec<f64>] {
        match &self.basis {
            Basis::Fourier { freq, .. } => freq,
            Basis::Monomials(_) => &[],
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.basis {
            Basis::Monomials(exps) => exps
                .iter()
                .map(|e| e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product())
                .collect(),
            Basis::Fourier { freq, phase, scale } => freq
                .iter()
                .zip(phase)
                .map(|(w, b)| scale * (dot(w, x) + b).cos())
                .collect(),
        }
    }

    /// `sum_j weights[j] * d phi_j / d x_c` for each `c` in `coords`.
    pub(crate) fn contract_gradient(&self, x: &[f64], weights: &[f64], coords: std::ops::Range<usize>) -> Vec<f64> {
        let mut out = vec![0.0; coords.len()];
        match &self.basis {
            Basis::Monomials(exps) => {
                for (e, w) in exps.iter().zip(weights) {
                    if *w == 0.0 {
                        continue;
                    }
                    for (slot, c) in coords.clone().enumerate() {
                        if e[c] == 0 {
                            continue;
                        }
                        let mut term = e[c] as f64 * w;
                        for (k, (&ek, v)) in e.iter().zip(x).enumerate() {
                            let power = if k == c { ek - 1 } else { ek };
                            if power > 0 {
                                term *= v.powi(power as i32);
                            }
                        }
                        out[slot] += term;
                    }
                }
            }
            Basis::Fourier { freq, phase, scale } => {
                for ((f, b), w) in freq.iter().zip(phase).zip(weights) {
                    if *w == 0.0 {
                        continue;
                    }
                    let s = -scale * w * (dot(f, x) + b).sin();
                    for (slot, c) in coords.clone().enumerate() {
                        out[slot] += s * f[c];
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub trait QFunction: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn value(&self, state: &[f64], action: &[f64]) -> f64;
}

pub trait Policy: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn act(&self, state: &[f64]) -> Vec<f64>;
}

impl<Q: QFunction + ?Sized> QFunction for &Q {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn value(&self, state: &[f64], action: &[f64]) -> f64 {
        (**self).value(state, action)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn act(&self, state: &[f64]) -> Vec<f64> {
        (**self).act(state)
    }
}

/// Q-function that is identically `c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantQ {
    pub value: f64,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl QFunction for ConstantQ {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn value(&self, _: &[f64], _: &[f64]) -> f64 {
        self.value
    }
}

/// Policy that ignores the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy {
    pub action: Vec<f64>,
    pub state_dim: usize,
}

impl Policy for ConstantPolicy {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action.len()
    }
    fn act(&self, _: &[f64]) -> Vec<f64> {
        self.action.clone()
    }
}

/// How the linear score enters the Q-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QForm {
    /// `Q = theta . phi(s, a)`.
    #[default]
    Linear,
    /// `Q = a * (theta . phi(s, a))`: a price times a modeled demand.
    /// Requires a scalar action.
    DemandStructured,
}

/// `Q(s, a) = clip(score(s, a), -clip, clip)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamQ {
    features: FeatureMap,
    state_dim: usize,
    action_dim: usize,
    pub weights: Vec<f64>,
    clip: f64,
    form: QForm,
}

impl ParamQ {
    pub fn new(kind: FeatureKind, state_dim: usize, action_dim: usize, clip: f64, form: QForm) -> Result<Self> {
        // zero is allowed and makes the class the single function Q = 0
        if !(clip >= 0.0 && clip.is_finite()) {
            return Err(Error::InvalidParameter(format!("clip bound must be nonnegative, got {clip}")));
        }
        if form == QForm::DemandStructured && action_dim != 1 {
            return Err(Error::InvalidParameter("demand-structured Q needs a scalar action".into()));
        }
        let features = FeatureMap::new(kind, state_dim + action_dim)?;
        let weights = vec![0.0; features.dim()];
        Ok(Self { features, state_dim, action_dim, weights, clip, form })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_dim(self.features.dim(), weights.len())?;
        self.weights = weights;
        Ok(self)
    }

    pub fn n_params(&self) -> usize {
        self.features.dim()
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip
    }

    pub fn form(&self) -> QForm {
        self.form
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.features
    }

    fn joint(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(s.len() + a.len());
        z.extend_from_slice(s);
        z.extend_from_slice(a);
        z
    }

    /// Design row `x(s, a)` with `score = weights . x`.
    pub fn design_row(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let phi = self.features.eval_unchecked(&self.joint(s, a));
        match self.form {
            QForm::Linear => phi,
            QForm::DemandStructured => phi.into_iter().map(|v| v * a[0]).collect(),
        }
    }

    /// `d score / d a` at fixed weights.
    pub fn score_action_grad(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let z = self.joint(s, a);
        let d = self.state_dim;
        let g = self.features.contract_gradient(&z, &self.weights, d..d + self.action_dim);
        match self.form {
            QForm::Linear => g,
            QForm::DemandStructured => {
                let demand = dot(&self.weights, &self.features.eval_unchecked(&z));
                vec![demand + a[0] * g[0]]
            }
        }
    }

    pub fn score(&self, s: &[f64], a: &[f64]) -> f64 {
        dot(&self.weights, &self.design_row(s, a))
    }

    pub fn eval(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        check_dim(self.state_dim, s.len())?;
        check_dim(self.action_dim, a.len())?;
        Ok(self.value(s, a))
    }

    /// Gradients with respect to the weights and the action. Both are zero at
    /// or beyond the clip boundary.
    pub fn grad(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.state_dim, s.len())?;
        check_dim(self.action_dim, a.len())?;
        let row = self.design_row(s, a);
        if dot(&self.weights, &row).abs() >= self.clip {
            return Ok((vec![0.0; row.len()], vec![0.0; self.action_dim]));
        }
        Ok((row, self.score_action_grad(s, a)))
    }
}

impl QFunction for ParamQ {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn value(&self, s: &[f64], a: &[f64]) -> f64 {
        self.score(s, a).clamp(-self.clip, self.clip)
    }
}

/// Per-coordinate action bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::InvalidParameter("action box needs finite lo < hi per coordinate".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `pi(s)_k = lo_k + (hi_k - lo_k) * sigmoid(sum_j psi[j, k] phi_j(s))`.
///
/// Weights are stored row-major as `psi[j * action_dim + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPolicy {
    features: FeatureMap,
    action_box: ActionBox,
    pub weights: Vec<f64>,
}

impl ParamPolicy {
    pub fn new(kind: FeatureKind, state_dim: usize, action_box: ActionBox) -> Result<Self> {
        let features = FeatureMap::new(kind, state_dim)?;
        let weights = vec![0.0; features.dim() * action_box.dim()];
        Ok(Self { features, action_box, weights })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_dim(self.weights.len(), weights.len())?;
        self.weights = weights;
        Ok(self)
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    pub fn action_box(&self) -> &ActionBox {
        &self.action_box
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.features
    }

    /// Weight `psi[feature, action_coord]`.
    pub fn coefficient(&self, feature: usize, action_coord: usize) -> f64 {
        self.weights[feature * self.action_box.dim() + action_coord]
    }

    fn logits(&self, phi: &[f64]) -> Vec<f64> {
        let da = self.action_box.dim();
        let mut u = vec![0.0; da];
        for (j, p) in phi.iter().enumerate() {
            for (k, uk) in u.iter_mut().enumerate() {
                *uk += self.weights[j * da + k] * p;
            }
        }
        u
    }

    pub fn eval(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.features.input_dim(), s.len())?;
        Ok(self.act(s))
    }

    /// Accumulate `upstream^T (d pi(s) / d psi)` into `out`.
    pub fn vjp(&self, s: &[f64], upstream: &[f64], out: &mut [f64]) {
        let phi = self.features.eval_unchecked(s);
        let u = self.logits(&phi);
        let da = self.action_box.dim();
        for k in 0..da {
            let sg = sigmoid(u[k]);
            let scale = upstream[k] * (self.action_box.hi[k] - self.action_box.lo[k]) * sg * (1.0 - sg);
            if scale == 0.0 {
                continue;
            }
            for (j, p) in phi.iter().enumerate() {
                out[j * da + k] += scale * p;
            }
        }
    }

    /// Jacobian `d pi_k / d psi_i`, one row per action coordinate.
    pub fn grad(&self, s: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.features.input_dim(), s.len())?;
        let da = self.action_box.dim();
        Ok((0..da)
            .map(|k| {
                let mut e = vec![0.0; da];
                e[k] = 1.0;
                let mut row = vec![0.0; self.weights.len()];
                self.vjp(s, &e, &mut row);
                row
            })
            .collect())
    }
}

impl Policy for ParamPolicy {
    fn state_dim(&self) -> usize {
        self.features.input_dim()
    }
    fn action_dim(&self) -> usize {
        self.action_box.dim()
    }
    fn act(&self, s: &[f64]) -> Vec<f64> {
        let u = self.logits(&self.features.eval_unchecked(s));
        u.iter()
            .enumerate()
            .map(|(k, uk)| {
                let (lo, hi) = (self.action_box.lo[k], self.action_box.hi[k]);
                (lo + (hi - lo) * sigmoid(*uk)).clamp(lo, hi)
            })
            .collect()
    }
}

/// `max_i |(f(x + h e_i) - f(x - h e_i)) / 2h - grad_i(x)|`.
pub fn finite_diff_check<F, G>(f: F, grad: G, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let g = grad(point);
    check_dim(point.len(), g.len())?;
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let up = f(&x);
        x[i] = point[i] - h;
        let down = f(&x);
        x[i] = point[i];
        worst = worst.max(((up - down) / (2.0 * h) - g[i]).abs());
    }
    Ok(worst)
}
