//! Probabilistic binary concept classifiers.
//!
//! The default backend is a Gaussian-process classifier with an RBF kernel and
//! a logistic likelihood, fitted with the Laplace approximation. Fitting is
//! split in two stages so that one-vs-rest classifiers sharing the same inputs
//! also share the kernel matrix: [`ClassifierBackend::prepare`] builds a
//! [`Design`] from the inputs, and [`Design::fit`] solves for one target vector.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{ConceptIdx, Instance, LabeledExample, Polarity};
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_TOL: f64 = 1e-8;

/// Serializable classifier choice, carried in episode configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ClassifierSpec {
    #[serde(rename_all = "camelCase")]
    Gp { length_scale: f64, signal_variance: f64 },
    Logistic { l2: f64 },
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Gp {
            length_scale: 1.0,
            signal_variance: 1.0,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassifierSpec::Gp {
                length_scale,
                signal_variance,
            } => length_scale > 0.0 && signal_variance > 0.0 && length_scale.is_finite() && signal_variance.is_finite(),
            ClassifierSpec::Logistic { l2 } => l2 > 0.0 && l2.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid classifier parameters: {self:?}")))
        }
    }

    pub fn backend(&self) -> Arc<dyn ClassifierBackend> {
        match *self {
            ClassifierSpec::Gp {
                length_scale,
                signal_variance,
            } => Arc::new(GpBackend::new(RbfKernel {
                length_scale,
                signal_variance,
            })),
            ClassifierSpec::Logistic { l2 } => Arc::new(LogisticBackend { l2 }),
        }
    }
}

pub trait BinaryClassifier: Send + Sync + Debug {
    /// Probability that `x` is a positive example; always in (0,1).
    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    fn predict_batch(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict_proba(x)).collect()
    }
}

/// Inputs prepared for fitting (projection, normalization, kernel matrix).
pub trait Design: Send + Sync + Debug {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fits a classifier to `targets` (one entry of ±1 per input).
    fn fit(self: Arc<Self>, targets: &[f64]) -> Result<Arc<dyn BinaryClassifier>>;
}

pub trait ClassifierBackend: Send + Sync + Debug {
    /// `dim` is the raw feature dimensionality; `subset` selects the columns
    /// used by the model.
    fn prepare(&self, inputs: &[&[f64]], dim: usize, subset: Option<&[usize]>) -> Result<Arc<dyn Design>>;
}

/// Fits a single binary classifier from (features, polarity) pairs.
pub fn fit(
    backend: &dyn ClassifierBackend,
    sample: &[(Vec<f64>, Polarity)],
    dim: usize,
    subset: Option<&[usize]>,
) -> Result<Arc<dyn BinaryClassifier>> {
    let inputs: Vec<&[f64]> = sample.iter().map(|(x, _)| x.as_slice()).collect();
    let targets: Vec<f64> = sample.iter().map(|(_, p)| p.sign()).collect();
    backend.prepare(&inputs, dim, subset)?.fit(&targets)
}

/// Column projection followed by z-scoring with training-sample statistics.
#[derive(Clone, Debug)]
pub struct Standardizer {
    dim: usize,
    subset: Option<Vec<usize>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(inputs: &[&[f64]], dim: usize, subset: Option<&[usize]>) -> Result<Self> {
        if let Some(s) = subset {
            if s.is_empty() || s.iter().any(|&j| j >= dim) {
                return Err(Error::Input(format!("feature subset {s:?} invalid for dimension {dim}")));
            }
        }
        let cols: Vec<usize> = match subset {
            Some(s) => s.to_vec(),
            None => (0..dim).collect(),
        };
        for x in inputs {
            check_vector(x, dim)?;
        }
        let n = inputs.len();
        let mut mean = vec![0.0; cols.len()];
        let mut scale = vec![1.0; cols.len()];
        if n > 0 {
            for (k, &j) in cols.iter().enumerate() {
                let m = inputs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
                let var = inputs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n as f64;
                mean[k] = m;
                scale[k] = if var > 1e-24 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(Standardizer {
            dim,
            subset: subset.map(|s| s.to_vec()),
            mean,
            scale,
        })
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_vector(x, self.dim)?;
        let out = match &self.subset {
            Some(s) => s
                .iter()
                .enumerate()
                .map(|(k, &j)| (x[j] - self.mean[k]) / self.scale[k])
                .collect(),
            None => x
                .iter()
                .enumerate()
                .map(|(k, &v)| (v - self.mean[k]) / self.scale[k])
                .collect(),
        };
        Ok(out)
    }
}

fn check_vector(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Input(format!("feature vector has length {}, expected {dim}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite feature value".into()));
    }
    Ok(())
}

fn check_targets(targets: &[f64], n: usize) -> Result<()> {
    if targets.len() != n {
        return Err(Error::Input(format!("{} targets for {n} inputs", targets.len())));
    }
    if targets.iter().any(|&t| t != 1.0 && t != -1.0) {
        return Err(Error::Input("targets must be +1 or -1".into()));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfKernel {
    pub length_scale: f64,
    pub signal_variance: f64,
}

impl RbfKernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Clone, Debug)]
pub struct GpBackend {
    pub kernel: RbfKernel,
}

impl GpBackend {
    pub fn new(kernel: RbfKernel) -> Self {
        GpBackend { kernel }
    }
}

impl Default for GpBackend {
    fn default() -> Self {
        GpBackend::new(RbfKernel {
            length_scale: 1.0,
            signal_variance: 1.0,
        })
    }
}

impl ClassifierBackend for GpBackend {
    fn prepare(&self, inputs: &[&[f64]], dim: usize, subset: Option<&[usize]>) -> Result<Arc<dyn Design>> {
        let std = Standardizer::fit(inputs, dim, subset)?;
        let xs: Vec<Vec<f64>> = inputs.iter().map(|x| std.transform(x)).collect::<Result<_>>()?;
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel.eval(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(Arc::new(GpDesign {
            kernel: self.kernel,
            std,
            xs,
            k,
        }))
    }
}

#[derive(Debug)]
pub struct GpDesign {
    kernel: RbfKernel,
    std: Standardizer,
    xs: Vec<Vec<f64>>,
    k: DMatrix<f64>,
}

impl Design for GpDesign {
    fn len(&self) -> usize {
        self.xs.len()
    }

    fn fit(self: Arc<Self>, targets: &[f64]) -> Result<Arc<dyn BinaryClassifier>> {
        let n = self.xs.len();
        check_targets(targets, n)?;
        if n == 0 {
            return Ok(Arc::new(GpModel {
                design: self,
                grad: DVector::zeros(0),
                sqrt_w: DVector::zeros(0),
                chol_l: DMatrix::zeros(0, 0),
            }));
        }
        let t01 = DVector::from_iterator(n, targets.iter().map(|&t| (t + 1.0) / 2.0));
        let k = &self.k;
        let mut f = DVector::zeros(n);
        for _ in 0..NEWTON_MAX_ITERS {
            let (grad, w, sqrt_w, chol) = laplace_terms(k, &f, &t01);
            let b = w.component_mul(&f) + &grad;
            let kb = k * &b;
            let inner = chol.solve(&sqrt_w.component_mul(&kb));
            let a = b - sqrt_w.component_mul(&inner);
            let f_new = k * a;
            let delta = (&f_new - &f).amax();
            f = f_new;
            if delta < NEWTON_TOL {
                break;
            }
        }
        let (grad, _, sqrt_w, chol) = laplace_terms(k, &f, &t01);
        Ok(Arc::new(GpModel {
            design: self,
            grad,
            sqrt_w,
            chol_l: chol.unpack(),
        }))
    }
}

/// Gradient of the log likelihood, W, sqrt(W) and chol(I + sqrtW K sqrtW) at `f`.
fn laplace_terms(
    k: &DMatrix<f64>,
    f: &DVector<f64>,
    t01: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, Cholesky<f64, nalgebra::Dyn>) {
    let n = f.len();
    let pi = f.map(sigmoid);
    let grad = t01 - &pi;
    let w = pi.map(|p| p * (1.0 - p));
    let sqrt_w = w.map(f64::sqrt);
    let mut b = DMatrix::identity(n, n);
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] += sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        }
    }
    // I + sqrtW K sqrtW is symmetric positive definite with eigenvalues >= 1.
    let chol = Cholesky::new(b).expect("I + sqrtW K sqrtW is positive definite");
    (grad, w, sqrt_w, chol)
}

#[derive(Debug)]
pub struct GpModel {
    design: Arc<GpDesign>,
    /// Gradient of the log likelihood at the posterior mode.
    grad: DVector<f64>,
    sqrt_w: DVector<f64>,
    chol_l: DMatrix<f64>,
}

impl GpModel {
    /// Latent predictive mean and variance at `x`.
    pub fn latent(&self, x: &[f64]) -> Result<(f64, f64)> {
        let z = self.design.std.transform(x)?;
        let kern = &self.design.kernel;
        let n = self.design.xs.len();
        if n == 0 {
            return Ok((0.0, kern.signal_variance));
        }
        let ks = DVector::from_iterator(n, self.design.xs.iter().map(|xi| kern.eval(xi, &z)));
        let mean = ks.dot(&self.grad);
        let v = self
            .chol_l
            .solve_lower_triangular(&self.sqrt_w.component_mul(&ks))
            .expect("cholesky factor is nonsingular");
        let var = (kern.signal_variance - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }
}

/// Averaged predictive probability with the probit approximation of the
/// logistic-Gaussian integral.
fn averaged_probability(mean: f64, var: f64) -> f64 {
    let kappa = 1.0 / (1.0 + std::f64::consts::PI * var / 8.0).sqrt();
    clamp_prob(sigmoid(kappa * mean))
}

impl BinaryClassifier for GpModel {
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let (mean, var) = self.latent(x)?;
        Ok(averaged_probability(mean, var))
    }

    fn predict_batch(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        let n = self.design.xs.len();
        let p = xs.len();
        let zs: Vec<Vec<f64>> = xs.iter().map(|x| self.design.std.transform(x)).collect::<Result<_>>()?;
        if n == 0 {
            return Ok(vec![0.5; p]);
        }
        let kern = &self.design.kernel;
        let mut ks = DMatrix::zeros(n, p);
        for (j, z) in zs.iter().enumerate() {
            for (i, xi) in self.design.xs.iter().enumerate() {
                ks[(i, j)] = kern.eval(xi, z);
            }
        }
        let means = ks.tr_mul(&self.grad);
        let mut scaled = ks;
        for j in 0..p {
            for i in 0..n {
                scaled[(i, j)] *= self.sqrt_w[i];
            }
        }
        let v = self
            .chol_l
            .solve_lower_triangular(&scaled)
            .expect("cholesky factor is nonsingular");
        Ok((0..p)
            .map(|j| {
                let var = (kern.signal_variance - v.column(j).norm_squared()).max(0.0);
                averaged_probability(means[j], var)
            })
            .collect())
    }
}

/// L2-regularized logistic regression on standardized features. Much cheaper
/// than the GP for large sweeps.
#[derive(Clone, Debug)]
pub struct LogisticBackend {
    pub l2: f64,
}

impl ClassifierBackend for LogisticBackend {
    fn prepare(&self, inputs: &[&[f64]], dim: usize, subset: Option<&[usize]>) -> Result<Arc<dyn Design>> {
        let std = Standardizer::fit(inputs, dim, subset)?;
        let xs: Vec<Vec<f64>> = inputs.iter().map(|x| std.transform(x)).collect::<Result<_>>()?;
        Ok(Arc::new(LogisticDesign { l2: self.l2, std, xs }))
    }
}

#[derive(Debug)]
pub struct LogisticDesign {
    l2: f64,
    std: Standardizer,
    xs: Vec<Vec<f64>>,
}

impl Design for LogisticDesign {
    fn len(&self) -> usize {
        self.xs.len()
    }

    fn fit(self: Arc<Self>, targets: &[f64]) -> Result<Arc<dyn BinaryClassifier>> {
        let n = self.xs.len();
        check_targets(targets, n)?;
        let d = self.xs.first().map_or(0, |x| x.len()) + 1;
        let mut beta = DVector::<f64>::zeros(d);
        if n > 0 {
            let design = DMatrix::from_fn(n, d, |i, j| if j + 1 == d { 1.0 } else { self.xs[i][j] });
            let y = DVector::from_iterator(n, targets.iter().map(|&t| (t + 1.0) / 2.0));
            for _ in 0..NEWTON_MAX_ITERS {
                let p = (&design * &beta).map(sigmoid);
                let grad = design.tr_mul(&(&y - &p)) - &beta * self.l2;
                let mut hess = DMatrix::identity(d, d) * self.l2;
                for i in 0..n {
                    let wi = p[i] * (1.0 - p[i]);
                    let row = design.row(i);
                    hess += row.transpose() * row * wi;
                }
                let step = Cholesky::new(hess)
                    .expect("regularized Hessian is positive definite")
                    .solve(&grad);
                beta += &step;
                if step.amax() < NEWTON_TOL {
                    break;
                }
            }
        }
        Ok(Arc::new(LogisticModel { design: self, beta }))
    }
}

#[derive(Debug)]
pub struct LogisticModel {
    design: Arc<LogisticDesign>,
    beta: DVector<f64>,
}

impl BinaryClassifier for LogisticModel {
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let z = self.design.std.transform(x)?;
        let d = self.beta.len();
        let mut s = self.beta[d - 1];
        for (j, v) in z.iter().enumerate().take(d - 1) {
            s += self.beta[j] * v;
        }
        Ok(clamp_prob(sigmoid(s)))
    }
}

/// ±1 targets of the one-vs-rest classifier for `concept`.
pub fn targets_for(sample: &[LabeledExample], concept: ConceptIdx) -> Vec<f64> {
    sample.iter().map(|ex| ex.polarity_for(concept).sign()).collect()
}

/// One binary classifier per concept, all sharing a feature subset.
#[derive(Clone, Debug)]
pub struct ClassifierEnsemble {
    models: Vec<Arc<dyn BinaryClassifier>>,
    subset: Option<Vec<usize>>,
}

impl ClassifierEnsemble {
    pub fn fit(
        backend: &dyn ClassifierBackend,
        sample: &[LabeledExample],
        n_concepts: usize,
        dim: usize,
        subset: Option<&[usize]>,
    ) -> Result<Self> {
        let inputs: Vec<&[f64]> = sample.iter().map(|ex| ex.features.as_slice()).collect();
        let design = backend.prepare(&inputs, dim, subset)?;
        let models = (0..n_concepts)
            .map(|c| design.clone().fit(&targets_for(sample, c)))
            .collect::<Result<_>>()?;
        Ok(ClassifierEnsemble {
            models,
            subset: subset.map(|s| s.to_vec()),
        })
    }

    pub fn from_models(models: Vec<Arc<dyn BinaryClassifier>>, subset: Option<Vec<usize>>) -> Self {
        ClassifierEnsemble { models, subset }
    }

    pub fn n_concepts(&self) -> usize {
        self.models.len()
    }

    pub fn subset(&self) -> Option<&[usize]> {
        self.subset.as_deref()
    }

    pub fn model(&self, concept: ConceptIdx) -> &Arc<dyn BinaryClassifier> {
        &self.models[concept]
    }

    /// p(y|x) for every instance (rows) and concept (columns).
    pub fn posterior_matrix(&self, instances: &[Instance]) -> Result<Vec<Vec<f64>>> {
        let xs: Vec<&[f64]> = instances.iter().map(|i| i.features.as_slice()).collect();
        self.posterior_matrix_raw(&xs)
    }

    pub fn posterior_matrix_raw(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(self.models.len()); xs.len()];
        for m in &self.models {
            let col = m.predict_batch(xs)?;
            for (row, p) in out.iter_mut().zip(col) {
                row.push(p);
            }
        }
        Ok(out)
    }
}
