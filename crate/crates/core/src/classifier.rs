//! Latent-space logistic regression: malignancy probability, signed
//! distance to the decision hyperplane, the gate, and the closed-form
//! healthy edit along the hyperplane normal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Healthy,
    Malignant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// L2 strength on the normal vector (the bias is not penalized).
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls to this value.
    pub tolerance: f64,
    /// Armijo sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iterations: 20_000,
            tolerance: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 || self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument(
                "train config needs lambda >= 0 and tolerance > 0".into(),
            ));
        }
        if !(0.0 < self.armijo && self.armijo < 1.0) || !(0.0 < self.backtrack && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument("line search constants must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Hyperplane `n·z + b = 0` with `c(z) = σ(n·z + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    normal: Vec<f64>,
    bias: f64,
}

impl LinearClassifier {
    pub fn new(normal: Vec<f64>, bias: f64) -> Result<Self> {
        if normal.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
            return Err(Error::InvalidArgument("classifier parameters must be finite".into()));
        }
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::InvalidArgument(format!("normal vector norm {norm:e} too small")));
        }
        Ok(Self { normal, bias })
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn norm(&self) -> f64 {
        self.normal.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit normal `n / ‖n‖`.
    pub fn unit_normal(&self) -> Vec<f64> {
        let norm = self.norm();
        self.normal.iter().map(|v| v / norm).collect()
    }

    fn check(&self, z: &Latent) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::len(self.dim(), z.dim()));
        }
        Ok(())
    }

    /// Raw logit `n·z + b`.
    pub fn score(&self, z: &Latent) -> Result<f64> {
        self.check(z)?;
        Ok(z.dot(&self.normal) + self.bias)
    }

    pub fn probability(&self, z: &Latent) -> Result<f64> {
        Ok(sigmoid(self.score(z)?))
    }

    pub fn signed_distance(&self, z: &Latent) -> Result<f64> {
        Ok(self.score(z)? / self.norm())
    }

    /// Moves `z` along the unit normal onto the level set `c = p_target`.
    ///
    /// The target distance is `logit(p_target) / ‖n‖`, so the edited latent
    /// scores exactly `logit(p_target)`.
    pub fn healthy_edit(&self, z: &Latent, p_target: f64) -> Result<Latent> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::InvalidArgument(format!("p_target {p_target} outside (0,1)")));
        }
        let norm = self.norm();
        let target = logit(p_target) / norm;
        let shift = self.signed_distance(z)? - target;
        Ok(z.offset(&self.normal, -shift / norm))
    }

    /// Malignant iff `c(z) >= cutoff`.
    pub fn gate(&self, z: &Latent, cutoff: f64) -> Result<GateDecision> {
        Ok(if self.probability(z)? >= cutoff {
            GateDecision::Malignant
        } else {
            GateDecision::Healthy
        })
    }
}

/// Mean negative log-likelihood plus `λ/2 ‖n‖²`.
pub fn regularized_loss(latents: &[Latent], labels: &[u8], normal: &[f64], bias: f64, lambda: f64) -> f64 {
    let nll: f64 = latents
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let s = z.dot(normal) + bias;
            softplus(s) - y as f64 * s
        })
        .sum::<f64>()
        / latents.len() as f64;
    nll + 0.5 * lambda * normal.iter().map(|v| v * v).sum::<f64>()
}

fn gradient(latents: &[Latent], labels: &[u8], normal: &[f64], bias: f64, lambda: f64) -> (Vec<f64>, f64) {
    let n = latents.len() as f64;
    let mut gn: Vec<f64> = normal.iter().map(|v| lambda * v).collect();
    let mut gb = 0.0;
    for (z, &y) in latents.iter().zip(labels) {
        let r = (sigmoid(z.dot(normal) + bias) - y as f64) / n;
        gb += r;
        gn.iter_mut().zip(z.values()).for_each(|(g, zi)| *g += r * zi);
    }
    (gn, gb)
}

/// Full-batch gradient descent from zero with backtracking line search.
pub fn train_classifier(latents: &[Latent], labels: &[u8], cfg: &TrainConfig) -> Result<LinearClassifier> {
    cfg.validate()?;
    if latents.len() != labels.len() {
        return Err(Error::len(latents.len(), labels.len()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::DegenerateLabels);
    }
    let d = latents[0].dim();
    if let Some(z) = latents.iter().find(|z| z.dim() != d) {
        return Err(Error::len(d, z.dim()));
    }

    let mut normal = vec![0.0; d];
    let mut bias = 0.0;
    let mut loss = regularized_loss(latents, labels, &normal, bias, cfg.lambda);
    let mut step = 1.0;
    for iter in 0..cfg.max_iterations {
        let (gn, gb) = gradient(latents, labels, &normal, bias, cfg.lambda);
        let gsq = gn.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gsq.sqrt() <= cfg.tolerance {
            log::debug!("logistic regression converged after {iter} iterations");
            break;
        }
        // allow the step to grow back after earlier shrinking
        step = (step / cfg.backtrack).min(1e6);
        loop {
            let cand: Vec<f64> = normal.iter().zip(&gn).map(|(w, g)| w - step * g).collect();
            let cand_b = bias - step * gb;
            let cand_loss = regularized_loss(latents, labels, &cand, cand_b, cfg.lambda);
            if cand_loss <= loss - cfg.armijo * step * gsq {
                normal = cand;
                bias = cand_b;
                loss = cand_loss;
                break;
            }
            step *= cfg.backtrack;
            if step < 1e-300 {
                return LinearClassifier::new(normal, bias);
            }
        }
    }
    LinearClassifier::new(normal, bias)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub d: usize,
    pub n: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub p_target_default: f64,
}

impl LinearClassifier {
    pub fn to_file(&self, lambda: f64, p_target_default: f64) -> ClassifierFile {
        ClassifierFile {
            d: self.dim(),
            n: self.normal.clone(),
            b: self.bias,
            lambda,
            p_target_default,
        }
    }

    pub fn from_file(file: &ClassifierFile) -> Result<Self> {
        if file.n.len() != file.d {
            return Err(Error::len(file.d, file.n.len()));
        }
        Self::new(file.n.clone(), file.b)
    }

    pub fn save(&self, path: &Path, lambda: f64, p_target_default: f64) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(&self.to_file(lambda, p_target_default))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ClassifierFile)> {
        let file: ClassifierFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_file(&file)?, file))
    }
}
