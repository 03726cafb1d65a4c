//! Softmax-linear classifier with exact first- and second-order pieces,
//! and the toy datasets it is trained on.
//!
//! By default the classifier sees `φ(x) = √d · x / ‖x‖`, so its output does
//! not depend on the input scale (the zero vector maps to zero). `raw()`
//! turns this off and the model is linear in `x`.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::linalg::{dot, norm};
use crate::rng::Rng;

/// Row-major `n x d` features with class labels in `0..classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub d: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, d: usize, classes: usize) -> Result<Self> {
        if d == 0 || features.len() != labels.len() * d {
            return Err(Error::DimensionMismatch { expected: labels.len() * d, got: features.len() });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Domain(format!("label {y} outside 0..{classes}")));
        }
        Ok(Self { features, labels, d, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            d: self.d,
            classes: self.classes,
        }
    }

    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == c).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    /// Row-major `classes x d`.
    pub weights: Vec<f64>,
    pub classes: usize,
    pub d: usize,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

fn softmax_into(logits: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in logits.iter_mut() {
        *v /= s;
    }
}

impl ToyModel {
    pub fn zeros(classes: usize, d: usize) -> Self {
        Self { weights: vec![0.0; classes * d], classes, d, normalize: true }
    }

    /// Gaussian weights with standard deviation `scale / √d`.
    pub fn random(classes: usize, d: usize, scale: f64, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let s = scale / (d as f64).sqrt();
        let weights = (0..classes * d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { weights, classes, d, normalize: true }
    }

    /// Same weights, identity feature map.
    pub fn raw(self) -> Self {
        Self { normalize: false, ..self }
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        Self { weights, ..*self }
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.d != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: data.d });
        }
        if data.classes != self.classes {
            return Err(Error::DimensionMismatch { expected: self.classes, got: data.classes });
        }
        if data.is_empty() {
            return Err(Error::EmptyBatch("loss of an empty batch".into()));
        }
        Ok(())
    }

    /// `φ(x)` and the factor `√d / ‖x‖` (zero for the zero vector).
    pub fn embed(&self, x: &[f64]) -> (Vec<f64>, f64) {
        if !self.normalize {
            return (x.to_vec(), 1.0);
        }
        let n = norm(x);
        let k = if n > 0.0 { (self.d as f64).sqrt() / n } else { 0.0 };
        (x.iter().map(|v| k * v).collect(), k)
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        (0..self.classes).map(|c| dot(self.row(c), z)).collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.logits(&self.embed(x).0);
        softmax_into(&mut p);
        p
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.d..(c + 1) * self.d]
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        self.logits(&self.embed(x).0)
            .into_iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, v)| if v > best.1 { (c, v) } else { best })
            .0
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let right = (0..data.len()).filter(|&i| self.predict(data.row(i)) == data.labels[i]).count();
        right as f64 / data.len() as f64
    }

    /// Mean cross-entropy and its gradient `mean (p − e_y) φ(x)ᵀ`.
    pub fn loss_and_grad(&self, data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.check(data)?;
        let d = self.d;
        let inv = 1.0 / data.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.weights.len()];
        for i in 0..data.len() {
            let (x, _) = self.embed(data.row(i));
            let mut p = self.logits(&x);
            softmax_into(&mut p);
            let y = data.labels[i];
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            p[y] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                let g = &mut grad[c * d..(c + 1) * d];
                for (gj, xj) in g.iter_mut().zip(&x) {
                    *gj += inv * pc * xj;
                }
            }
        }
        Ok((loss * inv, grad))
    }

    pub fn per_sample_losses(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check(data)?;
        Ok((0..data.len())
            .map(|i| -self.probabilities(data.row(i))[data.labels[i]].max(f64::MIN_POSITIVE).ln())
            .collect())
    }

    /// `‖∇_W ℓ(x, y)‖_F = ‖p − e_y‖ ‖φ(x)‖` per sample.
    pub fn per_sample_grad_norms(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check(data)?;
        Ok((0..data.len())
            .map(|i| {
                let x = data.row(i);
                let mut p = self.probabilities(x);
                p[data.labels[i]] -= 1.0;
                norm(&p) * norm(&self.embed(x).0)
            })
            .collect())
    }

    /// Hessian of the mean loss applied to `v`: `mean J_i (V z_i) z_iᵀ`
    /// with `z = φ(x)` and `J = diag(p) − ppᵀ`.
    pub fn hvp(&self, data: &Dataset, v: &[f64]) -> Result<Vec<f64>> {
        self.check(data)?;
        let (c_n, d) = (self.classes, self.d);
        let inv = 1.0 / data.len() as f64;
        let vm = self.with_weights(v.to_vec());
        let mut out = vec![0.0; v.len()];
        for i in 0..data.len() {
            let (x, _) = self.embed(data.row(i));
            let mut p = self.logits(&x);
            softmax_into(&mut p);
            let u = vm.logits(&x);
            let pu = dot(&p, &u);
            for c in 0..c_n {
                let jc = p[c] * (u[c] - pu) * inv;
                for (o, xj) in out[c * d..(c + 1) * d].iter_mut().zip(&x) {
                    *o += jc * xj;
                }
            }
        }
        Ok(out)
    }

    /// Gradient of `⟨A, ∇_W L(data)⟩` with respect to the features of
    /// `data`, row-major like `data.features`: per sample the vector
    /// `g = (Aᵀ(p − e_y) + Wᵀ J (A z)) / n` pulled back through `φ`,
    /// `(√d / ‖x‖) (g − x̂ x̂ᵀ g)`.
    pub fn feature_vjp(&self, data: &Dataset, a: &[f64]) -> Result<Vec<f64>> {
        self.check(data)?;
        let (c_n, d) = (self.classes, self.d);
        let inv = 1.0 / data.len() as f64;
        let am = self.with_weights(a.to_vec());
        let mut out = vec![0.0; data.features.len()];
        let mut g = vec![0.0; d];
        for i in 0..data.len() {
            let (z, k) = self.embed(data.row(i));
            let mut p = self.logits(&z);
            softmax_into(&mut p);
            let az = am.logits(&z);
            let paz = dot(&p, &az);
            let jaz: Vec<f64> = (0..c_n).map(|c| p[c] * (az[c] - paz)).collect();
            p[data.labels[i]] -= 1.0;
            g.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..c_n {
                let (ac, wc) = (am.row(c), self.row(c));
                for j in 0..d {
                    g[j] += inv * (p[c] * ac[j] + jaz[c] * wc[j]);
                }
            }
            // φ has Jacobian (k)(I − ẑẑᵀ) with ẑ = z/‖z‖
            let zz = dot(&z, &z);
            let proj = if self.normalize && zz > 0.0 { dot(&z, &g) / zz } else { 0.0 };
            for (o, (gj, zj)) in out[i * d..(i + 1) * d].iter_mut().zip(g.iter().zip(&z)) {
                *o = k * (gj - proj * zj);
            }
        }
        Ok(out)
    }

    /// Plain gradient descent on `data`.
    pub fn train(&mut self, data: &Dataset, steps: usize, eta: f64) -> Result<()> {
        for _ in 0..steps {
            let (_, g) = self.loss_and_grad(data)?;
            for (w, gi) in self.weights.iter_mut().zip(&g) {
                *w -= eta * gi;
            }
        }
        Ok(())
    }

    /// One epoch of minibatch SGD over a seeded shuffle.
    pub fn sgd_epoch(&mut self, data: &Dataset, batch: usize, eta: f64, rng: &mut Rng) -> Result<()> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch.max(1)) {
            let (_, g) = self.loss_and_grad(&data.subset(chunk))?;
            for (w, gi) in self.weights.iter_mut().zip(&g) {
                *w -= eta * gi;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

fn blob_set(
    rng: &mut Rng,
    n_per_class: usize,
    d: usize,
    classes: usize,
    mut draw: impl FnMut(&mut Rng, usize, &mut [f64]),
) -> Dataset {
    let mut features = Vec::with_capacity(n_per_class * classes * d);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for _ in 0..n_per_class {
        for c in 0..classes {
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            draw(rng, c, &mut x);
            features.extend_from_slice(&x);
            labels.push(c);
        }
    }
    Dataset { features, labels, d, classes }
}

/// Two isotropic unit-variance blobs whose means sit at `±separation/2`
/// along a random direction.
pub fn toy_blobs(n_train: usize, n_test: usize, d: usize, separation: f64, seed: u64) -> Result<ToyTask> {
    if d < 1 || n_train < 1 || n_test < 1 {
        return Err(Error::Precondition("blob task needs d, n_train, n_test ≥ 1".into()));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let dn = norm(&dir);
    dir.iter_mut().for_each(|v| *v *= 0.5 * separation / dn);
    let shift = |_: &mut Rng, c: usize, x: &mut [f64]| {
        let s = if c == 0 { -1.0 } else { 1.0 };
        x.iter_mut().zip(&dir).for_each(|(xi, m)| *xi += s * m);
    };
    Ok(ToyTask {
        name: "blobs".into(),
        train: blob_set(&mut rng, n_train, d, 2, shift),
        test: blob_set(&mut rng, n_test, d, 2, shift),
    })
}

/// Four classes in `d = 16`. Each class is a pair of XOR bits: bit one is
/// the sign agreement of coordinates 0 and 1, bit two that of 2 and 3, with
/// the four coordinates centred at `±spread`. No linear model separates it.
pub fn xor_blobs(n_train: usize, n_test: usize, spread: f64, seed: u64) -> Result<ToyTask> {
    if n_train < 1 || n_test < 1 {
        return Err(Error::Precondition("xor task needs n_train, n_test ≥ 1".into()));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let place = |rng: &mut Rng, c: usize, x: &mut [f64]| {
        for (bit, k) in [(c >> 1, 0), (c & 1, 2)] {
            let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let b = if bit == 1 { a } else { -a };
            x[k] = 0.5 * x[k] + spread * a;
            x[k + 1] = 0.5 * x[k + 1] + spread * b;
        }
    };
    Ok(ToyTask {
        name: "xor".into(),
        train: blob_set(&mut rng, n_train, 16, 4, place),
        test: blob_set(&mut rng, n_test, 16, 4, place),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(model: &ToyModel, data: &Dataset) -> Vec<f64> {
        let h = 1e-6;
        (0..model.weights.len())
            .map(|k| {
                let mut w = model.weights.clone();
                w[k] += h;
                let lp = model.with_weights(w.clone()).loss_and_grad(data).unwrap().0;
                w[k] -= 2.0 * h;
                let lm = model.with_weights(w).loss_and_grad(data).unwrap().0;
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&diff) / norm(a).max(norm(b)).max(1e-300)
    }

    fn random_data(seed: u64, n: usize, d: usize, c: usize) -> Dataset {
        let mut rng = Rng::seed_from_u64(seed);
        let features = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        Dataset::new(features, labels, d, c).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let data = random_data(seed, 6, 4, 3);
            let m = ToyModel::random(3, 4, 1.0, seed + 100);
            let (_, g) = m.loss_and_grad(&data).unwrap();
            assert!(rel_err(&g, &fd_grad(&m, &data)) < 1e-6);
        }
    }

    #[test]
    fn hand_gradient_at_zero_weights() {
        let data = Dataset::new(vec![2.0, 0.0], vec![0], 2, 2).unwrap();
        let m = ToyModel::zeros(2, 2);
        // φ(2, 0) = (√2, 0) and p − e = (−½, ½)
        let norms = m.per_sample_grad_norms(&data).unwrap();
        assert!((norms[0] - 1.0).abs() < 1e-12);
        let (_, g) = m.loss_and_grad(&data).unwrap();
        assert!((norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_ignores_input_scale() {
        let m = ToyModel::random(3, 4, 1.0, 9);
        let x = [0.3, -1.2, 0.7, 2.0];
        let big: Vec<f64> = x.iter().map(|v| 40.0 * v).collect();
        let (p, q) = (m.probabilities(&x), m.probabilities(&big));
        assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-14));
        assert_eq!(m.probabilities(&[0.0; 4]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn raw_model_is_linear_in_the_input() {
        let data = Dataset::new(vec![2.0, 0.0], vec![0], 2, 2).unwrap();
        let m = ToyModel::zeros(2, 2).raw();
        assert!((m.per_sample_grad_norms(&data).unwrap()[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.embed(&[3.0, -4.0]), (vec![3.0, -4.0], 1.0));
    }

    #[test]
    fn confident_model_has_vanishing_gradient() {
        let data = Dataset::new(vec![1.0, 0.0, -1.0, 0.0], vec![0, 1], 2, 2).unwrap();
        let m = ToyModel::zeros(2, 2).with_weights(vec![40.0, 0.0, -40.0, 0.0]);
        let (loss, g) = m.loss_and_grad(&data).unwrap();
        assert!(loss < 1e-30 && norm(&g) < 1e-30);
    }

    #[test]
    fn duplicated_batch_is_the_mean() {
        let one = random_data(1, 1, 3, 2);
        let three = one.subset(&[0, 0, 0]);
        let m = ToyModel::random(2, 3, 1.0, 2);
        let (la, ga) = m.loss_and_grad(&one).unwrap();
        let (lb, gb) = m.loss_and_grad(&three).unwrap();
        assert!((la - lb).abs() < 1e-15);
        assert!(rel_err(&ga, &gb) < 1e-15);
    }

    #[test]
    fn hvp_and_feature_vjp_match_finite_differences() {
        let h = 1e-6;
        for seed in 0..10 {
            let data = random_data(seed, 4, 5, 3);
            let m = ToyModel::random(3, 5, 1.5, seed + 7);
            let m = if seed % 2 == 0 { m } else { m.raw() };
            let v = random_data(seed + 50, 3, 5, 1).features;
            let hv = m.hvp(&data, &v).unwrap();
            let shifted = |s: f64| {
                let w: Vec<f64> = m.weights.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                m.with_weights(w).loss_and_grad(&data).unwrap().1
            };
            let (gp, gm) = (shifted(h), shifted(-h));
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(rel_err(&hv, &fd) < 1e-6, "hvp seed {seed}");

            let vjp = m.feature_vjp(&data, &v).unwrap();
            let fd: Vec<f64> = (0..data.features.len())
                .map(|k| {
                    let eval = |s: f64| {
                        let mut x = data.clone();
                        x.features[k] += s;
                        dot(&v, &m.loss_and_grad(&x).unwrap().1)
                    };
                    (eval(h) - eval(-h)) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&vjp, &fd) < 1e-6, "vjp seed {seed}");
        }
    }

    #[test]
    fn toy_tasks_are_balanced_and_learnable() {
        let t = toy_blobs(100, 100, 8, 3.0, 1).unwrap();
        assert_eq!(t.train.class_indices(0).len(), 100);
        let mut m = ToyModel::zeros(2, 8);
        m.train(&t.train, 200, 0.5).unwrap();
        assert!(m.accuracy(&t.test) > 0.85);

        let x = xor_blobs(100, 100, 2.0, 2).unwrap();
        assert_eq!((x.train.d, x.train.classes), (16, 4));
        let mut m = ToyModel::zeros(4, 16);
        m.train(&x.train, 200, 0.5).unwrap();
        assert!(m.accuracy(&x.test) < 0.6);
    }
}
