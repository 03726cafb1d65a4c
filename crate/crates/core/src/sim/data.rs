//! Expert-labelled Gaussian data, probes, margins and subset selection.

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::linalg::{axpy, cosine, dot, norm, scale};
use crate::rng::Rng;
use crate::theory::{MarginConvention, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModel {
    pub weights: Vec<f64>,
    pub d: usize,
}

/// Row-major `n x d` inputs with ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl LabeledSet {
    pub fn new(inputs: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || inputs.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: inputs.len() });
        }
        let n = inputs.len() / d;
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Domain("labels must be ±1".into()));
        }
        Ok(Self { inputs, labels, n, d })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        LabeledSet {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n: indices.len(),
            d: self.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginProfile {
    pub probe: Vec<f64>,
    pub margins: Vec<f64>,
    pub selection: Option<StrategyKind>,
    pub fraction: f64,
    /// Ascending.
    pub kept_indices: Vec<usize>,
}

fn gaussian_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sample_expert(d: usize, seed: u64) -> Result<ExpertModel> {
    if d < 2 {
        return Err(Error::Precondition(format!("dimension must be at least 2, got {d}")));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut w = gaussian_vec(&mut rng, d);
    let n = norm(&w);
    scale(&mut w, (d as f64).sqrt() / n);
    Ok(ExpertModel { weights: w, d })
}

/// `n` standard Gaussian inputs labelled by the sign of the expert field.
pub fn generate_set(expert: &ExpertModel, n: usize, seed: u64) -> Result<LabeledSet> {
    if n == 0 {
        return Err(Error::EmptyBatch("cannot generate an empty set".into()));
    }
    let d = expert.d;
    let mut rng = Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x = gaussian_vec(&mut rng, d);
        let h = dot(&expert.weights, &x);
        if h == 0.0 {
            continue;
        }
        inputs.extend_from_slice(&x);
        labels.push(h.signum());
    }
    Ok(LabeledSet { inputs, labels, n, d })
}

/// Probe at exactly `gamma_probe` from the expert, with norm √d. The
/// orthogonal part is a fresh Gaussian projected off the expert.
pub fn make_probe(expert: &ExpertModel, gamma_probe: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&gamma_probe) {
        return Err(Error::Domain(format!("probe angle must lie in [0, π/2], got {gamma_probe}")));
    }
    let d = expert.d;
    let mut u = expert.weights.clone();
    let un = norm(&u);
    scale(&mut u, 1.0 / un);
    let mut rng = Rng::seed_from_u64(seed);
    let mut g = gaussian_vec(&mut rng, d);
    // two projections keep the orthogonality error at round-off level
    for _ in 0..2 {
        let p = dot(&g, &u);
        axpy(-p, &u, &mut g);
    }
    let gn = norm(&g);
    scale(&mut g, 1.0 / gn);
    let root_d = (d as f64).sqrt();
    let (c, s) = (gamma_probe.cos(), gamma_probe.sin());
    Ok(u.iter().zip(&g).map(|(a, b)| root_d * (c * a + s * b)).collect())
}

/// Angle between two vectors in radians.
pub fn angle_between(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    cosine(a, b)
        .map(f64::acos)
        .ok_or_else(|| Error::Domain("angle with a zero vector".into()))
}

/// Classical perceptron rule over a fixed shuffle of the set, repeated for
/// `epochs` passes. The result is rescaled to norm √d.
pub fn train_probe(set: &LabeledSet, epochs: usize, seed: u64) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Err(Error::Precondition("probe training needs at least one epoch".into()));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..set.n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut w = vec![0.0; set.d];
    for _ in 0..epochs {
        for &i in &order {
            let y = set.labels[i];
            if y * dot(&w, set.row(i)) <= 0.0 {
                axpy(y, set.row(i), &mut w);
            }
        }
    }
    let n = norm(&w);
    if n == 0.0 {
        return Err(Error::Domain("perceptron weights stayed at zero".into()));
    }
    scale(&mut w, (set.d as f64).sqrt() / n);
    Ok(w)
}

pub fn compute_margins(probe: &[f64], set: &LabeledSet) -> Result<MarginProfile> {
    if probe.len() != set.d {
        return Err(Error::DimensionMismatch { expected: set.d, got: probe.len() });
    }
    let margins = (0..set.n).map(|i| set.labels[i] * dot(probe, set.row(i))).collect();
    Ok(MarginProfile {
        probe: probe.to_vec(),
        margins,
        selection: None,
        fraction: 1.0,
        kept_indices: Vec::new(),
    })
}

/// Indices of the `round(f n)` kept samples, ascending.
///
/// Hardness is the signed margin or its absolute value depending on
/// `convention`; ties go to the lower index.
pub fn select_indices(
    margins: &[f64],
    f: f64,
    kind: StrategyKind,
    convention: MarginConvention,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Domain(format!("kept fraction must lie in (0, 1], got {f}")));
    }
    let n = margins.len();
    let k = (f * n as f64).round() as usize;
    if k < 1 {
        return Err(Error::EmptyBatch(format!("round({f} * {n}) = 0 samples kept")));
    }
    let score = |i: usize| match convention {
        MarginConvention::Signed => margins[i],
        MarginConvention::Absolute => margins[i].abs(),
    };
    let mut kept: Vec<usize> = match kind {
        StrategyKind::KeepRandom => {
            let mut rng = Rng::seed_from_u64(seed);
            index::sample(&mut rng, n, k).into_vec()
        }
        StrategyKind::KeepHardest | StrategyKind::KeepEasiest => {
            let mut order: Vec<usize> = (0..n).collect();
            let hardest = kind == StrategyKind::KeepHardest;
            order.sort_by(|&i, &j| {
                let c = score(i).total_cmp(&score(j));
                (if hardest { c } else { c.reverse() }).then(i.cmp(&j))
            });
            order.truncate(k);
            order
        }
    };
    kept.sort_unstable();
    Ok(kept)
}

/// Applies the selection to `set`, recording it in `profile`.
pub fn select_subset(
    set: &LabeledSet,
    profile: &mut MarginProfile,
    f: f64,
    kind: StrategyKind,
    convention: MarginConvention,
    seed: u64,
) -> Result<LabeledSet> {
    if profile.margins.len() != set.n {
        return Err(Error::DimensionMismatch { expected: set.n, got: profile.margins.len() });
    }
    let kept = select_indices(&profile.margins, f, kind, convention, seed)?;
    let out = set.subset(&kept);
    profile.selection = Some(kind);
    profile.fraction = f;
    profile.kept_indices = kept;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::linalg::dot;

    const SIGNED: MarginConvention = MarginConvention::Signed;

    #[test]
    fn expert_lies_on_sphere() {
        let e = sample_expert(200, 1).unwrap();
        assert!((norm(&e.weights) - 200f64.sqrt()).abs() < 1e-9);
        assert_ne!(e.weights, sample_expert(200, 2).unwrap().weights);
        assert!(sample_expert(1, 0).is_err());
    }

    #[test]
    fn expert_direction_is_isotropic() {
        let d = 4;
        let draws = 10_000;
        let mut cov = vec![0.0; d * d];
        for s in 0..draws {
            let e = sample_expert(d, s).unwrap();
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += e.weights[i] * e.weights[j] / (d * draws as usize) as f64;
                }
            }
        }
        // weights have norm √d, so E[w wᵀ] = I and cov/d ≈ I/d
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 / d as f64 } else { 0.0 };
                assert!((cov[i * d + j] - target).abs() < 0.05, "{i},{j}: {}", cov[i * d + j]);
            }
        }
    }

    #[test]
    fn labels_follow_expert_and_balance() {
        let e = sample_expert(20, 3).unwrap();
        let set = generate_set(&e, 10_000, 4).unwrap();
        for i in 0..set.n {
            assert!(set.labels[i] * dot(&e.weights, set.row(i)) > 0.0);
        }
        let pos = set.labels.iter().filter(|&&y| y > 0.0).count() as f64 / set.n as f64;
        assert!((pos - 0.5).abs() < 0.02, "{pos}");
        assert_eq!(set, generate_set(&e, 10_000, 4).unwrap());
    }

    #[test]
    fn probe_angle_is_exact() {
        let e = sample_expert(50, 5).unwrap();
        let cases = [0.0, std::f64::consts::FRAC_PI_6, 0.3, std::f64::consts::FRAC_PI_2];
        for g in cases {
            let p = make_probe(&e, g, 6).unwrap();
            assert!((norm(&p) - 50f64.sqrt()).abs() < 1e-10);
            let c = dot(&p, &e.weights) / 50.0;
            assert!((c - g.cos()).abs() < 1e-10, "{g}: {c}");
        }
        let p = make_probe(&e, std::f64::consts::FRAC_PI_2, 7).unwrap();
        assert!(dot(&p, &e.weights).abs() < 1e-10 * 50.0);
        assert!(make_probe(&e, 2.0, 0).is_err());
    }

    #[test]
    fn margin_examples() {
        let set = LabeledSet::new(vec![2.0, 3.0, 2.0, 3.0], vec![1.0, -1.0], 2).unwrap();
        let p = compute_margins(&[1.0, 0.0], &set).unwrap();
        assert_eq!(p.margins, vec![2.0, -2.0]);
        assert!(compute_margins(&[1.0], &set).is_err());

        let e = sample_expert(10, 8).unwrap();
        let set = generate_set(&e, 100, 9).unwrap();
        let p = compute_margins(&e.weights, &set).unwrap();
        assert!(p.margins.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn selection_examples() {
        let m = [3.0, -1.0, 2.0, 5.0];
        assert_eq!(select_indices(&m, 0.5, StrategyKind::KeepHardest, SIGNED, 0).unwrap(), vec![1, 2]);
        assert_eq!(select_indices(&m, 0.5, StrategyKind::KeepEasiest, SIGNED, 0).unwrap(), vec![0, 3]);
        for kind in StrategyKind::ALL {
            assert_eq!(select_indices(&m, 1.0, kind, SIGNED, 0).unwrap(), vec![0, 1, 2, 3]);
        }
        assert!(matches!(
            select_indices(&m, 0.1, StrategyKind::KeepHardest, SIGNED, 0),
            Err(Error::EmptyBatch(_))
        ));
        assert!(select_indices(&m, 0.0, StrategyKind::KeepHardest, SIGNED, 0).is_err());
        // |−1| < 2 < 3 < 5
        assert_eq!(
            select_indices(&m, 0.5, StrategyKind::KeepHardest, MarginConvention::Absolute, 0).unwrap(),
            vec![1, 2]
        );
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = [1.0, 1.0, 1.0, 0.0];
        assert_eq!(select_indices(&m, 0.5, StrategyKind::KeepHardest, SIGNED, 0).unwrap(), vec![0, 3]);
        assert_eq!(select_indices(&m, 0.5, StrategyKind::KeepEasiest, SIGNED, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn random_selection_is_seeded() {
        let m: Vec<f64> = (0..100).map(f64::from).collect();
        let a = select_indices(&m, 0.3, StrategyKind::KeepRandom, SIGNED, 1).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, select_indices(&m, 0.3, StrategyKind::KeepRandom, SIGNED, 1).unwrap());
        assert_ne!(a, select_indices(&m, 0.3, StrategyKind::KeepRandom, SIGNED, 2).unwrap());
    }

    #[test]
    fn perceptron_separates_and_improves() {
        let set = LabeledSet::new(vec![1.0, 0.5, -0.2, -1.0], vec![1.0, -1.0], 2).unwrap();
        let w = train_probe(&set, 50, 0).unwrap();
        for i in 0..2 {
            assert!(set.labels[i] * dot(&w, set.row(i)) > 0.0);
        }
        assert!(matches!(train_probe(&set, 0, 0), Err(Error::Precondition(_))));

        // sign test: more epochs should usually land closer to the expert
        let mut wins = 0;
        for seed in 0..20 {
            let e = sample_expert(50, 100 + seed).unwrap();
            let set = generate_set(&e, 250, 200 + seed).unwrap();
            let a1 = angle_between(&train_probe(&set, 1, seed).unwrap(), &e.weights).unwrap();
            let a20 = angle_between(&train_probe(&set, 20, seed).unwrap(), &e.weights).unwrap();
            wins += usize::from(a20 < a1);
        }
        // P(X >= 15) < 0.021 under a fair coin
        assert!(wins >= 15, "{wins}/20");
    }
}
