//! Gaussian-measure quadrature.
//!
//! Two schemes are provided. `GaussHermiteMapped` integrates against the
//! standard normal measure over the whole line with Gauss–Hermite nodes
//! rescaled by √2. `AdaptivePanel` bisects Gauss–Legendre panels until the
//! panel-halving difference falls below tolerance; it handles finite and
//! semi-infinite domains, with infinite ends clipped at ±[`T_CUT`].

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::special::normal_pdf;
use crate::error::{Error, Result};

/// Infinite integration limits are replaced by ±T_CUT; the Gaussian mass
/// beyond 12 is below 1e−32.
pub const T_CUT: f64 = 12.0;

const MAX_DEPTH: u32 = 48;
const MAX_PANELS: usize = 4000;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// Shared 20-point rule used by the adaptive integrator.
    pub fn standard() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(20))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Applies the rule on `[a, b]` to a vector-valued integrand.
    pub fn apply<const K: usize, F>(&self, f: &F, a: f64, b: f64) -> Result<[f64; K]>
    where
        F: Fn(f64) -> [f64; K],
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = [0.0; K];
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let t = mid + half * x;
            let v = f(t);
            for k in 0..K {
                if !v[k].is_finite() {
                    return Err(Error::Integration { node: t });
                }
                acc[k] += w * v[k];
            }
        }
        for a in acc.iter_mut() {
            *a *= half;
        }
        Ok(acc)
    }
}

/// Physicists' Gauss–Hermite nodes and weights (weight function e^{−x²}).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Adaptive Gauss–Legendre integration of a vector-valued integrand.
///
/// Returns the integral and the summed panel-halving differences as an
/// error estimate. `abs_tol` is distributed over panels by length.
pub fn integrate_adaptive<const K: usize, F>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rule: &GaussLegendre,
) -> Result<([f64; K], f64)>
where
    F: Fn(f64) -> [f64; K],
{
    if b <= a {
        return Ok(([0.0; K], 0.0));
    }
    let coarse = rule.apply(f, a, b)?;
    let width = b - a;
    let mut total = [0.0; K];
    let mut err = 0.0;
    // explicit stack: (lo, hi, estimate on [lo, hi], depth)
    let mut stack = vec![(a, b, coarse, 0u32)];
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = rule.apply(f, lo, mid)?;
        let right = rule.apply(f, mid, hi)?;
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for k in 0..K {
            diff = diff.max((left[k] + right[k] - est[k]).abs());
            scale = scale.max((left[k] + right[k]).abs());
        }
        // tolerances below the rounding floor of the panel sum cannot be met
        let budget = (abs_tol * (hi - lo) / width).max(64.0 * f64::EPSILON * scale);
        if diff <= budget || depth >= MAX_DEPTH || (hi - lo) < 1e-13 * width {
            for k in 0..K {
                total[k] += left[k] + right[k];
            }
            err += diff;
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    Ok((total, err))
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];
// Gauss weights for the odd-indexed Kronrod nodes
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

/// 21-point Gauss–Kronrod rule on `[a, b]`: (Kronrod estimate, error,
/// largest ∫|f| over the components).
///
/// The error uses the QUADPACK scaling of the embedded 10-point Gauss
/// difference.
pub fn gauss_kronrod21<const K: usize, F>(f: &F, a: f64, b: f64) -> Result<([f64; K], f64, f64)>
where
    F: Fn(f64) -> [f64; K],
{
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let mut fvals = [[0.0; K]; 21];
    for (j, (&x, &w)) in XGK.iter().zip(&WGK).enumerate() {
        let pts: &[f64] = if x == 0.0 { &[0.0] } else { &[-x, x] };
        for (s, &xx) in pts.iter().enumerate() {
            let t = mid + half * xx;
            let v = f(t);
            for k in 0..K {
                if !v[k].is_finite() {
                    return Err(Error::Integration { node: t });
                }
                kron[k] += w * v[k];
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * v[k];
                }
            }
            fvals[(2 * j + s).min(20)] = v;
        }
    }
    let mut err = 0.0f64;
    let mut resabs = 0.0f64;
    for k in 0..K {
        let mean = 0.5 * kron[k];
        let mut abs = 0.0;
        for (j, &w) in WGK.iter().enumerate() {
            abs += if XGK[j] == 0.0 {
                w * fvals[20][k].abs()
            } else {
                w * (fvals[2 * j][k].abs() + fvals[2 * j + 1][k].abs())
            };
        }
        resabs = resabs.max(abs * half.abs());
        let mut asc = 0.0;
        for (j, &w) in WGK.iter().enumerate() {
            if XGK[j] == 0.0 {
                asc += w * (fvals[20][k] - mean).abs();
            } else {
                asc += w * ((fvals[2 * j][k] - mean).abs() + (fvals[2 * j + 1][k] - mean).abs());
            }
        }
        let asc = asc * half.abs();
        let mut e = ((kron[k] - gauss[k]) * half).abs();
        if asc != 0.0 && e != 0.0 {
            e = asc * (200.0 * e / asc).powf(1.5).min(1.0);
        }
        err = err.max(e);
        kron[k] *= half;
    }
    Ok((kron, err, resabs))
}

/// Adaptive bisection driven by [`gauss_kronrod21`].
pub fn integrate_gk<const K: usize, F>(f: &F, a: f64, b: f64, abs_tol: f64) -> Result<([f64; K], f64)>
where
    F: Fn(f64) -> [f64; K],
{
    if b <= a {
        return Ok(([0.0; K], 0.0));
    }
    let width = b - a;
    let mut total = [0.0; K];
    let mut err_total = 0.0;
    let mut stack = vec![(a, b, 0u32)];
    let mut panels = 0usize;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, err, resabs) = gauss_kronrod21(f, lo, hi)?;
        panels += 1;
        // tolerances below the rounding floor of ∫|f| cannot be met
        let budget = (abs_tol * (hi - lo) / width).max(64.0 * f64::EPSILON * resabs);
        let exhausted = depth >= MAX_DEPTH || (hi - lo) < 1e-13 * width || panels > MAX_PANELS;
        if err <= budget || exhausted {
            for k in 0..K {
                total[k] += v[k];
            }
            err_total += err;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Ok((total, err_total))
}

/// Integrates over `[a, b]` split at the supplied interior breakpoints.
pub fn integrate_with_breaks<const K: usize, F>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
) -> Result<([f64; K], f64)>
where
    F: Fn(f64) -> [f64; K],
{
    if b <= a {
        return Ok(([0.0; K], 0.0));
    }
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let mut edges = Vec::with_capacity(pts.len() + 2);
    edges.push(a);
    edges.extend(pts);
    edges.push(b);
    let mut total = [0.0; K];
    let mut err = 0.0;
    let width = b - a;
    for w in edges.windows(2) {
        let tol = abs_tol * (w[1] - w[0]) / width;
        let (v, e) = integrate_gk(f, w[0], w[1], tol)?;
        for k in 0..K {
            total[k] += v[k];
        }
        err += e;
    }
    Ok((total, err))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureScheme {
    GaussHermiteMapped,
    AdaptivePanel,
}

/// A quadrature rule for integrals against the standard normal measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    /// Gauss–Hermite order, or Gauss–Legendre order per adaptive panel.
    pub node_count: usize,
    pub domain: (f64, f64),
    pub scheme: QuadratureScheme,
    /// Absolute tolerance for the adaptive scheme.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::adaptive(f64::NEG_INFINITY, f64::INFINITY)
    }
}

impl Quadrature {
    pub fn hermite(node_count: usize) -> Self {
        Self {
            node_count,
            domain: (f64::NEG_INFINITY, f64::INFINITY),
            scheme: QuadratureScheme::GaussHermiteMapped,
            tolerance: 0.0,
        }
    }

    pub fn adaptive(lower: f64, upper: f64) -> Self {
        Self {
            node_count: 20,
            domain: (lower, upper),
            scheme: QuadratureScheme::AdaptivePanel,
            tolerance: 1e-13,
        }
    }

    pub fn with_nodes(mut self, node_count: usize) -> Self {
        self.node_count = node_count;
        self
    }

    /// ∫ g(t) φ(t) dt over the rule's own domain, with an error estimate.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> Result<Estimate> {
        let (lower, upper) = self.domain;
        if !(lower < upper) {
            return Err(Error::Domain(format!(
                "integration domain requires lower < upper, got ({lower}, {upper})"
            )));
        }
        let full_line = lower == f64::NEG_INFINITY && upper == f64::INFINITY;
        match self.scheme {
            QuadratureScheme::GaussHermiteMapped if full_line => {
                let value = hermite_sum(&g, self.node_count)?;
                let coarse = hermite_sum(&g, self.node_count.div_ceil(2))?;
                let error = (value - coarse).abs() + 4.0 * f64::EPSILON * value.abs();
                Ok(Estimate { value, error })
            }
            _ => {
                let a = lower.max(-T_CUT);
                let b = upper.min(T_CUT);
                if b <= a {
                    return Ok(Estimate {
                        value: 0.0,
                        error: 0.0,
                    });
                }
                let rule = if self.node_count == 20 {
                    GaussLegendre::standard().clone()
                } else {
                    GaussLegendre::new(self.node_count.max(2))
                };
                let integrand = |t: f64| [g(t) * normal_pdf(t)];
                let ([value], err) =
                    integrate_adaptive(&integrand, a, b, self.tolerance, &rule)?;
                Ok(Estimate {
                    value,
                    error: err + 4.0 * f64::EPSILON * value.abs(),
                })
            }
        }
    }
}

fn hermite_sum<G: Fn(f64) -> f64>(g: &G, n: usize) -> Result<f64> {
    let (x, w) = gauss_hermite(n.max(1));
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let t = std::f64::consts::SQRT_2 * xi;
        let v = g(t);
        if !v.is_finite() {
            return Err(Error::Integration { node: t });
        }
        acc += wi * v;
    }
    Ok(acc / std::f64::consts::PI.sqrt())
}

/// ∫_{lower}^{upper} g(t) φ(t) dt.
pub fn gaussian_integral<G: Fn(f64) -> f64>(
    g: G,
    lower: f64,
    upper: f64,
    quad: &Quadrature,
) -> Result<f64> {
    let rule = Quadrature {
        domain: (lower, upper),
        ..*quad
    };
    rule.integrate(g).map(|e| e.value)
}
