// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monotone curves `eta -> alignment` and their inverses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};

/// Points on which monotonicity is checked.
pub const CHECK_POINTS: usize = 1000;
const MAX_DEGREE: usize = 3;
const BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Least-squares polynomial of degree at most 3.
    PolyConstrained,
    /// Fritsch-Carlson piecewise cubic through the isotonic values.
    MonotoneCubic,
}

/// A non-decreasing alignment curve over `[0, eta_sat]` (scale magnitudes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCurve {
    pub kind: CurveKind,
    /// Polynomial coefficients in `eta`, constant term first. Empty for cubics.
    pub coefficients: Vec<f64>,
    /// Cubic knots, values and slopes. Empty for polynomials.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<f64>,
    pub domain: [f64; 2],
    pub direction: Direction,
}

impl MonotoneCurve {
    pub fn eval(&self, eta: f64) -> f64 {
        match self.kind {
            CurveKind::PolyConstrained => self
                .coefficients
                .iter()
                .rev()
                .fold(0.0, |acc, c| acc * eta + c),
            CurveKind::MonotoneCubic => hermite(&self.knots, &self.values, &self.slopes, eta),
        }
    }

    pub fn eta_sat(&self) -> f64 {
        self.domain[1]
    }

    /// Whether the curve never decreases on a dense grid of its domain.
    pub fn is_monotone(&self) -> bool {
        let grid = check_grid(self.eta_sat());
        grid.windows(2).all(|w| self.eval(w[1]) >= self.eval(w[0]))
    }

    /// `eta` in the domain with `curve(eta) = a`, by bisection.
    pub fn inverse(&self, a: f64) -> Result<f64> {
        let (mut lo, mut hi) = (self.domain[0], self.domain[1]);
        let (a_lo, a_hi) = (self.eval(lo), self.eval(hi));
        if !(a_hi > a_lo) {
            return Err(FslError::NotInvertible("alignment span is empty".into()));
        }
        if a <= a_lo {
            return Ok(lo);
        }
        if a >= a_hi {
            return Ok(hi);
        }
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn check_grid(end: f64) -> Vec<f64> {
    (0..CHECK_POINTS)
        .map(|i| end * i as f64 / (CHECK_POINTS - 1) as f64)
        .collect()
}

/// Pool-adjacent-violators projection onto non-decreasing sequences.
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s2, n2) = blocks[blocks.len() - 1];
            let (s1, n1) = blocks[blocks.len() - 2];
            if s1 / n1 as f64 <= s2 / n2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

/// Least-squares polynomial in `eta`, returned constant term first, and its residual sum of squares.
fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64)> {
    // Fit in u = x / x_max for conditioning, then map back.
    let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let u: Vec<f64> = x.iter().map(|v| v / x_max).collect();
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, j| u[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| FslError::NotInvertible(format!("least squares failed: {e}")))?;
    let rss = (&a * &sol - &b).norm_squared();
    let coeffs = sol
        .iter()
        .enumerate()
        .map(|(j, c)| c / x_max.powi(j as i32))
        .collect();
    Ok((coeffs, rss))
}

/// Fritsch-Carlson slopes for a non-decreasing sequence.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        let (d0, d1) = (delta[k - 1], delta[k]);
        if d0 * d1 > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
    }
    m
}

fn hermite(x: &[f64], y: &[f64], m: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let k = x.partition_point(|&v| v <= t) - 1;
    let h = x[k + 1] - x[k];
    let s = (t - x[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    // Written as an increment from y[k] so flat segments stay exactly flat.
    y[k] + (3.0 * s2 - 2.0 * s3) * (y[k + 1] - y[k])
        + (s3 - 2.0 * s2 + s) * h * m[k]
        + (s3 - s2) * h * m[k + 1]
}

/// Fits a non-decreasing curve to `(eta, a)` points starting at `eta = 0`.
///
/// The alignments are first made monotone with PAV. The lowest polynomial
/// degree whose residual matches the best degree-≤3 fit wins; if that
/// polynomial decreases anywhere on the domain, a monotone cubic through the
/// isotonic values is used instead.
pub fn fit_monotone_reparam(points: &[(f64, f64)], direction: Direction) -> Result<MonotoneCurve> {
    if points.len() < 3 {
        return Err(FslError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    if x[0] != 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FslError::BadConfig(
            "fit points must start at 0 and be strictly increasing".into(),
        ));
    }
    let y = isotonic(&points.iter().map(|p| p.1).collect::<Vec<_>>());
    if y[y.len() - 1] <= y[0] {
        return Err(FslError::DegenerateAlignment);
    }
    let domain = [0.0, x[x.len() - 1]];

    let top = MAX_DEGREE.min(points.len() - 1);
    let fits = (1..=top)
        .map(|d| polyfit(&x, &y, d))
        .collect::<Result<Vec<_>>>()?;
    let best = fits[top - 1].1;
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let tol = 1e-12 * scale;
    let (coefficients, _) = fits
        .into_iter()
        .find(|(_, rss)| *rss <= best + tol)
        .expect("top degree qualifies");
    let poly = MonotoneCurve {
        kind: CurveKind::PolyConstrained,
        coefficients,
        knots: Vec::new(),
        values: Vec::new(),
        slopes: Vec::new(),
        domain,
        direction,
    };
    if poly.is_monotone() && poly.eval(domain[1]) > poly.eval(0.0) {
        return Ok(poly);
    }
    log::debug!(
        "{} polynomial fit is not monotone; using a monotone cubic",
        direction.label()
    );
    Ok(MonotoneCurve {
        kind: CurveKind::MonotoneCubic,
        coefficients: Vec::new(),
        slopes: pchip_slopes(&x, &y),
        knots: x,
        values: y,
        domain,
        direction,
    })
}

/// `n_out` scale magnitudes whose curve values are evenly spaced.
pub fn resample_scales(curve: &MonotoneCurve, n_out: usize) -> Result<Vec<f64>> {
    if n_out < 2 {
        return Err(FslError::BadConfig(format!(
            "n_out must be at least 2, got {n_out}"
        )));
    }
    let a0 = curve.eval(curve.domain[0]);
    let a1 = curve.eval(curve.domain[1]);
    let span = a1 - a0;
    if !(span > 0.0) {
        return Err(FslError::NotInvertible("alignment span is empty".into()));
    }
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let eta = if j == 0 {
            curve.domain[0]
        } else if j == n_out - 1 {
            curve.domain[1]
        } else {
            curve.inverse(a0 + span * j as f64 / (n_out - 1) as f64)?
        };
        out.push(eta);
    }
    if out.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FslError::NotInvertible(
            "resampled scales are not strictly increasing".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pav_pools_violators() {
        assert_eq!(isotonic(&[0.0, 0.5, 0.4, 0.9]), vec![0.0, 0.45, 0.45, 0.9]);
        assert_eq!(isotonic(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic(&[1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn sqrt_points_are_reproduced() {
        let pts: Vec<_> = [0.0, 1.0, 4.0, 9.0]
            .iter()
            .map(|&e: &f64| (e, e.sqrt()))
            .collect();
        let c = fit_monotone_reparam(&pts, Direction::Positive).unwrap();
        for &(e, a) in &pts {
            assert_abs_diff_eq!(c.eval(e), a, epsilon = 1e-6);
        }
        assert!(c.is_monotone());
    }

    #[test]
    fn linear_points_give_degree_one() {
        let pts: Vec<_> = [0.0, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&e| (e, 0.1 + 0.3 * e))
            .collect();
        let c = fit_monotone_reparam(&pts, Direction::Positive).unwrap();
        assert_eq!(c.kind, CurveKind::PolyConstrained);
        assert_eq!(c.coefficients.len(), 2);
        assert_abs_diff_eq!(c.coefficients[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(c.coefficients[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_monotone_reparam(&[(0.0, 0.0), (1.0, 1.0)], Direction::Positive),
            Err(FslError::TooFewPoints { needed: 3, got: 2 })
        ));
        assert!(matches!(
            fit_monotone_reparam(&[(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)], Direction::Positive),
            Err(FslError::DegenerateAlignment)
        ));
    }

    #[test]
    fn steep_step_falls_back_to_cubic() {
        let pts = [
            (0.0, 0.0),
            (0.5, 0.0),
            (1.0, 0.0),
            (2.0, 1.0),
            (4.0, 1.0),
            (8.0, 1.0),
        ];
        let c = fit_monotone_reparam(&pts, Direction::Negative).unwrap();
        assert_eq!(c.kind, CurveKind::MonotoneCubic);
        assert!(c.is_monotone());
        for &(e, a) in &pts {
            assert_abs_diff_eq!(c.eval(e), a, epsilon = 1e-12);
        }
    }

    #[test]
    fn resample_sqrt_curve() {
        let c = MonotoneCurve {
            kind: CurveKind::MonotoneCubic,
            coefficients: vec![],
            knots: (0..=400).map(|i| i as f64 * 0.01).collect(),
            values: (0..=400).map(|i| (i as f64 * 0.01).sqrt()).collect(),
            slopes: vec![],
            domain: [0.0, 4.0],
            direction: Direction::Positive,
        };
        let c = MonotoneCurve {
            slopes: pchip_slopes(&c.knots, &c.values),
            ..c
        };
        let s = resample_scales(&c, 3).unwrap();
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s[2], 4.0, epsilon = 1e-6);
        assert_eq!(resample_scales(&c, 2).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn linear_curve_resamples_uniformly() {
        let c = MonotoneCurve {
            kind: CurveKind::PolyConstrained,
            coefficients: vec![0.2, 0.5],
            knots: vec![],
            values: vec![],
            slopes: vec![],
            domain: [0.0, 3.0],
            direction: Direction::Positive,
        };
        let s = resample_scales(&c, 4).unwrap();
        for (i, v) in s.iter().enumerate() {
            assert_abs_diff_eq!(*v, i as f64, epsilon = 1e-9);
        }
        assert!(resample_scales(&c, 1).is_err());
        let flat = MonotoneCurve {
            coefficients: vec![0.2],
            ..c
        };
        assert!(matches!(
            resample_scales(&flat, 3),
            Err(FslError::NotInvertible(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn fitted_curves_are_monotone_and_uniform(
            raw in prop::collection::vec(-0.2f64..1.0, 6),
            n_out in 2usize..10,
        ) {
            let etas = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
            let mut acc = 0.0;
            let pts: Vec<_> = etas.iter().zip(&raw).map(|(&e, &r)| { acc += r; (e, acc) }).collect();
            match fit_monotone_reparam(&pts, Direction::Positive) {
                Ok(c) => {
                    prop_assert!(c.is_monotone());
                    let scales = resample_scales(&c, n_out).unwrap();
                    let (a0, a1) = (c.eval(0.0), c.eval(c.eta_sat()));
                    let step = (a1 - a0) / (n_out - 1) as f64;
                    for (j, &e) in scales.iter().enumerate() {
                        prop_assert!((c.eval(e) - (a0 + step * j as f64)).abs() <= 1e-5 * (a1 - a0));
                    }
                }
                Err(e) => prop_assert!(matches!(e, FslError::DegenerateAlignment)),
            }
        }
    }
}
