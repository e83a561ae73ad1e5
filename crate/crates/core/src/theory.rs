//! Closed-form minimizers of the SI objective on unpacked data.
//!
//! With unrestricted capacity the SI loss is minimized by scoring every
//! true positive 1 and every other instance with the fraction of SI-positive
//! labels at its location. Under mixing that fraction is the constant
//! `|P'-| / (|P'-| + |N'|)`; otherwise it is the density ratio
//! `|P'-| mu_p(x) / (|P'-| mu_p(x) + |N'| mu_n(x))`.
//!
//! Everything here is exact arithmetic on the analytic densities, in `f64`.

use serde::{Deserialize, Serialize};

use crate::bag::MilConfig;
use crate::error::{MilError, Result};
use crate::synth::{densities, PiecewiseUniformDensity, SynthSpec};

/// Relative width of the band in which a tolerance check is called marginal.
pub const MARGINAL_RTOL: f64 = 1e-9;

/// Optimal constant score on `P'- ∪ N'` when both share one distribution.
pub fn mixing_optimum(config: &MilConfig) -> f64 {
    let a = config.n_pos_minus() as f64;
    let b = config.n_neg() as f64;
    if a + b == 0.0 {
        return 0.0;
    }
    a / (a + b)
}

/// Density-ratio optimum at `point`.
///
/// Fails when neither density has support there.
pub fn nonmixing_optimum(
    point: [f64; 2],
    config: &MilConfig,
    mu_p: &PiecewiseUniformDensity<f64>,
    mu_n: &PiecewiseUniformDensity<f64>,
) -> Result<f64> {
    let p = config.n_pos_minus() as f64 * mu_p.at(point);
    let n = config.n_neg() as f64 * mu_n.at(point);
    if p + n == 0.0 {
        return Err(MilError::Domain(format!("({}, {}) lies outside the support of both densities", point[0], point[1])));
    }
    Ok(p / (p + n))
}

/// `r(g) = a log g + b log(1 - g)`, the negated SI loss of a constant score `g`
/// shared by `a` SI-positive and `b` SI-negative instances.
pub fn scalar_profile(a: f64, b: f64, g: f64) -> f64 {
    a * g.ln() + b * (1.0 - g).ln()
}

/// Maximizer of [`scalar_profile`] on `(0, 1)`.
pub fn scalar_profile_argmax(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(MilError::Domain(format!("profile weights must be positive, got ({a}, {b})")));
    }
    Ok(a / (a + b))
}

/// Brute-force maximizer of [`scalar_profile`] over the grid `step, 2 step, ... < 1`.
pub fn scalar_profile_grid_argmax(a: f64, b: f64, step: f64) -> Result<f64> {
    scalar_profile_argmax(a, b)?;
    if !(step > 0.0 && step < 0.5) {
        return Err(MilError::Domain(format!("grid step {step} outside (0, 0.5)")));
    }
    let n = (1.0 / step).ceil() as usize;
    let (mut best, mut best_val) = (step, f64::NEG_INFINITY);
    for i in 1..n {
        let g = i as f64 * step;
        if g >= 1.0 {
            break;
        }
        let v = scalar_profile(a, b, g);
        if v > best_val {
            best = g;
            best_val = v;
        }
    }
    Ok(best)
}

/// Monotone map taking an ideal classifier's score to the SI optimum under mixing.
pub fn f_prime_from_f(f_value: f64, config: &MilConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&f_value) {
        return Err(MilError::Domain(format!("score {f_value} outside [0, 1]")));
    }
    Ok(f_value + (1.0 - f_value) * mixing_optimum(config))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Optimum strictly below the threshold: negatives are rejected.
    Pass,
    /// Optimum equal to the threshold up to [`MARGINAL_RTOL`].
    Marginal,
    Fail,
}

/// Tolerance check on one piece of the negative-region support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentVerdict {
    pub abscissa: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub mu_p: f64,
    pub mu_n: f64,
    pub optimum: f64,
    /// `mu_p / mu_n`; infinite where `mu_n` vanishes.
    pub density_ratio: f64,
    /// Largest ratio that still yields an optimum below the threshold.
    pub ratio_bound: f64,
    pub verdict: Verdict,
}

/// Checks, piece by piece over the joint support, whether the density-ratio
/// optimum stays below `threshold`.
///
/// The optimum is below `t` exactly when
/// `mu_p / mu_n < (|N'| / |P'-|) t / (1 - t)`; at `t = 1/2` the bound is
/// about `B`, so `P'-` may be up to `B` times denser than `N'`.
pub fn mixing_tolerance(
    config: &MilConfig,
    mu_p: &PiecewiseUniformDensity<f64>,
    mu_n: &PiecewiseUniformDensity<f64>,
    threshold: f64,
) -> Result<Vec<SegmentVerdict>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MilError::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let n_p = config.n_pos_minus() as f64;
    let n_n = config.n_neg() as f64;
    let bound = if n_p == 0.0 { f64::INFINITY } else { n_n / n_p * threshold / (1.0 - threshold) };
    let mut out = Vec::new();
    for (x, y_lo, y_hi) in pieces(mu_p, mu_n) {
        let mid = [x, 0.5 * (y_lo + y_hi)];
        let (p, n) = (mu_p.at(mid), mu_n.at(mid));
        if p + n == 0.0 {
            continue;
        }
        let optimum = nonmixing_optimum(mid, config, mu_p, mu_n)?;
        let ratio = if n == 0.0 { f64::INFINITY } else { p / n };
        let verdict = if ratio.is_finite() && bound.is_finite() && (ratio - bound).abs() <= MARGINAL_RTOL * bound {
            Verdict::Marginal
        } else if ratio < bound {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        out.push(SegmentVerdict { abscissa: x, y_lo, y_hi, mu_p: p, mu_n: n, optimum, density_ratio: ratio, ratio_bound: bound, verdict });
    }
    Ok(out)
}

/// Splits the union of both supports into maximal pieces on which both
/// densities are constant, ordered by abscissa then height.
fn pieces(a: &PiecewiseUniformDensity<f64>, b: &PiecewiseUniformDensity<f64>) -> Vec<(f64, f64, f64)> {
    let segs: Vec<_> = a.segments.iter().chain(&b.segments).collect();
    let mut xs: Vec<f64> = segs.iter().map(|s| s.abscissa).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut out = Vec::new();
    for x in xs {
        let mut ys: Vec<f64> = segs.iter().filter(|s| s.abscissa == x).flat_map(|s| [s.y_lo, s.y_hi]).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        out.extend(ys.windows(2).map(|w| (x, w[0], w[1])));
    }
    out
}

/// The SI-optimal scoring function for a synthetic specification.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoremSolution {
    pub config: MilConfig,
    /// Score on the `P'+` support; always 1.
    pub value_on_positive: f64,
    mu_p: PiecewiseUniformDensity<f64>,
    mu_n: PiecewiseUniformDensity<f64>,
    positive_y: f64,
    x_range: [f64; 2],
}

impl TheoremSolution {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        let (mu_p, mu_n) = densities(spec)?;
        Ok(Self { config: spec.config, value_on_positive: 1.0, mu_p, mu_n, positive_y: spec.positive_y, x_range: spec.x_range })
    }

    pub fn densities(&self) -> (&PiecewiseUniformDensity<f64>, &PiecewiseUniformDensity<f64>) {
        (&self.mu_p, &self.mu_n)
    }

    /// Optimal score at a point of the negative region.
    pub fn value_on_negative(&self, point: [f64; 2]) -> Result<f64> {
        nonmixing_optimum(point, &self.config, &self.mu_p, &self.mu_n)
    }

    /// Optimal score anywhere on the data support.
    pub fn value(&self, point: [f64; 2]) -> Result<f64> {
        let on_positive = point[1] == self.positive_y && point[0] >= self.x_range[0] && point[0] <= self.x_range[1];
        if on_positive {
            Ok(self.value_on_positive)
        } else {
            self.value_on_negative(point)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_config() -> MilConfig {
        MilConfig::new(100, 1, 20.0, 100).unwrap()
    }

    fn dens(skew: f64) -> (PiecewiseUniformDensity<f64>, PiecewiseUniformDensity<f64>) {
        densities(&SynthSpec::new(reference_config(), skew, 0)).unwrap()
    }

    #[test]
    fn mixing_optimum_values() {
        assert_eq!(mixing_optimum(&reference_config()), 99.0 / 2099.0);
        assert_eq!(mixing_optimum(&MilConfig::new(10, 10, 3.0, 2).unwrap()), 0.0);
        assert!((mixing_optimum(&reference_config()) - 1.0 / 21.0).abs() < 1e-3);
    }

    #[test]
    fn density_ratio_on_each_line() {
        let (p, n) = dens(0.8);
        let right = nonmixing_optimum([1.0, 2.0], &reference_config(), &p, &n).unwrap();
        let left = nonmixing_optimum([-1.0, 2.0], &reference_config(), &p, &n).unwrap();
        assert!((right - 1584.0 / 21584.0).abs() < 1e-15);
        assert!((left - 396.0 / 20396.0).abs() < 1e-15);
        assert!(nonmixing_optimum([0.0, 2.0], &reference_config(), &p, &n).is_err());

        let (p, n) = dens(0.5);
        for pt in [[1.0, 0.0], [-1.0, 5.0], [1.0, 3.3]] {
            let v = nonmixing_optimum(pt, &reference_config(), &p, &n).unwrap();
            assert!((v - mixing_optimum(&reference_config())).abs() < 1e-15);
        }
    }

    #[test]
    fn one_sided_support() {
        let (p, n) = dens(1.0);
        // Left line carries only N'.
        assert_eq!(nonmixing_optimum([-1.0, 1.0], &reference_config(), &p, &n).unwrap(), 0.0);
        let only_p =
            PiecewiseUniformDensity::new(vec![crate::synth::Segment { abscissa: 3.0, y_lo: 0.0, y_hi: 1.0, weight: 1.0 }]).unwrap();
        assert_eq!(nonmixing_optimum([3.0, 0.5], &reference_config(), &only_p, &n).unwrap(), 1.0);
        for t in [0.1, 0.5, 0.99] {
            let v = mixing_tolerance(&reference_config(), &only_p, &n, t).unwrap();
            let at3 = v.iter().find(|s| s.abscissa == 3.0).unwrap();
            assert_eq!(at3.verdict, Verdict::Fail);
        }
    }

    #[test]
    fn profile_argmax() {
        assert_eq!(scalar_profile_argmax(3.0, 3.0).unwrap(), 0.5);
        assert_eq!(scalar_profile_argmax(9900.0, 200000.0).unwrap(), 99.0 / 2099.0);
        assert!(scalar_profile_argmax(0.0, 1.0).is_err());
        assert!(scalar_profile_argmax(1.0, -2.0).is_err());
        let g = scalar_profile_grid_argmax(9900.0, 200000.0, 1e-4).unwrap();
        assert!((g - 99.0 / 2099.0).abs() <= 1e-4);
    }

    #[test]
    fn tolerance_at_default_skew() {
        let (p, n) = dens(0.8);
        let v = mixing_tolerance(&reference_config(), &p, &n, 0.5).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|s| s.verdict == Verdict::Pass));
        assert_eq!(v[0].abscissa, -1.0);
        assert!((v[0].density_ratio - 0.4).abs() < 1e-12);
        assert!((v[1].density_ratio - 1.6).abs() < 1e-12);
        assert!((v[1].ratio_bound - 200000.0 / 9900.0).abs() < 1e-12);
        // A threshold below the right-line optimum rejects it, not the left.
        let v = mixing_tolerance(&reference_config(), &p, &n, 0.05).unwrap();
        assert_eq!(v[0].verdict, Verdict::Pass);
        assert_eq!(v[1].verdict, Verdict::Fail);
        assert!(mixing_tolerance(&reference_config(), &p, &n, 1.0).is_err());
    }

    #[test]
    fn tolerance_boundary_is_marginal() {
        // Pick the threshold equal to the right-line optimum.
        let (p, n) = dens(0.8);
        let t = nonmixing_optimum([1.0, 1.0], &reference_config(), &p, &n).unwrap();
        let v = mixing_tolerance(&reference_config(), &p, &n, t).unwrap();
        assert_eq!(v[1].verdict, Verdict::Marginal);
        assert_eq!(v[0].verdict, Verdict::Pass);
    }

    #[test]
    fn tolerance_splits_overlapping_segments() {
        use crate::synth::Segment;
        let seg = |lo, hi, w| Segment { abscissa: 0.0, y_lo: lo, y_hi: hi, weight: w };
        let p = PiecewiseUniformDensity::new(vec![seg(0.0, 2.0, 1.0)]).unwrap();
        let n = PiecewiseUniformDensity::new(vec![seg(1.0, 3.0, 1.0)]).unwrap();
        let v = mixing_tolerance(&reference_config(), &p, &n, 0.5).unwrap();
        let spans: Vec<_> = v.iter().map(|s| (s.y_lo, s.y_hi, s.verdict)).collect();
        assert_eq!(spans, vec![(0.0, 1.0, Verdict::Fail), (1.0, 2.0, Verdict::Pass), (2.0, 3.0, Verdict::Pass)]);
    }

    #[test]
    fn f_prime_map() {
        let c = reference_config();
        assert_eq!(f_prime_from_f(1.0, &c).unwrap(), 1.0);
        assert_eq!(f_prime_from_f(0.0, &c).unwrap(), mixing_optimum(&c));
        assert!(f_prime_from_f(1.5, &c).is_err());
        assert!(f_prime_from_f(0.2, &c).unwrap() < f_prime_from_f(0.3, &c).unwrap());
    }

    #[test]
    fn solution_is_one_on_positives() {
        let s = TheoremSolution::new(&SynthSpec::default()).unwrap();
        assert_eq!(s.value([0.3, -0.5]).unwrap(), 1.0);
        assert!((s.value([1.0, 0.0]).unwrap() - 1584.0 / 21584.0).abs() < 1e-15);
        assert!(s.value([0.3, 0.0]).is_err());
    }
}
