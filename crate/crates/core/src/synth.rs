//! Two-dimensional synthetic benchmark with a tunable mixing violation.
//!
//! Geometry (defaults in parentheses):
//!
//! * `P'+` lies on the horizontal line `y = positive_y` (-0.5), abscissa
//!   uniform on `x_range` ([-2, 2]).
//! * `N'` is split evenly between the vertical lines `x = left` (-1) and
//!   `x = right` (+1), ordinate uniform on `y_range` ([0, 5]).
//! * `P'-` lives on the same two lines, a `skew` fraction on the right one.
//!   `skew = 0.5` reproduces the mixing case, `skew = 1` complete dependence.
//!
//! Line membership counts are exact (`round(w * n)` points on the right
//! line); only positions along a line are random.
//!
//! # Random streams
//!
//! A ChaCha8 generator keyed by `seed` is split into independent streams via
//! the ChaCha stream id: stream 1 draws the `P'+` abscissas, stream 2 the
//! `P'-` ordinates and stream 3 the `N'` ordinates. Each draw takes one
//! `u64`, keeps its top 53 bits `k` and maps it to `lo + (k / 2^53) (hi - lo)`.
//! Resizing one partition therefore never changes the points of another.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, MilConfig, Origin, UnpackedDataset};
use crate::error::{MilError, Result};
use crate::scalar::Scalar;

const STREAM_POS_PLUS: u64 = 1;
const STREAM_POS_MINUS: u64 = 2;
const STREAM_NEG: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub config: MilConfig,
    /// Fraction of `P'-` placed on the right line.
    pub skew: f64,
    pub seed: u64,
    #[serde(default = "default_x_range")]
    pub x_range: [f64; 2],
    #[serde(default = "default_y_range")]
    pub y_range: [f64; 2],
    #[serde(default = "default_positive_y")]
    pub positive_y: f64,
    /// Abscissas of the (left, right) vertical lines.
    #[serde(default = "default_line_abscissas")]
    pub line_abscissas: [f64; 2],
}

fn default_x_range() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_y_range() -> [f64; 2] {
    [0.0, 5.0]
}
fn default_positive_y() -> f64 {
    -0.5
}
fn default_line_abscissas() -> [f64; 2] {
    [-1.0, 1.0]
}

impl Default for SynthSpec {
    /// `M=100, l=1, B=20, P=100`, 80% of `P'-` on the right line.
    fn default() -> Self {
        Self::new(MilConfig { m: 100, l: 1, b: 20.0, p: 100 }, 0.8, 0)
    }
}

impl SynthSpec {
    pub fn new(config: MilConfig, skew: f64, seed: u64) -> Self {
        Self {
            config,
            skew,
            seed,
            x_range: default_x_range(),
            y_range: default_y_range(),
            positive_y: default_positive_y(),
            line_abscissas: default_line_abscissas(),
        }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(MilError::Config(format!("skew {} outside [0, 1]", self.skew)));
        }
        for (name, r) in [("x_range", self.x_range), ("y_range", self.y_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(MilError::Config(format!("{name} {r:?} is empty")));
            }
        }
        if !(self.positive_y < self.y_range[0]) {
            return Err(MilError::Config(format!(
                "positive line y={} must lie below the vertical segments starting at {}",
                self.positive_y, self.y_range[0]
            )));
        }
        let [a, b] = self.line_abscissas;
        if !(a.is_finite() && b.is_finite() && a != b) {
            return Err(MilError::Config("line abscissas must be distinct".into()));
        }
        Ok(())
    }

    /// Same spec with `P` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Ok(Self { config: self.config.scaled(factor)?, ..self.clone() })
    }

    /// Ordinate of a horizontal line separating ground truth perfectly.
    pub fn separating_ordinate(&self) -> f64 {
        0.5 * (self.positive_y + self.y_range[0])
    }

    /// Number of `P'-` points on the right line.
    pub fn pos_minus_right(&self) -> usize {
        split_right(self.config.n_pos_minus(), self.skew)
    }

    pub fn neg_right(&self) -> usize {
        split_right(self.config.n_neg(), 0.5)
    }
}

fn split_right(n: usize, w: f64) -> usize {
    ((n as f64) * w).round() as usize
}

struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + u * (hi - lo)
    }
}

/// Points of each partition as `(x, y)` pairs, in generation order.
struct Partitions {
    pos_plus: Vec<[f64; 2]>,
    pos_minus: Vec<[f64; 2]>,
    neg: Vec<[f64; 2]>,
}

fn draw(spec: &SynthSpec) -> Result<Partitions> {
    spec.validate()?;
    let cfg = &spec.config;
    let [left, right] = spec.line_abscissas;
    let [ylo, yhi] = spec.y_range;

    let mut s = Stream::new(spec.seed, STREAM_POS_PLUS);
    let pos_plus = (0..cfg.n_pos_plus()).map(|_| [s.uniform(spec.x_range[0], spec.x_range[1]), spec.positive_y]).collect();

    let vertical = |n: usize, n_right: usize, stream: u64| -> Vec<[f64; 2]> {
        let mut s = Stream::new(spec.seed, stream);
        (0..n)
            .map(|i| {
                let x = if i < n_right { right } else { left };
                [x, s.uniform(ylo, yhi)]
            })
            .collect()
    };
    let pos_minus = vertical(cfg.n_pos_minus(), spec.pos_minus_right(), STREAM_POS_MINUS);
    let neg = vertical(cfg.n_neg(), spec.neg_right(), STREAM_NEG);
    Ok(Partitions { pos_plus, pos_minus, neg })
}

/// Generates the unpacked dataset described by `spec`.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<UnpackedDataset<T>> {
    let parts = draw(spec)?;
    let n = spec.config.total_instances();
    let mut features = Vec::with_capacity(2 * n);
    let mut origins = Vec::with_capacity(n);
    for (points, origin) in [(&parts.pos_plus, Origin::PplusPrime), (&parts.pos_minus, Origin::PminusPrime), (&parts.neg, Origin::NPrime)] {
        for p in points {
            features.push(T::lit(p[0]));
            features.push(T::lit(p[1]));
            origins.push(origin);
        }
    }
    let ds = UnpackedDataset::from_parts(spec.config, 2, features, origins)?;
    check_separable(spec, &ds)?;
    Ok(ds)
}

/// Packs the same points into bags: positive bag `i` receives the `i`-th
/// block of `l` points from `P'+` and of `M - l` points from `P'-`; negative
/// bags take consecutive blocks of `M` points from `N'`. Positive bags come
/// first.
pub fn generate_bags<T: Scalar>(spec: &SynthSpec) -> Result<Vec<Bag<T>>> {
    let parts = draw(spec)?;
    let cfg = &spec.config;
    let conv = |p: &[f64; 2]| vec![T::lit(p[0]), T::lit(p[1])];
    let mut bags = Vec::with_capacity(cfg.p + cfg.negative_bags());
    let neg_per_pos = cfg.m - cfg.l;
    for i in 0..cfg.p {
        let mut features: Vec<Vec<T>> = parts.pos_plus[i * cfg.l..(i + 1) * cfg.l].iter().map(conv).collect();
        features.extend(parts.pos_minus[i * neg_per_pos..(i + 1) * neg_per_pos].iter().map(conv));
        let mut truth = vec![true; cfg.l];
        truth.resize(cfg.m, false);
        bags.push(Bag::new(features, truth, true)?);
    }
    for chunk in parts.neg.chunks(cfg.m) {
        bags.push(Bag::new(chunk.iter().map(conv).collect(), vec![false; cfg.m], false)?);
    }
    Ok(bags)
}

/// Verifies that `y = separating_ordinate` classifies ground truth perfectly.
pub fn check_separable<T: Scalar>(spec: &SynthSpec, ds: &UnpackedDataset<T>) -> Result<()> {
    let cut = spec.separating_ordinate();
    for (i, inst) in ds.iter().enumerate() {
        let below = inst.features[1].as_f64() < cut;
        if below != inst.truth_label {
            return Err(MilError::Consistency(format!("instance {i} ({}) on the wrong side of y = {cut}", inst.origin)));
        }
    }
    Ok(())
}

/// One vertical segment `{x = abscissa, y in [y_lo, y_hi]}` with its mixture weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment<T> {
    pub abscissa: T,
    pub y_lo: T,
    pub y_hi: T,
    pub weight: T,
}

impl<T: Scalar> Segment<T> {
    pub fn length(&self) -> T {
        self.y_hi - self.y_lo
    }

    pub fn contains(&self, point: [T; 2]) -> bool {
        let tol = T::lit(1e-12);
        (point[0] - self.abscissa).abs() <= tol && point[1] >= self.y_lo && point[1] <= self.y_hi
    }

    /// Density per unit length.
    pub fn linear_density(&self) -> T {
        self.weight / self.length()
    }
}

/// Mixture of uniform densities on line segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseUniformDensity<T> {
    pub segments: Vec<Segment<T>>,
}

impl<T: Scalar> PiecewiseUniformDensity<T> {
    pub fn new(segments: Vec<Segment<T>>) -> Result<Self> {
        let d = Self { segments };
        d.validate()?;
        Ok(d)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.segments.iter().any(|s| s.weight < T::zero() || !(s.length() > T::zero())) {
            return Err(MilError::Domain("segments need nonnegative weight and positive length".into()));
        }
        let total: T = self.segments.iter().map(|s| s.weight).sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(MilError::Domain(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Density (per unit length) at `point`; zero off the support.
    pub fn at(&self, point: [T; 2]) -> T {
        self.segments.iter().filter(|s| s.contains(point)).map(|s| s.linear_density()).sum()
    }

    /// Integral of the density over all segments.
    pub fn total_mass(&self) -> T {
        self.segments.iter().map(|s| s.linear_density() * s.length()).sum()
    }
}

/// Exact densities of `P'-` and `N'` implied by `spec`.
pub fn densities<T: Scalar>(spec: &SynthSpec) -> Result<(PiecewiseUniformDensity<T>, PiecewiseUniformDensity<T>)> {
    spec.validate()?;
    let [left, right] = spec.line_abscissas;
    let seg =
        |x: f64, w: f64| Segment { abscissa: T::lit(x), y_lo: T::lit(spec.y_range[0]), y_hi: T::lit(spec.y_range[1]), weight: T::lit(w) };
    let mu_p = PiecewiseUniformDensity::new(vec![seg(right, spec.skew), seg(left, 1.0 - spec.skew)])?;
    let mu_n = PiecewiseUniformDensity::new(vec![seg(right, 0.5), seg(left, 0.5)])?;
    Ok((mu_p, mu_n))
}
