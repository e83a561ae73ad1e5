//! Bags, instances and the unpacked single-instance dataset.
//!
//! An unpacked dataset stores every instance of every bag, tagged with the
//! partition it came from:
//!
//! * `PplusPrime`: truth-positive instances of positive bags,
//! * `PminusPrime`: truth-negative instances of positive bags,
//! * `NPrime`: instances of negative bags.
//!
//! The single-instance (SI) label of an instance is the label of its bag.
//! Training code only ever sees a [`TrainingView`], which carries features and
//! SI labels but no ground truth.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::scalar::Scalar;

/// Dataset constants: bag size, positives per positive bag, balance and
/// number of positive bags.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    #[serde(rename = "M")]
    pub m: usize,
    pub l: usize,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "P")]
    pub p: usize,
}

impl MilConfig {
    pub fn new(m: usize, l: usize, b: f64, p: usize) -> Result<Self> {
        let cfg = Self { m, l, b, p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(MilError::Config("bag size M must be at least 1".into()));
        }
        if self.l == 0 || self.l > self.m {
            return Err(MilError::Config(format!("positives per bag l={} must lie in [1, M={}]", self.l, self.m)));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(MilError::Config(format!("balance B={} must be positive", self.b)));
        }
        if self.p == 0 {
            return Err(MilError::Config("number of positive bags P must be at least 1".into()));
        }
        let nb = self.b * self.p as f64;
        if (nb - nb.round()).abs() > 1e-9 * nb.max(1.0) {
            return Err(MilError::Config(format!("B*P = {nb} is not an integer number of negative bags")));
        }
        Ok(())
    }

    pub fn negative_bags(&self) -> usize {
        (self.b * self.p as f64).round() as usize
    }

    /// `|P'+| = l P`
    pub fn n_pos_plus(&self) -> usize {
        self.l * self.p
    }

    /// `|P'-| = (M - l) P`
    pub fn n_pos_minus(&self) -> usize {
        (self.m - self.l) * self.p
    }

    /// `|N'| = M B P`
    pub fn n_neg(&self) -> usize {
        self.m * self.negative_bags()
    }

    pub fn total_instances(&self) -> usize {
        self.n_pos_plus() + self.n_pos_minus() + self.n_neg()
    }

    pub fn count(&self, origin: Origin) -> usize {
        match origin {
            Origin::PplusPrime => self.n_pos_plus(),
            Origin::PminusPrime => self.n_pos_minus(),
            Origin::NPrime => self.n_neg(),
        }
    }

    /// Rescales the number of positive bags, keeping `M`, `l` and `B` fixed.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(MilError::Config(format!("scale factor {factor} must be positive")));
        }
        let p = ((self.p as f64) * factor).round().max(1.0) as usize;
        Self::new(self.m, self.l, self.b, p)
    }
}

/// Partition an instance belongs to after unpacking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    PplusPrime,
    PminusPrime,
    NPrime,
}

impl Origin {
    pub const ALL: [Origin; 3] = [Origin::PplusPrime, Origin::PminusPrime, Origin::NPrime];

    pub fn si_label(self) -> bool {
        !matches!(self, Origin::NPrime)
    }

    pub fn truth_label(self) -> bool {
        matches!(self, Origin::PplusPrime)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::PplusPrime => "PplusPrime",
            Origin::PminusPrime => "PminusPrime",
            Origin::NPrime => "NPrime",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = MilError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PplusPrime" => Ok(Origin::PplusPrime),
            "PminusPrime" => Ok(Origin::PminusPrime),
            "NPrime" => Ok(Origin::NPrime),
            other => Err(MilError::Consistency(format!("unknown origin tag {other:?}"))),
        }
    }
}

/// A bag of instances with hidden per-instance ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag<T> {
    pub features: Vec<Vec<T>>,
    pub truth: Vec<bool>,
    pub label: bool,
}

impl<T: Scalar> Bag<T> {
    pub fn new(features: Vec<Vec<T>>, truth: Vec<bool>, label: bool) -> Result<Self> {
        let bag = Self { features, truth, label };
        bag.check()?;
        Ok(bag)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    fn check(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(MilError::Consistency("empty bag".into()));
        }
        if self.truth.len() != self.features.len() {
            return Err(MilError::Consistency(format!(
                "bag has {} feature rows but {} truth labels",
                self.features.len(),
                self.truth.len()
            )));
        }
        let dim = self.features[0].len();
        if self.features.iter().any(|f| f.len() != dim) {
            return Err(MilError::Consistency("ragged feature rows inside a bag".into()));
        }
        // classical MIL assumption
        let any_positive = self.truth.iter().any(|&t| t);
        if any_positive != self.label {
            return Err(MilError::Consistency(format!("bag label {} disagrees with instance truth labels", self.label as u8)));
        }
        Ok(())
    }
}

/// Borrowed view of one unpacked instance.
#[derive(Clone, Copy, Debug)]
pub struct Instance<'a, T> {
    pub features: &'a [T],
    pub si_label: bool,
    pub truth_label: bool,
    pub origin: Origin,
}

/// All instances of all bags, ordered `P'+`, then `P'-`, then `N'`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpackedDataset<T> {
    config: MilConfig,
    dim: usize,
    features: Vec<T>,
    origins: Vec<Origin>,
    si_labels: Vec<bool>,
    truth_labels: Vec<bool>,
}

/// Features and SI labels only. Ground truth is not reachable from here.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a, T> {
    pub dim: usize,
    pub features: &'a [T],
    pub si_labels: &'a [bool],
}

impl<'a, T> TrainingView<'a, T> {
    pub fn len(&self) -> usize {
        self.si_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.si_labels.is_empty()
    }
}

impl<T: Scalar> UnpackedDataset<T> {
    /// Builds a dataset from flat row-major features and partition tags.
    ///
    /// Rows must already be grouped in `P'+`, `P'-`, `N'` order and the
    /// partition counts must match `config` exactly.
    pub fn from_parts(config: MilConfig, dim: usize, features: Vec<T>, origins: Vec<Origin>) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(MilError::Config("feature dimension must be at least 1".into()));
        }
        if features.len() != dim * origins.len() {
            return Err(MilError::Shape { expected: dim * origins.len(), got: features.len() });
        }
        if origins.windows(2).any(|w| w[0] > w[1]) {
            return Err(MilError::Consistency("instances are not ordered P'+, P'-, N'".into()));
        }
        for origin in Origin::ALL {
            let got = origins.iter().filter(|&&o| o == origin).count();
            let expected = config.count(origin);
            if got != expected {
                return Err(MilError::Consistency(format!("partition {origin} has {got} instances, config requires {expected}")));
            }
        }
        let si_labels = origins.iter().map(|o| o.si_label()).collect();
        let truth_labels = origins.iter().map(|o| o.truth_label()).collect();
        Ok(Self { config, dim, features, origins, si_labels, truth_labels })
    }

    pub fn config(&self) -> &MilConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn si_labels(&self) -> &[bool] {
        &self.si_labels
    }

    /// Ground-truth labels. Evaluation only.
    pub fn truth_labels(&self) -> &[bool] {
        &self.truth_labels
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.origins.iter().filter(|&&o| o == origin).count()
    }

    pub fn instance(&self, i: usize) -> Instance<'_, T> {
        Instance { features: self.row(i), si_label: self.si_labels[i], truth_label: self.truth_labels[i], origin: self.origins[i] }
    }

    pub fn iter(&self) -> impl Iterator<Item = Instance<'_, T>> + '_ {
        (0..self.len()).map(move |i| self.instance(i))
    }

    pub fn training_view(&self) -> TrainingView<'_, T> {
        TrainingView { dim: self.dim, features: &self.features, si_labels: &self.si_labels }
    }

    /// Writes one row per instance: `x0,..,x{d-1},si_label,truth_label,origin`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.extend(["si_label", "truth_label", "origin"].map(String::from));
        w.write_record(&header)?;
        for inst in self.iter() {
            let mut rec: Vec<String> = inst.features.iter().map(|v| v.to_string()).collect();
            rec.push((inst.si_label as u8).to_string());
            rec.push((inst.truth_label as u8).to_string());
            rec.push(inst.origin.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(reader: R, config: MilConfig) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let ncols = r.headers()?.len();
        if ncols < 4 {
            return Err(MilError::Consistency(format!("expected at least 4 columns, found {ncols}")));
        }
        let dim = ncols - 3;
        let mut features = Vec::new();
        let mut origins = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..dim {
                let v: f64 = rec[j].parse().map_err(|e| MilError::Consistency(format!("bad feature value {:?}: {e}", &rec[j])))?;
                features.push(T::lit(v));
            }
            let origin: Origin = rec[dim + 2].parse()?;
            let si = parse_bit(&rec[dim])?;
            let truth = parse_bit(&rec[dim + 1])?;
            if si != origin.si_label() || truth != origin.truth_label() {
                return Err(MilError::Consistency(format!("labels ({}, {}) contradict origin {origin}", si as u8, truth as u8)));
            }
            origins.push(origin);
        }
        Self::from_parts(config, dim, features, origins)
    }
}

fn parse_bit(s: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(MilError::Consistency(format!("expected 0/1 label, found {other:?}"))),
    }
}

/// Flattens bags into the SI dataset, assigning every instance its bag label.
///
/// All bags must have the same size and every positive bag the same number
/// of truth-positive instances; `M`, `l`, `P` and `B` are read off the input.
pub fn unpack<T: Scalar>(bags: &[Bag<T>]) -> Result<UnpackedDataset<T>> {
    let first = bags.first().ok_or_else(|| MilError::Config("no bags to unpack".into()))?;
    let m = first.len();
    let dim = first.features.first().map_or(0, |f| f.len());
    let mut l = None;
    for bag in bags {
        bag.check()?;
        if bag.len() != m {
            return Err(MilError::Consistency(format!("bag of size {} in a dataset with M={m}", bag.len())));
        }
        if bag.features[0].len() != dim {
            return Err(MilError::Consistency("feature dimension differs between bags".into()));
        }
        if bag.label {
            let k = bag.positives();
            match l {
                None => l = Some(k),
                Some(prev) if prev != k => {
                    return Err(MilError::Consistency(format!("positive bags carry {prev} and {k} positives; l must be fixed")))
                }
                _ => {}
            }
        }
    }
    let p = bags.iter().filter(|b| b.label).count();
    let Some(l) = l else {
        return Err(MilError::Config("no positive bags: P must be at least 1".into()));
    };
    let n = bags.len() - p;
    let config = MilConfig::new(m, l, n as f64 / p as f64, p)?;

    let mut features = Vec::with_capacity(bags.len() * m * dim);
    let mut origins = Vec::with_capacity(bags.len() * m);
    for origin in Origin::ALL {
        for bag in bags {
            for (row, &truth) in bag.features.iter().zip(&bag.truth) {
                let o = match (bag.label, truth) {
                    (true, true) => Origin::PplusPrime,
                    (true, false) => Origin::PminusPrime,
                    (false, _) => Origin::NPrime,
                };
                if o == origin {
                    features.extend_from_slice(row);
                    origins.push(o);
                }
            }
        }
    }
    UnpackedDataset::from_parts(config, dim, features, origins)
}

/// Bag-level balance `B = |N| / |P|`.
pub fn balance<T: Scalar>(dataset: &UnpackedDataset<T>) -> Result<f64> {
    let cfg = dataset.config();
    if cfg.p == 0 {
        return Err(MilError::Domain("balance undefined without positive bags".into()));
    }
    Ok(cfg.negative_bags() as f64 / cfg.p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64) -> Vec<f64> {
        vec![x, 0.0]
    }

    fn tiny_bags() -> Vec<Bag<f64>> {
        vec![
            Bag::new(vec![pt(1.0), pt(2.0)], vec![true, false], true).unwrap(),
            Bag::new(vec![pt(3.0), pt(4.0)], vec![false, false], false).unwrap(),
        ]
    }

    #[test]
    fn smallest_unpack() {
        let ds = unpack(&tiny_bags()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.count(Origin::PplusPrime), 1);
        assert_eq!(ds.count(Origin::PminusPrime), 1);
        assert_eq!(ds.count(Origin::NPrime), 2);
        assert_eq!(ds.si_labels(), &[true, true, false, false]);
        assert_eq!(ds.truth_labels(), &[true, false, false, false]);
        assert_eq!(ds.row(1), &[2.0, 0.0]);
        assert_eq!(balance(&ds).unwrap(), 1.0);
    }

    #[test]
    fn reference_config_sizes() {
        let cfg = MilConfig::new(100, 1, 20.0, 100).unwrap();
        assert_eq!(cfg.n_pos_plus(), 100);
        assert_eq!(cfg.n_pos_minus(), 9900);
        assert_eq!(cfg.n_neg(), 200_000);
        assert_eq!(cfg.total_instances(), 100 * 21 * 100);
    }

    #[test]
    fn all_negative_rejected() {
        let bags = vec![Bag::new(vec![pt(0.0), pt(1.0)], vec![false, false], false).unwrap()];
        assert!(matches!(unpack(&bags), Err(MilError::Config(_))));
        assert!(MilConfig::new(2, 1, 1.0, 0).is_err());
    }

    #[test]
    fn balance_is_bag_ratio() {
        let mut bags = vec![Bag::new(vec![pt(0.0)], vec![true], true).unwrap()];
        for i in 0..30 {
            bags.push(Bag::new(vec![pt(i as f64)], vec![false], false).unwrap());
        }
        let ds = unpack(&bags).unwrap();
        assert_eq!(balance(&ds).unwrap(), 30.0);
    }

    #[test]
    fn inconsistent_label_rejected() {
        assert!(matches!(Bag::new(vec![pt(0.0)], vec![true], false), Err(MilError::Consistency(_))));
        let bad = Bag { features: vec![pt(0.0), pt(1.0)], truth: vec![false, false], label: true };
        assert!(matches!(unpack(&[bad]), Err(MilError::Consistency(_))));
    }

    #[test]
    fn variable_bag_size_rejected() {
        let mut bags = tiny_bags();
        bags.push(Bag::new(vec![pt(0.0)], vec![false], false).unwrap());
        assert!(matches!(unpack(&bags), Err(MilError::Consistency(_))));
    }

    #[test]
    fn varying_l_rejected() {
        let mut bags = tiny_bags();
        bags.push(Bag::new(vec![pt(0.0), pt(1.0)], vec![true, true], true).unwrap());
        assert!(matches!(unpack(&bags), Err(MilError::Consistency(_))));
    }

    #[test]
    fn non_integer_negative_bag_count() {
        assert!(MilConfig::new(10, 1, 2.5, 3).is_err());
        assert!(MilConfig::new(10, 1, 2.5, 2).is_ok());
    }

    #[test]
    fn csv_roundtrip() {
        let ds = unpack(&tiny_bags()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,si_label,truth_label,origin\n1,0,1,1,PplusPrime\n"));
        let back = UnpackedDataset::<f64>::read_csv(&buf[..], *ds.config()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_label_origin_mismatch_rejected() {
        let text = "x0,si_label,truth_label,origin\n1,0,1,PplusPrime\n";
        let cfg = MilConfig::new(1, 1, 1.0, 1).unwrap();
        assert!(UnpackedDataset::<f64>::read_csv(text.as_bytes(), cfg).is_err());
    }
}
