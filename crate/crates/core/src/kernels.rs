//! Kernel functions, Gram matrices and the median-heuristic bandwidth.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{CmmdError, Result};

/// Gram matrices with at least this many entries are filled in parallel.
const PARALLEL_GRAM_ENTRIES: usize = 1 << 14;

/// A finite real vector. Categorical values are encoded as integer-valued
/// one-dimensional points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(CmmdError::invalid("point must have at least one coordinate"));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(CmmdError::invalid(format!("non-finite coordinate {bad}")));
        }
        Ok(Point(coords))
    }

    pub fn scalar(value: f64) -> Self {
        assert!(value.is_finite(), "non-finite coordinate {value}");
        Point(vec![value])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    /// Concatenates two points, e.g. to feed a tensor-product kernel.
    pub fn join(&self, other: &Point) -> Point {
        let mut c = self.0.clone();
        c.extend_from_slice(&other.0);
        Point(c)
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<f64> for Point {
    fn from(v: f64) -> Self {
        Point::scalar(v)
    }
}

/// Gaussian bandwidth: a fixed value or a request to apply the median
/// heuristic when the kernel is first fitted to data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
            Bandwidth::Median => s.serialize_str("median"),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct BwVisitor;
        impl Visitor<'_> for BwVisitor {
            type Value = Bandwidth;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"median\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Bandwidth, E> {
                Ok(Bandwidth::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Bandwidth, E> {
                Ok(Bandwidth::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Bandwidth, E> {
                Ok(Bandwidth::Fixed(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Bandwidth, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(BwVisitor)
    }
}

impl FromStr for Bandwidth {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(Bandwidth::Median);
        }
        s.parse::<f64>()
            .map(Bandwidth::Fixed)
            .map_err(|_| format!("bandwidth must be a number or \"median\", got {s:?}"))
    }
}

/// Declarative description of a positive-definite kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-h/2 * |x - x'|^2)`
    Gaussian { bandwidth: Bandwidth },
    /// `<x, x'>`
    Linear,
    /// `(<x, x'> + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `1{x = x'}`
    #[serde(alias = "delta")]
    KroneckerDelta,
    /// `k(x, x') * l(y, y')` on points laid out as `(x, y)`, the first
    /// `left_dim` coordinates belonging to `x`.
    TensorProduct {
        left: Box<KernelSpec>,
        right: Box<KernelSpec>,
        left_dim: usize,
    },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec::Gaussian { bandwidth: Bandwidth::Fixed(bandwidth) }
    }

    pub fn gaussian_median() -> Self {
        KernelSpec::Gaussian { bandwidth: Bandwidth::Median }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelSpec::Polynomial { degree, offset }
    }

    pub fn tensor(left: KernelSpec, right: KernelSpec, left_dim: usize) -> Self {
        KernelSpec::TensorProduct { left: Box::new(left), right: Box::new(right), left_dim }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { bandwidth: Bandwidth::Fixed(h) } if !(*h > 0.0 && h.is_finite()) => {
                Err(CmmdError::invalid(format!("gaussian bandwidth must be positive, got {h}")))
            }
            KernelSpec::Polynomial { degree: 0, .. } => {
                Err(CmmdError::invalid("polynomial degree must be at least 1"))
            }
            KernelSpec::Polynomial { offset, .. } if !offset.is_finite() => {
                Err(CmmdError::invalid("polynomial offset must be finite"))
            }
            KernelSpec::TensorProduct { left, right, left_dim } => {
                if *left_dim == 0 {
                    return Err(CmmdError::invalid("tensor product needs left_dim >= 1"));
                }
                left.validate()?;
                right.validate()
            }
            _ => Ok(()),
        }
    }

    /// True when some Gaussian bandwidth still awaits the median heuristic.
    pub fn needs_resolution(&self) -> bool {
        match self {
            KernelSpec::Gaussian { bandwidth } => *bandwidth == Bandwidth::Median,
            KernelSpec::TensorProduct { left, right, .. } => {
                left.needs_resolution() || right.needs_resolution()
            }
            _ => false,
        }
    }

    /// Replaces every median bandwidth with the heuristic value on `points`.
    pub fn resolve(&self, points: &[Point]) -> Result<KernelSpec> {
        match self {
            KernelSpec::Gaussian { bandwidth: Bandwidth::Median } => {
                Ok(KernelSpec::gaussian(median_heuristic_bandwidth(points)?))
            }
            KernelSpec::TensorProduct { left, right, left_dim } if self.needs_resolution() => {
                let (ls, rs): (Vec<Point>, Vec<Point>) = points
                    .iter()
                    .map(|p| split_point(p, *left_dim))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                Ok(KernelSpec::tensor(left.resolve(&ls)?, right.resolve(&rs)?, *left_dim))
            }
            other => Ok(other.clone()),
        }
    }

    /// True for kernels with `k(x, x) = 1` everywhere.
    pub fn is_normalized(&self) -> bool {
        match self {
            KernelSpec::Gaussian { .. } | KernelSpec::KroneckerDelta => true,
            KernelSpec::TensorProduct { left, right, .. } => left.is_normalized() && right.is_normalized(),
            _ => false,
        }
    }

    pub fn eval(&self, x: &Point, x2: &Point) -> Result<f64> {
        eval(self, x, x2)
    }

    /// Evaluation without dimension checks. Callers validate once per batch.
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Gaussian { bandwidth } => {
                let h = match bandwidth {
                    Bandwidth::Fixed(h) => *h,
                    Bandwidth::Median => unreachable!("bandwidth resolved before evaluation"),
                };
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-0.5 * h * d2).exp()
            }
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, offset } => (dot(a, b) + offset).powi(*degree as i32),
            KernelSpec::KroneckerDelta => {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
            KernelSpec::TensorProduct { left, right, left_dim } => {
                let (al, ar) = a.split_at(*left_dim);
                let (bl, br) = b.split_at(*left_dim);
                left.eval_unchecked(al, bl) * right.eval_unchecked(ar, br)
            }
        }
    }

    fn check_ready(&self) -> Result<()> {
        self.validate()?;
        if self.needs_resolution() {
            return Err(CmmdError::invalid(
                "median bandwidth must be resolved against data before evaluation",
            ));
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if let KernelSpec::TensorProduct { left_dim, .. } = self {
            if dim <= *left_dim {
                return Err(CmmdError::invalid(format!(
                    "tensor product with left_dim {left_dim} needs points of dimension > {left_dim}, got {dim}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { bandwidth: Bandwidth::Fixed(h) } => write!(f, "gaussian:{h}"),
            KernelSpec::Gaussian { bandwidth: Bandwidth::Median } => write!(f, "gaussian:median"),
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "polynomial:{degree}:{offset}"),
            KernelSpec::KroneckerDelta => write!(f, "delta"),
            KernelSpec::TensorProduct { left, right, left_dim } => {
                write!(f, "tensor({left},{right},{left_dim})")
            }
        }
    }
}

/// Parses the short command-line forms `gaussian`, `gaussian:<h>`,
/// `gaussian:median`, `linear`, `polynomial:<degree>[:<offset>]` (alias
/// `poly`) and `delta`. A missing Gaussian bandwidth means `median`; a
/// missing polynomial offset means 1.
impl FromStr for KernelSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let spec = match (name.as_str(), args.as_slice()) {
            ("gaussian" | "rbf", []) => KernelSpec::gaussian_median(),
            ("gaussian" | "rbf", [bw]) => KernelSpec::Gaussian { bandwidth: bw.parse()? },
            ("linear", []) => KernelSpec::Linear,
            ("polynomial" | "poly", [deg]) => KernelSpec::Polynomial {
                degree: deg.parse().map_err(|_| format!("bad polynomial degree {deg:?}"))?,
                offset: 1.0,
            },
            ("polynomial" | "poly", [deg, off]) => KernelSpec::Polynomial {
                degree: deg.parse().map_err(|_| format!("bad polynomial degree {deg:?}"))?,
                offset: off.parse().map_err(|_| format!("bad polynomial offset {off:?}"))?,
            },
            ("delta" | "kronecker_delta", []) => KernelSpec::KroneckerDelta,
            _ => return Err(format!("unrecognised kernel {s:?}")),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn split_point(p: &Point, left_dim: usize) -> Result<(Point, Point)> {
    if p.dim() <= left_dim {
        return Err(CmmdError::invalid(format!(
            "point of dimension {} cannot be split at {left_dim}",
            p.dim()
        )));
    }
    let (l, r) = p.coords().split_at(left_dim);
    Ok((Point(l.to_vec()), Point(r.to_vec())))
}

/// Evaluates `k(x, x2)`.
pub fn eval(spec: &KernelSpec, x: &Point, x2: &Point) -> Result<f64> {
    spec.check_ready()?;
    if x.dim() != x2.dim() {
        return Err(CmmdError::DimensionMismatch { expected: x.dim(), got: x2.dim() });
    }
    spec.check_dim(x.dim())?;
    Ok(spec.eval_unchecked(x, x2))
}

fn common_dim(rows: &[Point], cols: &[Point]) -> Result<usize> {
    let first = rows
        .first()
        .or_else(|| cols.first())
        .ok_or_else(|| CmmdError::invalid("gram matrix needs at least one point"))?;
    let d = first.dim();
    for p in rows.iter().chain(cols) {
        if p.dim() != d {
            return Err(CmmdError::DimensionMismatch { expected: d, got: p.dim() });
        }
    }
    Ok(d)
}

/// Gram matrix with entry `(i, j) = k(rows[i], cols[j])`.
///
/// Large matrices are filled in parallel; every entry is computed
/// independently, so the result is bit-identical to a sequential fill.
pub fn gram(spec: &KernelSpec, rows: &[Point], cols: &[Point]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || cols.is_empty() {
        return Err(CmmdError::invalid("gram matrix needs non-empty point lists"));
    }
    spec.check_ready()?;
    let d = common_dim(rows, cols)?;
    spec.check_dim(d)?;
    let (nr, nc) = (rows.len(), cols.len());
    let column = |j: usize| rows.iter().map(move |r| spec.eval_unchecked(r, &cols[j]));
    let data: Vec<f64> = if nr * nc >= PARALLEL_GRAM_ENTRIES {
        (0..nc).into_par_iter().flat_map_iter(column).collect()
    } else {
        (0..nc).flat_map(column).collect()
    };
    Ok(DMatrix::from_vec(nr, nc, data))
}

/// `1 / median{|x_i - x_j|^2 : i < j}`, so that a Gaussian kernel evaluated
/// at the median distance equals `exp(-1/2)`. An even number of pairs
/// averages the two central values.
pub fn median_heuristic_bandwidth(points: &[Point]) -> Result<f64> {
    if points.len() < 2 {
        return Err(CmmdError::invalid("median heuristic needs at least two points"));
    }
    common_dim(points, &[])?;
    let n = points.len();
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d2.push(
                points[i]
                    .iter()
                    .zip(points[j].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
    }
    let med = median_in_place(&mut d2);
    if med <= 0.0 {
        return Err(CmmdError::DegenerateData(
            "median pairwise squared distance is zero".into(),
        ));
    }
    Ok(1.0 / med)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}
