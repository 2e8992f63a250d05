//! Shared numeric support: arbitrary-precision rationals, a small dense
//! linear solver that works for both exact and floating scalars, and a value
//! type that carries either an exact rational or a sampled estimate with its
//! standard error.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{Signed, ToPrimitive};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact conversion of a finite float to a rational (binary expansion).
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_float(x)
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().expect("rational within f64 range")
}

/// Parses `"p/q"` or a plain integer string.
pub fn rat_from_str(s: &str) -> Result<Rat, String> {
    s.trim()
        .parse::<Rat>()
        .map_err(|e| format!("cannot parse {s:?} as a rational: {e}"))
}

/// Gaussian elimination with partial pivoting on a dense system. Returns
/// `None` when a pivot column is exactly zero. Works for `f64` and for
/// exact rationals alike; callers in float mode must validate residuals
/// themselves since near-singular systems still "solve".
// Index loops: elimination reads row `col` while writing row `row`.
#[allow(clippy::needless_range_loop)]
pub(crate) fn solve_dense<T>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>>
where
    T: Clone + PartialOrd + Signed,
{
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("pivot magnitudes are comparable")
        })?;
        if a[pivot][col].is_zero() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].clone() / a[col][col].clone();
            for k in col..n {
                let delta = factor.clone() * a[col][k].clone();
                a[row][k] = a[row][k].clone() - delta;
            }
            let delta = factor * b[col].clone();
            b[row] = b[row].clone() - delta;
        }
    }
    let mut x = b;
    for col in (0..n).rev() {
        for k in col + 1..n {
            let delta = a[col][k].clone() * x[k].clone();
            x[col] = x[col].clone() - delta;
        }
        x[col] = x[col].clone() / a[col][col].clone();
    }
    Some(x)
}

/// A positive quantity known either exactly or through a sampled estimate.
///
/// Estimate arithmetic propagates standard errors by the first-order delta
/// method with independence assumed; good enough for the k-sigma equality
/// tests this crate runs, not for tight confidence intervals.
#[derive(Clone, Debug)]
pub enum Value {
    Exact(Rat),
    Estimate { mean: f64, se: f64 },
}

impl Value {
    pub fn one() -> Self {
        Value::Exact(Rat::from_integer(BigInt::from(1)))
    }

    pub fn from_int(n: i64) -> Self {
        Value::Exact(rat_int(n))
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Value::Exact(_))
    }

    pub fn mean_f64(&self) -> f64 {
        match self {
            Value::Exact(r) => rat_to_f64(r),
            Value::Estimate { mean, .. } => *mean,
        }
    }

    pub fn se_f64(&self) -> f64 {
        match self {
            Value::Exact(_) => 0.0,
            Value::Estimate { se, .. } => *se,
        }
    }

    pub fn as_exact(&self) -> Option<&Rat> {
        match self {
            Value::Exact(r) => Some(r),
            Value::Estimate { .. } => None,
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Value::Exact(r) => r.is_positive(),
            Value::Estimate { mean, .. } => *mean > 0.0,
        }
    }

    fn binop(
        &self,
        other: &Value,
        exact: impl Fn(&Rat, &Rat) -> Rat,
        mean: impl Fn(f64, f64) -> f64,
        se: impl Fn(f64, f64, f64, f64) -> f64,
    ) -> Value {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(exact(a, b)),
            _ => {
                let (ma, sa) = (self.mean_f64(), self.se_f64());
                let (mb, sb) = (other.mean_f64(), other.se_f64());
                Value::Estimate {
                    mean: mean(ma, mb),
                    se: se(ma, sa, mb, sb),
                }
            }
        }
    }

    pub fn add(&self, other: &Value) -> Value {
        self.binop(
            other,
            |a, b| a + b,
            |a, b| a + b,
            |_, sa, _, sb| sa.hypot(sb),
        )
    }

    pub fn sub(&self, other: &Value) -> Value {
        self.binop(
            other,
            |a, b| a - b,
            |a, b| a - b,
            |_, sa, _, sb| sa.hypot(sb),
        )
    }

    pub fn mul(&self, other: &Value) -> Value {
        self.binop(
            other,
            |a, b| a * b,
            |a, b| a * b,
            |ma, sa, mb, sb| (sa * mb).hypot(sb * ma),
        )
    }

    pub fn div(&self, other: &Value) -> Value {
        self.binop(
            other,
            |a, b| a / b,
            |a, b| a / b,
            |ma, sa, mb, sb| {
                let mean = ma / mb;
                // relative variances add for a quotient
                (mean.abs()) * ((sa / ma).hypot(sb / mb))
            },
        )
    }

    pub fn add_int(&self, k: i64) -> Value {
        self.add(&Value::from_int(k))
    }

    /// Rising factorial: value * (value+1) * ... * (value+n-1); 1 when n = 0.
    pub fn rising(&self, n: u32) -> Value {
        let mut acc = Value::one();
        for i in 0..n {
            acc = acc.mul(&self.add_int(i as i64));
        }
        acc
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        match self {
            Value::Exact(r) => serde_json::Value::String(r.to_string()),
            Value::Estimate { mean, se } => serde_json::json!({ "mean": mean, "se": se }),
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Exact(r) => write!(f, "{r}"),
            Value::Estimate { mean, se } => write!(f, "{mean} within {se}"),
        }
    }
}

/// How two values are declared equal: bit-exact rational equality, or a
/// z-test at `k` combined standard errors for sampled estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EqualityPolicy {
    Exact,
    KSigma(f64),
}

impl EqualityPolicy {
    pub fn equal(&self, a: &Value, b: &Value) -> bool {
        match (self, a.as_exact(), b.as_exact()) {
            (_, Some(x), Some(y)) => x == y,
            (EqualityPolicy::Exact, _, _) => false,
            (EqualityPolicy::KSigma(k), _, _) => {
                let spread = a.se_f64().hypot(b.se_f64());
                let diff = (a.mean_f64() - b.mean_f64()).abs();
                if spread == 0.0 {
                    diff == 0.0
                } else {
                    diff <= k * spread
                }
            }
        }
    }
}

/// Relative gap |a-b| / max(|a|, |b|), 0 when both are 0. Report metric only.
pub fn relative_diff(a: &Value, b: &Value) -> f64 {
    let (x, y) = (a.mean_f64(), b.mean_f64());
    let scale = x.abs().max(y.abs());
    if scale == 0.0 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}
