//! Group preference aggregation, generic over the scalar type.
//!
//! Inputs are sorted before summation so every result is exactly invariant
//! under reordering of the group, for floats as well as exact rationals.

use std::cmp::Ordering;
use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, Signed};

use crate::error::{Error, Result};

/// Scalar usable as a preference score.
pub trait Preference: Num + Signed + PartialOrd + Copy + FromPrimitive + Debug {}

impl<T: Num + Signed + PartialOrd + Copy + FromPrimitive + Debug> Preference for T {}

fn sorted<T: Preference>(prefs: &[T]) -> Vec<T> {
    let mut v = prefs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

fn count<T: Preference>(n: usize) -> T {
    T::from_usize(n).expect("group size representable")
}

fn half<T: Preference>() -> T {
    T::one() / (T::one() + T::one())
}

/// Average preference: `(1/|G|) Σ pref(u)`.
pub fn gpref<T: Preference>(prefs: &[T]) -> Result<T> {
    if prefs.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let total = sorted(prefs).into_iter().fold(T::zero(), |acc, p| acc + p);
    Ok(total / count(prefs.len()))
}

/// Pairwise disagreement: `2/(|G|(|G|-1)) Σ_{u<v} |pref(u) - pref(v)|`,
/// the mean absolute difference over unordered pairs.
pub fn dis<T: Preference>(prefs: &[T]) -> Result<T> {
    let n = prefs.len();
    if n < 2 {
        return Err(Error::GroupTooSmall);
    }
    let v = sorted(prefs);
    let mut total = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            total = total + (v[j] - v[i]).abs();
        }
    }
    let two = T::one() + T::one();
    Ok(two * total / (count::<T>(n) * count::<T>(n - 1)))
}

/// Share of members whose preference is at least one half.
pub fn plurality<T: Preference>(prefs: &[T]) -> Result<T> {
    if prefs.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let cutoff = half::<T>();
    let approving = prefs.iter().filter(|p| **p >= cutoff).count();
    Ok(count::<T>(approving) / count(prefs.len()))
}

/// The least satisfied member's preference.
pub fn least_misery<T: Preference>(prefs: &[T]) -> Result<T> {
    sorted(prefs).first().copied().ok_or(Error::EmptyGroup)
}

/// `Σ w·pref / Σ w` over `(weight, pref)` pairs. Zero total weight gives zero.
pub fn weighted_mean<T: Preference>(pairs: &[(T, T)]) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| {
        (a.1, a.0)
            .partial_cmp(&(b.1, b.0))
            .unwrap_or(Ordering::Equal)
    });
    let (num, den) = v
        .into_iter()
        .fold((T::zero(), T::zero()), |(n, d), (w, p)| (n + w * p, d + w));
    if den.is_zero() {
        return Ok(T::zero());
    }
    Ok(num / den)
}

/// Expert weighting: `w = 1/(1 + level)`, where level 0 is the most senior.
pub fn expert_weighted<T: Preference>(levels_and_prefs: &[(u32, T)]) -> Result<T> {
    let pairs: Vec<(T, T)> = levels_and_prefs
        .iter()
        .map(|&(level, p)| {
            let level = T::from_u32(level).expect("level representable");
            (T::one() / (T::one() + level), p)
        })
        .collect();
    weighted_mean(&pairs)
}

/// Quadratic voting: each member's preference weighted by the square root of
/// the credits they spend.
pub fn quadratic<T: Preference + Float>(credits_and_prefs: &[(u64, T)]) -> Result<T> {
    let pairs: Vec<(T, T)> = credits_and_prefs
        .iter()
        .map(|&(c, p)| (<T as Float>::sqrt(T::from_u64(c).expect("credits representable")), p))
        .collect();
    weighted_mean(&pairs)
}
