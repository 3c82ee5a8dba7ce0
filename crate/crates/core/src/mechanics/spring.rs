use serde::{Deserialize, Serialize};

use super::MechanicsError;
use crate::linalg::least_squares;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpringBranch {
    Loading,
    Unloading,
}

/// Force-displacement law of the rolling bend under compression.
///
/// Coefficients start at the linear term, so `f(0) = 0`:
/// `f(d) = c[0] d + c[1] d^2 + ...` (N, mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendSpring<T> {
    pub loading: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unloading: Option<Vec<T>>,
    pub max_displacement: T,
}

impl<T: Real> Default for BendSpring<T> {
    fn default() -> Self {
        Self {
            loading: vec![T::lit(0.05), T::zero(), T::lit(0.002)],
            unloading: None,
            max_displacement: T::lit(15.0),
        }
    }
}

const AUDIT_POINTS: usize = 1000;

fn poly<T: Real>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| (acc + c) * x)
}

fn poly_slope<T: Real>(coeffs: &[T], x: T) -> T {
    coeffs
        .iter()
        .enumerate()
        .rev()
        .fold(T::zero(), |acc, (i, &c)| acc * x + c * T::lit((i + 1) as f64))
}

fn strictly_increasing<T: Real>(coeffs: &[T], max: T) -> bool {
    let mut prev = T::zero();
    for k in 1..=AUDIT_POINTS {
        let x = max * T::lit(k as f64 / AUDIT_POINTS as f64);
        let v = poly(coeffs, x);
        if !(v > prev) {
            return false;
        }
        prev = v;
    }
    poly_slope(coeffs, T::zero()) >= T::zero()
}

impl<T: Real> BendSpring<T> {
    pub fn validate(&self) -> Result<(), MechanicsError> {
        if self.loading.is_empty() {
            return Err(MechanicsError::InvalidModel("spring needs at least one coefficient".into()));
        }
        if !(self.max_displacement > T::zero()) {
            return Err(MechanicsError::InvalidModel("spring max displacement must be > 0".into()));
        }
        if !strictly_increasing(&self.loading, self.max_displacement) {
            return Err(MechanicsError::InvalidModel("loading curve is not strictly increasing".into()));
        }
        if let Some(unloading) = &self.unloading {
            if !strictly_increasing(unloading, self.max_displacement) {
                return Err(MechanicsError::InvalidModel("unloading curve is not strictly increasing".into()));
            }
            for k in 1..AUDIT_POINTS {
                let x = self.max_displacement * T::lit(k as f64 / AUDIT_POINTS as f64);
                if poly(unloading, x) > poly(&self.loading, x) {
                    return Err(MechanicsError::InvalidModel("unloading curve exceeds loading curve".into()));
                }
            }
        }
        Ok(())
    }

    fn check_range(&self, displacement: T) -> Result<(), MechanicsError> {
        let slack = self.max_displacement * T::lit(1e-12);
        if displacement < T::zero() || displacement > self.max_displacement + slack || displacement.is_nan() {
            return Err(MechanicsError::OutOfRange {
                value: displacement.to_f64_lossy(),
                min: 0.0,
                max: self.max_displacement.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Force at `displacement` on the requested branch. Without an unloading
    /// curve both branches use the loading curve.
    pub fn force(&self, displacement: T, branch: SpringBranch) -> Result<T, MechanicsError> {
        self.check_range(displacement)?;
        let coeffs = match (branch, &self.unloading) {
            (SpringBranch::Unloading, Some(u)) => u.as_slice(),
            _ => self.loading.as_slice(),
        };
        Ok(poly(coeffs, displacement))
    }

    pub fn loading_force(&self, displacement: T) -> Result<T, MechanicsError> {
        self.force(displacement, SpringBranch::Loading)
    }

    pub fn max_force(&self) -> T {
        poly(&self.loading, self.max_displacement)
    }

    /// Preimage of `force` on the loading branch, by bisection.
    pub fn displacement_for_force(&self, force: T) -> Result<T, MechanicsError> {
        let fmax = self.max_force();
        if force < T::zero() || force > fmax || force.is_nan() {
            return Err(MechanicsError::OutOfRange {
                value: force.to_f64_lossy(),
                min: 0.0,
                max: fmax.to_f64_lossy(),
            });
        }
        let tol = T::lit(1e-10);
        let (mut lo, mut hi) = (T::zero(), self.max_displacement);
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            if mid <= lo || mid >= hi || hi - lo < tol {
                break;
            }
            if poly(&self.loading, mid) < force {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo + hi) * T::lit(0.5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringFit<T> {
    pub spring: BendSpring<T>,
    pub rms: T,
    /// False when the fitted loading curve fails the monotonicity audit.
    pub monotone: bool,
}

/// Least-squares polynomial (zero constant term) through `(displacement, force)` samples.
pub fn fit_spring<T: Real>(samples: &[(T, T)], degree: usize) -> Result<SpringFit<T>, MechanicsError> {
    if degree == 0 {
        return Err(MechanicsError::DegenerateData("degree must be >= 1".into()));
    }
    if samples.len() < degree {
        return Err(MechanicsError::DegenerateData(format!(
            "degree {degree} needs at least {degree} samples, got {}",
            samples.len()
        )));
    }
    let rows: Vec<Vec<T>> = samples
        .iter()
        .map(|&(d, _)| (1..=degree).map(|p| d.powi(p as i32)).collect())
        .collect();
    let y: Vec<T> = samples.iter().map(|s| s.1).collect();
    let coeffs = least_squares(&rows, &y)
        .ok_or_else(|| MechanicsError::DegenerateData("singular normal equations".into()))?;
    let max_displacement = samples.iter().fold(T::zero(), |m, s| m.max(s.0));
    if !(max_displacement > T::zero()) {
        return Err(MechanicsError::DegenerateData("no positive displacement".into()));
    }
    let n = T::lit(samples.len() as f64);
    let ss = samples.iter().fold(T::zero(), |acc, &(d, f)| {
        let e = f - poly(&coeffs, d);
        acc + e * e
    });
    let monotone = strictly_increasing(&coeffs, max_displacement);
    Ok(SpringFit {
        spring: BendSpring { loading: coeffs, unloading: None, max_displacement },
        rms: (ss / n).sqrt(),
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_origin() {
        let s = BendSpring::<f64>::default();
        assert_eq!(s.loading_force(0.0).unwrap(), 0.0);
    }

    #[test]
    fn two_mm() {
        let s = BendSpring::<f64>::default();
        let f = s.loading_force(2.0).unwrap();
        assert!((f - 0.116).abs() < 1e-12);
    }

    #[test]
    fn out_of_range() {
        let s = BendSpring::<f64>::default();
        assert!(s.loading_force(-0.1).is_err());
        assert!(s.loading_force(15.1).is_err());
        assert!(s.displacement_for_force(s.max_force() * 1.01).is_err());
    }

    #[test]
    fn bisection_round_trip() {
        let s = BendSpring::<f64>::default();
        for &d in &[0.0, 0.37, 3.41, 7.0, 14.999] {
            let f = s.loading_force(d).unwrap();
            let back = s.displacement_for_force(f).unwrap();
            assert!((back - d).abs() < 1e-9, "{d} -> {back}");
        }
    }

    #[test]
    fn hysteresis_branch() {
        let s = BendSpring {
            loading: vec![0.05, 0.0, 0.002],
            unloading: Some(vec![0.04, 0.0, 0.0018]),
            max_displacement: 15.0,
        };
        s.validate().unwrap();
        assert!(s.force(5.0, SpringBranch::Unloading).unwrap() < s.force(5.0, SpringBranch::Loading).unwrap());
        let bad = BendSpring { unloading: Some(vec![0.06, 0.0, 0.002]), ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fit_recovers_cubic() {
        let truth = BendSpring::<f64>::default();
        let samples: Vec<(f64, f64)> =
            (1..=20).map(|k| (k as f64 * 0.7, truth.loading_force(k as f64 * 0.7).unwrap())).collect();
        let fit = fit_spring(&samples, 3).unwrap();
        assert!(fit.monotone);
        assert!((fit.spring.loading[0] - 0.05).abs() < 1e-9);
        assert!(fit.spring.loading[1].abs() < 1e-9);
        assert!((fit.spring.loading[2] - 0.002).abs() < 1e-10);
    }

    #[test]
    fn non_monotone_fit_is_flagged() {
        let samples = vec![(1.0, 1.0), (2.0, 1.5), (3.0, 0.8), (4.0, 0.2)];
        let fit = fit_spring(&samples, 2).unwrap();
        assert!(!fit.monotone);
    }
}
