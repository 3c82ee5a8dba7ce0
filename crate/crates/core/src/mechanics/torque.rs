use serde::{Deserialize, Serialize};

use super::MechanicsError;
use crate::scalar::Real;

/// Internal bending torque of the tape versus bend angle, interpolated with a
/// monotone piecewise cubic (Fritsch-Carlson slopes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueSpline<T> {
    /// Bend angles (rad), strictly increasing.
    pub angles: Vec<T>,
    /// Torques (N mm) at `angles`.
    pub torques: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueSample<T> {
    pub torque: T,
    /// The query fell outside the knot range and was clamped.
    pub extrapolated: bool,
}

impl<T: Real> TorqueSpline<T> {
    /// Zero torque at every angle.
    pub fn zero() -> Self {
        Self { angles: vec![T::zero(), T::TAU()], torques: vec![T::zero(), T::zero()] }
    }

    pub fn new(angles: Vec<T>, torques: Vec<T>) -> Result<Self, MechanicsError> {
        let s = Self { angles, torques };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), MechanicsError> {
        if self.angles.is_empty() || self.angles.len() != self.torques.len() {
            return Err(MechanicsError::InvalidModel("torque spline needs matching, non-empty knots".into()));
        }
        if self.angles.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MechanicsError::InvalidModel("torque knots must be strictly increasing".into()));
        }
        if self.torques.iter().chain(&self.angles).any(|v| !v.is_finite()) {
            return Err(MechanicsError::InvalidModel("torque knots must be finite".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.torques.iter().all(|t| *t == T::zero())
    }

    fn slopes(&self) -> Vec<T> {
        let n = self.angles.len();
        let secant: Vec<T> = (0..n.saturating_sub(1))
            .map(|i| (self.torques[i + 1] - self.torques[i]) / (self.angles[i + 1] - self.angles[i]))
            .collect();
        let mut m = vec![T::zero(); n];
        if n < 2 {
            return m;
        }
        m[0] = secant[0];
        m[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            m[i] = if secant[i - 1] * secant[i] <= T::zero() {
                T::zero()
            } else {
                (secant[i - 1] + secant[i]) * T::lit(0.5)
            };
        }
        for i in 0..n - 1 {
            if secant[i] == T::zero() {
                m[i] = T::zero();
                m[i + 1] = T::zero();
                continue;
            }
            let alpha = m[i] / secant[i];
            let beta = m[i + 1] / secant[i];
            let s = alpha * alpha + beta * beta;
            if s > T::lit(9.0) {
                let tau = T::lit(3.0) / s.sqrt();
                m[i] = tau * alpha * secant[i];
                m[i + 1] = tau * beta * secant[i];
            }
        }
        m
    }

    pub fn evaluate(&self, angle: T) -> TorqueSample<T> {
        let n = self.angles.len();
        let first = self.angles[0];
        let last = self.angles[n - 1];
        if n == 1 {
            return TorqueSample { torque: self.torques[0], extrapolated: angle != first };
        }
        let extrapolated = angle < first || angle > last;
        let x = angle.max(first).min(last);
        let i = match self.angles.iter().position(|&a| a > x) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => n - 2,
        };
        let (x0, x1) = (self.angles[i], self.angles[i + 1]);
        let (y0, y1) = (self.torques[i], self.torques[i + 1]);
        let h = x1 - x0;
        let m = self.slopes();
        let t = (x - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        TorqueSample {
            torque: h00 * y0 + h10 * h * m[i] + h01 * y1 + h11 * h * m[i + 1],
            extrapolated,
        }
    }
}

/// Builds a spline from `(angle, torque)` measurements; repeated angles are averaged.
pub fn fit_torque<T: Real>(samples: &[(T, T)]) -> Result<TorqueSpline<T>, MechanicsError> {
    if samples.len() < 2 {
        return Err(MechanicsError::DegenerateData("need at least 2 torque samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut angles: Vec<T> = Vec::new();
    let mut torques: Vec<T> = Vec::new();
    let mut counts: Vec<T> = Vec::new();
    for (a, t) in sorted {
        if angles.last() == Some(&a) {
            let k = torques.len() - 1;
            torques[k] = torques[k] + t;
            counts[k] = counts[k] + T::one();
        } else {
            angles.push(a);
            torques.push(t);
            counts.push(T::one());
        }
    }
    for (t, c) in torques.iter_mut().zip(&counts) {
        *t = *t / *c;
    }
    if angles.len() < 2 {
        return Err(MechanicsError::DegenerateData("need at least 2 distinct angles".into()));
    }
    TorqueSpline::new(angles, torques)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots_and_clamps() {
        let s: TorqueSpline<f64> = TorqueSpline::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 10.0, 15.0, 16.0]).unwrap();
        for (a, t) in s.angles.iter().zip(&s.torques) {
            assert!((s.evaluate(*a).torque - t).abs() < 1e-12);
        }
        let below = s.evaluate(-1.0);
        assert!(below.extrapolated);
        assert_eq!(below.torque, 0.0);
        assert!(s.evaluate(5.0).extrapolated);
        assert!(!s.evaluate(1.5).extrapolated);
    }

    #[test]
    fn monotone_data_stays_monotone() {
        let s = TorqueSpline::new(vec![0.0, 0.5, 1.0, 2.0, 3.0], vec![0.0, 40.0, 42.0, 43.0, 90.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=3000 {
            let v = s.evaluate(k as f64 * 1e-3).torque;
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn rejects_unsorted() {
        assert!(TorqueSpline::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn fit_averages_duplicates() {
        let s = fit_torque(&[(1.0, 4.0), (0.0, 0.0), (1.0, 6.0)]).unwrap();
        assert_eq!(s.angles, vec![0.0, 1.0]);
        assert_eq!(s.torques, vec![0.0, 5.0]);
    }
}
