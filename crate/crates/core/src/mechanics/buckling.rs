use serde::{Deserialize, Serialize};

use super::MechanicsError;
use crate::linalg::{least_squares, solve_dense};
use crate::scalar::Real;

/// Maximum transverse force a deployed section carries before it buckles.
///
/// The `offset` form treats the buckling moment as constant about a pivot set
/// back by `length_offset`: `F = M / (L - L0)`. The `additive` form is the
/// alternative reading `F = M / L + F0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum BucklingModel<T> {
    Offset { moment: T, length_offset: T },
    Additive { moment: T, force_offset: T },
}

impl<T: Real> Default for BucklingModel<T> {
    /// `F(200 mm) = 4.97 N` with zero offset.
    fn default() -> Self {
        BucklingModel::Offset { moment: T::lit(994.0), length_offset: T::zero() }
    }
}

impl<T: Real> BucklingModel<T> {
    pub fn offset(moment: T, length_offset: T) -> Self {
        BucklingModel::Offset { moment, length_offset }
    }

    pub fn moment(&self) -> T {
        match *self {
            BucklingModel::Offset { moment, .. } | BucklingModel::Additive { moment, .. } => moment,
        }
    }

    /// Shortest length at which the model may be evaluated.
    pub fn min_length(&self) -> T {
        match *self {
            BucklingModel::Offset { length_offset, .. } => length_offset + T::one(),
            BucklingModel::Additive { .. } => T::one(),
        }
    }

    pub fn validate(&self) -> Result<(), MechanicsError> {
        let m = self.moment();
        if !(m > T::zero() && m.is_finite()) {
            return Err(MechanicsError::InvalidModel("buckling moment must be > 0".into()));
        }
        Ok(())
    }

    pub fn force(&self, length: T) -> Result<T, MechanicsError> {
        if !(length >= self.min_length()) {
            let offset = match *self {
                BucklingModel::Offset { length_offset, .. } => length_offset,
                BucklingModel::Additive { .. } => T::zero(),
            };
            return Err(MechanicsError::BelowOffset {
                length: length.to_f64_lossy(),
                offset: offset.to_f64_lossy(),
            });
        }
        Ok(match *self {
            BucklingModel::Offset { moment, length_offset } => moment / (length - length_offset),
            BucklingModel::Additive { moment, force_offset } => moment / length + force_offset,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucklingFit<T> {
    pub model: BucklingModel<T>,
    /// Root-mean-square force residual (N).
    pub rms: T,
}

fn rms_of<T: Real>(model: &BucklingModel<T>, samples: &[(T, T)]) -> T {
    let n = T::lit(samples.len() as f64);
    let ss = samples.iter().fold(T::zero(), |acc, &(l, f)| match model.force(l) {
        Ok(p) => acc + (f - p) * (f - p),
        Err(_) => T::infinity(),
    });
    (ss / n).sqrt()
}

/// Least-squares fit of a buckling curve to `(length mm, force N)` samples.
///
/// The offset form is linearised as `F L = M + L0 F`, then refined by
/// Gauss-Newton on the force residuals. The additive form is linear in `1/L`.
pub fn fit_buckling<T: Real>(
    samples: &[(T, T)],
    additive: bool,
) -> Result<BucklingFit<T>, MechanicsError> {
    if samples.len() < 3 {
        return Err(MechanicsError::DegenerateData(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    let mut lengths: Vec<T> = samples.iter().map(|s| s.0).collect();
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    lengths.dedup();
    if lengths.len() < 3 {
        return Err(MechanicsError::DegenerateData("need at least 3 distinct lengths".into()));
    }
    if samples.iter().any(|&(l, f)| !(l > T::zero() && f.is_finite())) {
        return Err(MechanicsError::DegenerateData("lengths must be positive and forces finite".into()));
    }

    if additive {
        let rows: Vec<Vec<T>> = samples.iter().map(|&(l, _)| vec![T::one() / l, T::one()]).collect();
        let y: Vec<T> = samples.iter().map(|s| s.1).collect();
        let p = least_squares(&rows, &y)
            .ok_or_else(|| MechanicsError::DegenerateData("collinear samples".into()))?;
        let model = BucklingModel::Additive { moment: p[0], force_offset: p[1] };
        model.validate().map_err(|_| MechanicsError::DegenerateData("fitted moment is not positive".into()))?;
        return Ok(BucklingFit { model, rms: rms_of(&model, samples) });
    }

    let rows: Vec<Vec<T>> = samples.iter().map(|&(_, f)| vec![T::one(), f]).collect();
    let y: Vec<T> = samples.iter().map(|&(l, f)| l * f).collect();
    let p = least_squares(&rows, &y)
        .ok_or_else(|| MechanicsError::DegenerateData("forces do not vary with length".into()))?;
    let (mut m, mut l0) = (p[0], p[1]);
    let min_len = lengths[0];
    let feasible = |l0: T| l0 < min_len - T::one();
    if !feasible(l0) || !(m > T::zero()) {
        return Err(MechanicsError::DegenerateData("linearised fit left the feasible region".into()));
    }
    let mut best = rms_of(&BucklingModel::offset(m, l0), samples);
    for _ in 0..50 {
        let mut jtj = vec![vec![T::zero(); 2]; 2];
        let mut jtr = vec![T::zero(); 2];
        for &(l, f) in samples {
            let e = l - l0;
            let r = f - m / e;
            let j = [T::one() / e, m / (e * e)];
            for i in 0..2 {
                jtr[i] = jtr[i] + j[i] * r;
                for k in 0..2 {
                    jtj[i][k] = jtj[i][k] + j[i] * j[k];
                }
            }
        }
        let step = match solve_dense(jtj, jtr) {
            Some(s) => s,
            None => break,
        };
        let mut lambda = T::one();
        let mut improved = false;
        for _ in 0..30 {
            let (nm, nl0) = (m + step[0] * lambda, l0 + step[1] * lambda);
            if nm > T::zero() && feasible(nl0) {
                let rms = rms_of(&BucklingModel::offset(nm, nl0), samples);
                if rms < best {
                    m = nm;
                    l0 = nl0;
                    best = rms;
                    improved = true;
                    break;
                }
            }
            lambda = lambda * T::lit(0.5);
        }
        if !improved {
            break;
        }
    }
    Ok(BucklingFit { model: BucklingModel::offset(m, l0), rms: best })
}
