//! Limb-lead algebra. Leads I and aVF determine the other four limb leads:
//!
//! ```text
//! II  = aVF + I/2        III = aVF - I/2
//! aVR = -(3I/4 + aVF/2)  aVL = 3I/4 - aVF/2
//! ```
//!
//! which satisfy `III = II - I`, `aVL = (I - III)/2`, `aVF = (II + III)/2`
//! and `-aVR = (I + II)/2`.

use sssd_nn::Float;

use crate::error::{Error, Result};

/// Eight generated leads `[I, aVF, V1..V6]`, lead-major `[8 × len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EightLeadFrame<T> {
    signal: Vec<T>,
    len: usize,
}

impl<T: Float> EightLeadFrame<T> {
    pub fn new(signal: Vec<T>) -> Result<Self> {
        if signal.is_empty() || signal.len() % 8 != 0 {
            return Err(Error::FrameShape(format!("{} samples over 8 leads", signal.len())));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::FrameShape("non-finite sample".into()));
        }
        let len = signal.len() / 8;
        Ok(Self { signal, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lead(&self, i: usize) -> &[T] {
        &self.signal[i * self.len..(i + 1) * self.len]
    }

    pub fn into_inner(self) -> Vec<T> {
        self.signal
    }
}

/// Lead-major `[12 × len]` output in the order
/// `[I, II, III, aVR, aVL, aVF, V1..V6]`.
pub fn reconstruct_12_leads<T: Float>(frame: &EightLeadFrame<T>) -> Vec<T> {
    let len = frame.len();
    let (i, avf) = (frame.lead(0), frame.lead(1));
    let half = T::of(0.5);
    let three_q = T::of(0.75);
    let mut out = Vec::with_capacity(12 * len);
    out.extend_from_slice(i);
    out.extend(i.iter().zip(avf).map(|(&a, &f)| f + half * a));
    out.extend(i.iter().zip(avf).map(|(&a, &f)| f - half * a));
    out.extend(i.iter().zip(avf).map(|(&a, &f)| -(three_q * a + half * f)));
    out.extend(i.iter().zip(avf).map(|(&a, &f)| three_q * a - half * f));
    out.extend_from_slice(avf);
    out.extend_from_slice(&frame.signal[2 * len..]);
    out
}

/// Inverse of [`reconstruct_12_leads`] on consistent records.
pub fn project_to_8<T: Float>(leads12: &[T]) -> Result<EightLeadFrame<T>> {
    if leads12.is_empty() || leads12.len() % 12 != 0 {
        return Err(Error::FrameShape(format!("{} samples over 12 leads", leads12.len())));
    }
    let len = leads12.len() / 12;
    let mut out = Vec::with_capacity(8 * len);
    out.extend_from_slice(&leads12[..len]);
    out.extend_from_slice(&leads12[5 * len..]);
    EightLeadFrame::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadConsistency {
    pub consistent: bool,
    /// Largest absolute residual over all four identities, computed in f64.
    pub max_residual: f64,
}

/// Evaluates the four limb-lead identities on a lead-major 12-lead signal.
pub fn check_lead_consistency<T: Float>(leads12: &[T], tol: f64) -> Result<LeadConsistency> {
    if leads12.is_empty() || leads12.len() % 12 != 0 {
        return Err(Error::FrameShape(format!("{} samples over 12 leads", leads12.len())));
    }
    let len = leads12.len() / 12;
    let lead = |k: usize| &leads12[k * len..(k + 1) * len];
    let (i, ii, iii, avr, avl, avf) = (lead(0), lead(1), lead(2), lead(3), lead(4), lead(5));
    let mut worst = 0.0f64;
    for t in 0..len {
        let [i, ii, iii, avr, avl, avf] =
            [i[t], ii[t], iii[t], avr[t], avl[t], avf[t]].map(|v| v.as_f64());
        let r = [
            iii - (ii - i),
            avl - (i - iii) / 2.0,
            avf - (ii + iii) / 2.0,
            -avr - (i + ii) / 2.0,
        ];
        for v in r {
            worst = worst.max(v.abs());
        }
    }
    Ok(LeadConsistency {
        consistent: worst <= tol,
        max_residual: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_frame(i: f64, avf: f64) -> EightLeadFrame<f64> {
        let mut s = vec![i; 4];
        s.extend(vec![avf; 4]);
        s.extend(vec![0.0; 24]);
        EightLeadFrame::new(s).unwrap()
    }

    #[test]
    fn unit_lead_one() {
        let out = reconstruct_12_leads(&constant_frame(1.0, 0.0));
        let at = |k: usize| out[k * 4];
        assert_eq!([at(1), at(2), at(3), at(4)], [0.5, -0.5, -0.75, 0.75]);
    }

    #[test]
    fn lead_one_two_avf_one() {
        let out = reconstruct_12_leads(&constant_frame(2.0, 1.0));
        let at = |k: usize| out[k * 4];
        assert_eq!([at(1), at(2), at(3), at(4)], [2.0, 0.0, -2.0, 1.0]);
    }

    #[test]
    fn negated_avr_is_flagged() {
        let mut out = reconstruct_12_leads(&constant_frame(1.0, 0.3));
        for v in &mut out[12..16] {
            *v = -*v;
        }
        let c = check_lead_consistency(&out, 1e-6).unwrap();
        assert!(!c.consistent);
        // Residual of the aVR identity is |I + II| when aVR is negated.
        assert!((c.max_residual - (1.0f64 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(EightLeadFrame::<f32>::new(vec![0.0; 7]).is_err());
        assert!(check_lead_consistency(&[0.0f32; 13], 1e-6).is_err());
    }
}
