//! Three-sample process classification: was `z` generated by the law of `x`
//! or by the law of `y`?

use serde::Serialize;

use crate::distance::{compare_certified, dhat, CertifiedOrder, DistanceValue, WeightScheme};
use crate::error::Result;
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationOutcome {
    /// 1 when `z` is assigned to `x`'s law, 2 for `y`'s.
    pub label: u8,
    pub d_xz: DistanceValue,
    pub d_yz: DistanceValue,
    /// Whether the truncation bound alone certifies which distance is smaller.
    pub certified: bool,
}

/// Picks whichever of `x`, `y` is closer to `z` in d̂. Exact ties go to `x`
/// (label 1).
pub fn classify(x: &Sample, y: &Sample, z: &Sample, scheme: &WeightScheme) -> Result<ClassificationOutcome> {
    let d_xz = dhat(x, z, scheme)?;
    let d_yz = dhat(y, z, scheme)?;
    decide(d_xz, d_yz)
}

pub(crate) fn decide(d_xz: DistanceValue, d_yz: DistanceValue) -> Result<ClassificationOutcome> {
    let label = if d_xz.value <= d_yz.value { 1 } else { 2 };
    let certified = compare_certified(&d_xz, &d_yz)? != CertifiedOrder::Undecided;
    Ok(ClassificationOutcome {
        label,
        d_xz,
        d_yz,
        certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ProcessModel;

    #[test]
    fn z_equal_to_x() {
        let sc = WeightScheme::default();
        let x = ProcessModel::fair_coin().sample(300, 1).unwrap();
        let y = ProcessModel::bernoulli(0.8).unwrap().sample(300, 2).unwrap();
        let out = classify(&x, &y, &x, &sc).unwrap();
        assert_eq!(out.label, 1);
        assert_eq!(out.d_xz.value, 0.0);
        assert!(out.d_yz.value > 0.0);
    }

    #[test]
    fn swap_flips_label() {
        let sc = WeightScheme::new(2, 3).unwrap();
        let x = ProcessModel::symmetric_markov(0.8).unwrap().sample(400, 5).unwrap();
        let y = ProcessModel::symmetric_markov(0.2).unwrap().sample(400, 6).unwrap();
        let z = ProcessModel::symmetric_markov(0.8).unwrap().sample(400, 7).unwrap();
        let a = classify(&x, &y, &z, &sc).unwrap();
        let b = classify(&y, &x, &z, &sc).unwrap();
        assert_ne!(a.d_xz.value, a.d_yz.value);
        assert_eq!(a.label, 3 - b.label);
    }

    #[test]
    fn tie_goes_to_first() {
        let sc = WeightScheme::default();
        let x = Sample::from_slice(&[0.1, 0.2]).unwrap();
        let out = classify(&x, &x, &x, &sc).unwrap();
        assert_eq!(out.label, 1);
        assert!(!out.certified);
    }
}
