use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 71 diagnostic, form and rhythm statements of PTB-XL.
const PTBXL_STATEMENTS: [&str; 71] = [
    // diagnostic
    "NDT", "NST_", "DIG", "LNGQT", "NORM", "IMI", "ASMI", "LVH", "LAFB", "ISC_", "IRBBB", "1AVB",
    "IVCD", "ISCAL", "CRBBB", "CLBBB", "ILMI", "LAO/LAE", "AMI", "ALMI", "ISCIN", "INJAS", "LMI",
    "ISCIL", "LPFB", "ISCAS", "INJAL", "ISCLA", "RVH", "ANEUR", "RAO/RAE", "EL", "WPW", "ILBBB",
    "IPLMI", "ISCAN", "IPMI", "SEHYP", "INJIN", "INJLA", "PMI", "3AVB", "INJIL", "2AVB",
    // form
    "ABQRS", "PVC", "STD_", "VCLVH", "QWAVE", "LOWT", "NT_", "PAC", "LPR", "INVT", "LVOLT",
    "HVOLT", "TAB_", "STE_", "PRC(S)",
    // rhythm
    "SR", "AFIB", "STACH", "SARRH", "SBRAD", "PACE", "SVARR", "BIGU", "AFLT", "SVTAC", "PSVT",
    "TRIGU",
];

pub const N_STATEMENTS: usize = PTBXL_STATEMENTS.len();

/// Ordered statement codes. Position in `codes` is the label-vector index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl Serialize for LabelVocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.codes.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<String>::deserialize(d)?;
        Self::new(codes).map_err(serde::de::Error::custom)
    }
}

impl LabelVocabulary {
    /// Codes must be unique and nonempty.
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if c.is_empty() || index.insert(c.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate or empty statement code {c:?}")));
            }
        }
        Ok(Self { codes, index })
    }

    /// All 71 PTB-XL statements in lexicographic order.
    pub fn ptbxl() -> Self {
        let mut codes: Vec<String> = PTBXL_STATEMENTS.iter().map(|s| s.to_string()).collect();
        codes.sort();
        Self::new(codes).expect("static vocabulary is unique")
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn position(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, statements: &[S]) -> Result<LabelVector> {
        let mut v = vec![0.0; self.len()];
        for s in statements {
            let s = s.as_ref();
            let i = self
                .position(s)
                .ok_or_else(|| Error::UnknownStatement(s.to_string()))?;
            v[i] = 1.0;
        }
        Ok(LabelVector(v))
    }

    /// Codes whose entry is at least one half, in vocabulary order.
    pub fn decode(&self, labels: &LabelVector) -> Vec<String> {
        self.codes
            .iter()
            .zip(labels.values())
            .filter(|(_, &v)| v >= 0.5)
            .map(|(c, _)| c.clone())
            .collect()
    }
}

/// Condition vector over a vocabulary; entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector(Vec<f32>);

impl LabelVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::ConditionShape("label entries must lie in [0, 1]".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// `alpha * a + (1 - alpha) * b`.
    pub fn mix(a: &LabelVector, b: &LabelVector, alpha: f32) -> Result<Self> {
        if a.len() != b.len() || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::ConditionShape(format!(
                "cannot mix lengths {} and {} at alpha {alpha}",
                a.len(),
                b.len()
            )));
        }
        let v = a.0.iter().zip(&b.0).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        Ok(Self(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ptbxl_vocabulary_is_sorted_and_complete() {
        let v = LabelVocabulary::ptbxl();
        assert_eq!(v.len(), 71);
        assert!(v.codes().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(v.codes()[0], "1AVB");
    }

    #[test]
    fn encode_rejects_unknown() {
        let v = LabelVocabulary::ptbxl();
        assert!(matches!(v.encode(&["XYZ"]), Err(Error::UnknownStatement(_))));
    }

    #[test]
    fn mix_endpoints_are_exact() {
        let a = LabelVector::new(vec![1.0, 0.0, 1.0]).unwrap();
        let b = LabelVector::new(vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(LabelVector::mix(&a, &b, 1.0).unwrap(), a);
        assert_eq!(LabelVector::mix(&a, &b, 0.0).unwrap(), b);
    }
}
