//! Serde adapters for fields that are legitimately non-finite.

/// JSON has no NaN/inf literal, so non-finite values travel as `null`.
/// Apply with `#[serde(with = "crate::serde_ext::nullable_f64")]` to any
/// f64 field that may carry NaN (undefined fits, excluded medians).
pub mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
