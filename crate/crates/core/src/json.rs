//! Floats in emitted JSON/CSV carry 17 significant digits so every value
//! re-parses to the identical `f64`.

use serde::de::{Deserialize, Deserializer};
use serde::ser::{Error as _, Serialize, Serializer};
use serde_json::value::RawValue;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// An `f64` that serializes with 17 significant digits.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Sig17(pub f64);

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!(
                "cannot serialize non-finite value {}",
                self.0
            )));
        }
        let raw = RawValue::from_string(fmt_f64(self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Sig17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Sig17)
    }
}

impl From<f64> for Sig17 {
    fn from(v: f64) -> Self {
        Sig17(v)
    }
}
