//! Shared pieces of the line-delimited text formats.
//!
//! Reals are always written with 17 significant digits (`{:.16e}`), which
//! round-trips every finite `f64` exactly. Non-finite values cannot be written.

use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn raw<S: Serializer>(x: f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(S::Error::custom(format!("cannot serialize non-finite value {x}")));
    }
    let raw = RawValue::from_string(fmt_real(x)).map_err(S::Error::custom)?;
    raw.serialize(s)
}

/// `f64` that serializes with 17 significant digits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R17(pub f64);

impl Serialize for R17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        raw(self.0, s)
    }
}

pub mod real {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        super::raw(*x, s)
    }
}

pub mod reals {
    use serde::ser::SerializeSeq;
    use serde::Serializer;

    use super::R17;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for &x in xs {
            seq.serialize_element(&R17(x))?;
        }
        seq.end()
    }
}

pub mod reals2 {
    use serde::ser::SerializeSeq;
    use serde::{Serialize, Serializer};

    struct Row<'a>(&'a [f64]);

    impl Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            super::reals::serialize(self.0, s)
        }
    }

    pub fn serialize<S: Serializer>(xs: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for row in xs {
            seq.serialize_element(&Row(row))?;
        }
        seq.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Probe {
        #[serde(with = "real")]
        x: f64,
        #[serde(with = "reals")]
        v: Vec<f64>,
    }

    #[test]
    fn seventeen_digits_round_trip() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 12345.678901234567, -0.0, 5e-324];
        for &x in &vals {
            let s = fmt_real(x);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn struct_fields_use_fixed_precision() {
        let p = Probe {
            x: 0.5,
            v: vec![1.0, 2.0],
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            r#"{"x":5.0000000000000000e-1,"v":[1.0000000000000000e0,2.0000000000000000e0]}"#
        );
    }

    #[test]
    fn non_finite_is_rejected() {
        let p = Probe {
            x: f64::NAN,
            v: vec![],
        };
        assert!(serde_json::to_string(&p).is_err());
    }
}
