//! Small numeric helpers shared by the distance and test code.

/// Neumaier-compensated sum. Order-dependent only through the input order,
/// which callers keep fixed.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Format with 17 significant digits, which round-trips every finite f64.
pub fn format_sig17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "Infinity".into()
        } else {
            "-Infinity".into()
        };
    }
    if x == 0.0 {
        return "0.0000000000000000".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.16e}")
    }
}

pub(crate) mod sig17 {
    //! serde adapters writing floats with 17 significant digits; non-finite
    //! values become `null`.
    use serde::Serializer;
    use serde_json::value::RawValue;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            let raw = RawValue::from_string(super::format_sig17(*x)).map_err(serde::ser::Error::custom)?;
            s.serialize_some(&raw)
        } else {
            s.serialize_none()
        }
    }

    pub mod option {
        use serde::Serializer;

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::Serializer;
        use serde_json::value::RawValue;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                if x.is_finite() {
                    let raw = RawValue::from_string(super::super::format_sig17(*x))
                        .map_err(serde::ser::Error::custom)?;
                    seq.serialize_element(&raw)?;
                } else {
                    seq.serialize_element(&Option::<f64>::None)?;
                }
            }
            seq.end()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn sig17_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 12345.678, 2.5e-9, 6.02e23, -0.25, 0.0365] {
            let s = format_sig17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let digits = s
                .split(['e', 'E'])
                .next()
                .unwrap()
                .chars()
                .filter(|c| c.is_ascii_digit())
                .collect::<String>();
            assert_eq!(digits.trim_start_matches('0').len(), 17, "{s}");
        }
    }
}
