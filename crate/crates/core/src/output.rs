//! Text formatting of numbers and result tables.

use std::fmt::Write as _;

use crate::simulation::ResultsTable;

/// `%.17g`-style rendering: 17 significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-5, 1e17)`.
pub fn fmt_sig17(v: f64) -> String {
    fmt_sig(v, 17)
}

/// `%.{digits}g`-style rendering of `v`.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `phi,delta,method,rejection_rate` CSV.
pub fn results_csv(table: &ResultsTable) -> String {
    let mut out = String::from("phi,delta,method,rejection_rate\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig17(r.phi),
            fmt_sig17(r.delta),
            r.method,
            fmt_sig17(r.rejection_rate)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(fmt_sig17(0.05), "0.050000000000000003");
        assert_eq!(fmt_sig17(0.5), "0.5");
        assert_eq!(fmt_sig17(1.0), "1");
        assert_eq!(fmt_sig17(0.0), "0");
        assert_eq!(fmt_sig17(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_sig17(1e20), "1e+20");
        assert_eq!(fmt_sig17(-2.5), "-2.5");
        assert_eq!(fmt_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(fmt_sig(0.0625, 12), "0.0625");
    }

    proptest! {
        #[test]
        fn roundtrips(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
            prop_assert_eq!(fmt_sig17(v).parse::<f64>().unwrap(), v);
        }
    }
}
