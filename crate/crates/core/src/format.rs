//! Deterministic number formatting for reports.

/// Formats `x` with 17 significant digits, which round-trips every `f64`.
/// Trailing zeros of the mantissa are dropped.
pub fn sig17(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed)
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for &x in &[0.1 + 0.2, 1.0 / 3.0, 1e-300, 6.02e23, -2.5, 1e16, 123456.789, 1e-5, 9.9e-6] {
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x, "{x}");
        }
        assert_eq!(sig17(2.0), "2");
        assert_eq!(sig17(-0.5), "-0.5");
        assert_eq!(sig17(0.1), "0.10000000000000001");
    }
}
