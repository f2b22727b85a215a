//! Text rendering of reals for CSV, JSON-adjacent and dump outputs.

/// Render `x` like C's `%.17g`: 17 significant digits, trailing zeros
/// stripped, exponent form outside `[1e-5, 1e17)`.
pub fn real(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        strip(format!("{:.*}", decimals, x))
    } else {
        let m = strip(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn strip(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::real;

    #[test]
    fn matches_printf_g17() {
        assert_eq!(real(0.1), "0.10000000000000001");
        assert_eq!(real(1.0), "1");
        assert_eq!(real(-2.5), "-2.5");
        assert_eq!(real(1e20), "1e+20");
        assert_eq!(real(1.5e-7), "1.4999999999999999e-07");
        assert_eq!(real(f64::NEG_INFINITY), "-inf");
        assert_eq!(real(123456.0), "123456");
    }

    #[test]
    fn round_trips() {
        for &x in &[0.1, 1.0 / 3.0, -1e-300, 6.02214076e23, std::f64::consts::PI] {
            assert_eq!(real(x).parse::<f64>().unwrap(), x);
        }
    }
}
