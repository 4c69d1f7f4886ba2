//! The CSV number contract: 9 significant digits, '.' separator, plain
//! decimal notation, byte-stable across runs.

pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let decimals = (8 - x.abs().log10().floor() as i64).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(2.087463), "2.08746300");
        assert_eq!(sig9(1700.44), "1700.44000");
        assert_eq!(sig9(0.000459432), "0.000459432000");
        assert_eq!(sig9(-1.392317), "-1.39231700");
        assert_eq!(sig9(0.3), "0.300000000");
    }
}
