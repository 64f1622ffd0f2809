macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}
pub(crate) use assert_close;
