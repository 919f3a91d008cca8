/// Geometric interpolation `start * (end / start)^(epoch / total)`.
pub fn anneal_coefficient(start: f64, end: f64, epoch: f64, total: f64) -> f64 {
    if start == end || total <= 0.0 {
        return start;
    }
    start * (end / start).powf(epoch / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(anneal_coefficient(100.0, 10.0, 0.0, 75.0), 100.0);
        assert!((anneal_coefficient(100.0, 10.0, 75.0, 75.0) - 10.0).abs() < 1e-12);
        assert!((anneal_coefficient(100.0, 10.0, 37.5, 75.0) - 31.622_776_601_683_793).abs() < 1e-9);
    }

    #[test]
    fn equal_endpoints_are_constant() {
        for e in 0..10 {
            assert_eq!(anneal_coefficient(0.0285, 0.0285, e as f64, 9.0), 0.0285);
        }
    }
}
