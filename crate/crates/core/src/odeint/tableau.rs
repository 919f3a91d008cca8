use super::SolveError;

/// Coefficients of an embedded explicit Runge-Kutta pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ButcherTableau {
    pub name: &'static str,
    /// Strictly lower-triangular stage matrix, `a[i][j]` for `j < i`.
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    /// Weights of the propagated solution.
    pub b: Vec<f64>,
    /// Weights of the embedded (error-estimating) solution.
    pub b_tilde: Vec<f64>,
    pub order: usize,
    /// Zero-based stage indices `(x, y)` with `c[x] == c[y]`, used for the
    /// stiffness estimate.
    pub stiffness_pair: (usize, usize),
}

impl ButcherTableau {
    /// Dormand-Prince 5(4), FSAL, seven stages.
    pub fn dormand_prince() -> Self {
        let a = vec![
            vec![],
            vec![1.0 / 5.0],
            vec![3.0 / 40.0, 9.0 / 40.0],
            vec![44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
            vec![
                19372.0 / 6561.0,
                -25360.0 / 2187.0,
                64448.0 / 6561.0,
                -212.0 / 729.0,
            ],
            vec![
                9017.0 / 3168.0,
                -355.0 / 33.0,
                46732.0 / 5247.0,
                49.0 / 176.0,
                -5103.0 / 18656.0,
            ],
            vec![
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
            ],
        ];
        let b = vec![
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
            0.0,
        ];
        let b_tilde = vec![
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];
        ButcherTableau {
            name: "dopri5",
            a,
            c: vec![0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
            b,
            b_tilde,
            order: 5,
            stiffness_pair: (5, 6),
        }
    }

    pub fn stages(&self) -> usize {
        self.c.len()
    }

    /// First-same-as-last: the final stage is evaluated at the propagated
    /// solution, so it doubles as the first stage of the next step.
    pub fn is_fsal(&self) -> bool {
        let s = self.stages();
        s > 1
            && self.c[s - 1] == 1.0
            && self.a[s - 1].len() == s - 1
            && self.a[s - 1].iter().zip(&self.b).all(|(a, b)| a == b)
            && self.b[s - 1] == 0.0
    }

    /// Dynamics evaluations per attempted step after the first.
    pub fn evals_per_step(&self) -> usize {
        if self.is_fsal() {
            self.stages() - 1
        } else {
            self.stages()
        }
    }

    /// Largest violation of the consistency conditions
    /// `sum b = 1`, `sum b_tilde = 1`, `sum_j a_ij = c_i`.
    pub fn consistency_defect(&self) -> f64 {
        let mut worst = (self.b.iter().sum::<f64>() - 1.0).abs();
        worst = worst.max((self.b_tilde.iter().sum::<f64>() - 1.0).abs());
        for (row, c) in self.a.iter().zip(&self.c) {
            worst = worst.max((row.iter().sum::<f64>() - c).abs());
        }
        worst
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let s = self.stages();
        let bad = |msg: String| Err(SolveError::invalid(format!("tableau {}: {msg}", self.name)));
        if s == 0 || self.a.len() != s || self.b.len() != s || self.b_tilde.len() != s {
            return bad("inconsistent stage counts".into());
        }
        if self.a.iter().enumerate().any(|(i, row)| row.len() != i) {
            return bad("stage matrix must be strictly lower triangular".into());
        }
        let defect = self.consistency_defect();
        if defect > 1e-12 {
            return bad(format!("consistency defect {defect:e}"));
        }
        let (x, y) = self.stiffness_pair;
        if x >= s || y >= s || x == y || self.c[x] != self.c[y] {
            return bad(format!("stiffness pair ({x}, {y}) needs distinct stages with equal c"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dopri_is_consistent() {
        let t = ButcherTableau::dormand_prince();
        assert!(t.consistency_defect() <= 1e-12);
        t.validate().unwrap();
    }

    #[test]
    fn dopri_is_fsal_with_six_new_evals() {
        let t = ButcherTableau::dormand_prince();
        assert!(t.is_fsal());
        assert_eq!(t.evals_per_step(), 6);
    }

    #[test]
    fn stiffness_pair_shares_abscissa() {
        let t = ButcherTableau::dormand_prince();
        let (x, y) = t.stiffness_pair;
        assert_eq!(t.c[x], t.c[y]);
    }

    #[test]
    fn broken_weights_rejected() {
        let mut t = ButcherTableau::dormand_prince();
        t.b[0] += 1e-6;
        assert!(t.validate().is_err());
    }
}
