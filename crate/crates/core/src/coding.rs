//! Orthogonal polynomial contrasts over an attribute's level set.
//!
//! The basis is built with the three-term (Stieltjes) recurrence on the
//! level values after centring and scaling, so unequally spaced levels get
//! exact contrasts rather than the equal-spacing tables. Because each code is
//! a polynomial in the raw value it can be evaluated between levels, which
//! the WTP root finder relies on.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoPolyCoding {
    levels: Vec<f64>,
    centre: f64,
    half_range: f64,
    // recurrence coefficients: pi_{k+1} = (t - alpha_k) pi_k - beta_k pi_{k-1}
    alpha: Vec<f64>,
    beta: Vec<f64>,
    norms: Vec<f64>,
}

impl OrthoPolyCoding {
    pub fn new(levels: &[f64], max_degree: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Coding("empty level set".into()));
        }
        if max_degree >= levels.len() {
            return Err(Error::Coding(format!(
                "degree {max_degree} needs at least {} levels, got {}",
                max_degree + 1,
                levels.len()
            )));
        }
        if levels.iter().any(|x| !x.is_finite()) {
            return Err(Error::Coding("non-finite level value".into()));
        }
        let mut sorted = levels.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Coding("level values must be distinct".into()));
        }

        let n = levels.len() as f64;
        let centre = levels.iter().sum::<f64>() / n;
        let half_range = levels
            .iter()
            .map(|x| (x - centre).abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let t: Vec<f64> = levels.iter().map(|x| (x - centre) / half_range).collect();

        let mut alpha = Vec::with_capacity(max_degree);
        let mut beta = Vec::with_capacity(max_degree);
        let mut norms = Vec::with_capacity(max_degree + 1);

        let mut prev = vec![0.0; t.len()];
        let mut cur = vec![1.0; t.len()];
        let mut prev_sq = 1.0;
        for k in 0..=max_degree {
            let sq: f64 = cur.iter().map(|v| v * v).sum();
            norms.push(sq.sqrt());
            if k == max_degree {
                break;
            }
            let a = t.iter().zip(&cur).map(|(ti, pi)| ti * pi * pi).sum::<f64>() / sq;
            let b = if k == 0 { 0.0 } else { sq / prev_sq };
            let next: Vec<f64> = t
                .iter()
                .zip(cur.iter().zip(&prev))
                .map(|(ti, (pc, pp))| (ti - a) * pc - b * pp)
                .collect();
            alpha.push(a);
            beta.push(b);
            prev_sq = sq;
            prev = std::mem::replace(&mut cur, next);
        }

        Ok(Self {
            levels: levels.to_vec(),
            centre,
            half_range,
            alpha,
            beta,
            norms,
        })
    }

    pub fn max_degree(&self) -> usize {
        self.alpha.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Codes of degrees `1..=max_degree` at an arbitrary raw value.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let t = (x - self.centre) / self.half_range;
        let mut out = Vec::with_capacity(self.max_degree());
        let mut prev = 0.0;
        let mut cur = 1.0;
        for k in 0..self.max_degree() {
            let next = (t - self.alpha[k]) * cur - self.beta[k] * prev;
            prev = cur;
            cur = next;
            out.push(cur / self.norms[k + 1]);
        }
        out
    }

    pub fn eval_degree(&self, x: f64, degree: usize) -> f64 {
        assert!(
            (1..=self.max_degree()).contains(&degree),
            "degree {degree} outside 1..={}",
            self.max_degree()
        );
        self.eval(x)[degree - 1]
    }

    /// Levels x degrees matrix, one row per level in the order supplied.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.levels.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Orthonormal, zero-sum polynomial contrasts for `levels`, returned as one
/// row per level with columns for degrees `1..=max_degree`.
pub fn orthogonal_poly_codes(levels: &[f64], max_degree: usize) -> Result<Vec<Vec<f64>>> {
    Ok(OrthoPolyCoding::new(levels, max_degree)?.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(m: &[Vec<f64>], j: usize) -> Vec<f64> {
        m.iter().map(|r| r[j]).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn two_levels_are_antisymmetric() {
        let m = orthogonal_poly_codes(&[0.0, 1.0], 1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0][0] + s).abs() < 1e-15);
        assert!((m[1][0] - s).abs() < 1e-15);
    }

    #[test]
    fn equally_spaced_match_classical_contrasts() {
        let m = orthogonal_poly_codes(&[5.0, 10.0, 15.0, 20.0], 2).unwrap();
        let lin = [-3.0, -1.0, 1.0, 3.0].map(|v: f64| v / 20f64.sqrt());
        let quad = [1.0, -1.0, -1.0, 1.0].map(|v: f64| v / 2.0);
        for i in 0..4 {
            assert!((m[i][0] - lin[i]).abs() < 1e-14);
            assert!((m[i][1] - quad[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn degree_must_be_below_level_count() {
        assert!(orthogonal_poly_codes(&[1.0, 2.0], 2).is_err());
        assert!(orthogonal_poly_codes(&[1.0, 1.0, 2.0], 1).is_err());
        assert!(orthogonal_poly_codes(&[], 0).is_err());
    }

    #[test]
    fn evaluation_between_levels_is_polynomial() {
        let c = OrthoPolyCoding::new(&[10.0, 20.0, 40.0, 50.0], 2).unwrap();
        // degree-1 code is affine in x
        let (a, b, mid) = (c.eval_degree(10.0, 1), c.eval_degree(50.0, 1), c.eval_degree(30.0, 1));
        assert!((mid - 0.5 * (a + b)).abs() < 1e-14);
        assert!(mid.abs() < 1e-14);
    }

    #[test]
    fn unsorted_input_keeps_row_order() {
        let m = orthogonal_poly_codes(&[20.0, 10.0, 5.0, 15.0], 1).unwrap();
        let sorted = orthogonal_poly_codes(&[5.0, 10.0, 15.0, 20.0], 1).unwrap();
        assert!((m[0][0] - sorted[3][0]).abs() < 1e-15);
        assert!((m[2][0] - sorted[0][0]).abs() < 1e-15);
        assert!(dot(&col(&m, 0), &[1.0; 4]).abs() < 1e-14);
    }
}
