use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// `scores[j][i]`: total log-likelihood of speaker `i`'s utterances under
/// the scorer conditioned on speaker `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    scores: Vec<Vec<f64>>,
    speakers: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<Vec<f64>>, speakers: Vec<String>) -> Result<Self, MetricsError> {
        let n = speakers.len();
        if n == 0 {
            return Err(MetricsError::EmptyInput);
        }
        if scores.len() != n || scores.iter().any(|r| r.len() != n) {
            return Err(MetricsError::BadMatrix(format!("expected {n}x{n} scores")));
        }
        if scores.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::BadMatrix("non-finite score".into()));
        }
        Ok(ScoreMatrix { scores, speakers })
    }

    /// Fills cell `(j, i)` with `scorer(j, i)`.
    pub fn build<E>(
        speakers: Vec<String>,
        mut scorer: impl FnMut(usize, usize) -> Result<f64, E>,
    ) -> Result<Result<Self, MetricsError>, E> {
        let n = speakers.len();
        let mut scores = vec![vec![0.0; n]; n];
        for (j, row) in scores.iter_mut().enumerate() {
            for (i, cell) in row.iter_mut().enumerate() {
                *cell = scorer(j, i)?;
            }
        }
        Ok(ScoreMatrix::new(scores, speakers))
    }

    pub fn n(&self) -> usize {
        self.speakers.len()
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.scores[j][i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.scores
    }

    /// Header `scorer,<speaker...>`, then one row per scorer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scorer");
        for s in &self.speakers {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (s, row) in self.speakers.iter().zip(&self.scores) {
            out.push_str(s);
            for v in row {
                write!(out, ",{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(MetricsError::EmptyInput)?;
        let speakers: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut scores = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let name = cells.next().unwrap_or_default().trim();
            if speakers.get(n).map(String::as_str) != Some(name) {
                return Err(MetricsError::BadMatrix(format!("row {} is labelled \"{name}\"", n + 1)));
            }
            let row = cells
                .map(|c| c.trim().parse::<f64>().map_err(|e| MetricsError::BadMatrix(format!("row {}: {e}", n + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            scores.push(row);
        }
        ScoreMatrix::new(scores, speakers)
    }
}

/// Reciprocal rank of scorer `k` on speaker `k`. Scorers within `tol` of
/// the correct one count as tied, and the correct scorer takes the worst
/// position of its tied block.
pub fn speaker_rr_tol(m: &ScoreMatrix, k: usize, tol: f64) -> f64 {
    1.0 / rank_tol(m, k, tol) as f64
}

fn rank_tol(m: &ScoreMatrix, k: usize, tol: f64) -> usize {
    let own = m.scores[k][k];
    (0..m.n()).filter(|&j| m.scores[j][k] >= own - tol).count()
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean of `1 / rank` over `ranks`, correctly rounded whenever the common
/// denominator fits in an f64 mantissa (so n equal ranks give exactly 1/n).
fn mean_reciprocal(ranks: &[usize]) -> f64 {
    const EXACT: u128 = 1 << 53;
    let n = ranks.len() as u128;
    let lcm = ranks.iter().try_fold(1u128, |l, &r| {
        let r = r as u128;
        (l / gcd(l, r)).checked_mul(r).filter(|&v| v.checked_mul(n).is_some_and(|d| d <= EXACT))
    });
    match lcm {
        Some(l) => {
            let num: u128 = ranks.iter().map(|&r| l / r as u128).sum();
            num as f64 / (l * n) as f64
        }
        None => ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64,
    }
}

pub fn speaker_rr(m: &ScoreMatrix, k: usize) -> f64 {
    speaker_rr_tol(m, k, 0.0)
}

pub fn smrr_tol(m: &ScoreMatrix, tol: f64) -> f64 {
    let ranks: Vec<usize> = (0..m.n()).map(|k| rank_tol(m, k, tol)).collect();
    mean_reciprocal(&ranks)
}

pub fn smrr(m: &ScoreMatrix) -> f64 {
    smrr_tol(m, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn with_column(col: &[f64], k: usize) -> ScoreMatrix {
        let n = col.len();
        let mut s = vec![vec![0.0; n]; n];
        for j in 0..n {
            s[j][k] = col[j];
        }
        ScoreMatrix::new(s, names(n)).unwrap()
    }

    #[test]
    fn rank_cases() {
        assert_eq!(speaker_rr(&with_column(&[1.0, 5.0, 0.0], 1), 1), 1.0);
        assert_eq!(speaker_rr(&with_column(&[2.0; 5], 3), 3), 0.2);
        assert_eq!(speaker_rr(&with_column(&[2.0, 3.0, 3.0, 1.0], 1), 1), 0.5);
        assert_eq!(speaker_rr_tol(&with_column(&[2.0, 3.0, 2.9, 1.0], 1), 1, 0.0), 1.0);
        assert_eq!(speaker_rr_tol(&with_column(&[2.0, 3.0, 2.9, 1.0], 1), 1, 0.2), 0.5);
    }

    #[test]
    fn smrr_extremes() {
        let n = 4;
        let diag: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| if i == j { 0.0 } else { -1.0 }).collect()).collect();
        assert_eq!(smrr(&ScoreMatrix::new(diag, names(n)).unwrap()), 1.0);
        let blind = vec![vec![-3.0, -7.0, -1.0, -2.0]; n];
        assert_eq!(smrr(&ScoreMatrix::new(blind, names(n)).unwrap()), 0.25);
    }

    #[test]
    fn full_tie_is_exactly_one_over_n() {
        for n in 1..=40 {
            let m = ScoreMatrix::new(vec![vec![-2.5; n]; n], names(n)).unwrap();
            assert_eq!(smrr(&m), 1.0 / n as f64, "n = {n}");
        }
        assert_eq!(mean_reciprocal(&[1, 2, 3]), 11.0 / 18.0);
    }

    #[test]
    fn matrix_validation_and_csv() {
        assert!(ScoreMatrix::new(vec![vec![1.0]], names(2)).is_err());
        assert!(ScoreMatrix::new(vec![vec![f64::NAN]], names(1)).is_err());
        let m = ScoreMatrix::new(vec![vec![-1.5, -2.0], vec![-3.25, 0.0]], names(2)).unwrap();
        assert_eq!(ScoreMatrix::from_csv(&m.to_csv()).unwrap(), m);
        assert!(ScoreMatrix::from_csv("scorer,a,b\nb,1,2\na,3,4\n").is_err());
    }

    // sort-based restatement: list the column in descending order with the
    // correct scorer placed after every equal score, read off its position
    fn oracle(rows: &[Vec<f64>], k: usize) -> f64 {
        let mut order: Vec<(f64, bool)> = rows.iter().enumerate().map(|(j, r)| (r[k], j == k)).collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        1.0 / (order.iter().position(|x| x.1).unwrap() + 1) as f64
    }

    #[test]
    fn exhaustive_small_columns() {
        // every 3-valued column pattern for a 3x3 matrix, each speaker position
        for code in 0..27 {
            let col = [(code % 3) as f64, (code / 3 % 3) as f64, (code / 9) as f64];
            for k in 0..3 {
                let m = with_column(&col, k);
                assert_eq!(speaker_rr(&m, k), oracle(m.rows(), k));
            }
        }
    }

    proptest! {
        #[test]
        fn smrr_matches_oracle_and_bounds(
            cells in prop::collection::vec(0u8..4, 36),
        ) {
            let rows: Vec<Vec<f64>> = cells.chunks(6).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
            let m = ScoreMatrix::new(rows.clone(), names(6)).unwrap();
            // lcm(1..=6) = 60 makes every reciprocal rank an integer
            let num: f64 = (0..6).map(|k| (60.0 * oracle(&rows, k)).round()).sum();
            let expect = num / 360.0;
            prop_assert_eq!(smrr(&m), expect);
            prop_assert!(smrr(&m) >= 1.0 / 6.0 && smrr(&m) <= 1.0);
        }

        #[test]
        fn column_shift_invariance(
            cells in prop::collection::vec(-5i32..5, 25),
            shift in -100.0f64..100.0, col in 0usize..5,
        ) {
            let rows: Vec<Vec<f64>> = cells.chunks(5).map(|c| c.iter().map(|&v| v as f64 * 0.5).collect()).collect();
            let mut shifted = rows.clone();
            for r in shifted.iter_mut() {
                r[col] += shift;
            }
            let a = ScoreMatrix::new(rows, names(5)).unwrap();
            let b = ScoreMatrix::new(shifted, names(5)).unwrap();
            for k in 0..5 {
                prop_assert_eq!(speaker_rr(&a, k), speaker_rr(&b, k));
            }
        }
    }
}
