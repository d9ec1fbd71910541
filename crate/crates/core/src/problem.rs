//! Problem files and the random instance generator.
//!
//! A problem file is a JSON object with row-major matrices:
//!
//! ```json
//! {"name": "demo", "A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
//!  "K0": [[0.1]], "J_star": 1.9}
//! ```
//!
//! `name`, `K0` and `J_star` are optional.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HinfError, Result};
use crate::lti::{is_stabilizing, Plant, Policy};

/// Largest scale tried is `2^(K0_SCALES - 1)`.
pub const K0_SCALES: u32 = 16;
pub const K0_ATTEMPTS_PER_SCALE: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: Option<String>,
    pub plant: Plant,
    pub k0: Option<Policy>,
    pub j_star: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "K0", default, skip_serializing_if = "Option::is_none")]
    k0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "J_star", default, skip_serializing_if = "Option::is_none")]
    j_star: Option<f64>,
}

fn parse_error(field: &str, message: impl Into<String>) -> HinfError {
    HinfError::Parse {
        field: field.into(),
        message: message.into(),
    }
}

/// Converts nested rows into a matrix, naming `field` on failure.
pub fn matrix_from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(parse_error(field, "matrix must have at least one row and one column"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(parse_error(
            field,
            format!("ragged rows: row 0 has {ncols} entries, row {i} has {}", rows[i].len()),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Parses a matrix written as rows separated by `;` and entries by `,`,
/// for example `"0.5, -1; 2, 0"`.
pub fn parse_matrix(field: &str, text: &str) -> Result<DMatrix<f64>> {
    let rows = text
        .split(';')
        .enumerate()
        .map(|(i, row)| {
            row.split(',')
                .map(|v| {
                    let v = v.trim();
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_error(field, format!("row {i}: `{v}` is not a finite number")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    matrix_from_rows(field, &rows)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Problem {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawProblem = serde_json::from_str(text).map_err(|e| parse_error("<document>", e.to_string()))?;
        let a = matrix_from_rows("A", &raw.a)?;
        let b = matrix_from_rows("B", &raw.b)?;
        let q = matrix_from_rows("Q", &raw.q)?;
        let r = matrix_from_rows("R", &raw.r)?;
        let plant = Plant::new(a, b, q, r)?;
        let k0 = match raw.k0 {
            Some(rows) => {
                let k = matrix_from_rows("K0", &rows)?;
                plant
                    .check_gain(&k)
                    .map_err(|e| parse_error("K0", e.to_string()))?;
                Some(Policy::new(k))
            }
            None => None,
        };
        if let Some(j) = raw.j_star {
            if !(j.is_finite() && j > 0.0) {
                return Err(parse_error("J_star", "must be a positive finite number"));
            }
        }
        Ok(Self {
            name: raw.name,
            plant,
            k0,
            j_star: raw.j_star,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawProblem {
            name: self.name.clone(),
            a: matrix_to_rows(self.plant.a()),
            b: matrix_to_rows(self.plant.b()),
            q: matrix_to_rows(self.plant.q()),
            r: matrix_to_rows(self.plant.r()),
            k0: self.k0.as_ref().map(|k| matrix_to_rows(k.gain())),
            j_star: self.j_star,
        };
        serde_json::to_string_pretty(&raw).expect("problem serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HinfError::Argument(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A random instance with the number of draws its initial gain took.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub plant: Plant,
    pub k0: Policy,
    pub attempts: usize,
}

/// Draws `A = I + xi`, `B`, `Q = (1 + zeta) I` and `R`, then an initial
/// stabilizing gain by rejection over growing scales.
pub fn gen_random_problem(n_x: usize, n_u: usize, seed: u64) -> Result<Generated> {
    if n_x == 0 || n_u == 0 {
        return Err(HinfError::Argument("n_x and n_u must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::identity(n_x, n_x) + DMatrix::from_fn(n_x, n_x, |_, _| rng.random_range(0.0..=1.0));
    let b = DMatrix::from_fn(n_x, n_u, |_, _| rng.random_range(0.0..=1.0));
    let q = DMatrix::identity(n_x, n_x) * (1.0 + rng.random_range(0.0..=0.1));
    let r = if n_u == 1 {
        DMatrix::from_element(1, 1, rng.random_range(1.0..=1.5))
    } else {
        DMatrix::identity(n_u, n_u) * (1.0 + rng.random_range(0.0..=0.5))
    };
    let plant = Plant::new(a, b, q, r)?;

    let mut attempts = 0;
    for level in 0..K0_SCALES {
        let scale = f64::from(1u32 << level);
        for _ in 0..K0_ATTEMPTS_PER_SCALE {
            attempts += 1;
            let k = Policy::new(DMatrix::from_fn(n_u, n_x, |_, _| scale * rng.random_range(0.0..=1.0)));
            if is_stabilizing(&plant, &k).unwrap_or(false) {
                return Ok(Generated { plant, k0: k, attempts });
            }
        }
    }
    Err(HinfError::Generation(format!(
        "no stabilizing initial gain after {attempts} draws (seed {seed})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use proptest::prelude::*;

    #[test]
    fn ragged_rows_name_the_field() {
        let text = r#"{"A": [[1.0, 0.0], [0.0]], "B": [[1.0],[0.0]], "Q": [[1.0,0.0],[0.0,1.0]], "R": [[1.0]]}"#;
        match Problem::from_json(text) {
            Err(HinfError::Parse { field, .. }) => assert_eq!(field, "A"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_documents_are_rejected() {
        let base = r#""A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]"#;
        assert!(Problem::from_json(&format!("{{{base}}}")).is_ok());
        for bad in [
            "not json".to_string(),
            format!("{{{base}, \"extra\": 1}}"),
            format!("{{{base}, \"K0\": [[1.0, 2.0]]}}"),
            format!("{{{base}, \"J_star\": -1.0}}"),
            r#"{"A": [], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]}"#.to_string(),
            r#"{"A": [[0.5]], "B": [[1.0]], "Q": [[-1.0]], "R": [[1.0]]}"#.to_string(),
        ] {
            assert!(Problem::from_json(&bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn inline_matrices() {
        assert_eq!(parse_matrix("K", "1, 2; 3,4").unwrap(), nalgebra::dmatrix![1.0, 2.0; 3.0, 4.0]);
        assert_eq!(parse_matrix("K", " -0.5 ").unwrap(), nalgebra::dmatrix![-0.5]);
        for bad in ["", "1,2;3", "1,x", "1,;2,3", "nan", "1e999"] {
            match parse_matrix("K", bad) {
                Err(HinfError::Parse { field, .. }) => assert_eq!(field, "K"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn paper_instance_round_trips() {
        let (plant, k0) = examples::example13();
        let p = Problem {
            name: Some("example13".into()),
            plant,
            k0: Some(k0),
            j_star: Some(examples::EXAMPLE13_J_STAR),
        };
        assert_eq!(Problem::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn generated_scalar_input_ranges() {
        let generated: Vec<_> = (0..20).filter_map(|seed| gen_random_problem(3, 1, seed).ok()).collect();
        assert!(generated.len() >= 15);
        for g in generated {
            let q = g.plant.q();
            assert!(q.is_square() && (0..3).all(|i| (1.0..=1.1).contains(&q[(i, i)])));
            assert_eq!(q.clone() - DMatrix::from_diagonal(&q.diagonal()), DMatrix::zeros(3, 3));
            assert!((1.0..=1.5).contains(&g.plant.r()[(0, 0)]));
            let xi = g.plant.a() - DMatrix::identity(3, 3);
            assert!(xi.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(is_stabilizing(&g.plant, &g.k0).unwrap());
            assert!(g.attempts >= 1);
        }
    }

    #[test]
    fn exhausted_budget_is_a_generation_error() {
        for seed in [6, 27] {
            match gen_random_problem(3, 1, seed) {
                Err(HinfError::Generation(msg)) => assert!(msg.contains("160000 draws")),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn generated_two_input_ranges() {
        let g = gen_random_problem(4, 2, 9).unwrap();
        let r = g.plant.r();
        assert_eq!(r[(0, 1)], 0.0);
        assert!((1.0..=1.5).contains(&r[(0, 0)]) && r[(0, 0)] == r[(1, 1)]);
        assert!(is_stabilizing(&g.plant, &g.k0).unwrap());
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(gen_random_problem(3, 1, 4).unwrap(), gen_random_problem(3, 1, 4).unwrap());
        assert_ne!(gen_random_problem(3, 1, 4).unwrap(), gen_random_problem(3, 1, 5).unwrap());
        assert!(gen_random_problem(0, 1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generated_problems_round_trip_bitwise(seed in any::<u64>(), n_x in 1usize..4, n_u in 1usize..3) {
            let g = gen_random_problem(n_x, n_u, seed);
            prop_assume!(g.is_ok());
            let g = g.unwrap();
            let p = Problem { name: None, plant: g.plant, k0: Some(g.k0), j_star: None };
            let back = Problem::from_json(&p.to_json()).unwrap();
            let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.plant.a()), bits(p.plant.a()));
            prop_assert_eq!(bits(back.plant.b()), bits(p.plant.b()));
            prop_assert_eq!(bits(back.plant.q()), bits(p.plant.q()));
            prop_assert_eq!(bits(back.plant.r()), bits(p.plant.r()));
            prop_assert_eq!(bits(back.k0.unwrap().gain()), bits(p.k0.unwrap().gain()));
        }
    }
}
