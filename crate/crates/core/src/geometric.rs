//! Linear vector-arithmetic baselines: Gram-Schmidt rejection for negation,
//! normalized addition for conjunction.

use serde::{Deserialize, Serialize};

use crate::embedding_store::{dot, l2_norm};
use crate::error::{NsflError, Result};
use crate::formula::{Component, FormulaKind, QueryPack};

const DEGENERATE_NORM: f64 = 1e-10;

/// `normalize(v_a - (v_a . v_b) v_b)`.
pub fn orthogonal_reject(v_a: &[f64], v_b: &[f64]) -> Result<Vec<f64>> {
    if v_a.len() != v_b.len() {
        return Err(NsflError::Dimension {
            expected: v_a.len(),
            found: v_b.len(),
        });
    }
    let proj = dot(v_a, v_b);
    let tmp: Vec<f64> = v_a.iter().zip(v_b).map(|(a, b)| a - proj * b).collect();
    let n = l2_norm(&tmp);
    if n < DEGENERATE_NORM {
        return Err(NsflError::Collinear);
    }
    Ok(tmp.into_iter().map(|x| x / n).collect())
}

/// `normalize(sum v_k)`.
pub fn normalized_sum<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| NsflError::Config("normalized_sum needs at least one vector".into()))?
        .as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != acc.len() {
            return Err(NsflError::Dimension {
                expected: acc.len(),
                found: v.len(),
            });
        }
        for (s, x) in acc.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = l2_norm(&acc);
    if n < DEGENERATE_NORM {
        return Err(NsflError::Cancellation);
    }
    Ok(acc.into_iter().map(|x| x / n).collect())
}

/// How disjunctions are compiled into a single geometric vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricOr {
    /// Normalized sum of the atoms, like conjunction.
    #[default]
    NormalizedSum,
    /// Use the monolithic vector unchanged.
    MonolithicPassthrough,
}

/// Compiles a pack into one query vector by linear arithmetic.
pub fn geometric_query(pack: &QueryPack, or_mode: GeometricOr) -> Result<Vec<f64>> {
    use Component::*;
    let v = |c| pack.vector(c);
    match pack.kind() {
        FormulaKind::And2 => normalized_sum(&[v(A)?, v(B)?]),
        FormulaKind::And3 => normalized_sum(&[v(A)?, v(B)?, v(C)?]),
        FormulaKind::Not2 => orthogonal_reject(v(A)?, v(B)?),
        FormulaKind::AndNot3 => orthogonal_reject(&normalized_sum(&[v(A)?, v(B)?])?, v(C)?),
        FormulaKind::Or2 | FormulaKind::Or3 if or_mode == GeometricOr::MonolithicPassthrough => {
            Ok(v(M)?.to_vec())
        }
        FormulaKind::Or2 => normalized_sum(&[v(A)?, v(B)?]),
        FormulaKind::Or3 => normalized_sum(&[v(A)?, v(B)?, v(C)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::normalized;
    use crate::formula::{FusionStyle, LogicalFormula};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const R: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = tol);
        }
    }

    #[test]
    fn reject_examples() {
        close(&orthogonal_reject(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), &[1.0, 0.0], 1e-15);
        // v_a - (1/sqrt2)(1,1)/sqrt2 = (1/2, -1/2), normalized (1, -1)/sqrt2
        close(&orthogonal_reject(&[1.0, 0.0], &[R, R]).unwrap(), &[R, -R], 1e-12);
        assert!(matches!(
            orthogonal_reject(&[1.0, 0.0], &[1.0, 0.0]),
            Err(NsflError::Collinear)
        ));
    }

    #[test]
    fn sum_examples() {
        close(&normalized_sum(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), &[R, R], 1e-15);
        assert!(matches!(
            normalized_sum(&[[1.0, 0.0], [-1.0, 0.0]]),
            Err(NsflError::Cancellation)
        ));
        close(&normalized_sum(&[[0.0, 1.0]; 3]).unwrap(), &[0.0, 1.0], 1e-15);
    }

    fn basis_pack(kind: FormulaKind) -> QueryPack {
        let e = |i: usize| {
            let mut v = vec![0.0; 6];
            v[i] = 1.0;
            v
        };
        let mut vectors = BTreeMap::new();
        for (i, k) in ["A", "B", "C", "AB", "ABC", "M"].iter().enumerate() {
            vectors.insert(k.to_string(), e(i));
        }
        QueryPack {
            qid: "g".into(),
            formula: LogicalFormula::with_default_atoms(kind),
            fusion_style: FusionStyle::Simple,
            vectors,
            ground_truth: None,
        }
    }

    #[test]
    fn query_compilation() {
        let and = geometric_query(&basis_pack(FormulaKind::And2), GeometricOr::default()).unwrap();
        close(&and, &[R, R, 0.0, 0.0, 0.0, 0.0], 1e-15);
        let not = geometric_query(&basis_pack(FormulaKind::Not2), GeometricOr::default()).unwrap();
        close(&not, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-15);
        let and_not =
            geometric_query(&basis_pack(FormulaKind::AndNot3), GeometricOr::default()).unwrap();
        close(&and_not, &[R, R, 0.0, 0.0, 0.0, 0.0], 1e-15);
        let or = geometric_query(
            &basis_pack(FormulaKind::Or3),
            GeometricOr::MonolithicPassthrough,
        )
        .unwrap();
        close(&or, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 0.0);
    }

    fn unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter_map("non-degenerate", |v| normalized(&v, 1e-3))
    }

    proptest! {
        #[test]
        fn rejection_is_orthogonal_and_unit(a in unit(16), b in unit(16)) {
            prop_assume!(dot(&a, &b).abs() < 0.999);
            let v = orthogonal_reject(&a, &b).unwrap();
            prop_assert!(dot(&v, &b).abs() < 1e-6);
            prop_assert!((l2_norm(&v) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn sum_is_permutation_invariant(a in unit(16), b in unit(16), c in unit(16)) {
            let x = normalized_sum(&[&a, &b, &c]);
            let y = normalized_sum(&[&c, &a, &b]);
            if let (Ok(x), Ok(y)) = (x, y) {
                prop_assert!((l2_norm(&x) - 1.0).abs() < 1e-6);
                for (p, q) in x.iter().zip(&y) {
                    prop_assert!((p - q).abs() < 1e-7);
                }
            }
        }
    }
}
