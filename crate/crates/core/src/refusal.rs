//! Hard refusal gate, the soft/hard conjunction and the judge-policy seam.
//!
//! The hard gate passes iff `min_j S_j / C_j < alpha` over retrieved hits
//! with `C_j > 0`. No eligible hit means a score of +inf, which always fails.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::retrieval::RetrievalHit;
use crate::scalar::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.75;

#[derive(Debug, thiserror::Error)]
#[error("alpha must be positive, got {0}")]
pub struct InvalidAlpha(pub f64);

/// Threshold policy of the shipped judge. The comparator is strict `<`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardPolicy<T: Scalar> {
    alpha: T,
}

impl<T: Scalar> HardPolicy<T> {
    pub fn new(alpha: T) -> Result<Self, InvalidAlpha> {
        if alpha > T::zero() {
            Ok(Self { alpha })
        } else {
            Err(InvalidAlpha(alpha.as_f64()))
        }
    }

    /// A gate that only refuses when nothing eligible was retrieved.
    pub fn open() -> Self {
        Self { alpha: T::infinity() }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }
}

impl<T: Scalar> Default for HardPolicy<T> {
    fn default() -> Self {
        Self {
            alpha: T::of(DEFAULT_ALPHA),
        }
    }
}

/// Pluggable hard judge. [`HardPolicy`] is the default implementation.
pub trait JudgePolicy<T: Scalar>: Send + Sync {
    fn threshold(&self) -> T;

    /// Returns `(passes, score)`.
    fn judge(&self, hits: &[RetrievalHit<T>]) -> (bool, T);
}

impl<T: Scalar> JudgePolicy<T> for HardPolicy<T> {
    fn threshold(&self) -> T {
        self.alpha
    }

    fn judge(&self, hits: &[RetrievalHit<T>]) -> (bool, T) {
        hard_judge(hits, self)
    }
}

/// Minimum of `distance / confidence` over hits with positive confidence,
/// +inf when there are none.
pub fn min_penalized_score<T: Scalar>(hits: &[RetrievalHit<T>]) -> T {
    hits.iter()
        .filter(|h| h.confidence > T::zero())
        .map(|h| h.distance / h.confidence)
        .fold(T::infinity(), T::min)
}

pub fn hard_judge<T: Scalar>(hits: &[RetrievalHit<T>], policy: &HardPolicy<T>) -> (bool, T) {
    let score = min_penalized_score(hits);
    (score < policy.alpha, score)
}

pub fn combine(i_soft: bool, i_hard: bool) -> bool {
    i_soft && i_hard
}

/// Outcome of both refusal mechanisms for one question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgment<T: Scalar> {
    pub i_soft: bool,
    pub i_hard: bool,
    pub i_final: bool,
    /// +inf when no eligible knowledge was retrieved.
    pub min_penalized_score: T,
    pub alpha_used: T,
}

impl<T: Scalar> Judgment<T> {
    pub fn new(i_soft: bool, i_hard: bool, min_penalized_score: T, alpha_used: T) -> Self {
        Self {
            i_soft,
            i_hard,
            i_final: combine(i_soft, i_hard),
            min_penalized_score,
            alpha_used,
        }
    }
}

/// Wire form: `{"i_soft":0|1,"i_hard":0|1,"i_final":0|1,"min_score":x|null,"alpha":x|null}`.
/// Infinite values are written as `null`.
#[derive(Serialize, Deserialize)]
struct JudgmentWire {
    i_soft: u8,
    i_hard: u8,
    i_final: u8,
    min_score: Option<f64>,
    alpha: Option<f64>,
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl<T: Scalar> Serialize for Judgment<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        JudgmentWire {
            i_soft: self.i_soft.into(),
            i_hard: self.i_hard.into(),
            i_final: self.i_final.into(),
            min_score: finite_or_null(self.min_penalized_score.as_f64()),
            alpha: finite_or_null(self.alpha_used.as_f64()),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Judgment<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = JudgmentWire::deserialize(d)?;
        let inf = |x: Option<f64>| x.map_or(T::infinity(), T::of);
        Ok(Self {
            i_soft: w.i_soft != 0,
            i_hard: w.i_hard != 0,
            i_final: w.i_final != 0,
            min_penalized_score: inf(w.min_score),
            alpha_used: inf(w.alpha),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hits(s: &[f64], c: &[f64]) -> Vec<RetrievalHit<f64>> {
        s.iter()
            .zip(c)
            .enumerate()
            .map(|(i, (&distance, &confidence))| RetrievalHit {
                entry_id: i as u64,
                confidence,
                distance,
            })
            .collect()
    }

    #[test]
    fn worked_examples() {
        let p = HardPolicy::new(0.75).unwrap();
        let h = hits(&[0.5, 0.9, 1.2, 1.4], &[1.0, 0.9, 1.0, 0.8]);
        assert_eq!(hard_judge(&h, &p), (true, 0.5));
        assert_eq!(hard_judge(&hits(&[0.8], &[1.0]), &p), (false, 0.8));
        let (pass, score) = hard_judge(&hits(&[0.1], &[0.0]), &p);
        assert!(!pass);
        assert!(score.is_infinite());
        let (pass, score) = hard_judge::<f64>(&[], &p);
        assert!(!pass && score.is_infinite());
    }

    #[test]
    fn boundary_is_strict() {
        let p = HardPolicy::new(0.75).unwrap();
        assert!(!hard_judge(&hits(&[0.75], &[1.0]), &p).0);
        assert!(hard_judge(&hits(&[0.75f64.next_down()], &[1.0]), &p).0);
    }

    #[test]
    fn confidence_penalizes_distance() {
        // 0.375 / 0.5 = 0.75 exactly: refused even though the raw distance passes.
        let p = HardPolicy::new(0.75).unwrap();
        assert!(!hard_judge(&hits(&[0.375], &[0.5]), &p).0);
        assert!(hard_judge(&hits(&[0.375], &[1.0]), &p).0);
    }

    #[test]
    fn conjunction_truth_table() {
        assert!(combine(true, true));
        assert!(!combine(true, false));
        assert!(!combine(false, true));
        assert!(!combine(false, false));
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(HardPolicy::new(0.0f64).is_err());
        assert!(HardPolicy::new(-1.0f64).is_err());
        assert_eq!(HardPolicy::<f64>::default().alpha(), 0.75);
    }

    #[test]
    fn works_in_f32() {
        let p = HardPolicy::<f32>::new(0.75).unwrap();
        let h = [RetrievalHit { entry_id: 1, confidence: 0.9f32, distance: 0.5f32 }];
        assert!(hard_judge(&h, &p).0);
    }

    #[test]
    fn judgment_wire_form() {
        let j = Judgment::new(true, false, f64::INFINITY, 0.75);
        let s = serde_json::to_string(&j).unwrap();
        assert_eq!(s, r#"{"i_soft":1,"i_hard":0,"i_final":0,"min_score":null,"alpha":0.75}"#);
        let back: Judgment<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, j);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (1usize..=8).prop_flat_map(|k| {
            (
                prop::collection::vec(0.0f64..2.0, k),
                prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..=1.0], k),
                0.01f64..2.0,
            )
        })
    }

    proptest! {
        #[test]
        fn monotone_in_alpha((s, c, alpha) in instance(), bump in 0.0f64..2.0) {
            let h = hits(&s, &c);
            if hard_judge(&h, &HardPolicy::new(alpha).unwrap()).0 {
                prop_assert!(hard_judge(&h, &HardPolicy::new(alpha + bump).unwrap()).0);
            }
        }

        #[test]
        fn adding_hits_never_refuses((s, c, alpha) in instance(), extra_s in 0.0f64..2.0, extra_c in 0.0f64..=1.0) {
            let p = HardPolicy::new(alpha).unwrap();
            let h = hits(&s, &c);
            let mut more = h.clone();
            more.push(RetrievalHit { entry_id: 99, confidence: extra_c, distance: extra_s });
            let (a, sa) = hard_judge(&h, &p);
            let (b, sb) = hard_judge(&more, &p);
            prop_assert!(sb <= sa);
            prop_assert!(!a || b);
        }

        #[test]
        fn scale_invariant_decision((s, c, alpha) in instance(), pow in -4i32..4) {
            // Power-of-two factors keep every ratio bit-identical.
            let f = 2f64.powi(pow);
            let p = HardPolicy::new(alpha).unwrap();
            let scaled = hits(
                &s.iter().map(|x| x * f).collect::<Vec<_>>(),
                &c.iter().map(|x| x * f).collect::<Vec<_>>(),
            );
            prop_assert_eq!(hard_judge(&hits(&s, &c), &p).0, hard_judge(&scaled, &p).0);
        }
    }
}
