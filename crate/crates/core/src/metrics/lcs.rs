//! Longest-common-substring partial credit.

use crate::ontology::SlotKind;
use crate::text;

/// Length of the longest common contiguous run of `a` and `b`.
pub fn longest_common_substring(a: &[char], b: &[char]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// The score as an exact fraction `(numerator, denominator)`, `denominator >= 1`.
///
/// Categorical values score 1 on normalized equality and 0 otherwise.
/// Free-form values score the common-substring length over the longer
/// normalized length.
pub fn value_score_ratio(pred: &str, gold: &str, kind: SlotKind) -> (u64, u64) {
    let p = text::normalize(pred);
    let g = text::normalize(gold);
    if p.is_empty() || g.is_empty() {
        return (0, 1);
    }
    if p == g {
        return (1, 1);
    }
    match kind {
        SlotKind::Categorical => (0, 1),
        SlotKind::FreeForm => {
            let pc: Vec<char> = p.chars().collect();
            let gc: Vec<char> = g.chars().collect();
            let common = longest_common_substring(&pc, &gc) as u64;
            (common, pc.len().max(gc.len()) as u64)
        }
    }
}

/// Partial-credit score in `[0, 1]`.
pub fn value_score(pred: &str, gold: &str, kind: SlotKind) -> f64 {
    let (n, d) = value_score_ratio(pred, gold, kind);
    n as f64 / d as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_example() {
        assert!((value_score("7 AM", "7:00 AM", SlotKind::FreeForm) - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(value_score_ratio("7 AM", "7:00 AM", SlotKind::FreeForm), (3, 7));
    }

    #[test]
    fn injury_example() {
        assert_eq!(value_score_ratio("neck pain", "neck", SlotKind::FreeForm), (4, 9));
    }

    #[test]
    fn categorical_is_exact() {
        assert_eq!(value_score("heavy", "light", SlotKind::Categorical), 0.0);
        assert_eq!(value_score("Heavy ", "heavy", SlotKind::Categorical), 1.0);
        assert_eq!(value_score("left", "left", SlotKind::FreeForm), 1.0);
    }

    #[test]
    fn symmetric_and_one_iff_equal() {
        let pairs = [("abc", "abd"), ("red car", "car"), ("x", "y"), ("Same", "same")];
        for (a, b) in pairs {
            let ab = value_score(a, b, SlotKind::FreeForm);
            assert_eq!(ab, value_score(b, a, SlotKind::FreeForm));
            assert_eq!(ab == 1.0, text::same_value(a, b));
        }
    }
}
