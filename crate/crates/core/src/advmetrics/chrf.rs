use std::collections::HashMap;

/// Trims and collapses internal whitespace runs to one space.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Character n-gram F-score on a 0–100 scale.
///
/// Precision and recall are computed per order `1..=max_n` (orders where
/// neither string has an n-gram are skipped), averaged across orders, then
/// combined as `F_β`. Two empty strings score 100.
pub fn chrf(reference: &str, hypothesis: &str, max_n: usize, beta: f64) -> f64 {
    let r: Vec<char> = normalize_whitespace(reference).chars().collect();
    let h: Vec<char> = normalize_whitespace(hypothesis).chars().collect();
    if r.is_empty() && h.is_empty() {
        return 100.0;
    }
    let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=max_n.max(1) {
        let rc = ngram_counts(&r, n);
        let hc = ngram_counts(&h, n);
        let r_total: usize = rc.values().sum();
        let h_total: usize = hc.values().sum();
        if r_total == 0 && h_total == 0 {
            continue;
        }
        let matches: usize = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
        p_sum += if h_total > 0 { matches as f64 / h_total as f64 } else { 0.0 };
        r_sum += if r_total > 0 { matches as f64 / r_total as f64 } else { 0.0 };
        orders += 1;
    }
    let p = p_sum / orders as f64;
    let rec = r_sum / orders as f64;
    let b2 = beta * beta;
    if p == 0.0 && rec == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + b2) * p * rec / (b2 * p + rec)
}

/// `chrf` with the usual settings: orders up to 6 and `β = 2`.
pub fn chrf2(reference: &str, hypothesis: &str) -> f64 {
    chrf(reference, hypothesis, 6, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        assert_eq!(chrf2("the cat", "the cat"), 100.0);
        assert_eq!(chrf2("abc", "xyz"), 0.0);
        assert_eq!(chrf2("", ""), 100.0);
        assert_eq!(chrf2("  a   b ", "a b"), 100.0);
    }

    #[test]
    fn prefix_hypothesis_hand_value() {
        // Orders 1..3 have perfect precision and recall 3/4, 2/3, 1/2;
        // order 4 has one reference n-gram and no hypothesis n-grams.
        let p = 3.0 / 4.0;
        let r = (3.0 / 4.0 + 2.0 / 3.0 + 1.0 / 2.0) / 4.0;
        let expected = 100.0 * 5.0 * p * r / (4.0 * p + r);
        assert!((chrf2("abcd", "abc") - expected).abs() < 1e-9);
        assert!((expected - 51.6467).abs() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bounded_and_maximal_on_identity(a in "[ab c]{0,20}", b in "[ab c]{0,20}") {
                let s = chrf2(&a, &b);
                prop_assert!((0.0..=100.0).contains(&s));
                prop_assert_eq!(chrf2(&a, &a), 100.0);
            }

            #[test]
            fn whitespace_runs_do_not_matter(a in "[ab c]{0,20}", b in "[ab c]{0,20}") {
                let spaced = a.replace(' ', "   ");
                prop_assert_eq!(chrf2(&a, &b), chrf2(&spaced, &b));
            }
        }
    }
}
