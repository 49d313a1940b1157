//! Final-answer normalization and majority voting. Normalization makes
//! self-consistency voting well-defined: surface variants of the same answer
//! must land in the same bucket.

use std::collections::BTreeMap;

/// Normalize a raw final answer:
///
/// - trim surrounding whitespace,
/// - strip trailing sentence punctuation,
/// - canonicalize plain numerics ("32." -> "32", "3.50" -> "3.5",
///   "1,000" -> "1000"); fractions like "1/2" are preserved verbatim,
/// - lowercase non-numeric answers.
pub fn normalize_answer(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    while let Some(last) = s.chars().last() {
        if matches!(last, '.' | ',' | ';' | ':' | '!' | '?') {
            s.pop();
        } else {
            break;
        }
    }
    let s = s.trim().to_string();
    if let Some(canon) = canonicalize_numeric(&s) {
        return canon;
    }
    s.to_lowercase()
}

fn is_plain_number(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    if body.is_empty() {
        return false;
    }
    let mut seen_dot = false;
    let mut seen_digit = false;
    for ch in body.chars() {
        match ch {
            '0'..='9' => seen_digit = true,
            '.' if !seen_dot => seen_dot = true,
            _ => return false,
        }
    }
    seen_digit
}

fn canonicalize_numeric(s: &str) -> Option<String> {
    // Strip thousands separators when the comma pattern is exact.
    let candidate = if is_comma_grouped(s) { s.replace(',', "") } else { s.to_string() };
    if !is_plain_number(&candidate) {
        return None;
    }
    // Very long digit strings would lose precision through f64; leave them.
    if candidate.chars().filter(|c| c.is_ascii_digit()).count() > 15 {
        return Some(candidate);
    }
    let value: f64 = candidate.parse().ok()?;
    if value == value.trunc() && value.abs() < 9.0e15 {
        Some(format!("{}", value as i64))
    } else {
        Some(format!("{value}"))
    }
}

fn is_comma_grouped(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let int_part = body.split('.').next().unwrap_or("");
    let groups: Vec<&str> = int_part.split(',').collect();
    if groups.len() < 2 {
        return false;
    }
    if groups[0].is_empty() || groups[0].len() > 3 || !groups[0].chars().all(|c| c.is_ascii_digit())
    {
        return false;
    }
    groups[1..].iter().all(|g| g.len() == 3 && g.chars().all(|c| c.is_ascii_digit()))
        && body.split('.').skip(1).all(|frac| frac.chars().all(|c| c.is_ascii_digit()))
}

/// Index of the answer holding a unique plurality among `answers`
/// (already normalized). `None` on a tie for first place.
pub fn majority_index(answers: &[String]) -> Option<usize> {
    if answers.is_empty() {
        return None;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a.as_str()).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap();
    let winners: Vec<&str> =
        counts.iter().filter(|(_, c)| **c == best).map(|(a, _)| *a).collect();
    if winners.len() != 1 {
        return None;
    }
    answers.iter().position(|a| a == winners[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trims_and_strips_trailing_punctuation() {
        assert_eq!(normalize_answer(" 32. "), "32");
    }

    #[test]
    fn preserves_fractions_verbatim() {
        assert_eq!(normalize_answer("1/2"), "1/2");
    }

    // Hand-built normalization table.
    #[test]
    fn hand_normalization_table() {
        let table: &[(&str, &str)] = &[
            (" 32. ", "32"),
            ("1/2", "1/2"),
            ("32", "32"),
            ("32.0", "32"),
            ("3.50", "3.5"),
            ("-4.", "-4"),
            ("+7", "7"),
            ("0.25", "0.25"),
            ("1,000", "1000"),
            ("12,345.60", "12345.6"),
            ("1,00", "1,00"), // not a valid thousands grouping, kept as text
            ("Yes.", "yes"),
            ("  The Answer  ", "the answer"),
            ("x = 4", "x = 4"),
            ("42?!", "42"),
            ("", ""),
            ("...", ""),
            ("0", "0"),
            ("-0", "0"),
            ("seventy-two", "seventy-two"),
        ];
        for (raw, want) in table {
            assert_eq!(&normalize_answer(raw), want, "raw = {raw:?}");
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        for raw in [" 32. ", "1/2", "Yes.", "3.50", "1,000", "x = 4"] {
            let once = normalize_answer(raw);
            assert_eq!(normalize_answer(&once), once);
        }
    }

    #[test]
    fn majority_takes_unique_plurality() {
        let answers: Vec<String> = ["10", "12", "10"].iter().map(|s| s.to_string()).collect();
        // Counting oracle: brute-force counts.
        let mut counts = std::collections::HashMap::new();
        for a in &answers {
            *counts.entry(a.clone()).or_insert(0usize) += 1;
        }
        let oracle = counts.into_iter().max_by_key(|(_, c)| *c).unwrap().0;
        let idx = majority_index(&answers).unwrap();
        assert_eq!(answers[idx], oracle);
        assert_eq!(answers[idx], "10");
    }

    #[test]
    fn majority_tie_is_none() {
        let answers: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(majority_index(&answers), None);
        let answers: Vec<String> = ["a", "b", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(majority_index(&answers), None);
    }

    #[test]
    fn single_sample_is_its_own_majority() {
        let answers = vec!["32".to_string()];
        assert_eq!(majority_index(&answers), Some(0));
    }
}
