//! Text normalization and span matching shared by substitution and answer scoring.

use unicode_normalization::UnicodeNormalization;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalizes free text for answer comparison.
///
/// NFKC, lowercase, every non-alphanumeric character (punctuation, dashes,
/// apostrophes) becomes a space, the articles `a`/`an`/`the` are dropped and
/// whitespace is collapsed.
pub fn normalize_answer(text: &str) -> String {
    answer_tokens(text).join(" ")
}

/// Token view of [`normalize_answer`].
pub fn answer_tokens(text: &str) -> Vec<String> {
    let folded: String = text
        .nfkc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect()
}

/// Identity form of an entity surface: NFKC, lowercase, single spaces.
pub fn normalize_surface(surface: &str) -> String {
    let folded: String = surface.nfkc().flat_map(char::to_lowercase).collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical form of a type or relation label: `Has Member`, `has-member`
/// and `has_member` all become `has_member`.
pub fn normalize_label(label: &str) -> String {
    let folded: String = label
        .nfkc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join("_")
}

/// True when `needle` occurs in `haystack` as a contiguous run of whole tokens.
pub fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn chars_eq_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Byte length of the prefix of `text` that case-insensitively equals `pattern`.
fn match_len_ci(text: &str, pattern: &str) -> Option<usize> {
    let mut consumed = 0;
    let mut text_chars = text.chars();
    for p in pattern.chars() {
        let t = text_chars.next()?;
        if !chars_eq_ci(t, p) {
            return None;
        }
        consumed += t.len_utf8();
    }
    Some(consumed)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// A located pattern occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanMatch {
    pub start: usize,
    pub end: usize,
    pub pattern: usize,
}

/// Finds non-overlapping, case-insensitive, word-bounded occurrences of any
/// pattern, scanning leftmost-first and taking the longest pattern at each
/// position (ties go to the lower pattern index).
///
/// A match is word-bounded when the characters immediately before and after
/// it are not alphanumeric, so `Band` matches inside `Band's` but not inside
/// `Bandit`.
pub fn find_spans<S: AsRef<str>>(text: &str, patterns: &[S]) -> Vec<SpanMatch> {
    let mut out = Vec::new();
    let mut prev: Option<char> = None;
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let boundary_before = prev.is_none_or(|c| !is_word_char(c));
        let mut best: Option<(usize, usize)> = None;
        if boundary_before {
            for (idx, pattern) in patterns.iter().enumerate() {
                let pattern = pattern.as_ref();
                if pattern.is_empty() {
                    continue;
                }
                let Some(len) = match_len_ci(rest, pattern) else {
                    continue;
                };
                let boundary_after = rest[len..].chars().next().is_none_or(|c| !is_word_char(c));
                if boundary_after && best.is_none_or(|(_, l)| len > l) {
                    best = Some((idx, len));
                }
            }
        }
        match best {
            Some((idx, len)) => {
                out.push(SpanMatch {
                    start: pos,
                    end: pos + len,
                    pattern: idx,
                });
                prev = text[..pos + len].chars().next_back();
                pos += len;
            }
            None => {
                let c = rest.chars().next().expect("non-empty rest");
                prev = Some(c);
                pos += c.len_utf8();
            }
        }
    }
    out
}

/// Pulls the first JSON object out of model output, tolerating code fences
/// and prose around it.
pub fn json_object(text: &str) -> Option<serde_json::Value> {
    let start = text.find('{')?;
    let mut stream =
        serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
    match stream.next() {
        Some(Ok(v)) if v.is_object() => Some(v),
        _ => None,
    }
}

/// Case-insensitive, word-bounded containment of a single surface.
pub fn mentions(text: &str, surface: &str) -> bool {
    !surface.trim().is_empty() && !find_spans(text, &[surface]).is_empty()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CaseShape {
    Upper,
    Lower,
    Other,
}

fn case_shape(s: &str) -> CaseShape {
    let mut letters = s.chars().filter(|c| c.is_alphabetic()).peekable();
    if letters.peek().is_none() {
        return CaseShape::Other;
    }
    let (mut upper, mut lower) = (true, true);
    for c in letters {
        upper &= !c.is_lowercase();
        lower &= !c.is_uppercase();
    }
    match (upper, lower) {
        (true, false) => CaseShape::Upper,
        (false, true) => CaseShape::Lower,
        _ => CaseShape::Other,
    }
}

/// Renders `replacement` with the capitalization shape of `mention`, a
/// case-insensitive occurrence of `seed`.
pub fn shape_like(mention: &str, seed: &str, replacement: &str) -> String {
    if mention == seed {
        return replacement.to_owned();
    }
    let mention_shape = case_shape(mention);
    let seed_shape = case_shape(seed);
    if mention_shape != seed_shape {
        match mention_shape {
            CaseShape::Upper => return replacement.to_uppercase(),
            CaseShape::Lower => return replacement.to_lowercase(),
            CaseShape::Other => {}
        }
    }
    let mention_first_upper = mention.chars().next().is_some_and(char::is_uppercase);
    let seed_first_lower = seed.chars().next().is_some_and(char::is_lowercase);
    if mention_first_upper && seed_first_lower {
        let mut chars = replacement.chars();
        if let Some(first) = chars.next() {
            return first.to_uppercase().chain(chars).collect();
        }
    }
    replacement.to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dash_variants_collapse() {
        assert_eq!(normalize_answer("Italian--Scottish"), "italian scottish");
        assert_eq!(
            normalize_answer("italian–scottish heritage"),
            "italian scottish heritage"
        );
        assert_eq!(normalize_answer("  The  Mexican. "), "mexican");
    }

    #[test]
    fn json_object_skips_fences_and_prose() {
        let v =
            json_object("Sure!\n```json\n{\"a\": [1, {\"b\": 2}]}\n```\nDone {not json}").unwrap();
        assert_eq!(v["a"][1]["b"], 2);
        assert!(json_object("no object here").is_none());
        assert!(json_object("{\"a\": ").is_none());
    }

    #[test]
    fn labels_canonicalize() {
        assert_eq!(normalize_label("Has Member"), "has_member");
        assert_eq!(normalize_label("has-member"), "has_member");
        assert_eq!(normalize_label(" has__member "), "has_member");
    }

    #[test]
    fn longest_match_wins() {
        let spans = find_spans("New York", &["York", "New York"]);
        assert_eq!(
            spans,
            vec![SpanMatch {
                start: 0,
                end: 8,
                pattern: 1
            }]
        );
    }

    #[test]
    fn word_boundaries_respected() {
        assert!(find_spans("Bandit", &["Band"]).is_empty());
        let spans = find_spans("Band's singer", &["Band"]);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].end, 4);
    }

    #[test]
    fn case_insensitive_with_unicode() {
        let text = "JĀNIS and jānis";
        let spans = find_spans(text, &["Jānis"]);
        assert_eq!(spans.len(), 2);
        assert_eq!(&text[spans[0].start..spans[0].end], "JĀNIS");
        assert_eq!(&text[spans[1].start..spans[1].end], "jānis");
    }

    #[test]
    fn case_shapes() {
        assert_eq!(shape_like("Paris", "Paris", "Veloria"), "Veloria");
        assert_eq!(shape_like("PARIS", "Paris", "Veloria"), "VELORIA");
        assert_eq!(shape_like("paris", "Paris", "Veloria"), "veloria");
        assert_eq!(shape_like("Cosmos", "cosmos", "aetherius"), "Aetherius");
    }
}
