//! Generated substitution cases and a word-level reference implementation.

#![allow(dead_code)]

use proptest::prelude::*;
use seedforge::model::{Document, Entity, EntityMapping, MappingPair, Sample};
use seedforge::transform::apply_mapping;

const SEED_WORDS: [&str; 5] = ["alpha", "beta", "gamma", "delta", "omega"];
const FILLER: [&str; 6] = ["the", "of", "and", "café", "naïve", "x9"];
const FRESH: [&str; 8] = [
    "zork", "quux", "blip", "frob", "narf", "gleep", "wibble", "plugh",
];
const SEPARATORS: [&str; 5] = [" ", ", ", " · ", ". ", "\n"];

#[derive(Debug, Clone)]
pub struct Case {
    pub seeds: Vec<Vec<String>>,
    pub replacements: Vec<String>,
    pub words: Vec<String>,
    /// `separators[i]` follows `words[i]`; the last one is a trailing suffix.
    pub separators: Vec<String>,
}

impl Case {
    pub fn text(&self) -> String {
        self.words
            .iter()
            .zip(&self.separators)
            .map(|(w, s)| format!("{w}{s}"))
            .collect()
    }

    pub fn mapping(&self) -> EntityMapping {
        let pairs = self
            .seeds
            .iter()
            .zip(&self.replacements)
            .map(|(s, r)| MappingPair {
                seed: Entity::new(s.join(" "), "t"),
                replacement: Entity::new(r.clone(), "t"),
            })
            .collect();
        EntityMapping::new(pairs, vec![]).expect("generated mapping is valid")
    }

    /// Leftmost scan over word positions taking the longest seed that matches
    /// words joined by single spaces; replaced words are never rescanned.
    pub fn expected(&self) -> String {
        let mut out = String::new();
        let mut i = 0;
        while i < self.words.len() {
            let hit = self
                .seeds
                .iter()
                .enumerate()
                .filter(|(_, s)| {
                    i + s.len() <= self.words.len()
                        && s.iter().zip(&self.words[i..]).all(|(a, b)| a == b)
                        && self.separators[i..i + s.len() - 1]
                            .iter()
                            .all(|sep| sep == " ")
                })
                .max_by_key(|(k, s)| (s.len(), std::cmp::Reverse(*k)));
            match hit {
                Some((k, s)) => {
                    out.push_str(&self.replacements[k]);
                    out.push_str(&self.separators[i + s.len() - 1]);
                    i += s.len();
                }
                None => {
                    out.push_str(&self.words[i]);
                    out.push_str(&self.separators[i]);
                    i += 1;
                }
            }
        }
        out
    }
}

fn phrase(max_words: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&SEED_WORDS[..]), 1..=max_words)
        .prop_map(|ws| ws.into_iter().map(str::to_owned).collect())
}

/// `fresh_only`: replacements are single words absent from every text, so
/// the inverse mapping is unambiguous.
pub fn case_strategy(fresh_only: bool) -> impl Strategy<Value = Case> {
    let seeds = prop::collection::btree_set(phrase(3), 1..=4)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>());
    seeds.prop_flat_map(move |seeds| {
        let n = seeds.len();
        let replacements = if fresh_only {
            prop::sample::subsequence(&FRESH[..], n)
                .prop_shuffle()
                .prop_map(|v| v.into_iter().map(str::to_owned).collect::<Vec<_>>())
                .boxed()
        } else {
            // Fresh word plus an optional seed word, so rescanning would be visible.
            (
                prop::sample::subsequence(&FRESH[..], n).prop_shuffle(),
                prop::collection::vec(prop::option::of(prop::sample::select(&SEED_WORDS[..])), n),
            )
                .prop_map(|(fresh, extra)| {
                    fresh
                        .into_iter()
                        .zip(extra)
                        .map(|(f, e)| e.map_or(f.to_owned(), |e| format!("{f} {e}")))
                        .collect::<Vec<_>>()
                })
                .boxed()
        };
        let seeds_for_text = seeds.clone();
        let token = prop_oneof![
            prop::sample::select(seeds_for_text).prop_map(|p| p),
            prop::sample::select(&SEED_WORDS[..]).prop_map(|w| vec![w.to_owned()]),
            prop::sample::select(&FILLER[..]).prop_map(|w| vec![w.to_owned()]),
        ];
        let tokens = prop::collection::vec((token, prop::sample::select(&SEPARATORS[..])), 0..20);
        (Just(seeds), replacements, tokens).prop_map(|(seeds, replacements, tokens)| {
            let mut words = Vec::new();
            let mut separators = Vec::new();
            for (phrase, sep) in tokens {
                let k = phrase.len();
                for (j, w) in phrase.into_iter().enumerate() {
                    words.push(w);
                    separators.push(if j + 1 == k {
                        sep.to_owned()
                    } else {
                        " ".to_owned()
                    });
                }
            }
            Case {
                seeds,
                replacements,
                words,
                separators,
            }
        })
    })
}

/// Wraps `text` in every text role of a sample.
pub fn sample_with(text: &str) -> Sample {
    Sample::new("s", text, text)
        .with_contexts(vec![Document::new("d", text, text)])
        .with_choices(vec![text.to_owned()])
}

/// Checks the four substitution properties on one case.
pub fn check(case: &Case) -> Result<(), String> {
    let text = case.text();
    let mapping = case.mapping();
    let out = apply_mapping(&sample_with(&text), &mapping);
    let expected = case.expected();
    for (role, got) in [
        ("question", &out.question),
        ("answer", &out.answer),
        ("title", &out.contexts[0].title),
        ("body", &out.contexts[0].body),
        ("choice", &out.choices()[0]),
    ] {
        if *got != expected {
            return Err(format!(
                "{role}: {text:?} -> {got:?}, expected {expected:?}"
            ));
        }
    }
    // Bytes outside matched seeds: identical separators and non-seed words.
    let seps_out: Vec<&str> = out
        .question
        .split(|c: char| c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect();
    let seps_exp: Vec<&str> = expected
        .split(|c: char| c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect();
    if seps_out != seps_exp {
        return Err("separator bytes changed".into());
    }
    Ok(())
}

/// `apply_mapping(apply_mapping(x, m), m⁻¹) == x` for fresh single-word replacements.
pub fn check_inverse(case: &Case) -> Result<(), String> {
    let text = case.text();
    let mapping = case.mapping();
    let there = apply_mapping(&sample_with(&text), &mapping);
    let back = apply_mapping(&there, &mapping.inverse());
    if back != sample_with(&text) {
        return Err(format!(
            "{text:?} -> {:?} -> {:?}",
            there.question, back.question
        ));
    }
    Ok(())
}
