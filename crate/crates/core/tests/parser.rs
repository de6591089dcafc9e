//! Fuzzed round-trips of valid completions and classified mutations.

mod common;

use coe_core::event::{parse_completion, Event};
use common::{mutate, Defect, Valid, ALL_DEFECTS, WORDS};
use proptest::prelude::*;

fn phrase(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..=max).prop_map(|w| w.join(" "))
}

fn valid_completion() -> impl Strategy<Value = Valid> {
    let event = (0u32..100, 0u32..30, phrase(3));
    (prop::collection::vec(event, 1..6), prop::option::of(phrase(6)), phrase(3)).prop_map(
        |(mut raw, reasoning, answer)| {
            raw.sort_by_key(|(start, _, _)| *start);
            let events = raw
                .into_iter()
                .map(|(s, d, desc)| Event::new(s as f64 / 10.0, (s + d) as f64 / 10.0, desc).unwrap())
                .collect();
            Valid {
                events,
                reasoning: reasoning.unwrap_or_default(),
                answer,
            }
        },
    )
}

fn defect() -> impl Strategy<Value = Defect> {
    prop::sample::select(ALL_DEFECTS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn valid_completions_round_trip(v in valid_completion()) {
        let text = v.render();
        let parsed = parse_completion(&text);
        prop_assert!(parsed.tag_valid, "{:?}", parsed.diagnostics);
        prop_assert_eq!(&parsed.chain.events, &v.events);
        prop_assert_eq!(&parsed.reasoning_text, &v.reasoning);
        prop_assert_eq!(parsed.answer.as_deref(), Some(v.answer.as_str()));
        prop_assert_eq!(parsed.to_canonical(), text);
    }

    #[test]
    fn mutations_are_flagged_with_their_class(v in valid_completion(), d in defect(), at in 0usize..8) {
        let text = mutate(&v, d, at);
        let parsed = parse_completion(&text);
        prop_assert!(!parsed.tag_valid, "{d:?} accepted: {text}");
        prop_assert!(parsed.has_rule(d.rule()), "{d:?} gave {:?} on {text}", parsed.diagnostics);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let parsed = parse_completion(&text);
        prop_assert_eq!(parsed.tag_valid, parsed.diagnostics.is_empty());
    }
}
