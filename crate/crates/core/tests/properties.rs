use proptest::prelude::*;

use thinkaudit_core::metrics::{bypass_gap, contains_canary, Anatomy, ProbeKind, ProbeOutcome};
use thinkaudit_core::stats::bootstrap_means;
use thinkaudit_core::text::normalize;
use thinkaudit_core::trace_parser::{parse_generation, ParserConvention, THINK_CLOSE, THINK_OPEN};
use thinkaudit_core::{BootstrapParams, PrefillArm};

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(THINK_OPEN.to_string()),
        Just(THINK_CLOSE.to_string()),
        Just("</think".to_string()),
        Just("<think".to_string()),
        Just("\n".to_string()),
        Just(" ".to_string()),
        "[a-z ]{0,12}",
        "\\PC{0,6}",
    ]
}

fn generation() -> impl Strategy<Value = String> {
    prop::collection::vec(fragment(), 0..10).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn parser_is_total_and_conventions_agree_when_closed(raw in generation()) {
        let e = parse_generation(&raw, ParserConvention::EmptyThink);
        let f = parse_generation(&raw, ParserConvention::FullThink);
        prop_assert_eq!(e.well_formed, raw.contains(THINK_CLOSE));
        prop_assert_eq!(e.well_formed, f.well_formed);
        if e.well_formed {
            prop_assert_eq!(&e, &f);
            prop_assert!(!e.thinking.contains(THINK_CLOSE));
        } else {
            prop_assert!(e.thinking.is_empty());
            prop_assert!(f.answer.is_empty());
            prop_assert_eq!(e.answer, raw.trim());
        }
    }

    #[test]
    fn split_is_at_first_close(think in "[a-z ]{0,20}", rest in generation()) {
        let raw = format!("{THINK_OPEN}{think}{THINK_CLOSE}{rest}");
        let p = parse_generation(&raw, ParserConvention::FullThink);
        prop_assert_eq!(p.thinking, think.trim());
        prop_assert_eq!(p.answer, rest.trim_start());
    }

    #[test]
    fn convention_flip_moves_unclosed_text(body in "[a-z ]{1,30}") {
        prop_assume!(!body.trim().is_empty());
        let e = parse_generation(&body, ParserConvention::EmptyThink);
        let f = parse_generation(&body, ParserConvention::FullThink);
        prop_assert_eq!(&e.answer, &f.thinking);
        prop_assert!(e.thinking.is_empty() && f.answer.is_empty());
    }

    #[test]
    fn containment_survives_padding(target in "[a-z]{1,8}( [a-z]{1,8}){0,3}", pre in "\\PC{0,10}", post in "\\PC{0,10}") {
        let seg = format!("{pre} {target} {post}");
        prop_assert!(contains_canary(&seg, &target).unwrap());
        // Whitespace runs inside the target do not matter.
        let spaced = target.replace(' ', " \n\t ");
        prop_assert!(contains_canary(&seg, &spaced).unwrap());
    }

    #[test]
    fn containment_is_monotone_in_target(seg in "[a-z ]{10,40}", start in 0.0f64..1.0, len in 1usize..10) {
        let norm = normalize(&seg);
        let chars: Vec<char> = norm.chars().collect();
        let start = (start * chars.len() as f64) as usize;
        prop_assume!(start + len <= chars.len());
        let sub: String = chars[start..start + len].iter().collect();
        prop_assume!(!sub.trim().is_empty());
        let sub = sub.trim().to_string();
        prop_assert!(contains_canary(&seg, &sub).unwrap());
        // Any piece of a contained target is contained.
        let half: String = sub.chars().take(sub.chars().count().div_ceil(2)).collect();
        if !half.trim().is_empty() {
            prop_assert!(contains_canary(&seg, half.trim()).unwrap());
        }
    }

    #[test]
    fn gap_is_antisymmetric(hits in prop::collection::vec((any::<bool>(), any::<bool>()), 2..40)) {
        let outcomes = |swap: bool| -> Vec<ProbeOutcome> {
            hits.iter()
                .enumerate()
                .map(|(i, (o, t))| {
                    let (out_hit, thk_hit) = if swap { (*t, *o) } else { (*o, *t) };
                    ProbeOutcome {
                        adapter_id: "a".into(),
                        author_id: format!("x{i:03}"),
                        probe_index: 0,
                        arm: PrefillArm::Auto,
                        kind: ProbeKind::Canary,
                        out_hit,
                        thk_hit,
                        thk_emitted: true,
                        answer_len_chars: 0,
                        anatomy: Anatomy::NotBypass,
                    }
                })
                .collect()
        };
        let params = BootstrapParams { n_boot: 200, ..BootstrapParams::default() };
        let g = bypass_gap(&outcomes(false), &params).unwrap();
        let s = bypass_gap(&outcomes(true), &params).unwrap();
        prop_assert!((g.gap + s.gap).abs() < 1e-12);
        // Same seed, same resample indices: the replicate means mirror.
        let diffs: Vec<f64> = hits.iter().map(|(o, t)| *t as u8 as f64 - *o as u8 as f64).collect();
        let neg: Vec<f64> = diffs.iter().map(|d| -d).collect();
        let a = bootstrap_means(&diffs, 200, 0);
        let b = bootstrap_means(&neg, 200, 0);
        prop_assert!(a.iter().zip(b.iter().rev()).all(|(x, y)| (x + y).abs() < 1e-12));
        prop_assert!(g.ci.lo <= g.gap && g.gap <= g.ci.hi);
    }
}

#[test]
fn empty_target_is_rejected() {
    assert!(contains_canary("anything", " \n").is_err());
}

#[test]
fn nfc_forms_match() {
    // Decomposed e + combining acute against the precomposed form.
    assert!(contains_canary("caf\u{0065}\u{0301} noir", "caf\u{00e9}").unwrap());
}
