mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toolkd_core::chat_format::render_generation;
use toolkd_core::similarity::{lcs_length, rouge_l_f1, TokenSequence};
use toolkd_core::{parse_generation, validate_format, ToolCall, TypedValue};

fn template_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("<think>".to_string()),
        Just("</think>".to_string()),
        Just("<tool_call>".to_string()),
        Just("</tool_call>".to_string()),
        Just("{\"name\": \"f\", \"arguments\": {}}".to_string()),
        "[a-z {}\":,\\[\\]\n]{0,6}",
        any::<char>().prop_map(|c| c.to_string()),
    ];
    prop::collection::vec(piece, 0..12).prop_map(|v| v.concat())
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "A", "d"]).prop_map(String::from)
}

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..=max).prop_map(|w| w.join(" "))
}

fn call() -> impl Strategy<Value = ToolCall> {
    let value = prop_oneof![
        "[a-z ]{0,8}".prop_map(TypedValue::from),
        (-5i64..5).prop_map(TypedValue::from),
        any::<bool>().prop_map(TypedValue::from),
    ];
    ("[a-z_]{1,8}", prop::collection::vec(("[a-z]{1,4}", value), 0..4)).prop_map(|(name, args)| {
        args.into_iter().fold(ToolCall::new(name), |c, (k, v)| c.arg(k, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn parsing_is_total(raw in template_text()) {
        let parsed = parse_generation(&raw);
        let schema = random_schema(&mut ChaCha8Rng::seed_from_u64(raw.len() as u64));
        let check = validate_format(&parsed, &schema);
        prop_assert!(check.reward <= 1);
        prop_assert_eq!(check.reward == 1, check.violations.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn render_round_trips(
        think in "[a-z .]{0,20}",
        calls in prop::collection::vec(call(), 0..4),
        response in "[a-z][a-z .]{0,20}|",
    ) {
        let response = response.trim().to_string();
        let text = render_generation(Some(&think), &calls, &response);
        let parsed = parse_generation(&text);
        prop_assert!(parsed.raw_errors.is_empty(), "{:?}", parsed.raw_errors);
        prop_assert_eq!(parsed.think.as_deref(), Some(think.as_str()));
        prop_assert_eq!(&parsed.tool_calls, &calls);
        prop_assert_eq!(&parsed.response_text, &response);
        prop_assert_eq!(parse_generation(&parsed.render()), parsed);
    }

    #[test]
    fn rouge_is_bounded_and_symmetric(a in sentence(8), b in sentence(8)) {
        let ab = rouge_l_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, rouge_l_f1(&b, &a));
        prop_assert_eq!(rouge_l_f1(&a, &a), 1.0);
        prop_assert_eq!(rouge_l_f1(&a.to_uppercase(), &a), 1.0);
    }

    #[test]
    fn lcs_agrees_with_brute_force(a in sentence(6), b in sentence(6)) {
        let dp = lcs_length(&TokenSequence::tokenize(&a), &TokenSequence::tokenize(&b));
        prop_assert_eq!(dp, brute_lcs(&tokens(&a), &tokens(&b)));
        prop_assert!((rouge_l_f1(&a, &b) - oracle_rouge(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn appending_a_shared_token_never_lowers_the_lcs(a in sentence(6), b in sentence(6), w in word()) {
        let before = lcs_length(&TokenSequence::tokenize(&a), &TokenSequence::tokenize(&b));
        let after = lcs_length(
            &TokenSequence::tokenize(&format!("{a} {w}")),
            &TokenSequence::tokenize(&format!("{b} {w}")),
        );
        prop_assert_eq!(after, before + 1);
    }
}
