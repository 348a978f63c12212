use audit_core::parser::{parse_payload, parse_response, AssessmentPayload};
use audit_core::RejectReason;
use proptest::prelude::*;

fn payload() -> impl Strategy<Value = AssessmentPayload> {
    (
        0u8..=6,
        prop::sample::subsequence((2u8..=10).collect::<Vec<_>>(), 0..=9).prop_shuffle(),
        prop::sample::subsequence((1u8..=8).collect::<Vec<_>>(), 0..=8).prop_shuffle(),
        0u8..=3,
    )
        .prop_map(|(level, mut risk_types, evidence_signals, uncertainty)| {
            if level >= 2 && risk_types.is_empty() {
                risk_types.push(4);
            }
            AssessmentPayload {
                window_has_risk: u8::from(level >= 1),
                overall_risk_level: level,
                risk_types,
                evidence_signals,
                uncertainty,
            }
        })
}

proptest! {
    #[test]
    fn conformant_payloads_round_trip(p in payload()) {
        let text = p.to_json();
        let a = parse_response("w", "m", &text).unwrap();
        prop_assert_eq!(a.payload(), p.clone());
        prop_assert_eq!(parse_payload(&a.payload().to_json()).unwrap(), p);
    }

    #[test]
    fn out_of_set_level_is_out_of_range(level in -5i64..=15) {
        prop_assume!(!(0..=6).contains(&level));
        let text = format!(
            r#"{{"window_has_risk":1,"overall_risk_level":{level},"risk_types":[2],"evidence_signals":[1],"uncertainty":1}}"#
        );
        let fault = parse_payload(&text).unwrap_err();
        prop_assert_eq!(fault.reason, RejectReason::CodeOutOfRange);
        prop_assert_eq!(fault.field_path, "$.overall_risk_level");
    }

    #[test]
    fn out_of_set_codes_are_out_of_range(code in -5i64..=15, field in 0usize..3) {
        let (name, valid): (&str, std::ops::RangeInclusive<i64>) = match field {
            0 => ("risk_types", 2..=10),
            1 => ("evidence_signals", 1..=8),
            _ => ("uncertainty", 0..=3),
        };
        prop_assume!(!valid.contains(&code));
        let text = match field {
            0 => format!(r#"{{"window_has_risk":1,"overall_risk_level":3,"risk_types":[{code}],"evidence_signals":[1],"uncertainty":1}}"#),
            1 => format!(r#"{{"window_has_risk":1,"overall_risk_level":3,"risk_types":[2],"evidence_signals":[{code}],"uncertainty":1}}"#),
            _ => format!(r#"{{"window_has_risk":1,"overall_risk_level":3,"risk_types":[2],"evidence_signals":[1],"uncertainty":{code}}}"#),
        };
        let fault = parse_payload(&text).unwrap_err();
        prop_assert_eq!(fault.reason, RejectReason::CodeOutOfRange);
        prop_assert!(fault.field_path.starts_with(&format!("$.{name}")), "{} vs {}", fault.field_path, name);
    }

    #[test]
    fn any_text_gets_exactly_one_outcome(text in ".{0,80}") {
        // Totality: either accepted or rejected with one reason, never a panic.
        let _ = parse_payload(&text);
    }
}
