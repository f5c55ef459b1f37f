use autoskill_core::skill::{bump_patch, parse_skill_md, serialize_skill_md, slugify, SemVer, Skill, INITIAL_VERSION};
use proptest::prelude::*;
use uuid::Uuid;

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 _.,:;!?'\"#\\-]{0,40}",
        "\\PC{0,30}",
        Just(String::new()),
        Just("---".to_string()),
        Just("line one\nline two\ttab".to_string()),
        Just("引号 \"quoted\" 'single' \\ backslash".to_string()),
    ]
}

fn unique_list() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(text(), 0..5).prop_map(|mut v| {
        let mut seen = std::collections::HashSet::new();
        v.retain(|x| seen.insert(x.clone()));
        v
    })
}

prop_compose! {
    fn skill()(
        id in any::<u128>(),
        name in "[\\p{L}\\p{N}][\\PC]{0,30}",
        description in text(),
        body in text(),
        triggers in unique_list(),
        tags in unique_list(),
        examples in unique_list(),
        version in (0u64..5, 0u64..20, 0u64..200),
        confidence in prop::option::of(0.0f64..=1.0),
    ) -> Skill {
        Skill {
            id: Uuid::from_u128(id),
            name,
            description,
            prompt: format!("# Goal\n{body}\n\n# Constraints & Style\n- {body}"),
            triggers,
            tags,
            examples,
            version: SemVer::new(version.0, version.1, version.2),
            confidence,
            extra: vec![],
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn serialize_parse_round_trip(s in skill()) {
        prop_assume!(s.validate().is_ok());
        let doc = serialize_skill_md(&s);
        let parsed = parse_skill_md(&doc).unwrap();
        prop_assert_eq!(&parsed, &s);
        prop_assert_eq!(serialize_skill_md(&parsed), doc);
    }

    #[test]
    fn bump_is_strictly_increasing(major in 0u64..1000, minor in 0u64..1000, patch in 0u64..1_000_000) {
        let v = SemVer::new(major, minor, patch);
        let next = bump_patch(v);
        prop_assert!(next > v);
        prop_assert_eq!((next.major, next.minor, next.patch), (major, minor, patch + 1));
    }

    #[test]
    fn slug_is_idempotent(name in "\\PC{0,40}", id in any::<u128>()) {
        let id = Uuid::from_u128(id);
        let once = slugify(&name, &id);
        prop_assert_eq!(slugify(&once, &id), once.clone());
        prop_assert!(!once.is_empty());
        prop_assert!(!once.starts_with('-') && !once.ends_with('-'));
    }
}

#[test]
fn thirty_four_bumps() {
    let mut v = INITIAL_VERSION;
    for _ in 0..34 {
        v = bump_patch(v);
    }
    assert_eq!(v.to_string(), "0.1.34");
}
