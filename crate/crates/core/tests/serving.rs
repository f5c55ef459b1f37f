use std::sync::Arc;
use std::time::{Duration, Instant};

use autoskill_core::bank::BankScope;
use autoskill_core::config::AppConfig;
use autoskill_core::llm::{ChatMessage, MockBackend, MockRule, MockScenario, PromptRole, PromptTemplates};
use autoskill_core::serving::{render_context, Engine, TurnRequest, CONTEXT_HEADER};
use autoskill_core::skill::{Skill, SkillCandidate};
use uuid::Uuid;

fn engine(scenario: MockScenario, tweak: impl FnOnce(&mut AppConfig)) -> (tempfile::TempDir, Arc<MockBackend>, Engine) {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = AppConfig::default();
    config.bank.root = Some(tmp.path().to_path_buf());
    config.evolution.id_seed = Some(5);
    tweak(&mut config);
    let mock = Arc::new(MockBackend::new(scenario));
    let engine = Engine::new(config, mock.clone(), mock.clone(), PromptTemplates::builtin());
    (tmp, mock, engine)
}

fn skill(name: &str, triggers: &[&str], prompt_body: &str) -> Skill {
    Skill::from_candidate(
        Uuid::new_v4(),
        &SkillCandidate {
            name: name.into(),
            description: format!("Helps with {name}"),
            prompt: format!("# Goal\n{prompt_body}\n\n# Constraints & Style\n- keep it short"),
            triggers: triggers.iter().map(|s| s.to_string()).collect(),
            tags: vec!["writing".into(), "style".into()],
            examples: vec![],
            confidence: 0.9,
        },
    )
}

fn alice() -> BankScope {
    BankScope::user("alice").unwrap()
}

#[test]
fn empty_selection_renders_nothing() {
    assert_eq!(render_context("q", std::iter::empty()).text, "");
}

#[test]
fn one_skill_block_format() {
    let s = skill(
        "Press Release",
        &["press release", "announcement"],
        "Write a crisp release.\nSecond line.",
    );
    let ctx = render_context("draft a press release", [&s]);
    let expected = format!(
        "Retrieved skill list\nSearch query: draft a press release\n\nname: Press Release\nid: {}\ndescription: Helps with Press Release\ntags: writing, style\ntriggers: press release, announcement\nprompt:\n{}",
        s.id, s.prompt
    );
    assert_eq!(ctx.text, expected);
    assert_eq!(ctx.text.lines().filter(|l| l.starts_with("name:")).count(), 1);
}

#[test]
fn blocks_follow_rank_order() {
    let first = skill("First", &["a"], "one");
    let second = skill("Second", &["b"], "two");
    let ctx = render_context("q", [&first, &second]);
    assert_eq!(ctx.blocks.len(), 2);
    assert!(ctx.text.find("name: First").unwrap() < ctx.text.find("name: Second").unwrap());
    assert!(ctx.text.contains(&format!("{}\n\nname: Second", first.prompt)));
}

#[tokio::test]
async fn rewrite_echo_and_anchor_and_fallback() {
    let (_t, _m, e) = engine(MockScenario::default(), |_| {});
    assert_eq!(
        e.rewrite_query("make it shorter", &[]).await,
        ("make it shorter".to_string(), false)
    );

    let scenario = MockScenario::default().with_rule(MockRule::new(
        PromptRole::Rewrite,
        "press release draft",
        "make the press release draft shorter",
    ));
    let (_t, _m, e) = engine(scenario, |_| {});
    let history = vec![
        ChatMessage::user("help me with a press release draft"),
        ChatMessage::assistant("Sure, here it is."),
    ];
    let (q, fallback) = e.rewrite_query("make it shorter", &history).await;
    assert!(q.contains("press release"));
    assert!(!fallback);

    let (_t, _m, e) = engine(
        MockScenario::default().with_rule(MockRule::failing(PromptRole::Rewrite, "")),
        |_| {},
    );
    assert_eq!(
        e.rewrite_query("make it shorter", &[]).await,
        ("make it shorter".to_string(), true)
    );
}

#[tokio::test]
async fn rewrite_history_is_bounded() {
    let (_t, mock, e) = engine(MockScenario::default(), |c| c.serving.history_messages = 2);
    let history: Vec<ChatMessage> = (0..5).map(|i| ChatMessage::user(format!("old-{i}"))).collect();
    e.rewrite_query("now", &history).await;
    let call = &mock.calls_for(PromptRole::Rewrite)[0];
    let text = call.user_text();
    assert!(!text.contains("old-2"));
    assert!(text.contains("old-3") && text.contains("old-4"));
}

#[tokio::test]
async fn retrieval_cases() {
    let (_t, _m, e) = engine(MockScenario::default(), |c| c.retrieval.lambda = 0.0);
    assert!(e.retrieve_for_turn("anything", &alice()).await.selected.is_empty());

    let target = skill("Tone Fixer", &["polish my linkedin post"], "Polish.");
    e.bank().put_skill(&alice(), &target).unwrap();
    e.bank()
        .put_skill(&alice(), &skill("Budget Planner", &["monthly budget"], "Plan."))
        .unwrap();
    e.bank()
        .put_skill(&alice(), &skill("Trip Helper", &["plan a trip"], "Travel."))
        .unwrap();
    e.index().invalidate(&alice());
    let r = e.retrieve_for_turn("polish my linkedin post", &alice()).await;
    assert_eq!(r.ranked[0].0.id, target.id);
    assert_eq!(r.selected[0].skill.id, target.id);

    // No lexical overlap and a pure-lexical score: nothing clears eta.
    let r = e.retrieve_for_turn("zzz qqq", &alice()).await;
    assert!(r.selected.is_empty());
    assert!(r.ranked.iter().all(|(s, _)| s.rel < e.config().retrieval.eta));
}

#[tokio::test]
async fn common_skills_follow_config() {
    let shared = skill("Shared Skill", &["shared thing"], "Shared.");
    let (_t, _m, e) = engine(MockScenario::default(), |_| {});
    e.bank().put_skill(&BankScope::Common, &shared).unwrap();
    let r = e.retrieve_for_turn("shared thing", &alice()).await;
    assert_eq!(r.selected.len(), 1);

    let (_t, _m, e) = engine(MockScenario::default(), |c| c.serving.include_common = false);
    e.bank().put_skill(&BankScope::Common, &shared).unwrap();
    assert!(e.retrieve_for_turn("shared thing", &alice()).await.ranked.is_empty());
}

#[tokio::test]
async fn empty_bank_turn() {
    let (_t, mock, e) = engine(MockScenario::default(), |_| {});
    let resp = e
        .handle_turn(TurnRequest::new(
            "alice",
            vec![ChatMessage::user("what is the capital of France?")],
        ))
        .await
        .unwrap();
    assert_eq!(resp.text, "This is a mock response.");
    assert_eq!(resp.trace.injected, 0);
    assert!(resp.trace.context.is_empty());
    let chat = &mock.calls_for(PromptRole::Chat)[0];
    assert!(!chat.system.contains(CONTEXT_HEADER));
    assert!(!chat.user_text().contains(CONTEXT_HEADER));

    e.scheduler().wait_idle().await;
    let traces = e.traces().list(Some("alice"));
    assert_eq!(traces.len(), 1);
    let report = traces[0].evolution.as_ref().expect("evolution report attached");
    assert_eq!(report.queries, vec!["what is the capital of France?"]);
    assert_eq!(mock.calls_for(PromptRole::Extract).len(), 1);
}

#[tokio::test]
async fn skill_added_in_turn_one_is_used_in_turn_two() {
    let extract = r##"{"skills": [{"name": "Press Release Writer", "description": "Writes press releases", "prompt": "# Goal\nWrite press releases.\n\n# Constraints & Style\n- formal", "triggers": ["write a press release"], "tags": ["writing"], "examples": [], "confidence": 0.9}]}"##;
    let scenario = MockScenario::default()
        .with_rule(MockRule::new(PromptRole::Extract, "write a press release", extract).at_tail());
    let (_t, mock, e) = engine(scenario, |_| {});
    let mut messages = vec![ChatMessage::user("write a press release")];
    let first = e
        .handle_turn(TurnRequest::new("alice", messages.clone()))
        .await
        .unwrap();
    assert_eq!(first.trace.injected, 0);
    e.scheduler().wait_idle().await;

    messages.push(ChatMessage::assistant(first.text));
    messages.push(ChatMessage::user("write a press release for our launch"));
    let second = e.handle_turn(TurnRequest::new("alice", messages)).await.unwrap();
    assert_eq!(second.trace.injected, 1);
    assert_eq!(second.trace.candidates[0].name, "Press Release Writer");
    assert!(second.trace.context.starts_with(CONTEXT_HEADER));
    let chat = mock.calls_for(PromptRole::Chat);
    assert!(chat[1].system.contains(CONTEXT_HEADER));
    assert!(chat[1].system.contains("Write press releases."));
}

#[tokio::test]
async fn slow_evolution_does_not_delay_turns() {
    let scenario = MockScenario::default().with_delay(PromptRole::Extract, Duration::from_secs(3));
    let (_t, _m, e) = engine(scenario, |_| {});
    let started = Instant::now();
    for i in 0..3 {
        e.handle_turn(TurnRequest::new("alice", vec![ChatMessage::user(format!("q{i}"))]))
            .await
            .unwrap();
    }
    assert!(started.elapsed() < Duration::from_secs(1));
    assert!(e.scheduler().pending() > 0);
}

#[tokio::test]
async fn generation_failure_surfaces() {
    let (_t, _m, e) = engine(
        MockScenario::default().with_rule(MockRule::failing(PromptRole::Chat, "")),
        |_| {},
    );
    let err = e
        .handle_turn(TurnRequest::new("alice", vec![ChatMessage::user("hi")]))
        .await;
    assert!(err.is_err());
    let traces = e.traces().list(Some("alice"));
    assert!(traces[0].error.is_some());
    assert!(!traces[0].evolution_scheduled);
}

#[tokio::test]
async fn invalid_turns_are_rejected() {
    let (_t, _m, e) = engine(MockScenario::default(), |_| {});
    assert!(e.handle_turn(TurnRequest::new("alice", vec![])).await.is_err());
    assert!(e
        .handle_turn(TurnRequest::new("alice", vec![ChatMessage::assistant("x")]))
        .await
        .is_err());
}

#[tokio::test]
async fn every_n_turns_cadence() {
    let (_t, mock, e) = engine(MockScenario::default(), |c| c.evolution.every_n_turns = 2);
    let mut messages = vec![ChatMessage::user("one")];
    e.handle_turn(TurnRequest::new("alice", messages.clone()))
        .await
        .unwrap();
    messages.push(ChatMessage::assistant("r"));
    messages.push(ChatMessage::user("two"));
    e.handle_turn(TurnRequest::new("alice", messages)).await.unwrap();
    e.scheduler().wait_idle().await;
    assert_eq!(mock.calls_for(PromptRole::Extract).len(), 1);
}

#[test]
fn trace_ring_is_bounded() {
    use autoskill_core::serving::{TraceStore, TurnTrace};
    let store = TraceStore::new(2);
    for _ in 0..3 {
        store.push(TurnTrace {
            user_id: "alice".into(),
            ..TurnTrace::default()
        });
    }
    let ids: Vec<u64> = store.list(Some("alice")).iter().map(|t| t.trace_id).collect();
    assert_eq!(ids, vec![2, 3]);
    assert!(!store.update("alice", 1, |_| {}));
}
