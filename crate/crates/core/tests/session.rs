use std::sync::Arc;

use peer_agent_core::agent::AgentPersona;
use peer_agent_core::articulator::{Selection, SilenceReason};
use peer_agent_core::domain::{DilemmaCatalog, OpinionState, PlayerId, Stance};
use peer_agent_core::fixtures::{Fixtures, CLAUSE_OPINION_SHIFT};
use peer_agent_core::provider::{FaultInjectingProvider, MockProvider};
use peer_agent_core::session::{
    deliberate, parse_log, replay, token_sha256, EventBody, NullSink, Runtime, Session, SessionError,
    SessionEvent, SessionStatus,
};
use peer_agent_core::sim::{run_script, Script};
use peer_agent_core::EngineConfig;

const SCRIPT: &str = include_str!("../../../scripts/killer-robots.json");

fn mock_rt() -> Runtime {
    Runtime::new(Arc::new(MockProvider::builtin()))
}

fn active_session(rt: &Runtime, seed: u64, a: (Stance, u8), b: (Stance, u8)) -> Session {
    let card = DilemmaCatalog::builtin().get("killer-robots").unwrap().clone();
    let mut sink = NullSink;
    let mut s = Session::create(rt, &mut sink, "s1", card, EngineConfig::default(), seed, AgentPersona::default_peer())
        .unwrap();
    for id in ["mina", "theo"] {
        s.join(rt, &mut sink, PlayerId::new(id), token_sha256(id)).unwrap();
    }
    s.submit_stance(rt, &mut sink, OpinionState::new("mina", a.0, a.1).unwrap()).unwrap();
    s.submit_stance(rt, &mut sink, OpinionState::new("theo", b.0, b.1).unwrap()).unwrap();
    s
}

#[test]
fn persuasive_utterance_lowers_strength_by_half_a_point() {
    let rt = mock_rt();
    let mut s = active_session(&rt, 1, (Stance::Disagree, 5), (Stance::Disagree, 4));
    assert_eq!(s.state().agent.as_ref().unwrap().opinion_strength, 4.5);
    let events = s
        .post_utterance(
            &rt,
            &mut NullSink,
            &PlayerId::new("mina"),
            "history shows every arms race ends with the weapon being used on civilians",
        )
        .unwrap();
    let adjusted = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::OpinionAdjusted(a) => Some(a.adjustment.clone()),
            _ => None,
        })
        .expect("OpinionAdjusted emitted");
    assert_eq!((adjusted.old_strength, adjusted.new_strength), (4.5, 4.0));
    assert_eq!(adjusted.persuasion_score, 0.5);
}

#[test]
fn next_agent_turn_acknowledges_the_shift() {
    let rt = mock_rt();
    let clause = Fixtures::builtin().articulation.clause(CLAUSE_OPINION_SHIFT).to_string();
    // Some seed will make the agent speak within a few turns.
    for seed in 0..50 {
        let mut s = active_session(&rt, seed, (Stance::Disagree, 5), (Stance::Disagree, 4));
        let mina = PlayerId::new("mina");
        s.post_utterance(&rt, &mut NullSink, &mina, "history shows every arms race ends with the weapon being used on civilians")
            .unwrap();
        for _ in 0..5 {
            let events = s.post_utterance(&rt, &mut NullSink, &mina, "we must keep people safe").unwrap();
            if let Some(spoke) = events.iter().find_map(|e| match &e.body {
                EventBody::AgentSpoke(a) => Some(a.clone()),
                _ => None,
            }) {
                assert!(spoke.text.starts_with(&clause), "{}", spoke.text);
                assert!(s.state().pending_shift.is_none());
                return;
            }
        }
    }
    panic!("agent never spoke");
}

#[test]
fn stance_intake_rules() {
    let rt = mock_rt();
    let mut s = active_session(&rt, 3, (Stance::Agree, 2), (Stance::Disagree, 4));
    let p = s.state().positioning.clone().unwrap();
    assert_eq!(p.stance, Stance::Agree);
    assert_eq!(p.aligned_with, Some(PlayerId::new("mina")));
    let err = s.submit_stance(&rt, &mut NullSink, OpinionState::new("theo", Stance::Agree, 3).unwrap());
    assert!(matches!(err, Err(SessionError::WrongStatus { .. })));
    let before = s.log().len();
    s.close(&rt, &mut NullSink, "done").unwrap();
    let err = s.post_utterance(&rt, &mut NullSink, &PlayerId::new("mina"), "hello");
    assert!(matches!(err, Err(SessionError::WrongStatus { actual: SessionStatus::Closed, .. })));
    assert_eq!(s.log().len(), before + 1);
}

#[test]
fn unknown_player_and_empty_text_rejected() {
    let rt = mock_rt();
    let mut s = active_session(&rt, 3, (Stance::Agree, 2), (Stance::Disagree, 4));
    assert!(matches!(
        s.post_utterance(&rt, &mut NullSink, &PlayerId::new("zed"), "hi"),
        Err(SessionError::UnknownPlayer(_))
    ));
    assert!(matches!(s.post_utterance(&rt, &mut NullSink, &PlayerId::new("mina"), "   "), Err(SessionError::EmptyText)));
}

#[test]
fn replay_reproduces_live_state() {
    let script = Script::from_json(SCRIPT).unwrap();
    let run = run_script(&script, 11, &mock_rt(), &DilemmaCatalog::builtin()).unwrap();
    assert_eq!(replay(&run.events).unwrap(), run.state);
    let text: String = run.events.iter().map(|e| e.to_json_line() + "\n").collect();
    let parsed = parse_log(&text).unwrap();
    assert_eq!(parsed.events, run.events);
    assert_eq!(parsed.torn_tail, None);
}

#[test]
fn replay_names_the_gap() {
    let script = Script::from_json(SCRIPT).unwrap();
    let run = run_script(&script, 11, &mock_rt(), &DilemmaCatalog::builtin()).unwrap();
    let mut events = run.events.clone();
    let removed = events.remove(6);
    let err = replay(&events).unwrap_err();
    assert_eq!(err.seq, removed.seq + 1);
    assert!(replay(&[]).is_err());
}

#[test]
fn replay_rejects_a_tampered_causal_chain() {
    let script = Script::from_json(SCRIPT).unwrap();
    let run = run_script(&script, 11, &mock_rt(), &DilemmaCatalog::builtin()).unwrap();
    let mut events = run.events.clone();
    let idx = events.iter().position(|e| matches!(e.body, EventBody::OpinionAdjusted(_))).unwrap();
    if let EventBody::OpinionAdjusted(a) = &mut events[idx].body {
        a.adjustment.old_strength += 0.5;
    }
    assert_eq!(replay(&events).unwrap_err().seq, events[idx].seq);
}

#[test]
fn torn_tail_is_tolerated_but_mid_log_garbage_is_not() {
    let script = Script::from_json(SCRIPT).unwrap();
    let run = run_script(&script, 2, &mock_rt(), &DilemmaCatalog::builtin()).unwrap();
    let mut text: String = run.events.iter().map(|e| e.to_json_line() + "\n").collect();
    text.push_str("{\"seq\": 99, \"ts\"");
    let parsed = parse_log(&text).unwrap();
    assert_eq!(parsed.events.len(), run.events.len());
    assert!(parsed.torn_tail.is_some());

    let lines: Vec<String> = run.events.iter().map(SessionEvent::to_json_line).collect();
    let broken = format!("{}\n{}\nnot json\n{}\n", lines[0], lines[1], lines[2]);
    assert_eq!(parse_log(&broken).unwrap_err().seq, 3);
}

#[test]
fn stale_deliberation_is_discarded() {
    let rt = mock_rt();
    let mut s = active_session(&rt, 5, (Stance::Agree, 3), (Stance::Agree, 3));
    let mina = PlayerId::new("mina");
    let (_, pending) = s.begin_utterance(&rt, &mut NullSink, &mina, "we must keep people safe").unwrap();
    let first = deliberate(&pending, &rt);
    let (_, pending2) = s.begin_utterance(&rt, &mut NullSink, &PlayerId::new("theo"), "everyone has equal rights").unwrap();
    assert!(s.commit_deliberation(&rt, &mut NullSink, first).unwrap().is_empty());
    let second = deliberate(&pending2, &rt);
    let committed = s.commit_deliberation(&rt, &mut NullSink, second).unwrap();
    assert!(matches!(committed[0].body, EventBody::ThoughtsEvaluated(_)));
    replay(s.log()).unwrap();
}

#[test]
fn concession_latches_once_and_stance_never_flips() {
    let rt = mock_rt();
    let mut s = active_session(&rt, 8, (Stance::Disagree, 2), (Stance::Disagree, 1));
    let text = "studies and research give evidence that it is proven";
    let mut concessions = 0;
    for i in 0..8 {
        let who = if i % 2 == 0 { "mina" } else { "theo" };
        let events = s.post_utterance(&rt, &mut NullSink, &PlayerId::new(who), text).unwrap();
        concessions += events.iter().filter(|e| matches!(e.body, EventBody::Concession(_))).count();
    }
    let agent = s.state().agent.as_ref().unwrap();
    assert_eq!(agent.opinion_strength, 1.0);
    assert_eq!(agent.position, Stance::Agree);
    assert!(agent.conceded);
    assert_eq!(concessions, 1);
}

#[test]
fn degraded_provider_keeps_the_session_alive() {
    let rt = Runtime::new(Arc::new(FaultInjectingProvider::always_failing()));
    let mut s = active_session(&rt, 4, (Stance::Agree, 4), (Stance::Disagree, 2));
    for text in ["we must keep people safe", "history shows every arms race ends with the weapon being used on civilians"] {
        let events = s.post_utterance(&rt, &mut NullSink, &PlayerId::new("mina"), text).unwrap();
        let evaluated = events.iter().find_map(|e| match &e.body {
            EventBody::ThoughtsEvaluated(t) => Some(t.clone()),
            _ => None,
        });
        let evaluated = evaluated.expect("pipeline outcome recorded");
        assert!(evaluated.candidates.is_empty());
        assert_eq!(evaluated.selection, Selection::Silence(SilenceReason::NoCandidates));
        let posted = events.iter().find_map(|e| match &e.body {
            EventBody::UtterancePosted(u) => Some(u.clone()),
            _ => None,
        });
        assert!(posted.unwrap().utterance.value_tags.is_empty());
    }
    assert_eq!(s.state().transcript.len(), 2);
}

#[test]
fn heartbeat_retries_only_after_silence() {
    let rt = mock_rt();
    for seed in 0..20 {
        let mut s = active_session(&rt, seed, (Stance::Agree, 3), (Stance::Agree, 3));
        let events = s.post_utterance(&rt, &mut NullSink, &PlayerId::new("mina"), "we must keep people safe").unwrap();
        let spoke = events.iter().any(|e| matches!(e.body, EventBody::AgentSpoke(_)));
        let beat = s.heartbeat(&rt, &mut NullSink).unwrap();
        if spoke {
            assert!(beat.is_empty());
        } else {
            let EventBody::ThoughtsEvaluated(t) = &beat[0].body else { panic!("expected evaluation") };
            assert_eq!(t.attempt, 1);
        }
        replay(s.log()).unwrap();
    }
}
