use std::sync::Arc;

use peer_agent_core::domain::DilemmaCatalog;
use peer_agent_core::exec::Execution;
use peer_agent_core::provider::MockProvider;
use peer_agent_core::session::Runtime;
use peer_agent_core::sim::{inspect, masked_digest, run_batch, run_script, Script, SimError};

const SCRIPT: &str = include_str!("../../../scripts/killer-robots.json");

fn rt(exec: Execution) -> Runtime {
    Runtime::new(Arc::new(MockProvider::builtin())).with_exec(exec)
}

#[test]
fn same_seed_same_log() {
    let script = Script::from_json(SCRIPT).unwrap();
    let catalog = DilemmaCatalog::builtin();
    let digests: Vec<String> = (0..3)
        .map(|_| masked_digest(&run_script(&script, 42, &rt(Execution::Parallel), &catalog).unwrap().events))
        .collect();
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn parallel_batch_matches_sequential() {
    let script = Script::from_json(SCRIPT).unwrap();
    let catalog = DilemmaCatalog::builtin();
    let seeds: Vec<u64> = (0..24).collect();
    let seq: Vec<_> = run_batch(&script, &seeds, &rt(Execution::Sequential), &catalog)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    let par: Vec<_> = run_batch(&script, &seeds, &rt(Execution::Parallel), &catalog)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    assert_eq!(seq, par);
    // different seeds explore different coin flips
    let distinct: std::collections::BTreeSet<_> = seq.iter().map(|r| r.log_digest.clone()).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn inspection_summarises_the_script() {
    let script = Script::from_json(SCRIPT).unwrap();
    let run = run_script(&script, 7, &rt(Execution::Sequential), &DilemmaCatalog::builtin()).unwrap();
    let report = inspect(&run.events).unwrap();
    assert_eq!(report.human_turns, 8);
    assert_eq!(report.evaluations, 8);
    assert_eq!(report.late_from_turn, Some(4));
    assert_eq!(report.strength_trajectory.first().unwrap().strength, 4.5);
    let strengths: Vec<f64> = report.strength_trajectory.iter().map(|p| p.strength).collect();
    assert!(strengths.windows(2).all(|w| w[1] < w[0]), "{strengths:?}");
    assert_eq!(report.silences + report.interventions.len(), report.evaluations);
    assert!(report.to_string().contains("strength 4.50 -> 4.00"));
}

#[test]
fn script_errors() {
    let catalog = DilemmaCatalog::builtin();
    let mut script = Script::from_json(SCRIPT).unwrap();
    script.players.pop();
    assert!(matches!(run_script(&script, 1, &rt(Execution::Sequential), &catalog), Err(SimError::PlayerCount(1))));
    let script = Script::from_json(&SCRIPT.replace("killer-robots", "nope")).unwrap();
    assert!(matches!(run_script(&script, 1, &rt(Execution::Sequential), &catalog), Err(SimError::UnknownDilemma(_))));
    assert!(Script::from_json("{}").is_err());
}
