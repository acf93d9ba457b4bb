use std::collections::HashSet;

use imi_core::experiment::{
    Experiment, Millis, NextTrial, Phase, QualityCheck, QualityThresholds, RecruitmentPlan, Side,
    TaskKey, TaskStimuli, TrialKind, TrialStimulus, UnitStimuli,
};
use imi_core::model::UnitAddress;
use imi_core::stimulus::{Condition, Difficulty};
use imi_core::ImiError;

const T0: Millis = 1_700_000_000_000;

fn stim(tag: &str) -> TrialStimulus {
    TrialStimulus {
        pos_references: (0..9).map(|r| format!("{tag}/pos_ref_{r}.png")).collect(),
        neg_references: (0..9).map(|r| format!("{tag}/neg_ref_{r}.png")).collect(),
        pos_query: format!("{tag}/q_pos.png"),
        neg_query: format!("{tag}/q_neg.png"),
    }
}

fn task_stimuli(units: usize, instances: usize) -> TaskStimuli {
    TaskStimuli {
        units: (0..units)
            .map(|u| UnitStimuli {
                unit: UnitAddress::new("m", format!("l{}", u % 3), u),
                instances: (0..instances).map(|i| (i, stim(&format!("u{u}/i{i}")))).collect(),
            })
            .collect(),
        catch: (0..5).map(|c| stim(&format!("catch{c}"))).collect(),
        practice: (0..5).map(|c| stim(&format!("practice{c}"))).collect(),
    }
}

fn natural() -> TaskKey {
    TaskKey::new("m", Condition::Natural, Difficulty::Easy)
}

fn paper_experiment() -> Experiment {
    let mut exp = Experiment::new(QualityThresholds::default());
    // 40 units x 4 instances x 3 responses = 12 sessions of 40 real trials.
    exp.add_task(natural(), RecruitmentPlan { seed: 3, ..Default::default() }, task_stimuli(40, 4))
        .unwrap();
    exp.add_task(
        TaskKey::new("m", Condition::Synthetic, Difficulty::Easy),
        RecruitmentPlan { seed: 4, ..Default::default() },
        task_stimuli(40, 4),
    )
    .unwrap();
    exp
}

#[derive(Clone, Copy)]
struct Script {
    dwell_s: i64,
    failed_rounds: usize,
    catch_wrong: usize,
    total_s: i64,
    fixed_side: Option<Side>,
}

impl Default for Script {
    fn default() -> Self {
        Script {
            dwell_s: 30,
            failed_rounds: 0,
            catch_wrong: 0,
            total_s: 600,
            fixed_side: None,
        }
    }
}

/// Plays a session to completion following `script` and returns the failed checks.
fn play(exp: &mut Experiment, id: &str, script: Script) -> Vec<QualityCheck> {
    let start = exp.session(id).unwrap().created_at;
    let n_main = exp.session(id).unwrap().trials.len();
    let n_answers = 5 * (script.failed_rounds + 1) + n_main;
    let step = (script.total_s - script.dwell_s) * 1000 / (n_answers as i64 + 1);
    let rt = step.min(1500) as u64;
    let mut now = start + script.dwell_s * 1000;
    let mut failed_rounds = 0;
    let mut catch_wrong = 0;
    loop {
        let payload = match exp.next_trial(id, now).unwrap() {
            NextTrial::Trial(p) => p,
            NextTrial::Done => break,
        };
        now += step;
        let s = exp.session(id).unwrap();
        let choice = match payload.phase {
            Phase::Practice => {
                let trial = &s.practice_trials[payload.index];
                let fail = failed_rounds < script.failed_rounds && payload.index == 0;
                if payload.index == payload.total - 1 && failed_rounds < script.failed_rounds {
                    failed_rounds += 1;
                }
                if fail {
                    trial.positive_side.other()
                } else {
                    trial.positive_side
                }
            }
            Phase::Main => {
                let trial = &s.trials[payload.index];
                let is_catch = matches!(trial.kind, TrialKind::Catch { .. });
                match script.fixed_side {
                    Some(side) => side,
                    None if is_catch && catch_wrong < script.catch_wrong => {
                        catch_wrong += 1;
                        trial.positive_side.other()
                    }
                    None => trial.positive_side,
                }
            }
        };
        exp.submit_response(id, &payload.trial_id, choice, 2, rt, now).unwrap();
    }
    let report = exp.finish_session(id, start + script.total_s * 1000).unwrap();
    report.failed()
}

fn admit(exp: &mut Experiment, who: &str, key: &TaskKey, now: Millis) -> String {
    exp.create_session(who, key, now).unwrap().session_id.clone()
}

#[test]
fn session_composition() {
    let mut exp = paper_experiment();
    let id = admit(&mut exp, "p1", &natural(), T0);
    let s = exp.session(&id).unwrap();
    assert_eq!(s.trials.len(), 45);
    let real: Vec<usize> = s
        .trials
        .iter()
        .filter_map(|t| match t.kind {
            TrialKind::Real { unit, .. } => Some(unit),
            _ => None,
        })
        .collect();
    assert_eq!(real.len(), 40);
    assert_eq!(real.iter().collect::<HashSet<_>>().len(), 40);
    let catch = s.trials.iter().filter(|t| matches!(t.kind, TrialKind::Catch { .. })).count();
    assert_eq!(catch, 5);
    let ids: HashSet<&str> = s.trials.iter().map(|t| t.trial_id.as_str()).collect();
    assert_eq!(ids.len(), 45);
}

#[test]
fn quality_battery_flags_exactly_the_violated_check() {
    let mut exp = paper_experiment();
    let cases: Vec<(&str, Script, Option<QualityCheck>)> = vec![
        ("compliant", Script::default(), None),
        ("practice", Script { failed_rounds: 3, ..Default::default() }, Some(QualityCheck::PracticeAttempts)),
        ("dwell", Script { dwell_s: 10, ..Default::default() }, Some(QualityCheck::InstructionTime)),
        ("catch", Script { catch_wrong: 2, ..Default::default() }, Some(QualityCheck::CatchTrials)),
        ("short", Script { total_s: 100, ..Default::default() }, Some(QualityCheck::TotalDuration)),
        ("long", Script { total_s: 3000, ..Default::default() }, Some(QualityCheck::TotalDuration)),
    ];
    let mut now = T0;
    for (who, script, expected) in cases {
        let id = admit(&mut exp, who, &natural(), now);
        let failed = play(&mut exp, &id, script);
        assert_eq!(failed, expected.into_iter().collect::<Vec<_>>(), "{who}");
        now += 1000;
    }

    // All answers on one side; pick a session whose catch trials still pass.
    let mut k = 0;
    loop {
        let id = admit(&mut exp, &format!("side{k}"), &natural(), now);
        let s = exp.session(&id).unwrap();
        let tops = s
            .trials
            .iter()
            .filter(|t| matches!(t.kind, TrialKind::Catch { .. }) && t.positive_side == Side::Top)
            .count();
        let side = if tops >= 4 {
            Some(Side::Top)
        } else if tops <= 1 {
            Some(Side::Bottom)
        } else {
            None
        };
        if let Some(side) = side {
            let failed = play(&mut exp, &id, Script { fixed_side: Some(side), ..Default::default() });
            assert_eq!(failed, vec![QualityCheck::SameSide]);
            break;
        }
        exp.finish_session(&id, now).unwrap();
        k += 1;
        assert!(k < 50);
    }

    // "compliant" already took part in the natural task.
    let synthetic = TaskKey::new("m", Condition::Synthetic, Difficulty::Easy);
    let id = admit(&mut exp, "compliant", &synthetic, now);
    assert!(exp.session(&id).unwrap().repeat_participation);
    let failed = play(&mut exp, &id, Script::default());
    assert_eq!(failed, vec![QualityCheck::UniqueParticipation]);
}

#[test]
fn repeat_within_task_is_rejected() {
    let mut exp = paper_experiment();
    admit(&mut exp, "p", &natural(), T0);
    assert!(matches!(
        exp.create_session("p", &natural(), T0 + 1),
        Err(ImiError::RepeatParticipant(_))
    ));
}

#[test]
fn practice_gates_the_main_block() {
    let mut exp = paper_experiment();
    let id = admit(&mut exp, "p", &natural(), T0);
    let mut now = T0 + 20_000;
    let mut rounds = 0;
    loop {
        let NextTrial::Trial(p) = exp.next_trial(&id, now).unwrap() else {
            panic!("practice cannot be done")
        };
        if p.phase == Phase::Main {
            break;
        }
        now += 2000;
        // Main trial ids are refused while practice runs.
        assert!(matches!(
            exp.submit_response(&id, "t00", Side::Top, 1, 500, now),
            Err(ImiError::Protocol(_))
        ));
        let s = exp.session(&id).unwrap();
        let right = s.practice_trials[p.index].positive_side;
        // Rounds 1 and 2 miss their last trial.
        let choice = if rounds < 2 && p.index == p.total - 1 { right.other() } else { right };
        if p.index == p.total - 1 {
            rounds += 1;
        }
        let fb = exp.submit_response(&id, &p.trial_id, choice, 1, 500, now).unwrap();
        assert_eq!(fb.correct, choice == right);
    }
    assert_eq!(rounds, 3);
    assert_eq!(exp.session(&id).unwrap().practice_attempt_count, 3);
}

#[test]
fn responses_are_idempotent_and_validated() {
    let mut exp = paper_experiment();
    let id = admit(&mut exp, "p", &natural(), T0);
    let NextTrial::Trial(p) = exp.next_trial(&id, T0 + 20_000).unwrap() else { panic!() };
    let now = T0 + 21_000;
    assert!(matches!(exp.submit_response(&id, &p.trial_id, Side::Top, 4, 500, now), Err(ImiError::Validation(_))));
    assert!(matches!(exp.submit_response(&id, &p.trial_id, Side::Top, 2, 0, now), Err(ImiError::Validation(_))));
    assert!(matches!(
        exp.submit_response(&id, &p.trial_id, Side::Top, 2, 21_001, now),
        Err(ImiError::Validation(_))
    ));
    let first = exp.submit_response(&id, &p.trial_id, Side::Top, 2, 500, now).unwrap();
    assert!(!first.duplicate);
    let again = exp.submit_response(&id, &p.trial_id, Side::Top, 2, 500, now + 10).unwrap();
    assert!(again.duplicate);
    assert_eq!(again.correct, first.correct);
    assert!(matches!(
        exp.submit_response(&id, &p.trial_id, Side::Bottom, 2, 500, now + 20),
        Err(ImiError::Protocol(_))
    ));
    assert_eq!(exp.session(&id).unwrap().practice_responses.len(), 1);
}

#[test]
fn failed_sessions_release_their_slots() {
    let mut exp = paper_experiment();
    let open = exp.recruitment_status(&natural()).unwrap().open_slots;
    assert_eq!(open, 480);
    let id = admit(&mut exp, "p", &natural(), T0);
    assert_eq!(exp.recruitment_status(&natural()).unwrap().open_slots, 440);
    let failed = play(&mut exp, &id, Script { dwell_s: 5, ..Default::default() });
    assert_eq!(failed, vec![QualityCheck::InstructionTime]);
    let status = exp.recruitment_status(&natural()).unwrap();
    assert_eq!(status.open_slots, 480);
    assert_eq!(status.failed_sessions, 1);
    assert!(exp.records().iter().all(|r| !r.quality_passed));
}

#[test]
fn recruitment_closes_with_exact_ledger() {
    let mut exp = Experiment::new(QualityThresholds::default());
    let plan = RecruitmentPlan {
        real_trials_per_session: 4,
        seed: 11,
        ..Default::default()
    };
    let targets = exp.add_task(natural(), plan, task_stimuli(6, 2)).unwrap();
    assert_eq!(targets.target_passing_sessions, 9);
    let mut now = T0;
    for k in 0..9 {
        let id = admit(&mut exp, &format!("p{k}"), &natural(), now);
        assert!(play(&mut exp, &id, Script::default()).is_empty());
        now += 1000;
    }
    let status = exp.recruitment_status(&natural()).unwrap();
    assert!(status.complete);
    assert_eq!(status.open_slots, 0);
    for unit in &status.ledger {
        assert_eq!(unit.passing_responses, 6);
        assert_eq!(unit.distinct_participants, 6);
        assert!(unit.instances.iter().all(|i| i.passing_responses == 3));
    }
    assert!(matches!(
        exp.create_session("late", &natural(), now),
        Err(ImiError::RecruitmentClosed(_))
    ));
    assert_eq!(exp.records().len(), 36);
}

#[test]
fn no_capacity_when_too_few_units_are_open() {
    let mut exp = Experiment::new(QualityThresholds::default());
    let plan = RecruitmentPlan {
        real_trials_per_session: 4,
        ..Default::default()
    };
    exp.add_task(natural(), plan, task_stimuli(4, 1)).unwrap();
    for k in 0..3 {
        admit(&mut exp, &format!("p{k}"), &natural(), T0);
    }
    assert!(matches!(exp.create_session("p3", &natural(), T0), Err(ImiError::NoCapacity(_))));
}

#[test]
fn paper_scale_plan_opens_2520_slots() {
    let mut exp = Experiment::new(QualityThresholds::default());
    let targets = exp
        .add_task(natural(), RecruitmentPlan::default(), task_stimuli(84, 10))
        .unwrap();
    assert_eq!(targets.responses_per_unit, 30);
    assert_eq!(targets.target_passing_sessions, 63);
    assert_eq!(exp.recruitment_status(&natural()).unwrap().open_slots, 2520);
}

#[test]
fn stale_sessions_expire() {
    let mut exp = paper_experiment();
    let id = admit(&mut exp, "p", &natural(), T0);
    assert!(exp.expire_stale(|_| T0 + 1000).is_empty());
    assert_eq!(exp.expire_stale(|_| T0 + 2_600_000), vec![id.clone()]);
    assert!(exp.session(&id).unwrap().is_finished());
    assert_eq!(exp.recruitment_status(&natural()).unwrap().open_slots, 480);
}
