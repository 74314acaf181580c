//! Synthetic case and script generator for offline runs.
//!
//! Every generated case comes with scripted responses for every backend call
//! a session can make: the simulated conversation up to the turn cap,
//! supervisor updates, EMR summaries, both diagnosis attempts and a
//! reflection. First attempts are right for roughly
//! `first_attempt_accuracy` of the cases.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cases::save_cases;
use super::experiment::{default_matrix, RunConfig, RunSection};
use crate::backend::{BackendConfig, ScriptFile, TemplateId};
use crate::domain::{
    int_to_risk, risk_to_int, GroundTruth, Ontology, PatientCase, RiskLevel, SessionStage,
    Speaker, Split, SymptomFact, SymptomId, Transcript,
};
use crate::error::{Error, Result};
use crate::supervisor::{validate_turn_cap, DEFAULT_TURN_CAP};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub turn_cap: usize,
    pub vote_k: usize,
    pub first_attempt_accuracy: f64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            n_train: 100,
            n_test: 132,
            seed: 1,
            turn_cap: DEFAULT_TURN_CAP,
            vote_k: 5,
            first_attempt_accuracy: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureBundle {
    pub train: Vec<PatientCase>,
    pub test: Vec<PatientCase>,
    pub script: ScriptFile,
}

pub const TRAIN_FILE: &str = "cases-train.json";
pub const TEST_FILE: &str = "cases-test.json";
pub const SCRIPT_FILE: &str = "script.json";
pub const RUN_FILE: &str = "run.toml";

const GENDERS: [&str; 2] = ["female", "male"];
const OCCUPATIONS: [&str; 14] = [
    "teacher", "nurse", "software developer", "accountant", "student", "shop assistant",
    "delivery driver", "civil servant", "chef", "factory worker", "graphic designer",
    "sales manager", "retired engineer", "freelance writer",
];
const MARITAL: [&str; 4] = ["single", "married", "divorced", "in a relationship"];
const LIFE_EVENTS: [&str; 12] = [
    "Moved to a new city for work eight months ago",
    "Ended a long relationship in the spring",
    "Was passed over for a promotion last year",
    "A close friend died last winter",
    "Started a demanding graduate programme",
    "Had a first child eleven months ago",
    "Retired after thirty years at the same company",
    "Has been caring for a parent with dementia",
    "Was involved in a car accident two years ago",
    "Lost a job during company restructuring",
    "Parents divorced during secondary school",
    "Has had ongoing conflict with a manager",
];
const DURATIONS: [&str; 5] = [
    "most days for about a month",
    "on and off for several weeks",
    "nearly every day since the spring",
    "for the last two or three weeks",
    "for longer than I can remember",
];
const OPENINGS: [&str; 3] = [
    "Hello, please have a seat. What brings you in today?",
    "Good morning. I'm glad you came. Can you tell me what has been going on?",
    "Hi, thanks for coming in. What would you like to talk about today?",
];
const CLOSINGS: [&str; 3] = [
    "Thank you for being so open with me. I'd like us to meet again soon, and please reach out if things get worse.",
    "I appreciate you sharing all of this. Let's put together a plan and check in again in two weeks.",
    "Thank you. We have covered a lot today; I'll summarise my impressions and we can discuss next steps.",
];
const FAREWELLS: [&str; 3] = [
    "Thank you, doctor. That helps.",
    "Okay. Thanks for listening.",
    "Thank you, I'll try.",
];
const FILLER_Q: [&str; 3] = [
    "Is there anything else you would like me to know?",
    "How are you feeling about talking through all of this?",
    "Is there someone at home you can rely on right now?",
];
const FILLER_A: [&str; 3] = [
    "No, I think that covers it.",
    "It's a relief to say it out loud.",
    "My sister, mostly. She checks on me.",
];

fn is_suicide_related(id: &SymptomId) -> bool {
    let s = id.as_str();
    s.contains("suicid") || s.contains("self-harm")
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty bank")
}

fn level_with(rng: &mut impl Rng, weights: [f64; 4]) -> RiskLevel {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return int_to_risk(i as i64).expect("0..4");
        }
        u -= w;
    }
    RiskLevel::Severe
}

fn shift(level: RiskLevel, rng: &mut impl Rng) -> RiskLevel {
    let v = risk_to_int(level) as i64;
    let up = match v {
        0 => true,
        3 => false,
        _ => rng.random_bool(0.5),
    };
    int_to_risk(if up { v + 1 } else { v - 1 }).expect("stays in range")
}

fn wrong_prediction(truth: GroundTruth, rng: &mut impl Rng) -> (RiskLevel, RiskLevel) {
    let mut dep = truth.depression_risk;
    let mut su = truth.suicide_risk;
    if rng.random_bool(0.7) {
        dep = shift(dep, rng);
    }
    if dep == truth.depression_risk || rng.random_bool(0.4) {
        su = shift(su, rng);
    }
    (dep, su)
}

const QUESTION_FRAMES: [&str; 6] = [
    "I'd like to ask about {}. Has any of that been happening to you?",
    "Let me check a few things. Have you noticed {} lately?",
    "What about {}? Tell me if any of it sounds familiar.",
    "Some people in your situation experience {}. Is that true for you?",
    "Over the past couple of weeks, have you had {}?",
    "Could you tell me whether {} has been part of your life recently?",
];
const DENIAL_FRAMES: [&str; 5] = [
    "No, {} hasn't been a problem.",
    "I don't think so, not {}.",
    "As for {}, not that I've noticed.",
    "{}? No, not really.",
    "Honestly, no trouble with {}.",
];

fn question(ontology: &Ontology, ids: &[SymptomId], rng: &mut impl Rng) -> String {
    let parts: Vec<String> = ids
        .iter()
        .map(|id| match ontology.get(id) {
            Some(e) => e.probe.clone(),
            None => id.to_string(),
        })
        .collect();
    pick(rng, &QUESTION_FRAMES).replacen("{}", &parts.join(", or "), 1)
}

fn answer(case: &PatientCase, ontology: &Ontology, ids: &[SymptomId], rng: &mut impl Rng) -> String {
    let parts: Vec<String> = ids
        .iter()
        .map(|id| match case.symptoms.get(id) {
            Some(f) if f.present => format!("Yes, {}.", f.severity_note),
            _ => {
                let name = ontology.get(id).map(|e| e.name.to_lowercase()).unwrap_or_else(|| id.to_string());
                let line = pick(rng, &DENIAL_FRAMES).replacen("{}", &name, 1);
                let mut chars = line.chars();
                match chars.next() {
                    Some(c) => c.to_uppercase().chain(chars).collect(),
                    None => line,
                }
            }
        })
        .collect();
    parts.join(" ")
}

fn status_word(case: &PatientCase, id: &SymptomId) -> &'static str {
    match case.symptoms.get(id) {
        Some(f) if f.present => "present",
        _ => "absent",
    }
}

fn generate_case(rng: &mut ChaCha8Rng, ontology: &Ontology, case_id: String, split: Split) -> PatientCase {
    let dep = level_with(rng, [0.25, 0.30, 0.25, 0.20]);
    let mut su = int_to_risk(rng.random_range(0..=risk_to_int(dep) as i64)).expect("range");
    if su != RiskLevel::Severe && rng.random_bool(0.15) {
        su = shift(su, rng).max(su);
    }
    let (general, suicidal): (Vec<SymptomId>, Vec<SymptomId>) =
        ontology.ids().cloned().partition(|id| !is_suicide_related(id));
    let n_general = match dep {
        RiskLevel::Control => rng.random_range(0..=2),
        RiskLevel::Mild => rng.random_range(2..=5),
        RiskLevel::Moderate => rng.random_range(5..=8),
        RiskLevel::Severe => rng.random_range(8..=12),
    }
    .min(general.len());
    let mut shuffled = general.clone();
    shuffled.shuffle(rng);
    let present_general: Vec<SymptomId> = shuffled[..n_general].to_vec();
    let n_suicidal = (risk_to_int(su) as usize).min(suicidal.len());
    let present_suicidal = &suicidal[..n_suicidal];

    let mut symptoms = BTreeMap::new();
    for id in ontology.ids() {
        let present = present_general.contains(id) || present_suicidal.contains(id);
        let severity_note = if present {
            let probe = ontology.get(id).map(|e| e.probe.as_str()).unwrap_or("it happens");
            format!("{probe}, {}", pick(rng, &DURATIONS))
        } else {
            String::new()
        };
        symptoms.insert(id.clone(), SymptomFact { present, severity_note });
    }

    let age = rng.random_range(18..=66);
    let portrait = format!(
        "{age}-year-old {} {}, {}",
        pick(rng, &GENDERS),
        pick(rng, &OCCUPATIONS),
        pick(rng, &MARITAL)
    );
    let chief_complaint = match present_general.first().and_then(|id| ontology.get(id)) {
        Some(e) => format!("Mostly it is this: {}. It is wearing me down.", e.probe),
        None => "My family thought I should get checked because work has been stressful.".to_string(),
    };
    let mut events = LIFE_EVENTS.to_vec();
    events.shuffle(rng);
    let life_events = events[..rng.random_range(1..=3)].iter().map(|s| s.to_string()).collect();

    let mut case = PatientCase {
        case_id,
        portrait,
        chief_complaint,
        symptoms,
        life_events,
        original_dialogue: Transcript::new(),
        ground_truth: GroundTruth {
            depression_risk: dep,
            suicide_risk: su,
        },
        split,
    };
    case.original_dialogue = original_dialogue(rng, ontology, &case, &present_general, present_suicidal);
    case
}

/// An 8 to 14 exchange clinician-led interview.
fn original_dialogue(
    rng: &mut ChaCha8Rng,
    ontology: &Ontology,
    case: &PatientCase,
    present_general: &[SymptomId],
    present_suicidal: &[SymptomId],
) -> Transcript {
    let exchanges = rng.random_range(8..=14usize);
    let mut topics: Vec<SymptomId> = present_general.to_vec();
    let mut others: Vec<SymptomId> = ontology
        .ids()
        .filter(|id| !present_general.contains(id) && !present_suicidal.contains(id))
        .cloned()
        .collect();
    others.shuffle(rng);
    topics.extend(others);
    // suicide screening is always part of the interview
    let mut screen: Vec<SymptomId> = ontology.ids().filter(|id| is_suicide_related(id)).cloned().collect();
    screen.truncate(2.max(present_suicidal.len()));

    let mut t = Transcript::new();
    t.mark_stage(SessionStage::Start).expect("first mark");
    t.push(Speaker::Psychiatrist, pick(rng, &OPENINGS));
    t.push(Speaker::Patient, case.chief_complaint.clone());
    t.mark_stage(SessionStage::Exploring).expect("monotone");
    let middle = exchanges - 2;
    let mut topic_iter = topics.chunks(2);
    for i in 0..middle {
        let ids: Vec<SymptomId> = if i + 1 == middle {
            screen.clone()
        } else {
            topic_iter.next().map(<[SymptomId]>::to_vec).unwrap_or_default()
        };
        if ids.is_empty() {
            t.push(Speaker::Psychiatrist, pick(rng, &FILLER_Q));
            t.push(Speaker::Patient, pick(rng, &FILLER_A));
        } else {
            t.push(Speaker::Psychiatrist, question(ontology, &ids, rng));
            t.push(Speaker::Patient, answer(case, ontology, &ids, rng));
        }
    }
    t.mark_stage(SessionStage::End).expect("monotone");
    t.push(Speaker::Psychiatrist, pick(rng, &CLOSINGS));
    t.push(Speaker::Patient, pick(rng, &FAREWELLS));
    t
}

fn emr_text(case: &PatientCase, ontology: &Ontology) -> String {
    let mut out = format!(
        "PORTRAIT: {}\nCHIEF_COMPLAINT: {}\nSYMPTOMS:\n",
        case.portrait, case.chief_complaint
    );
    let mut n_present = 0;
    for id in ontology.ids() {
        match case.symptoms.get(id) {
            Some(f) if f.present => {
                n_present += 1;
                out.push_str(&format!("- {id}: present | {}\n", f.severity_note));
            }
            _ => out.push_str(&format!("- {id}: absent\n")),
        }
    }
    out.push_str(&format!(
        "SUMMARY: {n_present} of {} screened symptoms reported. Background: {}.\n",
        ontology.len(),
        case.life_events.join("; ").to_lowercase()
    ));
    out
}

fn diagnosis_text(case: &PatientCase, ontology: &Ontology, dep: RiskLevel, su: RiskLevel) -> String {
    let findings: Vec<String> = ontology
        .ids()
        .filter(|id| case.symptoms.get(*id).is_some_and(|f| f.present))
        .map(|id| format!("{id}=present"))
        .collect();
    format!(
        "DEPRESSION_RISK: {dep}\nSUICIDE_RISK: {su}\nFINDINGS: {}\nRATIONALE: Weighed {} reported symptoms against their duration and impact.",
        if findings.is_empty() { "none reported".to_string() } else { findings.join("; ") },
        findings.len()
    )
}

/// `k` samples whose vote is exactly `intended`: a strict majority agrees,
/// the rest sit one level away.
fn vote_samples(
    rng: &mut ChaCha8Rng,
    case: &PatientCase,
    ontology: &Ontology,
    intended: (RiskLevel, RiskLevel),
    k: usize,
) -> Vec<String> {
    let majority = k / 2 + 1;
    let mut out: Vec<String> = (0..majority)
        .map(|_| diagnosis_text(case, ontology, intended.0, intended.1))
        .collect();
    while out.len() < k {
        let dep = if rng.random_bool(0.5) { shift(intended.0, rng) } else { intended.0 };
        let su = if dep == intended.0 { shift(intended.1, rng) } else { intended.1 };
        out.push(diagnosis_text(case, ontology, dep, su));
    }
    out.shuffle(rng);
    out
}

fn skill_text(case: &PatientCase, ontology: &Ontology, predicted: (RiskLevel, RiskLevel)) -> String {
    let truth = case.ground_truth;
    let names: Vec<String> = ontology
        .entries()
        .iter()
        .filter(|e| case.symptoms.get(&e.id).is_some_and(|f| f.present))
        .map(|e| e.name.to_lowercase())
        .take(2)
        .collect();
    let evidence = if names.is_empty() {
        "few reported symptoms".to_string()
    } else {
        names.join(" and ")
    };
    let mut rules = Vec::new();
    if predicted.0 > truth.depression_risk {
        rules.push(format!("When the picture rests on {evidence}, avoid overestimating how severe the depression is."));
    } else if predicted.0 < truth.depression_risk {
        rules.push(format!("Persistent {evidence} together with functional decline should not be underestimated when grading depression."));
    }
    if predicted.1 > truth.suicide_risk {
        rules.push("Distress alone is not suicidality; grade suicidal danger only from ideation, plans, attempts or self-harm.".to_string());
    } else if predicted.1 < truth.suicide_risk {
        rules.push("Any mention of wishing not to be alive deserves a higher grade of suicidal danger until explored.".to_string());
    }
    format!("SKILL: {}", rules.join(" "))
}

fn instruction_text(
    case: &PatientCase,
    asked: &[SymptomId],
    focus: &[SymptomId],
) -> String {
    let mut out = String::from("STATUS:\n");
    for id in asked {
        out.push_str(&format!("- {id}: {}\n", status_word(case, id)));
    }
    let focus_list: Vec<String> = focus.iter().map(ToString::to_string).collect();
    out.push_str(&format!("FOCUS: {}\n", focus_list.join(", ")));
    if focus.is_empty() {
        out.push_str("GUIDANCE: Every symptom has been covered; close the interview with brief advice.\n");
    } else {
        out.push_str("GUIDANCE: Ask about the focus symptoms in plain words, one topic at a time.\n");
    }
    out
}

fn script_case(
    rng: &mut ChaCha8Rng,
    ontology: &Ontology,
    case: &PatientCase,
    opts: &FixtureOptions,
    script: &mut ScriptFile,
) {
    let id = case.case_id.as_str();
    let all: Vec<SymptomId> = ontology.ids().cloned().collect();
    let group = rng.random_range(2..=3usize);
    let groups: Vec<Vec<SymptomId>> = all.chunks(group).map(<[SymptomId]>::to_vec).collect();

    // exchange 0 opens; exchange j >= 1 covers group j - 1; after that the
    // closing lines, then filler up to the cap
    let closing_exchange = groups.len() + 1;
    let mut turn = 0;
    let mut exchange = 0;
    while turn < opts.turn_cap {
        let (q, a) = if exchange == 0 {
            (pick(rng, &OPENINGS).to_string(), case.chief_complaint.clone())
        } else if exchange < closing_exchange {
            let ids = &groups[exchange - 1];
            (question(ontology, ids, rng), answer(case, ontology, ids, rng))
        } else if exchange == closing_exchange {
            (pick(rng, &CLOSINGS).to_string(), pick(rng, &FAREWELLS).to_string())
        } else {
            (pick(rng, &FILLER_Q).to_string(), pick(rng, &FILLER_A).to_string())
        };
        script.push(TemplateId::Dialogue, id, turn, 0, q);
        if turn + 1 < opts.turn_cap {
            script.push(TemplateId::PatientReply, id, turn + 1, 0, a);
        }
        turn += 2;
        exchange += 1;
    }

    // supervisor update after exchange j (history length 2j + 2)
    let mut t = 2;
    while t < opts.turn_cap {
        let done = (t / 2 - 1).min(groups.len());
        let asked: Vec<SymptomId> = groups[..done].concat();
        let focus = groups.get(done).cloned().unwrap_or_default();
        let text = if rng.random_bool(0.03) {
            "Let me think about how the conversation is going.".to_string()
        } else {
            instruction_text(case, &asked, &focus)
        };
        script.push(TemplateId::Instruction, id, t, 0, text);
        t += 2;
    }

    let emr = emr_text(case, ontology);
    if rng.random_bool(0.05) {
        script.push(TemplateId::Emr, id, 0, 0, "The patient talked about several things.");
    } else {
        script.push(TemplateId::Emr, id, 0, 0, emr.clone());
    }
    script.push(TemplateId::Emr, id, 0, 1, emr.clone());
    script.push(TemplateId::Emr, id, 0, 2, emr);

    let truth = case.ground_truth;
    let first_right = rng.random_bool(opts.first_attempt_accuracy.clamp(0.0, 1.0));
    let first = if first_right {
        (truth.depression_risk, truth.suicide_risk)
    } else {
        wrong_prediction(truth, rng)
    };
    let mut samples = vote_samples(rng, case, ontology, first, opts.vote_k);
    let mut spare = vote_samples(rng, case, ontology, first, opts.vote_k);
    if opts.vote_k > 1 && rng.random_bool(0.08) {
        // one malformed sample; its retry draws the first spare index
        let bad = samples.iter().position(|s| !s.contains(&format!("DEPRESSION_RISK: {}\nSUICIDE_RISK: {}", first.0, first.1)));
        if let Some(i) = bad {
            spare[0] = samples[i].clone();
            samples[i] = samples[i]
                .lines()
                .filter(|l| !l.starts_with("SUICIDE_RISK"))
                .collect::<Vec<_>>()
                .join("\n");
        }
    }
    for (i, s) in samples.into_iter().enumerate() {
        script.push(TemplateId::Diagnosis, id, 0, i, s);
    }
    for (i, s) in spare.into_iter().take(2).enumerate() {
        script.push(TemplateId::Diagnosis, id, 0, opts.vote_k + i, s);
    }

    if !first_right {
        script.push(TemplateId::Skill, id, 0, 0, skill_text(case, ontology, first));
        let second = if rng.random_bool(0.7) {
            (truth.depression_risk, truth.suicide_risk)
        } else {
            first
        };
        for (i, s) in vote_samples(rng, case, ontology, second, opts.vote_k).into_iter().enumerate() {
            script.push(TemplateId::Diagnosis, id, 1, i, s);
        }
    }
}

/// Generates `n_train + n_test` cases and the matching script.
pub fn generate_fixtures(opts: &FixtureOptions, ontology: &Ontology) -> Result<FixtureBundle> {
    if opts.n_train == 0 || opts.n_test == 0 {
        return Err(Error::Precondition("n_train and n_test must both be at least 1".into()));
    }
    if opts.vote_k == 0 {
        return Err(Error::Precondition("vote_k must be at least 1".into()));
    }
    validate_turn_cap(opts.turn_cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut script = ScriptFile::new();
    let mut make = |n: usize, split: Split, prefix: &str, script: &mut ScriptFile| {
        (0..n)
            .map(|i| {
                let case = generate_case(&mut rng, ontology, format!("{prefix}-{:03}", i + 1), split);
                script_case(&mut rng, ontology, &case, opts, script);
                case
            })
            .collect::<Vec<_>>()
    };
    let train = make(opts.n_train, Split::Train, "train", &mut script);
    let test = make(opts.n_test, Split::Test, "test", &mut script);
    Ok(FixtureBundle { train, test, script })
}

/// A run configuration covering the full experiment matrix over a bundle
/// written by [`write_fixture_bundle`].
pub fn sample_run_config(opts: &FixtureOptions) -> RunConfig {
    RunConfig {
        backend: BackendConfig::scripted(SCRIPT_FILE),
        run: RunSection {
            train_cases: TRAIN_FILE.into(),
            test_cases: TEST_FILE.into(),
            seeds: vec![opts.seed],
            vote_k: opts.vote_k,
            turn_cap: opts.turn_cap,
            ..RunSection::default()
        },
        generation: Default::default(),
        experiment: default_matrix(),
    }
}

/// Writes the case files, the script and a sample `run.toml` into `dir`.
pub fn write_fixture_bundle(bundle: &FixtureBundle, opts: &FixtureOptions, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_cases(&dir.join(TRAIN_FILE), &bundle.train)?;
    save_cases(&dir.join(TEST_FILE), &bundle.test)?;
    let script_path = dir.join(SCRIPT_FILE);
    let mut text = serde_json::to_string_pretty(&bundle.script).expect("script serializes");
    text.push('\n');
    std::fs::write(&script_path, text).map_err(|e| Error::io(&script_path, e))?;
    let run_path = dir.join(RUN_FILE);
    let toml_text = sample_run_config(opts).to_toml_string()?;
    std::fs::write(&run_path, toml_text).map_err(|e| Error::io(&run_path, e))
}
