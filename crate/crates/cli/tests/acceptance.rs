//! End-to-end acceptance suite, one check per criterion.
//!
//! Runs without the libtest harness so every criterion prints exactly one
//! `PASS` or `FAIL` line, in order, even when stdout is captured upstream.
//! Criteria 1, 2, 8, 9 and 10 drive the `audit` binary on the seed-42
//! fixture; the others compare library output against independent oracles.

use audit_core::ambiguity::{composite_uncertainty, tier_partition, Weights};
use audit_core::analysis::{profile_from_assessments, RiskPosture};
use audit_core::parser::{parse_payload, AssessmentPayload};
use audit_core::query::execute_query;
use audit_core::report::Report;
use audit_core::synth::{synthesize, SynthSpec};
use audit_core::workspace::{ASSESSMENTS_FILE, RUNS_DIR};
use audit_core::{
    Collection, Exact, ModelSpec, RejectReason, RiskAssessment, RunRecord, RunStatus,
    ScenarioDisagreement, ScenarioQuery, SceneStore, Workspace,
};
use num_traits::{ToPrimitive, Zero};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

const BIN: &str = env!("CARGO_BIN_EXE_audit");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn audit(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "audit {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Artifacts of one seed-42 pipeline run through the CLI.
struct Pipeline {
    dir: TempDir,
    store: PathBuf,
    run_id: String,
    anchors: usize,
    elapsed: Duration,
}

impl Pipeline {
    fn run(models: &Path, extra_run_args: &[&str]) -> Result<Pipeline, String> {
        let started = Instant::now();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = |name: &str| dir.path().join(name);
        let store = p("store");
        audit(&[
            "synth",
            "--seed",
            "42",
            "--spec",
            s(&fixture("synth_seed42.json")),
            "--out",
            s(&p("synth.jsonl")),
        ])?;
        audit(&["ingest", s(&p("synth.jsonl")), "--store", s(&store)])?;
        audit(&[
            "query",
            "--store",
            s(&store),
            "--query",
            s(&fixture("near_people_query.json")),
            "--out",
            s(&p("context.json")),
        ])?;
        audit(&[
            "anchors",
            "--store",
            s(&store),
            "--context",
            s(&p("context.json")),
            "--k",
            "3",
            "--m",
            "3",
            "--limit",
            "16",
            "--out",
            s(&p("anchors.json")),
        ])?;
        let anchors: Vec<Value> =
            serde_json::from_slice(&fs::read(p("anchors.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        audit(&[
            "window",
            "--store",
            s(&store),
            "--anchors",
            s(&p("anchors.json")),
            "--k",
            "3",
            "--m",
            "3",
            "--collection",
            "near-people",
        ])?;
        let mut args = vec![
            "run",
            "--store",
            s(&store),
            "--collection",
            "near-people",
            "--models",
            s(models),
        ];
        args.extend_from_slice(extra_run_args);
        let run_id = audit(&args)?.trim().to_string();
        audit(&["parse", "--store", s(&store), "--run", &run_id])?;
        audit(&[
            "report",
            "--store",
            s(&store),
            "--run",
            &run_id,
            "--out",
            s(&p("out/report.json")),
        ])?;
        Ok(Pipeline {
            store,
            run_id,
            anchors: anchors.len(),
            elapsed: started.elapsed(),
            dir,
        })
    }

    fn workspace(&self) -> Workspace {
        Workspace::open(&self.store).expect("store opens")
    }

    fn out(&self, name: &str) -> Vec<u8> {
        fs::read(self.dir.path().join("out").join(name)).expect("report artifact")
    }

    fn assessments(&self) -> Vec<u8> {
        fs::read(
            self.store
                .join(RUNS_DIR)
                .join(&self.run_id)
                .join(ASSESSMENTS_FILE),
        )
        .expect("assessments file")
    }

    fn collection(&self) -> Collection {
        self.workspace()
            .load_collection("near-people")
            .expect("collection")
    }

    fn report(&self) -> Report {
        serde_json::from_slice(&self.out("report.json")).expect("report parses")
    }
}

fn criterion_1(p: &Pipeline) -> Outcome {
    let collection = p.collection();
    let records = p
        .workspace()
        .load_records(&p.run_id)
        .map_err(|e| e.to_string())?;
    let accepted = String::from_utf8_lossy(&p.assessments()).lines().count();
    ensure!(p.anchors == 16, "{} anchors, expected 16", p.anchors);
    ensure!(
        collection.windows.len() == 16,
        "{} windows",
        collection.windows.len()
    );
    ensure!(
        collection
            .windows
            .iter()
            .all(|w| w.states.len() == 7 && w.k == 3 && w.m == 3),
        "a window is not 7 complete states"
    );
    ensure!(
        records.len() == 48,
        "{} records, expected 48",
        records.len()
    );
    ensure!(
        records.iter().all(|r| r.status == RunStatus::Ok),
        "non-ok record"
    );
    ensure!(
        accepted == 48,
        "{accepted} accepted assessments, expected 48"
    );
    ensure!(p.elapsed < Duration::from_secs(60), "took {:?}", p.elapsed);
    Ok(format!(
        "16 windows x 3 personas = 48/48 accepted in {:.2}s",
        p.elapsed.as_secs_f64()
    ))
}

fn criterion_2(a: &Pipeline) -> Outcome {
    let b = Pipeline::run(&fixture("personas.json"), &[])?;
    let (ca, cb) = (a.collection(), b.collection());
    ensure!(ca.window_ids == cb.window_ids, "window ids differ");
    ensure!(ca.windows == cb.windows, "window contents differ");
    let hashes = |p: &Pipeline| -> Result<BTreeSet<(String, String)>, String> {
        Ok(p.workspace()
            .load_records(&p.run_id)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.window_id, r.prompt_hash))
            .collect())
    };
    let ha = hashes(a)?;
    ensure!(ha == hashes(&b)?, "prompt hashes differ");
    ensure!(
        ha.len() == 16,
        "{} distinct (window, prompt) pairs",
        ha.len()
    );
    for w in &ca.windows {
        let text = audit(&["prompt", "--store", s(&a.store), "--window", &w.window_id])?;
        let other = audit(&["prompt", "--store", s(&b.store), "--window", &w.window_id])?;
        ensure!(text == other, "prompt text differs for {}", w.window_id);
    }
    ensure!(a.run_id != b.run_id, "run ids should be fresh per run");
    ensure!(
        a.assessments() == b.assessments(),
        "assessments.jsonl differs"
    );
    for file in ["report.json", "uncertainty.csv", "heatmap.csv"] {
        ensure!(a.out(file) == b.out(file), "{file} differs");
    }
    Ok(
        "windows, prompts, assessments, report.json, uncertainty.csv, heatmap.csv byte-identical"
            .into(),
    )
}

/// Brute-force predicate over the raw JSON of a state and a query.
fn oracle_matches(state: &Value, q: &Value) -> bool {
    let in_set = |field: &str, v: &Value| {
        q.get(field)
            .is_none_or(|set| set.as_array().unwrap().contains(v))
    };
    if !in_set("acquisitions", &state["acq"])
        || !in_set("weather", &state["env"]["weather"])
        || !in_set("illumination", &state["env"]["illumination"])
        || !in_set("road_type", &state["road"]["type"])
    {
        return false;
    }
    if let Some(r) = q.get("time_range") {
        let t = state["t"].as_i64().unwrap();
        if t < r[0].as_i64().unwrap() || t > r[1].as_i64().unwrap() {
            return false;
        }
    }
    if let Some(r) = q.get("ego_speed_mps") {
        let v = state["ego"]["speed_mps"].as_f64().unwrap();
        if v < r[0].as_f64().unwrap() || v > r[1].as_f64().unwrap() {
            return false;
        }
    }
    let filters = q
        .get("object_filters")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    filters.iter().all(|f| {
        state["objects"].as_array().unwrap().iter().any(|o| {
            o["class"] == f["class"]
                && f.get("max_dist_m")
                    .is_none_or(|d| o["dist_m"].as_f64().unwrap() <= d.as_f64().unwrap())
                && f.get("lane_rel")
                    .is_none_or(|set| set.as_array().unwrap().contains(&o["lane_rel"]))
        })
    })
}

fn pick(rng: &mut ChaCha8Rng, options: &[&str]) -> Value {
    let n = rng.random_range(1..=options.len());
    json!(options.choose_multiple(rng, n).collect::<Vec<_>>())
}

fn random_query(rng: &mut ChaCha8Rng, acqs: &[String], t_lo: i64, t_hi: i64) -> Value {
    let mut q = serde_json::Map::new();
    if rng.random_bool(0.7) {
        let filters: Vec<Value> = (0..rng.random_range(1..=2))
            .map(|_| {
                let mut f = serde_json::Map::new();
                let class = *[
                    "person",
                    "cyclist",
                    "car",
                    "truck",
                    "bus",
                    "motorcycle",
                    "other",
                ]
                .choose(rng)
                .unwrap();
                f.insert("class".into(), json!(class));
                if rng.random_bool(0.6) {
                    f.insert("max_dist_m".into(), json!(rng.random_range(0.0..40.0f64)));
                }
                if rng.random_bool(0.3) {
                    let codes: Vec<i8> = [-2i8, -1, 0, 1, 2, 9]
                        .choose_multiple(rng, 3)
                        .copied()
                        .collect();
                    f.insert("lane_rel".into(), json!(codes));
                }
                Value::Object(f)
            })
            .collect();
        q.insert("object_filters".into(), json!(filters));
    }
    if rng.random_bool(0.3) {
        let lo = rng.random_range(0.0..12.0f64);
        q.insert(
            "ego_speed_mps".into(),
            json!([lo, lo + rng.random_range(0.0..10.0f64)]),
        );
    }
    if rng.random_bool(0.3) {
        q.insert(
            "weather".into(),
            pick(rng, &["clear", "rain", "fog", "overcast", "other"]),
        );
    }
    if rng.random_bool(0.3) {
        q.insert("illumination".into(), pick(rng, &["day", "dusk", "night"]));
    }
    if rng.random_bool(0.3) {
        q.insert(
            "road_type".into(),
            pick(
                rng,
                &[
                    "residential",
                    "arterial",
                    "highway",
                    "intersection",
                    "other",
                ],
            ),
        );
    }
    if rng.random_bool(0.3) {
        let names: Vec<&str> = acqs.iter().map(String::as_str).collect();
        q.insert("acquisitions".into(), pick(rng, &names));
    }
    if rng.random_bool(0.3) {
        let a = rng.random_range(t_lo - 5..=t_hi + 5);
        let b = rng.random_range(a..=t_hi + 10);
        q.insert("time_range".into(), json!([a, b]));
    }
    Value::Object(q)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut stores, mut queries, mut mismatches, mut hits) = (0, 0, 0usize, 0usize);
    for seed in 0..60u64 {
        let acquisitions = rng.random_range(1..=4usize);
        let mut spec = SynthSpec::new(
            acquisitions,
            rng.random_range(7..=(1000 / acquisitions) as u32),
        );
        spec.start_t = rng.random_range(0..1_000_000);
        let text = synthesize(seed, &spec).map_err(|e| e.to_string())?;
        let store = SceneStore::ingest_str(&text).map_err(|e| e.to_string())?;
        ensure!(store.len() <= 1000, "store too large");
        let mut raw: Vec<Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        raw.sort_by(|a, b| {
            (a["acq"].as_str(), a["t"].as_i64()).cmp(&(b["acq"].as_str(), b["t"].as_i64()))
        });
        let acqs: Vec<String> = store
            .acquisitions()
            .into_iter()
            .map(|a| a.acquisition_id)
            .collect();
        let t_hi = spec.start_t + i64::from(spec.duration_s);
        stores += 1;
        for _ in 0..5 {
            let qv = random_query(&mut rng, &acqs, spec.start_t, t_hi);
            let query: ScenarioQuery =
                serde_json::from_value(qv.clone()).map_err(|e| e.to_string())?;
            let got: Vec<(String, i64)> = execute_query(&store, &query)
                .map_err(|e| e.to_string())?
                .hits
                .into_iter()
                .map(|h| (h.acquisition_id, h.t))
                .collect();
            let expected: Vec<(String, i64)> = raw
                .iter()
                .filter(|st| oracle_matches(st, &qv))
                .map(|st| {
                    (
                        st["acq"].as_str().unwrap().to_string(),
                        st["t"].as_i64().unwrap(),
                    )
                })
                .collect();
            queries += 1;
            hits += expected.len();
            if got != expected {
                mismatches += 1;
            }
        }
    }
    ensure!(stores >= 50 && queries >= 200, "too few cases");
    ensure!(
        mismatches == 0,
        "{mismatches} of {queries} queries disagree with the oracle"
    );
    ensure!(
        hits > 0,
        "oracle never matched anything; queries are vacuous"
    );
    Ok(format!(
        "{stores} stores, {queries} queries, {hits} hits, 0 mismatches"
    ))
}

fn random_payload(rng: &mut ChaCha8Rng) -> AssessmentPayload {
    let level = rng.random_range(0..=6u8);
    let mut types: Vec<u8> = (2..=10).collect();
    types.shuffle(rng);
    types.truncate(rng.random_range(usize::from(level >= 2)..=4));
    let mut evidence: Vec<u8> = (1..=8).collect();
    evidence.shuffle(rng);
    evidence.truncate(rng.random_range(0..=8));
    AssessmentPayload {
        window_has_risk: u8::from(level >= 1),
        overall_risk_level: level,
        risk_types: types,
        evidence_signals: evidence,
        uncertainty: rng.random_range(0..=3),
    }
}

fn with(p: &AssessmentPayload, field: &str, v: Value) -> String {
    let mut obj = serde_json::to_value(p).unwrap();
    obj[field] = v;
    obj.to_string()
}

/// One mutation of a conformant payload and the reason it must be rejected with.
fn mutate(rng: &mut ChaCha8Rng, p: &AssessmentPayload) -> (String, RejectReason) {
    let text = p.to_json();
    let out_of_range = |rng: &mut ChaCha8Rng, valid: std::ops::RangeInclusive<i64>| loop {
        let c = rng.random_range(-20..=40i64);
        if !valid.contains(&c) {
            break c;
        }
    };
    match rng.random_range(0..14) {
        0 => (
            with(p, "overall_risk_level", json!(out_of_range(rng, 0..=6))),
            RejectReason::CodeOutOfRange,
        ),
        1 => {
            let mut codes: Vec<Value> = p.risk_types.iter().map(|&c| json!(c)).collect();
            let at = rng.random_range(0..=codes.len());
            codes.insert(at, json!(out_of_range(rng, 2..=10)));
            (
                with(p, "risk_types", json!(codes)),
                RejectReason::CodeOutOfRange,
            )
        }
        2 => {
            let mut codes: Vec<Value> = p.evidence_signals.iter().map(|&c| json!(c)).collect();
            let at = rng.random_range(0..=codes.len());
            codes.insert(at, json!(out_of_range(rng, 1..=8)));
            (
                with(p, "evidence_signals", json!(codes)),
                RejectReason::CodeOutOfRange,
            )
        }
        3 => (
            with(p, "uncertainty", json!(out_of_range(rng, 0..=3))),
            RejectReason::CodeOutOfRange,
        ),
        4 => {
            let name = *[
                "rationale",
                "confidence",
                "risk_level",
                "Uncertainty",
                "notes",
            ]
            .choose(rng)
            .unwrap();
            (with(p, name, json!("x")), RejectReason::UnknownField)
        }
        5 => {
            let mut codes = p.risk_types.clone();
            if codes.is_empty() {
                codes.push(2);
            }
            let dup = *codes.choose(rng).unwrap();
            codes.insert(rng.random_range(0..=codes.len()), dup);
            (
                with(p, "risk_types", json!(codes)),
                RejectReason::ConsistencyViolation,
            )
        }
        6 => {
            let mut codes = p.evidence_signals.clone();
            if codes.is_empty() {
                codes.push(1);
            }
            let dup = *codes.choose(rng).unwrap();
            codes.insert(rng.random_range(0..=codes.len()), dup);
            (
                with(p, "evidence_signals", json!(codes)),
                RejectReason::ConsistencyViolation,
            )
        }
        7 => {
            let fence = *["```json\n", "```\n", "```JSON\n"].choose(rng).unwrap();
            (format!("{fence}{text}\n```"), RejectReason::MarkdownWrapper)
        }
        8 => {
            let prose = *[
                " Hope this helps.",
                "\nLet me know if you need more.",
                " // end",
                " {}",
            ]
            .choose(rng)
            .unwrap();
            (format!("{text}{prose}"), RejectReason::ExtraText)
        }
        9 => {
            let prose = *["Here is the assessment: ", "Sure!\n", "Answer: "]
                .choose(rng)
                .unwrap();
            (format!("{prose}{text}"), RejectReason::ExtraText)
        }
        10 => {
            let field = *["window_has_risk", "overall_risk_level", "uncertainty"]
                .choose(rng)
                .unwrap();
            let v = serde_json::to_value(p).unwrap()[field].clone();
            (
                with(p, field, json!(v.to_string())),
                RejectReason::TypeMismatch,
            )
        }
        11 => {
            let mut obj = serde_json::to_value(p).unwrap();
            let field = *audit_core::parser::FIELDS.choose(rng).unwrap();
            obj.as_object_mut().unwrap().remove(field);
            (obj.to_string(), RejectReason::TypeMismatch)
        }
        12 => {
            let cut = rng.random_range(1..text.len() - 1);
            (text[..cut].to_string(), RejectReason::NotJson)
        }
        _ => {
            let trimmed = text.trim_end_matches('}');
            (
                format!("{trimmed},\"uncertainty\":{}}}", p.uncertainty),
                RejectReason::ConsistencyViolation,
            )
        }
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut by_reason: BTreeMap<RejectReason, usize> = BTreeMap::new();
    let mut mutated = 0;
    for _ in 0..1400 {
        let p = random_payload(&mut rng);
        let (text, expected) = mutate(&mut rng, &p);
        match parse_payload(&text) {
            Ok(_) => return Err(format!("accepted mutated payload {text}")),
            Err(f) if f.reason != expected => {
                return Err(format!("{text}: rejected as {} not {expected}", f.reason));
            }
            Err(_) => *by_reason.entry(expected).or_default() += 1,
        }
        mutated += 1;
    }
    ensure!(
        by_reason.len() == RejectReason::ALL.len(),
        "not every reason exercised: {by_reason:?}"
    );
    let mut conformant = 0;
    for i in 0..1000 {
        let p = random_payload(&mut rng);
        // Key order and whitespace are free.
        let text = if i % 2 == 0 {
            p.to_json()
        } else {
            format!(
                "  {}\n",
                serde_json::to_string_pretty(&serde_json::to_value(&p).unwrap()).unwrap()
            )
        };
        let got = parse_payload(&text)
            .map_err(|f| format!("rejected conformant {text}: {}", f.reason))?;
        ensure!(got == p, "decoded payload differs for {text}");
        ensure!(
            parse_payload(&got.to_json()).as_ref() == Ok(&got),
            "round trip differs for {text}"
        );
        conformant += 1;
    }
    Ok(format!("{mutated} mutated rejected with the expected reason, {conformant} conformant accepted and round-tripped"))
}

fn random_cohort(rng: &mut ChaCha8Rng, window: &str, m: usize) -> Vec<RiskAssessment> {
    (0..m)
        .map(|i| RiskAssessment::from_payload(window, &format!("m{i}"), random_payload(rng)))
        .collect()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let none = BTreeMap::new();
    for case in 0..2000 {
        let n = rng.random_range(1..=24);
        let assessments: Vec<RiskAssessment> = (0..n)
            .map(|w| RiskAssessment::from_payload(&format!("w{w}"), "m", random_payload(&mut rng)))
            .collect();
        let n = n as i64;
        let mut last_rho = None;
        for tau in 1..=6u8 {
            let exact = profile_from_assessments::<Exact>("m", &assessments, &none, tau)
                .ok_or("no profile")?;
            let float = profile_from_assessments::<f64>("m", &assessments, &none, tau)
                .ok_or("no profile")?;
            let level_sum: i64 = assessments
                .iter()
                .map(|a| i64::from(a.overall_risk_level))
                .sum();
            let high = assessments
                .iter()
                .filter(|a| a.overall_risk_level >= tau)
                .count() as i64;
            let evidence_sum: i64 = assessments
                .iter()
                .map(|a| a.evidence_signals.iter().collect::<BTreeSet<_>>().len() as i64)
                .sum();
            let mut dist: BTreeMap<u8, usize> = BTreeMap::new();
            for a in &assessments {
                if let Some(&f) = a.risk_types.first() {
                    *dist.entry(f).or_default() += 1;
                }
            }
            let oracle = [
                Exact::new(level_sum, n),
                Exact::new(high, n),
                Exact::new(evidence_sum, n),
            ];
            let got = [exact.mu_risk, exact.rho_high, exact.mu_evidence];
            ensure!(
                got == oracle,
                "case {case} tau {tau}: {got:?} != {oracle:?}"
            );
            ensure!(
                exact.factor_dist == dist && float.factor_dist == dist,
                "case {case}: factor_dist differs"
            );
            for (f, o) in [float.mu_risk, float.rho_high, float.mu_evidence]
                .iter()
                .zip(oracle)
            {
                ensure!(
                    (f - o.to_f64().unwrap()).abs() <= 1e-12,
                    "case {case}: f64 drift {f} vs {o}"
                );
            }
            if let Some(prev) = last_rho {
                ensure!(
                    exact.rho_high <= prev,
                    "case {case}: rho_high rose at tau {tau}"
                );
            }
            last_rho = Some(exact.rho_high);
        }
    }
    Ok("2000 cohorts x tau 1..6 exact; f64 within 1e-12; rho_high non-increasing".into())
}

/// Composite uncertainty recomputed from first principles in exact arithmetic.
fn composite_oracle(levels: &[i64], tau: i64, counts: &[i64], factors: &[Option<u8>]) -> Exact {
    let m = levels.len() as i64;
    let range = |v: &[i64]| v.iter().max().unwrap() - v.iter().min().unwrap();
    let d_sev = Exact::new(range(levels), 6);
    let escalated = levels.iter().filter(|&&l| l >= tau).count() as i64;
    let d_esc = Exact::from_integer(i64::from(escalated > 0 && escalated < m));
    let d_evi = Exact::new(range(counts), 8);
    let d_fac = if factors.iter().all(Option::is_none) {
        Exact::zero()
    } else {
        let mode = factors
            .iter()
            .map(|f| factors.iter().filter(|g| *g == f).count())
            .max()
            .unwrap() as i64;
        Exact::new(m - mode, m - 1)
    };
    (d_sev + d_esc + d_evi + d_fac) / Exact::from_integer(4)
}

fn assessment(
    window: &str,
    model: usize,
    level: u8,
    evidence: usize,
    factor: Option<u8>,
) -> RiskAssessment {
    RiskAssessment {
        window_id: window.into(),
        model_id: format!("m{model}"),
        window_has_risk: u8::from(level >= 1),
        overall_risk_level: level,
        risk_types: factor.into_iter().collect(),
        evidence_signals: (1..=evidence as u8).collect(),
        uncertainty: 1,
    }
}

fn criterion_6() -> Outcome {
    let weights = Weights::<Exact>::equal();
    let exact =
        |c: &[RiskAssessment]| composite_uncertainty(c, 4, &weights).map_err(|e| e.to_string());

    let worked: Vec<RiskAssessment> = [(2u8, 3usize, 2u8), (4, 3, 2), (5, 5, 4)]
        .iter()
        .enumerate()
        .map(|(i, &(l, e, f))| assessment("w", i, l, e, Some(f)))
        .collect();
    let oracle = composite_oracle(&[2, 4, 5], 4, &[3, 3, 5], &[Some(2), Some(2), Some(4)]);
    ensure!(
        oracle == Exact::new(9, 16),
        "oracle gives {oracle}, expected 0.5625"
    );
    let got = exact(&worked)?.composite;
    ensure!(
        got == oracle,
        "worked example scores {got}, oracle {oracle}"
    );
    let float =
        composite_uncertainty(&worked, 4, &Weights::<f64>::equal()).map_err(|e| e.to_string())?;
    ensure!(
        (float.composite - 0.5625).abs() <= 1e-12,
        "f64 worked example {}",
        float.composite
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let template = random_cohort(&mut rng, "w", 1).remove(0);
        let same: Vec<RiskAssessment> = (0..rng.random_range(2..=5))
            .map(|i| RiskAssessment {
                model_id: format!("m{i}"),
                ..template.clone()
            })
            .collect();
        ensure!(
            exact(&same)?.composite.is_zero(),
            "identical cohort scored non-zero"
        );
    }
    let maximal = [
        assessment("w", 0, 0, 0, Some(2)),
        assessment("w", 1, 6, 8, Some(3)),
    ];
    let max = exact(&maximal)?.composite;
    ensure!(max == Exact::from_integer(1), "maximal cohort scores {max}");

    let fweights = Weights::<f64>::equal();
    for case in 0..10_000 {
        let m = rng.random_range(2..=6);
        let cohort = random_cohort(&mut rng, "w", m);
        let tau = rng.random_range(1..=6u8);
        let d = composite_uncertainty(&cohort, tau, &fweights).map_err(|e| e.to_string())?;
        ensure!(
            (0.0..=1.0).contains(&d.composite),
            "case {case}: composite {}",
            d.composite
        );
        let oracle = composite_oracle(
            &cohort
                .iter()
                .map(|a| i64::from(a.overall_risk_level))
                .collect::<Vec<_>>(),
            i64::from(tau),
            &cohort
                .iter()
                .map(|a| a.evidence_signals.len() as i64)
                .collect::<Vec<_>>(),
            &cohort
                .iter()
                .map(|a| a.risk_types.first().copied())
                .collect::<Vec<_>>(),
        );
        ensure!(
            (d.composite - oracle.to_f64().unwrap()).abs() <= 1e-12,
            "case {case}: {} vs oracle {oracle}",
            d.composite
        );
    }
    Ok("identical = 0, maximal = 1, 10000 random in [0,1] and equal to oracle, worked example = 0.5625".into())
}

fn criterion_7(p: &Pipeline) -> Outcome {
    let sizes = |n: usize, rng: &mut ChaCha8Rng| -> Result<(usize, usize, usize), String> {
        let scored: Vec<ScenarioDisagreement> = (0..n)
            .map(|i| {
                composite_uncertainty(
                    &random_cohort(rng, &format!("w{i:03}"), 3),
                    4,
                    &Weights::equal(),
                )
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        Ok(tier_partition(&scored).sizes())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    ensure!(
        sizes(16, &mut rng)? == (5, 6, 5),
        "N=16 gives {:?}",
        sizes(16, &mut rng)?
    );
    let fixture = p.report().tiers.sizes();
    ensure!(fixture == (5, 6, 5), "seed-42 report tiers {fixture:?}");
    for _ in 0..300 {
        let n = rng.random_range(0..=120);
        let expected = (n / 3, n - 2 * (n / 3), n / 3);
        let got = sizes(n, &mut rng)?;
        ensure!(got == expected, "N={n}: {got:?} != {expected:?}");
    }
    Ok("N=16 -> (5,6,5) synthetic and seed-42; 300 random N match the floor formula".into())
}

fn criterion_8(p: &Pipeline) -> Outcome {
    let report = p.report();
    let conservative: Vec<&str> = report
        .profiles
        .iter()
        .filter(|pr| {
            pr.labels
                .is_some_and(|l| l.risk_posture == RiskPosture::Conservative)
        })
        .map(|pr| pr.model_id.as_str())
        .collect();
    ensure!(
        conservative == ["persona-conservative"],
        "conservative labels on {conservative:?}"
    );
    let rho = |id: &str| {
        report
            .profiles
            .iter()
            .find(|pr| pr.model_id == id)
            .map(|pr| pr.rho_high)
    };
    let (c, t) = (
        rho("persona-conservative").ok_or("no conservative")?,
        rho("persona-tolerant").ok_or("no tolerant")?,
    );
    ensure!(c > t, "rho_high conservative {c} <= tolerant {t}");
    Ok(format!(
        "only persona-conservative is conservative; rho_high {c:.4} > {t:.4}"
    ))
}

fn stable_view(records: &[RunRecord]) -> Vec<(String, String, String, RunStatus, String, u32)> {
    let mut v: Vec<_> = records
        .iter()
        .map(|r| {
            (
                r.window_id.clone(),
                r.model_id.clone(),
                r.prompt_hash.clone(),
                r.status,
                r.raw_response.clone(),
                r.attempts,
            )
        })
        .collect();
    v.sort();
    v
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut models = ModelSpec::reference_personas();
    let mut dead = ModelSpec::remote(
        "unreachable",
        audit_core::runner::ModelKind::RemoteChat,
        "http://127.0.0.1:9/v1/chat/completions",
    );
    dead.retry.base_backoff_ms = 5;
    dead.retry.max_backoff_ms = 20;
    dead.timeout_s = 5.0;
    models.push(dead);
    let models_file = dir.path().join("models.json");
    fs::write(&models_file, serde_json::to_vec(&models).unwrap()).map_err(|e| e.to_string())?;

    let a = Pipeline::run(&models_file, &["--shuffle-seed", "1"])?;
    let ws = a.workspace();
    let records = ws.load_records(&a.run_id).map_err(|e| e.to_string())?;
    ensure!(
        records.len() == 64,
        "{} records, expected 64",
        records.len()
    );
    for r in &records {
        let expected = if r.model_id == "unreachable" {
            RunStatus::TransportError
        } else {
            RunStatus::Ok
        };
        ensure!(
            r.status == expected,
            "{} / {}: {:?}",
            r.model_id,
            r.window_id,
            r.status
        );
    }
    let report = a.report();
    ensure!(
        report.unprofiled_models == ["unreachable"],
        "unprofiled {:?}",
        report.unprofiled_models
    );
    ensure!(
        report.profiles.len() == 3,
        "{} profiles",
        report.profiles.len()
    );
    ensure!(
        report.uncertainty.len() == 16,
        "{} scored windows",
        report.uncertainty.len()
    );
    let annexed = report
        .coverage_annex
        .iter()
        .filter(|e| e.cause == "transport_error")
        .count();
    ensure!(
        annexed == 16,
        "{annexed} transport errors in the coverage annex"
    );

    let b = Pipeline::run(&models_file, &["--shuffle-seed", "99", "--parallel", "2"])?;
    let other = b
        .workspace()
        .load_records(&b.run_id)
        .map_err(|e| e.to_string())?;
    ensure!(
        stable_view(&records) == stable_view(&other),
        "record set depends on dispatch order"
    );
    ensure!(
        a.out("report.json") == b.out("report.json"),
        "report depends on dispatch order"
    );
    Ok(
        "64 records, 16 transport_error, report over 3 models, identical under reshuffled dispatch"
            .into(),
    )
}

fn criterion_10(p: &Pipeline) -> Outcome {
    let cli = audit(&["report", "--store", s(&p.store), "--run", &p.run_id])?;
    ensure!(
        cli.as_bytes() == p.out("report.json"),
        "report stdout differs from report.json"
    );
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let body = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
            .await
            .map_err(|e| e.to_string())?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        tokio::spawn(audit_service::serve_on(listener, p.workspace()));
        let url = format!("http://{addr}/runs/{}/report", p.run_id);
        let resp = reqwest::get(url).await.map_err(|e| e.to_string())?;
        ensure!(
            resp.status().is_success(),
            "service answered {}",
            resp.status()
        );
        resp.bytes().await.map_err(|e| e.to_string())
    })?;
    ensure!(
        body.as_ref() == cli.as_bytes(),
        "service body differs from CLI output"
    );
    Ok(format!("{} bytes identical", body.len()))
}

fn main() {
    let started = Instant::now();
    let base = Pipeline::run(&fixture("personas.json"), &[]);
    let check = |f: &dyn Fn(&Pipeline) -> Outcome| match &base {
        Ok(p) => f(p),
        Err(e) => Err(format!("seed-42 pipeline failed: {e}")),
    };
    let criteria: Vec<(&str, Check)> = vec![
        ("protocol shape", Box::new(|| check(&criterion_1))),
        ("determinism", Box::new(|| check(&criterion_2))),
        ("query oracle", Box::new(criterion_3)),
        ("parser strictness", Box::new(criterion_4)),
        ("profile metrics", Box::new(criterion_5)),
        ("composite uncertainty", Box::new(criterion_6)),
        ("tier sizes", Box::new(|| check(&criterion_7))),
        ("persona stratification", Box::new(|| check(&criterion_8))),
        ("runner resilience", Box::new(criterion_9)),
        ("cli/service parity", Box::new(|| check(&criterion_10))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "criterion {:>2} {name}: PASS ({detail}) [{secs:.2}s]",
                i + 1
            ),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}) [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.2}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
