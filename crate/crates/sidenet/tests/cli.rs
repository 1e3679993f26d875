//! CLI surface tests: a miniature pipeline exercised through the same entry
//! point the binary uses, plus the REPL session machinery.

use std::fs;
use std::path::Path;

use sidenet::cli::config::{load_base, load_side};
use sidenet::cli::repl::{run_session, ReplSession, TranscriptEntry};
use sidenet::cli::run;
use sidenet::lm::sample::GenerationConfig;
use sidenet::text::corpus::Task;

fn cli(args: &[&str]) -> sidenet::Result<()> {
    let mut argv = vec!["sidenet"];
    argv.extend_from_slice(args);
    run(argv)
}

/// One tiny label pipeline shared by the tests below.
fn build_pipeline(dir: &Path) {
    let d = dir.to_str().unwrap();
    cli(&["synth", "--task", "label", "--n", "40", "--seed", "3", "--out", &format!("{d}/data")])
        .unwrap();
    cli(&[
        "train-base", "--task", "label", "--train", &format!("{d}/data/train.jsonl"),
        "--seed", "3", "--out", &format!("{d}/base"), "--steps", "40",
        "--d", "16", "--layers", "1", "--heads", "2", "--lmax", "64",
    ])
    .unwrap();
    cli(&[
        "train-classifier", "--kind", "control", "--base", &format!("{d}/base"),
        "--train", &format!("{d}/data/train.jsonl"), "--seed", "3",
        "--out", &format!("{d}/clf"), "--epochs", "1",
    ])
    .unwrap();
    cli(&[
        "train-side", "--task", "label", "--base", &format!("{d}/base"),
        "--train", &format!("{d}/data/train.jsonl"),
        "--valid", &format!("{d}/data/valid.jsonl"),
        "--lambda", "10", "--clf", &format!("{d}/clf/clf.ckpt"), "--seed", "3",
        "--out", &format!("{d}/side"), "--max-steps", "12", "--eval-interval", "6",
    ])
    .unwrap();
}

#[test]
fn evaluate_reference_against_itself_scores_bleu_100() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    build_pipeline(tmp.path());

    // Hypotheses copied verbatim from the references.
    let corpus = sidenet::text::corpus::Corpus::load(
        &tmp.path().join("data/test.jsonl"),
        Task::Label,
    )
    .unwrap();
    let raws = sidenet::text::corpus::windowed_raw(&corpus, Task::Label, 5).unwrap();
    let mut hyp = String::new();
    for r in &raws {
        hyp.push_str(
            &serde_json::to_string(&serde_json::json!({
                "context": r.context,
                "attribute": r.act.unwrap(),
                "response": r.response,
            }))
            .unwrap(),
        );
        hyp.push('\n');
    }
    fs::write(tmp.path().join("echo.jsonl"), hyp).unwrap();

    cli(&[
        "train-classifier", "--kind", "eval", "--base", &format!("{d}/base"),
        "--train", &format!("{d}/data/train.jsonl"),
        "--test", &format!("{d}/data/test.jsonl"),
        "--seed", "4", "--out", &format!("{d}/evalclf"), "--epochs", "1",
    ])
    .unwrap();
    cli(&[
        "evaluate", "--task", "label", "--base", &format!("{d}/base"),
        "--ref", &format!("{d}/data/test.jsonl"),
        "--hyp", &format!("side={d}/echo.jsonl"),
        "--eval-clf", &format!("{d}/evalclf/eval_clf.ckpt"),
        "--out", &format!("{d}/report"),
    ])
    .unwrap();
    let report = fs::read_to_string(tmp.path().join("report/report.json")).unwrap();
    let rows: Vec<sidenet::eval::report::MetricsReport> =
        serde_json::from_str(&report).unwrap();
    assert!((rows[0].bleu1.unwrap() - 100.0).abs() < 1e-9, "bleu1 = {:?}", rows[0].bleu1);
    assert!((rows[0].meteor.unwrap() - 1.0).abs() < 0.01);
}

#[test]
fn chained_checkpoints_refuse_mismatched_base() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    build_pipeline(tmp.path());
    // A second base trained with a different seed.
    cli(&[
        "train-base", "--task", "label", "--train", &format!("{d}/data/train.jsonl"),
        "--seed", "99", "--out", &format!("{d}/base2"), "--steps", "40",
        "--d", "16", "--layers", "1", "--heads", "2", "--lmax", "64",
    ])
    .unwrap();
    let (lm, _) = load_base(&tmp.path().join("base2")).unwrap();
    let err = load_side(&tmp.path().join("side/side.ckpt"), &tmp.path().join("base2"), lm.config.d)
        .unwrap_err()
        .to_string();
    assert!(err.contains("hash mismatch"), "{err}");

    let err = cli(&[
        "generate", "--task", "label", "--method", "side",
        "--base", &format!("{d}/base2"), "--side", &format!("{d}/side/side.ckpt"),
        "--input", &format!("{d}/data/test.jsonl"), "--out", &format!("{d}/bad.jsonl"),
        "--seed", "1",
    ])
    .unwrap_err()
    .to_string();
    assert!(err.contains("hash mismatch"), "{err}");
}

#[test]
fn unknown_flags_and_missing_artifacts_error_cleanly() {
    assert!(cli(&["synth", "--task", "label", "--n", "5", "--seed", "1", "--nonsense"]).is_err());
    let err = cli(&["synth", "--task", "label", "--n", "5"]).unwrap_err().to_string();
    assert!(err.contains("--seed") || err.contains("--out"), "{err}");
    let err = cli(&["train-base", "--task", "label", "--train", "/nonexistent.jsonl",
        "--seed", "1", "--out", "/tmp/never"])
        .unwrap_err()
        .to_string();
    assert!(err.contains("nonexistent"), "{err}");
}

#[test]
fn repl_session_steers_and_replays_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    build_pipeline(tmp.path());
    let (lm, vocab) = load_base(&tmp.path().join("base")).unwrap();
    let (net, _) = load_side(
        &tmp.path().join("side/side.ckpt"),
        &tmp.path().join("base"),
        lm.config.d,
    )
    .unwrap();
    let gen = GenerationConfig { top_k: 5, max_len: 8, seed: 0 };

    let script = ":act question\nhello there\n:act nosuchact\n:alpha 1.0\ntell me something\n:quit\n";
    let mut out = Vec::new();
    let mut session = ReplSession::new(&lm, Some(&net), &vocab, Task::Label, gen, 42);
    let transcript = run_session(&mut session, script.as_bytes(), &mut out).unwrap();
    let printed = String::from_utf8(out).unwrap();

    // Bad attribute reprompts without corrupting the session.
    assert!(printed.contains("unknown act 'nosuchact'"), "{printed}");
    let responses: Vec<&TranscriptEntry> =
        transcript.iter().filter(|e| e.response.is_some()).collect();
    assert_eq!(responses.len(), 2);

    // Replaying the same inputs reproduces the outputs token for token.
    let mut out2 = Vec::new();
    let mut session2 = ReplSession::new(&lm, Some(&net), &vocab, Task::Label, gen, 42);
    let transcript2 = run_session(&mut session2, script.as_bytes(), &mut out2).unwrap();
    assert_eq!(transcript, transcript2);

    // A different seed diverges.
    let mut out3 = Vec::new();
    let mut session3 = ReplSession::new(&lm, Some(&net), &vocab, Task::Label, gen, 43);
    let transcript3 = run_session(&mut session3, script.as_bytes(), &mut out3).unwrap();
    assert_ne!(transcript, transcript3);
}

#[test]
fn forced_alpha_reproduces_base_decoding_in_repl() {
    let tmp = tempfile::tempdir().unwrap();
    build_pipeline(tmp.path());
    let (lm, vocab) = load_base(&tmp.path().join("base")).unwrap();
    let (net, _) = load_side(
        &tmp.path().join("side/side.ckpt"),
        &tmp.path().join("base"),
        lm.config.d,
    )
    .unwrap();
    let gen = GenerationConfig { top_k: 5, max_len: 8, seed: 0 };

    // Side session with alpha forced to 1 behaves exactly like a base-only
    // session under the same seed.
    let script = ":alpha 1.0\nhello there friend\n:quit\n";
    let mut out = Vec::new();
    let mut with_side = ReplSession::new(&lm, Some(&net), &vocab, Task::Label, gen, 7);
    let t1 = run_session(&mut with_side, script.as_bytes(), &mut out).unwrap();

    let script_base = "hello there friend\n:quit\n";
    let mut out2 = Vec::new();
    let mut base_only = ReplSession::new(&lm, None, &vocab, Task::Label, gen, 7);
    let t2 = run_session(&mut base_only, script_base.as_bytes(), &mut out2).unwrap();

    let r1 = t1.iter().find_map(|e| e.response.clone()).unwrap();
    let r2 = t2.iter().find_map(|e| e.response.clone()).unwrap();
    assert_eq!(r1, r2);
}
