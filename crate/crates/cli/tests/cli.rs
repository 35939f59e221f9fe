use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use hitl_music::persist::{load_model, save_model, ModelFile, TrainingSummary};
use hitl_music::rater::ReplayRater;
use hitl_music::{run_training, GenConfig, HyperParams, QTable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hitl-music"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_model_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--episodes", "10", "--track-length", "8", "--seed", "42"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("episode,step,state_key,action,explored,reward"));
    assert_eq!(lines.count(), 80);
    let model = load_model(&dir.path().join("model.hitlrl.json")).unwrap();
    assert_eq!(model.summary, TrainingSummary { episodes_completed: 10, total_steps: 80 });
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("episode")).count(), 10);
}

#[test]
fn train_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |n: &str| {
        vec![
            "train".to_string(),
            "--episodes".into(),
            "12".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            format!("m{n}.json"),
            "--log".into(),
            format!("l{n}.csv"),
        ]
    };
    for n in ["1", "2"] {
        let o = bin().current_dir(dir.path()).args(args(n)).output().unwrap();
        assert!(o.status.success());
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("m1.json"), read("m2.json"));
    assert_eq!(read("l1.csv"), read("l2.csv"));
}

#[test]
fn invalid_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--episodes", "0"][..],
        &["train", "--track-length", "0"],
        &["train", "--epsilon", "1.5"],
        &["train", "--scale", "lydian"],
        &["train", "--bogus"],
        &["space", "--scale-size", "x"],
    ] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    assert!(!dir.path().join("model.hitlrl.json").exists());
}

#[test]
fn rate_stdin_matches_replayed_training() {
    let dir = tempfile::tempdir().unwrap();
    let ratings: Vec<u8> = (0..12).map(|i| (i * 3 % 10 + 1) as u8).collect();
    let input: String = ratings.iter().map(|r| format!("{r}\n")).collect();
    let mut child = bin()
        .current_dir(dir.path())
        .args(["train", "--rate-stdin", "--episodes", "3", "--track-length", "4", "--seed", "9"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("rating>"));

    let config = GenConfig { track_length: 4, seed: 9, ..GenConfig::default() };
    let hp = HyperParams { episodes: 3, seed: 9, ..HyperParams::for_config(&config) };
    let (q, log) = run_training(&config, &hp, &mut ReplayRater::new(ratings)).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    assert_eq!(csv, log.to_csv());
    assert_eq!(load_model(&dir.path().join("model.hitlrl.json")).unwrap().qtable, q);
}

#[test]
fn rate_stdin_running_dry_saves_partial_progress() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin()
        .current_dir(dir.path())
        .args(["train", "--rate-stdin", "--episodes", "3", "--track-length", "2"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"5\n5\n5\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let model = load_model(&dir.path().join("model.hitlrl.json")).unwrap();
    assert_eq!(model.summary.episodes_completed, 1);
}

#[test]
fn resume_extends_training() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["train", "--episodes", "10", "--out", "a.json"]).status.success());
    let o = run(dir.path(), &["train", "--resume", "a.json", "--episodes", "5", "--out", "b.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = load_model(&dir.path().join("a.json")).unwrap();
    let b = load_model(&dir.path().join("b.json")).unwrap();
    assert_eq!(b.summary.episodes_completed, 15);
    assert!(a.qtable.iter().all(|(s, _)| b.qtable.contains(s)));
}

#[test]
fn export_one_note_parses_independently() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["export", "--track-length", "1", "--seed", "3", "--out", "one.mid", "--json", "one.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(dir.path().join("one.mid")).unwrap();
    let smf = midly::Smf::parse(&bytes).unwrap();
    assert_eq!(smf.tracks.len(), 3);
    let wire: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("one.json")).unwrap()).unwrap();
    assert_eq!(wire["melody"].as_array().unwrap().len(), 1);
    assert_eq!(wire["percussion"].as_array().unwrap().len(), 2);

    let again = run(dir.path(), &["export", "--track-length", "1", "--seed", "3", "--out", "two.mid"]);
    assert!(again.status.success());
    assert_eq!(bytes, std::fs::read(dir.path().join("two.mid")).unwrap());
}

#[test]
fn export_from_model() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["train", "--episodes", "10"]).status.success());
    let o = run(dir.path(), &["export", "--model", "model.hitlrl.json", "--out", "m.mid"]);
    assert!(o.status.success(), "{}", stderr(&o));
    midly::Smf::parse(&std::fs::read(dir.path().join("m.mid")).unwrap()).unwrap();
}

#[test]
fn export_missing_model_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["export", "--model", "absent/thing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent/thing.json"), "{}", stderr(&o));
}

#[test]
fn space_reports_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 3] = [
        (&["7", "8", "1", "1", "0"], "5764801"),
        (&["7", "8", "4", "1", "0"], "23059204"),
        (&["7", "8", "4", "2", "16"], "1511207993344"),
    ];
    for (v, expected) in cases {
        let o = run(
            dir.path(),
            &[
                "space",
                "--scale-size",
                v[0],
                "--melody-len",
                v[1],
                "--rhythm-factor",
                v[2],
                "--perc-pitches",
                v[3],
                "--perc-slots",
                v[4],
            ],
        );
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), expected);
    }
}

#[test]
fn inspect_fresh_trained_and_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig::default();
    let fresh = ModelFile {
        hyperparams: HyperParams::for_config(&config),
        config,
        summary: TrainingSummary::default(),
        qtable: QTable::new(),
    };
    save_model(&dir.path().join("fresh.json"), &fresh).unwrap();
    let o = run(dir.path(), &["inspect", "fresh.json"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["visited_states", "0"]));

    assert!(run(dir.path(), &["train", "--episodes", "10"]).status.success());
    let o = run(dir.path(), &["inspect", "model.hitlrl.json"]);
    let visited: u64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("visited_states"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(visited >= 1);

    std::fs::write(dir.path().join("bad.json"), "{\"format_version\": 1, \"config\": ").unwrap();
    let o = run(dir.path(), &["inspect", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json"));
}
