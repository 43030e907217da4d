mod common;

use std::fs;

use common::{field, macro_row, msecnn, ok, s, synth_cache, tree};

fn toy_dataset(root: &std::path::Path) {
    let audio = root.join("audio");
    for (i, dir) in ["0", "c", "e"].iter().enumerate() {
        let clip = msecnn::synth::render_clip(&msecnn::synth::SynthConfig::new(3, 2, 5), i).1;
        msecnn::wav::write_wav(&audio.join(dir).join(format!("t{i}.wav")), &clip).unwrap();
    }
    fs::write(
        audio.join("ann.tsv"),
        "clip_id\tguitar\tdrums\tmp3_path\n\"1\"\t\"1\"\t\"0\"\t\"0/t0.mp3\"\n\"2\"\t\"0\"\t\"1\"\t\"c/t1.wav\"\n\"3\"\t\"1\"\t\"1\"\t\"e/t2.wav\"\n",
    )
    .unwrap();
}

fn extract_toy(root: &std::path::Path, cache: &str) -> common::Output {
    let audio = root.join("audio");
    msecnn(&[
        "extract",
        "--annotations",
        s(&audio.join("ann.tsv")),
        "--audio-root",
        s(&audio),
        "--cache-out",
        s(&root.join(cache)),
        "--preset",
        "desk",
    ])
}

#[test]
fn extract_toy_dataset_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    toy_dataset(dir.path());
    let o = extract_toy(dir.path(), "cache");
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.starts_with("# resolved config\n"));
    assert!(o.stdout.contains("clips 3 (train 1, val 1, test 1)"));
    let first = tree(&dir.path().join("cache"));
    assert_eq!(
        first
            .keys()
            .filter(|k| k.extension().is_some_and(|e| e == "feat"))
            .count(),
        3
    );
    assert_eq!(extract_toy(dir.path(), "cache").code, 0);
    assert_eq!(tree(&dir.path().join("cache")), first);
}

#[test]
fn extract_missing_annotations_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = msecnn(&[
        "extract",
        "--annotations",
        s(&missing),
        "--audio-root",
        ".",
        "--cache-out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains(s(&missing)), "{}", o.stderr);
    assert!(!dir.path().join("c").exists());
}

#[test]
fn extract_reports_bad_cell() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.tsv");
    fs::write(&ann, "clip_id\tx\tpath\n1\t2\t0/a.wav\n").unwrap();
    let o = msecnn(&[
        "extract",
        "--annotations",
        s(&ann),
        "--audio-root",
        ".",
        "--cache-out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("line 2, column 2"), "{}", o.stderr);
}

#[test]
fn usage_errors_exit_one() {
    let o = msecnn(&["train", "--cache", "x", "--variant", "bogus", "--out", "y"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("bogus"));
    assert_eq!(msecnn(&["tag", "--ckpt", "a", "--wav", "b", "--top", "0"]).code, 1);
    assert_eq!(msecnn(&["synth", "--n", "4", "--tags", "9", "--out", "z"]).code, 1);
    assert_eq!(msecnn(&["frobnicate"]).code, 1);
    assert_eq!(msecnn(&["--help"]).code, 0);
}

#[test]
fn train_without_variant_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    toy_dataset(dir.path());
    assert_eq!(extract_toy(dir.path(), "cache").code, 0);
    let o = msecnn(&[
        "train",
        "--cache",
        s(&dir.path().join("cache")),
        "--out",
        s(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("variant"));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn eval_rejects_wrong_magic() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("bad.ckpt");
    fs::write(&ck, b"GARBAGE!0000").unwrap();
    let o = msecnn(&["eval", "--ckpt", s(&ck), "--cache", s(dir.path())]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("bad magic"), "{}", o.stderr);
}

#[test]
fn inspect_reports_widths_chain_and_ratio() {
    let m = ok(&["inspect", "--variant", "msecnn"]);
    assert!(m.contains("final feature width 513"));
    assert!(m.contains("channels 65,193,321,449,513"));
    let f = ok(&["inspect", "--variant", "fcn5"]);
    assert!(f.contains("spatial chain (48,341),(24,85),(12,21),(4,4),(1,1)"));
    assert!(f.contains("final feature width 64"));
    let both = ok(&["inspect"]);
    let ratio = field(&both, "mac ratio", "msecnn/fcn5").unwrap();
    assert!((ratio - 1.14).abs() < 0.01, "{ratio}");
    assert!(both.contains("feature width ratio msecnn/fcn5 8.02 (513/64)"));
}

#[test]
fn gradcheck_passes() {
    let o = ok(&["gradcheck"]);
    let err = field(&o, "max_rel_error", "max_rel_error").unwrap();
    assert!(err < 1e-4, "{o}");
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--n", "32", "--tags", "4", "--seed", "7", "--out", s(&a)]);
    ok(&["synth", "--n", "32", "--tags", "4", "--seed", "7", "--out", s(&b)]);
    let ta = tree(&a);
    assert_eq!(ta.len(), 33);
    assert_eq!(
        ta.keys().filter(|k| k.extension().is_some_and(|e| e == "wav")).count(),
        32
    );
    assert_eq!(ta, tree(&b));
}

#[test]
fn train_eval_tag_round() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(dir.path(), 64, 4, 3, &[]);
    let ck = dir.path().join("m.ckpt");
    let log = ok(&[
        "train",
        "--cache",
        s(&cache),
        "--variant",
        "msecnn",
        "--out",
        s(&ck),
        "--epochs",
        "3",
    ]);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch ")).count(), 3);
    assert!(log.contains("# variant = \"msecnn\""));
    let report = ok(&["eval", "--ckpt", s(&ck), "--cache", s(&cache), "--split", "train"]);
    assert!(report.contains("tag\tn_pos\troc_auc\tpr_auc"));
    let (roc, pr) = macro_row(&report);
    assert!((0.0..=1.0).contains(&roc) && (0.0..=1.0).contains(&pr));

    let silence = dir.path().join("silence.wav");
    msecnn::wav::write_wav(
        &silence,
        &msecnn::core::audio::AudioClip::new(vec![0.0; 12_000], 12_000).unwrap(),
    )
    .unwrap();
    let first = ok(&["tag", "--ckpt", s(&ck), "--wav", s(&silence), "--top", "3"]);
    let lines: Vec<&str> = first.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 3);
    let scores: Vec<f64> = lines
        .iter()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(scores.iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(
        ok(&["tag", "--ckpt", s(&ck), "--wav", s(&silence), "--top", "3"]),
        first
    );

    let slow = dir.path().join("8k.wav");
    msecnn::wav::write_wav(
        &slow,
        &msecnn::core::audio::AudioClip::new(vec![0.0; 800], 8_000).unwrap(),
    )
    .unwrap();
    let o = msecnn(&["tag", "--ckpt", s(&ck), "--wav", s(&slow)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("audio format error"), "{}", o.stderr);
}

#[test]
fn config_file_feeds_training_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(dir.path(), 32, 2, 4, &[]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[model]\nvariant = \"fcn5\"\n[train]\nmax_epochs = 2\nseed = 5\n").unwrap();
    let ck = dir.path().join("m.ckpt");
    let log = ok(&[
        "train",
        "--cache",
        s(&cache),
        "--config",
        s(&cfg),
        "--seed",
        "6",
        "--out",
        s(&ck),
    ]);
    assert!(log.contains("# seed = 6"));
    assert!(log.contains("# max_epochs = 2"));
    assert!(log.contains("# variant = \"fcn5\""));
    fs::write(&cfg, "[frontend]\nn_mels = 96\n").unwrap();
    let o = msecnn(&[
        "train",
        "--cache",
        s(&cache),
        "--config",
        s(&cfg),
        "--variant",
        "fcn5",
        "--out",
        s(&ck),
    ]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("front end"), "{}", o.stderr);
}
