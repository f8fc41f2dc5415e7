use std::path::Path;
use std::process::{Command, Output};

fn curate(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curate")).args(args).current_dir(dir).output().expect("spawn curate")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn page(id: &str, body: &str) -> String {
    let html = format!("<html><body><p>{body}</p></body></html>");
    serde_json::json!({
        "id": id,
        "url": format!("https://example.ru/{id}"),
        "fetched_at": "2024-05-01T00:00:00Z",
        "html": html,
    })
    .to_string()
}

fn long_ru(seed: usize) -> String {
    let words = ["кот", "сидит", "на", "окне", "собака", "спит", "полу", "рядом", "печкой", "утром", "вечером", "тихо"];
    let mut x = seed as u64 * 2_654_435_761 + 1;
    let mut s: Vec<&str> = (0..60)
        .map(|_| {
            x = x.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            words[(x >> 33) as usize % words.len()]
        })
        .collect();
    s.push("конец.");
    s.join(" ")
}

fn write_pages(dir: &Path) -> std::path::PathBuf {
    let mut lines: Vec<String> = (0..6).map(|i| page(&format!("p{i}"), &long_ru(i))).collect();
    lines.push(page("dup", &long_ru(0)));
    lines.push(page("short", "мало"));
    let p = dir.join("pages.jsonl");
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

#[test]
fn misordered_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "stages = [\"theme\", \"langid\"]\n").unwrap();
    let o = curate(&["run", "--config", "bad.toml", "--input", "x.jsonl", "--output", "out"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage order"));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "stages = [\"extract\", \"clean\"]\n").unwrap();
    let o = curate(&["run", "--config", "c.toml", "--input", "nope.jsonl", "--output", "out"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn end_to_end_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    write_pages(dir.path());
    std::fs::write(dir.path().join("c.toml"), "stages = [\"extract\", \"clean\", \"dedup\"]\nseed = 3\n").unwrap();
    let o = curate(&["run", "--config", "c.toml", "--input", "pages.jsonl", "--output", "out", "--workers", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["output.jsonl", "report.txt", "report.json", "run.json", "clusters.jsonl", "rejected/clean.jsonl", "rejected/dedup.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let kept = std::fs::read_to_string(out.join("output.jsonl")).unwrap().lines().count();
    assert_eq!(kept, 6);
    let dedup_rej = std::fs::read_to_string(out.join("rejected/dedup.jsonl")).unwrap();
    assert!(dedup_rej.contains("\"dup\""));

    let r = curate(&["report", "--input", "out"], dir.path());
    assert_eq!(code(&r), 0);
    let table = String::from_utf8_lossy(&r.stdout).to_string();
    assert_eq!(table, std::fs::read_to_string(out.join("report.txt")).unwrap());
    assert!(table.contains("extract"));
}

#[test]
fn failing_plugin_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let doc = serde_json::json!({"id": "a", "url": "", "text": "text", "lang": "ru"}).to_string();
    std::fs::write(dir.path().join("docs.jsonl"), doc + "\n").unwrap();
    std::fs::write(dir.path().join("c.toml"), "stages = [\"quality\"]\n[quality]\nplugin = [\"sh\", \"-c\", \"exit 3\"]\n").unwrap();
    let o = curate(&["quality-score", "--config", "c.toml", "--input", "docs.jsonl", "--output", "q.jsonl"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stage_commands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    write_pages(dir.path());
    let o = curate(&["extract", "--input", "pages.jsonl", "--output", "docs.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = curate(&["clean", "--input", "docs.jsonl", "--output", "clean.jsonl"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(dir.path().join("clean.rejected.jsonl")).unwrap().contains("too_short"));
    let o = curate(&["dedup", "--input", "clean.jsonl", "--output", "dedup.jsonl", "--perms", "64", "--bands", "8", "--rows", "8"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("dedup.jsonl")).unwrap().lines().count(), 6);
    let o = curate(&["dedup", "--input", "clean.jsonl", "--output", "x.jsonl", "--perms", "100"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn classifier_training_and_quality_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = Vec::new();
    for i in 0..20 {
        train.push(serde_json::json!({"text": format!("{} хорошо написанный текст", long_ru(i)), "labels": ["high"]}).to_string());
        train.push(serde_json::json!({"text": format!("купить скидка {i} клик здесь!!! $$$"), "labels": ["low"]}).to_string());
    }
    std::fs::write(dir.path().join("train.jsonl"), train.join("\n") + "\n").unwrap();
    let o = curate(
        &["train-classifier", "--input", "train.jsonl", "--output", "q.bin", "--epochs", "10", "--labels", "high,low", "--buckets", "65536"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let docs = [
        serde_json::json!({"id": "good", "url": "", "text": long_ru(99), "lang": "ru"}).to_string(),
        serde_json::json!({"id": "spam", "url": "", "text": "купить скидка клик здесь!!! $$$", "lang": "ru"}).to_string(),
    ];
    std::fs::write(dir.path().join("docs.jsonl"), docs.join("\n") + "\n").unwrap();
    let o = curate(&["quality-score", "--model", "q.bin", "--input", "docs.jsonl", "--output", "kept.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kept = std::fs::read_to_string(dir.path().join("kept.jsonl")).unwrap();
    assert!(kept.contains("\"good\"") && !kept.contains("\"spam\""));

    let o = curate(&["sample-review", "--input", "kept.jsonl", "--output", "review.jsonl", "--batch", "4"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("review.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn evaluate_scores_and_inspection() {
    let dir = tempfile::tempdir().unwrap();
    let docs = [
        serde_json::json!({"id": "a", "url": "", "text": "x", "lang": "ko"}).to_string(),
        serde_json::json!({"id": "b", "url": "", "text": "y", "lang": "ko",
            "rejected": {"stage": "ppl", "reasons": ["high_ppl"]},
            "annotations": {"ppl": {"stage": "ppl", "verdict": "drop", "scores": {}, "reasons": ["high_ppl"]}}})
        .to_string(),
    ];
    std::fs::write(dir.path().join("docs.jsonl"), docs.join("\n") + "\n").unwrap();
    let o = curate(&["evaluate", "--input", "docs.jsonl", "--output", "scores.tsv", "--dataset", "mine"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("scores.tsv")).unwrap(), "language\tmine\nko\t50.00\nAVG\t50.00\n");
    assert!(dir.path().join("scores.json").exists());

    let adj = ["{\"id\":\"1\",\"issues\":[]}", "{\"id\":\"2\",\"issues\":[\"relevance\",\"fluency\"]}"];
    std::fs::write(dir.path().join("adj.jsonl"), adj.join("\n") + "\n").unwrap();
    let o = curate(&["evaluate", "--inspection", "adj.jsonl", "--output", "insp.tsv"], dir.path());
    assert_eq!(code(&o), 0);
    let s = std::fs::read_to_string(dir.path().join("insp.tsv")).unwrap();
    assert!(s.contains("High Quality\tno issues\t1\t50.00%"));
    assert!(s.contains("Quality - Relevance\tirrelevant content\t1\t50.00%"));
}
