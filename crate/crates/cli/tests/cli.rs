use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FRUIT: [&str; 4] = ["apple", "banana", "cherry", "grape"];
const VEHICLE: [&str; 4] = ["car", "bus", "train", "truck"];

fn topickg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topickg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = topickg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut docs = String::new();
        let mut labels = String::new();
        for j in 0..40 {
            let words = if j % 2 == 0 { FRUIT } else { VEHICLE };
            let doc: Vec<&str> = (0..12).map(|i| words[(i * 7 + j) % 4]).collect();
            docs.push_str(&doc.join(" "));
            docs.push('\n');
            labels.push_str(&format!("{}\n", j % 2));
        }
        fs::write(root.join("docs.txt"), docs).unwrap();
        fs::write(root.join("labels.txt"), labels).unwrap();
        let vocab: Vec<&str> = FRUIT.iter().chain(&VEHICLE).copied().collect();
        fs::write(root.join("vocab.txt"), vocab.join("\n") + "\n").unwrap();
        let mut lex = String::from("# child parent\nfruit thing\nvehicle thing\n");
        for w in FRUIT {
            lex.push_str(&format!("{w} fruit\n"));
        }
        for w in VEHICLE {
            lex.push_str(&format!("{w} vehicle\n"));
        }
        fs::write(root.join("lexicon.txt"), lex).unwrap();
        fs::write(root.join("defs.tsv"), "fruit\tapple grape\nvehicle\tcar bus\n").unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn corpus_args(&self) -> Vec<String> {
        [
            "--docs",
            p(&self.path("docs.txt")),
            "--vocab",
            p(&self.path("vocab.txt")),
            "--labels",
            p(&self.path("labels.txt")),
            "--test-fraction",
            "0.25",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn build_tree(&self) {
        let report = ok(&[
            "build-tree",
            "--vocab",
            p(&self.path("vocab.txt")),
            "--lexicon",
            p(&self.path("lexicon.txt")),
            "--definitions",
            p(&self.path("defs.tsv")),
            "--max-layers",
            "2",
            "--out",
            p(&self.path("tree.txt")),
        ]);
        assert!(report.contains("layers_top_down,[1, 2]"), "{report}");
        assert!(report.contains("excluded_words,0"));
    }

    fn train(&self, iterations: &str, extra: &[&str]) -> String {
        let mut args: Vec<String> = vec!["train".into()];
        args.extend(self.corpus_args());
        for a in [
            "--tree",
            p(&self.path("tree.txt")),
            "--embed-dim",
            "8",
            "--hidden",
            "16",
            "--batch-size",
            "10",
            "--iterations",
            iterations,
        ] {
            args.push(a.into());
        }
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs)
    }
}

#[test]
fn build_train_eval_export_sweep() {
    let fx = Fixture::new();
    fx.build_tree();
    let ckpt = fx.path("model.ckpt");
    let out = fx.train("30", &[
        "--mode",
        "topickga",
        "--anneal-period",
        "10",
        "--out",
        p(&ckpt),
        "--report",
        p(&fx.path("report.csv")),
        "--revisions",
        p(&fx.path("revisions.csv")),
    ]);
    assert!(out.contains("iteration,30"), "{out}");
    assert!(ckpt.exists());
    assert!(fs::read_to_string(fx.path("report.csv")).unwrap().lines().count() > 1);
    assert!(fx.path("revisions.csv").exists());

    let mut eval: Vec<String> = vec!["eval".into()];
    eval.extend(fx.corpus_args());
    eval.extend(["--checkpoint".into(), p(&ckpt).into(), "--metrics".into(), "tc,td".into()]);
    let refs: Vec<&str> = eval.iter().map(String::as_str).collect();
    let csv = ok(&refs);
    assert!(csv.lines().any(|l| l.starts_with("layer1,tc,")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("layer2,td,")), "{csv}");
    assert!(csv.contains("micro_f1"), "{csv}");
    assert_eq!(ok(&refs), csv);

    let text = ok(&["export", "--checkpoint", p(&ckpt), "--top-k", "3"]);
    assert!(text.contains("fruit") && text.contains("vehicle"), "{text}");
    let dot = ok(&["export", "--checkpoint", p(&ckpt), "--format", "dot", "--top-k", "4"]);
    assert!(dot.starts_with("digraph"));

    let mut sweep: Vec<String> = vec!["sweep".into()];
    sweep.extend(fx.corpus_args());
    for a in [
        "--tree",
        p(&fx.path("tree.txt")),
        "--embed-dim",
        "8",
        "--hidden",
        "16",
        "--iterations",
        "10",
        "--betas",
        "0,50",
        "--seeds",
        "2",
        "--no-classify",
    ] {
        sweep.push(a.into());
    }
    let refs: Vec<&str> = sweep.iter().map(String::as_str).collect();
    let csv = ok(&refs);
    assert!(csv.lines().any(|l| l.starts_with("0,0.4,")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("50,0.4,")), "{csv}");
}

#[test]
fn resumed_training_continues_to_the_target_iteration() {
    let fx = Fixture::new();
    fx.build_tree();
    let full = fx.path("full.ckpt");
    let half = fx.path("half.ckpt");
    fx.train("30", &["--out", p(&full)]);
    fx.train("15", &["--out", p(&half)]);
    let resumed = fx.train("30", &["--out", p(&half), "--resume", p(&half)]);
    assert!(resumed.contains("iteration,30"), "{resumed}");
    let a = ok(&["export", "--checkpoint", p(&full), "--top-k", "4"]);
    let b = ok(&["export", "--checkpoint", p(&half), "--top-k", "4"]);
    assert_eq!(a.lines().count(), b.lines().count());
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines().find(|l| l.starts_with("error: kind=")).unwrap_or_else(|| panic!("{err}")).to_string()
}

#[test]
fn failures_print_one_structured_line_and_exit_nonzero() {
    let fx = Fixture::new();
    let missing = fx.path("nope.txt");
    let line = error_line(&topickg(&[
        "build-tree",
        "--vocab",
        p(&missing),
        "--lexicon",
        p(&fx.path("lexicon.txt")),
        "--out",
        p(&fx.path("t.txt")),
    ]));
    assert!(line.starts_with("error: kind=corpus message=\""), "{line}");

    fs::write(fx.path("cyclic.txt"), "apple fruit\nfruit apple\n").unwrap();
    let line = error_line(&topickg(&[
        "build-tree",
        "--vocab",
        p(&fx.path("vocab.txt")),
        "--lexicon",
        p(&fx.path("cyclic.txt")),
        "--out",
        p(&fx.path("t.txt")),
    ]));
    assert!(line.starts_with("error: kind=taxonomy"), "{line}");

    fx.build_tree();
    fs::write(fx.path("bad.toml"), "beta = 50\nlearning_rat = 0.1\n").unwrap();
    let mut args: Vec<String> = vec!["train".into()];
    args.extend(fx.corpus_args());
    for a in ["--tree", p(&fx.path("tree.txt")), "--config", p(&fx.path("bad.toml")), "--out", p(&fx.path("m.ckpt"))] {
        args.push(a.into());
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let line = error_line(&topickg(&refs));
    assert!(line.starts_with("error: kind=config") && line.contains("line 2"), "{line}");

    fs::write(fx.path("garbage.ckpt"), "not a checkpoint").unwrap();
    let line = error_line(&topickg(&["export", "--checkpoint", p(&fx.path("garbage.ckpt"))]));
    assert!(line.starts_with("error: kind=checkpoint"), "{line}");
}
