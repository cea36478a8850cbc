//! Fixtures shared by the pipeline and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_ITEMS: usize = 22;
pub const N_PERSONS: usize = 45;
/// Exam items everyone answers correctly.
pub const CONSTANT_EXAM: [usize; 5] = [3, 6, 9, 12, 15];
/// Assessment items nobody rates above 3.
pub const LOW_CEILING_ASSESS: [usize; 2] = [1, 15];

pub fn qacal() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qacal"))
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_in(dir: &Path, args: &[&str]) -> Run {
    let out = qacal().current_dir(dir).args(args).env_remove("QACAL_API_KEY").output().expect("spawn qacal");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `context/snippet_NN.txt` plus a valid stub payload for each in
/// `context/fixtures/`.
pub fn write_context(dir: &Path, n: usize) -> PathBuf {
    let ctx = dir.join("context");
    let fx = ctx.join("fixtures");
    std::fs::create_dir_all(&fx).unwrap();
    for i in 1..=n {
        let id = format!("snippet_{i:02}");
        std::fs::write(
            ctx.join(format!("{id}.txt")),
            format!("Passage {i}: tokenizers split text into units; model {i} uses \"byte-pair\" merges & <tags>.\n"),
        )
        .unwrap();
        let correct = (i * 3) % 4;
        let options: Vec<String> = (0..4).map(|k| format!("Option {k} for question {i}")).collect();
        let payload = serde_json::json!({
            "question": format!("Which statement about passage {i} holds?"),
            "options": options,
            "correct_index": correct,
            "correct_answer": options[correct],
        });
        std::fs::write(fx.join(format!("{id}.json")), payload.to_string()).unwrap();
    }
    ctx
}

/// Keyed option of each bank item, read back from the bank file.
pub fn bank_key(bank: &Path) -> Vec<usize> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(bank).unwrap()).unwrap();
    v.as_array().unwrap().iter().map(|i| i["correct_index"].as_u64().unwrap() as usize).collect()
}

/// 45 synthetic students answering the 22 exam and 22 assessment
/// questions. Exam answers are option indices.
pub fn write_responses(path: &Path, key: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opinions = ["reasonable", "too_easy", "complicated", "ambiguous"];
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header = vec!["person_id".to_string()];
    for prefix in ["exam", "assess", "opinion", "comment"] {
        header.extend((1..=N_ITEMS).map(|q| format!("{prefix}_{q}")));
    }
    w.write_record(&header).unwrap();
    for p in 1..=N_PERSONS {
        let theta: f64 = {
            // Box-Muller keeps the fixture independent of library samplers
            let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-12), rng.random());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut row = vec![format!("s{p:02}")];
        for q in 1..=N_ITEMS {
            let correct = key[q - 1];
            let right = CONSTANT_EXAM.contains(&q) || {
                let a = 0.6 + 0.05 * q as f64;
                let b = -2.0 + 0.13 * q as f64;
                rng.random::<f64>() < logistic(a * (theta - b))
            };
            let answer = if right { correct } else { (correct + 1 + rng.random_range(0..3)) % 4 };
            // a few skipped questions
            row.push(if rng.random::<f64>() < 0.03 { String::new() } else { answer.to_string() });
        }
        for q in 1..=N_ITEMS {
            let thresholds = [-1.2, -0.4, 0.4, 1.2];
            let u: f64 = rng.random();
            let eta = 1.4 * theta + 0.1 * (q as f64 - 11.0) / 11.0;
            let mut stars = 1 + thresholds.iter().filter(|&&b| u < logistic(eta - 1.4 * b)).count();
            if LOW_CEILING_ASSESS.contains(&q) {
                stars = stars.min(3);
            }
            row.push(stars.to_string());
        }
        for _ in 1..=N_ITEMS {
            let r: f64 = rng.random();
            row.push(if r < 0.1 { String::new() } else { opinions[rng.random_range(0..4)].to_string() });
        }
        for q in 1..=N_ITEMS {
            row.push(if (p + q) % 9 == 0 { format!("unclear, see option {}", q % 4) } else { String::new() });
        }
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

pub fn write_experts(path: &Path) {
    let mut s = String::from("rater");
    for q in 1..=N_ITEMS {
        s.push_str(&format!(",assess_{q}"));
    }
    s.push('\n');
    for (name, shift) in [("expert_a", 0usize), ("expert_b", 1)] {
        s.push_str(name);
        for q in 1..=N_ITEMS {
            s.push_str(&format!(",{}", 3 + (q + shift) % 3));
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Every pipeline stage in `dir`, with relative paths; returns the exit
/// code of each stage.
pub fn run_pipeline(dir: &Path, seed: u64) -> Vec<(&'static str, Run)> {
    write_context(dir, N_ITEMS);
    let mut runs = Vec::new();
    let gen = run_in(dir, &["generate", "--context-dir", "context", "--provider", "stub", "--out", "bank.json"]);
    let ok = gen.code == 0;
    runs.push(("generate", gen));
    if !ok {
        return runs;
    }
    runs.push(("export-form", run_in(dir, &["export-form", "--bank", "bank.json", "--out-form", "form.json", "--out-key", "key.json"])));
    write_responses(&dir.join("responses.csv"), &bank_key(&dir.join("bank.json")), seed);
    write_experts(&dir.join("experts.csv"));
    let seed_s = seed.to_string();
    let stages: [(&'static str, Vec<&str>); 5] = [
        ("ingest", vec!["ingest", "--responses", "responses.csv", "--bank", "bank.json", "--key", "key.json", "--out", "matrix.json"]),
        (
            "calibrate",
            vec![
                "calibrate", "--matrix", "matrix.json", "--quad-nodes", "10", "--out", "params.json", "--report", "calibration.txt",
                "--info-out", "information.csv", "--seed", &seed_s,
            ],
        ),
        ("score", vec!["score", "--params", "params.json", "--matrix", "matrix.json", "--out", "abilities.csv"]),
        (
            "dif",
            vec!["dif", "--params", "params.json", "--matrix", "matrix.json", "--out", "dif.json", "--table", "dif.csv", "--report", "dif.txt"],
        ),
        (
            "analyze",
            vec![
                "analyze", "--matrix", "matrix.json", "--opinions", "matrix.opinions.json", "--params", "params.json", "--out", "analysis",
                "--experts", "experts.csv",
            ],
        ),
    ];
    for (name, args) in stages {
        let r = run_in(dir, &args);
        let ok = r.code == 0;
        runs.push((name, r));
        if !ok {
            break;
        }
    }
    runs
}

/// Every regular file under `dir`, relative path → bytes with
/// `# generated:` lines removed.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                let text = String::from_utf8_lossy(&bytes);
                let kept: String = text.split_inclusive('\n').filter(|l| !l.starts_with("# generated: ")).collect();
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), kept.into_bytes());
            }
        }
    }
    out
}
