#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use igp_core::pipeline::{BackendConfig, RerankMethod, RunConfig};
use igp_core::probe::{StubRule, StubScript, StubSpec, StubStep};

/// Step whose renormalized distribution is uniform over two tokens (u = 1).
pub fn uniform() -> StubStep {
    StubStep::new([("a", -0.5), ("b", -0.5)])
}

/// Step with all mass on the greedy token (u = 0).
pub fn one_hot() -> StubStep {
    StubStep::new([("a", 0.0), ("b", -1000.0)])
}

/// Script of `uniform_steps` uniform steps followed by `onehot_steps`
/// one-hot steps; NU = uniform_steps / (uniform_steps + onehot_steps).
pub fn nu_script(uniform_steps: usize, onehot_steps: usize) -> StubScript {
    let mut steps = vec![uniform(); uniform_steps];
    steps.extend(std::iter::repeat_n(one_hot(), onehot_steps));
    StubScript {
        steps,
        ..Default::default()
    }
}

pub fn answer(text: &str) -> StubScript {
    StubScript {
        answer: Some(text.to_string()),
        ..Default::default()
    }
}

pub fn rule(contains: &[&str], script: StubScript) -> StubRule {
    StubRule {
        contains: contains.iter().map(|s| s.to_string()).collect(),
        script,
    }
}

/// Substring present only in answer prompts.
pub const ANSWER_MARK: &str = "Output only the answer.";
/// Substring present only in Yes/No prompts.
pub const YESNO_MARK: &str = "Answer Yes or No.";
/// Substring present only in query-likelihood prompts.
pub const QLM_MARK: &str = "\nUser:";
/// Substring present in conditional probe prompts (and Yes/No prompts).
pub const CONTEXT_MARK: &str = "Context:\n";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: RunConfig,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn write_corpus(path: &Path, passages: &[(String, String)]) {
    let mut out = String::new();
    for (id, text) in passages {
        writeln!(out, "{}", serde_json::json!({"id": id, "contents": text})).unwrap();
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_dataset(path: &Path, queries: &[(String, String, Vec<String>)]) {
    let mut out = String::new();
    for (id, q, gold) in queries {
        writeln!(
            out,
            "{}",
            serde_json::json!({"id": id, "question": q, "golden_answers": gold})
        )
        .unwrap();
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_qrels(path: &Path, qrels: &[(String, String, u32)]) {
    let mut out = String::from("query-id\tcorpus-id\tscore\n");
    for (q, p, g) in qrels {
        writeln!(out, "{q}\t{p}\t{g}").unwrap();
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_stub(path: &Path, spec: &StubSpec) {
    std::fs::write(path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
}

fn base_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        corpus: dir.join("corpus.jsonl"),
        dataset: dir.join("dataset.jsonl"),
        output_dir: dir.join("run"),
        backend: Some(BackendConfig::Stub {
            path: dir.join("stub.json"),
        }),
        parallelism: 2,
        ..RunConfig::default()
    };
    cfg.probe = igp_core::ProbeConfig::new(8, 128).unwrap();
    cfg
}

/// Three passages for one query whose conditional rollouts give
/// IG = (0.50, -0.30, 0.07) against an unconditional NU of 0.6.
///
/// NU values are step fractions: uniform steps score 1 and one-hot steps 0.
/// nu0 = 3/5, nu(d1) = 1/10, nu(d2) = 9/10, nu(d3) = 53/100.
pub fn ig_triplet() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let passages = vec![
        ("d1".to_string(), "aurora borealis lights d1mark".to_string()),
        ("d2".to_string(), "aurora borealis lights legends d2mark".to_string()),
        (
            "d3".to_string(),
            "aurora borealis lights colors seen d3mark".to_string(),
        ),
    ];
    write_corpus(&dir.path().join("corpus.jsonl"), &passages);
    write_dataset(
        &dir.path().join("dataset.jsonl"),
        &[(
            "q1".into(),
            "What causes aurora borealis lights?".into(),
            vec!["solar wind".into()],
        )],
    );
    let spec = StubSpec {
        rules: vec![
            rule(&[ANSWER_MARK], answer("solar wind")),
            rule(&[CONTEXT_MARK, "d1mark"], nu_script(1, 9)),
            rule(&[CONTEXT_MARK, "d2mark"], nu_script(9, 1)),
            rule(&[CONTEXT_MARK, "d3mark"], nu_script(53, 47)),
        ],
        fallback: Some(nu_script(3, 2)),
        ..Default::default()
    };
    write_stub(&dir.path().join("stub.json"), &spec);
    let mut config = base_config(dir.path());
    config.selection.top_m = 3;
    Fixture { dir, config }
}

pub const MINI_QUERIES: usize = 20;
/// Queries whose gold passage shares no term with the question.
pub const MINI_UNRETRIEVABLE: usize = 4;
pub const MINI_PASSAGES: usize = 200;

const FILLER_WORDS: [&str; 24] = [
    "orchard", "basalt", "lantern", "meadow", "copper", "harbor", "violet", "granite", "saddle", "thimble", "walnut",
    "pebble", "quarry", "ribbon", "tundra", "velvet", "anchor", "bramble", "cobalt", "dune", "ember", "fjord",
    "glacier", "hazel",
];

/// 200-passage corpus: per query one gold passage (answer-bearing, few
/// query terms), two lexical distractors (many query terms, no answer) and
/// filler. The stub collapses uncertainty only for gold passages and
/// answers wrongly whenever a distractor is in the answer prompt.
pub fn mini_corpus() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut passages = Vec::new();
    let mut queries = Vec::new();
    let mut rules = vec![rule(&[ANSWER_MARK, "distractmark"], answer("nobody knows"))];
    for i in 0..MINI_QUERIES {
        let town = format!("velmora{i}x");
        let q = format!("Who founded the harbor town of {town}?");
        let founder = format!("founder{i}x");
        queries.push((format!("q{i}"), q, vec![founder.clone()]));
        let gold_text = if i < MINI_UNRETRIEVABLE {
            format!("{founder} laid first stones there golden{i}x")
        } else {
            format!("{founder} founded {town} golden{i}x")
        };
        passages.push((format!("g{i}"), gold_text));
        for j in 0..2 {
            passages.push((
                format!("x{i}_{j}"),
                format!("{town} was founded by settlers and {town} grew {town} distractmark n{j}"),
            ));
        }
        rules.push(rule(&[ANSWER_MARK, &format!("golden{i}x")], answer(&founder)));
    }
    let mut k = 0usize;
    while passages.len() < MINI_PASSAGES {
        let words: Vec<&str> = (0..8)
            .map(|w| FILLER_WORDS[(k * 7 + w * 5) % FILLER_WORDS.len()])
            .collect();
        passages.push((format!("f{k}"), format!("{} filler{k}", words.join(" "))));
        k += 1;
    }
    rules.push(rule(&[ANSWER_MARK], answer("unknown")));
    rules.push(rule(&[CONTEXT_MARK, "golden"], nu_script(0, 4)));
    rules.push(rule(&[CONTEXT_MARK], nu_script(4, 0)));
    let spec = StubSpec {
        rules,
        fallback: Some(nu_script(2, 2)),
        ..Default::default()
    };
    write_corpus(&dir.path().join("corpus.jsonl"), &passages);
    write_dataset(&dir.path().join("dataset.jsonl"), &queries);
    write_stub(&dir.path().join("stub.json"), &spec);
    let config = base_config(dir.path());
    Fixture { dir, config }
}

/// Per-query scores used by the mismatch fixture.
struct MismatchQuery {
    /// Yes/No affirmative probabilities for (gold, distractor, noise).
    yes: [f64; 3],
    /// Forced question logprob per token for (gold, distractor, noise).
    qlm: [f64; 3],
}

/// Three queries with a judged lexical distractor D (grade 1), an unjudged
/// answer-bearing passage G and an unjudged noise passage N. BM25 orders
/// D > N > G; IG orders G > N > D. At top_m = 1 the answer is right only
/// when G is first.
///
/// Orders per query (q0, q1, q2) and the resulting means, with
/// c = 1 / log2(3):
///
/// | method | orders                     | NDCG@3          | F1  |
/// |--------|----------------------------|-----------------|-----|
/// | none   | DNG DNG DNG                | 1               | 0   |
/// | qlm    | GDN GDN DGN                | (2c + 1) / 3    | 2/3 |
/// | yesno  | GDN NGD DGN                | (c + 1.5) / 3   | 1/3 |
/// | igp    | GND GND GND                | 1/2             | 1   |
pub fn mismatch_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scripted = [
        MismatchQuery {
            yes: [0.9, 0.5, 0.1],
            qlm: [-0.5, -1.0, -2.0],
        },
        MismatchQuery {
            yes: [0.5, 0.1, 0.9],
            qlm: [-0.5, -1.0, -2.0],
        },
        MismatchQuery {
            yes: [0.5, 0.9, 0.1],
            qlm: [-1.0, -0.5, -2.0],
        },
    ];
    let mut passages = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = Vec::new();
    let mut rules = Vec::new();
    for (i, s) in scripted.iter().enumerate() {
        let topic = format!("zentrix{i}q");
        let stream = format!("flumen{i}q");
        queries.push((
            format!("m{i}"),
            format!("which {stream} crosses {topic}"),
            vec![format!("riveranswer{i}")],
        ));
        let ids = [format!("m{i}g"), format!("m{i}d"), format!("m{i}n")];
        let texts = [
            format!("riveranswer{i} is the stream that flows past {stream} gmark{i}z"),
            format!("{topic} {stream} {topic} {stream} dmark{i}z"),
            format!("{topic} orchards nmark{i}z"),
        ];
        let marks = [format!("gmark{i}z"), format!("dmark{i}z"), format!("nmark{i}z")];
        passages.extend(ids.iter().cloned().zip(texts));
        qrels.push((format!("m{i}"), ids[1].clone(), 1));
        rules.push(rule(&[ANSWER_MARK, &marks[0]], answer(&format!("riveranswer{i}"))));
        rules.push(rule(&[ANSWER_MARK, &marks[1]], answer("wrong river")));
        rules.push(rule(&[ANSWER_MARK, &marks[2]], answer("unknown")));
        for ((mark, p), qlm) in marks.iter().zip(s.yes).zip(s.qlm) {
            rules.push(rule(
                &[YESNO_MARK, mark],
                StubScript {
                    steps: vec![StubStep::new([("Yes", p.ln()), ("No", (1.0 - p).ln())])],
                    ..Default::default()
                },
            ));
            rules.push(rule(
                &[QLM_MARK, mark],
                StubScript {
                    forced_logprob: Some(qlm),
                    ..Default::default()
                },
            ));
        }
        rules.push(rule(&[CONTEXT_MARK, &marks[0]], nu_script(0, 2)));
        rules.push(rule(&[CONTEXT_MARK, &marks[1]], nu_script(2, 0)));
        rules.push(rule(&[CONTEXT_MARK, &marks[2]], nu_script(1, 1)));
    }
    rules.push(rule(&[ANSWER_MARK], answer("unknown")));
    let spec = StubSpec {
        rules,
        fallback: Some(nu_script(1, 1)),
        ..Default::default()
    };
    write_corpus(&dir.path().join("corpus.jsonl"), &passages);
    write_dataset(&dir.path().join("dataset.jsonl"), &queries);
    write_qrels(&dir.path().join("qrels.tsv"), &qrels);
    write_stub(&dir.path().join("stub.json"), &spec);
    let mut config = base_config(dir.path());
    config.qrels = Some(dir.path().join("qrels.tsv"));
    config.selection.top_m = 1;
    config.ndcg_k = 3;
    config.retrieval.top_n = 3;
    Fixture { dir, config }
}

pub fn with_method(cfg: &RunConfig, method: RerankMethod, out: &str) -> RunConfig {
    let mut c = cfg.clone();
    c.selection.rerank = method;
    c.output_dir = cfg.output_dir.parent().unwrap().join(out);
    c
}
