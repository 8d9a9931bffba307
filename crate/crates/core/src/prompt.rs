//! Fixed prompt templates and their rendering.
//!
//! Two prompt families are used. The answer prompt grounds the final
//! generation call in the selected documents. The probe prompts are short and
//! neutral; the unconditional and conditional variants differ only by the
//! `Context:` block, so any change in the output distribution is attributable
//! to the injected passage.

use serde::{Deserialize, Serialize};

use crate::types::{Passage, Query};

pub const DEFAULT_ANSWER_TEMPLATE: &str = "System: You are given a question and a set of documents.\n\
Answer the question using only the information in the documents.\n\
Output only the answer.\n\
\n\
User: Documents:\n\
{reference}\n\
\n\
Question: {question}\n\
Answer:";

pub const DEFAULT_PROBE_UNCONDITIONAL: &str = "User: {question}\nAssistant:";

pub const DEFAULT_PROBE_CONDITIONAL: &str = "User: {question}\nContext:\n{context}\nAssistant:";

pub const DEFAULT_YESNO_TEMPLATE: &str = "User: {question}\nContext:\n{context}\n\
Does this document answer the question? Answer Yes or No.\nAssistant:";

/// Prompt for query-likelihood scoring; the question is the forced continuation.
pub const DEFAULT_QLM_TEMPLATE: &str = "Context:\n{context}\nUser:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptBundle {
    /// Slots: `{reference}`, `{question}`.
    pub answer_template: String,
    /// Slot: `{question}`.
    pub probe_unconditional: String,
    /// Slots: `{question}`, `{context}`.
    pub probe_conditional: String,
    /// Slots: `{question}`, `{context}`. Used by the YesNo baseline only.
    pub yesno_template: String,
    /// Slot: `{context}`. Used by the QLM baseline only.
    pub qlm_template: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            answer_template: DEFAULT_ANSWER_TEMPLATE.to_string(),
            probe_unconditional: DEFAULT_PROBE_UNCONDITIONAL.to_string(),
            probe_conditional: DEFAULT_PROBE_CONDITIONAL.to_string(),
            yesno_template: DEFAULT_YESNO_TEMPLATE.to_string(),
            qlm_template: DEFAULT_QLM_TEMPLATE.to_string(),
        }
    }
}

/// `[DOC i] text` lines, numbered from 1 over the given (already selected) passages.
pub fn format_reference<'a>(passages: impl IntoIterator<Item = &'a Passage>) -> String {
    passages
        .into_iter()
        .enumerate()
        .map(|(i, p)| format!("[DOC {}] {}", i + 1, p.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes `{name}` slots in a single left-to-right pass. Substituted
/// values are never rescanned, so passage text containing `{question}` is
/// emitted verbatim. Unknown slots are left untouched.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            slots.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

impl PromptBundle {
    pub fn render_answer_prompt(&self, query: &Query, passages: &[Passage]) -> String {
        let reference = format_reference(passages);
        fill(
            &self.answer_template,
            &[("reference", &reference), ("question", &query.question)],
        )
    }

    /// Template (1) without a passage, template (2) with one.
    pub fn render_probe_prompt(&self, query: &Query, passage: Option<&Passage>) -> String {
        match passage {
            None => fill(&self.probe_unconditional, &[("question", &query.question)]),
            Some(p) => fill(
                &self.probe_conditional,
                &[("question", &query.question), ("context", &p.text)],
            ),
        }
    }

    pub fn render_yesno_prompt(&self, query: &Query, passage: &Passage) -> String {
        fill(
            &self.yesno_template,
            &[("question", &query.question), ("context", &passage.text)],
        )
    }
}

impl PromptBundle {
    /// Prompt and forced continuation (the question, space-prefixed) for QLM.
    pub fn render_qlm(&self, query: &Query, passage: &Passage) -> (String, String) {
        (
            fill(&self.qlm_template, &[("context", &passage.text)]),
            format!(" {}", query.question.trim()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> Query {
        Query::new("q1", "Q?", vec![]).unwrap()
    }

    fn p(id: &str, text: &str) -> Passage {
        Passage::new(id, text).unwrap()
    }

    #[test]
    fn answer_prompt_orders_docs() {
        let b = PromptBundle::default();
        let s = b.render_answer_prompt(&q(), &[p("a", "first text"), p("b", "second text")]);
        let i1 = s.find("[DOC 1] first text").unwrap();
        let i2 = s.find("[DOC 2] second text").unwrap();
        assert!(i1 < i2);
        assert_eq!(
            s,
            "System: You are given a question and a set of documents.\n\
             Answer the question using only the information in the documents.\n\
             Output only the answer.\n\nUser: Documents:\n\
             [DOC 1] first text\n[DOC 2] second text\n\nQuestion: Q?\nAnswer:"
        );
    }

    #[test]
    fn empty_evidence_keeps_template() {
        let s = PromptBundle::default().render_answer_prompt(&q(), &[]);
        assert!(s.contains("User: Documents:\n\n\nQuestion: Q?\nAnswer:"));
        assert!(!s.contains("[DOC"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let b = PromptBundle::default();
        let ps = [p("a", "x y")];
        assert_eq!(b.render_answer_prompt(&q(), &ps), b.render_answer_prompt(&q(), &ps));
        assert_eq!(
            b.render_probe_prompt(&q(), Some(&ps[0])),
            b.render_probe_prompt(&q(), Some(&ps[0]))
        );
    }

    #[test]
    fn probe_templates_differ_only_by_context() {
        let b = PromptBundle::default();
        let d = p("d", "Paris is the capital of France.");
        let uncond = b.render_probe_prompt(&q(), None);
        let cond = b.render_probe_prompt(&q(), Some(&d));
        assert_eq!(uncond, "User: Q?\nAssistant:");
        assert_eq!(cond, "User: Q?\nContext:\nParis is the capital of France.\nAssistant:");
        assert_eq!(cond.matches(&d.text).count(), 1);
        let stripped = cond.replace(&format!("Context:\n{}\n", d.text), "");
        assert_eq!(stripped, uncond);
    }

    #[test]
    fn qlm_prompt_excludes_question() {
        let (prompt, cont) = PromptBundle::default().render_qlm(&q(), &p("d", "passage body"));
        assert_eq!(prompt, "Context:\npassage body\nUser:");
        assert_eq!(cont, " Q?");
    }

    #[test]
    fn slot_text_inside_values_is_not_rescanned() {
        let b = PromptBundle::default();
        let d = p("d", "literal {question} and {context}");
        let cond = b.render_probe_prompt(&q(), Some(&d));
        assert!(cond.contains("literal {question} and {context}"));
    }

    #[test]
    fn prefix_consistent_doc_blocks() {
        let b = PromptBundle::default();
        let all = [p("a", "alpha"), p("b", "beta"), p("c", "gamma")];
        let full = b.render_answer_prompt(&q(), &all);
        for n in 0..=all.len() {
            let part = b.render_answer_prompt(&q(), &all[..n]);
            for line in part.lines().filter(|l| l.starts_with("[DOC ")) {
                assert!(full.lines().any(|f| f == line));
            }
        }
    }
}
