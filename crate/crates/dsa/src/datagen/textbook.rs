//! Textbook document generation: one expository chapter per skill, with key
//! concepts and homework that covers them.

use serde::{Deserialize, Serialize};

use crate::llm_client::{GenerationClient, GenerationRequest, TEXTBOOK_SAMPLING};
use crate::skill_graph::{SkillGraph, SkillId};
use crate::util::approx_token_count;

use super::prompts::{textbook_prompt, HOMEWORK_MARKER, KEY_CONCEPTS_MARKER};
use super::DatagenError;

/// One homework problem, mapped to the key concept it practices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeworkProblem {
    pub text: String,
    /// 0-based index into `TextbookDoc::key_concepts`.
    pub key_concept_index: usize,
}

/// A generated textbook chapter for one skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextbookDoc {
    pub skill_id: SkillId,
    pub body: String,
    /// Direct graph predecessors the body actually mentions by name.
    pub predecessor_links: Vec<SkillId>,
    pub key_concepts: Vec<String>,
    pub homework: Vec<HomeworkProblem>,
    /// Approximate (whitespace-delimited) token count over the document's
    /// retained content: body, key concepts, and homework text.
    pub token_count: u64,
}

impl TextbookDoc {
    /// Recompute the approximate token count from the stored fields.
    pub fn content_token_count(&self) -> u64 {
        approx_token_count(&self.body)
            + self.key_concepts.iter().map(|c| approx_token_count(c)).sum::<u64>()
            + self.homework.iter().map(|h| approx_token_count(&h.text)).sum::<u64>()
    }
}

impl TextbookDoc {
    pub fn validate(&self, graph: Option<&SkillGraph>) -> Result<(), DatagenError> {
        if self.key_concepts.is_empty() {
            return Err(DatagenError::InvalidTextbook("key_concepts is empty".into()));
        }
        let mut covered = vec![false; self.key_concepts.len()];
        for hw in &self.homework {
            if hw.key_concept_index >= self.key_concepts.len() {
                return Err(DatagenError::InvalidTextbook(format!(
                    "homework references concept {} of {}",
                    hw.key_concept_index + 1,
                    self.key_concepts.len()
                )));
            }
            covered[hw.key_concept_index] = true;
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return Err(DatagenError::InvalidTextbook(format!(
                "key concept {} has no homework",
                missing + 1
            )));
        }
        if let Some(g) = graph {
            let predecessors: std::collections::BTreeSet<&SkillId> =
                g.predecessors(&self.skill_id).into_iter().map(|s| &s.id).collect();
            for link in &self.predecessor_links {
                if !predecessors.contains(link) {
                    return Err(DatagenError::InvalidTextbook(format!(
                        "predecessor link {link} is not a direct predecessor of {}",
                        self.skill_id
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(super) struct ParsedTextbook {
    pub body: String,
    pub key_concepts: Vec<String>,
    pub homework: Vec<HomeworkProblem>,
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix('-') {
        return rest.trim();
    }
    // "3. concept" style numbering.
    let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
    if !digits.is_empty() {
        if let Some(rest) = line[digits.len()..].strip_prefix('.') {
            return rest.trim();
        }
    }
    line
}

/// Split a raw textbook response on the sentinel lines.
pub(super) fn parse_textbook_response(text: &str) -> Result<ParsedTextbook, DatagenError> {
    let mut body_lines: Vec<&str> = Vec::new();
    let mut concept_lines: Vec<&str> = Vec::new();
    let mut homework_lines: Vec<&str> = Vec::new();
    #[derive(PartialEq)]
    enum Section {
        Body,
        Concepts,
        Homework,
    }
    let mut section = Section::Body;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed == KEY_CONCEPTS_MARKER {
            if section != Section::Body {
                return Err(DatagenError::Unparseable("duplicate key-concepts marker".into()));
            }
            section = Section::Concepts;
            continue;
        }
        if trimmed == HOMEWORK_MARKER {
            if section != Section::Concepts {
                return Err(DatagenError::Unparseable(
                    "homework marker before key-concepts marker".into(),
                ));
            }
            section = Section::Homework;
            continue;
        }
        match section {
            Section::Body => body_lines.push(line),
            Section::Concepts => {
                if !trimmed.is_empty() {
                    concept_lines.push(trimmed);
                }
            }
            Section::Homework => {
                if !trimmed.is_empty() {
                    homework_lines.push(trimmed);
                }
            }
        }
    }
    if section != Section::Homework {
        return Err(DatagenError::Unparseable(format!(
            "missing section markers ({KEY_CONCEPTS_MARKER} / {HOMEWORK_MARKER})"
        )));
    }
    let key_concepts: Vec<String> =
        concept_lines.iter().map(|l| strip_list_marker(l).to_string()).collect();
    if key_concepts.is_empty() {
        return Err(DatagenError::Unparseable("key-concepts section is empty".into()));
    }
    let mut homework = Vec::with_capacity(homework_lines.len());
    for line in homework_lines {
        let rest = line.strip_prefix('[').ok_or_else(|| {
            DatagenError::Unparseable(format!("homework line without [n] prefix: {line:?}"))
        })?;
        let (num, text) = rest.split_once(']').ok_or_else(|| {
            DatagenError::Unparseable(format!("homework line without closing bracket: {line:?}"))
        })?;
        let index: usize = num.trim().parse().map_err(|_| {
            DatagenError::Unparseable(format!("homework concept number {num:?} is not an integer"))
        })?;
        if index == 0 || index > key_concepts.len() {
            return Err(DatagenError::Unparseable(format!(
                "homework concept number {index} out of range 1..={}",
                key_concepts.len()
            )));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(DatagenError::Unparseable("homework problem text is empty".into()));
        }
        homework.push(HomeworkProblem { text: text.to_string(), key_concept_index: index - 1 });
    }
    if homework.is_empty() {
        return Err(DatagenError::Unparseable("homework section is empty".into()));
    }
    Ok(ParsedTextbook {
        body: body_lines.join("\n").trim().to_string(),
        key_concepts,
        homework,
    })
}

/// Scan the document text for mentions of direct predecessors by name.
fn linked_predecessors(graph: &SkillGraph, skill_id: &SkillId, text: &str) -> Vec<SkillId> {
    let haystack = text.to_lowercase();
    graph
        .predecessors(skill_id)
        .into_iter()
        .filter(|p| haystack.contains(&p.name.to_lowercase()))
        .map(|p| p.id.clone())
        .collect()
}

/// Generate one textbook chapter. A response that fails structural
/// validation triggers exactly one regeneration (with an attempt-marked
/// prompt, so replay caches key the retry separately) before erroring.
pub fn generate_textbook(
    skill_id: &SkillId,
    graph: &SkillGraph,
    client: &dyn GenerationClient,
    max_tokens: u32,
) -> Result<TextbookDoc, DatagenError> {
    let skill = graph
        .get(skill_id)
        .ok_or_else(|| DatagenError::UnknownSkill(skill_id.clone()))?;
    let predecessors = graph.predecessors(skill_id);
    let mut last_err = None;
    for attempt in 1..=2u32 {
        let prompt = textbook_prompt(skill, &predecessors, attempt);
        let req = GenerationRequest::new(&prompt, TEXTBOOK_SAMPLING).with_max_tokens(max_tokens);
        let resp = client.generate(&req)?;
        match parse_textbook_response(&resp.samples[0]) {
            Ok(parsed) => {
                let full_text = &resp.samples[0];
                let mut doc = TextbookDoc {
                    skill_id: skill_id.clone(),
                    predecessor_links: linked_predecessors(graph, skill_id, full_text),
                    token_count: 0,
                    body: parsed.body,
                    key_concepts: parsed.key_concepts,
                    homework: parsed.homework,
                };
                doc.token_count = doc.content_token_count();
                match doc.validate(Some(graph)) {
                    Ok(()) => return Ok(doc),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(DatagenError::RetryExhausted {
        what: format!("textbook for skill {skill_id}"),
        cause: Box::new(last_err.expect("two attempts recorded an error")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_client::StubClient;
    use crate::skill_graph::{build_from_syllabus, SyllabusLevel};

    fn two_skill_graph() -> SkillGraph {
        build_from_syllabus(&[SyllabusLevel {
            level_name: "First Grade".into(),
            level_index: 1,
            skills: vec!["Addition".into(), "Mixed Operations".into()],
        }])
        .unwrap()
    }

    // Shaped like a generated mixed-operations chapter: prose body, then the
    // two sentinel sections.
    fn chapter_fixture() -> String {
        concat!(
            "Chapter N: Mixed Operations - Addition and Subtraction: Ways to Make a Number\n",
            "\n",
            "In this chapter, we build on Addition to explore how addition and subtraction\n",
            "can be used to make a given number. For example, 6 = 1 + 5 and 6 = 7 - 1.\n",
            "\n",
            "== KEY CONCEPTS ==\n",
            "1. Addition combines numbers into a sum\n",
            "2. Subtraction finds the difference\n",
            "3. A number can be made in many ways\n",
            "== HOMEWORK ==\n",
            "[1] Find two numbers that add up to 8.\n",
            "[2] Find two numbers whose difference is 8.\n",
            "[3] Write three different ways to make the number 8.\n",
        )
        .to_string()
    }

    #[test]
    fn parses_mixed_operations_chapter_shape() {
        let g = two_skill_graph();
        let skill = g.find_by_name("Mixed Operations").unwrap().id.clone();
        let stub = StubClient::fixed(chapter_fixture());
        let doc = generate_textbook(&skill, &g, &stub, 2048).unwrap();
        assert_eq!(doc.key_concepts.len(), 3);
        assert_eq!(doc.homework.len(), 3);
        assert!(doc.body.starts_with("Chapter N: Mixed Operations"));
        assert_eq!(doc.homework[1].key_concept_index, 1);
        // The body mentions "Addition", which is the direct predecessor.
        let addition = g.find_by_name("Addition").unwrap().id.clone();
        assert_eq!(doc.predecessor_links, vec![addition]);
        doc.validate(Some(&g)).unwrap();
    }

    #[test]
    fn skill_without_predecessors_links_nothing() {
        let g = two_skill_graph();
        let skill = g.find_by_name("Addition").unwrap().id.clone();
        let stub = StubClient::fixed(chapter_fixture());
        let doc = generate_textbook(&skill, &g, &stub, 2048).unwrap();
        assert!(doc.predecessor_links.is_empty());
    }

    #[test]
    fn homework_must_cover_every_concept() {
        let response = concat!(
            "Body.\n",
            "== KEY CONCEPTS ==\n",
            "1. one\n",
            "2. two\n",
            "== HOMEWORK ==\n",
            "[1] only covers the first concept\n",
        );
        let parsed = parse_textbook_response(response).unwrap();
        let doc = TextbookDoc {
            skill_id: "s".into(),
            body: parsed.body,
            predecessor_links: vec![],
            key_concepts: parsed.key_concepts,
            homework: parsed.homework,
            token_count: 0,
        };
        assert!(matches!(doc.validate(None), Err(DatagenError::InvalidTextbook(_))));
    }

    #[test]
    fn single_regeneration_then_error() {
        use std::sync::atomic::{AtomicU32, Ordering};
        use std::sync::Arc;
        let g = two_skill_graph();
        let skill = g.find_by_name("Addition").unwrap().id.clone();
        let calls = Arc::new(AtomicU32::new(0));
        let calls_in_stub = Arc::clone(&calls);
        let stub = StubClient::from_fn(move |req| {
            let n = calls_in_stub.fetch_add(1, Ordering::SeqCst);
            assert!(n == 0 || req.prompt.contains("Attempt 2"), "second call must be attempt-marked");
            Ok(vec!["no sentinels here".to_string(); req.n_samples as usize])
        });
        let err = generate_textbook(&skill, &g, &stub, 2048).unwrap_err();
        assert!(matches!(err, DatagenError::RetryExhausted { .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn retry_recovers_from_one_bad_response() {
        let g = two_skill_graph();
        let skill = g.find_by_name("Addition").unwrap().id.clone();
        let stub = StubClient::scripted(vec![
            vec!["garbage".to_string()],
            vec![chapter_fixture()],
        ]);
        let doc = generate_textbook(&skill, &g, &stub, 2048).unwrap();
        assert_eq!(doc.key_concepts.len(), 3);
    }
}
