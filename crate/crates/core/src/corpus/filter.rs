use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::concepts::Concept;
use super::dump::{PostType, RawPost};
use super::markup::strip_markup;
use super::{Answer, Problem};
use crate::error::Result;

/// Which dump tags disqualify a question, which are ignored, and which map
/// onto background concepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPolicy {
    pub excluded: BTreeSet<String>,
    pub ignored: BTreeSet<String>,
    /// Concept ids a problem may be tagged with.
    pub allowed_concepts: BTreeSet<String>,
    /// Normalised dump tag -> concept id. Tags that equal an allowed concept
    /// id map to themselves without an entry here.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    pub max_tags: usize,
}

impl TagPolicy {
    /// The stats.stackexchange policy: programming tags excluded, generic
    /// tags ignored, at most three concept tags.
    pub fn stats_default(concepts: &[Concept]) -> Self {
        let excluded = ["matlab", "r"].map(String::from).into();
        let ignored = [
            "probability",
            "mathematical-statistics",
            "meta-analysis",
            "hypothesis-testing",
            "distributions",
            "self-study",
            "intuition",
            "definition",
        ]
        .map(String::from)
        .into();
        Self::new(excluded, ignored, concepts, 3)
    }

    pub fn new(
        excluded: BTreeSet<String>,
        ignored: BTreeSet<String>,
        concepts: &[Concept],
        max_tags: usize,
    ) -> Self {
        let allowed_concepts = concepts.iter().map(|c| c.id.clone()).collect();
        let mut aliases = BTreeMap::new();
        for c in concepts {
            for tag in &c.tags {
                aliases.insert(normalize_tag(tag), c.id.clone());
            }
        }
        TagPolicy {
            excluded: excluded.iter().map(|t| normalize_tag(t)).collect(),
            ignored: ignored.iter().map(|t| normalize_tag(t)).collect(),
            allowed_concepts,
            aliases,
            max_tags,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.excluded.intersection(&self.ignored).next() {
            return Err(crate::Error::invalid(format!(
                "tag `{t}` is both excluded and ignored"
            )));
        }
        if self.max_tags == 0 {
            return Err(crate::Error::invalid("max_tags must be at least 1"));
        }
        Ok(())
    }

    fn concept_for(&self, tag: &str) -> Option<&str> {
        if let Some(c) = self.aliases.get(tag) {
            return Some(c);
        }
        self.allowed_concepts.get(tag).map(String::as_str)
    }
}

fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

/// Counts of questions dropped by each rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub questions: usize,
    pub excluded_tag: usize,
    pub no_concept_tags: usize,
    pub too_many_tags: usize,
    pub no_accepted_answer: usize,
    /// Questions whose accepted answer id does not resolve to an answer of
    /// that question.
    pub dangling_answers: Vec<String>,
    pub empty_body: usize,
    pub kept: usize,
}

/// Applies the tag policy and accepted-answer rule, producing problems and
/// their answers with markup stripped.
///
/// Surviving problems are ordered by id (numerically when ids are numbers),
/// so the result does not depend on input order.
pub fn filter_problems(
    posts: &[RawPost],
    policy: &TagPolicy,
) -> Result<(Vec<Problem>, Vec<Answer>, FilterReport)> {
    policy.validate()?;
    let answers: HashMap<&str, &RawPost> = posts
        .iter()
        .filter(|p| p.post_type == PostType::Answer)
        .map(|p| (p.post_id.as_str(), p))
        .collect();

    let mut questions: Vec<&RawPost> = posts
        .iter()
        .filter(|p| p.post_type == PostType::Question)
        .collect();
    questions.sort_by(|a, b| id_order(&a.post_id, &b.post_id));

    let mut report = FilterReport {
        questions: questions.len(),
        ..Default::default()
    };
    let mut problems = Vec::new();
    let mut kept_answers = Vec::new();

    for q in questions {
        let tags: Vec<String> = q.tags.iter().map(|t| normalize_tag(t)).collect();
        if tags.iter().any(|t| policy.excluded.contains(t)) {
            report.excluded_tag += 1;
            continue;
        }
        let concepts: BTreeSet<String> = tags
            .iter()
            .filter(|t| !policy.ignored.contains(*t))
            .filter_map(|t| policy.concept_for(t))
            .map(str::to_owned)
            .collect();
        if concepts.is_empty() {
            report.no_concept_tags += 1;
            continue;
        }
        if concepts.len() > policy.max_tags {
            report.too_many_tags += 1;
            continue;
        }
        let Some(answer_id) = q.accepted_answer_id.as_deref() else {
            report.no_accepted_answer += 1;
            continue;
        };
        let answer = match answers.get(answer_id) {
            Some(a) if a.parent_id.as_deref() == Some(q.post_id.as_str()) => *a,
            _ => {
                report.dangling_answers.push(q.post_id.clone());
                continue;
            }
        };
        let text = strip_markup(&q.body);
        let answer_text = strip_markup(&answer.body);
        if text.is_empty() || answer_text.is_empty() {
            report.empty_body += 1;
            continue;
        }
        problems.push(Problem::new(q.post_id.clone(), text, concepts, answer_id)?);
        kept_answers.push(Answer {
            id: answer_id.to_owned(),
            problem_id: q.post_id.clone(),
            text: answer_text,
        });
    }
    report.kept = problems.len();
    Ok((problems, kept_answers, report))
}

fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::shipped_concepts;

    fn q(id: &str, tags: &[&str], accepted: Option<&str>) -> RawPost {
        RawPost {
            post_id: id.into(),
            post_type: PostType::Question,
            body: format!("<p>Question {id} body?</p>"),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            accepted_answer_id: accepted.map(Into::into),
            parent_id: None,
        }
    }

    fn a(id: &str, parent: &str) -> RawPost {
        RawPost {
            post_id: id.into(),
            post_type: PostType::Answer,
            body: "<p>Answer.</p>".into(),
            tags: vec![],
            accepted_answer_id: None,
            parent_id: Some(parent.into()),
        }
    }

    fn kept(posts: &[RawPost]) -> Vec<(String, Vec<String>)> {
        let policy = TagPolicy::stats_default(&shipped_concepts());
        let (problems, _, _) = filter_problems(posts, &policy).unwrap();
        problems
            .into_iter()
            .map(|p| (p.id, p.concept_tags.into_iter().collect()))
            .collect()
    }

    #[test]
    fn excluded_tag_drops() {
        assert!(kept(&[q("1", &["r", "correlation"], Some("2")), a("2", "1")]).is_empty());
    }

    #[test]
    fn ignored_only_drops() {
        assert!(kept(&[q("1", &["probability"], Some("2")), a("2", "1")]).is_empty());
    }

    #[test]
    fn more_than_three_concepts_drops() {
        let posts = [
            q("1", &["variance", "poisson-distribution", "binomial-distribution", "pdf"], Some("2")),
            a("2", "1"),
        ];
        assert!(kept(&posts).is_empty());
    }

    #[test]
    fn ignored_tag_is_removed() {
        let posts = [q("1", &["Probability", " variance "], Some("2")), a("2", "1")];
        assert_eq!(kept(&posts), vec![("1".to_string(), vec!["variance".to_string()])]);
    }

    #[test]
    fn dangling_answer_is_reported_not_fatal() {
        let policy = TagPolicy::stats_default(&shipped_concepts());
        let posts = [q("1", &["variance"], Some("99")), q("3", &["variance"], None)];
        let (problems, _, report) = filter_problems(&posts, &policy).unwrap();
        assert!(problems.is_empty());
        assert_eq!(report.dangling_answers, vec!["1"]);
        assert_eq!(report.no_accepted_answer, 1);
    }

    #[test]
    fn overlapping_excluded_and_ignored_is_invalid() {
        let mut policy = TagPolicy::stats_default(&shipped_concepts());
        policy.ignored.insert("r".into());
        assert!(filter_problems(&[], &policy).is_err());
    }
}
