//! Synthetic problems with one planted question sentence each, for tests
//! and demos where real annotations are unavailable.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{assign_splits, Answer, Concept, Corpus, Problem, SplitFractions};
use crate::error::{Error, Result};
use crate::unknown::{AnnotationRecord, AnnotationSet, SpanInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub problems: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Number of concepts drawn from the background list.
    pub concepts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            problems: 500,
            min_sentences: 3,
            max_sentences: 8,
            concepts: 11,
            seed: 0,
        }
    }
}

pub struct SynthData {
    pub corpus: Corpus,
    /// The concepts problems are tagged with, in background order.
    pub concepts: Vec<Concept>,
    pub annotations: AnnotationSet,
}

const CUES: &[&str] = &[
    "What is the probability that {event}?",
    "How do you calculate the {quantity}?",
    "I want to calculate the {quantity}.",
    "How could one derive the {quantity}?",
    "How do we prove that {claim}?",
];

const EVENTS: &[&str] = &[
    "{k} people in the group are fatigued",
    "the time between trains is {k} minutes or less",
    "two dice show the same face",
    "the first success happens on trial {k}",
    "at least {k} of the bulbs fail",
];

const QUANTITIES: &[&str] = &[
    "variance of the waiting time",
    "expected number of heads after {k} tosses",
    "distribution of the sample maximum",
    "mean of the total score",
];

const CLAIMS: &[&str] = &[
    "the estimator is unbiased",
    "the two counts are independent",
    "the limit equals {k}",
];

const FILLERS: &[&str] = &[
    "Suppose the {name} describes the arrivals at a small shop.",
    "My course notes introduce the {name} in chapter {k}.",
    "Assume the setup follows the usual {name} model.",
    "Our lecturer mentioned the {name} last week.",
    "We observe a sample of {k} values from the process.",
    "Each trial is independent of the others.",
    "The numbers were collected over {k} days in the spring.",
    "I have seen a similar exercise in a textbook.",
    "The parameters are known and fixed in advance.",
    "Here is my attempt so far.",
    "Thanks in advance for any help.",
];

fn fill(template: &str, name: &str, rng: &mut ChaCha8Rng) -> String {
    let k = rng.random_range(2..30).to_string();
    template.replace("{name}", name).replace("{k}", &k)
}

fn cue_sentence(rng: &mut ChaCha8Rng) -> String {
    let cue = *CUES.choose(rng).expect("nonempty");
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| fill(xs.choose(rng).expect("nonempty"), "", rng);
    let event = pick(rng, EVENTS);
    let quantity = pick(rng, QUANTITIES);
    let claim = pick(rng, CLAIMS);
    cue.replace("{event}", &event)
        .replace("{quantity}", &quantity)
        .replace("{claim}", &claim)
}

fn vocabulary(c: &Concept) -> String {
    c.name
        .chars()
        .map(|ch| if ch.is_alphanumeric() || ch == '-' || ch == '\'' { ch.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Evenly spaced picks from `pool` so every chapter is represented.
fn pick_concepts(pool: &[Concept], n: usize) -> Vec<Concept> {
    (0..n).map(|i| pool[i * pool.len() / n].clone()).collect()
}

/// Problems of `min..=max` sentences. Exactly one sentence, at a uniform
/// position, states the question with a cue phrase; the rest are fillers
/// naming the problem's one or two concepts.
pub fn synthesize(cfg: &SynthConfig, pool: &[Concept]) -> Result<SynthData> {
    if cfg.problems == 0 {
        return Err(Error::invalid("synthetic corpus needs at least one problem"));
    }
    if cfg.min_sentences < 2 || cfg.min_sentences > cfg.max_sentences {
        return Err(Error::invalid("sentence range must satisfy 2 <= min <= max"));
    }
    if cfg.concepts < 2 || cfg.concepts > pool.len() {
        return Err(Error::invalid(format!("concept count must lie in 2..={}", pool.len())));
    }
    let concepts = pick_concepts(pool, cfg.concepts);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e17_c0de_0f5e_ed00);
    let mut problems = Vec::with_capacity(cfg.problems);
    let mut answers = Vec::with_capacity(cfg.problems);
    let mut planted = Vec::with_capacity(cfg.problems);
    for i in 0..cfg.problems {
        let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
        let k = if rng.random_bool(0.3) { 2 } else { 1 };
        let tagged: Vec<&Concept> = concepts.choose_multiple(&mut rng, k).collect();
        let cue_at = rng.random_range(0..n);
        let mut fillers: Vec<&str> = FILLERS.to_vec();
        fillers.shuffle(&mut rng);
        let mut sentences = Vec::with_capacity(n);
        let mut f = 0;
        for j in 0..n {
            if j == cue_at {
                sentences.push(cue_sentence(&mut rng));
            } else {
                let name = vocabulary(tagged[f % tagged.len()]);
                sentences.push(fill(fillers[f % fillers.len()], &name, &mut rng));
                f += 1;
            }
        }
        let id = format!("s{i:04}");
        let answer_id = format!("a{i:04}");
        let problem = Problem::new(&id, sentences.join(" "), tagged.iter().map(|c| c.id.clone()), &answer_id)?;
        if problem.sentence_count() != n {
            return Err(Error::invalid(format!(
                "synthetic problem {id} segmented into {} sentences, expected {n}",
                problem.sentence_count()
            )));
        }
        answers.push(Answer {
            id: answer_id,
            problem_id: id,
            text: format!("This follows from the definition of the {}.", vocabulary(tagged[0])),
        });
        problems.push(problem);
        planted.push(cue_at);
    }
    let ids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
    let splits = assign_splits(&ids, SplitFractions::STANDARD, cfg.seed)?;
    let corpus = Corpus::new(problems, answers)?.with_splits(&splits)?;

    let mut annotations = AnnotationSet::new();
    for (p, &j) in corpus.problems().iter().zip(&planted) {
        let s = &p.sentences[j];
        // The span stops before the terminal punctuation.
        let span = SpanInput {
            sentence_index: j,
            char_start: s.char_start(),
            char_end: s.char_end() - 1,
        };
        let rec = AnnotationRecord::from_spans(p, &[span], false).map_err(|errs| {
            Error::invalid(format!("synthetic annotation of {}: {}", p.id, errs[0]))
        })?;
        annotations.insert(p.id.clone(), rec);
    }
    Ok(SynthData {
        corpus,
        concepts,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{shipped_concepts, Split};

    fn small(seed: u64) -> SynthData {
        let cfg = SynthConfig {
            problems: 60,
            seed,
            ..SynthConfig::default()
        };
        synthesize(&cfg, &shipped_concepts()).unwrap()
    }

    #[test]
    fn one_planted_sentence_per_problem() {
        let d = small(1);
        assert_eq!(d.corpus.len(), 60);
        for p in d.corpus.problems() {
            assert!((3..=8).contains(&p.sentence_count()), "{}", p.id);
            let rec = &d.annotations[&p.id];
            assert_eq!(rec.sentence_labels.iter().map(|&y| y as usize).sum::<usize>(), 1);
            rec.validate(p).unwrap();
            let j = rec.sentence_labels.iter().position(|&y| y == 1).unwrap();
            let text = p.sentences[j].text.to_lowercase();
            assert!(
                ["probability that", "calculate", "derive", "prove that"]
                    .iter()
                    .any(|c| text.contains(c)),
                "{text}"
            );
        }
    }

    #[test]
    fn concepts_come_from_the_pool() {
        let d = small(2);
        assert_eq!(d.concepts.len(), 11);
        let ids: std::collections::BTreeSet<_> = d.concepts.iter().map(|c| c.id.clone()).collect();
        assert!(d.corpus.concept_ids().is_subset(&ids));
        assert!(d.corpus.problems().iter().all(|p| (1..=2).contains(&p.concept_tags.len())));
    }

    #[test]
    fn every_split_is_used_and_generation_is_deterministic() {
        let a = small(3);
        let b = small(3);
        assert_eq!(a.corpus.problems(), b.corpus.problems());
        assert_eq!(a.annotations, b.annotations);
        for s in Split::ALL {
            assert!(a.corpus.split(s).count() > 0, "{s}");
        }
        assert_ne!(small(4).corpus.problems(), a.corpus.problems());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let pool = shipped_concepts();
        for cfg in [
            SynthConfig { problems: 0, ..SynthConfig::default() },
            SynthConfig { min_sentences: 5, max_sentences: 4, ..SynthConfig::default() },
            SynthConfig { concepts: 1, ..SynthConfig::default() },
            SynthConfig { concepts: 500, ..SynthConfig::default() },
        ] {
            assert!(synthesize(&cfg, &pool).is_err());
        }
    }
}
