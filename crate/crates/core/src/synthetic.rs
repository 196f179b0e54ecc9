//! Seeded generator of small forum-like corpora with known structure.
//!
//! Every question is about one of `topics` topics and is written with that
//! topic's question words. A related question is relevant (task B) when it
//! shares the new question's topic. A comment is good for its own question
//! (task A) when it uses the answer words of that question's topic, which
//! never occur in questions. A comment is good for the new question (task C)
//! exactly when it is good for its question *and* that question is relevant.
//! Relevant related questions tend to receive better search-engine ranks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CommentLabel, Question, QuestionLabel, Triple};

const FILLER: [&str; 12] = [
    "the", "a", "is", "how", "what", "do", "i", "can", "you", "in", "to", "for",
];
const CHATTER: [&str; 6] = ["thanks", "lol", "ok", "same", "question", "anyone"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub queries: usize,
    pub related_per_query: usize,
    pub comments_per_related: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    /// Probability that a related question shares the new question's topic.
    pub relevant_rate: f64,
    /// Probability that a comment answers its own question.
    pub good_rate: f64,
    /// Scale of the noise added before ordering related questions into
    /// ranks; small values make the rank highly informative.
    pub rank_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            queries: 10,
            related_per_query: 4,
            comments_per_related: 3,
            topics: 6,
            words_per_topic: 5,
            relevant_rate: 0.5,
            good_rate: 0.5,
            rank_noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// A handful of triples (2 queries x 2 related x 2 comments).
    pub fn tiny(seed: u64) -> Self {
        SyntheticConfig {
            queries: 2,
            related_per_query: 2,
            comments_per_related: 2,
            topics: 3,
            words_per_topic: 4,
            seed,
            ..Default::default()
        }
    }

    pub fn triple_count(&self) -> usize {
        self.queries * self.related_per_query * self.comments_per_related
    }
}

fn question_word(topic: usize, j: usize) -> String {
    format!("k{topic}q{j}")
}

fn answer_word(topic: usize, j: usize) -> String {
    format!("k{topic}a{j}")
}

fn pick<'a>(rng: &mut impl Rng, words: &'a [&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn question(cfg: &SyntheticConfig, topic: usize, rng: &mut impl Rng) -> Question {
    let subject: Vec<String> = (0..2)
        .map(|_| question_word(topic, rng.gen_range(0..cfg.words_per_topic)))
        .collect();
    let mut body: Vec<String> = Vec::new();
    for _ in 0..rng.gen_range(3..=6) {
        if rng.gen_bool(0.5) {
            body.push(question_word(topic, rng.gen_range(0..cfg.words_per_topic)));
        } else {
            body.push(pick(rng, &FILLER).to_string());
        }
    }
    Question {
        subject: Some(format!("{}?", subject.join(" "))),
        body: format!("{}?", body.join(" ")),
    }
}

fn answer(cfg: &SyntheticConfig, topic: usize, rng: &mut impl Rng) -> String {
    let mut words: Vec<String> = (0..rng.gen_range(2..=4))
        .map(|_| answer_word(topic, rng.gen_range(0..cfg.words_per_topic)))
        .collect();
    for _ in 0..rng.gen_range(1..=3) {
        words.push(pick(rng, &FILLER).to_string());
    }
    words.shuffle(rng);
    format!("{}.", words.join(" "))
}

fn other_topic(cfg: &SyntheticConfig, topic: usize, rng: &mut impl Rng) -> usize {
    if cfg.topics < 2 {
        return topic;
    }
    let t = rng.gen_range(0..cfg.topics - 1);
    if t >= topic {
        t + 1
    } else {
        t
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.triple_count());
    for q in 0..cfg.queries {
        let topic = rng.gen_range(0..cfg.topics);
        let q_new = question(cfg, topic, &mut rng);

        let related: Vec<(usize, bool)> = (0..cfg.related_per_query)
            .map(|_| {
                if rng.gen_bool(cfg.relevant_rate) {
                    (topic, true)
                } else {
                    (other_topic(cfg, topic, &mut rng), false)
                }
            })
            .collect();
        let mut order: Vec<(usize, f64)> = related
            .iter()
            .enumerate()
            .map(|(j, &(_, rel))| (j, f64::from(u8::from(rel)) + cfg.rank_noise * rng.gen::<f64>()))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut ranks = vec![0u32; related.len()];
        for (pos, (j, _)) in order.into_iter().enumerate() {
            ranks[j] = pos as u32 + 1;
        }

        for (j, &(rel_topic, relevant)) in related.iter().enumerate() {
            let q_rel = question(cfg, rel_topic, &mut rng);
            let label_b = match (relevant, rng.gen_bool(0.5)) {
                (true, true) => QuestionLabel::PerfectMatch,
                (true, false) => QuestionLabel::Relevant,
                (false, _) => QuestionLabel::Irrelevant,
            };
            for k in 0..cfg.comments_per_related {
                let good = rng.gen_bool(cfg.good_rate);
                let (c_rel, label_a) = if good {
                    (answer(cfg, rel_topic, &mut rng), CommentLabel::Good)
                } else if rng.gen_bool(0.5) {
                    let t = other_topic(cfg, rel_topic, &mut rng);
                    (answer(cfg, t, &mut rng), CommentLabel::PotentiallyUseful)
                } else {
                    let n = rng.gen_range(2..=5);
                    let words: Vec<&str> = (0..n)
                        .map(|_| if rng.gen_bool(0.6) { pick(&mut rng, &CHATTER) } else { pick(&mut rng, &FILLER) })
                        .collect();
                    (format!("{}!", words.join(" ")), CommentLabel::Bad)
                };
                let label_c = if good && relevant {
                    CommentLabel::Good
                } else if good {
                    CommentLabel::PotentiallyUseful
                } else {
                    CommentLabel::Bad
                };
                out.push(Triple {
                    id: format!("Q{q}_R{j}_C{k}"),
                    group: format!("Q{q}"),
                    q_new: q_new.clone(),
                    q_rel: q_rel.clone(),
                    q_rel_id: Some(format!("Q{q}_R{j}")),
                    c_rel,
                    google_rank: ranks[j],
                    label_a,
                    label_b,
                    label_c,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::binarize;

    #[test]
    fn size_and_determinism() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg);
        assert_eq!(a.len(), cfg.triple_count());
        assert_eq!(a, generate(&cfg));
        let other = generate(&SyntheticConfig { seed: 1, ..cfg });
        assert_ne!(a, other);
    }

    #[test]
    fn task_c_is_the_conjunction_of_a_and_b() {
        for t in generate(&SyntheticConfig { queries: 40, ..Default::default() }) {
            let y = binarize(&t);
            assert_eq!(y.c, y.a & y.b, "{}", t.id);
            assert!(t.google_rank >= 1 && t.google_rank as usize <= 4);
        }
    }
}
