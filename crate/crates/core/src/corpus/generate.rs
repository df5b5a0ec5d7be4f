use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, LabelSchema, Task};
use crate::seed;

/// Word-count distribution for one Type class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthProfile {
    pub mean: f64,
    pub spread: f64,
}

/// Parameters of the synthetic requirement corpus.
///
/// Class probabilities are in [`LabelSchema`] order. A signal strength `s`
/// means each keyword slot is taken from the document's own class pool with
/// probability `s` and from a uniformly chosen class pool otherwise, so at
/// `s = 0` the text carries no information about that label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_generic: usize,
    pub priority_probs: Vec<f64>,
    pub severity_probs: Vec<f64>,
    pub type_probs: Vec<f64>,
    pub priority_signal: f64,
    pub severity_signal: f64,
    pub type_signal: f64,
    /// One entry per Type class.
    pub length_profile: Vec<LengthProfile>,
    /// Fraction of in-domain word types that never occur in the generic corpus.
    pub domain_shift: f64,
    pub seed: u64,
}

fn normalized(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

impl Default for CorpusSpec {
    fn default() -> Self {
        // Class frequencies of the 16,590 labeled DOORS requirements.
        Self {
            n_labeled: 2000,
            n_unlabeled: 4000,
            n_generic: 4000,
            priority_probs: normalized(&[11443.0, 2677.0, 1990.0, 480.0]),
            severity_probs: normalized(&[14348.0, 1127.0, 478.0, 284.0, 245.0, 108.0]),
            type_probs: normalized(&[5026.0, 4565.0, 2180.0, 1774.0, 1615.0, 885.0, 545.0]),
            priority_signal: 0.5,
            severity_signal: 0.15,
            type_signal: 0.9,
            length_profile: [12.5, 17.0, 11.0, 12.0, 10.0, 11.0, 8.0]
                .iter()
                .map(|&mean| LengthProfile { mean, spread: 3.5 })
                .collect(),
            domain_shift: 0.5,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn probs(&self, task: Task) -> &[f64] {
        match task {
            Task::Priority => &self.priority_probs,
            Task::Severity => &self.severity_probs,
            Task::Type => &self.type_probs,
        }
    }

    pub fn signal(&self, task: Task) -> f64 {
        match task {
            Task::Priority => self.priority_signal,
            Task::Severity => self.severity_signal,
            Task::Type => self.type_signal,
        }
    }

    /// Collects every violated constraint into one error.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut problems = Vec::new();
        for task in Task::ALL {
            let p = self.probs(task);
            if p.len() != task.num_classes() {
                problems.push(format!(
                    "{task} probabilities have {} entries, expected {}",
                    p.len(),
                    task.num_classes()
                ));
            } else {
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    problems.push(format!("{task} probabilities sum to {sum}"));
                }
                if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    problems.push(format!("{task} probabilities must lie in [0, 1]"));
                }
            }
            let s = self.signal(task);
            if !(0.0..=1.0).contains(&s) {
                problems.push(format!("{task} signal strength {s} outside [0, 1]"));
            }
        }
        if self.length_profile.len() != Task::Type.num_classes() {
            problems.push(format!(
                "length_profile has {} entries, expected {}",
                self.length_profile.len(),
                Task::Type.num_classes()
            ));
        }
        if self
            .length_profile
            .iter()
            .any(|l| !(l.mean > 0.0 && l.spread >= 0.0))
        {
            problems.push("length_profile entries need mean > 0 and spread >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.domain_shift) {
            problems.push(format!("domain_shift {} outside [0, 1]", self.domain_shift));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::InvalidSpec(problems.join("; ")))
        }
    }
}

const TYPE_POOL: usize = 12;
const PRIORITY_POOL: usize = 8;
const SEVERITY_POOL: usize = 6;
const FILLER_WORDS: usize = 120;
const GENERIC_ONLY_WORDS: usize = 400;
const TOPICS: usize = 8;
const TOPIC_STICKINESS: f64 = 0.85;
const TYPE_SLOTS: usize = 2;
const MIN_LEN: usize = 5;
const MAX_LEN: usize = 40;
const WORD_FORM_SEED: u64 = 0x5EED_1E71_C0;

const TYPE_SEEDS: [&[&str]; 7] = [
    &["improve", "update", "enhancement", "default", "selection", "rename"],
    &["developer", "able", "implement", "story", "user", "want"],
    &["refactor", "cleanup", "upgrade", "migrate", "deprecate", "maintenance"],
    &["investigate", "potential", "corrupt", "wrapper", "misc", "question"],
    &["verify", "testcase", "scenario", "regression", "execute", "coverage"],
    &["plan", "milestone", "roadmap", "iteration", "release", "schedule"],
    &["junit", "assert", "fixture", "mock", "failing", "suite"],
];
const PRIORITY_SEEDS: [&[&str]; 4] = [
    &["triage", "backlog"],
    &["urgent", "asap"],
    &["soon", "moderate"],
    &["cosmetic", "someday"],
];
const SEVERITY_SEEDS: [&[&str]; 6] = [
    &["works"],
    &["broken", "fails"],
    &["unclear"],
    &["typo", "wording"],
    &["crash", "dataloss"],
    &["blocker", "hang"],
];
const FILLER_SEEDS: &[&str] = &[
    "the", "a", "to", "in", "for", "of", "and", "is", "be", "on", "with", "should", "page",
    "server", "module", "link", "view", "file", "component", "project", "data", "query",
    "artifact", "new", "not", "by", "folder", "resources", "list", "export", "pdf", "label",
    "client", "web", "repository", "configuration",
];
const GENERIC_SEEDS: &[&str] = &[
    "weather", "river", "music", "garden", "coffee", "travel", "history", "market", "school",
    "family", "city", "season", "animal", "recipe", "football", "mountain", "ocean", "art",
    "science", "novel", "people", "morning", "street", "holiday", "library",
];

fn pseudo_words(n: usize, taken: &mut HashSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: [&str; 18] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr",
        "pl",
    ];
    const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ai", "ou"];
    const CODAS: [&str; 6] = ["", "n", "r", "s", "l", "x"];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn seeded_pool(
    seeds: &[&str],
    size: usize,
    taken: &mut HashSet<String>,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let mut pool: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    pool.truncate(size);
    let extra = size - pool.len();
    pool.extend(pseudo_words(extra, taken, rng));
    pool
}

/// Word pools behind both generators.
///
/// Word forms are fixed; which in-domain words also appear in generic text
/// depends on the corpus seed and `domain_shift`.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub type_pools: Vec<Vec<String>>,
    pub priority_pools: Vec<Vec<String>>,
    pub severity_pools: Vec<Vec<String>>,
    pub filler: Vec<String>,
    pub generic_only: Vec<String>,
    /// In-domain words that the generic corpus also uses.
    pub shared: Vec<String>,
    topics: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn new(spec: &CorpusSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(WORD_FORM_SEED);
        let mut taken: HashSet<String> = TYPE_SEEDS
            .iter()
            .chain(PRIORITY_SEEDS.iter())
            .chain(SEVERITY_SEEDS.iter())
            .flat_map(|p| p.iter())
            .chain(FILLER_SEEDS)
            .chain(GENERIC_SEEDS)
            .map(|s| s.to_string())
            .collect();
        let type_pools = TYPE_SEEDS
            .iter()
            .map(|s| seeded_pool(s, TYPE_POOL, &mut taken, &mut rng))
            .collect();
        let priority_pools = PRIORITY_SEEDS
            .iter()
            .map(|s| seeded_pool(s, PRIORITY_POOL, &mut taken, &mut rng))
            .collect();
        let severity_pools = SEVERITY_SEEDS
            .iter()
            .map(|s| seeded_pool(s, SEVERITY_POOL, &mut taken, &mut rng))
            .collect();
        let filler = seeded_pool(FILLER_SEEDS, FILLER_WORDS, &mut taken, &mut rng);
        let generic_only = seeded_pool(GENERIC_SEEDS, GENERIC_ONLY_WORDS, &mut taken, &mut rng);

        let mut lex = Self {
            type_pools,
            priority_pools,
            severity_pools,
            filler,
            generic_only,
            shared: Vec::new(),
            topics: Vec::new(),
        };

        let mut shift_rng = seed::rng(spec.seed, "lexicon-shift");
        let mut domain: Vec<String> = lex.in_domain_words().into_iter().map(String::from).collect();
        domain.shuffle(&mut shift_rng);
        let n_shared = ((1.0 - spec.domain_shift) * domain.len() as f64).round() as usize;
        domain.truncate(n_shared);
        lex.shared = domain;

        let mut generic: Vec<String> = lex
            .generic_only
            .iter()
            .chain(lex.shared.iter())
            .cloned()
            .collect();
        generic.shuffle(&mut shift_rng);
        let mut topics = vec![Vec::new(); TOPICS];
        for (i, w) in generic.into_iter().enumerate() {
            topics[i % TOPICS].push(w);
        }
        lex.topics = topics;
        lex
    }

    pub fn pools(&self, task: Task) -> &[Vec<String>] {
        match task {
            Task::Priority => &self.priority_pools,
            Task::Severity => &self.severity_pools,
            Task::Type => &self.type_pools,
        }
    }

    /// Every word the requirement generator can emit.
    pub fn in_domain_words(&self) -> Vec<&str> {
        self.filler
            .iter()
            .chain(self.type_pools.iter().flatten())
            .chain(self.priority_pools.iter().flatten())
            .chain(self.severity_pools.iter().flatten())
            .map(String::as_str)
            .collect()
    }

    /// Every word the generic generator can emit.
    pub fn generic_words(&self) -> Vec<&str> {
        self.topics.iter().flatten().map(String::as_str).collect()
    }
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 3.0))).expect("non-empty pool")
}

fn sample_len<R: Rng>(rng: &mut R, profile: LengthProfile) -> usize {
    let x = if profile.spread > 0.0 {
        Normal::new(profile.mean, profile.spread)
            .expect("validated spread")
            .sample(rng)
    } else {
        profile.mean
    };
    (x.round().max(0.0) as usize).clamp(MIN_LEN, MAX_LEN)
}

/// Unlabeled generic-domain text, topic-clustered, deterministic in `spec.seed`.
pub fn generate_generic_corpus(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let lex = Lexicon::new(spec);
    let mut rng = seed::rng(spec.seed, "generic-corpus");
    let all = lex.generic_words();
    let topic_dists: Vec<_> = lex.topics.iter().map(|t| zipf(t.len())).collect();
    let profile = LengthProfile {
        mean: 13.0,
        spread: 4.0,
    };
    let docs = (0..spec.n_generic)
        .map(|i| {
            let len = sample_len(&mut rng, profile);
            let topic = rng.random_range(0..TOPICS);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < TOPIC_STICKINESS {
                        lex.topics[topic][topic_dists[topic].sample(&mut rng)].as_str()
                    } else {
                        all[rng.random_range(0..all.len())]
                    }
                })
                .collect();
            Document::unlabeled(format!("gen-{i:06}"), words.join(" "))
        })
        .collect();
    Ok(Corpus::new(docs))
}

fn keyword<'a, R: Rng>(rng: &mut R, pools: &'a [Vec<String>], class: usize, signal: f64) -> &'a str {
    let c = if rng.random::<f64>() < signal {
        class
    } else {
        rng.random_range(0..pools.len())
    };
    let pool = &pools[c];
    &pool[rng.random_range(0..pool.len())]
}

/// `n_labeled` fully labeled requirements followed by `n_unlabeled`
/// label-free ones drawn from the same text process.
pub fn generate_srs_corpus(spec: &CorpusSpec, schema: &LabelSchema) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let lex = Lexicon::new(spec);
    let mut rng = seed::rng(spec.seed, "srs-corpus");
    let label_dists: Vec<WeightedIndex<f64>> = Task::ALL
        .iter()
        .map(|&t| {
            WeightedIndex::new(spec.probs(t).iter().copied())
                .map_err(|e| CorpusError::InvalidSpec(format!("{t} probabilities: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let filler = zipf(lex.filler.len());

    let total = spec.n_labeled + spec.n_unlabeled;
    let mut docs = Vec::with_capacity(total);
    for i in 0..total {
        let labels: Vec<usize> = label_dists.iter().map(|d| d.sample(&mut rng)).collect();
        let (p, s, t) = (labels[0], labels[1], labels[2]);
        let len = sample_len(&mut rng, spec.length_profile[t]);
        let mut words: Vec<&str> = Vec::with_capacity(len);
        for _ in 0..TYPE_SLOTS {
            words.push(keyword(&mut rng, &lex.type_pools, t, spec.type_signal));
        }
        words.push(keyword(&mut rng, &lex.priority_pools, p, spec.priority_signal));
        words.push(keyword(&mut rng, &lex.severity_pools, s, spec.severity_signal));
        while words.len() < len {
            words.push(&lex.filler[filler.sample(&mut rng)]);
        }
        words.shuffle(&mut rng);
        let summary = words.join(" ");
        let doc = if i < spec.n_labeled {
            Document {
                id: format!("req-{i:06}"),
                summary,
                priority: Some(schema.priority_classes[p].to_string()),
                severity: Some(schema.severity_classes[s].to_string()),
                kind: Some(schema.type_classes[t].to_string()),
            }
        } else {
            Document::unlabeled(format!("req-{i:06}"), summary)
        };
        docs.push(doc);
    }
    Ok(Corpus::new(docs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            n_labeled: 300,
            n_unlabeled: 200,
            n_generic: 1000,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        CorpusSpec::default().validate().unwrap();
    }

    #[test]
    fn invalid_probabilities_are_reported_together() {
        let mut spec = small();
        spec.priority_probs = vec![0.5, 0.5, 0.5, 0.5];
        spec.type_signal = 1.5;
        let err = generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("priority probabilities sum"), "{msg}");
        assert!(msg.contains("type signal"), "{msg}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small();
        assert_eq!(
            generate_generic_corpus(&spec).unwrap(),
            generate_generic_corpus(&spec).unwrap()
        );
        assert_eq!(
            generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap(),
            generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap()
        );
        let other = CorpusSpec { seed: 8, ..small() };
        assert_ne!(
            generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap(),
            generate_srs_corpus(&other, &LabelSchema::DOORS).unwrap()
        );
    }

    #[test]
    fn counts_follow_spec() {
        let spec = small();
        assert_eq!(generate_generic_corpus(&spec).unwrap().len(), 1000);
        let srs = generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap();
        assert_eq!(srs.len(), 500);
        assert_eq!(srs.labeled().len(), 300);
        assert_eq!(srs.unlabeled().len(), 200);
        for d in &srs.documents {
            d.validate().unwrap();
            let n = Task::ALL.iter().filter(|&&t| d.label(t).is_some()).count();
            assert!(n == 0 || n == 3);
        }
    }

    #[test]
    fn word_pools_are_disjoint() {
        let lex = Lexicon::new(&small());
        let mut seen = HashSet::new();
        for w in lex.in_domain_words().into_iter().chain(lex.generic_only.iter().map(String::as_str)) {
            assert!(seen.insert(w), "duplicate word {w}");
        }
        let generic: HashSet<&str> = lex.generic_words().into_iter().collect();
        for w in &lex.shared {
            assert!(generic.contains(w.as_str()));
        }
    }
}
