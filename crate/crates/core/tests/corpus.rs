use std::collections::HashSet;

use reqadapt::corpus::{
    generate_generic_corpus, generate_srs_corpus, tokenize, Corpus, CorpusSpec, LabelSchema, Task,
};

fn word_types(c: &Corpus) -> HashSet<String> {
    c.documents.iter().flat_map(|d| tokenize(&d.summary)).collect()
}

fn labeled_only(n: usize) -> CorpusSpec {
    CorpusSpec {
        n_labeled: n,
        n_unlabeled: 0,
        ..CorpusSpec::default()
    }
}

#[test]
fn priority_counts_match_table_at_full_scale() {
    // Reference class fractions 0.6897 / 0.1613 / 0.1199 / 0.0289 (counts over 16,590).
    let spec = labeled_only(16_590);
    for (p, want) in spec.priority_probs.iter().zip([0.6897, 0.1613, 0.1199, 0.0289]) {
        assert!((p - want).abs() < 1e-4);
    }
    let c = generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap();
    let counts = c.class_counts(Task::Priority);
    for (got, want) in counts.iter().zip([11443usize, 2677, 1990, 480]) {
        let tol = 0.015 * 16_590.0;
        assert!((*got as f64 - want as f64).abs() <= tol, "{counts:?}");
    }
}

#[test]
fn severity_normal_is_unique_mode() {
    let c = generate_srs_corpus(&labeled_only(5000), &LabelSchema::DOORS).unwrap();
    let counts = c.class_counts(Task::Severity);
    let max = *counts.iter().max().unwrap();
    assert_eq!(counts[0], max);
    assert_eq!(counts.iter().filter(|&&x| x == max).count(), 1);
}

#[test]
fn class_counts_pass_chi_square_at_one_percent() {
    // Upper 1% points of chi-square with 3, 5 and 6 degrees of freedom.
    let critical = [(Task::Priority, 11.345), (Task::Severity, 15.086), (Task::Type, 16.812)];
    for seed in [1u64, 2, 3] {
        let spec = CorpusSpec {
            seed,
            ..labeled_only(10_000)
        };
        let c = generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap();
        for (task, crit) in critical {
            let chi2: f64 = c
                .class_counts(task)
                .iter()
                .zip(spec.probs(task))
                .map(|(&o, &p)| {
                    let e = p * 10_000.0;
                    (o as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi2 < crit, "{task} seed {seed}: chi2 {chi2}");
        }
    }
}

#[test]
fn lengths_mirror_requirement_statistics() {
    let c = generate_srs_corpus(&labeled_only(8000), &LabelSchema::DOORS).unwrap();
    let mut lens: Vec<usize> = c.documents.iter().map(|d| d.word_count()).collect();
    lens.sort_unstable();
    let median = lens[lens.len() / 2];
    assert!((10..=14).contains(&median), "median {median}");
    let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
    assert!((mean - 13.0).abs() < 1.0, "mean {mean}");

    let mut by_type = vec![(0usize, 0usize); 7];
    for d in &c.documents {
        let t = d.label_index(Task::Type).unwrap();
        by_type[t].0 += d.word_count();
        by_type[t].1 += 1;
    }
    let means: Vec<f64> = by_type.iter().map(|(s, n)| *s as f64 / *n as f64).collect();
    let story = LabelSchema::DOORS.index_of(Task::Type, "Story").unwrap();
    let junit = LabelSchema::DOORS.index_of(Task::Type, "JUnit").unwrap();
    for (i, m) in means.iter().enumerate() {
        if i != story {
            assert!(means[story] > *m, "{means:?}");
        }
        if i != junit {
            assert!(means[junit] < *m, "{means:?}");
        }
    }
}

#[test]
fn vocabulary_overlap_tracks_domain_shift() {
    for shift in [0.2, 0.5, 0.8] {
        let spec = CorpusSpec {
            domain_shift: shift,
            ..CorpusSpec::default()
        };
        let generic = word_types(&generate_generic_corpus(&spec).unwrap());
        let domain = word_types(&generate_srs_corpus(&spec, &LabelSchema::DOORS).unwrap());
        let shared = domain.intersection(&generic).count() as f64;
        let overlap = shared / domain.len() as f64;
        assert!(
            (overlap - (1.0 - shift)).abs() <= 0.05,
            "shift {shift}: overlap {overlap}"
        );
    }
}
