#![allow(dead_code)]

use reqadapt::eval::ConfusionMatrix;

pub struct Golden {
    pub name: &'static str,
    pub cm: ConfusionMatrix,
    /// Reference (precision, recall, f1) per class, as printed.
    pub printed: Vec<(f64, f64, f64)>,
}

/// The three reference confusion matrices, classes in alphabetical order.
pub fn reference_matrices() -> Vec<Golden> {
    vec![
        Golden {
            name: "priority",
            cm: ConfusionMatrix::from_counts(
                &["High", "Low", "Medium", "Unassigned"],
                vec![
                    vec![346, 0, 37, 299],
                    vec![13, 3, 12, 104],
                    vec![86, 0, 95, 316],
                    vec![149, 0, 60, 2628],
                ],
            )
            .unwrap(),
            printed: vec![
                (0.582, 0.507, 0.542),
                (1.000, 0.022, 0.044),
                (0.466, 0.191, 0.271),
                (0.785, 0.926, 0.849),
            ],
        },
        Golden {
            name: "severity",
            cm: ConfusionMatrix::from_counts(
                &["Blocker", "Critical", "Major", "Minor", "Normal", "Undecided"],
                vec![
                    vec![4, 0, 7, 0, 14, 1],
                    vec![0, 4, 16, 0, 39, 1],
                    vec![1, 0, 57, 0, 232, 1],
                    vec![0, 0, 2, 9, 56, 0],
                    vec![0, 0, 59, 0, 3491, 22],
                    vec![0, 0, 2, 0, 73, 57],
                ],
            )
            .unwrap(),
            printed: vec![
                (0.800, 0.150, 0.250),
                (1.000, 0.066, 0.125),
                (0.390, 0.195, 0.262),
                (1.000, 0.134, 0.237),
                (0.890, 0.977, 0.933),
                (0.695, 0.431, 0.532),
            ],
        },
        Golden {
            name: "type",
            cm: ConfusionMatrix::from_counts(
                &["Enhancement", "JUnit", "Maintenance", "Other", "Plan Item", "Story", "Test Task"],
                vec![
                    vec![1029, 1, 70, 80, 21, 48, 2],
                    vec![1, 119, 1, 2, 1, 6, 2],
                    vec![44, 0, 503, 10, 1, 4, 0],
                    vec![212, 3, 33, 165, 12, 17, 24],
                    vec![18, 0, 0, 7, 161, 12, 1],
                    vec![41, 1, 2, 11, 18, 1054, 4],
                    vec![4, 5, 1, 5, 1, 10, 381],
                ],
            )
            .unwrap(),
            printed: vec![
                (0.763, 0.823, 0.792),
                (0.922, 0.902, 0.912),
                (0.825, 0.895, 0.858),
                (0.589, 0.354, 0.442),
                (0.749, 0.809, 0.778),
                (0.916, 0.932, 0.924),
                (0.920, 0.936, 0.928),
            ],
        },
    ]
}

#[derive(Debug)]
pub struct Mismatch {
    pub table: &'static str,
    pub class: String,
    pub metric: &'static str,
    pub computed: f64,
    pub printed: f64,
}

/// Printed values that differ from the recomputed ones by more than 0.001.
pub fn reference_mismatches() -> Vec<Mismatch> {
    let mut out = Vec::new();
    for g in reference_matrices() {
        let report = reqadapt::eval::summarize(&g.cm).unwrap();
        for (m, (p, r, f)) in report.per_class.iter().zip(&g.printed) {
            for (computed, printed, metric) in [(m.precision, *p, "P"), (m.recall, *r, "R"), (m.f1, *f, "F1")] {
                if (computed - printed).abs() > 0.001 {
                    out.push(Mismatch {
                        table: g.name,
                        class: m.class.clone(),
                        metric,
                        computed,
                        printed,
                    });
                }
            }
        }
    }
    out
}

/// Predictions that always pick class 0, with class 0 holding `frac` of
/// 100,000 examples and the rest spread over the other classes.
pub fn majority_only(frac: f64, classes: usize) -> ConfusionMatrix {
    let n = 100_000u64;
    let major = (frac * n as f64).round() as u64;
    let rest = n - major;
    let mut counts = vec![vec![0u64; classes]; classes];
    counts[0][0] = major;
    for c in 1..classes {
        counts[c][0] = rest / (classes as u64 - 1) + u64::from((c as u64) <= rest % (classes as u64 - 1));
    }
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    ConfusionMatrix::from_counts(&refs, counts).unwrap()
}

/// Upper tail of F(10, 5) by composite Simpson integration of the density.
pub fn f_tail_by_integration(f: f64) -> f64 {
    // B(5, 5/2) = Γ(5)Γ(5/2)/Γ(15/2) = 24 · (3/4) / (135135/128) = 2304/135135
    let beta = 2304.0 / 135135.0;
    let pdf = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let (d1, d2) = (10.0f64, 5.0f64);
        ((d1 * x).powf(d1) * d2.powf(d2) / (d1 * x + d2).powf(d1 + d2)).sqrt() / (x * beta)
    };
    if f <= 0.0 {
        return 1.0;
    }
    let n = 400_000usize;
    let h = f / n as f64;
    let mut s = pdf(0.0) + pdf(f);
    for i in 1..n {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - s * h / 3.0
}

/// The 5×2cv statistic evaluated straight from its definition.
pub fn f_statistic_by_formula(d: &[[f64; 2]; 5]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for row in d {
        let mean = (row[0] + row[1]) / 2.0;
        den += (row[0] - mean).powi(2) + (row[1] - mean).powi(2);
        num += row[0] * row[0] + row[1] * row[1];
    }
    num / (2.0 * den)
}
