//! Published reference tables for the waste-classification study.
#![allow(dead_code)]

pub const CLASS_NAMES: [&str; 10] = [
    "battery",
    "biological",
    "cardboard",
    "clothes",
    "metal",
    "paper",
    "plastic",
    "shoes",
    "trash",
    "white-glass",
];

/// Per-class record counts of the full dataset.
pub const CLASS_COUNTS: [usize; 10] = [945, 985, 891, 5325, 769, 1050, 865, 1977, 697, 775];

/// Test-set confusion matrix, rows = true class.
pub const CONFUSION: [[u64; 10]; 10] = [
    [137, 0, 0, 0, 1, 0, 0, 0, 0, 0],
    [1, 145, 0, 0, 0, 0, 0, 0, 0, 0],
    [2, 0, 132, 0, 1, 1, 1, 0, 0, 0],
    [0, 1, 1, 807, 0, 3, 2, 9, 1, 0],
    [2, 0, 0, 0, 106, 0, 3, 0, 0, 1],
    [1, 0, 1, 0, 2, 159, 3, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 112, 0, 0, 4],
    [0, 0, 0, 0, 0, 0, 0, 289, 0, 0],
    [0, 2, 0, 0, 0, 0, 2, 1, 114, 3],
    [0, 0, 0, 0, 1, 0, 6, 0, 0, 86],
];

/// Six seeded test accuracies (%) of the backbone-only baseline.
pub const BASELINE_RUNS: [f64; 6] = [92.93, 92.75, 93.10, 92.85, 92.40, 93.00];
/// Six seeded test accuracies (%) of the hybrid model.
pub const HYBRID_RUNS: [f64; 6] = [97.39, 97.45, 97.60, 97.25, 97.80, 97.55];

pub fn labels_from_counts(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect()
}
