//! Independent oracles and fixtures shared by the integration tests.
//! Nothing here calls the metric or gradient code under test.

#![allow(dead_code)]

use dogen::corpus::{ClassLabel, Document, SyntheticDomain, SyntheticSpec};
use dogen::rng::SplitMix64;

/// Pairwise AUROC: (2 * #wins + #ties) / (2 * n_m * n_h), in integers.
pub fn brute_force_auroc(scores: &[f64], labels: &[ClassLabel]) -> f64 {
    let mut twice: u128 = 0;
    let (mut n_m, mut n_h) = (0u128, 0u128);
    for (i, li) in labels.iter().enumerate() {
        match li {
            ClassLabel::Machine => n_m += 1,
            ClassLabel::Human => n_h += 1,
        }
        if *li != ClassLabel::Machine {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if *lj == ClassLabel::Human {
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    twice as f64 / (2 * n_m * n_h) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanResult {
    pub tpr: f64,
    pub threshold: f64,
    pub fpr: f64,
}

fn frac_at_or_above(scores: &[f64], labels: &[ClassLabel], class: ClassLabel, t: f64) -> f64 {
    let n = labels.iter().filter(|&&l| l == class).count();
    let hit = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| l == class && s >= t)
        .count();
    hit as f64 / n as f64
}

pub fn human_fpr(scores: &[f64], labels: &[ClassLabel], t: f64) -> f64 {
    frac_at_or_above(scores, labels, ClassLabel::Human, t)
}

/// Tries every observed score and +inf as a threshold, keeps the smallest
/// one meeting the FPR target.
pub fn exhaustive_tpr_scan(scores: &[f64], labels: &[ClassLabel], target: f64) -> ScanResult {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(f64::INFINITY);
    let mut best: Option<f64> = None;
    for &t in &candidates {
        if human_fpr(scores, labels, t) <= target && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    let t = best.expect("+inf is always feasible");
    ScanResult {
        tpr: frac_at_or_above(scores, labels, ClassLabel::Machine, t),
        threshold: t,
        fpr: human_fpr(scores, labels, t),
    }
}

/// Central differences of `f` around `x` along every coordinate in `coords`.
pub fn central_differences(
    x: &[f64],
    coords: &[usize],
    h: f64,
    f: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random scores for one AUROC/TPR instance. With probability `tie_p` a
/// score copies an earlier one.
pub fn random_instance(
    rng: &mut SplitMix64,
    max_per_class: u64,
    tie_p: f64,
) -> (Vec<f64>, Vec<ClassLabel>) {
    let n_m = 1 + rng.next_below(max_per_class) as usize;
    let n_h = 1 + rng.next_below(max_per_class) as usize;
    let mut scores: Vec<f64> = Vec::with_capacity(n_m + n_h);
    let mut labels = Vec::with_capacity(n_m + n_h);
    for i in 0..n_m + n_h {
        let s = if !scores.is_empty() && rng.next_f64() < tie_p {
            scores[rng.next_below(scores.len() as u64) as usize]
        } else {
            rng.next_f64()
        };
        scores.push(s);
        labels.push(if i < n_m {
            ClassLabel::Machine
        } else {
            ClassLabel::Human
        });
    }
    // interleave classes
    let mut order: Vec<usize> = (0..scores.len()).collect();
    rng.shuffle(&mut order);
    (
        order.iter().map(|&i| scores[i]).collect(),
        order.iter().map(|&i| labels[i]).collect(),
    )
}

pub fn stub_docs(domain: &str, human: usize, machine: usize) -> Vec<Document> {
    let mut docs = Vec::with_capacity(human + machine);
    for i in 0..human {
        docs.push(Document {
            id: format!("{domain}-h{i}"),
            text: "x".into(),
            label: ClassLabel::Human,
            domain: domain.into(),
            generator: None,
        });
    }
    for i in 0..machine {
        docs.push(Document {
            id: format!("{domain}-m{i}"),
            text: "x".into(),
            label: ClassLabel::Machine,
            domain: domain.into(),
            generator: None,
        });
    }
    docs
}

/// Pre-balancing and balanced (human, machine) counts per domain.
type Counts = (usize, usize);

pub const BALANCING_TABLE: [(&str, Counts, Counts); 10] = [
    ("cmv", (4_223, 20_388), (4_223, 4_223)),
    ("eli5", (16_706, 25_548), (16_706, 16_706)),
    ("hswag", (3_129, 24_482), (3_129, 3_129)),
    ("roct", (3_287, 25_510), (3_287, 3_287)),
    ("sci_gen", (4_436, 18_691), (4_436, 4_436)),
    ("squad", (15_820, 19_940), (15_820, 15_820)),
    ("tldr", (2_826, 19_811), (2_826, 2_826)),
    ("wp", (6_356, 24_803), (6_356, 6_356)),
    ("xsum", (4_708, 26_051), (4_708, 4_708)),
    ("yelp", (31_827, 20_529), (20_529, 20_529)),
];

pub fn balancing_fixture() -> Vec<Document> {
    BALANCING_TABLE
        .iter()
        .flat_map(|(d, (h, m), _)| stub_docs(d, *h, *m))
        .collect()
}

pub const VOCAB: usize = 50;
pub const DOC_LEN: usize = 30;

pub fn vocab(domain: usize) -> Vec<String> {
    (0..VOCAB).map(|j| format!("d{domain}w{j}")).collect()
}

fn domain_spec(name: &str, vocabulary: Vec<String>, docs_per_class: usize) -> SyntheticDomain {
    SyntheticDomain {
        domain: name.into(),
        vocabulary,
        doc_length: DOC_LEN,
        docs_per_class,
    }
}

/// Four domains with disjoint vocabularies.
pub fn four_domain_spec(docs_per_class: usize, machine_shift: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        domains: (0..4)
            .map(|i| domain_spec(&format!("dom{i}"), vocab(i), docs_per_class))
            .collect(),
        machine_shift,
        seed,
    }
}

/// Vocabulary mixing two domains half and half, arranged so the first half
/// holds both parents' machine-leaning tokens.
pub fn mixed_vocab(a: usize, b: usize) -> Vec<String> {
    let (va, vb) = (vocab(a), vocab(b));
    let h = VOCAB / 2;
    va[..h]
        .iter()
        .chain(&vb[..h])
        .chain(&va[h..])
        .chain(&vb[h..])
        .cloned()
        .collect()
}

/// The four training domains plus `mix01`, a held-out domain whose
/// vocabulary mixes dom0 and dom1.
pub fn test_spec(docs_per_class: usize, machine_shift: f64, seed: u64) -> SyntheticSpec {
    let mut spec = four_domain_spec(docs_per_class, machine_shift, seed);
    spec.domains
        .push(domain_spec(HELD_OUT, mixed_vocab(0, 1), docs_per_class));
    spec
}

pub const HELD_OUT: &str = "mix01";
