//! Labeled corpora: JSONL ingestion, class balancing, seeded splits and the
//! synthetic multi-domain generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub type DomainId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Human,
    Machine,
}

impl ClassLabel {
    /// Machine text is the positive class.
    pub fn target(self) -> f64 {
        match self {
            ClassLabel::Human => 0.0,
            ClassLabel::Machine => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Human => "human",
            ClassLabel::Machine => "machine",
        }
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(ClassLabel::Human),
            "machine" => Ok(ClassLabel::Machine),
            other => Err(Error::invalid(format!(
                "label must be \"human\" or \"machine\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: ClassLabel,
    pub domain: DomainId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

#[derive(Deserialize)]
struct RawDocument {
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
    domain: Option<String>,
    generator: Option<String>,
}

fn corpus_err(line: usize, message: impl Into<String>) -> Error {
    Error::Corpus {
        line,
        message: message.into(),
    }
}

/// Parses one JSONL line. A missing `id` falls back to the 1-based line number.
fn parse_line(line_no: usize, line: &str) -> Result<Document> {
    let raw: RawDocument = serde_json::from_str(line)
        .map_err(|e| corpus_err(line_no, format!("malformed JSON: {e}")))?;
    let text = raw
        .text
        .ok_or_else(|| corpus_err(line_no, "missing required key `text`"))?;
    let label = raw
        .label
        .ok_or_else(|| corpus_err(line_no, "missing required key `label`"))?;
    let domain = raw
        .domain
        .ok_or_else(|| corpus_err(line_no, "missing required key `domain`"))?;
    let label: ClassLabel = label
        .parse()
        .map_err(|e: Error| corpus_err(line_no, e.to_string()))?;
    let id = raw.id.unwrap_or_else(|| line_no.to_string());
    if id.is_empty() {
        return Err(corpus_err(line_no, "empty id"));
    }
    if text.is_empty() {
        return Err(corpus_err(line_no, "empty text"));
    }
    if domain.is_empty() {
        return Err(corpus_err(line_no, "empty domain"));
    }
    Ok(Document {
        id,
        text,
        label,
        domain,
        generator: raw.generator,
    })
}

/// Reads a JSONL corpus. Blank lines are skipped; line numbers in errors are
/// 1-based physical lines.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| corpus_err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_line(line_no, &line)?;
        if !seen.insert(doc.id.clone()) {
            return Err(corpus_err(line_no, format!("duplicate id {:?}", doc.id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Corpus { line, message } => Error::Corpus {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write_jsonl<W: Write>(mut w: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn to_jsonl_string(docs: &[Document]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, docs).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub human: usize,
    pub machine: usize,
}

impl ClassCounts {
    fn bump(&mut self, label: ClassLabel) {
        match label {
            ClassLabel::Human => self.human += 1,
            ClassLabel::Machine => self.machine += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.human + self.machine
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub domains: BTreeMap<DomainId, ClassCounts>,
    pub total: usize,
}

pub fn manifest(docs: &[Document]) -> CorpusManifest {
    let mut domains: BTreeMap<DomainId, ClassCounts> = BTreeMap::new();
    for d in docs {
        domains.entry(d.domain.clone()).or_default().bump(d.label);
    }
    CorpusManifest {
        domains,
        total: docs.len(),
    }
}

/// Document indices grouped by domain, domains in order of first appearance.
pub fn group_by_domain(docs: &[Document]) -> Vec<(DomainId, Vec<usize>)> {
    let mut order: Vec<(DomainId, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, d) in docs.iter().enumerate() {
        let s = *slot.entry(d.domain.as_str()).or_insert_with(|| {
            order.push((d.domain.clone(), Vec::new()));
            order.len() - 1
        });
        order[s].1.push(i);
    }
    order
}

/// Keeps the minority class whole and down-samples the majority class, both
/// given as index lists. Returns retained indices in ascending order.
fn downsample(human: &[usize], machine: &[usize], rng: &mut SplitMix64) -> Vec<usize> {
    let (minority, majority) = if human.len() <= machine.len() {
        (human, machine)
    } else {
        (machine, human)
    };
    let mut kept: Vec<usize> = minority.to_vec();
    if majority.len() == minority.len() {
        kept.extend_from_slice(majority);
    } else {
        kept.extend(
            rng.sample_indices(majority.len(), minority.len())
                .into_iter()
                .map(|j| majority[j]),
        );
    }
    kept.sort_unstable();
    kept
}

fn split_classes(docs: &[Document], idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
    idx.iter()
        .partition(|&&i| docs[i].label == ClassLabel::Human)
}

/// Down-samples the majority class of every domain to the minority count.
/// Output groups domains by first appearance and keeps original relative order
/// within each domain.
pub fn balance_per_domain(docs: &[Document], seed: u64) -> Result<Vec<Document>> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::new();
    for (domain, idx) in group_by_domain(docs) {
        let (human, machine) = split_classes(docs, &idx);
        if human.is_empty() || machine.is_empty() {
            return Err(Error::Unbalanceable {
                domain,
                missing: if human.is_empty() { "human" } else { "machine" },
            });
        }
        out.extend(
            downsample(&human, &machine, &mut rng)
                .into_iter()
                .map(|i| docs[i].clone()),
        );
    }
    Ok(out)
}

/// Down-samples the globally larger class to the global minority count,
/// ignoring domains. Retained documents keep their original order.
pub fn balance_global(docs: &[Document], seed: u64) -> Result<Vec<Document>> {
    let all: Vec<usize> = (0..docs.len()).collect();
    let (human, machine) = split_classes(docs, &all);
    if human.is_empty() || machine.is_empty() {
        return Err(Error::Unbalanceable {
            domain: "<all>".into(),
            missing: if human.is_empty() { "human" } else { "machine" },
        });
    }
    let mut rng = SplitMix64::new(seed);
    Ok(downsample(&human, &machine, &mut rng)
        .into_iter()
        .map(|i| docs[i].clone())
        .collect())
}

/// Exact rational in the open unit interval. Serializes as `"num/den"`;
/// deserializes from that form or from a decimal number such as `0.9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 || num >= den {
            return Err(Error::Config(format!(
                "train fraction must lie strictly between 0 and 1, got {num}/{den}"
            )));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// `floor(self * n)` in exact integer arithmetic.
    pub fn floor_mul(&self, n: usize) -> usize {
        ((n as u128 * self.num as u128) / self.den as u128) as usize
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Default for Fraction {
    fn default() -> Self {
        Self { num: 9, den: 10 }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse fraction {s:?}"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Fraction::new(n, d);
        }
        // plain decimal: "0.9" -> 9/10
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.chars().any(|c| !c.is_ascii_digit())
            || frac.chars().any(|c| !c.is_ascii_digit())
            || frac.len() > 18
        {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_v: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(bad)?;
        Fraction::new(num, den)
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        let text = match Repr::deserialize(d)? {
            Repr::Text(t) => t,
            // Display for f64 is the shortest round-trip decimal
            Repr::Number(x) => format!("{x}"),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: Fraction,
    pub seed: u64,
}

/// Per-domain seeded split. Each domain contributes `floor(fraction * n)`
/// documents to train and the rest to validation, in shuffled order; domains
/// appear in order of first appearance.
pub fn split_train_val(
    docs: &[Document],
    spec: &SplitSpec,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if docs.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (domain, mut idx) in group_by_domain(docs) {
        if idx.len() < 2 {
            return Err(Error::TooFewToSplit {
                domain,
                count: idx.len(),
            });
        }
        rng.shuffle(&mut idx);
        let cut = spec.train_fraction.floor_mul(idx.len());
        train.extend(idx[..cut].iter().map(|&i| docs[i].clone()));
        val.extend(idx[cut..].iter().map(|&i| docs[i].clone()));
    }
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomain {
    pub domain: DomainId,
    pub vocabulary: Vec<String>,
    pub doc_length: usize,
    pub docs_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub domains: Vec<SyntheticDomain>,
    pub machine_shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains.len() < 2 {
            return Err(Error::Config(
                "synthetic corpus needs at least 2 domains".into(),
            ));
        }
        if !(self.machine_shift > 0.0 && self.machine_shift <= 1.0) {
            return Err(Error::Config(format!(
                "machine_shift must lie in (0, 1], got {}",
                self.machine_shift
            )));
        }
        let mut names = HashSet::new();
        for d in &self.domains {
            if d.domain.is_empty() || !names.insert(d.domain.as_str()) {
                return Err(Error::Config(format!(
                    "bad or duplicate domain {:?}",
                    d.domain
                )));
            }
            // both halves of the vocabulary must be nonempty for the tilt
            if d.vocabulary.len() < 2 {
                return Err(Error::Config(format!(
                    "domain {:?}: vocabulary needs at least 2 tokens",
                    d.domain
                )));
            }
            if d.vocabulary
                .iter()
                .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
            {
                return Err(Error::Config(format!(
                    "domain {:?}: tokens must be nonempty and contain no whitespace",
                    d.domain
                )));
            }
            if d.doc_length == 0 || d.docs_per_class == 0 {
                return Err(Error::Config(format!(
                    "domain {:?}: doc_length and docs_per_class must be positive",
                    d.domain
                )));
            }
        }
        Ok(())
    }

    /// A ready-made spec: `n_domains` domains with disjoint vocabularies
    /// `d{i}w{j}` of `vocab_size` tokens each.
    pub fn disjoint(
        n_domains: usize,
        vocab_size: usize,
        doc_length: usize,
        docs_per_class: usize,
        machine_shift: f64,
        seed: u64,
    ) -> Self {
        let domains = (0..n_domains)
            .map(|i| SyntheticDomain {
                domain: format!("dom{i}"),
                vocabulary: (0..vocab_size).map(|j| format!("d{i}w{j}")).collect(),
                doc_length,
                docs_per_class,
            })
            .collect();
        Self {
            domains,
            machine_shift,
            seed,
        }
    }
}

/// Cumulative token weights for one class. The first half of the vocabulary
/// (rounded up) carries weight `1 + shift` for machine text and `1 - shift`
/// for human text; the second half the reverse.
fn class_cdf(vocab_len: usize, shift: f64, label: ClassLabel) -> Vec<f64> {
    let half = vocab_len.div_ceil(2);
    let (first, second) = match label {
        ClassLabel::Machine => (1.0 + shift, 1.0 - shift),
        ClassLabel::Human => (1.0 - shift, 1.0 + shift),
    };
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (0..vocab_len)
        .map(|j| {
            acc += if j < half { first } else { second };
            acc
        })
        .collect();
    let total = acc;
    for c in &mut cdf {
        *c /= total;
    }
    cdf
}

fn draw(cdf: &[f64], rng: &mut SplitMix64) -> usize {
    let u = rng.next_f64();
    // first index whose cumulative weight exceeds u; zero-weight tokens are never hit
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

pub fn synthesize_corpus(spec: &SyntheticSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut docs = Vec::new();
    for dom in &spec.domains {
        let cdfs = [
            class_cdf(dom.vocabulary.len(), spec.machine_shift, ClassLabel::Human),
            class_cdf(
                dom.vocabulary.len(),
                spec.machine_shift,
                ClassLabel::Machine,
            ),
        ];
        for i in 0..dom.docs_per_class {
            for (label, cdf) in [ClassLabel::Human, ClassLabel::Machine]
                .into_iter()
                .zip(&cdfs)
            {
                let tokens: Vec<&str> = (0..dom.doc_length)
                    .map(|_| dom.vocabulary[draw(cdf, &mut rng)].as_str())
                    .collect();
                let tag = if label == ClassLabel::Machine {
                    'm'
                } else {
                    'h'
                };
                docs.push(Document {
                    id: format!("{}-{tag}{i:06}", dom.domain),
                    text: tokens.join(" "),
                    label,
                    domain: dom.domain.clone(),
                    generator: (label == ClassLabel::Machine).then(|| "synthetic".to_string()),
                });
            }
        }
    }
    Ok(docs)
}
