//! Shared test support: random table-model instances with a brute-force
//! probability walker, an independent overlap comparator, counting oracles
//! for metrics, random ICD tables and a minimal HTTP stub server.
//!
//! Nothing here calls into the scoring code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const TEMPLATE_PREFIX: &str = "Patient self-report: ";
pub const TEMPLATE_SUFFIX: &str = "\nMost likely diagnosis:";

/// The default prompt with `report` filled in, spelled out independently.
pub fn prompt(report: &str) -> String {
    format!("{TEMPLATE_PREFIX}{report}{TEMPLATE_SUFFIX}")
}

// ---------------------------------------------------------------------------
// Random table models and the brute-force oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RawEntry {
    pub context: String,
    pub prefix: Vec<String>,
    pub next: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub vocab: Vec<String>,
    pub smoothing: f64,
    pub entries: Vec<RawEntry>,
    /// `(code, tokens)` in catalog order.
    pub labels: Vec<(String, Vec<String>)>,
    pub reports: Vec<String>,
}

/// Options for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub max_vocab: usize,
    pub max_labels: usize,
    pub max_label_len: usize,
    pub reports: usize,
    /// Cover every reachable (context, prefix) with an entry listing every
    /// token, so neither smoothing nor the uniform fallback is ever used.
    pub full_support: bool,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            max_vocab: 8,
            max_labels: 10,
            max_label_len: 3,
            reports: 2,
            full_support: false,
        }
    }
}

fn random_distribution<R: Rng>(rng: &mut R, tokens: &[String]) -> Vec<(String, f64)> {
    let weights: Vec<f64> = tokens.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    tokens
        .iter()
        .cloned()
        .zip(weights.iter().map(|w| w / total))
        .collect()
}

pub fn random_instance<R: Rng>(rng: &mut R, shape: InstanceShape) -> Instance {
    let v = rng.random_range(2..=shape.max_vocab);
    let vocab: Vec<String> = (0..v).map(|i| format!("w{i}")).collect();
    let m = rng.random_range(1..=shape.max_labels);
    let labels: Vec<(String, Vec<String>)> = (0..m)
        .map(|i| {
            let len = rng.random_range(1..=shape.max_label_len);
            let toks = (0..len)
                .map(|_| vocab.choose(rng).unwrap().clone())
                .collect();
            (format!("L{i}"), toks)
        })
        .collect();
    let reports: Vec<String> = (0..shape.reports)
        .map(|i| format!("report {i} text"))
        .collect();

    let mut contexts: Vec<String> = reports.iter().map(|r| prompt(r)).collect();
    contexts.push(prompt(""));
    contexts.push("*".to_string());
    let mut prefixes: BTreeSet<Vec<String>> = BTreeSet::new();
    for (_, toks) in &labels {
        for t in 0..toks.len() {
            prefixes.insert(toks[..t].to_vec());
        }
    }
    let mut entries = Vec::new();
    for ctx in &contexts {
        for pre in &prefixes {
            let wanted = if shape.full_support {
                ctx != "*"
            } else {
                rng.random_bool(0.6)
            };
            if !wanted {
                continue;
            }
            let listed: Vec<String> = if shape.full_support {
                vocab.clone()
            } else {
                let k = rng.random_range(1..=v);
                let mut pool = vocab.clone();
                let mut picked = Vec::new();
                for _ in 0..k {
                    let i = rng.random_range(0..pool.len());
                    picked.push(pool.remove(i));
                }
                picked
            };
            entries.push(RawEntry {
                context: ctx.clone(),
                prefix: pre.clone(),
                next: random_distribution(rng, &listed),
            });
        }
    }
    Instance {
        vocab,
        smoothing: rng.random_range(1e-6..0.05),
        entries,
        labels,
        reports,
    }
}

impl Instance {
    pub fn spec_json(&self) -> Value {
        json!({
            "name": "random",
            "vocabulary": self.vocab,
            "default_smoothing": self.smoothing,
            "entries": self.entries.iter().map(|e| json!({
                "context": e.context,
                "prefix": e.prefix,
                "next": e.next.iter().map(|(t, p)| (t.clone(), json!(p))).collect::<serde_json::Map<_, _>>(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn catalog_rows(&self) -> Vec<(String, String)> {
        self.labels
            .iter()
            .map(|(c, t)| (c.clone(), t.join(" ")))
            .collect()
    }

    /// Linear scan: exact context, then wildcard, then uniform.
    pub fn probability(&self, context: &str, prefix: &[String], token: &str) -> f64 {
        let find = |ctx: &str| {
            self.entries
                .iter()
                .find(|e| e.context == ctx && e.prefix.as_slice() == prefix)
        };
        match find(context).or_else(|| find("*")) {
            Some(e) => e
                .next
                .iter()
                .find(|(t, _)| t == token)
                .map(|(_, p)| *p)
                .unwrap_or(self.smoothing),
            None => 1.0 / self.vocab.len() as f64,
        }
    }

    /// Mean per-token negative log-likelihood of `tokens` after `context`.
    pub fn nll(&self, context: &str, tokens: &[String]) -> f64 {
        let mut total = 0.0;
        for t in 0..tokens.len() {
            total += -self.probability(context, &tokens[..t], &tokens[t]).ln();
        }
        total / tokens.len() as f64
    }

    pub fn l_cond(&self, report: usize, label: usize) -> f64 {
        self.nll(&prompt(&self.reports[report]), &self.labels[label].1)
    }

    pub fn l_prior(&self, label: usize) -> f64 {
        self.nll(&prompt(""), &self.labels[label].1)
    }

    pub fn score(&self, report: usize, label: usize, alpha: f64) -> f64 {
        let (c, p) = (self.l_cond(report, label), self.l_prior(label));
        if !c.is_finite() || (alpha > 0.0 && !p.is_finite()) {
            return f64::NEG_INFINITY;
        }
        if alpha == 0.0 {
            -c
        } else {
            -c + alpha * p
        }
    }

    /// Catalog indices sorted by score descending, index ascending.
    pub fn oracle_order(&self, report: usize, alpha: f64) -> Vec<usize> {
        argsort_desc(
            &(0..self.labels.len())
                .map(|i| self.score(report, i, alpha))
                .collect::<Vec<_>>(),
        )
    }
}

/// Indices by value descending, ties by index ascending, via insertion sort.
pub fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let pos = order
            .iter()
            .position(|&j| values[i] > values[j])
            .unwrap_or(order.len());
        order.insert(pos, i);
    }
    order
}

// ---------------------------------------------------------------------------
// Overlap comparator
// ---------------------------------------------------------------------------

pub fn words(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Overlap ranking of `names` against `phrase`. Rarity sums are kept as
/// integers scaled by lcm(1..=M) so comparisons are exact.
pub fn brute_overlap_order(phrase: &str, names: &[String]) -> Vec<usize> {
    let label_words: Vec<BTreeSet<String>> = names.iter().map(|n| words(n)).collect();
    let mut df: HashMap<&str, u128> = HashMap::new();
    for ws in &label_words {
        for w in ws {
            *df.entry(w.as_str()).or_default() += 1;
        }
    }
    let scale = (1..=names.len() as u128).fold(1u128, |acc, x| acc / gcd(acc, x) * x);
    let phrase_words = words(phrase);
    let keys: Vec<(usize, u128)> = label_words
        .iter()
        .map(|ws| {
            let shared: Vec<&String> = ws.iter().filter(|w| phrase_words.contains(*w)).collect();
            let rarity = shared.iter().map(|w| scale / df[w.as_str()]).sum();
            (shared.len(), rarity)
        })
        .collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    // bubble sort with the key spelled out
    let before = |a: usize, b: usize| {
        keys[a].0 > keys[b].0
            || (keys[a].0 == keys[b].0
                && (keys[a].1 > keys[b].1 || (keys[a].1 == keys[b].1 && a < b)))
    };
    for i in 0..order.len() {
        for j in 0..order.len() - 1 - i {
            if before(order[j + 1], order[j]) {
                order.swap(j, j + 1);
            }
        }
    }
    order
}

/// Random catalog of `m` names over a small word pool with skewed use, plus
/// a random phrase over the same pool and some unseen words.
pub fn random_overlap_case<R: Rng>(rng: &mut R, m: usize) -> (Vec<String>, String) {
    let pool = [
        "acute",
        "chronic",
        "disease",
        "unspecified",
        "fever",
        "cholera",
        "hepatitis",
        "renal",
        "failure",
        "type",
        "2",
        "of",
        "the",
        "lung",
        "heart",
        "syndrome",
    ];
    let pick = |rng: &mut R| {
        // a squared uniform index biases towards the common words at the front
        let u: f64 = rng.random();
        pool[((u * u) * pool.len() as f64) as usize]
    };
    let names = (0..m)
        .map(|_| {
            let n = rng.random_range(1..=4);
            (0..n).map(|_| pick(rng)).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let n = rng.random_range(0..=5);
    let mut phrase_words = Vec::new();
    for _ in 0..n {
        let w = if rng.random_bool(0.15) {
            "zzz"
        } else {
            pick(rng)
        };
        phrase_words.push(if rng.random_bool(0.2) {
            w.to_uppercase()
        } else {
            w.to_string()
        });
    }
    let phrase = phrase_words.join(if rng.random_bool(0.5) { " " } else { ", " });
    (names, phrase)
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

/// `(ranking, gold)` pairs for a random complete-ranking run over `m` labels.
pub fn random_run<R: Rng>(rng: &mut R, m: usize, n: usize) -> Vec<(Vec<String>, String)> {
    (0..n)
        .map(|_| {
            let mut ranking: Vec<String> = (0..m).map(|i| format!("c{i}")).collect();
            for i in (1..m).rev() {
                ranking.swap(i, rng.random_range(0..=i));
            }
            let gold = format!("c{}", rng.random_range(0..m));
            (ranking, gold)
        })
        .collect()
}

pub fn oracle_hit(run: &[(Vec<String>, String)], k: usize) -> f64 {
    let hits = run
        .iter()
        .filter(|(r, g)| r[..k.min(r.len())].contains(g))
        .count();
    100.0 * hits as f64 / run.len() as f64
}

/// Macro-F1 over gold-present classes as an exact fraction `(num, den)`.
pub fn oracle_macro_f1_fraction(run: &[(Vec<String>, String)], k: usize) -> (u128, u128) {
    let classes: BTreeSet<&String> = run.iter().map(|(_, g)| g).collect();
    let mut num = 0u128;
    let mut den = 1u128;
    for c in &classes {
        let (mut tp, mut fp, mut fneg) = (0u128, 0u128, 0u128);
        for (r, g) in run {
            let predicted = r[..k.min(r.len())].contains(c);
            match (predicted, g == *c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        let (a, b) = (2 * tp, 2 * tp + fp + fneg);
        // num/den += a/b
        num = num * b + a * den;
        den *= b;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    let num = num * 100;
    let den = den * classes.len() as u128;
    let g = gcd(num, den);
    (num / g, den / g)
}

// ---------------------------------------------------------------------------
// Random ICD tables
// ---------------------------------------------------------------------------

/// `(source, target, exact, mappable)` rows over small code pools so that
/// duplicates and conflicts are common.
pub fn random_gem_rows<R: Rng>(
    rng: &mut R,
    prefix: &str,
    target_prefix: &str,
) -> Vec<(String, String, bool, bool)> {
    let n = rng.random_range(0..30);
    (0..n)
        .map(|_| {
            (
                format!("{prefix}{}", rng.random_range(0..8)),
                format!("{target_prefix}{}", rng.random_range(0..6)),
                rng.random_bool(0.7),
                rng.random_bool(0.7),
            )
        })
        .collect()
}

pub fn gem_tsv(rows: &[(String, String, bool, bool)]) -> String {
    rows.iter()
        .map(|(s, t, e, m)| format!("{s}\t{t}\t{}\t{}\n", u8::from(*e), u8::from(*m)))
        .collect()
}

/// Exact-and-mappable targets per source, computed directly.
pub fn oracle_targets(rows: &[(String, String, bool, bool)]) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (s, t, e, m) in rows {
        if *e && *m {
            out.entry(s.clone()).or_default().insert(t.clone());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// HTTP stub server
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub body: Vec<u8>,
}

pub type Handler = dyn Fn(&str, &[u8]) -> (u16, String) + Send + Sync;

/// Serves each connection on its own thread with `Connection: close`.
pub struct StubServer {
    pub addr: SocketAddr,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
    pub max_concurrent: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&str, &[u8]) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let max_concurrent = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let requests = requests.clone();
            let max_concurrent = max_concurrent.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (handler, requests, current, max_concurrent) = (
                        handler.clone(),
                        requests.clone(),
                        current.clone(),
                        max_concurrent.clone(),
                    );
                    std::thread::spawn(move || {
                        let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                        max_concurrent.fetch_max(now, Ordering::SeqCst);
                        let _ = serve(stream, &*handler, &requests);
                        current.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            });
        }
        Self {
            addr,
            requests,
            max_concurrent,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn recorded(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(
    stream: TcpStream,
    handler: &Handler,
    requests: &Mutex<Vec<Recorded>>,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("")
        .to_string();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    requests.lock().unwrap().push(Recorded {
        path: path.clone(),
        body: body.clone(),
    });
    let (status, response) = handler(&path, &body);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response}",
        response.len()
    )?;
    stream.flush()
}
