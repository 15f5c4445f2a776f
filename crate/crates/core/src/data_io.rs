//! File formats: corpora (JSON lines), checkpoints (binary), predictions (TSV).
//!
//! # Corpus
//!
//! UTF-8, one JSON object per line. The first line is a header, every other
//! line is one group:
//!
//! ```text
//! {"llda_corpus":1,"k":3,"payload":"token","vocab_size":5,"vocab":["a","b","c","d","e"]}
//! {"id":"doc0","label":2,"items":[0,4,4,1]}
//! {"id":"doc1","items":[3]}
//! ```
//!
//! Dense corpora use `"payload":"dense","dim":E` and items as arrays of
//! numbers. A ground-truth sidecar is a corpus file whose group lines also
//! carry `"pi"` (true topic proportions) and `"topics"` (true item topics).
//!
//! # Checkpoint
//!
//! Little-endian throughout:
//!
//! ```text
//! "LLDA" | u32 version | u64 body length | section*
//! section = u32 name length | name (UTF-8) | u64 payload length | payload
//! ```
//!
//! Sections `hyper`, `encoder` and `provenance` are required, `regularizer`
//! is optional. All reals are stored as `f64` bit patterns.
//!
//! # Predictions
//!
//! Tab-separated with header `id  label  p_group  p_items`; probability
//! vectors are comma-separated with 6 decimals, item vectors are separated by
//! `;`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{Activation, EncoderParams, FixedLogLik, Item, LayerShape, Mlp, Table};
use crate::error::{Error, Result};
use crate::math::PositiveVector;
use crate::mean_field::{Group, HyperParams};
use crate::regularizer::RegularizerState;
use crate::scalar::Scalar;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LLDA";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Kind of item payload shared by every item of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadSpec {
    Dense { dim: usize },
    Token { vocab_size: usize },
}

/// Validated collection of groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub groups: Vec<Group<T>>,
    /// Number of topics (and classes).
    pub k: usize,
    pub payload: PayloadSpec,
    pub vocab: Option<Vec<String>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(
        groups: Vec<Group<T>>,
        k: usize,
        payload: PayloadSpec,
        vocab: Option<Vec<String>>,
    ) -> Result<Self> {
        let corpus = Corpus {
            groups,
            k,
            payload,
            vocab,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("corpus needs K >= 1"));
        }
        if self.groups.is_empty() {
            return Err(Error::contract("corpus has no groups"));
        }
        if let (Some(vocab), PayloadSpec::Token { vocab_size }) = (&self.vocab, self.payload) {
            if vocab.len() != vocab_size {
                return Err(Error::contract("vocabulary length differs from vocab_size"));
            }
        }
        for g in &self.groups {
            validate_group(g, self.k, self.payload).map_err(Error::Contract)?;
        }
        Ok(())
    }

    pub fn num_items(&self) -> usize {
        self.groups.iter().map(|g| g.items.len()).sum()
    }

    /// Human-readable rendering of an item.
    pub fn describe_item(&self, item: &Item<T>) -> String {
        match item {
            Item::Token(t) => match &self.vocab {
                Some(v) => v[*t].clone(),
                None => t.to_string(),
            },
            Item::Dense(x) => {
                let head: Vec<String> = x.iter().take(3).map(|v| format!("{:.3}", v.as_f64())).collect();
                let more = if x.len() > 3 { ",…" } else { "" };
                format!("[{}{}]", head.join(","), more)
            }
        }
    }
}

fn validate_group<T: Scalar>(
    g: &Group<T>,
    k: usize,
    payload: PayloadSpec,
) -> std::result::Result<(), String> {
    if g.id.contains(['\t', '\n', '\r']) {
        return Err(format!("group id {:?} contains a tab or newline", g.id));
    }
    if g.items.is_empty() {
        return Err(format!("group '{}' has no items", g.id));
    }
    if let Some(c) = g.label {
        if c >= k {
            return Err(format!("group '{}' has label {c} but K = {k}", g.id));
        }
    }
    for (n, item) in g.items.iter().enumerate() {
        match (item, payload) {
            (Item::Token(t), PayloadSpec::Token { vocab_size }) => {
                if *t >= vocab_size {
                    return Err(format!(
                        "token {t} (item {n}) out of range for vocab_size {vocab_size}"
                    ));
                }
            }
            (Item::Dense(x), PayloadSpec::Dense { dim }) => {
                if x.len() != dim {
                    return Err(format!("item {n} has dimension {}, expected {dim}", x.len()));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(format!("item {n} has a non-finite embedding value"));
                }
            }
            (item, _) => {
                return Err(format!(
                    "item {n} is {} but the corpus payload differs",
                    item.kind()
                ));
            }
        }
    }
    Ok(())
}

/// Latent variables of a generated group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTruth {
    pub pi: Vec<f64>,
    pub topics: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    llda_corpus: u32,
    k: usize,
    payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ItemsRecord {
    Tokens(Vec<usize>),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    items: ItemsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topics: Option<Vec<usize>>,
}

fn header_for<T: Scalar>(corpus: &Corpus<T>) -> HeaderRecord {
    let (payload, vocab_size, dim) = match corpus.payload {
        PayloadSpec::Token { vocab_size } => ("token", Some(vocab_size), None),
        PayloadSpec::Dense { dim } => ("dense", None, Some(dim)),
    };
    HeaderRecord {
        llda_corpus: CORPUS_FORMAT_VERSION,
        k: corpus.k,
        payload: payload.into(),
        vocab_size,
        dim,
        vocab: corpus.vocab.clone(),
    }
}

fn group_record<T: Scalar>(g: &Group<T>, truth: Option<&GroupTruth>) -> GroupRecord {
    let items = match g.items.first() {
        Some(Item::Dense(_)) => ItemsRecord::Dense(
            g.items
                .iter()
                .map(|it| match it {
                    Item::Dense(x) => x.iter().map(|v| v.as_f64()).collect(),
                    Item::Token(_) => unreachable!("validated homogeneous"),
                })
                .collect(),
        ),
        _ => ItemsRecord::Tokens(
            g.items
                .iter()
                .map(|it| match it {
                    Item::Token(t) => *t,
                    Item::Dense(_) => unreachable!("validated homogeneous"),
                })
                .collect(),
        ),
    };
    GroupRecord {
        id: g.id.clone(),
        label: g.label,
        items,
        pi: truth.map(|t| t.pi.clone()),
        topics: truth.map(|t| t.topics.clone()),
    }
}

/// Serializes a corpus (and optionally its ground truth) to JSON lines.
pub fn corpus_to_string<T: Scalar>(corpus: &Corpus<T>, truth: Option<&[GroupTruth]>) -> Result<String> {
    if let Some(t) = truth {
        if t.len() != corpus.groups.len() {
            return Err(Error::contract("one truth record per group is required"));
        }
    }
    let mut out = serde_json::to_string(&header_for(corpus)).expect("header serializes");
    out.push('\n');
    for (d, g) in corpus.groups.iter().enumerate() {
        let rec = group_record(g, truth.map(|t| &t[d]));
        out.push_str(&serde_json::to_string(&rec).expect("group serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_corpus<T: Scalar>(path: &Path, corpus: &Corpus<T>) -> Result<()> {
    write_atomic(path, corpus_to_string(corpus, None)?.as_bytes())
}

/// Writes a ground-truth sidecar: the corpus plus `pi` and `topics` per group.
pub fn save_truth<T: Scalar>(path: &Path, corpus: &Corpus<T>, truth: &[GroupTruth]) -> Result<()> {
    write_atomic(path, corpus_to_string(corpus, Some(truth))?.as_bytes())
}

fn parse_corpus<T: Scalar>(path: &Path, text: &str) -> Result<(Corpus<T>, Vec<Option<GroupTruth>>)> {
    let fmt = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| fmt(1, "empty file; expected a corpus header".into()))?;
    let header: HeaderRecord =
        serde_json::from_str(htext).map_err(|e| fmt(hline, format!("invalid header: {e}")))?;
    if header.llda_corpus != CORPUS_FORMAT_VERSION {
        return Err(fmt(
            hline,
            format!("unsupported corpus version {}", header.llda_corpus),
        ));
    }
    if header.k == 0 {
        return Err(fmt(hline, "k must be positive".into()));
    }
    let payload = match (header.payload.as_str(), header.vocab_size, header.dim) {
        ("token", Some(v), None) if v > 0 => PayloadSpec::Token { vocab_size: v },
        ("dense", None, Some(d)) if d > 0 => PayloadSpec::Dense { dim: d },
        _ => {
            return Err(fmt(
                hline,
                "header needs payload \"token\" with vocab_size or \"dense\" with dim".into(),
            ))
        }
    };
    if let (Some(vocab), PayloadSpec::Token { vocab_size }) = (&header.vocab, payload) {
        if vocab.len() != vocab_size {
            return Err(fmt(hline, "vocab length differs from vocab_size".into()));
        }
    }
    let mut groups = Vec::new();
    let mut truth = Vec::new();
    for (ln, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let rec: GroupRecord = serde_json::from_str(l).map_err(|e| fmt(ln, e.to_string()))?;
        let items: Vec<Item<T>> = match (rec.items, payload) {
            (ItemsRecord::Tokens(t), PayloadSpec::Token { .. }) => t.into_iter().map(Item::Token).collect(),
            (ItemsRecord::Dense(x), PayloadSpec::Dense { .. }) => {
                if x.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(fmt(ln, "non-finite embedding value".into()));
                }
                x.into_iter()
                    .map(|row| Item::Dense(row.into_iter().map(T::lit).collect()))
                    .collect()
            }
            (ItemsRecord::Tokens(t), PayloadSpec::Dense { .. }) if t.is_empty() => Vec::new(),
            _ => return Err(fmt(ln, "item payload kind does not match the header".into())),
        };
        let group = Group {
            id: rec.id,
            items,
            label: rec.label,
        };
        validate_group(&group, header.k, payload).map_err(|m| fmt(ln, m))?;
        let t = match (rec.pi, rec.topics) {
            (Some(pi), Some(topics)) => {
                if pi.len() != header.k
                    || topics.len() != group.items.len()
                    || topics.iter().any(|t| *t >= header.k)
                {
                    return Err(fmt(ln, "ground truth does not match the group".into()));
                }
                Some(GroupTruth { pi, topics })
            }
            (None, None) => None,
            _ => return Err(fmt(ln, "ground truth needs both pi and topics".into())),
        };
        groups.push(group);
        truth.push(t);
    }
    if groups.is_empty() {
        return Err(fmt(1, "corpus has no groups".into()));
    }
    let corpus = Corpus {
        groups,
        k: header.k,
        payload,
        vocab: header.vocab,
    };
    Ok((corpus, truth))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_corpus<T: Scalar>(path: &Path) -> Result<Corpus<T>> {
    Ok(parse_corpus(path, &read_text(path)?)?.0)
}

/// Loads a ground-truth sidecar; every group must carry `pi` and `topics`.
pub fn load_truth<T: Scalar>(path: &Path) -> Result<(Corpus<T>, Vec<GroupTruth>)> {
    let (corpus, truth) = parse_corpus(path, &read_text(path)?)?;
    let truth = truth
        .into_iter()
        .enumerate()
        .map(|(d, t)| {
            t.ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                line: d + 2,
                msg: "missing ground truth".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((corpus, truth))
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: u64,
    pub mode: String,
}

/// Everything needed to run inference with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: HyperParams<f64>,
    pub encoder: EncoderParams<f64>,
    pub regularizer: Option<RegularizerState<f64>>,
    pub provenance: Provenance,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.0.extend_from_slice(v);
    }
    fn section(&mut self, name: &str, payload: Writer) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.len(payload.0.len());
        self.0.extend_from_slice(&payload.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Integrity(format!("{} truncated", self.what)));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|n| *n <= self.buf.len())
            .ok_or_else(|| Error::Integrity(format!("{}: length {n} exceeds remaining data", self.what)))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n.checked_mul(8).is_none_or(|b| b > self.buf.len()) {
            return Err(Error::Integrity(format!(
                "{}: array length {n} exceeds data",
                self.what
            )));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len()
            )))
        }
    }
}

const KIND_MLP: u8 = 0;
const KIND_TABLE: u8 = 1;
const KIND_FIXED: u8 = 2;

fn encode_hyper(h: &HyperParams<f64>) -> Writer {
    let mut w = Writer::default();
    w.f64s(h.alpha.as_slice());
    w.f64(h.lambda);
    w.f64(h.gamma);
    w.u64(h.n_iter as u64);
    w.f64(h.rho);
    w
}

fn encode_encoder(e: &EncoderParams<f64>) -> Writer {
    let mut w = Writer::default();
    match e {
        EncoderParams::Mlp(m) => {
            w.u8(KIND_MLP);
            w.u32(m.layers().len() as u32);
            for l in m.layers() {
                w.u64(l.input as u64);
                w.u64(l.output as u64);
                w.u8(l.activation.code());
            }
            w.f64s(e.params());
        }
        EncoderParams::Table(t) => {
            w.u8(KIND_TABLE);
            w.u64(t.topics() as u64);
            w.u64(t.vocab_size() as u64);
            w.f64s(e.params());
        }
        EncoderParams::FixedLogLik(f) => {
            w.u8(KIND_FIXED);
            w.u64(f.topics() as u64);
            w.u64(f.vocab_size() as u64);
            let beta: Vec<f64> = (0..f.topics())
                .flat_map(|k| (0..f.vocab_size()).map(move |v| (k, v)))
                .map(|(k, v)| f.beta(k, v))
                .collect();
            w.f64s(&beta);
        }
    }
    w
}

fn encode_regularizer(r: &RegularizerState<f64>) -> Writer {
    let mut w = Writer::default();
    match r.ema() {
        Some(e) => {
            w.u8(1);
            w.f64s(e);
        }
        None => w.u8(0),
    }
    w.u64(r.items_seen());
    w.f64(r.rho());
    w
}

fn encode_provenance(p: &Provenance) -> Writer {
    let mut w = Writer::default();
    w.u64(p.seed);
    w.u64(p.epochs);
    w.bytes(p.mode.as_bytes());
    w
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let mut body = Writer::default();
    body.section("hyper", encode_hyper(&cp.hyper));
    body.section("encoder", encode_encoder(&cp.encoder));
    if let Some(r) = &cp.regularizer {
        body.section("regularizer", encode_regularizer(r));
    }
    body.section("provenance", encode_provenance(&cp.provenance));
    let mut out = Writer::default();
    out.0.extend_from_slice(CHECKPOINT_MAGIC);
    out.u32(CHECKPOINT_VERSION);
    out.len(body.0.len());
    out.0.extend_from_slice(&body.0);
    out.0
}

fn bad(e: Error) -> Error {
    Error::Integrity(format!("inconsistent section contents: {e}"))
}

fn decode_hyper(mut r: Reader) -> Result<HyperParams<f64>> {
    let alpha = PositiveVector::new(r.f64s()?).map_err(bad)?;
    let hyper = HyperParams {
        alpha,
        lambda: r.f64()?,
        gamma: r.f64()?,
        n_iter: r.u64()? as usize,
        rho: r.f64()?,
    };
    r.finish()?;
    hyper.validate().map_err(bad)?;
    Ok(hyper)
}

fn decode_encoder(mut r: Reader) -> Result<EncoderParams<f64>> {
    let enc = match r.u8()? {
        KIND_MLP => {
            let n = r.u32()? as usize;
            let mut layers = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let input = r.u64()? as usize;
                let output = r.u64()? as usize;
                let activation = Activation::from_code(r.u8()?)
                    .ok_or_else(|| Error::Integrity("unknown activation code".into()))?;
                layers.push(LayerShape {
                    input,
                    output,
                    activation,
                });
            }
            EncoderParams::Mlp(Mlp::new(layers, r.f64s()?).map_err(bad)?)
        }
        KIND_TABLE => {
            let k = r.u64()? as usize;
            let v = r.u64()? as usize;
            EncoderParams::Table(Table::new(k, v, r.f64s()?).map_err(bad)?)
        }
        KIND_FIXED => {
            let k = r.u64()? as usize;
            let v = r.u64()? as usize;
            EncoderParams::FixedLogLik(FixedLogLik::new(k, v, r.f64s()?).map_err(bad)?)
        }
        other => return Err(Error::Integrity(format!("unknown encoder kind {other}"))),
    };
    r.finish()?;
    Ok(enc)
}

fn decode_regularizer(mut r: Reader) -> Result<RegularizerState<f64>> {
    let ema = match r.u8()? {
        0 => None,
        1 => Some(r.f64s()?),
        other => return Err(Error::Integrity(format!("bad regularizer flag {other}"))),
    };
    let seen = r.u64()?;
    let rho = r.f64()?;
    r.finish()?;
    RegularizerState::from_parts(ema, seen, rho).map_err(bad)
}

fn decode_provenance(mut r: Reader) -> Result<Provenance> {
    let seed = r.u64()?;
    let epochs = r.u64()?;
    let mode = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::Integrity("provenance mode is not UTF-8".into()))?;
    r.finish()?;
    Ok(Provenance { seed, epochs, mode })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader {
        buf: bytes,
        what: "checkpoint header",
    };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Integrity("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let body_len = r.u64()?;
    if body_len != r.buf.len() as u64 {
        return Err(Error::Integrity(format!(
            "body length {body_len} but {} bytes present",
            r.buf.len()
        )));
    }
    r.what = "checkpoint body";
    let (mut hyper, mut encoder, mut regularizer, mut provenance) = (None, None, None, None);
    while !r.buf.is_empty() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Integrity("section name is not UTF-8".into()))?
            .to_owned();
        let payload = r.bytes()?;
        let section = Reader {
            buf: payload,
            what: "checkpoint section",
        };
        match name.as_str() {
            "hyper" => hyper = Some(decode_hyper(section)?),
            "encoder" => encoder = Some(decode_encoder(section)?),
            "regularizer" => regularizer = Some(decode_regularizer(section)?),
            "provenance" => provenance = Some(decode_provenance(section)?),
            other => log::debug!("skipping unknown checkpoint section '{other}'"),
        }
    }
    let missing = |s: &str| Error::Integrity(format!("missing section '{s}'"));
    let hyper = hyper.ok_or_else(|| missing("hyper"))?;
    let encoder = encoder.ok_or_else(|| missing("encoder"))?;
    if hyper.num_topics() != encoder.num_topics() {
        return Err(Error::Integrity(
            "hyperparameters and encoder disagree on K".into(),
        ));
    }
    Ok(Checkpoint {
        hyper,
        encoder,
        regularizer,
        provenance: provenance.ok_or_else(|| missing("provenance"))?,
    })
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(cp))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub id: String,
    pub label: usize,
    pub p_group: Vec<f64>,
    pub p_items: Vec<Vec<f64>>,
}

pub const PREDICTIONS_HEADER: &str = "id\tlabel\tp_group\tp_items";

fn join_probs(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

pub fn format_predictions(preds: &[GroupPrediction]) -> String {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for p in preds {
        let items: Vec<String> = p.p_items.iter().map(|v| join_probs(v)).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.id,
            p.label,
            join_probs(&p.p_group),
            items.join(";")
        ));
    }
    out
}

pub fn write_predictions(path: &Path, preds: &[GroupPrediction]) -> Result<()> {
    write_atomic(path, format_predictions(preds).as_bytes())
}
