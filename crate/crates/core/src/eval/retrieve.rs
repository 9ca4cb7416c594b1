//! Retrievers: the built-in embedding retriever and adapters for external
//! systems speaking `{question, top_k}` -> `{doc_ids, scores}`.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::EvalError;
use crate::gateway::{EmbeddingRequest, Gateway, HttpTransport};
use crate::model::Document;

const EMBED_BATCH: usize = 64;

/// Ranked documents. Scores are non-increasing and parallel to `doc_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RetrievedWire")]
pub struct RetrievedSet {
    doc_ids: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct RetrievedWire {
    doc_ids: Vec<String>,
    scores: Vec<f64>,
}

impl TryFrom<RetrievedWire> for RetrievedSet {
    type Error = EvalError;

    fn try_from(w: RetrievedWire) -> Result<Self, Self::Error> {
        RetrievedSet::new(w.doc_ids, w.scores)
    }
}

impl RetrievedSet {
    pub fn new(doc_ids: Vec<String>, scores: Vec<f64>) -> Result<Self, EvalError> {
        if doc_ids.len() != scores.len() {
            return Err(EvalError::InvalidRetrievedSet(format!(
                "{} doc ids but {} scores",
                doc_ids.len(),
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(EvalError::InvalidRetrievedSet("non-finite score".into()));
        }
        if scores.windows(2).any(|w| w[1] > w[0]) {
            return Err(EvalError::InvalidRetrievedSet("scores increase".into()));
        }
        Ok(Self { doc_ids, scores })
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }
}

pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;
    fn retrieve(&self, question: &str, top_k: usize) -> Result<RetrievedSet, EvalError>;
}

/// Text embedded for a document: title and body, or the body alone when
/// the title is empty.
pub fn document_text(doc: &Document) -> String {
    if doc.title.trim().is_empty() {
        doc.body.clone()
    } else {
        format!("{}\n{}", doc.title.trim(), doc.body)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Ranks `vectors` by cosine similarity to `query`, ties in input order.
pub fn rank_by_cosine(
    query: &[f64],
    ids: &[String],
    vectors: &[Vec<f64>],
    top_k: usize,
) -> Result<RetrievedSet, EvalError> {
    if top_k > ids.len() {
        return Err(EvalError::TopKTooLarge {
            top_k,
            corpus: ids.len(),
        });
    }
    let mut scored: Vec<(usize, f64)> = vectors
        .iter()
        .map(|v| cosine(query, v))
        .enumerate()
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(top_k);
    RetrievedSet::new(
        scored.iter().map(|(i, _)| ids[*i].clone()).collect(),
        scored.iter().map(|(_, s)| *s).collect(),
    )
}

/// Cosine-similarity retriever over a pre-embedded corpus.
pub struct SemanticIndex {
    name: String,
    gateway: Gateway,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl SemanticIndex {
    pub fn build(
        name: impl Into<String>,
        corpus: &[Document],
        gateway: Gateway,
    ) -> Result<Self, EvalError> {
        if corpus.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        let texts: Vec<String> = corpus.iter().map(document_text).collect();
        let mut vectors = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(EMBED_BATCH) {
            vectors.extend(gateway.embed(&EmbeddingRequest::new(chunk.iter().cloned()))?);
        }
        Ok(Self {
            name: name.into(),
            gateway,
            ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
            vectors,
        })
    }
}

impl Retriever for SemanticIndex {
    fn name(&self) -> &str {
        &self.name
    }

    fn retrieve(&self, question: &str, top_k: usize) -> Result<RetrievedSet, EvalError> {
        let q = self.gateway.embed(&EmbeddingRequest::new([question]))?;
        rank_by_cosine(&q[0], &self.ids, &self.vectors, top_k)
    }
}

/// One-shot semantic retrieval over `corpus`.
pub fn semantic_retrieve(
    question: &str,
    corpus: &[Document],
    top_k: usize,
    gateway: &Gateway,
) -> Result<RetrievedSet, EvalError> {
    if top_k > corpus.len() {
        return Err(EvalError::TopKTooLarge {
            top_k,
            corpus: corpus.len(),
        });
    }
    SemanticIndex::build("semantic", corpus, gateway.clone())?.retrieve(question, top_k)
}

/// Writes the corpus as JSONL `Document` records for external adapters.
pub fn write_corpus(corpus: &[Document], path: &Path) -> Result<(), EvalError> {
    let mut out = String::new();
    for d in corpus {
        out.push_str(&serde_json::to_string(d).map_err(|e| EvalError::Adapter(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| EvalError::Adapter(format!("{}: {e}", path.display())))
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// External retriever run as a subprocess speaking NDJSON on stdio: one
/// request line in, one response line out. `{corpus}` in the arguments is
/// replaced by the corpus JSONL path.
pub struct StdioRetriever {
    name: String,
    io: Mutex<ChildIo>,
}

impl StdioRetriever {
    pub fn spawn(
        name: impl Into<String>,
        command: &[String],
        corpus_path: &Path,
    ) -> Result<Self, EvalError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| EvalError::Adapter("empty command".into()))?;
        let corpus = corpus_path.display().to_string();
        let mut child = Command::new(program)
            .args(args.iter().map(|a| a.replace("{corpus}", &corpus)))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EvalError::Adapter(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            name: name.into(),
            io: Mutex::new(ChildIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl Drop for StdioRetriever {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

impl Retriever for StdioRetriever {
    fn name(&self) -> &str {
        &self.name
    }

    fn retrieve(&self, question: &str, top_k: usize) -> Result<RetrievedSet, EvalError> {
        let mut io = self.io.lock().expect("adapter lock");
        let line = json!({ "question": question, "top_k": top_k }).to_string();
        writeln!(io.stdin, "{line}")
            .and_then(|_| io.stdin.flush())
            .map_err(|e| EvalError::Adapter(e.to_string()))?;
        let mut reply = String::new();
        let n = io
            .stdout
            .read_line(&mut reply)
            .map_err(|e| EvalError::Adapter(e.to_string()))?;
        if n == 0 {
            return Err(EvalError::Adapter(format!(
                "retriever `{}` closed its output",
                self.name
            )));
        }
        serde_json::from_str(&reply)
            .map_err(|e| EvalError::Adapter(format!("retriever `{}`: {e}", self.name)))
    }
}

/// External retriever behind an HTTP endpoint.
pub struct HttpRetriever {
    name: String,
    url: String,
    timeout: Duration,
    transport: Arc<dyn HttpTransport>,
}

impl HttpRetriever {
    pub fn new(
        name: impl Into<String>,
        url: impl Into<String>,
        timeout: Duration,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            name: name.into(),
            url: url.into(),
            timeout,
            transport,
        }
    }
}

impl Retriever for HttpRetriever {
    fn name(&self) -> &str {
        &self.name
    }

    fn retrieve(&self, question: &str, top_k: usize) -> Result<RetrievedSet, EvalError> {
        let body = json!({ "question": question, "top_k": top_k });
        let resp = self
            .transport
            .post_json(&self.url, None, &body, self.timeout)
            .map_err(EvalError::Adapter)?;
        if !(200..300).contains(&resp.status) {
            return Err(EvalError::Adapter(format!(
                "retriever `{}`: HTTP {}",
                self.name, resp.status
            )));
        }
        serde_json::from_value(resp.body)
            .map_err(|e| EvalError::Adapter(format!("retriever `{}`: {e}", self.name)))
    }
}

/// Where an external retriever lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrieverSpec {
    Semantic,
    Stdio {
        command: Vec<String>,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl RetrieverSpec {
    /// Builds the retriever; external adapters get the corpus written to
    /// `work_dir/corpus.jsonl`.
    pub fn build(
        &self,
        name: &str,
        corpus: &[Document],
        embedder: &Gateway,
        work_dir: &Path,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Box<dyn Retriever>, EvalError> {
        Ok(match self {
            RetrieverSpec::Semantic => {
                Box::new(SemanticIndex::build(name, corpus, embedder.clone())?)
            }
            RetrieverSpec::Stdio { command } => {
                let path: PathBuf = work_dir.join("corpus.jsonl");
                write_corpus(corpus, &path)?;
                Box::new(StdioRetriever::spawn(name, command, &path)?)
            }
            RetrieverSpec::Http { url, timeout_ms } => Box::new(HttpRetriever::new(
                name,
                url.clone(),
                Duration::from_millis(*timeout_ms),
                transport,
            )),
        })
    }
}
