//! `study-serve` and the terminal study client.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use hierdial::corpus::{load_corpus, ContextClass};
use hierdial_study::server::{serve as serve_http, CreateRequest, Created, StudyApp};
use hierdial_study::{Ack, CandidateSource, CheckpointSource, Choice, ItemView, Protocol, Report, SlotScore, StudyStore, Submission};

use crate::commands::load_checkpoint;
use crate::StudyServeArgs;

pub fn serve(a: &StudyServeArgs, err: &mut dyn Write) -> Result<()> {
    let gen = a.generation.gen_config();
    gen.validate()?;
    let mut models: BTreeMap<String, Arc<dyn CandidateSource>> = BTreeMap::new();
    for spec in &a.models {
        let (name, dir) = match spec.split_once('=') {
            Some((n, d)) => (Some(n.to_string()), d),
            None => (None, spec.as_str()),
        };
        let checkpoint = load_checkpoint(Path::new(dir))?;
        let name = name.unwrap_or_else(|| checkpoint.model.kind().name().to_string());
        if models.contains_key(&name) {
            bail!("two models named {name:?}; use name=dir to tell them apart");
        }
        let source = CheckpointSource { name: name.clone(), checkpoint, config: gen.clone() };
        models.insert(name, Arc::new(source));
    }
    let dialogues = load_corpus(&a.corpus)?;
    let store = StudyStore::open(&a.dir).with_context(|| format!("opening study journal in {}", a.dir.display()))?;
    writeln!(err, "models: {}", models.keys().cloned().collect::<Vec<_>>().join(", "))?;
    let app = Arc::new(StudyApp { store: Mutex::new(store), models, dialogues });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve_http(app, a.ui_dir.clone(), &a.addr, |addr| {
        let _ = writeln!(err, "study service listening on http://{addr}/");
    }))?;
    Ok(())
}

/// What the terminal client asks the server for.
#[derive(Clone, Debug)]
pub struct ClientOptions {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub url: String,
    pub protocol: Protocol,
    pub models: Vec<String>,
    pub items: usize,
    pub seed: u64,
    pub class: Option<ContextClass>,
    pub rater: String,
}

struct Api {
    agent: ureq::Agent,
    base: String,
}

impl Api {
    fn new(url: &str) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { agent, base: url.trim_end_matches('/').to_string() }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        decode(self.agent.get(format!("{}{path}", self.base)).call())
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T> {
        let body = serde_json::to_string(body)?;
        decode(self.agent.post(format!("{}{path}", self.base)).header("content-type", "application/json").send(&body))
    }
}

fn decode<T: DeserializeOwned>(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<T> {
    let mut resp = resp.context("study server unreachable")?;
    let status = resp.status();
    let body = resp.body_mut().read_to_string()?;
    if !status.is_success() {
        let msg = serde_json::from_str::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v["error"].as_str().map(str::to_string))
            .unwrap_or(body);
        bail!("server answered {status}: {msg}");
    }
    serde_json::from_str(&body).context("unexpected response from study server")
}

fn read_answer(input: &mut dyn BufRead, out: &mut dyn Write, prompt: &str) -> Result<String> {
    write!(out, "{prompt}")?;
    out.flush()?;
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        bail!("input ended before the session was complete");
    }
    Ok(line.trim().to_string())
}

fn render(v: &ItemView, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "\n--- item {}/{} ---", v.index + 1, v.total)?;
    for turn in &v.context {
        writeln!(out, "  → {turn}")?;
    }
    if let Some(g) = &v.ground_truth {
        writeln!(out, "ground truth: {g}")?;
    }
    for c in &v.candidates {
        writeln!(out, "[{}] {}", c.slot, c.text)?;
    }
    Ok(())
}

fn parse_scores(answer: &str) -> Option<(u8, u8)> {
    let mut it = answer.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
    let f: u8 = it.next()?.parse().ok()?;
    let r: u8 = it.next()?.parse().ok()?;
    (it.next().is_none() && f <= 4 && r <= 4).then_some((f, r))
}

fn ask(v: &ItemView, rater: &str, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<Submission> {
    match v.protocol {
        Protocol::Rating => {
            let mut scores = Vec::with_capacity(v.candidates.len());
            for c in &v.candidates {
                loop {
                    let answer = read_answer(input, out, &format!("[{}] fluency relevancy (0-4 each): ", c.slot))?;
                    match parse_scores(&answer) {
                        Some((fluency, relevancy)) => {
                            scores.push(SlotScore { slot: c.slot.clone(), fluency, relevancy });
                            break;
                        }
                        None => writeln!(out, "please give two whole numbers from 0 to 4, e.g. `3 4`")?,
                    }
                }
            }
            Ok(Submission::Rating { rater: rater.to_string(), scores })
        }
        Protocol::Preference => loop {
            let answer = read_answer(input, out, "better response? 1, 2 or n (neither): ")?;
            let choice = match answer.to_lowercase().as_str() {
                "1" => Choice::First,
                "2" => Choice::Second,
                "n" | "neither" => Choice::Neither,
                _ => {
                    writeln!(out, "please answer 1, 2 or n")?;
                    continue;
                }
            };
            break Ok(Submission::Preference { rater: rater.to_string(), choice });
        },
    }
}

/// Creates a session on the server, walks through every item reading
/// answers from `input`, and prints and returns the final report.
pub fn terminal_study(opts: &ClientOptions, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<Report> {
    let api = Api::new(&opts.url);
    let req = CreateRequest {
        protocol: opts.protocol,
        models: opts.models.clone(),
        items: opts.items,
        seed: opts.seed,
        class: opts.class,
    };
    let created: Created = api.post("/sessions", &req)?;
    writeln!(out, "session {} with {} items", created.id, created.total)?;
    let mut next = Some(created.first);
    while let Some(view) = next {
        render(&view, out)?;
        let sub = ask(&view, &opts.rater, input, out)?;
        let ack: Ack = api.post(&format!("/sessions/{}/items/{}", created.id, view.index), &sub)?;
        next = if ack.done { None } else { ack.next };
    }
    let report: Report = api.get(&format!("/sessions/{}/report", created.id))?;
    let table = match &report {
        Report::Rating { table, .. } | Report::Preference { table, .. } => table,
    };
    writeln!(out, "\n{table}")?;
    Ok(report)
}
