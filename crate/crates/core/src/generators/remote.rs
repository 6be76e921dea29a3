//! HTTP/JSON transport for the generation and scoring contracts.
//!
//! Endpoints:
//!
//! - `POST /propose {problem_id, prefix, n}` → `{steps}`
//! - `POST /rollout {problem_id, prefix}` → `{steps, answer}`
//! - `POST /score {problem_id, prefix}` → `{score}`
//!
//! `prefix` is the list of step tokens from the root. A rollout response
//! lists only the steps appended after the prefix; `answer` is null when the
//! rollout was truncated. Step objects may carry an `answer` field on answer
//! steps. Remote mode is not reproducible: the server draws from its own
//! streams.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{AnswerToken, PartialPath, Problem, Step, StepToken};
use crate::error::{Error, Result};
use crate::generators::{GenerationPolicy, Generator};
use crate::rng::{stream, Stream};
use crate::verifiers::Verifier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposeRequest {
    pub problem_id: u64,
    pub prefix: Vec<StepToken>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireStep {
    pub token: StepToken,
    pub features: Vec<f64>,
    pub is_answer_step: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerToken>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposeResponse {
    pub steps: Vec<WireStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRequest {
    pub problem_id: u64,
    pub prefix: Vec<StepToken>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub steps: Vec<WireStep>,
    pub answer: Option<AnswerToken>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub problem_id: u64,
    pub prefix: Vec<StepToken>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

impl From<&Step> for WireStep {
    fn from(s: &Step) -> Self {
        WireStep { token: s.token, features: s.features.to_vec(), is_answer_step: s.is_answer_step, answer: s.answer }
    }
}

impl TryFrom<WireStep> for Step {
    type Error = Error;

    fn try_from(w: WireStep) -> Result<Step> {
        match (w.is_answer_step, w.answer) {
            (true, Some(a)) => Ok(Step::answer(w.token, w.features, a)),
            (false, None) => Ok(Step::intermediate(w.token, w.features)),
            (true, None) => Err(Error::Generation(format!("answer step {} carries no answer", w.token))),
            (false, Some(_)) => Err(Error::Generation(format!("step {} has an answer but is not an answer step", w.token))),
        }
    }
}

/// Rebuilds the path a token list denotes inside `problem`'s tree.
pub fn path_from_tokens(problem: &Problem, tokens: &[StepToken], t_max: usize) -> Result<PartialPath> {
    let world = &problem.world;
    let mut node = world.root();
    let mut path = PartialPath::root();
    for &t in tokens {
        let step = world.make_step(node, t)?;
        node = world.child(node, t)?;
        path = path.extend(step, t_max)?;
    }
    Ok(path)
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

pub struct RemoteClient {
    base: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteClient {
    pub fn new(base_url: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        RemoteClient { base: base_url.trim_end_matches('/').to_string(), agent, gate: Gate::new(max_in_flight) }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, route: &str, body: &Req) -> std::result::Result<Resp, String> {
        self.gate.run(|| {
            let url = format!("{}/{route}", self.base);
            let mut resp = self.agent.post(&url).send_json(body).map_err(|e| format!("POST {url}: {e}"))?;
            resp.body_mut().read_json::<Resp>().map_err(|e| format!("POST {url}: malformed response: {e}"))
        })
    }
}

/// Generator backed by a remote service.
pub struct RemoteGenerator {
    client: RemoteClient,
    policy: GenerationPolicy,
}

impl RemoteGenerator {
    pub fn new(client: RemoteClient, policy: GenerationPolicy) -> Self {
        RemoteGenerator { client, policy }
    }
}

impl Generator for RemoteGenerator {
    fn policy(&self) -> &GenerationPolicy {
        &self.policy
    }

    fn propose(&self, problem: &Problem, prefix: &PartialPath, n: usize, _rng: &mut Stream) -> Result<Vec<Step>> {
        if prefix.is_finished() {
            return Err(Error::contract("cannot propose steps after a finished path"));
        }
        let req = ProposeRequest { problem_id: problem.id, prefix: prefix.tokens().collect(), n };
        let resp: ProposeResponse = self.client.post("propose", &req).map_err(Error::Generation)?;
        if resp.steps.len() != n {
            return Err(Error::Generation(format!("asked for {n} steps, got {}", resp.steps.len())));
        }
        resp.steps.into_iter().map(Step::try_from).collect()
    }

    fn rollout(&self, problem: &Problem, prefix: &PartialPath, t_max: usize, _rng: &mut Stream) -> Result<PartialPath> {
        if prefix.is_finished() {
            return Err(Error::contract("cannot roll out a finished path"));
        }
        let req = RolloutRequest { problem_id: problem.id, prefix: prefix.tokens().collect() };
        let resp: RolloutResponse = self.client.post("rollout", &req).map_err(Error::Generation)?;
        let mut path = prefix.clone();
        for w in resp.steps {
            path = path.extend(Step::try_from(w)?, t_max).map_err(|e| Error::Generation(e.to_string()))?;
        }
        if path.answer() != resp.answer {
            return Err(Error::Generation("rollout answer disagrees with its final step".into()));
        }
        Ok(if path.is_terminal() { path } else { path.into_truncated() })
    }
}

/// Verifier backed by a remote `/score` endpoint.
pub struct RemoteVerifier {
    client: RemoteClient,
}

impl RemoteVerifier {
    pub fn new(client: RemoteClient) -> Self {
        RemoteVerifier { client }
    }
}

impl Verifier for RemoteVerifier {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<crate::domain::Score> {
        let req = ScoreRequest { problem_id: problem.id, prefix: prefix.tokens().collect() };
        let resp: ScoreResponse = self.client.post("score", &req).map_err(Error::Scoring)?;
        crate::domain::Score::new(resp.score).map_err(|e| Error::Scoring(e.to_string()))
    }
}

/// A minimal HTTP server exposing a local generator and verifier over the
/// wire protocol.
pub struct Server {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    addr: String,
}

struct Backend {
    problems: HashMap<u64, Problem>,
    generator: Arc<dyn Generator>,
    verifier: Option<Arc<dyn Verifier>>,
    t_max: usize,
    seed: u64,
    counter: AtomicU64,
}

impl Server {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves on a
    /// background thread until dropped.
    pub fn spawn(
        addr: &str,
        problems: impl IntoIterator<Item = Problem>,
        generator: Arc<dyn Generator>,
        verifier: Option<Arc<dyn Verifier>>,
        t_max: usize,
        seed: u64,
    ) -> Result<Self> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?);
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Io(std::io::Error::other("server is not bound to an IP address")))?;
        let backend = Backend {
            problems: problems.into_iter().map(|p| (p.id, p)).collect(),
            generator,
            verifier,
            t_max,
            seed,
            counter: AtomicU64::new(0),
        };
        let worker = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            for mut request in worker.incoming_requests() {
                let mut body = String::new();
                let reply = match request.as_reader().read_to_string(&mut body) {
                    Ok(_) => backend.handle(request.url(), &body),
                    Err(e) => Err((400, e.to_string())),
                };
                let (code, text) = match reply {
                    Ok(json) => (200, json),
                    Err((code, msg)) => (code, serde_json::json!({ "error": msg }).to_string()),
                };
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
                let _ = request.respond(tiny_http::Response::from_string(text).with_status_code(code).with_header(header));
            }
        });
        Ok(Server { server, handle: Some(handle), addr: format!("http://{bound}") })
    }

    pub fn url(&self) -> &str {
        &self.addr
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

type Reply = std::result::Result<String, (u16, String)>;

impl Backend {
    fn problem(&self, id: u64) -> std::result::Result<&Problem, (u16, String)> {
        self.problems.get(&id).ok_or((404, format!("unknown problem {id}")))
    }

    fn rng(&self) -> Stream {
        stream(self.seed, &[self.counter.fetch_add(1, Ordering::Relaxed)])
    }

    fn handle(&self, url: &str, body: &str) -> Reply {
        let bad = |e: serde_json::Error| (400, e.to_string());
        let failed = |e: Error| (422, e.to_string());
        match url {
            "/propose" => {
                let req: ProposeRequest = serde_json::from_str(body).map_err(bad)?;
                let q = self.problem(req.problem_id)?;
                let prefix = path_from_tokens(q, &req.prefix, self.t_max).map_err(failed)?;
                let steps = self.generator.propose(q, &prefix, req.n, &mut self.rng()).map_err(failed)?;
                let resp = ProposeResponse { steps: steps.iter().map(WireStep::from).collect() };
                serde_json::to_string(&resp).map_err(|e| (500, e.to_string()))
            }
            "/rollout" => {
                let req: RolloutRequest = serde_json::from_str(body).map_err(bad)?;
                let q = self.problem(req.problem_id)?;
                let prefix = path_from_tokens(q, &req.prefix, self.t_max).map_err(failed)?;
                let done = self.generator.rollout(q, &prefix, self.t_max, &mut self.rng()).map_err(failed)?;
                let resp = RolloutResponse {
                    steps: done.steps()[prefix.len()..].iter().map(WireStep::from).collect(),
                    answer: done.answer(),
                };
                serde_json::to_string(&resp).map_err(|e| (500, e.to_string()))
            }
            "/score" => {
                let req: ScoreRequest = serde_json::from_str(body).map_err(bad)?;
                let q = self.problem(req.problem_id)?;
                let verifier = self.verifier.as_ref().ok_or((404, "no verifier is served".to_string()))?;
                let prefix = path_from_tokens(q, &req.prefix, self.t_max).map_err(failed)?;
                let score = verifier.score(q, &prefix).map_err(failed)?;
                serde_json::to_string(&ScoreResponse { score: score.value() }).map_err(|e| (500, e.to_string()))
            }
            other => Err((404, format!("no route {other}"))),
        }
    }
}
