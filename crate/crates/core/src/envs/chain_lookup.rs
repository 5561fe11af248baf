use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{digest_bytes, ConfigError, LatencyDist, ResponseModel, ScriptedSpeculator, SpeculatorConfig};
use crate::call::{ActionValue, CallSpec};
use crate::env::{Environment, GuessSource, Handler, HandlerRegistry};
use crate::error::HandlerError;
use crate::safety::SafetyClass;
use crate::seed::SeedPath;

const ADJECTIVES: [&str; 20] = [
    "amber", "boreal", "cobalt", "dusky", "eastern", "fallow", "granite", "hollow", "ivory", "jade", "kestrel",
    "lunar", "molten", "northern", "opal", "pale", "quiet", "russet", "silver", "tidal",
];
const NOUNS: [&str; 20] = [
    "abbey",
    "bridge",
    "college",
    "delta",
    "estate",
    "foundry",
    "gallery",
    "harbor",
    "institute",
    "junction",
    "keep",
    "library",
    "mill",
    "observatory",
    "press",
    "quarry",
    "road",
    "society",
    "tower",
    "works",
];
const RELATIONS: [&str; 8] =
    ["founded", "advised", "absorbed", "succeeded", "funded", "trained", "designed", "renamed"];

/// Lower-case and collapse runs of whitespace. Nothing else: synonyms and
/// word order still distinguish queries.
pub fn normalize_query(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainLookupConfig {
    pub questions: usize,
    /// Searches per question; each search reveals the next entity.
    pub hops: usize,
    /// Insert a `lookup` of the final page's relation before `finish`.
    pub lookup_final: bool,
    pub search_latency: LatencyDist,
    pub lookup_latency: LatencyDist,
    pub finish_latency: LatencyDist,
    pub speculator: SpeculatorConfig,
}

impl Default for ChainLookupConfig {
    fn default() -> Self {
        Self {
            questions: 16,
            hops: 2,
            lookup_final: false,
            search_latency: LatencyDist::Exponential { rate: 1.0 },
            lookup_latency: LatencyDist::Exponential { rate: 2.0 },
            finish_latency: LatencyDist::Exponential { rate: 4.0 },
            speculator: SpeculatorConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Page {
    title: String,
    next: String,
    relation: String,
}

impl Page {
    fn text(&self) -> String {
        format!("{} is linked to {} through {}.", self.title, self.next, self.relation)
    }

    fn value(&self) -> ActionValue {
        ActionValue::new(json!({ "title": self.title, "text": self.text() }))
    }
}

/// The entity named after "is linked to" in a search result.
fn linked_entity(action: &ActionValue) -> Option<String> {
    let text = action.0.get("text")?.as_str()?;
    let rest = text.split_once(" is linked to ")?.1;
    Some(rest.split_once(" through ")?.0.to_owned())
}

struct Kb {
    /// normalized title -> page
    pages: BTreeMap<String, Page>,
    /// chain entity names per question, `hops + 1` each
    chains: Vec<Vec<String>>,
    entities: Vec<String>,
}

impl Kb {
    fn respond(&self, call: &CallSpec) -> Result<ActionValue, HandlerError> {
        let params = call.params_value();
        let field = |k: &str| params.get(k).and_then(Value::as_str).unwrap_or_default().to_owned();
        match call.handler_id() {
            "search" => Ok(match self.pages.get(&field("query")) {
                Some(p) => p.value(),
                None => ActionValue::new(json!({ "title": Value::Null, "text": "no results" })),
            }),
            "lookup" => {
                let page = self.pages.get(&field("title"));
                let hit = page.filter(|_| field("keyword") == "relation").map(|p| p.relation.clone());
                Ok(ActionValue::new(json!({ "keyword": field("keyword"), "result": hit })))
            }
            "finish" => Ok(ActionValue::new(json!({ "accepted": true }))),
            other => Err(HandlerError::new(other, "unknown tool")),
        }
    }
}

struct KbHandler {
    kb: Arc<Kb>,
    latency: LatencyDist,
}

impl Handler for KbHandler {
    fn invoke(&self, call: &CallSpec) -> Result<ActionValue, HandlerError> {
        self.kb.respond(call)
    }

    fn latency(&self, _call: &CallSpec, rng: &mut dyn RngCore) -> f64 {
        self.latency.sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ChainState {
    /// Questions finished so far; the active question is `asked % questions`.
    pub asked: usize,
    pub hop: usize,
    /// Entity named by the last search result.
    pub next: Option<String>,
    pub title: Option<String>,
    pub relation: Option<String>,
    pub looked_up: bool,
    pub answers: Vec<String>,
}

struct KbModel {
    kb: Arc<Kb>,
}

impl ResponseModel<ChainState> for KbModel {
    fn truth(&self, _state: &ChainState, call: &CallSpec) -> Option<ActionValue> {
        self.kb.respond(call).ok()
    }

    fn decoy(&self, _state: &ChainState, call: &CallSpec, rng: &mut dyn RngCore) -> ActionValue {
        match call.handler_id() {
            "search" => {
                let title = call.params_value().get("query").and_then(Value::as_str).unwrap_or_default().to_owned();
                let truth = self.kb.pages.get(&title).map(|p| p.next.clone());
                // Half the decoys keep the right words in the wrong order.
                let next = match truth {
                    Some(t) if rng.random_bool(0.5) => t.split_whitespace().rev().collect::<Vec<_>>().join(" "),
                    _ => self.kb.entities[rng.random_range(0..self.kb.entities.len())].clone(),
                };
                let relation = RELATIONS[rng.random_range(0..RELATIONS.len())].to_owned();
                Page { title, next, relation }.value()
            }
            "lookup" => {
                let relation = RELATIONS[rng.random_range(0..RELATIONS.len())];
                ActionValue::new(json!({ "keyword": "relation", "result": relation }))
            }
            _ => ActionValue::new(json!({ "accepted": rng.random_bool(0.5) })),
        }
    }
}

/// Multi-hop lookups: each question is answered by searching the first
/// entity, following the entity named in each result, and finishing with the
/// last one. Queries match strictly after normalization.
pub struct ChainLookup {
    kb: Arc<Kb>,
    hops: usize,
    lookup_final: bool,
    registry: HandlerRegistry,
    speculator: ScriptedSpeculator<KbModel>,
}

impl ChainLookup {
    pub fn new(config: ChainLookupConfig, seed: u64) -> Result<Self, ConfigError> {
        config.search_latency.validate("search_latency")?;
        config.lookup_latency.validate("lookup_latency")?;
        config.finish_latency.validate("finish_latency")?;
        config.speculator.validate("speculator")?;
        if config.questions == 0 {
            return Err(ConfigError::invalid("questions", "must be positive"));
        }
        if config.hops == 0 {
            return Err(ConfigError::invalid("hops", "must be positive"));
        }
        let mut names: Vec<String> =
            ADJECTIVES.iter().flat_map(|a| NOUNS.iter().map(move |n| format!("{a} {n}"))).collect();
        let needed = config.questions * (config.hops + 1);
        if needed > names.len() {
            return Err(ConfigError::invalid(
                "questions",
                format!("questions x (hops + 1) must be at most {}", names.len()),
            ));
        }
        let mut rng = SeedPath::new(seed).label("chain_lookup.kb").rng();
        names.shuffle(&mut rng);
        let mut pages = BTreeMap::new();
        let mut chains = Vec::with_capacity(config.questions);
        for q in 0..config.questions {
            let chain: Vec<String> = names[q * (config.hops + 1)..(q + 1) * (config.hops + 1)].to_vec();
            for w in chain.windows(2) {
                let relation = RELATIONS[rng.random_range(0..RELATIONS.len())].to_owned();
                pages.insert(normalize_query(&w[0]), Page { title: w[0].clone(), next: w[1].clone(), relation });
            }
            chains.push(chain);
        }
        let kb = Arc::new(Kb { pages, chains, entities: names });
        let mut registry = HandlerRegistry::new();
        for (id, latency, safety) in [
            ("search", config.search_latency, SafetyClass::Idempotent),
            ("lookup", config.lookup_latency, SafetyClass::Idempotent),
            ("finish", config.finish_latency, SafetyClass::Reversible),
        ] {
            registry.register(id, Arc::new(KbHandler { kb: kb.clone(), latency }), safety, true);
        }
        let speculator = ScriptedSpeculator { config: config.speculator, model: KbModel { kb: kb.clone() } };
        Ok(Self { kb, hops: config.hops, lookup_final: config.lookup_final, registry, speculator })
    }

    /// Entity chain of question `q`.
    pub fn chain(&self, q: usize) -> &[String] {
        &self.kb.chains[q % self.kb.chains.len()]
    }

    /// Calls one question needs.
    pub fn calls_per_question(&self) -> usize {
        self.hops + usize::from(self.lookup_final) + 1
    }
}

impl Environment for ChainLookup {
    type State = ChainState;

    fn initial_state(&self) -> ChainState {
        ChainState::default()
    }

    fn policy(&self, s: &ChainState) -> CallSpec {
        if s.hop < self.hops {
            let query = if s.hop == 0 { self.chain(s.asked)[0].clone() } else { s.next.clone().unwrap_or_default() };
            return CallSpec::new("search", &json!({ "query": normalize_query(&query) }));
        }
        if self.lookup_final && !s.looked_up {
            let title = s.title.clone().unwrap_or_default();
            return CallSpec::new("lookup", &json!({ "title": normalize_query(&title), "keyword": "relation" }));
        }
        let mut answer = s.next.clone().unwrap_or_default();
        if self.lookup_final {
            answer = format!("{answer} ({})", s.relation.clone().unwrap_or_default());
        }
        CallSpec::new("finish", &json!({ "answer": normalize_query(&answer) }))
    }

    fn transition(&self, s: &ChainState, action: &ActionValue) -> ChainState {
        let call = self.policy(s);
        let mut n = s.clone();
        match call.handler_id() {
            "search" => {
                n.hop += 1;
                n.next = linked_entity(action);
                n.title = action.0.get("title").and_then(Value::as_str).map(str::to_owned);
            }
            "lookup" => {
                n.looked_up = true;
                n.relation = action.0.get("result").and_then(Value::as_str).map(str::to_owned);
            }
            _ => {
                n.answers.push(call.params_value()["answer"].as_str().unwrap_or_default().to_owned());
                n.asked += 1;
                n.hop = 0;
                n.next = None;
                n.title = None;
                n.relation = None;
                n.looked_up = false;
            }
        }
        n
    }

    fn digest(&self, s: &ChainState) -> String {
        let repr = format!(
            "{}|{}|{:?}|{:?}|{:?}|{}|{}",
            s.asked,
            s.hop,
            s.next,
            s.title,
            s.relation,
            s.looked_up,
            s.answers.join(";")
        );
        digest_bytes(repr.as_bytes())
    }

    fn registry(&self) -> &HandlerRegistry {
        &self.registry
    }

    fn speculator(&self) -> &dyn GuessSource<ChainState> {
        &self.speculator
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_keeps_word_order() {
        assert_eq!(normalize_query("  Nobel   1970s "), "nobel 1970s");
        assert_ne!(normalize_query("Nobel 1970s"), normalize_query("1970s Nobel"));
    }

    #[test]
    fn linked_entity_parses_result_text() {
        let p = Page { title: "a b".into(), next: "c d".into(), relation: "funded".into() };
        assert_eq!(linked_entity(&p.value()).as_deref(), Some("c d"));
    }
}
