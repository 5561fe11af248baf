use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{digest_bytes, ConfigError, LatencyDist, ResponseModel, ScriptedSpeculator, SpeculatorConfig};
use crate::call::{ActionValue, CallSpec};
use crate::env::{Environment, GuessSource, Handler, HandlerRegistry};
use crate::error::HandlerError;
use crate::safety::SafetyClass;
use crate::seed::SeedPath;
use crate::strategies::{predict_call_count, CallCountModel};

const USER_MESSAGE: &str = "user.message";
const NAMES: [&str; 8] = ["Ada", "Bo", "Cyd", "Dee", "Eli", "Fay", "Gus", "Hal"];
const PRODUCTS: [&str; 8] = ["kettle", "lamp", "backpack", "headphones", "desk", "blender", "jacket", "monitor"];
const STATUSES: [&str; 3] = ["processing", "shipped", "delivered"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    ChitChat,
    OrderStatus,
    ReturnRequest,
    ConfirmReturn,
    CancelOrder,
    ProfileLookup,
    ProductQuestion,
}

impl Intent {
    pub const ALL: [Intent; 7] = [
        Intent::ChitChat,
        Intent::OrderStatus,
        Intent::ReturnRequest,
        Intent::ConfirmReturn,
        Intent::CancelOrder,
        Intent::ProfileLookup,
        Intent::ProductQuestion,
    ];

    fn name(self) -> &'static str {
        match self {
            Intent::ChitChat => "chit_chat",
            Intent::OrderStatus => "order_status",
            Intent::ReturnRequest => "return_request",
            Intent::ConfirmReturn => "confirm_return",
            Intent::CancelOrder => "cancel_order",
            Intent::ProfileLookup => "profile_lookup",
            Intent::ProductQuestion => "product_question",
        }
    }

    fn parse(s: &str) -> Option<Intent> {
        Intent::ALL.into_iter().find(|i| i.name() == s)
    }

    /// Tool calls the agent issues for this request, in order.
    pub fn calls(self, user_id: &str, order_id: &str, product: &str) -> Vec<CallSpec> {
        let user = || CallSpec::new("get_user_details", &json!({ "user_id": user_id }));
        let order = || CallSpec::new("get_order_details", &json!({ "order_id": order_id }));
        match self {
            Intent::ChitChat => vec![],
            Intent::OrderStatus => vec![order()],
            Intent::ReturnRequest => vec![user(), order()],
            Intent::ConfirmReturn => {
                vec![order(), CallSpec::new("return_item", &json!({ "order_id": order_id }))]
            }
            Intent::CancelOrder => {
                vec![order(), CallSpec::new("cancel_order", &json!({ "order_id": order_id }))]
            }
            Intent::ProfileLookup => vec![user()],
            Intent::ProductQuestion => vec![CallSpec::new("search_products", &json!({ "query": product }))],
        }
    }
}

/// One scripted user turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnSpec {
    pub intent: Intent,
    pub user: usize,
    pub order: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountModelKind {
    /// Reads the script: always right.
    Perfect,
    /// Answers with unparsable text, so every turn predicts zero calls.
    Garbage,
    /// No call-count prediction; every user turn opens a window.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolDialogueConfig {
    /// Explicit turns; generated from the seed when absent.
    pub script: Option<Vec<TurnSpec>>,
    /// Number of generated turns.
    pub turns: usize,
    pub users: usize,
    pub orders_per_user: usize,
    /// Time the user spends typing a message.
    pub typing_latency: LatencyDist,
    pub tool_latency: LatencyDist,
    pub call_count_model: CountModelKind,
    pub speculator: SpeculatorConfig,
}

impl Default for ToolDialogueConfig {
    fn default() -> Self {
        Self {
            script: None,
            turns: 12,
            users: 6,
            orders_per_user: 3,
            typing_latency: LatencyDist::exponential_mean(30.0),
            tool_latency: LatencyDist::Exponential { rate: 1.0 },
            call_count_model: CountModelKind::Perfect,
            speculator: SpeculatorConfig::default(),
        }
    }
}

struct Db {
    users: BTreeMap<String, Value>,
    orders: BTreeMap<String, Value>,
    /// Utterances in script order.
    utterances: Vec<Value>,
}

fn utterance(db_users: usize, orders_per_user: usize, t: &TurnSpec) -> Value {
    let user_id = format!("u{}", t.user % db_users);
    let order_id = format!("o{}-{}", t.user % db_users, t.order % orders_per_user);
    let product = PRODUCTS[(t.user * orders_per_user + t.order) % PRODUCTS.len()];
    let text = match t.intent {
        Intent::ChitChat => "thanks, have a nice day".to_owned(),
        Intent::OrderStatus => format!("where is my order {order_id}?"),
        Intent::ReturnRequest => format!("i want to return order {order_id}"),
        Intent::ConfirmReturn => format!("yes, please go ahead with the return of {order_id}"),
        Intent::CancelOrder => format!("please cancel {order_id}"),
        Intent::ProfileLookup => "what email do you have on file for me?".to_owned(),
        Intent::ProductQuestion => format!("is the {product} in stock?"),
    };
    json!({ "intent": t.intent.name(), "user_id": user_id, "order_id": order_id, "product": product, "text": text })
}

fn str_field<'a>(v: &'a Value, k: &str) -> &'a str {
    v.get(k).and_then(Value::as_str).unwrap_or_default()
}

impl Db {
    fn respond(&self, call: &CallSpec) -> Result<ActionValue, HandlerError> {
        let p = call.params_value();
        let id = call.handler_id();
        let not_found = |what: &str| HandlerError::new(id, format!("unknown {what}"));
        match id {
            USER_MESSAGE => {
                let turn = p.get("turn").and_then(Value::as_u64).ok_or_else(|| not_found("turn"))? as usize;
                Ok(ActionValue::new(self.utterances[turn % self.utterances.len()].clone()))
            }
            "get_user_details" => {
                self.users.get(str_field(&p, "user_id")).cloned().map(ActionValue::new).ok_or_else(|| not_found("user"))
            }
            "get_order_details" => self
                .orders
                .get(str_field(&p, "order_id"))
                .cloned()
                .map(ActionValue::new)
                .ok_or_else(|| not_found("order")),
            "search_products" => {
                let q = str_field(&p, "query");
                let stock = PRODUCTS.iter().position(|x| *x == q).map(|i| (i * 7) % 5).unwrap_or(0);
                Ok(ActionValue::new(json!({ "product": q, "in_stock": stock })))
            }
            "return_item" | "cancel_order" => {
                let order = self.orders.get(str_field(&p, "order_id")).ok_or_else(|| not_found("order"))?;
                Ok(ActionValue::new(json!({ "ok": true, "order_id": order["order_id"], "refund": order["price"] })))
            }
            _ => Err(HandlerError::new(id, "unknown tool")),
        }
    }
}

struct DbHandler {
    db: Arc<Db>,
    latency: LatencyDist,
}

impl Handler for DbHandler {
    fn invoke(&self, call: &CallSpec) -> Result<ActionValue, HandlerError> {
        self.db.respond(call)
    }

    fn latency(&self, _call: &CallSpec, rng: &mut dyn RngCore) -> f64 {
        self.latency.sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DialogueState {
    /// User messages received so far.
    pub turn: usize,
    /// The latest user message.
    pub utterance: Option<Value>,
    /// Tool calls completed for it.
    pub done: usize,
    /// Responses digest chain, so different tool results give different states.
    pub log: String,
}

impl DialogueState {
    fn pending_calls(&self) -> Vec<CallSpec> {
        let Some(u) = &self.utterance else { return vec![] };
        let intent = Intent::parse(str_field(u, "intent")).unwrap_or(Intent::ChitChat);
        intent.calls(str_field(u, "user_id"), str_field(u, "order_id"), str_field(u, "product"))
    }
}

struct DialogueModel {
    db: Arc<Db>,
}

impl ResponseModel<DialogueState> for DialogueModel {
    fn truth(&self, _state: &DialogueState, call: &CallSpec) -> Option<ActionValue> {
        self.db.respond(call).ok()
    }

    fn decoy(&self, _state: &DialogueState, call: &CallSpec, rng: &mut dyn RngCore) -> ActionValue {
        let pick = |m: &BTreeMap<String, Value>, rng: &mut dyn RngCore| {
            m.values().nth(rng.random_range(0..m.len())).cloned().unwrap_or(Value::Null)
        };
        ActionValue::new(match call.handler_id() {
            USER_MESSAGE => self.db.utterances[rng.random_range(0..self.db.utterances.len())].clone(),
            "get_user_details" => pick(&self.db.users, rng),
            "get_order_details" => pick(&self.db.orders, rng),
            "search_products" => {
                let q = PRODUCTS[rng.random_range(0..PRODUCTS.len())];
                json!({ "product": q, "in_stock": rng.random_range(0..5) })
            }
            _ => json!({ "ok": false }),
        })
    }
}

struct ScriptCountModel {
    db: Arc<Db>,
    kind: CountModelKind,
}

impl CallCountModel<DialogueState> for ScriptCountModel {
    fn raw_count(&self, state: &DialogueState, _context: &str) -> String {
        match self.kind {
            CountModelKind::Garbage => "a few, probably".to_owned(),
            _ => {
                let u = &self.db.utterances[state.turn % self.db.utterances.len()];
                let s = DialogueState { utterance: Some(u.clone()), ..DialogueState::default() };
                s.pending_calls().len().to_string()
            }
        }
    }
}

/// Customer-service dialogue. Each user turn is a `user.message` call whose
/// latency is the user's typing time; the agent then runs the tool calls the
/// request needs. Reads are reversible, writes irreversible, and prompting
/// the user is never speculated (it is an outward-facing action).
pub struct ToolDialogue {
    db: Arc<Db>,
    registry: HandlerRegistry,
    speculator: ScriptedSpeculator<DialogueModel>,
    count_model: ScriptCountModel,
}

impl ToolDialogue {
    pub fn new(config: ToolDialogueConfig, seed: u64) -> Result<Self, ConfigError> {
        config.typing_latency.validate("typing_latency")?;
        config.tool_latency.validate("tool_latency")?;
        config.speculator.validate("speculator")?;
        if config.users == 0 || config.users > NAMES.len() {
            return Err(ConfigError::invalid("users", format!("must be in 1..={}", NAMES.len())));
        }
        if config.orders_per_user == 0 {
            return Err(ConfigError::invalid("orders_per_user", "must be positive"));
        }
        let mut rng = SeedPath::new(seed).label("tool_dialogue.db").rng();
        let mut users = BTreeMap::new();
        let mut orders = BTreeMap::new();
        for u in 0..config.users {
            let order_ids: Vec<String> = (0..config.orders_per_user).map(|j| format!("o{u}-{j}")).collect();
            for (j, oid) in order_ids.iter().enumerate() {
                let item = PRODUCTS[(u * config.orders_per_user + j) % PRODUCTS.len()];
                orders.insert(
                    oid.clone(),
                    json!({
                        "order_id": oid,
                        "user_id": format!("u{u}"),
                        "item": item,
                        "status": STATUSES[rng.random_range(0..STATUSES.len())],
                        "price": rng.random_range(10..400),
                    }),
                );
            }
            users.insert(
                format!("u{u}"),
                json!({
                    "user_id": format!("u{u}"),
                    "name": NAMES[u],
                    "email": format!("{}@example.com", NAMES[u].to_lowercase()),
                    "orders": order_ids,
                }),
            );
        }
        let script = match config.script {
            Some(s) if s.is_empty() => return Err(ConfigError::invalid("script", "must not be empty")),
            Some(s) => s,
            None => {
                if config.turns == 0 {
                    return Err(ConfigError::invalid("turns", "must be positive"));
                }
                (0..config.turns)
                    .map(|_| TurnSpec {
                        intent: Intent::ALL[rng.random_range(0..Intent::ALL.len())],
                        user: rng.random_range(0..config.users),
                        order: rng.random_range(0..config.orders_per_user),
                    })
                    .collect()
            }
        };
        let utterances = script.iter().map(|t| utterance(config.users, config.orders_per_user, t)).collect();
        let db = Arc::new(Db { users, orders, utterances });

        let mut registry = HandlerRegistry::new();
        let mut add = |id: &str, latency: LatencyDist, safety: SafetyClass, cancellable: bool| {
            registry.register(id, Arc::new(DbHandler { db: db.clone(), latency }), safety, cancellable);
        };
        add(USER_MESSAGE, config.typing_latency, SafetyClass::Irreversible, false);
        add("get_user_details", config.tool_latency, SafetyClass::Reversible, true);
        add("get_order_details", config.tool_latency, SafetyClass::Reversible, true);
        add("search_products", config.tool_latency, SafetyClass::Reversible, true);
        add("return_item", config.tool_latency, SafetyClass::Irreversible, false);
        add("cancel_order", config.tool_latency, SafetyClass::Irreversible, false);

        let speculator = ScriptedSpeculator { config: config.speculator, model: DialogueModel { db: db.clone() } };
        let count_model = ScriptCountModel { db: db.clone(), kind: config.call_count_model };
        Ok(Self { db, registry, speculator, count_model })
    }

    /// The tool calls turn `turn` requires.
    pub fn ground_truth_calls(&self, turn: usize) -> Vec<CallSpec> {
        let u = &self.db.utterances[turn % self.db.utterances.len()];
        DialogueState { utterance: Some(u.clone()), ..DialogueState::default() }.pending_calls()
    }

    pub fn turns(&self) -> usize {
        self.db.utterances.len()
    }

    /// Handler ids whose safety class forbids pre-launch.
    pub fn irreversible_handlers(&self) -> Vec<String> {
        self.registry
            .ids()
            .filter(|id| self.registry.safety(id) == Some(SafetyClass::Irreversible))
            .map(str::to_owned)
            .collect()
    }
}

impl Environment for ToolDialogue {
    type State = DialogueState;

    fn initial_state(&self) -> DialogueState {
        DialogueState::default()
    }

    fn policy(&self, s: &DialogueState) -> CallSpec {
        match s.pending_calls().into_iter().nth(s.done) {
            Some(c) => c,
            None => CallSpec::new(USER_MESSAGE, &json!({ "turn": s.turn })),
        }
    }

    fn transition(&self, s: &DialogueState, action: &ActionValue) -> DialogueState {
        let call = self.policy(s);
        let mut n = s.clone();
        n.log = digest_bytes(format!("{}|{}|{}", s.log, call, action.0).as_bytes());
        if call.handler_id() == USER_MESSAGE {
            n.turn += 1;
            n.utterance = Some(action.0.clone());
            n.done = 0;
        } else {
            n.done += 1;
        }
        n
    }

    fn digest(&self, s: &DialogueState) -> String {
        digest_bytes(format!("{}|{}|{}", s.turn, s.done, s.log).as_bytes())
    }

    fn registry(&self) -> &HandlerRegistry {
        &self.registry
    }

    fn speculator(&self) -> &dyn GuessSource<DialogueState> {
        &self.speculator
    }

    fn predicted_calls(&self, s: &DialogueState, call: &CallSpec) -> Option<usize> {
        if call.handler_id() != USER_MESSAGE || self.count_model.kind == CountModelKind::None {
            return None;
        }
        Some(predict_call_count(s, "", &self.count_model))
    }
}
