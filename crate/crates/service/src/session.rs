use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use eaml::elicitation::ExpertAssessment;
use eaml::rules::{RuleCard, RuleRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::store::{Event, Store};
use crate::{Result, ServiceError};

struct Session {
    session_id: String,
    expert_id: String,
    /// Indices into the loaded rule set.
    order: Vec<usize>,
    started_at: DateTime<Utc>,
    /// One record per answered position; its length is the cursor.
    answers: Vec<ExpertAssessment>,
}

impl Session {
    fn summary(&self, resumed: bool) -> SessionSummary {
        SessionSummary {
            session_id: self.session_id.clone(),
            expert_id: self.expert_id.clone(),
            cursor: self.answers.len(),
            total: self.order.len(),
            started_at: self.started_at,
            resumed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub expert_id: String,
    pub cursor: usize,
    pub total: usize,
    pub started_at: DateTime<Utc>,
    pub resumed: bool,
}

/// What a rater sees next. Cards carry feature summaries only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextRule {
    Rule { rule_id: String, description: String, card: RuleCard, position: usize, total: usize },
    Done { total: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub accepted: bool,
    pub duplicate: bool,
    pub cursor: usize,
    pub total: usize,
}

type Shared = Arc<Mutex<Session>>;

/// Owns the loaded rules, the live sessions and the durable log.
///
/// Rules are immutable after construction. Each session has its own lock,
/// the session index sits behind a read-write lock, and the store writer
/// serializes appends.
pub struct SessionManager {
    rules: Arc<Vec<RuleRecord>>,
    sessions: RwLock<HashMap<String, Shared>>,
    by_expert: Mutex<HashMap<String, String>>,
    store: Store,
}

impl SessionManager {
    /// Loads `rules` and replays any existing log at `store_path`.
    pub fn open(rules: Vec<RuleRecord>, store_path: impl AsRef<Path>) -> Result<SessionManager> {
        if rules.is_empty() {
            return Err(ServiceError::Rules("no rules loaded".into()));
        }
        let mut index = HashMap::new();
        for (k, r) in rules.iter().enumerate() {
            if index.insert(r.id.clone(), k).is_some() {
                return Err(ServiceError::Rules(format!("duplicate rule id {}", r.id)));
            }
        }
        let (store, events) = Store::open(store_path)?;
        let mut sessions: HashMap<String, Session> = HashMap::new();
        let mut by_expert = HashMap::new();
        let mismatch = |msg: String| ServiceError::Rules(format!("log does not match the loaded rules: {msg}"));
        for event in events {
            match event {
                Event::Session { session_id, expert_id, order, started_at } => {
                    let order = order
                        .iter()
                        .map(|id| index.get(id).copied().ok_or_else(|| mismatch(format!("unknown rule {id}"))))
                        .collect::<Result<Vec<_>>>()?;
                    if order.len() != rules.len() {
                        return Err(mismatch(format!("session {session_id} has {} rules", order.len())));
                    }
                    by_expert.insert(expert_id.clone(), session_id.clone());
                    sessions.insert(
                        session_id.clone(),
                        Session { session_id, expert_id, order, started_at, answers: Vec::new() },
                    );
                }
                Event::Assessment { session_id, position, record } => {
                    let s = sessions.get_mut(&session_id).ok_or_else(|| mismatch(format!("orphan session {session_id}")))?;
                    if position != s.answers.len() || rules[s.order[position]].id != record.rule_id {
                        return Err(mismatch(format!("out-of-sequence record in {session_id}")));
                    }
                    s.answers.push(record);
                }
            }
        }
        Ok(SessionManager {
            rules: Arc::new(rules),
            sessions: RwLock::new(sessions.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect()),
            by_expert: Mutex::new(by_expert),
            store,
        })
    }

    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    /// Returns the expert's existing session if there is one, otherwise a new
    /// one with a fresh permutation.
    pub fn start_session(&self, expert_id: &str, seed: Option<u64>) -> Result<SessionSummary> {
        if expert_id.trim().is_empty() {
            return Err(ServiceError::EmptyExpert);
        }
        // held across creation so two racing starts cannot both create
        let mut by_expert = self.by_expert.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(id) = by_expert.get(expert_id) {
            return Ok(lock(&self.get(id)?).summary(true));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(rand::random));
        let mut order: Vec<usize> = (0..self.rules.len()).collect();
        order.shuffle(&mut rng);
        let session = Session {
            session_id: uuid::Uuid::new_v4().to_string(),
            expert_id: expert_id.to_string(),
            order,
            started_at: Utc::now(),
            answers: Vec::new(),
        };
        self.store.append(&Event::Session {
            session_id: session.session_id.clone(),
            expert_id: session.expert_id.clone(),
            order: session.order.iter().map(|&k| self.rules[k].id.clone()).collect(),
            started_at: session.started_at,
        })?;
        let summary = session.summary(false);
        by_expert.insert(summary.expert_id.clone(), summary.session_id.clone());
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(summary.session_id.clone(), Arc::new(Mutex::new(session)));
        Ok(summary)
    }

    pub fn summary(&self, session_id: &str) -> Result<SessionSummary> {
        Ok(lock(&self.get(session_id)?).summary(true))
    }

    /// The rule ids in presentation order.
    pub fn order(&self, session_id: &str) -> Result<Vec<String>> {
        Ok(lock(&self.get(session_id)?).order.iter().map(|&k| self.rules[k].id.clone()).collect())
    }

    pub fn next_rule(&self, session_id: &str) -> Result<NextRule> {
        let shared = self.get(session_id)?;
        let s = lock(&shared);
        let total = s.order.len();
        let cursor = s.answers.len();
        if cursor == total {
            return Ok(NextRule::Done { total });
        }
        let r = &self.rules[s.order[cursor]];
        Ok(NextRule::Rule {
            rule_id: r.id.clone(),
            description: r.description.clone(),
            card: r.card.clone(),
            position: cursor,
            total,
        })
    }

    /// Records a rating for the rule at the cursor. Resubmitting an earlier
    /// answer unchanged is acknowledged without a new record; changing it is
    /// refused.
    pub fn submit_assessment(&self, session_id: &str, rule_id: &str, rating: u8, elapsed_ms: u64) -> Result<SubmitAck> {
        let shared = self.get(session_id)?;
        let mut s = lock(&shared);
        let total = s.order.len();
        if !(1..=5).contains(&rating) {
            return Err(ServiceError::InvalidRating(rating));
        }
        if let Some(prev) = s.answers.iter().find(|a| a.rule_id == rule_id) {
            if prev.rating != rating {
                return Err(ServiceError::Revision(rule_id.to_string()));
            }
            return Ok(SubmitAck { accepted: true, duplicate: true, cursor: s.answers.len(), total });
        }
        let position = s.answers.len();
        if position == total {
            return Err(ServiceError::Complete);
        }
        let expected = &self.rules[s.order[position]].id;
        if expected != rule_id {
            return Err(ServiceError::OutOfOrder { expected: expected.clone(), got: rule_id.to_string() });
        }
        let record = ExpertAssessment {
            expert_id: s.expert_id.clone(),
            rule_id: rule_id.to_string(),
            rating,
            elapsed_ms,
            timestamp: Utc::now(),
        };
        self.store.append(&Event::Assessment { session_id: s.session_id.clone(), position, record: record.clone() })?;
        s.answers.push(record);
        Ok(SubmitAck { accepted: true, duplicate: false, cursor: position + 1, total })
    }

    /// Every recorded assessment, ordered by expert then presentation position.
    pub fn export(&self) -> Vec<ExpertAssessment> {
        let sessions: Vec<Shared> = self.sessions.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        let mut per_expert: Vec<(String, Vec<ExpertAssessment>)> = sessions
            .iter()
            .map(|shared| {
                let s = lock(shared);
                (s.expert_id.clone(), s.answers.clone())
            })
            .collect();
        per_expert.sort_by(|a, b| a.0.cmp(&b.0));
        per_expert.into_iter().flat_map(|(_, v)| v).collect()
    }

    fn get(&self, session_id: &str) -> Result<Shared> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }
}

fn lock(s: &Shared) -> std::sync::MutexGuard<'_, Session> {
    s.lock().unwrap_or_else(|e| e.into_inner())
}
