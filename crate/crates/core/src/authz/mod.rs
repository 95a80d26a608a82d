//! Turning delegation paths into decisions.
//!
//! [`PathAuthorizer`] is the delegation-path model: a path is allowed silently
//! only if exactly that path was authorized before for the same input; any new
//! path goes to the [`Authorizer`]. [`FirstUseState`] is the baseline that
//! remembers (program, operation, sensor) grants regardless of who asked.

pub mod cache;
pub mod policy;
pub mod prompt;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use cache::{AuthorizationCache, CacheError, Footprint, Verdict};
pub use policy::{
    Authorizer, InteractivePrompt, PolicyError, PromptRequest, RecordedAnswers, Rule,
    ScriptedPolicy, Subject,
};
pub use prompt::{first_use_prompt, identity_marks, render_prompt, subject_for, PromptError};

use crate::domain::{OperationId, OperationRequest, ProgramId, Registry, SensorId};
use crate::graph::{DelegationPath, GraphError, GraphStore, PathKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllowedBy {
    Cached,
    Prompted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeniedBy {
    Prompted,
    Policy,
    NoAttribution,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "by")]
pub enum Outcome {
    Allowed(AllowedBy),
    Denied(DeniedBy),
}

impl Outcome {
    pub fn is_allowed(self) -> bool {
        matches!(self, Outcome::Allowed(_))
    }

    pub fn prompted(self) -> bool {
        matches!(
            self,
            Outcome::Allowed(AllowedBy::Prompted) | Outcome::Denied(DeniedBy::Prompted)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub path: Option<DelegationPath>,
    pub prompt_text: Option<String>,
    /// A previously cached path for the same input and operation was replaced.
    pub reauthorized: bool,
}

impl Decision {
    pub fn denied(by: DeniedBy) -> Self {
        Self {
            outcome: Outcome::Denied(by),
            path: None,
            prompt_text: None,
            reauthorized: false,
        }
    }
}

/// Maps a graph failure onto the default-deny outcome.
pub fn deny_for(err: &GraphError) -> DeniedBy {
    match err {
        GraphError::ExpiredRoot { .. } => DeniedBy::Expired,
        _ => DeniedBy::NoAttribution,
    }
}

/// Result of consulting the cache for one path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheCheck {
    Allowed,
    Denied,
    Miss { superseded: Vec<PathKey> },
}

/// Outcome of one (possibly aggregated) prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptOutcome {
    pub text: String,
    pub verdict: Verdict,
    pub invalidated: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PathAuthorizer {
    cache: AuthorizationCache,
    cache_denials: bool,
    prompts: usize,
}

impl PathAuthorizer {
    pub fn new(cache_denials: bool) -> Self {
        Self {
            cache: AuthorizationCache::new(),
            cache_denials,
            prompts: 0,
        }
    }

    pub fn with_cache(cache: AuthorizationCache, cache_denials: bool) -> Self {
        Self {
            cache,
            cache_denials,
            prompts: 0,
        }
    }

    pub fn cache(&self) -> &AuthorizationCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut AuthorizationCache {
        &mut self.cache
    }

    pub fn prompts(&self) -> usize {
        self.prompts
    }

    pub fn check(&self, path: &DelegationPath) -> CacheCheck {
        let key = path.path_key();
        match self.cache.lookup(&key) {
            Some(Verdict::Allow) => CacheCheck::Allowed,
            Some(Verdict::Deny) if self.cache_denials => CacheCheck::Denied,
            _ => CacheCheck::Miss {
                superseded: self.cache.superseded_by(&key),
            },
        }
    }

    /// Shows one message covering `paths` (all from the same root) and records
    /// the answer for each of them.
    pub fn prompt(
        &mut self,
        registry: &Registry,
        paths: &[DelegationPath],
        authorizer: &mut dyn Authorizer,
    ) -> Result<PromptOutcome, PromptError> {
        let text = render_prompt(registry, paths)?;
        let subjects = paths
            .iter()
            .map(|p| subject_for(registry, p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut invalidated = 0;
        for path in paths {
            for old in self.cache.superseded_by(&path.path_key()) {
                if self.cache.evict(&old).unwrap_or(false) {
                    invalidated += 1;
                }
            }
        }
        let verdict = authorizer.decide(&PromptRequest {
            text: text.clone(),
            subjects,
        });
        self.prompts += 1;
        for path in paths {
            if verdict == Verdict::Allow || self.cache_denials {
                let snapshot = serde_json::to_vec(path).expect("paths serialize");
                self.cache.store(path.path_key(), verdict, snapshot);
            }
        }
        Ok(PromptOutcome {
            text,
            verdict,
            invalidated,
        })
    }

    /// Single-request authorization: path computation, cache, then prompt.
    pub fn authorize(
        &mut self,
        registry: &Registry,
        graphs: &GraphStore,
        request: &OperationRequest,
        authorizer: &mut dyn Authorizer,
    ) -> Decision {
        let path = match graphs.compute_path(request) {
            Ok(p) => p,
            Err(e) => return Decision::denied(deny_for(&e)),
        };
        match self.check(&path) {
            CacheCheck::Allowed => Decision {
                outcome: Outcome::Allowed(AllowedBy::Cached),
                path: Some(path),
                prompt_text: None,
                reauthorized: false,
            },
            CacheCheck::Denied => Decision {
                outcome: Outcome::Denied(DeniedBy::Policy),
                path: Some(path),
                prompt_text: None,
                reauthorized: false,
            },
            CacheCheck::Miss { superseded } => {
                match self.prompt(registry, std::slice::from_ref(&path), authorizer) {
                    Ok(out) => Decision {
                        outcome: match out.verdict {
                            Verdict::Allow => Outcome::Allowed(AllowedBy::Prompted),
                            Verdict::Deny => Outcome::Denied(DeniedBy::Prompted),
                        },
                        path: Some(path),
                        prompt_text: Some(out.text),
                        reauthorized: !superseded.is_empty(),
                    },
                    Err(_) => Decision::denied(DeniedBy::NoAttribution),
                }
            }
        }
    }
}

/// Permission triples granted under the first-use model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FirstUseState {
    grants: BTreeSet<(ProgramId, OperationId, SensorId)>,
    prompts: usize,
}

impl FirstUseState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grants(&self) -> &BTreeSet<(ProgramId, OperationId, SensorId)> {
        &self.grants
    }

    pub fn prompts(&self) -> usize {
        self.prompts
    }

    pub fn grant(&mut self, program: ProgramId, op: OperationId, sensor: SensorId) {
        self.grants.insert((program, op, sensor));
    }

    pub fn revoke(&mut self, program: ProgramId, op: OperationId, sensor: SensorId) -> bool {
        self.grants.remove(&(program, op, sensor))
    }

    pub fn authorize(
        &mut self,
        registry: &Registry,
        request: &OperationRequest,
        authorizer: &mut dyn Authorizer,
    ) -> Decision {
        let triple = (request.program, request.op, request.sensor);
        if self.grants.contains(&triple) {
            return Decision {
                outcome: Outcome::Allowed(AllowedBy::Cached),
                path: None,
                prompt_text: None,
                reauthorized: false,
            };
        }
        let Ok(text) = first_use_prompt(registry, request.program, request.op) else {
            return Decision::denied(DeniedBy::NoAttribution);
        };
        let subject = Subject {
            widget: String::new(),
            programs: vec![registry
                .program(request.program)
                .map(|p| p.name.clone())
                .unwrap_or_default()],
            op: registry
                .operation(request.op)
                .map(|o| o.name.clone())
                .unwrap_or_default(),
            sensor: registry
                .sensor(request.sensor)
                .map(|s| s.name.clone())
                .unwrap_or_default(),
        };
        let verdict = authorizer.decide(&PromptRequest {
            text: text.clone(),
            subjects: vec![subject],
        });
        self.prompts += 1;
        let outcome = match verdict {
            Verdict::Allow => {
                self.grants.insert(triple);
                Outcome::Allowed(AllowedBy::Prompted)
            }
            Verdict::Deny => Outcome::Denied(DeniedBy::Prompted),
        };
        Decision {
            outcome,
            path: None,
            prompt_text: Some(text),
            reauthorized: false,
        }
    }
}
