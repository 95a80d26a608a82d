//! Scripted program behaviour: what a program does when an event is delivered.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, OperationId, ProgramId, Registry, SensorId, WidgetId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trigger {
    Widget(WidgetId),
    /// A handoff with this label; `None` catches handoffs no labelled handler claims.
    Handoff(Option<String>),
}

/// One step of a handler. `after` is measured from the previous step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Handoff {
        to: ProgramId,
        label: Option<String>,
        after: u64,
    },
    Request {
        op: OperationId,
        sensor: SensorId,
        after: u64,
    },
    Complete {
        after: u64,
    },
}

impl Action {
    pub fn after(&self) -> u64 {
        match self {
            Action::Handoff { after, .. }
            | Action::Request { after, .. }
            | Action::Complete { after } => *after,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandlerSpec {
    pub program: ProgramId,
    pub trigger: Trigger,
    pub actions: Vec<Action>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HandlerError {
    #[error("handler must end with a complete step")]
    MissingComplete,
    #[error("complete must be the last step")]
    CompleteNotLast,
    #[error("step {0} emits at the instant of delivery; emissions need a lag of at least 1 ms")]
    EmitAtDelivery(usize),
    #[error("a handler for this program and trigger already exists")]
    Duplicate,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl HandlerSpec {
    pub fn validate(&self, registry: &Registry) -> Result<(), HandlerError> {
        registry.program(self.program)?;
        if let Trigger::Widget(w) = self.trigger {
            registry.widget(w)?;
        }
        match self.actions.last() {
            Some(Action::Complete { .. }) => {}
            _ => return Err(HandlerError::MissingComplete),
        }
        let mut offset = 0u64;
        for (i, action) in self.actions.iter().enumerate() {
            offset += action.after();
            match action {
                Action::Complete { .. } if i + 1 != self.actions.len() => {
                    return Err(HandlerError::CompleteNotLast)
                }
                Action::Complete { .. } => {}
                Action::Handoff { to, .. } => {
                    if offset == 0 {
                        return Err(HandlerError::EmitAtDelivery(i));
                    }
                    registry.program(*to)?;
                    if *to == self.program {
                        return Err(DomainError::SelfHandoff(self.program).into());
                    }
                }
                Action::Request { op, sensor, .. } => {
                    if offset == 0 {
                        return Err(HandlerError::EmitAtDelivery(i));
                    }
                    registry.check_compatible(*op, *sensor)?;
                }
            }
        }
        Ok(())
    }

    /// Total processing time from delivery to completion.
    pub fn service_lag(&self) -> u64 {
        self.actions.iter().map(Action::after).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Handlers {
    map: HashMap<(ProgramId, Trigger), HandlerSpec>,
}

impl Handlers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spec: HandlerSpec, registry: &Registry) -> Result<(), HandlerError> {
        spec.validate(registry)?;
        let key = (spec.program, spec.trigger.clone());
        if self.map.contains_key(&key) {
            return Err(HandlerError::Duplicate);
        }
        self.map.insert(key, spec);
        Ok(())
    }

    pub fn lookup(&self, program: ProgramId, trigger: &Trigger) -> Option<&HandlerSpec> {
        self.map
            .get(&(program, trigger.clone()))
            .or_else(|| match trigger {
                Trigger::Handoff(Some(_)) => self.map.get(&(program, Trigger::Handoff(None))),
                _ => None,
            })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HandlerSpec> {
        self.map.values()
    }
}
