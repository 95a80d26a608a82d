//! Programs, widgets, sensors, operations and the three mediated event tuples.
//!
//! The [`Registry`] is populated once while a scenario loads and is read-only
//! afterwards. Every event constructor validates its references against it, so
//! a malformed tuple never reaches the graph or the scheduler.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(
    /// Registry token of a cooperating program.
    ProgramId(u32)
);
id_newtype!(WidgetId(u32));
id_newtype!(SensorId(u16));
id_newtype!(OperationId(u16));
id_newtype!(
    /// Unique id of a mediated event, issued by the engine.
    EventId(u64)
);

/// Virtual time in whole milliseconds since simulation start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn after(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(ms))
    }

    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("program name must not be empty")]
    EmptyName,
    #[error("identity mark must not be empty")]
    EmptyIdentityMark,
    #[error("program {name:?} with mark {mark:?} is already registered")]
    DuplicateProgram { name: String, mark: String },
    #[error("widget label must not be empty")]
    EmptyLabel,
    #[error("alias {alias:?} already resolves to widget {existing:?}")]
    AliasCollision { alias: String, existing: String },
    #[error("no widget answers to {0:?}")]
    UnknownWidget(String),
    #[error("unknown program id {0}")]
    UnknownProgram(ProgramId),
    #[error("unknown widget id {0}")]
    UnknownWidgetId(WidgetId),
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
    #[error("sensor {0:?} is already registered")]
    DuplicateSensor(String),
    #[error("operation {0:?} is already registered")]
    DuplicateOperation(String),
    #[error("operation {0:?} must be compatible with at least one sensor")]
    OperationWithoutSensor(String),
    #[error("operation {op:?} cannot be performed on sensor {sensor:?}")]
    IncompatibleOperation { op: String, sensor: String },
    #[error("program {0} cannot hand off to itself")]
    SelfHandoff(ProgramId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub id: ProgramId,
    pub name: String,
    /// Short label standing in for the program's icon.
    pub identity_mark: String,
    /// Noun used when the program is named mid-sentence ("the Basic Camera app").
    pub noun: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    #[serde(alias = "gui")]
    GuiWidget,
    #[serde(alias = "voice")]
    VoiceCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widget {
    pub id: WidgetId,
    pub kind: WidgetKind,
    pub label: String,
    /// Normalized labels that resolve to this widget, including its own.
    pub aliases: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorRecord {
    pub id: SensorId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRecord {
    pub id: OperationId,
    pub name: String,
    pub sensors: Vec<SensorId>,
    /// Verb phrase used in delegation prompts ("capture pictures").
    pub phrase: String,
    /// Verb phrase used by first-use prompts ("access this device's location").
    pub first_use_phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEvent {
    pub id: EventId,
    pub widget: WidgetId,
    pub program: ProgramId,
    pub t: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoffEvent {
    pub id: EventId,
    pub from: ProgramId,
    pub to: ProgramId,
    pub t: Timestamp,
    /// Intent-style action name used to select the receiver's handler.
    pub label: Option<String>,
    /// Root input event this handoff derives from, if any.
    pub provenance: Option<EventId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRequest {
    pub id: EventId,
    pub program: ProgramId,
    pub op: OperationId,
    pub sensor: SensorId,
    pub t: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediatedEvent {
    Input(InputEvent),
    Handoff(HandoffEvent),
    Request(OperationRequest),
}

impl MediatedEvent {
    pub fn id(&self) -> EventId {
        match self {
            MediatedEvent::Input(i) => i.id,
            MediatedEvent::Handoff(h) => h.id,
            MediatedEvent::Request(r) => r.id,
        }
    }

    pub fn t(&self) -> Timestamp {
        match self {
            MediatedEvent::Input(i) => i.t,
            MediatedEvent::Handoff(h) => h.t,
            MediatedEvent::Request(r) => r.t,
        }
    }

    /// Program the event is delivered to; requests go to the monitor instead.
    pub fn target(&self) -> Option<ProgramId> {
        match self {
            MediatedEvent::Input(i) => Some(i.program),
            MediatedEvent::Handoff(h) => Some(h.to),
            MediatedEvent::Request(_) => None,
        }
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Registry {
    programs: Vec<ProgramRecord>,
    widgets: Vec<Widget>,
    sensors: Vec<SensorRecord>,
    operations: Vec<OperationRecord>,
    #[serde(skip)]
    aliases: HashMap<String, WidgetId>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with camera, microphone, GPS and screen plus their
    /// usual operations.
    pub fn with_standard_sensors() -> Self {
        let mut reg = Self::new();
        for name in ["camera", "microphone", "gps", "screen"] {
            reg.register_sensor(name).expect("fresh registry");
        }
        let standard = [
            (
                "capture_picture",
                "camera",
                "capture pictures",
                "capture pictures",
            ),
            ("record_audio", "microphone", "record audio", "record audio"),
            (
                "read_location",
                "gps",
                "access the GPS receiver to record your location",
                "access this device's location",
            ),
            (
                "capture_screen",
                "screen",
                "capture the content on the screen",
                "capture the content on the screen",
            ),
        ];
        for (op, sensor, phrase, first_use) in standard {
            reg.register_operation(op, &[sensor], phrase, first_use)
                .expect("fresh registry");
        }
        reg
    }

    pub fn register_program(
        &mut self,
        name: &str,
        identity_mark: &str,
    ) -> Result<ProgramId, DomainError> {
        self.register_program_with_noun(name, identity_mark, None)
    }

    pub fn register_program_with_noun(
        &mut self,
        name: &str,
        identity_mark: &str,
        noun: Option<&str>,
    ) -> Result<ProgramId, DomainError> {
        let name = name.trim();
        let identity_mark = identity_mark.trim();
        if name.is_empty() {
            return Err(DomainError::EmptyName);
        }
        if identity_mark.is_empty() {
            return Err(DomainError::EmptyIdentityMark);
        }
        if self
            .programs
            .iter()
            .any(|p| p.name == name && p.identity_mark == identity_mark)
        {
            return Err(DomainError::DuplicateProgram {
                name: name.to_string(),
                mark: identity_mark.to_string(),
            });
        }
        let id = ProgramId(self.programs.len() as u32);
        self.programs.push(ProgramRecord {
            id,
            name: name.to_string(),
            identity_mark: identity_mark.to_string(),
            noun: noun.map(str::to_string).filter(|n| !n.trim().is_empty()),
        });
        Ok(id)
    }

    pub fn register_widget<I, S>(
        &mut self,
        label: &str,
        kind: WidgetKind,
        aliases: I,
    ) -> Result<Widget, DomainError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let canonical = normalize_label(label);
        if canonical.is_empty() {
            return Err(DomainError::EmptyLabel);
        }
        let mut set = BTreeSet::new();
        set.insert(canonical);
        for alias in aliases {
            let alias = normalize_label(alias.as_ref());
            if !alias.is_empty() {
                set.insert(alias);
            }
        }
        for alias in &set {
            if let Some(existing) = self.aliases.get(alias) {
                return Err(DomainError::AliasCollision {
                    alias: alias.clone(),
                    existing: self.widgets[existing.0 as usize].label.clone(),
                });
            }
        }
        let id = WidgetId(self.widgets.len() as u32);
        for alias in &set {
            self.aliases.insert(alias.clone(), id);
        }
        let widget = Widget {
            id,
            kind,
            label: label.trim().to_string(),
            aliases: set,
        };
        self.widgets.push(widget.clone());
        Ok(widget)
    }

    pub fn resolve_widget(&self, label: &str) -> Result<&Widget, DomainError> {
        self.aliases
            .get(&normalize_label(label))
            .map(|id| &self.widgets[id.0 as usize])
            .ok_or_else(|| DomainError::UnknownWidget(label.to_string()))
    }

    pub fn register_sensor(&mut self, name: &str) -> Result<SensorId, DomainError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(DomainError::EmptyName);
        }
        if self.sensors.iter().any(|s| s.name == name) {
            return Err(DomainError::DuplicateSensor(name.to_string()));
        }
        let id = SensorId(self.sensors.len() as u16);
        self.sensors.push(SensorRecord {
            id,
            name: name.to_string(),
        });
        Ok(id)
    }

    pub fn register_operation(
        &mut self,
        name: &str,
        sensors: &[&str],
        phrase: &str,
        first_use_phrase: &str,
    ) -> Result<OperationId, DomainError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(DomainError::EmptyName);
        }
        if self.operations.iter().any(|o| o.name == name) {
            return Err(DomainError::DuplicateOperation(name.to_string()));
        }
        if sensors.is_empty() {
            return Err(DomainError::OperationWithoutSensor(name.to_string()));
        }
        let sensors = sensors
            .iter()
            .map(|s| self.sensor_by_name(s))
            .collect::<Result<Vec<_>, _>>()?;
        let id = OperationId(self.operations.len() as u16);
        let phrase = if phrase.trim().is_empty() {
            name.replace('_', " ")
        } else {
            phrase.trim().to_string()
        };
        let first_use_phrase = if first_use_phrase.trim().is_empty() {
            phrase.clone()
        } else {
            first_use_phrase.trim().to_string()
        };
        self.operations.push(OperationRecord {
            id,
            name: name.to_string(),
            sensors,
            phrase,
            first_use_phrase,
        });
        Ok(id)
    }

    pub fn program(&self, id: ProgramId) -> Result<&ProgramRecord, DomainError> {
        self.programs
            .get(id.0 as usize)
            .ok_or(DomainError::UnknownProgram(id))
    }

    pub fn widget(&self, id: WidgetId) -> Result<&Widget, DomainError> {
        self.widgets
            .get(id.0 as usize)
            .ok_or(DomainError::UnknownWidgetId(id))
    }

    pub fn sensor(&self, id: SensorId) -> Result<&SensorRecord, DomainError> {
        self.sensors
            .get(id.0 as usize)
            .ok_or_else(|| DomainError::UnknownSensor(id.to_string()))
    }

    pub fn operation(&self, id: OperationId) -> Result<&OperationRecord, DomainError> {
        self.operations
            .get(id.0 as usize)
            .ok_or_else(|| DomainError::UnknownOperation(id.to_string()))
    }

    /// Programs whose display name is exactly `name`.
    pub fn programs_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = ProgramId> + 'a {
        self.programs
            .iter()
            .filter(move |p| p.name == name)
            .map(|p| p.id)
    }

    pub fn sensor_by_name(&self, name: &str) -> Result<SensorId, DomainError> {
        self.sensors
            .iter()
            .find(|s| s.name == name.trim())
            .map(|s| s.id)
            .ok_or_else(|| DomainError::UnknownSensor(name.to_string()))
    }

    pub fn operation_by_name(&self, name: &str) -> Result<OperationId, DomainError> {
        self.operations
            .iter()
            .find(|o| o.name == name.trim())
            .map(|o| o.id)
            .ok_or_else(|| DomainError::UnknownOperation(name.to_string()))
    }

    pub fn programs(&self) -> &[ProgramRecord] {
        &self.programs
    }

    pub fn widgets(&self) -> &[Widget] {
        &self.widgets
    }

    pub fn sensors(&self) -> &[SensorRecord] {
        &self.sensors
    }

    pub fn operations(&self) -> &[OperationRecord] {
        &self.operations
    }

    pub fn check_compatible(&self, op: OperationId, sensor: SensorId) -> Result<(), DomainError> {
        let record = self.operation(op)?;
        let sensor_record = self.sensor(sensor)?;
        if record.sensors.contains(&sensor) {
            Ok(())
        } else {
            Err(DomainError::IncompatibleOperation {
                op: record.name.clone(),
                sensor: sensor_record.name.clone(),
            })
        }
    }

    pub fn input_event(
        &self,
        id: EventId,
        widget: WidgetId,
        program: ProgramId,
        t: Timestamp,
    ) -> Result<InputEvent, DomainError> {
        self.widget(widget)?;
        self.program(program)?;
        Ok(InputEvent {
            id,
            widget,
            program,
            t,
        })
    }

    pub fn handoff_event(
        &self,
        id: EventId,
        from: ProgramId,
        to: ProgramId,
        t: Timestamp,
        label: Option<String>,
        provenance: Option<EventId>,
    ) -> Result<HandoffEvent, DomainError> {
        self.program(from)?;
        self.program(to)?;
        if from == to {
            return Err(DomainError::SelfHandoff(from));
        }
        Ok(HandoffEvent {
            id,
            from,
            to,
            t,
            label,
            provenance,
        })
    }

    pub fn operation_request(
        &self,
        id: EventId,
        program: ProgramId,
        op: OperationId,
        sensor: SensorId,
        t: Timestamp,
    ) -> Result<OperationRequest, DomainError> {
        self.program(program)?;
        self.check_compatible(op, sensor)?;
        Ok(OperationRequest {
            id,
            program,
            op,
            sensor,
            t,
        })
    }

    /// Rebuilds the alias index after deserialization.
    pub fn reindex(&mut self) {
        self.aliases = self
            .widgets
            .iter()
            .flat_map(|w| w.aliases.iter().map(move |a| (a.clone(), w.id)))
            .collect();
    }
}
