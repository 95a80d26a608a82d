//! Authorization message text.
//!
//! Delegation prompts name the input that started the interaction, every
//! program on the chain and what the last one wants to do:
//!
//! ```text
//! In response to your voice command "take a selfie", allow Google Assistant to
//! activate the Basic Camera app to capture pictures, record audio, and access
//! the GPS receiver to record your location?
//! ```
//!
//! Paths that share the root are folded into one message. Paths with the same
//! program chain share a clause; a chain that branches off an earlier one gets
//! an `Also, allow ...` clause starting at the branching program.

use thiserror::Error;

use super::policy::Subject;
use crate::domain::{DomainError, ProgramId, Registry, WidgetKind};
use crate::graph::DelegationPath;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no paths to describe")]
    Empty,
    #[error("paths belong to different input events")]
    MixedRoots,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// "a", "a and b", "a, b, and c".
fn join_phrases(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

fn display_name(
    registry: &Registry,
    program: ProgramId,
    receiver: ProgramId,
) -> Result<String, DomainError> {
    let record = registry.program(program)?;
    Ok(match (&record.noun, program == receiver) {
        (Some(noun), false) => format!("the {} {noun}", record.name),
        _ => record.name.clone(),
    })
}

pub fn render_prompt(registry: &Registry, paths: &[DelegationPath]) -> Result<String, PromptError> {
    let first = paths.first().ok_or(PromptError::Empty)?;
    let root = &first.input;
    if paths.iter().any(|p| p.input.id != root.id) {
        return Err(PromptError::MixedRoots);
    }
    let widget = registry.widget(root.widget)?;
    let lead = match widget.kind {
        WidgetKind::VoiceCommand => {
            format!("In response to your voice command \"{}\"", widget.label)
        }
        WidgetKind::GuiWidget => format!("In response to your tap on \"{}\"", widget.label),
    };

    // distinct chains in order of first appearance, each with its phrases
    let mut chains: Vec<(Vec<ProgramId>, Vec<String>)> = Vec::new();
    for path in paths {
        let programs = path.programs();
        let phrase = registry.operation(path.request.op)?.phrase.clone();
        match chains.iter_mut().find(|(c, _)| *c == programs) {
            Some((_, phrases)) => {
                if !phrases.contains(&phrase) {
                    phrases.push(phrase);
                }
            }
            None => chains.push((programs, vec![phrase])),
        }
    }

    let receiver = root.program;
    let mut clauses = Vec::with_capacity(chains.len());
    for (idx, (chain, phrases)) in chains.iter().enumerate() {
        let start = if idx == 0 {
            0
        } else {
            let shared = chains[..idx]
                .iter()
                .map(|(earlier, _)| {
                    earlier
                        .iter()
                        .zip(chain)
                        .take_while(|(a, b)| a == b)
                        .count()
                })
                .max()
                .unwrap_or(1);
            shared.max(1) - 1
        };
        let mut clause = format!("allow {}", display_name(registry, chain[start], receiver)?);
        for p in &chain[start + 1..] {
            clause.push_str(" to activate ");
            clause.push_str(&display_name(registry, *p, receiver)?);
        }
        clause.push_str(" to ");
        clause.push_str(&join_phrases(phrases));
        clauses.push(clause);
    }
    let mut text = format!("{lead}, {}", clauses[0]);
    for clause in &clauses[1..] {
        text.push_str(". Also, ");
        text.push_str(clause);
    }
    text.push('?');
    Ok(text)
}

/// Program names paired with their identity marks, in order of mention.
pub fn identity_marks(
    registry: &Registry,
    paths: &[DelegationPath],
) -> Result<Vec<(String, String)>, DomainError> {
    let mut seen = Vec::new();
    for p in paths.iter().flat_map(DelegationPath::programs) {
        if !seen.contains(&p) {
            seen.push(p);
        }
    }
    seen.into_iter()
        .map(|p| {
            registry
                .program(p)
                .map(|r| (r.name.clone(), r.identity_mark.clone()))
        })
        .collect()
}

pub fn first_use_prompt(
    registry: &Registry,
    program: ProgramId,
    op: crate::domain::OperationId,
) -> Result<String, DomainError> {
    Ok(format!(
        "Allow {} to {}?",
        registry.program(program)?.name,
        registry.operation(op)?.first_use_phrase
    ))
}

/// How a path reads to a policy rule.
pub fn subject_for(registry: &Registry, path: &DelegationPath) -> Result<Subject, DomainError> {
    Ok(Subject {
        widget: registry.widget(path.input.widget)?.label.clone(),
        programs: path
            .programs()
            .into_iter()
            .map(|p| registry.program(p).map(|r| r.name.clone()))
            .collect::<Result<_, _>>()?,
        op: registry.operation(path.request.op)?.name.clone(),
        sensor: registry.sensor(path.request.sensor)?.name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EventId, HandoffEvent, InputEvent, OperationRequest, Timestamp};

    struct Fixture {
        reg: Registry,
    }

    impl Fixture {
        fn new() -> Self {
            let mut reg = Registry::with_standard_sensors();
            reg.register_program("Google Assistant", "GA").unwrap();
            reg.register_program_with_noun("Basic Camera", "BC", Some("app"))
                .unwrap();
            reg.register_program_with_noun("Mobile Banking", "MB", Some("app"))
                .unwrap();
            reg.register_widget(
                "take a selfie",
                WidgetKind::VoiceCommand,
                Vec::<&str>::new(),
            )
            .unwrap();
            reg.register_widget("shutter", WidgetKind::GuiWidget, Vec::<&str>::new())
                .unwrap();
            Self { reg }
        }

        fn path(&self, widget: &str, chain: &[&str], op: &str, id: u64) -> DelegationPath {
            let pid = |n: &str| self.reg.programs_named(n).next().unwrap();
            let w = self.reg.resolve_widget(widget).unwrap().id;
            let input = InputEvent {
                id: EventId(1),
                widget: w,
                program: pid(chain[0]),
                t: Timestamp(0),
            };
            let handoffs = chain
                .windows(2)
                .enumerate()
                .map(|(i, pair)| HandoffEvent {
                    id: EventId(100 + id * 10 + i as u64),
                    from: pid(pair[0]),
                    to: pid(pair[1]),
                    t: Timestamp(1 + i as u64),
                    label: None,
                    provenance: Some(EventId(1)),
                })
                .collect();
            let op = self.reg.operation_by_name(op).unwrap();
            let sensor = self.reg.operation(op).unwrap().sensors[0];
            DelegationPath {
                input,
                handoffs,
                request: OperationRequest {
                    id: EventId(id),
                    program: pid(chain[chain.len() - 1]),
                    op,
                    sensor,
                    t: Timestamp(50),
                },
            }
        }
    }

    #[test]
    fn oxford_joining() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(join_phrases(&s(&["a"])), "a");
        assert_eq!(join_phrases(&s(&["a", "b"])), "a and b");
        assert_eq!(join_phrases(&s(&["a", "b", "c"])), "a, b, and c");
    }

    #[test]
    fn direct_request_has_no_activate_clause() {
        let f = Fixture::new();
        let p = f.path("shutter", &["Basic Camera"], "capture_picture", 1);
        assert_eq!(
            render_prompt(&f.reg, &[p]).unwrap(),
            "In response to your tap on \"shutter\", allow Basic Camera to capture pictures?"
        );
    }

    #[test]
    fn aggregated_leaves() {
        let f = Fixture::new();
        let chain = ["Google Assistant", "Basic Camera"];
        let paths = [
            f.path("take a selfie", &chain, "capture_picture", 1),
            f.path("take a selfie", &chain, "record_audio", 2),
            f.path("take a selfie", &chain, "read_location", 3),
        ];
        assert_eq!(
            render_prompt(&f.reg, &paths).unwrap(),
            "In response to your voice command \"take a selfie\", allow Google Assistant to \
             activate the Basic Camera app to capture pictures, record audio, and access the \
             GPS receiver to record your location?"
        );
    }

    #[test]
    fn branching_chain_gets_also_clause() {
        let f = Fixture::new();
        let paths = [
            f.path(
                "take a selfie",
                &["Google Assistant", "Basic Camera"],
                "capture_picture",
                1,
            ),
            f.path(
                "take a selfie",
                &["Google Assistant", "Basic Camera", "Mobile Banking"],
                "capture_picture",
                2,
            ),
        ];
        assert_eq!(
            render_prompt(&f.reg, &paths).unwrap(),
            "In response to your voice command \"take a selfie\", allow Google Assistant to \
             activate the Basic Camera app to capture pictures. Also, allow the Basic Camera \
             app to activate the Mobile Banking app to capture pictures?"
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let f = Fixture::new();
        let p = [f.path(
            "take a selfie",
            &["Google Assistant", "Basic Camera"],
            "record_audio",
            1,
        )];
        assert_eq!(render_prompt(&f.reg, &p), render_prompt(&f.reg, &p));
    }

    #[test]
    fn mixed_roots_are_refused() {
        let f = Fixture::new();
        let a = f.path(
            "take a selfie",
            &["Google Assistant", "Basic Camera"],
            "capture_picture",
            1,
        );
        let mut b = a.clone();
        b.input.id = EventId(2);
        assert_eq!(render_prompt(&f.reg, &[a, b]), Err(PromptError::MixedRoots));
        assert_eq!(render_prompt(&f.reg, &[]), Err(PromptError::Empty));
    }

    #[test]
    fn first_use_wording() {
        let f = Fixture::new();
        let bc = f.reg.programs_named("Basic Camera").next().unwrap();
        let loc = f.reg.operation_by_name("read_location").unwrap();
        assert_eq!(
            first_use_prompt(&f.reg, bc, loc).unwrap(),
            "Allow Basic Camera to access this device's location?"
        );
    }

    #[test]
    fn marks_in_mention_order() {
        let f = Fixture::new();
        let p = f.path(
            "take a selfie",
            &["Google Assistant", "Basic Camera"],
            "capture_picture",
            1,
        );
        assert_eq!(
            identity_marks(&f.reg, &[p]).unwrap(),
            vec![
                ("Google Assistant".to_string(), "GA".to_string()),
                ("Basic Camera".to_string(), "BC".to_string())
            ]
        );
    }
}
