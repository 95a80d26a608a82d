use super::*;
use crate::authz::{RecordedAnswers, ScriptedPolicy};
use crate::domain::WidgetKind;

struct World {
    reg: Arc<Registry>,
    handlers: Handlers,
    assistant: ProgramId,
    capture: ProgramId,
    notes: ProgramId,
    voice: WidgetId,
    button: WidgetId,
}

fn world() -> World {
    let mut reg = Registry::with_standard_sensors();
    let assistant = reg.register_program("Smart Assistant", "SA").unwrap();
    let capture = reg
        .register_program_with_noun("Screen Capture", "SC", Some("service"))
        .unwrap();
    let notes = reg
        .register_program_with_noun("Notes", "N", Some("app"))
        .unwrap();
    let voice = reg
        .register_widget("create a note", WidgetKind::VoiceCommand, ["new note"])
        .unwrap()
        .id;
    let button = reg
        .register_widget("refresh", WidgetKind::GuiWidget, Vec::<&str>::new())
        .unwrap()
        .id;
    let screen = reg.sensor_by_name("screen").unwrap();
    let capture_screen = reg.operation_by_name("capture_screen").unwrap();
    let mut handlers = Handlers::new();
    handlers
        .insert(
            HandlerSpec {
                program: assistant,
                trigger: Trigger::Widget(voice),
                actions: vec![
                    Action::Handoff {
                        to: capture,
                        label: None,
                        after: 5,
                    },
                    Action::Handoff {
                        to: notes,
                        label: None,
                        after: 5,
                    },
                    Action::Complete { after: 2 },
                ],
            },
            &reg,
        )
        .unwrap();
    handlers
        .insert(
            HandlerSpec {
                program: capture,
                trigger: Trigger::Handoff(None),
                actions: vec![
                    Action::Request {
                        op: capture_screen,
                        sensor: screen,
                        after: 4,
                    },
                    Action::Complete { after: 1 },
                ],
            },
            &reg,
        )
        .unwrap();
    World {
        reg: Arc::new(reg),
        handlers,
        assistant,
        capture,
        notes,
        voice,
        button,
    }
}

fn engine(w: &World, config: SchedulerConfig, authorizer: Box<dyn Authorizer>) -> Engine {
    Engine::new(
        w.reg.clone(),
        Arc::new(w.handlers.clone()),
        config,
        Mode::Entrust,
        authorizer,
    )
    .with_tracing()
}

fn allow() -> Box<dyn Authorizer> {
    Box::new(ScriptedPolicy::allow_all())
}

#[test]
fn voice_command_yields_one_prompt_and_a_three_edge_path() {
    let w = world();
    let mut e = engine(&w, SchedulerConfig::default(), allow());
    let input = e.input(w.voice, w.assistant, Timestamp(100)).unwrap();
    let ticket = e.submit(MediatedEvent::Input(input)).unwrap();
    assert_eq!(ticket.admission, Admission::Delivered);
    e.run_until_idle();

    assert_eq!(e.prompts().len(), 1);
    assert_eq!(
        e.prompts()[0].text,
        "In response to your voice command \"create a note\", allow Smart Assistant to \
         activate the Screen Capture service to capture the content on the screen?"
    );
    // prompt fires once the window is over
    assert_eq!(e.prompts()[0].t, Timestamp(251));
    let d = &e.decisions()[0];
    assert_eq!(d.decision.outcome, Outcome::Allowed(AllowedBy::Prompted));
    let path = d.decision.path.as_ref().unwrap();
    assert_eq!(path.edge_count(), 3);
    assert_eq!(path.programs(), vec![w.assistant, w.capture]);
    assert_eq!(d.request.t, Timestamp(109));
    assert!(e.is_idle());
    assert_eq!(e.graphs().live_count(), 0);
    assert_eq!(e.graphs().sealed_count(), 1);

    // same command again: silent
    let again = e.input(w.voice, w.assistant, Timestamp(1000)).unwrap();
    e.submit(MediatedEvent::Input(again)).unwrap();
    e.run_until_idle();
    assert_eq!(e.prompts().len(), 1);
    assert_eq!(
        e.decisions()[1].decision.outcome,
        Outcome::Allowed(AllowedBy::Cached)
    );
    assert_eq!(e.decisions()[1].t, Timestamp(1009));
}

#[test]
fn denied_prompt_is_not_cached() {
    let w = world();
    let mut e = engine(
        &w,
        SchedulerConfig::default(),
        Box::new(RecordedAnswers::new([Verdict::Deny, Verdict::Allow])),
    );
    for t in [0, 1000] {
        let i = e.input(w.voice, w.assistant, Timestamp(t)).unwrap();
        e.submit(MediatedEvent::Input(i)).unwrap();
    }
    e.run_until_idle();
    let outcomes: Vec<_> = e.decisions().iter().map(|d| d.decision.outcome).collect();
    assert_eq!(
        outcomes,
        vec![
            Outcome::Denied(DeniedBy::Prompted),
            Outcome::Allowed(AllowedBy::Prompted)
        ]
    );
}

#[test]
fn busy_program_holds_background_handoff() {
    let w = world();
    let mut e = engine(&w, SchedulerConfig::default(), allow());
    let input = e.input(w.voice, w.assistant, Timestamp(0)).unwrap();
    e.submit(MediatedEvent::Input(input)).unwrap();
    // Screen Capture receives its derived handoff at 5 and works until 10.
    let bg = e.handoff(w.notes, w.capture, Timestamp(7), None).unwrap();
    let bg_id = bg.id;
    let ticket = e.submit(MediatedEvent::Handoff(bg)).unwrap();
    assert_eq!(ticket.admission, Admission::Held);
    assert_eq!(e.program_status(w.capture).low, 1);
    let log = e.advance(Timestamp(20));
    assert!(log.contains(&Delivery::Delivered {
        event: bg_id,
        program: w.capture,
        t: Timestamp(10),
        delay_ms: 3,
    }));
    let stats = e.stats_snapshot();
    assert_eq!(stats.delayed_events, 1);
    assert_eq!(stats.max_delay_ms, 3);
    assert_eq!(stats.max_input_derived_delay_ms, 0);
}

#[test]
fn input_derived_events_overtake_background_ones() {
    for two_level in [true, false] {
        let w = world();
        let config = SchedulerConfig {
            two_level,
            ..SchedulerConfig::default()
        };
        let mut e = engine(&w, config, allow());
        let first = e.input(w.button, w.notes, Timestamp(0)).unwrap();
        e.submit(MediatedEvent::Input(first)).unwrap();
        let bg = e.handoff(w.capture, w.notes, Timestamp(1), None).unwrap();
        let bg_id = bg.id;
        e.submit(MediatedEvent::Handoff(bg)).unwrap();
        let second = e.input(w.button, w.notes, Timestamp(2)).unwrap();
        let second_id = second.id;
        // different widget would be held; the same one is a repeat
        let other = e.input(w.voice, w.notes, Timestamp(2)).unwrap();
        let other_id = other.id;
        assert_eq!(
            e.submit(MediatedEvent::Input(second)).unwrap().admission,
            Admission::Repeat
        );
        assert_eq!(
            e.submit(MediatedEvent::Input(other)).unwrap().admission,
            Admission::Held
        );
        let order: Vec<EventId> = e
            .run_until_idle()
            .into_iter()
            .filter_map(|d| match d {
                Delivery::Delivered { event, .. } => Some(event),
                Delivery::Expired { .. } => None,
            })
            .collect();
        let expect = if two_level {
            vec![second_id, other_id, bg_id]
        } else {
            vec![second_id, bg_id, other_id]
        };
        assert_eq!(order[1..], expect[..], "two_level={two_level}");
    }
}

#[test]
fn repeated_input_extends_the_window() {
    let w = world();
    let mut e = engine(&w, SchedulerConfig::default(), allow());
    let first = e.input(w.voice, w.assistant, Timestamp(0)).unwrap();
    let root = first.id;
    e.submit(MediatedEvent::Input(first)).unwrap();
    let repeat = e.input(w.voice, w.assistant, Timestamp(3)).unwrap();
    let r = e.submit(MediatedEvent::Input(repeat)).unwrap();
    assert_eq!(r.admission, Admission::Repeat);
    assert_eq!(
        e.graphs().live_graph(root).unwrap().deadline(),
        Timestamp(153)
    );
    e.run_until_idle();
    assert_eq!(e.stats_snapshot().repeat_inputs, 1);
    // two handler runs, one aggregated prompt for the root
    assert_eq!(e.decisions().len(), 2);
    assert_eq!(e.prompts().len(), 1);
    assert_eq!(e.prompts()[0].t, Timestamp(154));
}

#[test]
fn queued_event_expires_after_the_window() {
    let mut reg = Registry::with_standard_sensors();
    let slow = reg.register_program("Slow", "S").unwrap();
    let other = reg.register_program("Other", "O").unwrap();
    let w = reg
        .register_widget("go", WidgetKind::GuiWidget, Vec::<&str>::new())
        .unwrap()
        .id;
    let mut handlers = Handlers::new();
    handlers
        .insert(
            HandlerSpec {
                program: slow,
                trigger: Trigger::Widget(w),
                actions: vec![Action::Complete { after: 400 }],
            },
            &reg,
        )
        .unwrap();
    let mut e = Engine::new(
        Arc::new(reg),
        Arc::new(handlers),
        SchedulerConfig::default(),
        Mode::Entrust,
        allow(),
    );
    let i = e.input(w, slow, Timestamp(0)).unwrap();
    e.submit(MediatedEvent::Input(i)).unwrap();
    let h = e.handoff(other, slow, Timestamp(10), None).unwrap();
    let id = h.id;
    e.submit(MediatedEvent::Handoff(h)).unwrap();
    assert_eq!(e.advance(Timestamp(10)).len(), 1);
    assert_eq!(e.advance(Timestamp(160)), vec![]);
    assert_eq!(
        e.advance(Timestamp(161)),
        vec![Delivery::Expired {
            event: id,
            program: slow,
            t: Timestamp(161)
        }]
    );
    e.run_until_idle();
    let stats = e.stats_snapshot();
    assert_eq!(stats.expired_events, 1);
    assert_eq!(stats.delayed_events, 1);
}

#[test]
fn full_queue_rejects() {
    let w = world();
    let config = SchedulerConfig {
        queue_bound: 2,
        ..SchedulerConfig::default()
    };
    let mut e = engine(&w, config, allow());
    let i = e.input(w.button, w.notes, Timestamp(0)).unwrap();
    e.submit(MediatedEvent::Input(i)).unwrap();
    for n in 0..2 {
        let h = e
            .handoff(w.capture, w.notes, Timestamp(1 + n), None)
            .unwrap();
        e.submit(MediatedEvent::Handoff(h)).unwrap();
    }
    let h = e.handoff(w.capture, w.notes, Timestamp(3), None).unwrap();
    let id = h.id;
    assert_eq!(
        e.submit(MediatedEvent::Handoff(h)),
        Err(EngineError::Backpressure {
            program: w.notes,
            event: id
        })
    );
    assert_eq!(e.stats_snapshot().rejected_events, 1);
}

#[test]
fn protocol_and_clock_errors() {
    let w = world();
    let mut e = engine(&w, SchedulerConfig::default(), allow());
    assert_eq!(
        e.complete_handling(w.notes, EventId(99)),
        Err(EngineError::ProtocolViolation {
            program: w.notes,
            event: EventId(99)
        })
    );
    e.advance(Timestamp(50));
    let late = e.input(w.button, w.notes, Timestamp(10)).unwrap();
    assert!(matches!(
        e.submit(MediatedEvent::Input(late)),
        Err(EngineError::ClockRewind { .. })
    ));
}

#[test]
fn explicit_completion_frees_the_program() {
    let w = world();
    let mut e = engine(&w, SchedulerConfig::default(), allow());
    let i = e.input(w.button, w.notes, Timestamp(0)).unwrap();
    let first = i.id;
    e.submit(MediatedEvent::Input(i)).unwrap();
    let h = e.handoff(w.capture, w.notes, Timestamp(1), None).unwrap();
    let next = h.id;
    e.submit(MediatedEvent::Handoff(h)).unwrap();
    assert_eq!(e.complete_handling(w.notes, first), Ok(Some(next)));
    assert_eq!(e.program_status(w.notes).in_flight, 1);
}

#[test]
fn without_serialization_emissions_become_ambiguous() {
    let w = world();
    let config = SchedulerConfig {
        ambiguity_prevention: false,
        ..SchedulerConfig::default()
    };
    let mut e = engine(&w, config, allow());
    let a = e.input(w.voice, w.assistant, Timestamp(0)).unwrap();
    let b = e.input(w.button, w.assistant, Timestamp(1)).unwrap();
    e.submit(MediatedEvent::Input(a)).unwrap();
    e.submit(MediatedEvent::Input(b)).unwrap();
    e.run_until_idle();
    let trace = e.take_trace();
    assert!(trace
        .iter()
        .any(|r| matches!(&r.body, TraceBody::Handoff { error: Some(_), .. })));
    assert_eq!(
        e.decisions()[0].decision.outcome,
        Outcome::Denied(DeniedBy::NoAttribution)
    );
    assert!(e.prompts().is_empty());
}

#[test]
fn first_use_and_unmediated_modes() {
    let w = world();
    let mut fu = Engine::new(
        w.reg.clone(),
        Arc::new(w.handlers.clone()),
        SchedulerConfig::default(),
        Mode::FirstUse,
        allow(),
    );
    for t in [0, 1000] {
        let i = fu.input(w.voice, w.assistant, Timestamp(t)).unwrap();
        fu.submit(MediatedEvent::Input(i)).unwrap();
    }
    fu.run_until_idle();
    assert_eq!(fu.prompts().len(), 1);
    assert_eq!(
        fu.prompts()[0].text,
        "Allow Screen Capture to capture the content on the screen?"
    );
    assert_eq!(fu.decisions()[0].t, Timestamp(9));
    assert!(fu
        .decisions()
        .iter()
        .all(|d| d.decision.outcome.is_allowed()));

    let mut open = Engine::new(
        w.reg.clone(),
        Arc::new(w.handlers.clone()),
        SchedulerConfig::default(),
        Mode::Unmediated,
        Box::new(ScriptedPolicy::deny_all()),
    );
    let i = open.input(w.voice, w.assistant, Timestamp(0)).unwrap();
    open.submit(MediatedEvent::Input(i)).unwrap();
    open.run_until_idle();
    assert!(open.prompts().is_empty());
    assert!(open.decisions()[0].decision.outcome.is_allowed());
}

#[test]
fn runs_are_deterministic() {
    let run = || {
        let w = world();
        let mut e = engine(&w, SchedulerConfig::default(), allow());
        for n in 0..20u64 {
            let i = e
                .input(
                    if n % 3 == 0 { w.button } else { w.voice },
                    if n % 2 == 0 { w.assistant } else { w.notes },
                    Timestamp(n * 7),
                )
                .unwrap();
            let _ = e.submit(MediatedEvent::Input(i));
        }
        e.run_until_idle();
        e.take_trace()
            .iter()
            .map(TraceRecord::to_line)
            .collect::<Vec<_>>()
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}
