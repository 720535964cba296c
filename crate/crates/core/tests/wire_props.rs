use gsi_core::domain::{SelectionCause, SelectionSource, StAnchor};
use gsi_core::session::DwellProgress;
use gsi_core::wire::Hello;
use gsi_core::{
    CommandRecord, EmgPattern, GazeSample, GraspType, GsiKind, ObjectItem, Phase, PhaseEvent,
    SelectionEvent, TrialRecord, WireMessage,
};
use proptest::option;
use proptest::prelude::*;

fn grasp() -> impl Strategy<Value = GraspType> {
    (0..6usize).prop_map(|i| GraspType::ALL[i])
}

fn phase() -> impl Strategy<Value = Phase> {
    prop_oneof![Just(Phase::Standby), Just(Phase::Operation)]
}

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1e300)
    ]
}

fn text() -> impl Strategy<Value = String> {
    "[ -~\u{e9}\u{4e2d}\"\\\\\n]{0,12}"
}

fn object() -> impl Strategy<Value = ObjectItem> {
    (any::<u32>(), text(), grasp()).prop_map(|(id, name, grasp)| ObjectItem { id, name, grasp })
}

fn selection() -> impl Strategy<Value = SelectionEvent> {
    let source = prop_oneof![
        Just(SelectionSource::Dwell),
        Just(SelectionSource::Fsm),
        Just(SelectionSource::Pr),
        Just(SelectionSource::Tap),
        Just(SelectionSource::Simulated),
    ];
    let cause = prop_oneof![
        Just(SelectionCause::Commit),
        Just(SelectionCause::Correction)
    ];
    (any::<u64>(), grasp(), source, cause).prop_map(|(t, grasp, source, cause)| SelectionEvent {
        t,
        grasp,
        source,
        cause,
    })
}

fn trial() -> impl Strategy<Value = TrialRecord> {
    (
        (any::<u32>(), any::<u32>(), any::<bool>(), object(), grasp()),
        (option::of(any::<u64>()), any::<u64>(), any::<u64>()),
        (
            prop::collection::vec(selection(), 0..4),
            option::of(grasp()),
            option::of(0.0..1e4f64),
            prop_oneof![Just(StAnchor::Fixation), Just(StAnchor::OperationEnter)],
            any::<bool>(),
            any::<u32>(),
            option::of(1..6u32),
        ),
    )
        .prop_map(
            |(
                (set_index, slot_index, scored, target_object, target_grasp),
                (t_first_fixation, t_operation_enter, t_operation_exit),
                (
                    selections,
                    final_grasp,
                    st_seconds,
                    st_anchor,
                    correct,
                    error_count,
                    ncc_required,
                ),
            )| TrialRecord {
                set_index,
                slot_index,
                scored,
                target_object,
                target_grasp,
                t_first_fixation,
                t_operation_enter,
                t_operation_exit,
                selections,
                final_grasp,
                st_seconds,
                st_anchor,
                correct,
                error_count,
                ncc_required,
            },
        )
}

fn hello() -> impl Strategy<Value = Hello> {
    (
        option::of(text()),
        option::of(text()),
        option::of((0..4usize).prop_map(|i| GsiKind::ALL[i])),
        option::of(text()),
        option::of(any::<u32>()),
        option::of(any::<bool>()),
    )
        .prop_map(
            |(schema_version, session, gsi_kind, subject_id, set_index, feedback)| Hello {
                schema_version,
                session,
                gsi_kind,
                subject_id,
                set_index,
                feedback,
            },
        )
}

fn message() -> impl Strategy<Value = WireMessage> {
    let pattern = prop_oneof![
        Just(EmgPattern::WaveIn),
        Just(EmgPattern::WaveOut),
        Just(EmgPattern::Fist),
        Just(EmgPattern::FingersSpread),
        Just(EmgPattern::DoubleTap),
        Just(EmgPattern::Synthetic),
    ];
    let dwell = option::of(
        (grasp(), 0.0..=1.0f64).prop_map(|(icon, progress)| DwellProgress { icon, progress }),
    );
    prop_oneof![
        hello().prop_map(WireMessage::Hello),
        (any::<u64>(), coord(), coord(), any::<bool>())
            .prop_map(|(t, x, y, valid)| WireMessage::Gaze(GazeSample { t, x, y, valid })),
        (any::<u64>(), grasp()).prop_map(|(t, grasp)| WireMessage::Tap { t, grasp }),
        any::<u64>().prop_map(|t| WireMessage::Cocontraction { t }),
        (any::<u64>(), pattern).prop_map(|(t, label)| WireMessage::EmgPattern { t, label }),
        (any::<u64>(), phase()).prop_map(|(t, phase)| WireMessage::Phase(PhaseEvent { t, phase })),
        any::<u64>().prop_map(|t| WireMessage::ObjectFixation { t }),
        (
            option::of(any::<u64>()),
            option::of(grasp()),
            dwell,
            option::of(phase()),
            option::of(object())
        )
            .prop_map(
                |(t, latched, dwell, phase, target)| WireMessage::PanelState {
                    t,
                    latched,
                    dwell,
                    phase,
                    target,
                }
            ),
        selection().prop_map(WireMessage::Selection),
        (any::<u64>(), grasp(), text(), any::<u64>()).prop_map(|(t, grasp, session, seq)| {
            WireMessage::Command(CommandRecord {
                t,
                grasp,
                session,
                seq,
            })
        }),
        trial().prop_map(WireMessage::Trial),
        (option::of(any::<u64>()), text(), text())
            .prop_map(|(t, code, message)| WireMessage::Error { t, code, message }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn every_message_round_trips(msg in message()) {
        let line = msg.to_line();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(WireMessage::parse(&line).unwrap(), msg);
    }

    #[test]
    fn inbound_inputs_survive_the_wire(msg in message()) {
        if let Some(input) = msg.to_input() {
            prop_assert_eq!(WireMessage::from_input(&input), msg.clone());
            prop_assert_eq!(WireMessage::parse(&msg.to_line()).unwrap().to_input(), Some(input));
        }
    }
}

#[test]
fn type_tags_are_the_documented_names() {
    let tags = [
        (WireMessage::Cocontraction { t: 1 }, "cocontraction"),
        (
            WireMessage::EmgPattern {
                t: 1,
                label: EmgPattern::Fist,
            },
            "emg_pattern",
        ),
        (WireMessage::ObjectFixation { t: 1 }, "object_fixation"),
        (WireMessage::Hello(Hello::default()), "hello"),
        (WireMessage::error("parse", "x"), "error"),
    ];
    for (msg, tag) in tags {
        let v: serde_json::Value = serde_json::from_str(&msg.to_line()).unwrap();
        assert_eq!(v["type"], tag);
    }
}
