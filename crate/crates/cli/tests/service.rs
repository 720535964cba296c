use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use gsi_cli::service::{Service, ServiceContext};
use gsi_core::rng::rng_for;
use gsi_core::simulator::{run_experiment, SimConfig, UserModel};
use gsi_core::wire::Hello;
use gsi_core::{
    Catalog, CommandRecord, GazeSample, GraspType, GsiKind, MemoryTransport, Phase, PhaseEvent,
    SessionConfig, SessionLog, SuiteConfig, SuiteFile, WireMessage,
};
use rand::Rng;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn small_suite() -> SuiteFile {
    let config = SuiteConfig {
        seed: 9,
        n_sets: 5,
        balance_tolerance: 0.3,
        ..SuiteConfig::default()
    };
    SuiteFile::build(&config, &Catalog::default()).unwrap()
}

struct Harness {
    url: String,
    sink: MemoryTransport,
    logs: tempfile::TempDir,
}

async fn start(session: SessionConfig, suite: SuiteFile) -> Harness {
    let logs = tempfile::tempdir().unwrap();
    let sink = MemoryTransport::default();
    let ctx = ServiceContext::new(
        session,
        suite,
        logs.path().to_path_buf(),
        Some(Box::new(sink.clone())),
        100,
    )
    .unwrap();
    let service = Service::bind("127.0.0.1:0".parse().unwrap(), ctx)
        .await
        .unwrap();
    let url = format!("ws://{}", service.local_addr().unwrap());
    tokio::spawn(service.run());
    Harness { url, sink, logs }
}

async fn connect(url: &str) -> Ws {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn send(ws: &mut Ws, msg: &WireMessage) {
    ws.send(Message::text(msg.to_line())).await.unwrap();
}

/// Reads replies until one satisfies `done`, returning all of them.
async fn read_until(ws: &mut Ws, done: impl Fn(&WireMessage) -> bool) -> Vec<WireMessage> {
    let mut out = Vec::new();
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("reply within 10 s")
            .expect("stream open")
            .unwrap();
        let Message::Text(text) = frame else { continue };
        let msg = WireMessage::parse(&text).unwrap();
        let stop = done(&msg);
        out.push(msg);
        if stop {
            return out;
        }
    }
}

/// Sends `msg` and collects replies up to and including the panel state
/// (or error) that closes the reply batch.
async fn exchange(ws: &mut Ws, msg: &WireMessage) -> Vec<WireMessage> {
    send(ws, msg).await;
    read_until(ws, |m| {
        matches!(
            m,
            WireMessage::PanelState { .. } | WireMessage::Error { .. }
        )
    })
    .await
}

async fn hello(ws: &mut Ws, h: Hello) -> String {
    let replies = exchange(ws, &WireMessage::Hello(h)).await;
    match &replies[0] {
        WireMessage::Hello(ack) => ack.session.clone().unwrap(),
        other => panic!("expected hello ack, got {other:?}"),
    }
}

async fn wait_for_commands(sink: &MemoryTransport, n: usize) -> Vec<CommandRecord> {
    for _ in 0..200 {
        let lines = sink.lines();
        if lines.len() >= n {
            return lines
                .iter()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect();
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("sink received {} of {n} commands", sink.lines().len());
}

async fn wait_for_log(dir: &Path, name: &str) -> SessionLog {
    let path = dir.join(format!("{name}.jsonl"));
    for _ in 0..200 {
        if let Ok(log) = SessionLog::load(&path) {
            return log;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("no log at {}", path.display());
}

fn gaze_on(grasp: GraspType, t: u64) -> WireMessage {
    let (x, y) = SessionConfig::default()
        .backend
        .panel
        .icon_rect(grasp)
        .center();
    WireMessage::Gaze(GazeSample {
        t,
        x,
        y,
        valid: true,
    })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn dwell_on_hook_selects_and_emits_a_command() {
    let h = start(SessionConfig::default(), small_suite()).await;
    let mut ws = connect(&h.url).await;
    let id = hello(&mut ws, Hello::default()).await;
    exchange(
        &mut ws,
        &WireMessage::Phase(PhaseEvent {
            t: 0,
            phase: Phase::Operation,
        }),
    )
    .await;

    let mut replies = Vec::new();
    for t in (100..=350).step_by(10) {
        replies.extend(exchange(&mut ws, &gaze_on(GraspType::Hook, t)).await);
    }
    let selections: Vec<_> = replies
        .iter()
        .filter_map(|m| match m {
            WireMessage::Selection(s) => Some(*s),
            _ => None,
        })
        .collect();
    assert_eq!(selections.len(), 1);
    assert_eq!(selections[0].grasp, GraspType::Hook);
    assert_eq!(selections[0].t, 300);
    let pos = replies
        .iter()
        .position(|m| matches!(m, WireMessage::Selection(_)))
        .unwrap();
    let WireMessage::Command(cmd) = &replies[pos + 1] else {
        panic!("command must follow the selection: {:?}", replies[pos + 1]);
    };
    assert_eq!(
        (cmd.grasp, cmd.seq, cmd.session.as_str()),
        (GraspType::Hook, 0, id.as_str())
    );
    let WireMessage::PanelState { latched, .. } = replies.last().unwrap() else {
        panic!()
    };
    assert_eq!(*latched, Some(GraspType::Hook));

    let sunk = wait_for_commands(&h.sink, 1).await;
    assert_eq!(sunk, vec![cmd.clone()]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn malformed_line_gets_an_error_and_the_session_continues() {
    let h = start(SessionConfig::default(), small_suite()).await;
    let mut ws = connect(&h.url).await;
    ws.send(Message::text("{\"type\":\"gaze\",\"t\":"))
        .await
        .unwrap();
    let replies = read_until(&mut ws, |_| true).await;
    let WireMessage::Error { code, .. } = &replies[0] else {
        panic!("{replies:?}")
    };
    assert_eq!(code, "parse");

    ws.send(Message::text("{\"type\":\"teleport\"}"))
        .await
        .unwrap();
    let replies = read_until(&mut ws, |_| true).await;
    assert!(matches!(&replies[0], WireMessage::Error { code, .. } if code == "parse"));

    let replies = exchange(
        &mut ws,
        &WireMessage::Phase(PhaseEvent {
            t: 5,
            phase: Phase::Operation,
        }),
    )
    .await;
    let WireMessage::PanelState { phase, target, .. } = replies.last().unwrap() else {
        panic!()
    };
    assert_eq!(*phase, Some(Phase::Operation));
    assert!(target.is_some());

    let replies = exchange(&mut ws, &gaze_on(GraspType::Pinch, 1)).await;
    assert!(matches!(&replies[0], WireMessage::Error { code, .. } if code == "rejected"));
    let replies = exchange(
        &mut ws,
        &WireMessage::Tap {
            t: 6,
            grasp: GraspType::Pinch,
        },
    )
    .await;
    assert!(matches!(&replies[0], WireMessage::Error { code, .. } if code == "rejected"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn several_lines_in_one_frame_are_processed_in_order() {
    let h = start(SessionConfig::default(), small_suite()).await;
    let mut ws = connect(&h.url).await;
    let batch = [
        WireMessage::Phase(PhaseEvent {
            t: 0,
            phase: Phase::Operation,
        })
        .to_line(),
        gaze_on(GraspType::Lateral, 10).to_line(),
        gaze_on(GraspType::Lateral, 110).to_line(),
        gaze_on(GraspType::Lateral, 210).to_line(),
    ]
    .join("\n");
    ws.send(Message::text(batch)).await.unwrap();
    let replies = read_until(&mut ws, |m| matches!(m, WireMessage::Command(_))).await;
    let panels: Vec<_> = replies
        .iter()
        .filter_map(|m| match m {
            WireMessage::PanelState { t, .. } => *t,
            _ => None,
        })
        .collect();
    assert_eq!(panels, vec![0, 10, 110]);
    assert!(
        matches!(&replies[replies.len() - 2], WireMessage::Selection(s) if s.grasp == GraspType::Lateral && s.t == 210)
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn two_clients_have_independent_sessions() {
    let h = start(SessionConfig::default(), small_suite()).await;
    let mut a = connect(&h.url).await;
    let mut b = connect(&h.url).await;
    let id_a = hello(
        &mut a,
        Hello {
            session: Some("alpha".into()),
            ..Hello::default()
        },
    )
    .await;
    let id_b = hello(
        &mut b,
        Hello {
            session: Some("beta".into()),
            gsi_kind: Some(GsiKind::App),
            set_index: Some(2),
            ..Hello::default()
        },
    )
    .await;
    assert_eq!((id_a.as_str(), id_b.as_str()), ("alpha", "beta"));

    exchange(
        &mut a,
        &WireMessage::Phase(PhaseEvent {
            t: 0,
            phase: Phase::Operation,
        }),
    )
    .await;
    exchange(
        &mut b,
        &WireMessage::Phase(PhaseEvent {
            t: 0,
            phase: Phase::Operation,
        }),
    )
    .await;
    for t in [10, 110, 210] {
        exchange(&mut a, &gaze_on(GraspType::Tripod, t)).await;
    }
    exchange(
        &mut b,
        &WireMessage::Tap {
            t: 50,
            grasp: GraspType::Hook,
        },
    )
    .await;
    exchange(
        &mut b,
        &WireMessage::Tap {
            t: 60,
            grasp: GraspType::Pinch,
        },
    )
    .await;

    let commands = wait_for_commands(&h.sink, 3).await;
    let seqs = |s: &str| -> Vec<(u64, GraspType)> {
        commands
            .iter()
            .filter(|c| c.session == s)
            .map(|c| (c.seq, c.grasp))
            .collect()
    };
    assert_eq!(seqs("alpha"), vec![(0, GraspType::Tripod)]);
    assert_eq!(
        seqs("beta"),
        vec![(0, GraspType::Hook), (1, GraspType::Pinch)]
    );

    a.close(None).await.unwrap();
    b.close(None).await.unwrap();
    let log_a = wait_for_log(h.logs.path(), "alpha").await;
    let log_b = wait_for_log(h.logs.path(), "beta").await;
    assert_eq!(log_a.header.gsi_kind, GsiKind::IGsi);
    assert_eq!(log_b.header.gsi_kind, GsiKind::App);
    assert_eq!(log_b.header.set.set_index, 2);
    assert_eq!(log_a.selections().count(), 1);
    assert_eq!(log_b.selections().count(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn live_sessions_match_offline_replay() {
    let suite = small_suite();
    let sim = SimConfig {
        n_subjects: 1,
        seed: 21,
        ..SimConfig::default()
    };
    let models = vec![UserModel::default()];
    let logs: Vec<SessionLog> = run_experiment(&sim, &suite, &models)
        .unwrap()
        .into_iter()
        .filter(|l| l.header.set.set_index == 1)
        .collect();
    assert_eq!(logs.len(), 4);

    let h = start(sim.session.clone(), suite).await;
    for recorded in &logs {
        let hd = &recorded.header;
        let mut ws = connect(&h.url).await;
        let name = format!("live-{}", hd.gsi_kind);
        hello(
            &mut ws,
            Hello {
                session: Some(name.clone()),
                gsi_kind: Some(hd.gsi_kind),
                subject_id: Some(hd.subject_id.clone()),
                set_index: Some(hd.set.set_index),
                feedback: Some(hd.config.feedback),
                ..Hello::default()
            },
        )
        .await;
        let inputs: Vec<_> = recorded
            .events
            .iter()
            .filter_map(|e| e.as_input())
            .collect();
        let batch: Vec<String> = inputs
            .iter()
            .map(|i| WireMessage::from_input(i).to_line())
            .collect();
        for chunk in batch.chunks(64) {
            ws.send(Message::text(chunk.join("\n"))).await.unwrap();
        }
        let mut live_trials = Vec::new();
        let mut panels = 0;
        while panels < inputs.len() {
            for m in read_until(&mut ws, |m| matches!(m, WireMessage::PanelState { .. })).await {
                match m {
                    WireMessage::Trial(t) => live_trials.push(t),
                    WireMessage::Error { message, .. } => panic!("{message}"),
                    _ => {}
                }
            }
            panels += 1;
        }
        let expected: Vec<_> = recorded.trials().cloned().collect();
        assert_eq!(live_trials, expected, "{}", hd.gsi_kind);
        ws.close(None).await.unwrap();

        let saved = wait_for_log(h.logs.path(), &name).await;
        assert_eq!(saved.to_jsonl(), recorded.to_jsonl(), "{}", hd.gsi_kind);
        let outcome = gsi_core::replay(&saved).unwrap();
        assert!(outcome.is_identical());
        assert_eq!(outcome.trials, expected);
    }
}

/// Random App tap scripts from several concurrent clients; every session's
/// command stream must equal its selection stream.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn command_order_follows_selection_order_under_concurrency() {
    let h = Arc::new(
        start(
            SessionConfig {
                gsi_kind: GsiKind::App,
                ..SessionConfig::default()
            },
            small_suite(),
        )
        .await,
    );
    let mut tasks = Vec::new();
    for client in 0..6u64 {
        let h = h.clone();
        tasks.push(tokio::spawn(async move {
            let mut rng = rng_for(77, &[client]);
            let mut ws = connect(&h.url).await;
            let name = format!("c{client}");
            hello(
                &mut ws,
                Hello {
                    session: Some(name.clone()),
                    ..Hello::default()
                },
            )
            .await;
            let mut t = 0;
            let mut selections = Vec::new();
            exchange(
                &mut ws,
                &WireMessage::Phase(PhaseEvent {
                    t,
                    phase: Phase::Operation,
                }),
            )
            .await;
            for _ in 0..rng.random_range(5..40) {
                t += rng.random_range(1..50);
                let grasp = GraspType::ALL[rng.random_range(0..6)];
                for m in exchange(&mut ws, &WireMessage::Tap { t, grasp }).await {
                    if let WireMessage::Selection(s) = m {
                        selections.push(s.grasp);
                    }
                }
                if rng.random_bool(0.3) {
                    tokio::time::sleep(Duration::from_millis(rng.random_range(0..5))).await;
                }
            }
            ws.close(None).await.unwrap();
            (name, selections)
        }));
    }
    let mut expected = Vec::new();
    for task in tasks {
        expected.push(task.await.unwrap());
    }
    let total = expected.iter().map(|e| e.1.len()).sum();
    let commands = wait_for_commands(&h.sink, total).await;
    assert_eq!(commands.len(), total);
    for (name, selections) in expected {
        let mine: Vec<_> = commands.iter().filter(|c| c.session == name).collect();
        let seqs: Vec<u64> = mine.iter().map(|c| c.seq).collect();
        assert_eq!(seqs, (0..selections.len() as u64).collect::<Vec<_>>());
        let grasps: Vec<GraspType> = mine.iter().map(|c| c.grasp).collect();
        assert_eq!(grasps, selections);
        let log = wait_for_log(h.logs.path(), &name).await;
        let logged: Vec<GraspType> = log.selections().map(|s| s.grasp).collect();
        assert_eq!(logged, grasps);
    }
}
