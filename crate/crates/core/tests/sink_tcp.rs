use std::io::{BufRead, BufReader};
use std::net::TcpListener;

use gsi_core::domain::{SelectionCause, SelectionSource};
use gsi_core::sink::TcpTransport;
use gsi_core::{CommandCounter, CommandRecord, CommandSink, GraspType, SelectionEvent};

fn selection(t: u64, grasp: GraspType) -> SelectionEvent {
    SelectionEvent {
        t,
        grasp,
        source: SelectionSource::Fsm,
        cause: SelectionCause::Commit,
    }
}

#[test]
fn tcp_sink_delivers_buffered_commands_after_reconnect() {
    let addr = {
        let probe = TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap()
    };
    let mut sink = CommandSink::new(Some(Box::new(TcpTransport::new(addr.to_string()))), 100);
    let mut counter = CommandCounter::new("tcp");
    let sent = [GraspType::Spherical, GraspType::Tripod, GraspType::Pinch];
    for (i, &g) in sent.iter().enumerate() {
        sink.submit(counter.record(&selection(100 * i as u64, g)));
    }
    assert_eq!(sink.buffered(), 3);

    let listener = TcpListener::bind(addr).unwrap();
    assert!(sink.flush());
    assert_eq!(sink.buffered(), 0);
    let (stream, _) = listener.accept().unwrap();
    let received: Vec<CommandRecord> = BufReader::new(stream)
        .lines()
        .take(3)
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect();
    assert_eq!(
        received.iter().map(|r| r.seq).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    assert_eq!(
        received.iter().map(|r| r.grasp).collect::<Vec<_>>(),
        sent.to_vec()
    );
}
