use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};

use proptest::prelude::*;

use asap::bandit::{ArmId, PolicyState};
use asap::driver::{Driver, Policy, RunConfig};
use asap::environment::{Observation, Probe, ScriptedEnvironment};
use asap::protocol::{
    serve, Client, ClientError, Phase, ServeOptions, Session, SessionDefaults, WireFloat, WireMessage,
    WireSummary,
};
use asap::reward::GradientSummary;

const BIN: &str = env!("CARGO_BIN_EXE_asap");

fn probe_of(arm: usize) -> (f64, GradientSummary) {
    let loss = 0.4 + 0.1 * arm as f64;
    let dot = [0.6, -0.2, 0.3][arm % 3];
    (loss, GradientSummary::new(dot, 1.0, 1.0).unwrap())
}

fn report_of(turn: u64, arm: usize) -> (f64, GradientSummary) {
    let loss = 1.0 / (turn as f64 + arm as f64 + 1.0);
    let dot = ((turn as f64) * 0.7 + arm as f64).sin();
    (loss, GradientSummary::new(dot, 1.5, 2.0).unwrap())
}

fn in_process(k: usize, horizon: u64) -> Vec<usize> {
    let probes = (0..k)
        .map(|a| {
            let (loss_aux, summary) = probe_of(a);
            Probe { loss_aux, summary }
        })
        .collect();
    let env = ScriptedEnvironment::new(probes, |t, a: ArmId| {
        let (loss_aux, summary) = report_of(t, a.0);
        Observation {
            loss_target: f64::NAN,
            loss_aux,
            loss_aux_post: None,
            summary,
            target_loss_after: f64::NAN,
        }
    });
    let mut d = Driver::initialize(&RunConfig::external(horizon), Policy::Ucb, env).unwrap();
    d.run_to_end().unwrap();
    d.trace().selections().iter().map(|a| a.0).collect()
}

fn drive<R: BufRead, W: Write>(client: &mut Client<R, W>, horizon: u64) -> Vec<usize> {
    for a in 0..client.num_arms() {
        let (loss, s) = probe_of(a);
        client.probe(a, loss, s).unwrap();
    }
    (1..=horizon)
        .map(|t| {
            let arm = client.select().unwrap();
            let (loss, s) = report_of(t, arm);
            client.report(loss, s, None).unwrap();
            arm
        })
        .collect()
}

#[test]
fn stdio_session_matches_in_process_run() {
    let mut child = Command::new(BIN)
        .args(["serve", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let reader = BufReader::new(child.stdout.take().unwrap());
    let writer = child.stdin.take().unwrap();
    let mut client = Client::connect(reader, writer, 3, 5, None, None).unwrap();
    assert_eq!(client.num_arms(), 3);
    let picks = drive(&mut client, 5);
    client.shutdown().unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(picks, in_process(3, 5));
}

#[test]
fn long_session_matches_in_process_run() {
    let mut session = Session::new(SessionDefaults::default());
    let hello = WireMessage::Hello {
        protocol_version: "asap/1".into(),
        num_arms: 4,
        horizon: 100,
        beta: None,
        alpha_schedule: None,
    };
    assert!(matches!(session.handle(hello), WireMessage::Hello { .. }));
    for a in 0..4 {
        let (loss, s) = probe_of(a);
        let reply = session.handle(WireMessage::InitProbe { arm: a, loss_aux: WireFloat(loss), grad_summary: s.into() });
        assert!(matches!(reply, WireMessage::Ack { turn: 0, .. }));
    }
    let mut picks = Vec::new();
    for t in 1..=100 {
        let WireMessage::Selected { arm, .. } = session.handle(WireMessage::SelectRequest { turn: t }) else {
            panic!("no selection at turn {t}");
        };
        let (loss, s) = report_of(t, arm);
        let reply = session.handle(WireMessage::Report {
            turn: t,
            arm,
            loss_aux: WireFloat(loss),
            grad_summary: s.into(),
            loss_aux_post: None,
        });
        assert!(matches!(reply, WireMessage::Ack { .. }), "{reply:?}");
        picks.push(arm);
    }
    assert_eq!(picks, in_process(4, 100));
    let over = session.handle(WireMessage::SelectRequest { turn: 101 });
    assert!(matches!(over, WireMessage::Error { .. }));
}

#[test]
fn serve_writes_checkpoint_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = dir.path().join("policy.json");
    let trace = dir.path().join("session.csv");
    let options = ServeOptions { checkpoint_path: Some(checkpoint.clone()), trace_path: Some(trace.clone()) };
    let mut script = String::new();
    let mut session = Session::new(SessionDefaults::default());
    // build the transcript by driving a shadow session
    let mut push = |msg: WireMessage, shadow: &mut Session| {
        script.push_str(&msg.to_line());
        script.push('\n');
        shadow.handle(msg)
    };
    push(
        WireMessage::Hello { protocol_version: "asap/1".into(), num_arms: 3, horizon: 6, beta: Some(0.3), alpha_schedule: None },
        &mut session,
    );
    for a in 0..3 {
        let (loss, s) = probe_of(a);
        push(WireMessage::InitProbe { arm: a, loss_aux: WireFloat(loss), grad_summary: s.into() }, &mut session);
    }
    for t in 1..=6 {
        let WireMessage::Selected { arm, .. } = push(WireMessage::SelectRequest { turn: t }, &mut session) else {
            panic!()
        };
        let (loss, s) = report_of(t, arm);
        push(
            WireMessage::Report { turn: t, arm, loss_aux: WireFloat(loss), grad_summary: s.into(), loss_aux_post: None },
            &mut session,
        );
    }
    push(WireMessage::Shutdown {}, &mut session);

    let mut out = Vec::new();
    let (outcome, served) = serve(script.as_bytes(), &mut out, SessionDefaults::default(), &options).unwrap();
    assert_eq!(outcome, asap::protocol::SessionOutcome::Completed);
    assert_eq!(served.phase(), Phase::Closed);
    let restored = PolicyState::restore(&std::fs::read_to_string(&checkpoint).unwrap()).unwrap();
    assert_eq!(&restored, served.policy().unwrap());
    assert_eq!(restored.turn(), 6);
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 3 + 12 + 1);

    let report = asap::trace::audit(&trace).unwrap();
    assert!(report.is_clean(), "{:?}", report.findings);
    assert_eq!(report.turns, 6);
}

#[test]
fn tcp_session() {
    let mut child = Command::new(BIN)
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect(&line).to_string();
    let stream = TcpStream::connect(addr).unwrap();
    let reader = BufReader::new(stream.try_clone().unwrap());
    let mut client = Client::connect(reader, stream, 3, 5, None, None).unwrap();
    let picks = drive(&mut client, 5);
    client.shutdown().unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(picks, in_process(3, 5));
}

#[test]
fn server_errors_reach_the_client() {
    let mut child = Command::new(BIN)
        .args(["serve", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let reader = BufReader::new(child.stdout.take().unwrap());
    let writer = child.stdin.take().unwrap();
    let mut client = Client::connect(reader, writer, 2, 5, None, None).unwrap();
    client.probe(0, 0.1, GradientSummary::new(0.0, 1.0, 1.0).unwrap()).unwrap();
    // selecting before all probes is a phase error
    match client.select() {
        Err(ClientError::Server { code, .. }) => assert_eq!(code, "protocol"),
        other => panic!("{other:?}"),
    }
    drop(client);
    assert!(!child.wait().unwrap().success());
}

#[test]
fn nan_report_over_stdio_is_reward_domain() {
    let mut child = Command::new(BIN)
        .args(["serve", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let reader = BufReader::new(child.stdout.take().unwrap());
    let writer = child.stdin.take().unwrap();
    let mut client = Client::connect(reader, writer, 1, 5, None, None).unwrap();
    client.probe(0, 0.1, GradientSummary::new(0.0, 1.0, 1.0).unwrap()).unwrap();
    client.select().unwrap();
    match client.report(f64::NAN, GradientSummary::new(0.0, 1.0, 1.0).unwrap(), None) {
        Err(ClientError::Server { code, .. }) => assert_eq!(code, "reward_domain"),
        other => panic!("{other:?}"),
    }
    drop(client);
    child.wait().unwrap();
}

fn wire_float() -> impl Strategy<Value = WireFloat> {
    prop_oneof![
        (-10.0f64..10.0).prop_map(WireFloat),
        Just(WireFloat(f64::NAN)),
        Just(WireFloat(f64::INFINITY)),
        Just(WireFloat(0.0)),
    ]
}

fn summary() -> impl Strategy<Value = WireSummary> {
    (wire_float(), wire_float(), wire_float()).prop_map(|(dot, norm_aux, norm_target)| WireSummary { dot, norm_aux, norm_target })
}

fn message() -> impl Strategy<Value = String> {
    let msg = prop_oneof![
        (0usize..4, 0u64..6, prop::option::of(0.0f64..1.5)).prop_map(|(k, h, beta)| WireMessage::Hello {
            protocol_version: "asap/1".into(),
            num_arms: k,
            horizon: h,
            beta,
            alpha_schedule: None,
        }),
        (0usize..4, wire_float(), summary()).prop_map(|(arm, loss_aux, grad_summary)| WireMessage::InitProbe {
            arm,
            loss_aux,
            grad_summary
        }),
        (0u64..6).prop_map(|turn| WireMessage::SelectRequest { turn }),
        (0u64..6, 0usize..4, wire_float(), summary(), prop::option::of(wire_float())).prop_map(
            |(turn, arm, loss_aux, grad_summary, loss_aux_post)| WireMessage::Report {
                turn,
                arm,
                loss_aux,
                grad_summary,
                loss_aux_post
            }
        ),
        (0u64..6).prop_map(|turn| WireMessage::Selected { turn, arm: 0, ucb_scores: vec![] }),
        (0u64..6, wire_float()).prop_map(|(turn, estimate_after)| WireMessage::Ack { turn, estimate_after }),
        Just(WireMessage::Shutdown {}),
        Just(WireMessage::Error { code: "x".into(), message: "y".into() }),
    ]
    .prop_map(|m| m.to_line());
    prop_oneof![
        8 => msg,
        1 => "[^\n]{0,40}",
        1 => Just(r#"{"type":"hello"}"#.to_string()),
        1 => Just(r#"{"type":"report","turn":1,"arm":0,"loss_aux":1e999,"grad_summary":{"dot":0,"norm_aux":1,"norm_target":1}}"#.to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, ..ProptestConfig::default() })]

    #[test]
    fn arbitrary_message_orders_get_structured_replies(lines in prop::collection::vec(message(), 0..30)) {
        let mut session = Session::new(SessionDefaults::default());
        for line in &lines {
            let was_closed = session.phase() == Phase::Closed;
            let reply = session.handle_line(line);
            // every reply is itself a valid message
            prop_assert_eq!(WireMessage::from_line(&reply.to_line()).unwrap(), reply.clone());
            match reply {
                WireMessage::Error { ref code, .. } => {
                    prop_assert!(["protocol", "reward_domain", "config", "version"].contains(&code.as_str()));
                    prop_assert_eq!(session.phase(), Phase::Closed);
                }
                WireMessage::Shutdown {} => prop_assert_eq!(session.phase(), Phase::Closed),
                _ => prop_assert!(!was_closed),
            }
        }
        if let Some(p) = session.policy() {
            prop_assert_eq!(p.total_plays(), p.arms().iter().map(|a| a.plays).sum::<u64>());
        }
    }
}

#[test]
fn documented_transcript_is_reproduced() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/protocol.md")).unwrap();
    let mut session = Session::new(SessionDefaults::default());
    let mut pending = None;
    let mut checked = 0;
    for line in doc.lines() {
        if let Some(c) = line.strip_prefix("C: ") {
            pending = Some(session.handle_line(c).to_line());
        } else if let Some(s) = line.strip_prefix("S: ") {
            assert_eq!(pending.take().as_deref(), Some(s));
            checked += 1;
        }
    }
    assert_eq!(checked, 8);
}
