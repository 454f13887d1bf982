mod common;

use std::collections::BTreeSet;

use contactplan_cli::protocol::*;
use contactplan_cli::session::{Incoming, Session};
use serde_json::json;

fn commands() -> Vec<CommandMessage> {
    vec![
        CommandMessage::ApplyPush {
            link: 4,
            s: 0.5,
            force: [0.0, 15.0, -0.1],
            duration: 0.5,
        },
        CommandMessage::Pause,
        CommandMessage::Resume,
        CommandMessage::Reset,
        CommandMessage::SetConfig {
            patch: json!({"detection": {"theta_tau": 1.25}}),
        },
    ]
}

#[test]
fn every_command_round_trips() {
    for command in commands() {
        for id in [None, Some(0), Some(u64::MAX)] {
            let frame = CommandFrame { id, command: command.clone() };
            assert_eq!(CommandFrame::parse(&frame.to_json()).unwrap(), frame);
        }
    }
}

#[test]
fn bare_commands_parse() {
    let f = CommandFrame::parse(r#"{"kind":"pause"}"#).unwrap();
    assert_eq!(f, CommandFrame::new(CommandMessage::Pause));
    let f = CommandFrame::parse(
        r#"{"kind":"apply_push","id":3,"link":2,"s":1,"force":[1,2,3],"duration":0.25}"#,
    )
    .unwrap();
    assert_eq!(f.id, Some(3));
    assert_eq!(f.command.name(), "apply_push");
}

#[test]
fn malformed_commands_are_rejected() {
    use ProtocolError::*;
    let cases = [
        ("not json", "Json"),
        ("[1,2]", "NotAnObject"),
        (r#"{"kind":"jump"}"#, "Payload"),
        (r#"{"kind":"apply_push","link":4,"s":0.5,"force":[0,1,0]}"#, "Payload"),
        (r#"{"kind":"apply_push","link":4,"s":0.5,"force":[0,1],"duration":1}"#, "Payload"),
        (r#"{"kind":"pause","extra":1}"#, "Payload"),
        (r#"{"kind":"pause","id":-1}"#, "BadId"),
        (r#"{"kind":"pause","id":"a"}"#, "BadId"),
        (r#"{"kind":"pause","protocol_version":2}"#, "Version"),
        (r#"{"link":4}"#, "Payload"),
    ];
    for (text, want) in cases {
        let err = CommandFrame::parse(text).unwrap_err();
        let got = match err {
            Json(_) => "Json",
            NotAnObject => "NotAnObject",
            BadId => "BadId",
            Version(_) => "Version",
            Payload(_) => "Payload",
        };
        assert_eq!(got, want, "{text}");
    }
}

fn kind(m: &TelemetryMessage) -> String {
    serde_json::to_value(m).unwrap()["kind"].as_str().unwrap().to_string()
}

#[test]
fn every_telemetry_kind_round_trips() {
    // real messages from a short session with one push, plus the replies
    let mut scenario = common::quiet("push_link4");
    scenario.duration = 3.0;
    let mut session = Session::new(scenario).unwrap();
    let mut messages = vec![session.hello(None), session.hello(Some(41))];
    for _ in 0..500 {
        messages.extend(session.step().unwrap());
    }
    let push = CommandMessage::ApplyPush {
        link: 4,
        s: 0.5,
        force: [0.0, -20.0, 0.0],
        duration: 0.5,
    };
    messages.extend(session.apply(Incoming { client: 1, id: Some(9), command: push }));
    let too_big = CommandMessage::ApplyPush {
        link: 4,
        s: 0.5,
        force: [0.0, 500.0, 0.0],
        duration: 0.5,
    };
    messages.extend(session.apply(Incoming { client: 2, id: None, command: too_big }));
    while !session.is_finished() {
        messages.extend(session.step().unwrap());
    }
    messages.push(TelemetryMessage::Error { message: "bad frame".into() });

    let kinds: BTreeSet<_> = messages.iter().map(kind).collect();
    let expected = [
        "ack", "bump", "detection", "error", "estimate", "hello", "metrics", "path_update",
        "rejected", "tick",
    ];
    assert_eq!(kinds, expected.iter().map(|s| s.to_string()).collect());

    for (seq, m) in messages.into_iter().enumerate() {
        for seq in [None, Some(seq as u64)] {
            let frame = ServerFrame::new(seq, m.clone());
            let text = frame.to_json();
            assert_eq!(ServerFrame::parse(&text).unwrap(), frame, "{text}");
            let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(raw["protocol_version"], json!(PROTOCOL_VERSION));
            assert_eq!(raw.get("seq").is_some(), seq.is_some());
        }
    }
}
