use std::path::{Path, PathBuf};

use deformable_cbf::bridge::{encode, Ack, BridgeSession, ClientMessage, Command, ErrorReply, ServerMessage};
use deformable_cbf::scenario::{load_scenario, RunOptions};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(root().join("schema").join(name)).unwrap()).unwrap()
}

// Just enough of JSON Schema for the two files we ship.
fn check(root: &Value, schema: &Value, v: &Value, at: &str, errs: &mut Vec<String>) {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let def = &root["$defs"][r.trim_start_matches("#/$defs/")];
        assert!(!def.is_null(), "dangling {r}");
        check(root, def, v, at, errs);
    }
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => unreachable!(),
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            errs.push(format!("{at}: expected {t}, got {v}"));
            return;
        }
    }
    if let Some(c) = schema.get("const") {
        if c != v {
            errs.push(format!("{at}: expected {c}"));
        }
    }
    if let Some(e) = schema.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            errs.push(format!("{at}: {v} not in {e:?}"));
        }
    }
    if let Some(n) = v.as_f64() {
        if schema.get("minimum").and_then(Value::as_f64).is_some_and(|m| n < m)
            || schema.get("exclusiveMinimum").and_then(Value::as_f64).is_some_and(|m| n <= m)
            || schema.get("maximum").and_then(Value::as_f64).is_some_and(|m| n > m)
        {
            errs.push(format!("{at}: {n} out of range"));
        }
    }
    if let Some(alts) = schema.get("oneOf").and_then(Value::as_array) {
        let matched = alts
            .iter()
            .filter(|s| {
                let mut e = Vec::new();
                check(root, s, v, at, &mut e);
                e.is_empty()
            })
            .count();
        if matched != 1 {
            errs.push(format!("{at}: matched {matched} alternatives"));
        }
    }
    if let Some(a) = v.as_array() {
        let n = a.len() as u64;
        if schema.get("minItems").and_then(Value::as_u64).is_some_and(|m| n < m)
            || schema.get("maxItems").and_then(Value::as_u64).is_some_and(|m| n > m)
        {
            errs.push(format!("{at}: {n} items"));
        }
        if let Some(items) = schema.get("items") {
            for (i, x) in a.iter().enumerate() {
                check(root, items, x, &format!("{at}[{i}]"), errs);
            }
        }
    }
    if let Some(o) = v.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for req in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !o.contains_key(req.as_str().unwrap()) {
                errs.push(format!("{at}: missing {req}"));
            }
        }
        for (k, x) in o {
            let path = format!("{at}.{k}");
            match (props.and_then(|p| p.get(k)), schema.get("additionalProperties")) {
                (Some(s), _) => check(root, s, x, &path, errs),
                (None, Some(Value::Bool(false))) => errs.push(format!("{path}: not allowed")),
                (None, Some(s)) if s.is_object() => check(root, s, x, &path, errs),
                _ => {}
            }
        }
    }
}

fn validate(schema: &Value, v: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    check(schema, schema, v, "$", &mut errs);
    errs
}

#[test]
fn bundled_scenarios_match_the_schema() {
    let schema = load("scenario.schema.json");
    let mut seen = 0;
    for entry in std::fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let raw: toml::Value = toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            let errs = validate(&schema, &serde_json::to_value(raw).unwrap());
            assert!(errs.is_empty(), "{}: {errs:?}", path.display());
            // the echo written next to results must also conform
            let echoed: toml::Value = toml::from_str(&load_scenario(&path).unwrap().to_toml()).unwrap();
            let errs = validate(&schema, &serde_json::to_value(echoed).unwrap());
            assert!(errs.is_empty(), "echo of {}: {errs:?}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn scenario_schema_rejects_unknown_keys() {
    let schema = load("scenario.schema.json");
    let raw: toml::Value =
        toml::from_str(&std::fs::read_to_string(root().join("scenarios/rope_free_space.toml")).unwrap()).unwrap();
    let mut v = serde_json::to_value(raw).unwrap();
    v["run"]["warp"] = Value::Bool(true);
    assert!(!validate(&schema, &v).is_empty());
}

#[test]
fn every_wire_message_matches_the_schema() {
    let schema = load("wire-protocol.schema.json");
    let mut msgs = Vec::new();
    for name in ["rope_single_assistant", "fabric_three_assistants"] {
        let mut c = load_scenario(&root().join(format!("scenarios/{name}.toml"))).unwrap();
        c.sim.settle_time = 0.2;
        c.sim.replica_settle_time = 0.1;
        let mut b = BridgeSession::new(c, RunOptions::default()).unwrap();
        msgs.push(encode(&ServerMessage::Topology(b.topology().clone())));
        msgs.push(encode(&ServerMessage::Frame(b.frame())));
        b.tick().unwrap();
        b.tick().unwrap();
        msgs.push(encode(&ServerMessage::Frame(b.frame())));
    }
    msgs.push(encode(&ServerMessage::Ack(Ack { command: "leader_velocity".into(), applies_at_tick: 3, velocity: Some([0.1, 0.0, 0.0]) })));
    msgs.push(encode(&ServerMessage::Ack(Ack { command: "pause".into(), applies_at_tick: 3, velocity: None })));
    msgs.push(encode(&ServerMessage::Error(ErrorReply { message: "bad".into() })));
    for cmd in [
        Command::LeaderVelocity { velocity: [0.0, 0.1, 0.0] },
        Command::Pause,
        Command::Resume,
        Command::Reset,
        Command::SelectScenario { name: "rope_fast_leader".into() },
    ] {
        msgs.push(serde_json::to_string(&ClientMessage::Command(cmd)).unwrap());
    }
    for m in &msgs {
        let errs = validate(&schema, &serde_json::from_str(m).unwrap());
        assert!(errs.is_empty(), "{errs:?} in {}", &m[..m.len().min(200)]);
    }

    for bad in [
        r#"{"type":"command","payload":{"kind":"warp"}}"#,
        r#"{"type":"command","payload":{"kind":"leader_velocity","velocity":[1,2]}}"#,
        r#"{"type":"frame"}"#,
    ] {
        assert!(!validate(&schema, &serde_json::from_str(bad).unwrap()).is_empty(), "{bad}");
    }
}
