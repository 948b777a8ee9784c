//! Messages of the experiment protocol.
//!
//! Each message is one compact JSON object on its own line (UTF-8, `\n`
//! terminated). The experiment greets with `hello`, the optimizer sends one
//! `eval` at a time and waits for the `result` or `error` echoing its id.
//! Either side may send `shutdown` before closing.
//!
//! ```text
//! <- {"type":"hello","version":1,"dim":2,"lower":[0.0,0.0],"upper":[1.0,1.0]}
//! -> {"type":"eval","id":0,"params":[0.5,0.25]}
//! <- {"type":"result","id":0,"cost":0.3125,"bad":false}
//! -> {"type":"shutdown"}
//! ```

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        version: u32,
        dim: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Eval {
        id: u64,
        params: Vec<f64>,
    },
    Result {
        id: u64,
        cost: f64,
        bad: bool,
    },
    Error {
        id: u64,
        message: String,
    },
    Shutdown,
}

impl Message {
    /// The message as one line, including the trailing newline.
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("messages always serialize");
        line.push('\n');
        line
    }

    pub fn from_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line.trim_end_matches(['\n', '\r']))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_formats() {
        let cases = [
            (
                Message::Hello {
                    version: 1,
                    dim: 2,
                    lower: vec![-40.0, 0.0],
                    upper: vec![0.0, 1.0],
                },
                r#"{"type":"hello","version":1,"dim":2,"lower":[-40.0,0.0],"upper":[0.0,1.0]}"#,
            ),
            (
                Message::Eval {
                    id: 7,
                    params: vec![0.1, -3.5],
                },
                r#"{"type":"eval","id":7,"params":[0.1,-3.5]}"#,
            ),
            (
                Message::Result {
                    id: 7,
                    cost: 0.25,
                    bad: true,
                },
                r#"{"type":"result","id":7,"cost":0.25,"bad":true}"#,
            ),
            (
                Message::Error {
                    id: 7,
                    message: "laser unlocked".into(),
                },
                r#"{"type":"error","id":7,"message":"laser unlocked"}"#,
            ),
            (Message::Shutdown, r#"{"type":"shutdown"}"#),
        ];
        for (msg, text) in cases {
            assert_eq!(msg.to_line(), format!("{text}\n"));
            assert_eq!(Message::from_line(text).unwrap(), msg);
        }
    }

    #[test]
    fn floats_round_trip_exactly() {
        let params = vec![0.1 + 0.2, std::f64::consts::PI, 1e-310, -123456.78901234567];
        let line = Message::Eval { id: 1, params: params.clone() }.to_line();
        match Message::from_line(&line).unwrap() {
            Message::Eval { params: back, .. } => {
                for (a, b) in params.iter().zip(&back) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_types() {
        assert!(Message::from_line(r#"{"type":"ping"}"#).is_err());
        assert!(Message::from_line("not json").is_err());
    }
}
