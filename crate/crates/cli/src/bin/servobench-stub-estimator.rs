//! Scripted estimator peer for exercising the wire protocol.
//!
//! Answers the first `--after` requests with an identity estimate, then
//! behaves according to `--mode`.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Always reply with the identity pose.
    Identity,
    /// Read requests but never reply.
    Silent,
    /// Reply with a line that is not JSON.
    Malformed,
    /// Exit without replying.
    Die,
    /// Reply with an error message.
    Error,
    /// Never send the ready line.
    NoHandshake,
}

#[derive(Parser)]
struct Args {
    #[arg(long, value_enum, default_value = "identity")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    after: usize,
}

const IDENTITY: &str = r#"{"v":1,"x":[0,0,0],"q":[1,0,0,0]}"#;

fn main() -> ExitCode {
    let args = Args::parse();
    let mut out = io::stdout().lock();
    if args.mode == Mode::NoHandshake {
        thread::sleep(Duration::from_secs(60));
        return ExitCode::SUCCESS;
    }
    if writeln!(out, r#"{{"v":1,"ready":true}}"#).and_then(|_| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    for (n, line) in io::stdin().lock().lines().enumerate() {
        if line.is_err() {
            break;
        }
        let reply = if n < args.after {
            Some(IDENTITY)
        } else {
            match args.mode {
                Mode::Identity => Some(IDENTITY),
                Mode::Silent => None,
                Mode::Malformed => Some("this is not json"),
                Mode::Die => return ExitCode::from(7),
                Mode::Error => Some(r#"{"v":1,"error":"stub refuses"}"#),
                Mode::NoHandshake => unreachable!(),
            }
        };
        if let Some(r) = reply {
            if writeln!(out, "{r}").and_then(|_| out.flush()).is_err() {
                break;
            }
        }
    }
    ExitCode::SUCCESS
}
