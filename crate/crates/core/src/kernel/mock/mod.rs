//! Mock kernel peer.
//!
//! Binds the five channels described by a connection file and answers
//! `kernel_info_request`, `execute_request` and `shutdown_request` with the
//! same message sequence an IPython kernel produces, signing every frame.
//! Code is run by the small interpreter in [`interp`].
//!
//! Two magic cells exist for tests: `%crash` exits the process without a
//! reply and `%hang` never replies.

pub mod interp;

use std::path::PathBuf;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::debug;

use super::connection::ConnectionInfo;
use super::wire::{Header, WireMessage};
use super::KernelError;
use interp::{Interp, Output};

#[derive(Clone, Debug, Default)]
pub struct MockOptions {
    /// Interleave broadcasts addressed to other requests, which a correct
    /// client must ignore.
    pub noise: bool,
    /// Sleep before binding, to exercise readiness probing.
    pub startup_delay: Duration,
    /// Ignore shutdown requests so the client has to escalate to a kill.
    pub ignore_shutdown: bool,
}

pub struct MockKernel {
    key: Vec<u8>,
    shell: zmq::Socket,
    control: zmq::Socket,
    // Bound so clients can connect; the mock never prompts for input.
    _stdin: zmq::Socket,
    iopub: zmq::Socket,
    hb: zmq::Socket,
    interp: Interp,
    counter: u64,
    session: String,
    options: MockOptions,
    _ctx: zmq::Context,
}

fn bind(ctx: &zmq::Context, kind: zmq::SocketType, endpoint: &str) -> Result<zmq::Socket, KernelError> {
    let socket = ctx.socket(kind)?;
    socket.set_linger(0)?;
    socket.bind(endpoint)?;
    Ok(socket)
}

impl MockKernel {
    pub fn bind(info: &ConnectionInfo, cwd: PathBuf, options: MockOptions) -> Result<Self, KernelError> {
        std::thread::sleep(options.startup_delay);
        let ctx = zmq::Context::new();
        Ok(Self {
            key: info.key_bytes().to_vec(),
            shell: bind(&ctx, zmq::ROUTER, &info.endpoint(info.shell_port))?,
            control: bind(&ctx, zmq::ROUTER, &info.endpoint(info.control_port))?,
            _stdin: bind(&ctx, zmq::ROUTER, &info.endpoint(info.stdin_port))?,
            iopub: bind(&ctx, zmq::PUB, &info.endpoint(info.iopub_port))?,
            hb: bind(&ctx, zmq::REP, &info.endpoint(info.hb_port))?,
            interp: Interp::new(cwd),
            counter: 0,
            session: uuid::Uuid::new_v4().to_string(),
            options,
            _ctx: ctx,
        })
    }

    /// Serves until a shutdown request arrives.
    pub fn serve(mut self) -> Result<(), KernelError> {
        loop {
            let mut items = [
                self.shell.as_poll_item(zmq::POLLIN),
                self.control.as_poll_item(zmq::POLLIN),
                self.hb.as_poll_item(zmq::POLLIN),
            ];
            zmq::poll(&mut items, 100)?;
            let ready = [items[0].is_readable(), items[1].is_readable(), items[2].is_readable()];
            if ready[2] {
                let ping = self.hb.recv_bytes(0)?;
                self.hb.send(ping, 0)?;
            }
            for (channel, readable) in [(Channel::Control, ready[1]), (Channel::Shell, ready[0])] {
                if !readable {
                    continue;
                }
                let frames = match channel {
                    Channel::Control => self.control.recv_multipart(0)?,
                    Channel::Shell => self.shell.recv_multipart(0)?,
                };
                let msg = match WireMessage::decode(&frames, &self.key) {
                    Ok(m) => m,
                    Err(e) => {
                        debug!(error = %e, "mock kernel dropped a message");
                        continue;
                    }
                };
                if self.handle(channel, msg)? == Flow::Stop {
                    return Ok(());
                }
            }
        }
    }

    fn send(&self, channel: Channel, msg: &WireMessage) -> Result<(), KernelError> {
        let socket = match channel {
            Channel::Shell => &self.shell,
            Channel::Control => &self.control,
        };
        socket.send_multipart(msg.encode(&self.key)?, 0)?;
        Ok(())
    }

    fn publish(&self, parent: &WireMessage, msg_type: &str, content: Value) -> Result<(), KernelError> {
        let mut msg = WireMessage::reply_to(parent, msg_type, content);
        msg.header.session = self.session.clone();
        msg.identities = vec![format!("kernel.{msg_type}").into_bytes()];
        self.iopub.send_multipart(msg.encode(&self.key)?, 0)?;
        Ok(())
    }

    fn status(&self, parent: &WireMessage, state: &str) -> Result<(), KernelError> {
        self.publish(parent, "status", json!({ "execution_state": state }))
    }

    fn decoy(&self, parent: &WireMessage) -> Result<(), KernelError> {
        if !self.options.noise {
            return Ok(());
        }
        let mut other = parent.clone();
        other.header = Header::new("execute_request", "someone-else", "other");
        self.publish(&other, "stream", json!({"name": "stdout", "text": "decoy output\n"}))?;
        self.publish(&other, "execute_result", json!({"execution_count": 0, "data": {"text/plain": "'decoy'"}, "metadata": {}}))?;
        self.status(&other, "idle")
    }

    fn handle(&mut self, channel: Channel, msg: WireMessage) -> Result<Flow, KernelError> {
        match msg.msg_type() {
            "kernel_info_request" => {
                self.status(&msg, "busy")?;
                self.send(
                    channel,
                    &WireMessage::reply_to(
                        &msg,
                        "kernel_info_reply",
                        json!({
                            "status": "ok",
                            "protocol_version": super::wire::PROTOCOL_VERSION,
                            "implementation": "mock-kernel",
                            "implementation_version": env!("CARGO_PKG_VERSION"),
                            "language_info": {"name": "minipy", "version": "0", "file_extension": ".mk"},
                            "banner": "mock kernel",
                        }),
                    ),
                )?;
                self.status(&msg, "idle")?;
            }
            "execute_request" => {
                let code = msg.content["code"].as_str().unwrap_or_default().to_string();
                match code.trim() {
                    "%crash" => std::process::exit(3),
                    "%hang" => loop {
                        std::thread::sleep(Duration::from_secs(3600));
                    },
                    _ => {}
                }
                self.execute(channel, &msg, &code)?;
            }
            "shutdown_request" => {
                if self.options.ignore_shutdown {
                    return Ok(Flow::Continue);
                }
                self.status(&msg, "busy")?;
                self.send(
                    channel,
                    &WireMessage::reply_to(&msg, "shutdown_reply", json!({"status": "ok", "restart": false})),
                )?;
                self.status(&msg, "idle")?;
                return Ok(Flow::Stop);
            }
            other => debug!(msg_type = other, "mock kernel ignoring message"),
        }
        Ok(Flow::Continue)
    }

    fn execute(&mut self, channel: Channel, msg: &WireMessage, code: &str) -> Result<(), KernelError> {
        self.counter += 1;
        let count = self.counter;
        self.decoy(msg)?;
        self.status(msg, "busy")?;
        self.publish(msg, "execute_input", json!({"code": code, "execution_count": count}))?;
        let outcome = self.interp.run(code);
        for output in &outcome.outputs {
            let (name, text) = match output {
                Output::Stdout(t) => ("stdout", t),
                Output::Stderr(t) => ("stderr", t),
            };
            self.publish(msg, "stream", json!({"name": name, "text": text}))?;
            self.decoy(msg)?;
        }
        if let Some(display) = &outcome.display {
            self.publish(
                msg,
                "execute_result",
                json!({"execution_count": count, "data": {"text/plain": display}, "metadata": {}}),
            )?;
        }
        let reply = match &outcome.error {
            None => json!({"status": "ok", "execution_count": count, "user_expressions": {}, "payload": []}),
            Some(e) => {
                let traceback = vec![
                    "\u{1b}[0;31m---------------------------------------------------------------------------\u{1b}[0m".to_string(),
                    format!(
                        "\u{1b}[0;31m{}\u{1b}[0m                         Traceback (most recent call last)",
                        e.name
                    ),
                    format!(
                        "Cell \u{1b}[0;32mIn[{count}], line {}\u{1b}[0m\n\u{1b}[0;32m----> {}\u{1b}[0m {}",
                        outcome.error_line,
                        outcome.error_line,
                        code.lines().nth(outcome.error_line.saturating_sub(1)).unwrap_or_default()
                    ),
                    format!("\u{1b}[0;31m{}\u{1b}[0m: {}", e.name, e.message),
                ];
                let content = json!({"ename": e.name, "evalue": e.message, "traceback": traceback});
                self.publish(msg, "error", content.clone())?;
                let mut reply = content;
                reply["status"] = json!("error");
                reply["execution_count"] = json!(count);
                reply
            }
        };
        self.send(channel, &WireMessage::reply_to(msg, "execute_reply", reply))?;
        self.status(msg, "idle")
    }
}

#[derive(Clone, Copy)]
enum Channel {
    Shell,
    Control,
}

#[derive(PartialEq, Eq)]
enum Flow {
    Continue,
    Stop,
}

/// Runs a mock kernel on a background thread, for in-process tests.
pub fn spawn_thread(
    cwd: PathBuf,
    options: MockOptions,
) -> Result<(ConnectionInfo, std::thread::JoinHandle<Result<(), KernelError>>), KernelError> {
    let info = ConnectionInfo::allocate("mock")?;
    let kernel = MockKernel::bind(&info, cwd, options)?;
    let handle = std::thread::spawn(move || kernel.serve());
    Ok((info, handle))
}
