//! Client side of the kernel channels.

use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tracing::{debug, trace};

use super::connection::ConnectionInfo;
use super::wire::{Header, WireMessage};
use super::{ExecError, ExecStatus, ExecutionResult, KernelError};

const POLL_SLICE: Duration = Duration::from_millis(50);

/// Reports why the kernel process is gone, if it is.
pub type LivenessProbe<'a> = &'a mut dyn FnMut() -> Option<String>;

pub struct KernelClient {
    _ctx: zmq::Context,
    shell: zmq::Socket,
    iopub: zmq::Socket,
    control: zmq::Socket,
    stdin: zmq::Socket,
    hb_endpoint: String,
    hb_ctx: zmq::Context,
    key: Vec<u8>,
    session: String,
}

fn connect(ctx: &zmq::Context, kind: zmq::SocketType, endpoint: &str) -> Result<zmq::Socket, KernelError> {
    let socket = ctx.socket(kind)?;
    socket.set_linger(0)?;
    socket.connect(endpoint)?;
    Ok(socket)
}

impl KernelClient {
    pub fn connect(info: &ConnectionInfo) -> Result<Self, KernelError> {
        let ctx = zmq::Context::new();
        let session = uuid::Uuid::new_v4().to_string();
        let shell = connect(&ctx, zmq::DEALER, &info.endpoint(info.shell_port))?;
        let control = connect(&ctx, zmq::DEALER, &info.endpoint(info.control_port))?;
        let stdin = connect(&ctx, zmq::DEALER, &info.endpoint(info.stdin_port))?;
        let iopub = connect(&ctx, zmq::SUB, &info.endpoint(info.iopub_port))?;
        iopub.set_subscribe(b"")?;
        Ok(Self {
            _ctx: ctx,
            shell,
            iopub,
            control,
            stdin,
            hb_endpoint: info.endpoint(info.hb_port),
            hb_ctx: zmq::Context::new(),
            key: info.key_bytes().to_vec(),
            session,
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    fn send(&self, socket: &zmq::Socket, msg_type: &str, content: Value) -> Result<Header, KernelError> {
        let header = Header::new(msg_type, &self.session, "coder");
        let msg = WireMessage::new(header.clone(), content);
        socket.send_multipart(msg.encode(&self.key)?, 0)?;
        trace!(msg_type, msg_id = %header.msg_id, "sent");
        Ok(header)
    }

    fn recv(&self, socket: &zmq::Socket) -> Result<Option<WireMessage>, KernelError> {
        match socket.recv_multipart(zmq::DONTWAIT) {
            Ok(frames) => match WireMessage::decode(&frames, &self.key) {
                Ok(msg) => Ok(Some(msg)),
                Err(e) => {
                    // A bad message is dropped, not fatal.
                    debug!(error = %e, "discarding undecodable kernel message");
                    Ok(None)
                }
            },
            Err(zmq::Error::EAGAIN) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Polls shell, iopub and stdin; returns readiness flags.
    fn wait(&self, timeout: Duration) -> Result<[bool; 3], KernelError> {
        let mut items = [
            self.shell.as_poll_item(zmq::POLLIN),
            self.iopub.as_poll_item(zmq::POLLIN),
            self.stdin.as_poll_item(zmq::POLLIN),
        ];
        zmq::poll(&mut items, timeout.as_millis() as i64)?;
        Ok([items[0].is_readable(), items[1].is_readable(), items[2].is_readable()])
    }

    /// Readiness probe: kernel_info round trips until the kernel answers on
    /// shell and its iopub broadcasts reach us.
    pub fn wait_ready(&mut self, timeout: Duration, alive: LivenessProbe<'_>) -> Result<Value, KernelError> {
        let deadline = Instant::now() + timeout;
        let mut info = None;
        while Instant::now() < deadline {
            if let Some(reason) = alive() {
                return Err(KernelError::Launch(reason));
            }
            let request = self.send(&self.shell, "kernel_info_request", json!({}))?;
            let round_end = (Instant::now() + Duration::from_millis(500)).min(deadline);
            let mut saw_iopub = false;
            while Instant::now() < round_end {
                let [shell, iopub, _] = self.wait(POLL_SLICE)?;
                if shell {
                    while let Some(msg) = self.recv(&self.shell)? {
                        if msg.msg_type() == "kernel_info_reply" && msg.parent_id() == Some(&request.msg_id) {
                            info = Some(msg.content);
                        }
                    }
                }
                if iopub {
                    while self.recv(&self.iopub)?.is_some() {
                        saw_iopub = true;
                    }
                }
                if saw_iopub && info.is_some() {
                    return Ok(info.take().unwrap_or(Value::Null));
                }
                if let Some(reason) = alive() {
                    return Err(KernelError::Launch(reason));
                }
            }
        }
        Err(KernelError::Launch(format!(
            "kernel did not answer kernel_info within {:.0}s",
            timeout.as_secs_f64()
        )))
    }

    /// Runs `code` and gathers everything broadcast for this request between
    /// the busy and idle status messages, plus the execute_reply.
    pub fn execute(
        &mut self,
        code: &str,
        timeout: Duration,
        alive: LivenessProbe<'_>,
    ) -> Result<ExecutionResult, KernelError> {
        let request = self.send(
            &self.shell,
            "execute_request",
            json!({
                "code": code,
                "silent": false,
                "store_history": true,
                "user_expressions": {},
                "allow_stdin": false,
                "stop_on_error": true,
            }),
        )?;
        let id = request.msg_id.clone();
        let mut result = ExecutionResult {
            request_id: id.clone(),
            ..Default::default()
        };
        let mut reply: Option<Value> = None;
        let mut busy = false;
        let mut idle = false;
        let deadline = Instant::now() + timeout;

        while reply.is_none() || !idle {
            let now = Instant::now();
            if now >= deadline {
                return Err(KernelError::Timeout(timeout.as_secs_f64()));
            }
            if let Some(reason) = alive() {
                return Err(KernelError::Dead(reason));
            }
            let [shell, iopub, stdin] = self.wait(POLL_SLICE.min(deadline - now))?;
            if shell {
                while let Some(msg) = self.recv(&self.shell)? {
                    if msg.parent_id() == Some(&id) && msg.msg_type() == "execute_reply" {
                        reply = Some(msg.content);
                    }
                }
            }
            if iopub {
                while let Some(msg) = self.recv(&self.iopub)? {
                    if msg.parent_id() != Some(&id) {
                        continue;
                    }
                    let c = &msg.content;
                    match msg.msg_type() {
                        "status" => match c["execution_state"].as_str() {
                            Some("busy") => busy = true,
                            Some("idle") => idle = true,
                            _ => {}
                        },
                        _ if !busy || idle => {}
                        "stream" => {
                            let text = c["text"].as_str().unwrap_or_default();
                            if c["name"] == "stderr" {
                                result.stderr.push_str(text);
                            } else {
                                result.stdout.push_str(text);
                            }
                        }
                        "execute_result" | "display_data" => {
                            if let Some(text) = c.pointer("/data/text~1plain").and_then(Value::as_str) {
                                result.result = Some(text.to_string());
                            }
                        }
                        "error" => result.error = Some(exec_error(c)),
                        "execute_input" => {
                            if let Some(n) = c["execution_count"].as_u64() {
                                result.execution_count = n;
                            }
                        }
                        _ => {}
                    }
                }
            }
            if stdin {
                while let Some(msg) = self.recv(&self.stdin)? {
                    if msg.msg_type() == "input_request" {
                        let answer = WireMessage::reply_to(&msg, "input_reply", json!({"value": ""}));
                        self.stdin.send_multipart(answer.encode(&self.key)?, 0)?;
                    }
                }
            }
        }

        let reply = reply.unwrap_or(Value::Null);
        if let Some(n) = reply["execution_count"].as_u64() {
            result.execution_count = n;
        }
        match reply["status"].as_str() {
            Some("ok") => result.status = ExecStatus::Ok,
            Some(other) => {
                result.status = ExecStatus::Error;
                if result.error.is_none() {
                    result.error = Some(if other == "error" {
                        exec_error(&reply)
                    } else {
                        ExecError {
                            name: other.to_string(),
                            message: format!("execution {other}"),
                            traceback: Vec::new(),
                        }
                    });
                }
            }
            None => return Err(KernelError::Protocol("execute_reply without status".into())),
        }
        if result.status == ExecStatus::Ok {
            result.error = None;
        }
        Ok(result)
    }

    /// Sends shutdown_request on control and waits for the reply.
    pub fn request_shutdown(&mut self, timeout: Duration) -> Result<(), KernelError> {
        let request = self.send(&self.control, "shutdown_request", json!({"restart": false}))?;
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            let mut items = [self.control.as_poll_item(zmq::POLLIN)];
            zmq::poll(&mut items, POLL_SLICE.as_millis() as i64)?;
            if items[0].is_readable() {
                while let Some(msg) = self.recv(&self.control)? {
                    if msg.msg_type() == "shutdown_reply" && msg.parent_id() == Some(&request.msg_id) {
                        return Ok(());
                    }
                }
            }
        }
        Err(KernelError::Timeout(timeout.as_secs_f64()))
    }

    /// One heartbeat ping; a fresh REQ socket each time so a lost reply
    /// cannot wedge the socket state.
    pub fn heartbeat(&self, timeout: Duration) -> bool {
        let ping = || -> Result<bool, KernelError> {
            let socket = connect(&self.hb_ctx, zmq::REQ, &self.hb_endpoint)?;
            socket.send(&b"ping"[..], 0)?;
            let mut items = [socket.as_poll_item(zmq::POLLIN)];
            zmq::poll(&mut items, timeout.as_millis() as i64)?;
            if !items[0].is_readable() {
                return Ok(false);
            }
            Ok(socket.recv_bytes(0)? == b"ping")
        };
        ping().unwrap_or(false)
    }
}

fn exec_error(content: &Value) -> ExecError {
    ExecError {
        name: content["ename"].as_str().unwrap_or("Error").to_string(),
        message: content["evalue"].as_str().unwrap_or_default().to_string(),
        traceback: content["traceback"]
            .as_array()
            .map(|tb| tb.iter().filter_map(|l| l.as_str().map(str::to_string)).collect())
            .unwrap_or_default(),
    }
}
