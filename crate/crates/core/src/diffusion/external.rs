//! Subprocess denoiser client. The backend is any program that speaks the
//! framed JSON protocol on stdin/stdout; requests are strictly one at a
//! time, answered in order, with a hard timeout per reply.

use std::io::Write;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread::JoinHandle;
use std::time::Duration;

use super::protocol::{
    parse_response, FrameReader, Request, Response, PROTOCOL_VERSION,
};
use super::{AttentionStack, Denoiser, DenoiserOutput, DiffusionError, LatentGrid, TokenId};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

struct Inner {
    child: Child,
    stdin: Option<ChildStdin>,
    rx: Receiver<Result<Vec<u8>, DiffusionError>>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
    /// Set once the stream can no longer be trusted (timeout or framing
    /// fault); all later requests fail fast instead of desynchronizing.
    dead: bool,
}

/// Client for an out-of-process denoiser. Cannot propagate gradients, so
/// `attention_vjp` always fails with `GradientUnsupported`.
pub struct ExternalDenoiser {
    inner: Mutex<Inner>,
    command: String,
}

impl ExternalDenoiser {
    /// Spawns `argv` and performs the version handshake.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, DiffusionError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| DiffusionError::Backend("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");

        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut frames = FrameReader::new(stdout);
            loop {
                match frames.read_frame() {
                    Ok(Some(payload)) => {
                        if tx.send(Ok(payload)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => {
                        let _ = tx.send(Err(DiffusionError::Protocol {
                            offset: Some(frames.offset()),
                            detail: "backend closed its output stream".into(),
                        }));
                        return;
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        });

        let mut this = Self {
            inner: Mutex::new(Inner {
                child,
                stdin: Some(stdin),
                rx,
                reader: Some(reader),
                timeout,
                dead: false,
            }),
            command: argv.join(" "),
        };
        this.handshake()?;
        Ok(this)
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn handshake(&mut self) -> Result<(), DiffusionError> {
        let inner = self.inner.get_mut().expect("new mutex is never poisoned");
        send(inner, &Request::Hello { version: PROTOCOL_VERSION })?;
        let payload = wait(inner)?;
        match parse_response(&payload)? {
            Response::Hello { version, .. } if version == PROTOCOL_VERSION => Ok(()),
            Response::Hello { version, .. } => Err(DiffusionError::Protocol {
                offset: None,
                detail: format!(
                    "backend speaks protocol version {version}, expected {PROTOCOL_VERSION}"
                ),
            }),
            Response::Error { error } => Err(DiffusionError::Backend(error)),
            Response::Denoise(_) => Err(DiffusionError::Protocol {
                offset: None,
                detail: "backend answered the hello with a denoise payload".into(),
            }),
        }
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, Inner>, DiffusionError> {
        self.inner
            .lock()
            .map_err(|_| DiffusionError::Backend("backend client mutex poisoned".into()))
    }
}

fn send(inner: &mut Inner, req: &Request) -> Result<(), DiffusionError> {
    if inner.dead {
        return Err(DiffusionError::Backend(
            "backend connection closed after an earlier failure".into(),
        ));
    }
    let stdin = inner
        .stdin
        .as_mut()
        .ok_or_else(|| DiffusionError::Backend("backend stdin already closed".into()))?;
    let frame = req.to_frame();
    if let Err(e) = stdin.write_all(&frame).and_then(|_| stdin.flush()) {
        inner.dead = true;
        return Err(DiffusionError::Io(e));
    }
    Ok(())
}

fn wait(inner: &mut Inner) -> Result<Vec<u8>, DiffusionError> {
    match inner.rx.recv_timeout(inner.timeout) {
        Ok(Ok(payload)) => Ok(payload),
        Ok(Err(e)) => {
            inner.dead = true;
            Err(e)
        }
        Err(RecvTimeoutError::Timeout) => {
            inner.dead = true;
            let _ = inner.child.kill();
            Err(DiffusionError::Timeout { secs: inner.timeout.as_secs() })
        }
        Err(RecvTimeoutError::Disconnected) => {
            inner.dead = true;
            Err(DiffusionError::Protocol {
                offset: None,
                detail: "backend reader thread ended unexpectedly".into(),
            })
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn denoise(
        &self,
        z: &LatentGrid,
        t: usize,
        tokens: &[TokenId],
    ) -> Result<DenoiserOutput, DiffusionError> {
        let mut inner = self.lock()?;
        let (c, h, w) = z.shape();
        send(
            &mut inner,
            &Request::Denoise { t, shape: [c, h, w], z: z.data().to_vec(), tokens: tokens.to_vec() },
        )?;
        let payload = wait(&mut inner)?;
        match parse_response(&payload)? {
            Response::Denoise(p) => p.into_output(z.shape(), z.step_index(), tokens),
            Response::Error { error } => Err(DiffusionError::Backend(error)),
            Response::Hello { .. } => {
                inner.dead = true;
                Err(DiffusionError::Protocol {
                    offset: None,
                    detail: "backend answered a denoise request with a hello".into(),
                })
            }
        }
    }

    fn attention_vjp(
        &self,
        _z: &LatentGrid,
        _t: usize,
        _tokens: &[TokenId],
        _grad_scores: &AttentionStack,
    ) -> Result<LatentGrid, DiffusionError> {
        Err(DiffusionError::GradientUnsupported(format!(
            "external backend `{}` exposes attention values only",
            self.command
        )))
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Ok(inner) = self.inner.get_mut() {
            if !inner.dead {
                if let Some(stdin) = inner.stdin.as_mut() {
                    let _ = stdin.write_all(&Request::Shutdown.to_frame());
                    let _ = stdin.flush();
                }
            }
            inner.stdin = None;
            // Give the child a moment to exit on its own before killing it.
            for _ in 0..20 {
                match inner.child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                    Err(_) => break,
                }
            }
            let _ = inner.child.kill();
            let _ = inner.child.wait();
            if let Some(reader) = inner.reader.take() {
                let _ = reader.join();
            }
        }
    }
}
