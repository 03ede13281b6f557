//! Framed-JSON denoiser subprocess backed by the analytic reference
//! model, with switches that deliberately misbehave so client error
//! handling can be exercised end to end.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use latentstage::diffusion::protocol::{
    encode_frame, write_frame, DenoisePayload, FrameReader, Request, Response,
};
use latentstage::diffusion::{Denoiser, LatentGrid, ReferenceDenoiser};

#[derive(Parser)]
#[command(name = "denoiser-stub", about = "Reference-backed denoiser subprocess")]
struct Args {
    /// Seed of the backing model.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leakage mixing weight of the backing model.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Drop one value from every eps payload.
    #[arg(long)]
    wrong_shape: bool,
    /// Cut the stream in the middle of the first denoise reply.
    #[arg(long)]
    truncate: bool,
    /// Answer every denoise with an error payload.
    #[arg(long)]
    fail: bool,
    /// Delay every reply this long.
    #[arg(long, default_value_t = 0)]
    sleep_ms: u64,
    /// Advertise an incompatible protocol version.
    #[arg(long)]
    bad_hello: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match serve(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("denoiser-stub: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn serve(args: &Args) -> anyhow::Result<()> {
    let denoiser = ReferenceDenoiser::new(args.seed, args.lambda);
    let stdin = std::io::stdin();
    let mut frames = FrameReader::new(stdin.lock());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    while let Some(payload) = frames.read_frame()? {
        let request: Request = serde_json::from_slice(&payload)?;
        if args.sleep_ms > 0 {
            std::thread::sleep(Duration::from_millis(args.sleep_ms));
        }
        let response = match request {
            Request::Hello { version } => Response::Hello {
                op: "hello".to_string(),
                version: if args.bad_hello { version + 1 } else { version },
            },
            Request::Shutdown => return Ok(()),
            Request::Denoise { t, shape: [c, h, w], z, tokens } => {
                if args.fail {
                    Response::Error { error: "induced failure".to_string() }
                } else {
                    let z = LatentGrid::from_data(c, h, w, t, z)?;
                    let result = denoiser.denoise(&z, t, &tokens)?;
                    let mut attention = BTreeMap::new();
                    for token in tokens {
                        let map = result
                            .attention
                            .get(token)
                            .expect("reference answers every requested token");
                        attention.insert(token.to_string(), map.to_vec());
                    }
                    let mut eps = result.eps.data().to_vec();
                    if args.wrong_shape {
                        eps.pop();
                    }
                    Response::Denoise(DenoisePayload { eps, attention })
                }
            }
        };
        let bytes = serde_json::to_vec(&response)?;
        if args.truncate && matches!(response, Response::Denoise(_)) {
            let frame = encode_frame(&bytes);
            out.write_all(&frame[..frame.len() / 2])?;
            out.flush()?;
            return Ok(());
        }
        write_frame(&mut out, &bytes)?;
    }
    Ok(())
}
