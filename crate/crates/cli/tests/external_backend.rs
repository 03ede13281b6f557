//! Exercises the subprocess denoiser client against the bundled stub
//! backend, both through the library API and through full CLI runs.

use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use latentstage::diffusion::{
    Denoiser, DiffusionError, ExternalDenoiser, LatentGrid, ReferenceDenoiser,
};

fn stub_argv(extra: &[&str]) -> Vec<String> {
    let mut argv = vec![env!("CARGO_BIN_EXE_denoiser-stub").to_string()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    argv
}

fn spawn_stub(extra: &[&str]) -> Result<ExternalDenoiser, DiffusionError> {
    ExternalDenoiser::spawn(&stub_argv(extra), Duration::from_secs(10))
}

#[test]
fn stub_replies_match_the_in_process_model_bitwise() -> Result<()> {
    let remote = spawn_stub(&["--seed", "7", "--lambda", "0.1"]).context("spawning stub")?;
    let local = ReferenceDenoiser::new(7, 0.1);
    let tokens = [0, 1, 2];

    for (t, seed) in [(50, 11), (30, 12), (1, 13)] {
        let z = LatentGrid::seeded_normal(4, 16, 16, t, seed);
        let got = remote.denoise(&z, t, &tokens).context("remote denoise")?;
        let want = local.denoise(&z, t, &tokens).context("local denoise")?;

        let pairs = got.eps.data().iter().zip(want.eps.data());
        for (i, (g, w)) in pairs.enumerate() {
            assert_eq!(g.to_bits(), w.to_bits(), "eps cell {i} at t={t}: {g} vs {w}");
        }
        for &token in &tokens {
            let g = got.attention.get(token).context("remote attention")?;
            let w = want.attention.get(token).context("local attention")?;
            assert_eq!(g, w, "attention for token {token} at t={t}");
        }
    }
    Ok(())
}

#[test]
fn short_eps_payload_is_a_protocol_error() -> Result<()> {
    let remote = spawn_stub(&["--wrong-shape"])?;
    let z = LatentGrid::seeded_normal(4, 16, 16, 10, 3);
    match remote.denoise(&z, 10, &[0]) {
        Err(DiffusionError::Protocol { detail, .. }) => {
            assert!(detail.contains("eps"), "unexpected detail: {detail}");
        }
        other => panic!("expected protocol error, got {other:?}"),
    }
    Ok(())
}

#[test]
fn error_payload_surfaces_as_backend_error() -> Result<()> {
    let remote = spawn_stub(&["--fail"])?;
    let z = LatentGrid::seeded_normal(4, 16, 16, 10, 3);
    match remote.denoise(&z, 10, &[0]) {
        Err(DiffusionError::Backend(msg)) => assert_eq!(msg, "induced failure"),
        other => panic!("expected backend error, got {other:?}"),
    }
    Ok(())
}

#[test]
fn truncated_reply_reports_the_stream_offset() -> Result<()> {
    let remote = spawn_stub(&["--truncate"])?;
    let z = LatentGrid::seeded_normal(4, 16, 16, 10, 3);
    match remote.denoise(&z, 10, &[0]) {
        Err(DiffusionError::Protocol { offset: Some(_), .. }) => {}
        other => panic!("expected offset-carrying protocol error, got {other:?}"),
    }

    // The connection is poisoned afterwards: no silent resynchronization.
    assert!(remote.denoise(&z, 10, &[0]).is_err());
    Ok(())
}

#[test]
fn version_mismatch_fails_the_handshake() {
    match spawn_stub(&["--bad-hello"]) {
        Err(DiffusionError::Protocol { detail, .. }) => {
            assert!(detail.contains("version"), "unexpected detail: {detail}");
        }
        Ok(_) => panic!("handshake accepted an incompatible version"),
        Err(other) => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn unresponsive_backend_times_out() {
    let argv = stub_argv(&["--sleep-ms", "30000"]);
    match ExternalDenoiser::spawn(&argv, Duration::from_millis(300)) {
        Err(DiffusionError::Timeout { .. }) => {}
        Ok(_) => panic!("handshake should have timed out"),
        Err(other) => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn gradients_are_refused_without_touching_the_wire() -> Result<()> {
    let remote = spawn_stub(&[])?;
    let z = LatentGrid::seeded_normal(4, 16, 16, 10, 3);
    let grads = latentstage::diffusion::AttentionStack::new(16, 16);
    match remote.attention_vjp(&z, 10, &[0], &grads) {
        Err(DiffusionError::GradientUnsupported(_)) => Ok(()),
        other => panic!("expected gradient refusal, got {other:?}"),
    }
}

// ---- full CLI runs over the subprocess backend ----

const SCENE: &str = "add a cat. then add a dog right of the cat";

fn run_cli(args: &[&str]) -> Result<std::process::Output> {
    Ok(std::process::Command::new(env!("CARGO_BIN_EXE_latentstage")).args(args).output()?)
}

fn stage_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for sub in ["stages", "traces", "heatmaps", "layout"] {
        let mut paths: Vec<_> = std::fs::read_dir(dir.join(sub))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.sort();
        for p in paths {
            let name = format!("{sub}/{}", p.file_name().unwrap().to_string_lossy());
            out.push((name, std::fs::read(&p)?));
        }
    }
    Ok(out)
}

/// With the stimulus disabled (the subprocess backend carries no gradients)
/// a stub-backed run must reproduce the in-process run byte for byte:
/// numbers cross the wire losslessly.
#[test]
fn cli_run_over_the_stub_matches_the_in_process_run() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "alpha = 0\n")?;

    let ref_dir = dir.path().join("reference");
    let out = run_cli(&[
        "run",
        SCENE,
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        ref_dir.to_str().unwrap(),
    ])?;
    anyhow::ensure!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ext_dir = dir.path().join("external");
    let cmd = format!("{} --seed 0 --lambda 0.1", env!("CARGO_BIN_EXE_denoiser-stub"));
    let out = run_cli(&[
        "run",
        SCENE,
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        ext_dir.to_str().unwrap(),
        "--denoiser-cmd",
        &cmd,
    ])?;
    anyhow::ensure!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let reference = stage_files(&ref_dir)?;
    let external = stage_files(&ext_dir)?;
    assert_eq!(reference.len(), external.len());
    for ((name_r, bytes_r), (name_e, bytes_e)) in reference.iter().zip(&external) {
        assert_eq!(name_r, name_e);
        assert_eq!(bytes_r, bytes_e, "artifact {name_r} differs across backends");
    }
    Ok(())
}

#[test]
fn cli_run_over_a_misbehaving_stub_exits_with_backend_code() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "alpha = 0\n")?;

    let cmd = format!("{} --wrong-shape", env!("CARGO_BIN_EXE_denoiser-stub"));
    let out = run_cli(&[
        "run",
        SCENE,
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--denoiser-cmd",
        &cmd,
    ])?;
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}
