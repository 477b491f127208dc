use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::AdapterError;

pub(crate) struct ToolOutput {
    pub status: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

/// Runs `program` to completion or until `timeout` passes, then kills it.
pub(crate) fn run_tool(program: &Path, args: &[String], timeout: Duration) -> Result<ToolOutput, AdapterError> {
    let name = program.display().to_string();
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                AdapterError::ToolNotInstalled(name.clone())
            }
            _ => AdapterError::Io(e.to_string()),
        })?;

    // drain pipes on threads so a chatty tool cannot block on a full pipe
    let mut out_pipe = child.stdout.take().expect("piped");
    let mut err_pipe = child.stderr.take().expect("piped");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break s;
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(AdapterError::Timeout { tool: name, seconds: timeout.as_secs() });
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    Ok(ToolOutput { status: status.code().unwrap_or(-1), stdout, stderr })
}

/// The scanning host's default gateway, read from the kernel routing table.
pub fn system_default_gateway() -> Option<Ipv4Addr> {
    let text = std::fs::read_to_string("/proc/net/route").ok()?;
    parse_proc_route(&text)
}

fn parse_proc_route(text: &str) -> Option<Ipv4Addr> {
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 3 || cols[1] != "00000000" {
            continue;
        }
        let raw = u32::from_str_radix(cols[2], 16).ok()?;
        if raw == 0 {
            continue;
        }
        // the kernel prints the address in host (little-endian) byte order
        return Some(Ipv4Addr::from(raw.swap_bytes()));
    }
    None
}
