//! Binary pipe protocol for out-of-process oracles. All integers are u32 and
//! all floats f32, little-endian.
//!
//! ```text
//! child -> parent, once:  "ORCL" num_classes
//! parent -> child:        "PTCH" ox oy oz nx ny nz channels  data[channels * nx*ny*nz]
//! child -> parent:        "SCOR" num_classes nx ny nz  scores[num_classes * nx*ny*nz]
//! ```
//!
//! Closing the child's stdin ends the session.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::{Patch, PatchOracle};
use crate::error::{Error, Result};

pub const HELLO: &[u8; 4] = b"ORCL";
pub const REQUEST: &[u8; 4] = b"PTCH";
pub const RESPONSE: &[u8; 4] = b"SCOR";

fn read_u32s<const N: usize>(r: &mut impl Read) -> io::Result<[u32; N]> {
    let mut buf = [0u8; 4];
    let mut out = [0u32; N];
    for v in &mut out {
        r.read_exact(&mut buf)?;
        *v = u32::from_le_bytes(buf);
    }
    Ok(out)
}

fn read_tag(r: &mut impl Read) -> io::Result<Option<[u8; 4]>> {
    let mut tag = [0u8; 4];
    match r.read_exact(&mut tag) {
        Ok(()) => Ok(Some(tag)),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e),
    }
}

fn read_f32s(r: &mut impl Read, n: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_u32s(w: &mut impl Write, vals: &[u32]) -> io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_f32s(w: &mut impl Write, vals: &[f32]) -> io::Result<()> {
    let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)
}

fn as_u32(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Oracle(format!("{x} does not fit the protocol")))
}

struct Pipes {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

/// Oracle backed by a child process speaking the pipe protocol. Requests are
/// serialized.
pub struct SubprocessOracle {
    num_classes: usize,
    pipes: Mutex<Pipes>,
}

impl SubprocessOracle {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot start {program}: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let tag = read_tag(&mut stdout).map_err(|e| Error::Oracle(format!("handshake failed: {e}")))?;
        if tag.as_ref() != Some(HELLO) {
            let _ = child.kill();
            return Err(Error::Oracle(format!("{program} did not send the {HELLO:?} greeting")));
        }
        let [c] = read_u32s::<1>(&mut stdout).map_err(|e| Error::Oracle(format!("handshake failed: {e}")))?;
        Ok(Self { num_classes: c as usize, pipes: Mutex::new(Pipes { child, stdin: Some(stdin), stdout }) })
    }

    /// Parses `"program arg1 arg2"` (whitespace-separated) and spawns it.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace();
        let program = parts.next().ok_or_else(|| Error::invalid("empty oracle command"))?;
        let args: Vec<String> = parts.map(str::to_string).collect();
        Self::spawn(program, &args)
    }
}

impl PatchOracle for SubprocessOracle {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn evaluate(&self, p: &Patch) -> Result<Vec<f32>> {
        let mut guard = self.pipes.lock().map_err(|_| Error::Oracle("oracle pipe poisoned".into()))?;
        let pipes = &mut *guard;
        let io_err = |e: io::Error| Error::Oracle(format!("oracle pipe: {e}"));
        let stdin = pipes.stdin.as_mut().ok_or_else(|| Error::Oracle("oracle closed".into()))?;
        let channels = 1 + p.aux.is_some() as usize;
        stdin.write_all(REQUEST).map_err(io_err)?;
        let mut header = Vec::with_capacity(7);
        for v in p.origin.iter().chain(&p.shape).chain([&channels]) {
            header.push(as_u32(*v)?);
        }
        write_u32s(stdin, &header).map_err(io_err)?;
        write_f32s(stdin, p.data).map_err(io_err)?;
        if let Some(a) = p.aux {
            write_f32s(stdin, a).map_err(io_err)?;
        }
        stdin.flush().map_err(io_err)?;
        let tag = read_tag(&mut pipes.stdout).map_err(io_err)?;
        if tag.as_ref() != Some(RESPONSE) {
            return Err(Error::Oracle("oracle sent no score block".into()));
        }
        let [c, nx, ny, nz] = read_u32s::<4>(&mut pipes.stdout).map_err(io_err)?;
        if c as usize != self.num_classes || [nx, ny, nz].map(|x| x as usize) != p.shape {
            return Err(Error::Oracle(format!(
                "oracle answered {c} x {:?} for a {} x {:?} request",
                [nx, ny, nz],
                self.num_classes,
                p.shape
            )));
        }
        read_f32s(&mut pipes.stdout, c as usize * p.data.len()).map_err(io_err)
    }
}

impl Drop for SubprocessOracle {
    fn drop(&mut self) {
        if let Ok(p) = self.pipes.get_mut() {
            p.stdin.take();
            let _ = p.child.wait();
        }
    }
}

/// Serves `oracle` over the protocol until the input is closed.
pub fn serve(oracle: &dyn PatchOracle, input: impl Read, output: impl Write) -> Result<()> {
    let mut r = BufReader::new(input);
    let mut w = BufWriter::new(output);
    w.write_all(HELLO)?;
    write_u32s(&mut w, &[as_u32(oracle.num_classes())?])?;
    w.flush()?;
    while let Some(tag) = read_tag(&mut r)? {
        if &tag != REQUEST {
            return Err(Error::Oracle(format!("unexpected message tag {tag:?}")));
        }
        let h = read_u32s::<7>(&mut r)?;
        let origin = [h[0], h[1], h[2]].map(|x| x as usize);
        let shape = [h[3], h[4], h[5]].map(|x| x as usize);
        let n: usize = shape.iter().product();
        let data = read_f32s(&mut r, n)?;
        let aux = if h[6] > 1 { Some(read_f32s(&mut r, n)?) } else { None };
        let scores = oracle.evaluate(&Patch { origin, shape, data: &data, aux: aux.as_deref() })?;
        w.write_all(RESPONSE)?;
        write_u32s(&mut w, &[as_u32(oracle.num_classes())?, h[3], h[4], h[5]])?;
        write_f32s(&mut w, &scores)?;
        w.flush()?;
    }
    Ok(())
}
