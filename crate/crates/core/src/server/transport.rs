use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use super::Server;

/// Newline-delimited JSON-RPC: one message per line, one reply per line.
pub fn serve_lines<R: BufRead, W: Write>(server: &Server, input: R, mut output: W) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = server.handle_message(&line) {
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
    }
    Ok(())
}

pub fn serve_stdio(server: &Server) -> io::Result<()> {
    serve_lines(server, io::stdin().lock(), io::stdout().lock())
}

/// Serve each connection on its own thread until the listener fails.
pub fn serve_tcp(server: Arc<Server>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let server = Arc::clone(&server);
        thread::spawn(move || {
            let Ok(reader) = stream.try_clone() else { return };
            let _ = serve_lines(&server, BufReader::new(reader), stream);
        });
    }
    Ok(())
}
