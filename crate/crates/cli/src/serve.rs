//! Line-delimited JSON scoring service over any byte stream.
//!
//! Each request line is scored on its own task; a single writer task emits
//! whole response lines, so concurrent responses never interleave.

use std::sync::Arc;

use fishcount_core::{handle_line, RewardConfig};
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: usize,
}

/// Serves until `reader` reaches end of input, then drains in-flight work.
pub async fn serve_stream<R, W>(reader: R, mut writer: W, cfg: Arc<RewardConfig>) -> std::io::Result<ServeStats>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin + Send + 'static,
{
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let writer_task = tokio::spawn(async move {
        while let Some(mut line) = rx.recv().await {
            line.push('\n');
            writer.write_all(line.as_bytes()).await?;
            if rx.is_empty() {
                writer.flush().await?;
            }
        }
        writer.flush().await?;
        writer.shutdown().await
    });

    let mut stats = ServeStats::default();
    let mut lines = BufReader::new(reader).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        stats.requests += 1;
        let tx = tx.clone();
        let cfg = Arc::clone(&cfg);
        tokio::spawn(async move {
            // The receiver only goes away if the writer failed.
            let _ = tx.send(handle_line(&line, &cfg));
        });
    }
    drop(tx);
    writer_task.await.map_err(std::io::Error::other)??;
    Ok(stats)
}

pub async fn serve_stdio(cfg: RewardConfig) -> std::io::Result<ServeStats> {
    let cfg = Arc::new(cfg);
    tokio::select! {
        r = serve_stream(tokio::io::stdin(), tokio::io::stdout(), cfg) => r,
        _ = tokio::signal::ctrl_c() => Ok(ServeStats::default()),
    }
}

/// Accepts connections until interrupted; each connection is its own session.
pub async fn serve_tcp(listener: TcpListener, cfg: RewardConfig) -> std::io::Result<()> {
    let cfg = Arc::new(cfg);
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (socket, peer) = accepted?;
                let cfg = Arc::clone(&cfg);
                tokio::spawn(async move {
                    let (r, w) = socket.into_split();
                    if let Err(e) = serve_stream(r, w, cfg).await {
                        eprintln!("connection {peer}: {e}");
                    }
                });
            }
            _ = tokio::signal::ctrl_c() => return Ok(()),
        }
    }
}
